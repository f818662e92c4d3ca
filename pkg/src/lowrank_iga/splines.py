"""Univariate B-spline spaces on [0,1].

Open knot vectors, Cox-de Boor evaluation, and weighted univariate Galerkin
matrices. These matrices are the Kronecker factors of every assembled block.
"""

import numpy as np

__all__ = [
    'KnotVector', 'UnivariateSpace', 'make_uniform_open_knots',
    'find_span', 'eval_basis', 'eval_basis_dense', 'gauss_rule',
    'quadrature_grid', 'univariate_factor_matrix', 'breakpoint_midpoint_samples',
]


class KnotVector:
    """Open knot vector of degree p on [0,1].

    First and last knots repeat p+1 times; interior multiplicity <= p
    (equal to p gives the C0 joins used by merged subdomains).
    """

    def __init__(self, degree, knots):
        knots = np.asarray(knots, dtype=float)
        p = int(degree)
        if p < 1:
            raise ValueError("degree must be >= 1")
        if knots.ndim != 1 or len(knots) < 2 * (p + 1):
            raise ValueError("too few knots for degree %d" % p)
        if np.any(np.diff(knots) < 0):
            raise ValueError("knots must be nondecreasing")
        if not (np.all(knots[:p + 1] == knots[0]) and np.all(knots[-p - 1:] == knots[-1])):
            raise ValueError("knot vector must be open (end knots repeated p+1 times)")
        if knots[0] != 0.0 or knots[-1] != 1.0:
            raise ValueError("knot vector must span [0,1]")
        interior = knots[p + 1:-p - 1]
        if len(interior):
            vals, counts = np.unique(interior, return_counts=True)
            if np.any(counts > p):
                raise ValueError("interior knot multiplicity exceeds degree")
        self.degree = p
        self.knots = knots
        self.knots.setflags(write=False)

    @property
    def dim(self):
        return len(self.knots) - self.degree - 1

    @property
    def breakpoints(self):
        return np.unique(self.knots)

    def __eq__(self, other):
        return (isinstance(other, KnotVector) and self.degree == other.degree
                and len(self.knots) == len(other.knots)
                and np.array_equal(self.knots, other.knots))

    def __repr__(self):
        return "KnotVector(p=%d, dim=%d)" % (self.degree, self.dim)


class UnivariateSpace:
    """Spline space with a contiguous range of retained basis indices.

    Dirichlet elimination removes only the first and/or last basis function,
    so the retained indices are always first .. first+dim-1.
    """

    def __init__(self, kv, drop_first=False, drop_last=False):
        self.kv = kv
        self.first = 1 if drop_first else 0
        self.last = kv.dim - (2 if drop_last else 1)  # inclusive
        if self.last < self.first:
            raise ValueError("no basis functions retained")

    @property
    def dim(self):
        return self.last - self.first + 1

    @property
    def retained(self):
        return np.arange(self.first, self.last + 1)


def make_uniform_open_knots(p, n_el):
    """Open knot vector with n_el uniform spans, interior multiplicity 1."""
    if p < 1 or n_el < 1:
        raise ValueError("require p >= 1 and n_el >= 1")
    interior = np.arange(1, n_el) / n_el
    knots = np.concatenate([np.zeros(p + 1), interior, np.ones(p + 1)])
    return KnotVector(p, knots)


def find_span(knots, degree, x):
    """Index i with knots[i] <= x < knots[i+1], clamped to valid spans."""
    n = len(knots) - degree - 1
    if x >= knots[n]:
        return n - 1
    return int(np.searchsorted(knots, x, side='right')) - 1


def _basis_values(knots, degree, span, x):
    # standard triangular Cox-de Boor recursion for the p+1 nonzero values
    left = np.empty(degree)
    right = np.empty(degree)
    values = np.empty(degree + 1)
    values[0] = 1.0
    for j in range(degree):
        left[j] = x - knots[span - j]
        right[j] = knots[span + 1 + j] - x
        saved = 0.0
        for r in range(j + 1):
            tmp = values[r] / (right[r] + left[j - r])
            values[r] = saved + right[r] * tmp
            saved = left[j - r] * tmp
        values[j + 1] = saved
    return values


def eval_basis(kv, x, deriv_order=0):
    """Values (or first derivatives) of the p+1 possibly-nonzero B-splines at x.

    Returns (first_index, values) where first_index = span - p.
    """
    if not (0.0 <= x <= 1.0):
        raise ValueError("evaluation point outside [0,1]")
    if deriv_order not in (0, 1):
        raise ValueError("deriv_order must be 0 or 1")
    p = kv.degree
    knots = kv.knots
    span = find_span(knots, p, x)
    if deriv_order == 0:
        return span - p, _basis_values(knots, p, span, x)
    # b'_{i,p} = p * (b_{i,p-1}/(t_{i+p}-t_i) - b_{i+1,p-1}/(t_{i+p+1}-t_{i+1}))
    lower = _basis_values(knots, p - 1, span, x) if p >= 1 else None
    ders = np.zeros(p + 1)
    for j in range(p + 1):
        i = span - p + j
        acc = 0.0
        # lower-degree function b_{i,p-1} is nonzero index j-1 in `lower`
        if 0 <= j - 1 < p:
            d = knots[i + p] - knots[i]
            if d > 0:
                acc += lower[j - 1] / d
        if 0 <= j < p:
            d = knots[i + p + 1] - knots[i + 1]
            if d > 0:
                acc -= lower[j] / d
        ders[j] = p * acc
    return span - p, ders


def eval_basis_dense(kv, xs, deriv_order=0):
    """Dense matrix of all basis functions at the given points: shape (len(xs), dim)."""
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    out = np.zeros((len(xs), kv.dim))
    for q, x in enumerate(xs):
        first, vals = eval_basis(kv, x, deriv_order)
        out[q, first:first + kv.degree + 1] = vals
    return out


def gauss_rule(n):
    """Gauss-Legendre nodes and weights on [0,1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def quadrature_grid(kv, n_per_span):
    """Gauss-Legendre points and weights over every knot span of kv."""
    bp = kv.breakpoints
    xg, wg = gauss_rule(n_per_span)
    pts = (bp[:-1][:, None] + np.diff(bp)[:, None] * xg[None, :]).ravel()
    wts = (np.diff(bp)[:, None] * wg[None, :]).ravel()
    return pts, wts


def univariate_factor_matrix(test, trial, coeff, dtest, dtrial, extra_points=0):
    """Galerkin factor matrix with entries

        int_0^1 coeff(x) * b_s^(dtest)(x) * b_t^(dtrial)(x) dx

    over the retained indices of the test/trial spaces. Gauss-Legendre with
    p+1 points per span (plus extra_points for non-polynomial coefficients).
    """
    kv_s, kv_t = test.kv, trial.kv
    if not np.array_equal(kv_s.breakpoints, kv_t.breakpoints):
        raise ValueError("test and trial spaces must share breakpoints")
    p = max(kv_s.degree, kv_t.degree)
    pts, wts = quadrature_grid(kv_s, p + 1 + extra_points)
    c = coeff(pts) if callable(coeff) else np.full(len(pts), float(coeff))
    Bs = eval_basis_dense(kv_s, pts, dtest)
    Bt = eval_basis_dense(kv_t, pts, dtrial)
    M = Bs.T @ (Bt * (np.asarray(c) * wts)[:, None])
    return M[test.first:test.last + 1, trial.first:trial.last + 1]


def breakpoint_midpoint_samples(kv):
    """Sorted union of breakpoints and midpoints of consecutive breakpoints."""
    bp = kv.breakpoints
    mids = 0.5 * (bp[:-1] + bp[1:])
    return np.sort(np.concatenate([bp, mids]))
