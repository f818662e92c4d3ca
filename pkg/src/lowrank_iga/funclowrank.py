"""Low-rank (Tucker) approximation of trivariate functions on [0,1]^3.

Factor functions are stored as Chebyshev coefficients, possibly piecewise
over panels of [0,1] (gluing two halves produces a two-panel direction).
Used for the geometry coefficients and source terms of the assembly.
"""

import numpy as np
from numpy.polynomial import chebyshev as C
from scipy.fft import dct

from . import tucker as tk

__all__ = ['LowRankFunc3', 'approx3', 'glue_halves', 'factor_samples']

GRID_SIZES = (9, 17, 33, 65, 129, 257)


def cheb_points(m, a=0.0, b=1.0):
    """Chebyshev-Gauss-Lobatto points on [a,b], increasing order."""
    t = np.cos(np.pi * np.arange(m - 1, -1, -1) / (m - 1))
    return a + (b - a) * 0.5 * (t + 1.0)


def cheb_coeffs(values, axis=0):
    """Chebyshev coefficients from values at CGL points (increasing order)."""
    v = np.flip(values, axis=axis)  # DCT-I expects the x=cos(0)=1 end first
    m = v.shape[axis]
    c = dct(v, type=1, axis=axis) / (m - 1)
    sl = [slice(None)] * v.ndim
    sl[axis] = 0
    c[tuple(sl)] *= 0.5
    sl[axis] = m - 1
    c[tuple(sl)] *= 0.5
    return c


def _chebvander(x, n_coef, a, b):
    t = (2.0 * np.asarray(x, dtype=float) - (a + b)) / (b - a)
    return C.chebvander(t, n_coef - 1)


class _Factor1D:
    """R factor functions sharing a panel partition of [0,1].

    breaks: panel boundaries (len P+1); coeffs: per panel, (n_coef, R).
    """

    def __init__(self, breaks, coeffs):
        self.breaks = np.asarray(breaks, dtype=float)
        self.coeffs = [np.atleast_2d(np.asarray(c, dtype=float)) for c in coeffs]
        self.rank = self.coeffs[0].shape[1]

    def sample(self, x):
        """(len(x), R) matrix of factor values."""
        x = np.asarray(x, dtype=float)
        out = np.zeros((len(x), self.rank))
        for i in range(len(self.breaks) - 1):
            a, b = self.breaks[i], self.breaks[i + 1]
            if i == len(self.breaks) - 2:
                mask = (x >= a) & (x <= b + 1e-15)
            else:
                mask = (x >= a) & (x < b)
            if np.any(mask):
                V = _chebvander(x[mask], self.coeffs[i].shape[0], a, b)
                out[mask] = V @ self.coeffs[i]
        return out

    def refined(self, new_breaks):
        """Re-express on a finer partition (must contain the current breaks)."""
        new_breaks = np.asarray(new_breaks, dtype=float)
        n = max(c.shape[0] for c in self.coeffs)
        coeffs = []
        for i in range(len(new_breaks) - 1):
            a, b = new_breaks[i], new_breaks[i + 1]
            pts = cheb_points(max(n, 2), a, b)
            coeffs.append(cheb_coeffs(self.sample(pts), axis=0))
        return _Factor1D(new_breaks, coeffs)

    def stacked(self):
        """Panel coefficients stacked into one matrix (rows: panel-major)."""
        n = max(c.shape[0] for c in self.coeffs)
        padded = [np.pad(c, ((0, n - c.shape[0]), (0, 0))) for c in self.coeffs]
        return np.vstack(padded), n


class LowRankFunc3:
    """Separable trivariate function: sum of products of factor functions."""

    def __init__(self, factors, core, tol=0.0):
        self.factors = list(factors)
        self.core = np.asarray(core, dtype=float)
        self.tol = tol
        for d in range(3):
            if self.factors[d].rank != self.core.shape[d]:
                raise ValueError("factor/core rank mismatch")

    @property
    def ranks(self):
        return self.core.shape

    def eval_grid(self, x1, x2, x3):
        """Values on the tensor grid x1 x x2 x x3, shape (len(x1),len(x2),len(x3))."""
        S = [self.factors[d].sample(x) for d, x in enumerate((x1, x2, x3))]
        return np.einsum('abc,ia,jb,kc->ijk', self.core, S[0], S[1], S[2],
                         optimize=True)

    def eval_points(self, pts):
        """Values at an (N,3) array of points."""
        pts = np.asarray(pts, dtype=float)
        S = [self.factors[d].sample(pts[:, d]) for d in range(3)]
        return np.einsum('abc,ia,ib,ic->i', self.core, S[0], S[1], S[2],
                         optimize=True)

    def scaled(self, s):
        return LowRankFunc3(self.factors, float(s) * self.core, self.tol)

    @classmethod
    def constant(cls, value):
        fac = [_Factor1D([0.0, 1.0], [np.ones((1, 1))]) for _ in range(3)]
        return cls(fac, np.full((1, 1, 1), float(value)))


def factor_samples(fn, direction, points):
    """Evaluate each direction-`direction` factor function at the given points."""
    return fn.factors[direction].sample(np.asarray(points, dtype=float))


def _eval_f(f, x1, x2, x3):
    X1, X2, X3 = np.meshgrid(x1, x2, x3, indexing='ij')
    vals = np.asarray(f(X1, X2, X3), dtype=float)
    if vals.shape != X1.shape:
        vals = np.broadcast_to(vals, X1.shape).copy()
    return vals


def approx3(f, tol_rel, max_size=257, min_size=9):
    """Chebyshev tensor-grid interpolation of f, HOSVD-compressed to tol_rel.

    The grid is refined (9, 17, 33, ...) until the interpolation error on a
    Chebyshev validation grid of twice the resolution is below tol_rel
    relative to max|f|. min_size forces a finer starting grid, useful when
    the result serves as a reference for coarser approximations.
    """
    if tol_rel <= 0:
        raise ValueError("tol_rel must be positive")
    # constant short-circuit keeps affine-geometry coefficients at rank (1,1,1)
    probe = cheb_points(5)
    pv = _eval_f(f, probe, probe, probe)
    if not np.all(np.isfinite(pv)):
        raise ValueError("non-finite function values")
    scale0 = max(1.0, float(np.max(np.abs(pv))))
    if np.max(pv) - np.min(pv) < 1e-14 * scale0:
        out = LowRankFunc3.constant(float(np.mean(pv)))
        out.tol = tol_rel
        return out

    last_err = None
    for m in GRID_SIZES:
        if m < min_size:
            continue
        if m > max_size:
            break
        x = cheb_points(m)
        F = _eval_f(f, x, x, x)
        if not np.all(np.isfinite(F)):
            raise ValueError("non-finite function values")
        coef = F
        for d in range(3):
            coef = cheb_coeffs(coef, axis=d)
        # validation on the twice-resolution Chebyshev grid
        xv = cheb_points(2 * m - 1)
        Fv = _eval_f(f, xv, xv, xv)
        fmax = float(np.max(np.abs(Fv)))
        V = _chebvander(xv, m, 0.0, 1.0)
        interp = coef
        for d in range(3):
            interp = np.moveaxis(np.tensordot(V, interp, axes=(1, d)), 0, d)
        err = float(np.max(np.abs(interp - Fv)))
        if err <= tol_rel * max(fmax, 1e-300):
            return _compress(coef, tol_rel, fmax, xv, Fv)
        last_err = err
    raise ValueError("failed to reach tolerance %g by grid size %d (last error %g)"
                     % (tol_rel, max_size, last_err))


def _compress(coef, tol_rel, fmax, xv, Fv):
    """HOSVD-compress the coefficient tensor, validating the max-norm error."""
    eps = tol_rel / 10.0
    m = coef.shape[0]
    V = _chebvander(xv, m, 0.0, 1.0)
    while True:
        v = tk.from_dense(coef, eps)
        approx = v.core
        for d in range(3):
            approx = np.moveaxis(
                np.tensordot(V @ v.factors[d], approx, axes=(1, d)), 0, d)
        err = float(np.max(np.abs(approx - Fv)))
        if err <= tol_rel * max(fmax, 1e-300) or eps < 1e-16:
            break
        eps /= 10.0
    fac = [_Factor1D([0.0, 1.0], [v.factors[d]]) for d in range(3)]
    return LowRankFunc3(fac, v.core, tol_rel)


def _common_refine(fa, fb):
    breaks = np.unique(np.concatenate([fa.breaks, fb.breaks]))
    return fa.refined(breaks), fb.refined(breaks)


def glue_halves(g1, g2, direction=2):
    """Piecewise combination 2*g1(.., 2 xi) on the lower half and
    2*g2(.., 2 xi - 1) on the upper half of the given direction.

    Exact up to a near-machine-precision recompression of redundant terms.
    """
    r1, r2 = g1.ranks, g2.ranks
    factors = []
    for d in range(3):
        fa, fb = g1.factors[d], g2.factors[d]
        if d == direction:
            breaks = np.concatenate([0.5 * fa.breaks, 0.5 * fb.breaks[1:] + 0.5])
            coeffs = []
            R = fa.rank + fb.rank
            for c in fa.coeffs:
                coeffs.append(np.hstack([c, np.zeros((c.shape[0], fb.rank))]))
            for c in fb.coeffs:
                coeffs.append(np.hstack([np.zeros((c.shape[0], fa.rank)), c]))
            factors.append(_Factor1D(breaks, coeffs))
        else:
            if (len(fa.breaks) != len(fb.breaks)
                    or not np.allclose(fa.breaks, fb.breaks)):
                fa, fb = _common_refine(fa, fb)
            na = max(c.shape[0] for c in fa.coeffs)
            nb = max(c.shape[0] for c in fb.coeffs)
            n = max(na, nb)
            coeffs = []
            for ca, cb in zip(fa.coeffs, fb.coeffs):
                ca = np.pad(ca, ((0, n - ca.shape[0]), (0, 0)))
                cb = np.pad(cb, ((0, n - cb.shape[0]), (0, 0)))
                coeffs.append(np.hstack([ca, cb]))
            factors.append(_Factor1D(fa.breaks, coeffs))
    core = np.zeros([r1[d] + r2[d] for d in range(3)])
    core[:r1[0], :r1[1], :r1[2]] = 2.0 * g1.core
    core[r1[0]:, r1[1]:, r1[2]:] = 2.0 * g2.core
    out = LowRankFunc3(factors, core, max(g1.tol, g2.tol))
    return recompress(out, 1e-14)


def recompress(fn, eps):
    """Remove redundant rank directions; never increases ranks."""
    stacked = []
    meta = []
    for d in range(3):
        S, n = fn.factors[d].stacked()
        stacked.append(S)
        meta.append(n)
    v = tk.TuckerVector(stacked, fn.core)
    t = tk.truncate_rel(v, eps)
    factors = []
    for d in range(3):
        breaks = fn.factors[d].breaks
        n = meta[d]
        coeffs = [t.factors[d][i * n:(i + 1) * n] for i in range(len(breaks) - 1)]
        factors.append(_Factor1D(breaks, coeffs))
    return LowRankFunc3(factors, t.core, fn.tol)
