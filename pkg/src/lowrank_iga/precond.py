"""Per-subdomain low-rank preconditioner.

Each (subdomain, component) pair gets a separable surrogate

    P = c1 K1 x M2 x M3 + c2 M1 x K2 x M3 + c3 M1 x M2 x K3

with constants c_d averaging the diagonal of the subdomain coefficient.
Its inverse is applied through generalized eigendecompositions (K_d, M_d)
and an exponential-sum approximation of 1/x on the spectrum, which keeps
the application low-rank: the inverse diagonal is a short sum of rank-one
separable terms.
"""

import numpy as np
import scipy.linalg

from . import tucker as tk
from .geometry import lame_parameters, _coefficient_matrix
from .splines import univariate_factor_matrix, breakpoint_midpoint_samples

__all__ = ['EPS_PREC', 'compute_constants', 'exp_sum_inverse',
           'SubdomainPrec', 'BlockPreconditioner', 'build_preconditioner']

EPS_PREC = 0.1       # relative accuracy of the exponential sum for 1/x
SAMPLE_CAP = 33      # max sample points per direction for the constants


def _sample_points(kv):
    pts = breakpoint_midpoint_samples(kv)
    if len(pts) > SAMPLE_CAP:
        pts = pts[np.linspace(0, len(pts) - 1, SAMPLE_CAP).round().astype(int)]
    return pts


def compute_constants(system, i, k):
    """Mean of the diagonal coefficient entries Q_dd over a breakpoint and
    midpoint sample grid of subdomain i, component k."""
    sub = system.subs[i]
    ctx = system._ctx
    kv = ctx.kv_patch
    pts = _sample_points(kv)
    scale = np.array([2.0 if d in sub.glue_dirs else 1.0 for d in range(3)])
    acc = np.zeros(3)
    count = 0
    for slot in np.ndindex(sub.patch_grid.shape):
        patch = system.topo.patches[sub.patch_grid[slot]]
        J = patch.jacobian_grid(pts, pts, pts) * scale[None, None, None, None, :]
        mu, lam = lame_parameters(patch.E, patch.nu)
        Q = _coefficient_matrix(J, k, k, mu, lam, system.mode)
        acc += np.array([np.mean(Q[..., d, d]) for d in range(3)])
        count += 1
    return acc / count


def exp_sum_inverse(xmin, xmax, tol=EPS_PREC):
    """Weights and exponents with |1/x - sum_r w_r exp(-t_r x)| <= tol/x
    on [xmin, xmax], from trapezoidal discretization of
    1/x = int exp(-x e^s + s) ds."""
    if not (0 < xmin <= xmax):
        raise ValueError("need 0 < xmin <= xmax")
    s_lo = np.log(tol / xmax) - 1.0
    s_hi = np.log((np.log(1.0 / tol) + 5.0) / xmin)
    xs = np.exp(np.linspace(np.log(xmin), np.log(xmax), 200))
    h = 0.5
    while True:
        s = np.arange(s_lo, s_hi + h, h)
        t = np.exp(s)
        w = h * t
        approx = np.exp(-np.outer(xs, t)) @ w
        err = np.max(np.abs(approx * xs - 1.0))
        if err <= tol:
            return w, t
        if h < 1e-3:
            raise RuntimeError("exponential sum did not converge")
        h *= 0.5


class SubdomainPrec:
    """Inverse of the separable surrogate for one (subdomain, component)."""

    def __init__(self, spaces, constants, tol=EPS_PREC):
        self.c = np.asarray(constants, dtype=float)
        if np.any(self.c <= 0):
            raise ValueError("preconditioner constants must be positive")
        self.U = []
        self.lams = []
        for d in range(3):
            sp = spaces[d]
            K = univariate_factor_matrix(sp, sp, 1.0, 1, 1)
            M = univariate_factor_matrix(sp, sp, 1.0, 0, 0)
            lam, U = scipy.linalg.eigh(K, M)
            lam = np.maximum(lam, 0.0)
            self.U.append(U)
            self.lams.append(lam)
        xmin = sum(self.c[d] * self.lams[d].min() for d in range(3))
        xmax = sum(self.c[d] * self.lams[d].max() for d in range(3))
        if xmin <= 0:
            raise ValueError("surrogate operator is singular")
        self.w, self.t = exp_sum_inverse(xmin, xmax, tol)
        # per-direction exponential profiles, (n_d, R) each
        self.E = [np.exp(-np.outer(self.c[d] * self.lams[d], self.t))
                  for d in range(3)]

    def apply(self, v, eps):
        """z ~ P^{-1} v, truncated with relative tolerance eps."""
        F = [self.U[d].T @ v.factors[d] for d in range(3)]
        R = len(self.w)
        Qs, Rmats = [], []
        for d in range(3):
            cols = [self.E[d][:, r:r + 1] * F[d] for r in range(R)]
            Q, Rm = np.linalg.qr(np.hstack(cols))
            Qs.append(Q)
            Rmats.append(Rm)
        rd = [v.factors[d].shape[1] for d in range(3)]
        W = np.zeros([Q.shape[1] for Q in Qs])
        for r in range(R):
            blocks = [Rmats[d][:, r * rd[d]:(r + 1) * rd[d]] for d in range(3)]
            W += self.w[r] * np.einsum('abc,ia,jb,kc->ijk', v.core,
                                       blocks[0], blocks[1], blocks[2],
                                       optimize=True)
        nrm2 = float(np.sum(W * W))
        budgets = None if eps == 0 else [eps * eps * nrm2 / 3.0] * 3
        out = tk._st_hosvd(Qs, W, budgets)
        return tk.TuckerVector([self.U[d] @ out.factors[d] for d in range(3)],
                               out.core)

    def dense(self, spaces):
        """Densified surrogate P (not its inverse), for verification."""
        mats = []
        for d in range(3):
            sp = spaces[d]
            K = univariate_factor_matrix(sp, sp, 1.0, 1, 1)
            M = univariate_factor_matrix(sp, sp, 1.0, 0, 0)
            mats.append((K, M))
        P = 0.0
        for l in range(3):
            T = [mats[d][0] if d == l else mats[d][1] for d in range(3)]
            P = P + self.c[l] * np.kron(T[2], np.kron(T[1], T[0]))
        return P


class BlockPreconditioner:
    """Block-diagonal collection of subdomain preconditioners."""

    def __init__(self, precs):
        self.precs = precs    # dict (i, k) -> SubdomainPrec

    def apply(self, i, k, v, eps):
        return self.precs[(i, k)].apply(v, eps)


def build_preconditioner(system, tol=EPS_PREC):
    precs = {}
    for i in range(system.nsub):
        for k in range(system.ncomp):
            c = compute_constants(system, i, k)
            precs[(i, k)] = SubdomainPrec(system.spaces[i], c, tol)
    return BlockPreconditioner(precs)
