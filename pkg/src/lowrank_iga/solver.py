"""Truncated preconditioned conjugate gradient over the block system.

Block vectors carry one Tucker tensor per (subdomain, component). The
matrix-vector product accumulates the Tucker blocks with a fused
truncation after every addition; the iterate update uses a dynamic
truncation tolerance that tightens only when the accepted step deviates
from the requested one.
"""

import numpy as np

from . import tucker as tk
from .splines import eval_basis_dense

__all__ = ['BlockVector', 'SolveReport', 'matvec_blocks', 'apply_prec',
           'tpcg', 'reconstruct_solution', 'memory_percent']


class BlockVector:
    """One TuckerVector per (subdomain, component); disjoint coordinates."""

    def __init__(self, parts):
        self.parts = dict(parts)

    @classmethod
    def zeros(cls, system):
        return cls({(i, k): tk.TuckerVector.zeros(system.dims(i))
                    for i in range(system.nsub) for k in range(system.ncomp)})

    @classmethod
    def from_rhs(cls, system):
        return cls({key: v for key, v in system.rhs.items()})

    def copy(self):
        return BlockVector(self.parts)

    def norm(self):
        return float(np.sqrt(max(sum(tk.dot(v, v)
                                     for v in self.parts.values()), 0.0)))

    def dot(self, other):
        return float(sum(tk.dot(v, other.parts[key])
                         for key, v in self.parts.items()))

    def scale(self, s):
        return BlockVector({key: tk.scale(v, s) for key, v in self.parts.items()})

    def add(self, other, s=1.0):
        out = {}
        for key, v in self.parts.items():
            w = other.parts[key]
            out[key] = tk.add(v, w if s == 1.0 else tk.scale(w, s))
        return BlockVector(out)

    def truncate(self, eps):
        return BlockVector({key: tk.truncate_rel(v, eps)
                            for key, v in self.parts.items()})

    def max_rank(self):
        return max((max(v.ranks) for v in self.parts.values()), default=0)

    def ranks(self):
        return {key: v.ranks for key, v in self.parts.items()}


class SolveReport:
    """Iteration history and storage statistics of one TPCG solve."""

    def __init__(self, iterations, residual_norm, converged, history,
                 ranks, mem_percent, mem_percent_with_cores, message=''):
        self.iterations = iterations
        self.residual_norm = residual_norm
        self.converged = converged
        self.history = history      # rows (k, ||r_k||, max rank, eps_k)
        self.ranks = ranks
        self.mem_percent = mem_percent
        self.mem_percent_with_cores = mem_percent_with_cores
        self.message = message


def matvec_blocks(system, x, b, gamma, eta):
    """y ~ A x - b with intermediate truncation gamma and final truncation
    eta, accumulating one Tucker block at a time."""
    out = {}
    for i in range(system.nsub):
        for k in range(system.ncomp):
            y = tk.TuckerVector.zeros(system.dims(i))
            if b is not None:
                y = tk.scale(b.parts[(i, k)], -1.0)
            for j in range(system.nsub):
                for l in range(system.ncomp):
                    B = system.block(i, j, k, l)
                    if B is None:
                        continue
                    y = tk.accumulate_product(y, B, x.parts[(j, l)], gamma)
            out[(i, k)] = tk.truncate_rel(y, eta)
    return BlockVector(out)


def apply_prec(prec, r, eta):
    """Blockwise preconditioner application with truncation eta."""
    return BlockVector({(i, k): prec.apply(i, k, v, eta)
                        for (i, k), v in r.parts.items()})


def _dynamic_truncate(u, step, eps_in, alpha, eps_min, delta):
    """Accepted truncation of u + step: the inner product of the realized
    update with the requested step must match its energy within delta."""
    target = step.dot(step)
    eps = max(eps_in, eps_min)
    raw = u.add(step)
    while True:
        cand = raw.truncate(eps)
        if target == 0.0:
            return cand, eps
        realized = cand.add(u, -1.0).dot(step)
        if abs(realized / target - 1.0) <= delta or eps <= eps_min:
            return cand, eps
        eps = max(alpha * eps, eps_min)


def _residual(system, u, f, gamma, eta):
    """r = f - A u (the negated blockwise matvec accumulation)."""
    return matvec_blocks(system, u, f, gamma, eta).scale(-1.0)


def tpcg(system, prec, tol=1e-6, beta=0.1, gamma=1e-8, delta=1e-3,
         alpha=0.5, eps0=0.1, eps_min=None, max_iter=500, u0=None,
         relative_stop=False, callback=None):
    """Truncated PCG on the (possibly singular) block system.

    Returns (u, SolveReport). The truncation tolerance of the Krylov
    quantities is eta_k = beta*tol*||r_0||/||r_k||, loosening as the
    residual decreases, which keeps ranks low near convergence.
    """
    f = BlockVector.from_rhs(system)
    f_norm = f.norm()
    if eps_min is None:
        eps_min = tol * f_norm * 0.1
    stop = tol * f_norm if relative_stop else tol

    u = BlockVector.zeros(system) if u0 is None else u0
    eta = beta * tol
    r = _residual(system, u, f, gamma, eta)
    r0_norm = r.norm()
    history = []
    eps = eps0

    def report(k, r_norm, converged, message=''):
        mem, mem_c = memory_percent(system, u)
        return u, SolveReport(k, r_norm, converged, history, u.ranks(),
                              mem, mem_c, message)

    if r0_norm <= stop:
        history.append((0, r0_norm, u.max_rank(), eps))
        return report(0, r0_norm, True)

    z = apply_prec(prec, r, eta)
    p = z
    r_norm = r0_norm
    best = r0_norm
    best_k = 0
    for k in range(max_iter):
        history.append((k, r_norm, u.max_rank(), eps))
        if callback is not None:
            callback(k, r_norm, u)
        q = matvec_blocks(system, p, None, gamma, eta)
        xi = p.dot(q)
        if not np.isfinite(xi) or xi <= 0.0:
            return report(k, r_norm, False,
                          'loss of positivity: p.Ap = %g at iteration %d'
                          % (xi, k))
        omega = r.dot(p) / xi
        u, eps = _dynamic_truncate(u, p.scale(omega), eps, alpha, eps_min,
                                   delta)
        r = _residual(system, u, f, gamma, eta)
        r_norm = r.norm()
        if not np.isfinite(r_norm):
            return report(k + 1, r_norm, False, 'non-finite residual')
        if r_norm <= stop:
            history.append((k + 1, r_norm, u.max_rank(), eps))
            return report(k + 1, r_norm, True)
        if r_norm < best:
            best, best_k = r_norm, k
        elif r_norm > 10.0 * best and k - best_k >= 20:
            return report(k + 1, r_norm, False,
                          'divergence: residual grew 10x over 20 iterations')
        eta = beta * tol * r0_norm / r_norm
        z = apply_prec(prec, r, eta)
        beta_k = -z.dot(q) / xi
        p = z.add(p, beta_k).truncate(eta)
    return report(max_iter, r_norm, False, 'max_iter exceeded')


class FieldEvaluator:
    """Evaluates the summed solution field patch by patch.

    Components of the overlapping split are meaningless alone; only the
    sum over subdomains is exposed.
    """

    def __init__(self, system, u):
        self.system = system
        self.u = u
        self.ctx = system._ctx

    def eval_patch(self, pid, x1, x2, x3, component=0, deriv=(0, 0, 0)):
        """Field values (or patch-coordinate partials) of one component on
        a tensor grid of patch pid."""
        xs = [np.atleast_1d(np.asarray(x, dtype=float)) for x in (x1, x2, x3)]
        total = np.zeros((len(xs[0]), len(xs[1]), len(xs[2])))
        kv = self.ctx.kv_patch
        dim = kv.dim
        B = [eval_basis_dense(kv, xs[d], deriv[d]) for d in range(3)]
        for i, sub in enumerate(self.system.subs):
            if pid not in sub.patch_ids:
                continue
            pos = self.ctx.pos[i][pid]
            v = self.u.parts[(i, component)]
            E = []
            for d in range(3):
                sp = self.ctx.spaces[i][d]
                off = pos[d] * (dim - 1)
                idx = off + np.arange(dim)
                mask = (idx >= sp.first) & (idx <= sp.last)
                W = np.zeros((dim, v.factors[d].shape[1]))
                W[mask] = v.factors[d][idx[mask] - sp.first]
                E.append(B[d] @ W)
            total += np.einsum('abc,ia,jb,kc->ijk', v.core, E[0], E[1], E[2],
                               optimize=True)
        return total


def reconstruct_solution(system, u):
    return FieldEvaluator(system, u)


def memory_percent(system, u):
    """Factor storage of the solution as a percentage of the dof count;
    the second value also counts the Tucker cores."""
    ndof = sum(int(np.prod(system.dims(i))) for i in range(system.nsub))
    fac = 0
    core = 0
    for (i, k), v in u.parts.items():
        for d in range(3):
            fac += v.factors[d].shape[0] * v.factors[d].shape[1]
        core += int(np.prod(v.ranks))
    ndof_total = system.ncomp * ndof
    return 100.0 * fac / ndof_total, 100.0 * (fac + core) / ndof_total
