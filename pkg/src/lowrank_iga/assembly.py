"""Low-rank Galerkin assembly of the overlapping block system.

Every block of the stiffness matrix couples two (possibly equal) subdomains.
The coupling region is a box of whole patches; it is decomposed into leaf
boxes containing at most one glued patch pair, and on each leaf the geometry
coefficient is approximated in low rank and integrated direction by
direction, producing Tucker-format matrix blocks whose ranks are sums of
coefficient ranks over the participating terms.
"""

import csv

import numpy as np

from . import funclowrank as fl
from . import tucker as tk
from .geometry import build_subdomains, lame_parameters, _coefficient_matrix
from .splines import (UnivariateSpace, make_uniform_open_knots,
                      quadrature_grid, eval_basis_dense)

__all__ = ['BlockSystem', 'assemble', 'write_rank_report', 'COEFF_TOL']

COEFF_TOL = 1e-7          # relative tolerance of coefficient approximations
RECOMPRESS_TOL = 1e-14    # removes only redundant rank directions
DROP_TOL = 1e-13          # relative cutoff for identically-zero coefficients


class BlockSystem:
    """Tucker-format block stiffness matrix and right-hand side.

    blocks maps (i, j, k, l) -> TuckerMatrix over the eliminated subdomain
    spaces; rhs maps (i, k) -> TuckerVector. Missing keys are zero.
    """

    def __init__(self, topo, subs, p, n_el, mode, spaces, blocks, rhs):
        self.topo = topo
        self.subs = subs
        self.p = p
        self.n_el = n_el
        self.mode = mode
        self.ncomp = 1 if mode == 'scalar' else 3
        self.spaces = spaces       # per subdomain: 3-tuple of UnivariateSpace
        self.blocks = blocks
        self.rhs = rhs

    @property
    def nsub(self):
        return len(self.subs)

    def dims(self, i):
        return tuple(sp.dim for sp in self.spaces[i])

    @property
    def ndof(self):
        return self.ncomp * sum(int(np.prod(self.dims(i)))
                                for i in range(self.nsub))

    def block(self, i, j, k, l):
        return self.blocks.get((i, j, k, l))

    def block_iter(self):
        return self.blocks.items()


class _Leaf:
    """Integration box: at most one glued pair direction.

    kvs: per-direction knot vector in box coordinates; row_off/col_off map
    box basis indices into the (uneliminated) subdomain index ranges.
    """

    def __init__(self, patch_ids, pair_dir, kvs, row_off, col_off):
        self.patch_ids = patch_ids   # 1 or 2 ids, ordered along pair_dir
        self.pair_dir = pair_dir     # None for single-patch boxes
        self.kvs = kvs
        self.row_off = row_off
        self.col_off = col_off


class _Context:
    def __init__(self, topo, subs, p, n_el, mode, coeff_tol=COEFF_TOL,
                 coeff_min_grid=9):
        self.topo = topo
        self.subs = subs
        self.p = p
        self.n_el = n_el
        self.mode = mode
        self.coeff_tol = coeff_tol
        self.coeff_min_grid = coeff_min_grid
        self.kv_patch = make_uniform_open_knots(p, n_el)
        self.sub_kvs = [s.merged_kvs(p, n_el) for s in subs]
        self.spaces = [s.spaces(p, n_el) for s in subs]
        self.pos = [{pid: idx for idx, pid in np.ndenumerate(s.patch_grid)}
                    for s in subs]
        self._coeff = {}
        self._scale = {}
        self._grid_cache = {}     # (pid,k,l,grid) -> full coefficient matrix
        self._grid_order = []

    def coeff_scale(self, k, l):
        """Reference magnitude of the (k,l) coefficient over all patches."""
        key = (k, l)
        if key not in self._scale:
            vals = []
            for pid, patch in enumerate(self.topo.patches):
                g = np.linspace(0.05, 0.95, 4)
                J = patch.jacobian_grid(g, g, g)
                mu, lam = lame_parameters(patch.E, patch.nu)
                C = _coefficient_matrix(J, k, l, mu, lam, self.mode)
                vals.append(np.max(np.abs(C)))
            self._scale[key] = max(vals)
        return self._scale[key]

    def patch_coeff(self, pid, k, l, a, b):
        """Low-rank approximation of C^(m,k,l)_{ab} in patch coordinates.

        Returns None when the entry vanishes identically (relative to the
        magnitude of the full coefficient matrix).
        """
        key = (pid, k, l, a, b)
        if key in self._coeff:
            return self._coeff[key]
        patch = self.topo.patches[pid]
        mu, lam = lame_parameters(patch.E, patch.nu)
        scale = self.coeff_scale(k, l)
        if patch.is_affine:
            J = patch.jacobian_grid([0.5], [0.5], [0.5])[0, 0, 0]
            C = _coefficient_matrix(J[None], k, l, mu, lam, self.mode)[0]
            val = C[a, b]
            fn = None if abs(val) < DROP_TOL * scale else fl.LowRankFunc3.constant(val)
        else:
            def grid_fn(X1, X2, X3):
                # meshgrid inputs share tensor structure: recover axes
                x1 = X1[:, 0, 0]
                x2 = X2[0, :, 0]
                x3 = X3[0, 0, :]
                key = (pid, k, l, x1.tobytes(), x2.tobytes(), x3.tobytes())
                C = self._grid_cache.get(key)
                if C is None:
                    J = patch.jacobian_grid(x1, x2, x3)
                    C = _coefficient_matrix(J, k, l, mu, lam, self.mode)
                    # the nine (a,b) entries of one (pid,k,l) pair are
                    # approximated back to back on identical grids; a short
                    # cache avoids recomputing the Jacobians for each one
                    self._grid_cache[key] = C
                    self._grid_order.append(key)
                    if len(self._grid_order) > 4:
                        del self._grid_cache[self._grid_order.pop(0)]
                return C[..., a, b]

            fn = fl.approx3(grid_fn, self.coeff_tol,
                            min_size=self.coeff_min_grid)
            if fn.ranks == (1, 1, 1) and abs(float(
                    fn.eval_points(np.array([[0.4, 0.6, 0.5]]))[0])) < DROP_TOL * scale:
                g = np.linspace(0, 1, 5)
                if np.max(np.abs(fn.eval_grid(g, g, g))) < DROP_TOL * scale:
                    fn = None
        self._coeff[key] = fn
        return fn

    def overlap_leaves(self, i, j):
        """Leaf boxes covering the overlap of subdomains i and j."""
        si, sj = self.subs[i], self.subs[j]
        shared = sorted(set(si.patch_ids) & set(sj.patch_ids))
        if not shared:
            return []
        pos_i, pos_j = self.pos[i], self.pos[j]
        slots_i = [sorted({pos_i[pid][d] for pid in shared}) for d in range(3)]
        pair_dirs = [d for d in range(3) if len(slots_i[d]) == 2]
        d0 = pair_dirs[0] if pair_dirs else None
        split_dirs = pair_dirs[1:]
        dim = self.kv_patch.dim

        leaves = []
        for combo in np.ndindex(*(2,) * len(split_dirs)):
            fixed = dict(zip(split_dirs, combo))
            members = []
            for pid in shared:
                ok = all(pos_i[pid][d] == slots_i[d][q]
                         for d, q in fixed.items())
                if ok:
                    members.append(pid)
            if d0 is not None:
                members.sort(key=lambda pid: pos_i[pid][d0])
            kvs, row_off, col_off = [], [], []
            for d in range(3):
                if d == d0:
                    kvs.append(self.sub_kvs[i][d])
                    row_off.append(0)
                    col_off.append(0)
                else:
                    kvs.append(self.kv_patch)
                    pid0 = members[0]
                    row_off.append(pos_i[pid0][d] * (dim - 1))
                    col_off.append(pos_j[pid0][d] * (dim - 1))
            leaves.append(_Leaf(members, d0, kvs, row_off, col_off))
        return leaves

    def leaf_coeff(self, leaf, k, l, a, b):
        """Glued coefficient of a leaf box, or None if it vanishes."""
        fns = [self.patch_coeff(pid, k, l, a, b) for pid in leaf.patch_ids]
        if all(fn is None for fn in fns):
            return None
        fns = [fl.LowRankFunc3.constant(0.0) if fn is None else fn for fn in fns]
        if leaf.pair_dir is None:
            return fns[0]
        glued = fl.glue_halves(fns[0], fns[1], direction=leaf.pair_dir)
        s = 1.0
        if a == leaf.pair_dir:
            s *= 0.5
        if b == leaf.pair_dir:
            s *= 0.5
        return glued.scaled(s) if s != 1.0 else glued


def _scatter(G, off_r, off_c, sp_r, sp_c):
    """Place a box factor matrix into the eliminated subdomain index ranges."""
    out = np.zeros((sp_r.dim, sp_c.dim))
    rows = off_r + np.arange(G.shape[0])
    cols = off_c + np.arange(G.shape[1])
    mr = (rows >= sp_r.first) & (rows <= sp_r.last)
    mc = (cols >= sp_c.first) & (cols <= sp_c.last)
    out[np.ix_(rows[mr] - sp_r.first, cols[mc] - sp_c.first)] = G[np.ix_(mr, mc)]
    return out


def _term_factor_matrices(ctx, leaf, cf, a, b, sp_rows, sp_cols,
                          eliminate_cols=True):
    """Per-direction stacks (R_d, m_d, n_d) of scattered factor matrices."""
    stacks = []
    for d in range(3):
        fac = cf.factors[d]
        kv = leaf.kvs[d]
        n_coef = max(c.shape[0] for c in fac.coeffs)
        extra = n_coef // 2 + 1
        pts, wts = quadrature_grid(kv, kv.degree + 1 + extra)
        Bs = eval_basis_dense(kv, pts, 1 if d == a else 0)
        Bt = eval_basis_dense(kv, pts, 1 if d == b else 0)
        S = fac.sample(pts)                        # (nq, R)
        sp_r, sp_c = sp_rows[d], sp_cols[d]
        if not eliminate_cols:
            sp_c = UnivariateSpace(sp_c.kv)
        mats = np.empty((fac.rank, sp_r.dim, sp_c.dim))
        for r in range(fac.rank):
            G = Bs.T @ (Bt * (S[:, r] * wts)[:, None])
            mats[r] = _scatter(G, leaf.row_off[d], leaf.col_off[d], sp_r, sp_c)
        stacks.append(mats)
    return stacks


def _stack_terms(terms):
    """Concatenate Tucker terms block-diagonally into one TuckerMatrix."""
    R = [sum(t[1].shape[d] for t in terms) for d in range(3)]
    factors = [np.concatenate([t[0][d] for t in terms], axis=0)
               for d in range(3)]
    core = np.zeros(R)
    off = [0, 0, 0]
    for stacks, c in terms:
        sl = tuple(slice(off[d], off[d] + c.shape[d]) for d in range(3))
        core[sl] = c
        off = [off[d] + c.shape[d] for d in range(3)]
    return tk.TuckerMatrix(factors, core)


def assemble_block(ctx, i, j, k, l, eliminate_cols=True):
    """Tucker block coupling component k on subdomain i with component l
    on subdomain j, or None when the subdomains do not overlap."""
    leaves = ctx.overlap_leaves(i, j)
    if not leaves:
        return None
    sp_rows, sp_cols = ctx.spaces[i], ctx.spaces[j]
    terms = []
    for leaf in leaves:
        for a in range(3):
            for b in range(3):
                cf = ctx.leaf_coeff(leaf, k, l, a, b)
                if cf is None:
                    continue
                stacks = _term_factor_matrices(ctx, leaf, cf, a, b,
                                               sp_rows, sp_cols,
                                               eliminate_cols)
                terms.append((stacks, cf.core))
    if not terms:
        return None
    return _stack_terms(terms)


def _moment_vectors(ctx, leaf, cf, sp_rows):
    """Per-direction (n_d, R_d) moment matrices int c_r b_s of a leaf box."""
    factors = []
    for d in range(3):
        fac = cf.factors[d]
        kv = leaf.kvs[d]
        n_coef = max(c.shape[0] for c in fac.coeffs)
        pts, wts = quadrature_grid(kv, kv.degree + 1 + n_coef // 2 + 1)
        B = eval_basis_dense(kv, pts, 0)
        M = B.T @ (fac.sample(pts) * wts[:, None])       # (dim, R)
        sp = sp_rows[d]
        rows = leaf.row_off[d] + np.arange(M.shape[0])
        mask = (rows >= sp.first) & (rows <= sp.last)
        out = np.zeros((sp.dim, M.shape[1]))
        out[rows[mask] - sp.first] = M[mask]
        factors.append(out)
    return factors


def assemble_rhs_block(ctx, i, k, f):
    """Load vector of component k on subdomain i for the source f.

    f is either a constant 3-vector (elasticity body force) or a callable
    f(x, y, z) of the physical coordinates (scalar mode).
    """
    leaves = ctx.overlap_leaves(i, i)
    parts = []
    for leaf in leaves:
        fns = []
        for pid in leaf.patch_ids:
            patch = ctx.topo.patches[pid]

            def grid_fn(X1, X2, X3, patch=patch):
                x1 = X1[:, 0, 0]
                x2 = X2[0, :, 0]
                x3 = X3[0, 0, :]
                P, J = patch._eval(x1, x2, x3)
                det = np.abs(np.linalg.det(J))
                if callable(f):
                    return det * f(P[..., 0], P[..., 1], P[..., 2])
                return det * f[k]

            if not callable(f) and f[k] == 0.0:
                fns.append(None)
            elif patch.is_affine and not callable(f):
                J = patch.jacobian_grid([0.5], [0.5], [0.5])[0, 0, 0]
                fns.append(fl.LowRankFunc3.constant(
                    abs(float(np.linalg.det(J))) * f[k]))
            else:
                fns.append(fl.approx3(grid_fn, ctx.coeff_tol,
                                      min_size=ctx.coeff_min_grid))
        if all(fn is None for fn in fns):
            continue
        fns = [fl.LowRankFunc3.constant(0.0) if fn is None else fn for fn in fns]
        cf = fns[0] if leaf.pair_dir is None else fl.glue_halves(
            fns[0], fns[1], direction=leaf.pair_dir)
        parts.append(tk.TuckerVector(_moment_vectors(ctx, leaf, cf, ctx.spaces[i]),
                                     cf.core))
    if not parts:
        return tk.TuckerVector.zeros(tuple(sp.dim for sp in ctx.spaces[i]))
    acc = parts[0]
    for v in parts[1:]:
        acc = tk.add(acc, v)
    return tk.truncate_rel(acc, RECOMPRESS_TOL)


def assemble(topo, p, n_el, mode='elasticity', f=None, subs=None,
             coeff_tol=COEFF_TOL, coeff_min_grid=9):
    """Assemble the full overlapping block system in Tucker format."""
    if mode not in ('elasticity', 'scalar'):
        raise ValueError("mode must be 'elasticity' or 'scalar'")
    if subs is None:
        subs = build_subdomains(topo)
    if f is None:
        if mode == 'scalar':
            raise ValueError("scalar mode requires an explicit source f")
        f = (0.0, 0.0, -1.0)
    ctx = _Context(topo, subs, p, n_el, mode, coeff_tol, coeff_min_grid)
    ncomp = 1 if mode == 'scalar' else 3
    blocks = {}
    for i in range(len(subs)):
        for j in range(len(subs)):
            if j < i:
                continue
            for k in range(ncomp):
                for l in range(ncomp):
                    if j == i and l > k:
                        continue
                    B = assemble_block(ctx, i, j, k, l)
                    if B is None:
                        continue
                    blocks[(i, j, k, l)] = B
                    if (j, i, l, k) != (i, j, k, l):
                        blocks[(j, i, l, k)] = B.transpose()
    rhs = {}
    for i in range(len(subs)):
        for k in range(ncomp):
            rhs[(i, k)] = assemble_rhs_block(ctx, i, k, f)
    system = BlockSystem(topo, subs, p, n_el, mode, ctx.spaces, blocks, rhs)
    system._ctx = ctx
    return system


def write_rank_report(system, path):
    """CSV with one row per stored block: i,j,k,l,R1,R2,R3."""
    with open(path, 'w', newline='') as fh:
        w = csv.writer(fh)
        w.writerow(['i', 'j', 'k', 'l', 'R1', 'R2', 'R3'])
        for (i, j, k, l), B in sorted(system.blocks.items()):
            w.writerow([i, j, k, l] + list(B.ranks))
