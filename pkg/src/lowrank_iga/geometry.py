"""Patches, multipatch topology, boundary conditions, and overlapping
tensor-product subdomains built by merging neighboring patches.

Subdomains are unions of 2, 4 or 8 patches forming a box; their univariate
knot vectors are merged pairwise with a C0 joint at the midpoint, so the
subdomain space is again a tensor-product spline space.
"""

import numpy as np

from .splines import (KnotVector, UnivariateSpace, make_uniform_open_knots,
                      eval_basis_dense, breakpoint_midpoint_samples)

__all__ = [
    'Patch', 'MultipatchTopology', 'Subdomain', 'build_subdomains',
    'merge_knot_vectors', 'lame_parameters', 'coefficient_C', 'coefficient_Q',
    'builtin_domain', 'load_domain', 'save_domain',
]

DIRICHLET, NEUMANN, INTERFACE = 'D', 'N', 'I'


def lame_parameters(E, nu):
    """Lame constants (mu, lam) from Young's modulus and Poisson ratio."""
    if not nu < 0.5:
        raise ValueError("Poisson ratio must be < 0.5")
    mu = E / (2.0 * (1.0 + nu))
    lam = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
    return mu, lam


class Patch:
    """Spline (or analytically mapped) image of the unit cube.

    Either `control` (spline coefficients of the geometry map, shape
    (n1,n2,n3,3) matching `kvs`) or `map_fn` must be given. `map_fn` takes
    three broadcast coordinate arrays and returns (points, jacobians) with
    trailing shapes (...,3) and (...,3,3).
    """

    def __init__(self, kvs=None, control=None, map_fn=None, boundary=None,
                 E=1.0, nu=0.3):
        if map_fn is None and control is None:
            raise ValueError("need control points or an analytic map")
        self.kvs = kvs
        self.control = None if control is None else np.asarray(control, dtype=float)
        self.map_fn = map_fn
        self.E = float(E)
        self.nu = float(nu)
        # all six faces default to interface; the topology overwrites
        self.boundary = {(d, s): INTERFACE for d in range(3) for s in (0, 1)}
        if boundary:
            self.boundary.update(boundary)
        self._affine = None
        self._check_nonsingular()

    def map_grid(self, x1, x2, x3):
        """Physical points on the tensor grid; shape (N1,N2,N3,3)."""
        P, _ = self._eval(x1, x2, x3, want_jac=False)
        return P

    def jacobian_grid(self, x1, x2, x3):
        """Jacobians on the tensor grid; shape (N1,N2,N3,3,3)."""
        _, J = self._eval(x1, x2, x3, want_jac=True)
        return J

    def _eval(self, x1, x2, x3, want_jac=True):
        xs = [np.atleast_1d(np.asarray(x, dtype=float)) for x in (x1, x2, x3)]
        if self.map_fn is not None:
            X = np.meshgrid(*xs, indexing='ij')
            return self.map_fn(*X)
        B0 = [eval_basis_dense(self.kvs[d], xs[d], 0) for d in range(3)]
        P = np.einsum('abce,ia,jb,kc->ijke', self.control, B0[0], B0[1], B0[2],
                      optimize=True)
        if not want_jac:
            return P, None
        J = np.empty(P.shape[:3] + (3, 3))
        for e in range(3):
            B = [eval_basis_dense(self.kvs[d], xs[d], 1 if d == e else 0)
                 for d in range(3)]
            J[..., e] = np.einsum('abcf,ia,jb,kc->ijkf', self.control,
                                  B[0], B[1], B[2], optimize=True)
        return P, J

    def _probe_grid(self):
        if self.kvs is not None:
            return [breakpoint_midpoint_samples(kv) for kv in self.kvs]
        return [np.linspace(0.0, 1.0, 7)] * 3

    def _check_nonsingular(self):
        g = self._probe_grid()
        J = self.jacobian_grid(*g)
        det = np.linalg.det(J)
        if not (np.all(det > 1e-12) or np.all(det < -1e-12)):
            raise ValueError("geometry map is singular or changes orientation")

    @property
    def is_affine(self):
        if self._affine is None:
            g = self._probe_grid()
            J = self.jacobian_grid(*g)
            J0 = J.reshape(-1, 3, 3)[0]
            self._affine = bool(np.max(np.abs(J - J0))
                                < 1e-12 * max(1.0, np.max(np.abs(J0))))
        return self._affine


def box_patch(origin, lengths, E=1.0, nu=0.3):
    """Axis-aligned affine box patch."""
    kvs = tuple(make_uniform_open_knots(1, 1) for _ in range(3))
    o = np.asarray(origin, dtype=float)
    L = np.asarray(lengths, dtype=float)
    corners = np.empty((2, 2, 2, 3))
    for i in range(2):
        for j in range(2):
            for k in range(2):
                corners[i, j, k] = o + L * np.array([i, j, k])
    return Patch(kvs=kvs, control=corners, E=E, nu=nu)


class MultipatchTopology:
    """Patch list plus face-to-face gluing records (identity orientation).

    A gluing record (i, d, j) glues face (d, 1) of patch i to face (d, 0)
    of patch j with matching parameterization.
    """

    def __init__(self, patches, gluings):
        self.patches = list(patches)
        self.gluings = list(gluings)
        self.neighbor = {}
        for (i, d, j) in self.gluings:
            if (i, (d, 1)) in self.neighbor or (j, (d, 0)) in self.neighbor:
                raise ValueError("conflicting gluing records")
            self.neighbor[(i, (d, 1))] = j
            self.neighbor[(j, (d, 0))] = i
            self.patches[i].boundary[(d, 1)] = INTERFACE
            self.patches[j].boundary[(d, 0)] = INTERFACE
        self._check_conforming()

    def _check_conforming(self):
        # glued faces must coincide geometrically (sampled) and patch knot
        # vectors must agree so that meshes are conforming
        for (i, d, j) in self.gluings:
            A, B = self.patches[i], self.patches[j]
            g = [np.linspace(0, 1, 4)] * 3
            ga, gb = list(g), list(g)
            ga[d] = np.array([1.0])
            gb[d] = np.array([0.0])
            Pa = A.map_grid(*ga)
            Pb = B.map_grid(*gb)
            if np.max(np.abs(Pa - Pb)) > 1e-10:
                raise ValueError("glued faces of patches %d,%d do not match" % (i, j))

    def next_in_direction(self, i, d):
        return self.neighbor.get((i, (d, 1)))


class Subdomain:
    """Overlapping union of 2/4/8 patches forming a box of patch ids.

    patch_grid has shape (g1,g2,g3) with g_d in {1,2}; directions with
    g_d = 2 carry a merged knot vector with a C0 joint at 1/2.
    """

    def __init__(self, topo, patch_grid):
        self.topo = topo
        self.patch_grid = np.asarray(patch_grid, dtype=int)
        if self.patch_grid.ndim != 3:
            raise ValueError("patch_grid must be 3D")
        self.glue_dirs = [d for d in range(3) if self.patch_grid.shape[d] == 2]
        self.patch_ids = sorted(set(self.patch_grid.ravel().tolist()))
        self.bc = self._face_classes()

    def _face_classes(self):
        """Boundary class per (direction, side): 'D' (eliminate) or 'N' (keep)."""
        bc = {}
        for d in range(3):
            for s in (0, 1):
                idx = [slice(None)] * 3
                idx[d] = -1 if s else 0
                tags = set()
                for pid in np.asarray(self.patch_grid[tuple(idx)]).ravel():
                    tag = self.topo.patches[pid].boundary[(d, s)]
                    tags.add(DIRICHLET if tag == INTERFACE else tag)
                if tags == {NEUMANN}:
                    bc[(d, s)] = NEUMANN
                elif NEUMANN in tags:
                    raise ValueError(
                        "subdomain %s face (%d,%d) mixes Neumann with "
                        "Dirichlet/interface faces; such merges are rejected"
                        % (self.patch_ids, d, s))
                else:
                    bc[(d, s)] = DIRICHLET
        return bc

    def merged_kvs(self, p, n_el):
        """Per-direction knot vectors of the subdomain spline space."""
        kv = make_uniform_open_knots(p, n_el)
        return tuple(merge_knot_vectors(kv, kv) if d in self.glue_dirs else kv
                     for d in range(3))

    def spaces(self, p, n_el):
        """Per-direction univariate spaces after boundary elimination."""
        kvs = self.merged_kvs(p, n_el)
        return tuple(
            UnivariateSpace(kvs[d],
                            drop_first=self.bc[(d, 0)] == DIRICHLET,
                            drop_last=self.bc[(d, 1)] == DIRICHLET)
            for d in range(3))

    def patch_at(self, slot):
        """Patch id at grid slot (q1,q2,q3) with q_d in {0} or {0,1}."""
        return int(self.patch_grid[tuple(min(q, self.patch_grid.shape[d] - 1)
                                         for d, q in enumerate(slot))])

    def _slot_of(self, xi):
        slot, t = [], []
        for d in range(3):
            if self.patch_grid.shape[d] == 2:
                if xi[d] <= 0.5:
                    slot.append(0)
                    t.append(2.0 * xi[d])
                else:
                    slot.append(1)
                    t.append(2.0 * xi[d] - 1.0)
            else:
                slot.append(0)
                t.append(xi[d])
        return tuple(slot), t

    def map_G(self, xi):
        """Piecewise geometry map at a single parametric point."""
        slot, t = self._slot_of(xi)
        patch = self.topo.patches[self.patch_at(slot)]
        P = patch.map_grid(*[np.array([c]) for c in t])
        return P[0, 0, 0]

    def jacobian_G(self, xi):
        """Jacobian of the piecewise map (chain rule doubles glued columns)."""
        slot, t = self._slot_of(xi)
        patch = self.topo.patches[self.patch_at(slot)]
        J = patch.jacobian_grid(*[np.array([c]) for c in t])[0, 0, 0]
        scale = np.array([2.0 if d in self.glue_dirs else 1.0 for d in range(3)])
        return J * scale[None, :]

    def __repr__(self):
        return "Subdomain(patches=%s)" % (self.patch_ids,)


def merge_knot_vectors(kvA, kvB):
    """C0 merge of two open knot vectors onto [0,1] with the joint at 1/2."""
    if kvA.degree != kvB.degree:
        raise ValueError("degree mismatch in knot merge")
    p = kvA.degree
    intA = kvA.knots[p + 1:-p - 1]
    intB = kvB.knots[p + 1:-p - 1]
    knots = np.concatenate([
        np.zeros(p + 1), 0.5 * intA, np.full(p, 0.5), 0.5 * intB + 0.5,
        np.ones(p + 1)])
    return KnotVector(p, knots)


def _coefficient_matrix(J, k, l, mu, lam, mode):
    """Pullback coefficient matrix C (trailing shape (...,3,3)).

    C = |det J| J^-1 [mu (delta_kl I + e_l e_k^T) + lam e_k e_l^T] J^-T,
    or |det J| J^-1 J^-T in scalar mode.
    """
    det = np.abs(np.linalg.det(J))
    Jinv = np.linalg.inv(J)
    if mode == 'scalar':
        M = np.eye(3)
    else:
        M = np.zeros((3, 3))
        if k == l:
            M += mu * np.eye(3)
        M[l, k] += mu
        M[k, l] += lam
    C = np.einsum('...ab,bc,...dc->...ad', Jinv, M, Jinv)
    return det[..., None, None] * C


def coefficient_C(patch, k, l, xi, mode='elasticity'):
    """Patch coefficient matrix C^(m,k,l) at a parametric point; (3,3) array."""
    J = patch.jacobian_grid(*[np.array([c]) for c in xi])[0, 0, 0]
    mu, lam = lame_parameters(patch.E, patch.nu)
    return _coefficient_matrix(J[None], k, l, mu, lam, mode)[0]


def coefficient_Q(sub, k, l, xi, mode='elasticity'):
    """Subdomain coefficient matrix Q^(i,k,l) at a parametric point."""
    J = sub.jacobian_G(xi)
    slot, _ = sub._slot_of(xi)
    patch = sub.topo.patches[sub.patch_at(slot)]
    mu, lam = lame_parameters(patch.E, patch.nu)
    return _coefficient_matrix(J[None], k, l, mu, lam, mode)[0]


def _candidate_boxes(topo, shape):
    """All patch boxes of the given (g1,g2,g3) shape found via gluing records."""
    n = len(topo.patches)
    boxes = []
    seen = set()
    for root in range(n):
        grid = np.full(shape, -1, dtype=int)
        grid[0, 0, 0] = root
        filled = [1, 1, 1]
        ok = True
        for d in range(3):
            if shape[d] == 1:
                continue
            for pos in np.ndindex(tuple(filled)):
                nxt = topo.next_in_direction(grid[pos], d)
                if nxt is None:
                    ok = False
                    break
                dst = list(pos)
                dst[d] = 1
                grid[tuple(dst)] = nxt
            if not ok:
                break
            filled[d] = 2
        if not ok:
            continue
        # every internal gluing of the box must exist and agree
        for d in range(3):
            if shape[d] == 1:
                continue
            for pos in np.ndindex(shape):
                if pos[d] == 1:
                    continue
                dst = list(pos)
                dst[d] = 1
                if topo.next_in_direction(grid[pos], d) != grid[tuple(dst)]:
                    ok = False
        if not ok:
            continue
        key = frozenset(grid.ravel().tolist())
        if len(key) != grid.size or key in seen:
            continue
        seen.add(key)
        boxes.append(grid.copy())
    return boxes


def build_subdomains(topo):
    """Overlapping subdomains: 8-patch corners, then 4-patch edges, then
    2-patch faces, skipping candidates contained in an earlier subdomain."""
    shapes = ([(2, 2, 2)]
              + [tuple(2 - (d == e) for d in range(3)) for e in (2, 1, 0)]
              + [tuple(1 + (d == e) for d in range(3)) for e in (0, 1, 2)])
    chosen = []
    chosen_sets = []
    for shape in shapes:
        for grid in _candidate_boxes(topo, shape):
            pset = set(grid.ravel().tolist())
            if any(pset <= s for s in chosen_sets):
                continue
            chosen.append(grid)
            chosen_sets.append(pset)
    subs = [Subdomain(topo, grid) for grid in chosen]
    covered = set()
    for s in subs:
        covered.update(s.patch_ids)
    if covered != set(range(len(topo.patches))):
        raise ValueError("subdomains do not cover all patches")
    return subs


# ---------------------------------------------------------------------------
# builtin benchmark domains


def _lshape():
    # L in the x-z plane times [0,1] in y; Dirichlet on the planes
    # {x=-1}, {z=1}, {x=0}, {z=0} (exterior parts), Neumann elsewhere
    p0 = box_patch((-1, 0, 0), (1, 1, 1))    # x in [-1,0], z in [0,1]
    p1 = box_patch((-1, 0, -1), (1, 1, 1))   # x in [-1,0], z in [-1,0]
    p2 = box_patch((0, 0, -1), (1, 1, 1))    # x in [0,1],  z in [-1,0]
    for p in (p0, p1, p2):
        for d in range(3):
            for s in (0, 1):
                p.boundary[(d, s)] = NEUMANN
    p0.boundary[(0, 0)] = DIRICHLET          # x=-1
    p0.boundary[(0, 1)] = DIRICHLET          # x=0
    p0.boundary[(2, 1)] = DIRICHLET          # z=1
    p1.boundary[(0, 0)] = DIRICHLET          # x=-1
    p2.boundary[(2, 1)] = DIRICHLET          # z=0
    # gluings: p1 above-glued to p0 in z; p1 right-glued to p2 in x
    return MultipatchTopology([p0, p1, p2], [(1, 2, 0), (1, 0, 2)])


def _cross3d():
    # center cube [0,1]^3 plus six arms; Dirichlet on all boundary faces
    # except the six outer arm end-faces (Neumann)
    center = box_patch((0, 0, 0), (1, 1, 1))
    patches = [center]
    gluings = []
    for d in range(3):
        for s in (0, 1):
            origin = [0.0, 0.0, 0.0]
            origin[d] = 1.0 if s else -1.0
            arm = box_patch(tuple(origin), (1, 1, 1))
            for dd in range(3):
                for ss in (0, 1):
                    arm.boundary[(dd, ss)] = DIRICHLET
            arm.boundary[(d, s)] = NEUMANN   # outer end face
            pid = len(patches)
            patches.append(arm)
            if s:
                gluings.append((0, d, pid))
            else:
                gluings.append((pid, d, 0))
    return MultipatchTopology(patches, gluings)


def _thick_square():
    # [0,2]x[0,2]x[0,1] as 3x3 patches; checkerboard Young's modulus
    # E=1 (even parity) / E=6 (odd parity); Dirichlet everywhere except
    # Neumann on the top side {z=1}
    patches = []
    ids = {}
    for r in range(3):
        for c in range(3):
            E = 1.0 if (r + c) % 2 == 0 else 6.0
            p = box_patch((2 * c / 3, 2 * r / 3, 0), (2 / 3, 2 / 3, 1), E=E)
            for d in range(3):
                for s in (0, 1):
                    p.boundary[(d, s)] = DIRICHLET
            p.boundary[(2, 1)] = NEUMANN
            ids[(r, c)] = len(patches)
            patches.append(p)
    gluings = []
    for r in range(3):
        for c in range(3):
            if c < 2:
                gluings.append((ids[(r, c)], 0, ids[(r, c + 1)]))
            if r < 2:
                gluings.append((ids[(r, c)], 1, ids[(r + 1, c)]))
    return MultipatchTopology(patches, gluings)


RING_RHO = np.pi / 2.0  # conformal quarter-annulus: outer/inner radius e^(pi/2)


def _ring_map(q, scale=1.0):
    """Conformal exponential-polar map of quarter sector q (analytic).

    A uniform `scale` shrinks the whole solid; the map stays conformal in
    the plane, so coefficient separability and ranks are unaffected.
    """
    def fn(X1, X2, X3):
        rho = scale * np.exp(RING_RHO * X1)
        th = RING_RHO * (q + X2)
        P = np.stack([rho * np.cos(th), rho * np.sin(th), scale * X3], axis=-1)
        J = np.zeros(X1.shape + (3, 3))
        J[..., 0, 0] = RING_RHO * rho * np.cos(th)
        J[..., 0, 1] = -RING_RHO * rho * np.sin(th)
        J[..., 1, 0] = RING_RHO * rho * np.sin(th)
        J[..., 1, 1] = RING_RHO * rho * np.cos(th)
        J[..., 2, 2] = scale
        return P, J
    return fn


def _thick_ring(scale=1.0):
    # four quarter-annulus patches closing a full ring; Dirichlet on the
    # bottom {z=0} and the inner cylindrical wall, Neumann elsewhere
    patches = []
    for q in range(4):
        p = Patch(map_fn=_ring_map(q, scale))
        p.boundary[(0, 0)] = DIRICHLET   # inner wall
        p.boundary[(0, 1)] = NEUMANN     # outer wall
        p.boundary[(2, 0)] = DIRICHLET   # z=0
        p.boundary[(2, 1)] = NEUMANN     # z=1
        patches.append(p)
    gluings = [(q, 1, (q + 1) % 4) for q in range(4)]
    return MultipatchTopology(patches, gluings)


_BUILTINS = {
    'lshape': _lshape,
    'cross3d': _cross3d,
    'thick_square': _thick_square,
    'thick_ring': _thick_ring,
}


def builtin_domain(name, **kwargs):
    if name not in _BUILTINS:
        raise ValueError("unknown domain %r; choose from %s"
                         % (name, sorted(_BUILTINS)))
    return _BUILTINS[name](**kwargs)


# ---------------------------------------------------------------------------
# line-oriented domain description files


def save_domain(topo, path):
    with open(path, 'w') as f:
        f.write("domain-file 1\n")
        for p in topo.patches:
            if p.control is None:
                raise ValueError("analytic-map patches cannot be saved")
            f.write("patch\n")
            f.write("E=%r\n" % p.E)
            f.write("nu=%r\n" % p.nu)
            for d in range(3):
                f.write("kv%d=%d %s\n" % (d, p.kvs[d].degree,
                                          ' '.join('%.17g' % x for x in p.kvs[d].knots)))
            for d in range(3):
                for s in (0, 1):
                    f.write("face%d%d=%s\n" % (d, s, p.boundary[(d, s)]))
            f.write("control=%d %d %d\n" % p.control.shape[:3])
            for row in p.control.reshape(-1, 3):
                f.write("%.17g %.17g %.17g\n" % tuple(row))
        for (i, d, j) in topo.gluings:
            f.write("glue=%d %d %d\n" % (i, d, j))


def load_domain(path):
    patches = []
    gluings = []
    cur = None

    def finish(cur):
        if cur is None:
            return
        patches.append(Patch(kvs=tuple(cur['kvs']), control=cur['control'],
                             boundary=cur['faces'], E=cur['E'], nu=cur['nu']))

    with open(path) as f:
        header = f.readline().strip()
        if header != "domain-file 1":
            raise ValueError("not a domain description file")
        lines = iter(f.read().splitlines())
    for line in lines:
        line = line.strip()
        if not line:
            continue
        if line == "patch":
            finish(cur)
            cur = {'E': 1.0, 'nu': 0.3, 'kvs': [None] * 3, 'faces': {},
                   'control': None}
            continue
        key, _, val = line.partition('=')
        if key == 'glue':
            i, d, j = (int(t) for t in val.split())
            gluings.append((i, d, j))
        elif key in ('E', 'nu'):
            cur[key] = float(val)
        elif key.startswith('kv'):
            toks = val.split()
            cur['kvs'][int(key[2])] = KnotVector(int(toks[0]),
                                                 [float(t) for t in toks[1:]])
        elif key.startswith('face'):
            cur['faces'][(int(key[4]), int(key[5]))] = val.strip()
        elif key == 'control':
            shape = tuple(int(t) for t in val.split())
            rows = []
            for _ in range(int(np.prod(shape))):
                rows.append([float(t) for t in next(lines).split()])
            cur['control'] = np.array(rows).reshape(shape + (3,))
        else:
            raise ValueError("unrecognized line in domain file: %r" % line)
    finish(cur)
    return MultipatchTopology(patches, gluings)
