"""Tucker-format vectors and matrices in three dimensions.

A Tucker vector stores per-direction factor columns and a small core tensor;
a Tucker matrix stores per-direction stacks of factor matrices. Products,
sums and inner products exploit the Kronecker structure; truncation is a
higher-order SVD of the core after factor orthonormalization.
"""

import numpy as np

__all__ = [
    'TuckerVector', 'TuckerMatrix', 'matvec', 'dot', 'add', 'scale',
    'truncate_rel', 'truncate_dynamic', 'from_dense', 'accumulate_product',
    'save_vector_txt', 'load_vector_txt',
]

# materialization guard for densify (entries)
DENSIFY_CAP = 20_000_000


def _mode_prod(W, A, d):
    # contract axis d of W with the columns of A: result axis d has A.shape[0]
    W = np.tensordot(A, W, axes=(1, d))
    return np.moveaxis(W, 0, d)


class TuckerVector:
    """Low-rank representation of a vector indexed by a 3D tensor grid."""

    __slots__ = ('dims', 'factors', 'core')

    def __init__(self, factors, core):
        core = np.asarray(core, dtype=float)
        if core.ndim != 3 or len(factors) != 3:
            raise ValueError("need three factor matrices and a 3D core")
        factors = [np.ascontiguousarray(np.atleast_2d(np.asarray(f, dtype=float)))
                   for f in factors]
        for d in range(3):
            if factors[d].shape[1] != core.shape[d]:
                raise ValueError("factor/core rank mismatch in direction %d" % d)
        self.dims = tuple(f.shape[0] for f in factors)
        self.factors = factors
        self.core = core

    @classmethod
    def zeros(cls, dims):
        return cls([np.zeros((n, 1)) for n in dims], np.zeros((1, 1, 1)))

    @property
    def ranks(self):
        return self.core.shape

    @property
    def storage_count(self):
        return self.core.size + sum(f.size for f in self.factors)

    def norm(self):
        return float(np.sqrt(max(dot(self, self), 0.0)))

    def full(self):
        """Dense 3D array; guarded against huge materializations."""
        if np.prod(self.dims, dtype=np.int64) > DENSIFY_CAP:
            raise ValueError("densify cap exceeded")
        W = self.core
        for d in range(3):
            W = _mode_prod(W, self.factors[d], d)
        return W

    def flatten(self):
        # column-major so that the flat vector is kron(f3, f2, f1) ordering
        return self.full().ravel(order='F')


class TuckerMatrix:
    """Low-rank representation of a Kronecker-structured matrix.

    factors[d] has shape (R_d, m_d, n_d): R_d stacked factor matrices.
    """

    __slots__ = ('row_dims', 'col_dims', 'factors', 'core')

    def __init__(self, factors, core):
        core = np.asarray(core, dtype=float)
        factors = [np.ascontiguousarray(np.asarray(f, dtype=float)) for f in factors]
        for d in range(3):
            if factors[d].ndim != 3 or factors[d].shape[0] != core.shape[d]:
                raise ValueError("factor/core rank mismatch in direction %d" % d)
        self.row_dims = tuple(f.shape[1] for f in factors)
        self.col_dims = tuple(f.shape[2] for f in factors)
        self.factors = factors
        self.core = core

    @classmethod
    def identity(cls, dims):
        return cls([np.eye(n)[None, :, :] for n in dims], np.ones((1, 1, 1)))

    @property
    def ranks(self):
        return self.core.shape

    def transpose(self):
        return TuckerMatrix([np.swapaxes(f, 1, 2) for f in self.factors], self.core)

    def full(self):
        """Dense matrix of shape (prod(row_dims), prod(col_dims)), kron ordering."""
        m = int(np.prod(self.row_dims, dtype=np.int64))
        n = int(np.prod(self.col_dims, dtype=np.int64))
        if m * n > DENSIFY_CAP:
            raise ValueError("densify cap exceeded")
        out = np.zeros((m, n))
        R1, R2, R3 = self.core.shape
        for r3 in range(R3):
            for r2 in range(R2):
                for r1 in range(R1):
                    c = self.core[r1, r2, r3]
                    if c == 0.0:
                        continue
                    out += c * np.kron(self.factors[2][r3],
                                       np.kron(self.factors[1][r2], self.factors[0][r1]))
        return out

    def as_vector(self):
        """View the matrix as a Tucker vector over the flattened (m_d*n_d) grids."""
        fac = [f.reshape(f.shape[0], -1).T for f in self.factors]
        return TuckerVector(fac, self.core)

    @staticmethod
    def from_vector(v, row_dims, col_dims):
        fac = [v.factors[d].T.reshape(v.ranks[d], row_dims[d], col_dims[d])
               for d in range(3)]
        return TuckerMatrix(fac, v.core)


def matvec(B, v):
    """Tucker matrix-vector product; ranks multiply componentwise."""
    if B.col_dims != v.dims:
        raise ValueError("dimension mismatch in matvec")
    fac = []
    for d in range(3):
        # (R_B, m, n) x (n, R_v) -> (m, R_B*R_v)
        F = np.einsum('rmn,ns->mrs', B.factors[d], v.factors[d])
        fac.append(F.reshape(B.row_dims[d], -1))
    core = np.einsum('abc,ijk->aibjck', B.core, v.core).reshape(
        [B.core.shape[d] * v.core.shape[d] for d in range(3)])
    return TuckerVector(fac, core)


def dot(v, w):
    """Euclidean inner product of two Tucker vectors."""
    if v.dims != w.dims:
        raise ValueError("dimension mismatch in dot")
    G = [v.factors[d].T @ w.factors[d] for d in range(3)]
    return float(np.einsum('abc,ijk,ai,bj,ck->', v.core, w.core,
                           G[0], G[1], G[2], optimize=True))


def add(v, w):
    """Sum of Tucker vectors: factors concatenated, cores block-diagonal."""
    if v.dims != w.dims:
        raise ValueError("dimension mismatch in add")
    fac = [np.hstack([v.factors[d], w.factors[d]]) for d in range(3)]
    rv, rw = v.core.shape, w.core.shape
    core = np.zeros([rv[d] + rw[d] for d in range(3)])
    core[:rv[0], :rv[1], :rv[2]] = v.core
    core[rv[0]:, rv[1]:, rv[2]:] = w.core
    return TuckerVector(fac, core)


def scale(v, s):
    """Scalar multiple; absorbed into the core, ranks unchanged."""
    return TuckerVector(list(v.factors), float(s) * v.core)


def _st_hosvd(Qs, W, budgets):
    """Sequentially truncated HOSVD of core W with orthonormal factors Qs.

    budgets[d] is the squared energy that mode d may discard; None means
    orthonormalize only (no cuts).
    """
    factors = []
    core = W
    for d in range(3):
        mat = np.moveaxis(core, d, 0).reshape(core.shape[d], -1)
        U, s, Vt = np.linalg.svd(mat, full_matrices=False)
        if budgets is None:
            keep = len(s)
        else:
            energy = np.cumsum(s[::-1] ** 2)[::-1]  # tail sums
            keep = len(s)
            while keep > 1 and energy[keep - 1] <= budgets[d]:
                keep -= 1
        U = U[:, :keep]
        factors.append(Qs[d] @ U)
        core = np.moveaxis(core, d, 0)
        core = np.tensordot(U.T, core, axes=(1, 0))
        core = np.moveaxis(core, 0, d)
    return TuckerVector(factors, core)


def truncate_rel(v, eps):
    """Relative truncation: ||result - v|| <= eps*||v||, ranks never increase.

    eps = 0 re-orthonormalizes the representation without discarding energy.
    """
    if eps < 0:
        raise ValueError("eps must be >= 0")
    Qs, Rs = [], []
    for d in range(3):
        Q, R = np.linalg.qr(v.factors[d])
        Qs.append(Q)
        Rs.append(R)
    W = v.core
    for d in range(3):
        W = _mode_prod(W, Rs[d], d)
    nrm2 = float(np.sum(W ** 2))
    if eps == 0.0 or nrm2 == 0.0:
        budgets = None
    else:
        # equal split of the squared tolerance across the three modes
        budgets = [eps ** 2 * nrm2 / 3.0] * 3
    return _st_hosvd(Qs, W, budgets)


def accumulate_product(y, B, x, eps):
    """Fused truncate_rel(y + B@x, eps) without materializing the product core.

    Equivalent to truncate_rel(add(y, matvec(B, x)), eps) but the Kronecker
    core of the product enters the projected core directly.
    """
    Qs, R_y, R_p = [], [], []
    for d in range(3):
        F = np.einsum('rmn,ns->mrs', B.factors[d], x.factors[d])
        F = F.reshape(B.row_dims[d], -1)
        ry = y.core.shape[d]
        Q, R = np.linalg.qr(np.hstack([y.factors[d], F]))
        Qs.append(Q)
        R_y.append(R[:, :ry])
        R_p.append(R[:, ry:].reshape(R.shape[0], B.core.shape[d], x.core.shape[d]))
    W = y.core
    for d in range(3):
        W = _mode_prod(W, R_y[d], d)
    # matrix cores are typically sparse (block-diagonal sums of terms), so
    # the product core is projected one nonzero entry at a time; this avoids
    # the large Kronecker intermediate of a single einsum
    for i, k, m in np.argwhere(B.core != 0.0):
        T = _mode_prod(x.core, R_p[0][:, i, :], 0)
        T = _mode_prod(T, R_p[1][:, k, :], 1)
        T = _mode_prod(T, R_p[2][:, m, :], 2)
        W += B.core[i, k, m] * T
    nrm2 = float(np.sum(W ** 2))
    if eps == 0.0 or nrm2 == 0.0:
        budgets = None
    else:
        budgets = [eps ** 2 * nrm2 / 3.0] * 3
    return _st_hosvd(Qs, W, budgets)


def truncate_dynamic(u_k, p_scaled, eps_in, alpha, eps_min, delta):
    """Dynamic truncation of the iterate update u_k + p_scaled.

    Tries tolerances eps_in, alpha*eps_in, ... (floored at eps_min) until the
    truncated update keeps |<du_t, du>/||du||^2 - 1| <= delta. Returns the
    truncated iterate and the accepted tolerance (reused next iteration).
    """
    w = add(u_k, p_scaled)
    du_norm2 = dot(p_scaled, p_scaled)
    minus_u = scale(u_k, -1.0)
    eps = max(float(eps_in), float(eps_min))
    while True:
        u_t = truncate_rel(w, eps)
        if du_norm2 == 0.0:
            return u_t, eps
        du_t = add(u_t, minus_u)
        ratio = dot(du_t, p_scaled) / du_norm2
        if abs(ratio - 1.0) <= delta:
            return u_t, eps
        if eps <= eps_min:
            return u_t, eps_min
        eps = max(alpha * eps, eps_min)


def from_dense(X, eps):
    """HOSVD compression of a dense 3D array into a Tucker vector."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 3:
        raise ValueError("expected a 3D array")
    nrm2 = float(np.sum(X ** 2))
    if eps == 0.0 or nrm2 == 0.0:
        budgets = None
    else:
        budgets = [eps ** 2 * nrm2 / 3.0] * 3
    Qs = [np.eye(n) for n in X.shape]
    return _st_hosvd(Qs, X, budgets)


def matrix_from_dense(A, row_dims, col_dims, eps):
    """HOSVD compression of a dense matrix with tensor-product index structure."""
    A = np.asarray(A, dtype=float)
    T = A.reshape(tuple(row_dims[::-1]) + tuple(col_dims[::-1]), order='C')
    # reorder to (m1, n1, m2, n2, m3, n3) then flatten pairs
    T = T.transpose(2, 5, 1, 4, 0, 3)
    T = T.reshape(row_dims[0] * col_dims[0], row_dims[1] * col_dims[1],
                  row_dims[2] * col_dims[2])
    v = from_dense(T, eps)
    return TuckerMatrix.from_vector(v, row_dims, col_dims)


def truncate_matrix(B, eps):
    """Relative truncation of a Tucker matrix in the Frobenius norm."""
    v = truncate_rel(B.as_vector(), eps)
    return TuckerMatrix.from_vector(v, B.row_dims, B.col_dims)


def add_matrix(A, B):
    """Sum of Tucker matrices: factor stacks concatenated, cores block-diagonal."""
    if A.row_dims != B.row_dims or A.col_dims != B.col_dims:
        raise ValueError("dimension mismatch in matrix add")
    fac = [np.concatenate([A.factors[d], B.factors[d]], axis=0) for d in range(3)]
    ra, rb = A.core.shape, B.core.shape
    core = np.zeros([ra[d] + rb[d] for d in range(3)])
    core[:ra[0], :ra[1], :ra[2]] = A.core
    core[ra[0]:, ra[1]:, ra[2]:] = B.core
    return TuckerMatrix(fac, core)


def save_vector_txt(v, path_or_file):
    """Plain-text dump: dims, ranks, then row-major factors and core."""
    close = False
    if isinstance(path_or_file, (str, bytes)):
        f = open(path_or_file, 'w')
        close = True
    else:
        f = path_or_file
    try:
        f.write("tucker-vector 1\n")
        f.write("dims %d %d %d\n" % v.dims)
        f.write("ranks %d %d %d\n" % v.ranks)
        for d in range(3):
            f.write("factor %d\n" % d)
            np.savetxt(f, v.factors[d].reshape(1, -1))
        f.write("core\n")
        np.savetxt(f, v.core.reshape(1, -1))
    finally:
        if close:
            f.close()


def load_vector_txt(path_or_file):
    close = False
    if isinstance(path_or_file, (str, bytes)):
        f = open(path_or_file)
        close = True
    else:
        f = path_or_file
    try:
        header = f.readline().split()
        if header[:1] != ['tucker-vector']:
            raise ValueError("not a tucker-vector dump")
        dims = tuple(int(t) for t in f.readline().split()[1:])
        ranks = tuple(int(t) for t in f.readline().split()[1:])
        factors = []
        for d in range(3):
            f.readline()
            row = np.array(f.readline().split(), dtype=float)
            factors.append(row.reshape(dims[d], ranks[d]))
        f.readline()
        core = np.array(f.readline().split(), dtype=float).reshape(ranks)
        return TuckerVector(factors, core)
    finally:
        if close:
            f.close()
