"""
Dense operator algebra for VEC models.

Conventions
-----------
* ``vec`` stacks columns (Fortran order).
* ``vech`` walks the lower triangle column by column:
  (0,0), (1,0), ..., (n-1,0), (1,1), (2,1), ..., (n-1,n-1).
* An n^2 x n^2 matrix is addressed as an n x n grid of n x n blocks; entry
  ``(i, j)`` of block ``(k, l)`` sits at global position ``(k*n + i, l*n + j)``.

Symmetric matrices, half-vectors and block matrices are plain ``ndarray``
objects; functions validate shapes on entry.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from vecgarch.errors import DimensionError, InvalidInputError

__all__ = [
    "SigmaIndex",
    "sigma_index",
    "half_dim",
    "full_dim",
    "vec",
    "mat",
    "vech",
    "math",
    "math_adj",
    "vech_adj",
    "diag_part",
    "operator_norm_estimate",
    "sigma",
    "sigma_matrix",
    "bullet",
    "sigma_adj",
    "sigma_inv",
    "is_nsymmetric",
    "project_symmetric",
    "project_nsymmetric",
    "commutation_matrix",
    "frobenius",
]


def half_dim(n):
    """N = n(n+1)/2."""
    return n * (n + 1) // 2


def full_dim(N):
    """Inverse of :func:`half_dim`; raises if N is not a triangular number."""
    N = int(N)
    n = int(round((np.sqrt(8 * N + 1) - 1) / 2))
    if n < 1 or half_dim(n) != N:
        raise DimensionError(f"{N} is not a triangular number n(n+1)/2")
    return n


@dataclass(frozen=True)
class SigmaIndex:
    """Position tables of the lower-triangle enumeration for a given n.

    Attributes
    ----------
    n : int
    rows, cols : ndarray
        ``rows[p], cols[p]`` is the pair (i, j), i >= j, stored at slot p.
    tilde : ndarray
        n x n table with ``tilde[i, j] = tilde[j, i]`` = slot of the pair.
    is_diag : ndarray
        Boolean mask over slots, true where i == j.
    """

    n: int
    rows: np.ndarray
    cols: np.ndarray
    tilde: np.ndarray
    is_diag: np.ndarray

    @property
    def N(self):
        return len(self.rows)


@lru_cache(maxsize=None)
def sigma_index(n):
    if n < 1:
        raise DimensionError("dimension must be >= 1")
    upper_r, upper_c = np.triu_indices(n)
    # column-major lower triangle == row-major upper triangle of the transpose
    rows, cols = upper_c, upper_r
    tilde = np.empty((n, n), dtype=np.intp)
    tilde[rows, cols] = np.arange(len(rows))
    tilde[cols, rows] = np.arange(len(rows))
    for arr in (rows, cols, tilde):
        arr.setflags(write=False)
    is_diag = rows == cols
    is_diag.setflags(write=False)
    return SigmaIndex(n, rows, cols, tilde, is_diag)


def frobenius(a, b):
    """Frobenius pairing trace(a b^T)."""
    return float(np.sum(np.asarray(a) * np.asarray(b)))


def _square(a, name="matrix"):
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {a.shape}")
    return a


def vec(a):
    a = np.asarray(a, dtype=float)
    return a.reshape(-1, order="F")


def mat(v, n=None):
    v = np.asarray(v, dtype=float).ravel()
    if n is None:
        n = int(round(np.sqrt(v.size)))
    if n * n != v.size:
        raise DimensionError(f"vector of length {v.size} is not n^2 for n={n}")
    return v.reshape((n, n), order="F")


def vech(a):
    a = _square(a)
    idx = sigma_index(a.shape[0])
    return a[idx.rows, idx.cols].copy()


def math(m):
    m = np.asarray(m, dtype=float).ravel()
    n = full_dim(m.size)
    return m[sigma_index(n).tilde]


def diag_part(a):
    return np.diag(np.diag(a))


def math_adj(a):
    """Adjoint of ``math``: vech with the off-diagonal entries doubled."""
    a = _square(a)
    idx = sigma_index(a.shape[0])
    out = 2.0 * a[idx.rows, idx.cols]
    out[idx.is_diag] *= 0.5
    return out


def vech_adj(m):
    """Adjoint of ``vech``: math with the off-diagonal entries halved."""
    h = math(m)
    return 0.5 * (h + diag_part(h))


def _sym_basis(n):
    """Orthonormal basis of S_n (Frobenius), as an (N, n, n) stack."""
    idx = sigma_index(n)
    basis = np.zeros((idx.N, n, n))
    for p, (i, j) in enumerate(zip(idx.rows, idx.cols)):
        if i == j:
            basis[p, i, i] = 1.0
        else:
            basis[p, i, j] = basis[p, j, i] = 1.0 / np.sqrt(2.0)
    return basis


def operator_norm_estimate(op_tag, n=4, iters=200, seed=0):
    """Power-iteration estimate of an operator norm.

    The norms are taken with respect to the Frobenius norm on S_n and the
    Euclidean norm on R^N.  ``op_tag`` is one of ``"vech"``, ``"math"``,
    ``"vech*"``, ``"math*"``, ``"diag"``.  The iteration runs on ``T* T``.
    """
    N = half_dim(n)
    ops = {
        # (domain is S_n?, T, T*)
        "vech": (True, vech, vech_adj),
        "math": (False, math, math_adj),
        "vech*": (False, vech_adj, vech),
        "math*": (True, math_adj, math),
        "diag": (True, diag_part, diag_part),
    }
    if op_tag not in ops:
        raise InvalidInputError(f"unknown operator {op_tag!r}")
    on_sym, fwd, adj = ops[op_tag]
    rng = np.random.default_rng(seed)
    if on_sym:
        x = rng.standard_normal((n, n))
        x = x + x.T
    else:
        x = rng.standard_normal(N)
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(iters):
        y = adj(fwd(x))
        lam = np.linalg.norm(y)
        if lam == 0.0:
            return 0.0
        x = y / lam
    return float(np.sqrt(lam))


def _blocks4(b, n):
    """View an n^2 x n^2 matrix as b4[k, i, l, j] = (B_kl)_ij."""
    return b.reshape(n, n, n, n)


def sigma(a):
    """The n-symmetric block matrix Sigma(A) of an N x N matrix A."""
    a = _square(a, "A")
    n = full_dim(a.shape[0])
    idx = sigma_index(n)
    st = idx.tilde
    weight = np.where(np.eye(n, dtype=bool), 1.0, 0.5)
    s4 = a[st[:, None, :, None], st[None, :, None, :]] * weight[None, :, None, :]
    return s4.reshape(n * n, n * n)


@lru_cache(maxsize=16)
def sigma_matrix(n):
    """Matrix of the linear map vec(A) -> vec(Sigma(A)), shape (n^4, N^2).

    Column ``p + q*N`` holds ``vec(Sigma(E_pq))``; read-only, cached.
    """
    N = half_dim(n)
    out = np.zeros((n ** 4, N * N))
    for q in range(N):
        for p in range(N):
            e = np.zeros((N, N))
            e[p, q] = 1.0
            out[:, p + q * N] = vec(sigma(e))
    out.setflags(write=False)
    return out


def bullet(s, h):
    """(S . H)_kl = trace(S_kl H)."""
    s = _square(s, "S")
    h = _square(h, "H")
    n = h.shape[0]
    if s.shape[0] != n * n:
        raise DimensionError(f"block matrix of side {s.shape[0]} does not match H of side {n}")
    return np.einsum("kilj,ji->kl", _blocks4(s, n), h)


def _block_side(b):
    b = _square(b)
    n = int(round(np.sqrt(b.shape[0])))
    if n * n != b.shape[0]:
        raise DimensionError(f"side {b.shape[0]} is not a perfect square")
    return b, n


def project_symmetric(a):
    a = _square(a)
    return 0.5 * (a + a.T)


def project_nsymmetric(a):
    a, n = _block_side(a)
    a4 = _blocks4(a, n)
    p4 = 0.25 * (
        a4
        + a4.transpose(0, 3, 2, 1)  # inner transpose
        + a4.transpose(2, 1, 0, 3)  # block swap
        + a4.transpose(2, 3, 0, 1)  # both
    )
    return p4.reshape(n * n, n * n)


def is_nsymmetric(s, rtol=1e-10):
    s, _ = _block_side(s)
    scale = max(np.linalg.norm(s), 1.0)
    return np.linalg.norm(s - project_nsymmetric(s)) <= rtol * scale


def _pick(b4, idx):
    """B[p, q] = (block sigma^-1(p))_{sigma^-1(q)}."""
    return b4[idx.rows[:, None], idx.rows[None, :], idx.cols[:, None], idx.cols[None, :]]


def sigma_adj(b):
    """Adjoint of Sigma with respect to the Frobenius pairings."""
    b, n = _block_side(b)
    idx = sigma_index(n)
    bp = _pick(_blocks4(project_nsymmetric(b), n), idx)
    # 2B - B~ : rows whose slot is off-diagonal count twice
    return np.where(idx.is_diag[:, None], 1.0, 2.0) * bp


def sigma_inv(s, rtol=1e-10):
    """Inverse of Sigma restricted to n-symmetric matrices."""
    s, n = _block_side(s)
    if not is_nsymmetric(s, rtol):
        raise InvalidInputError("sigma_inv needs an n-symmetric matrix")
    idx = sigma_index(n)
    bp = _pick(_blocks4(s, n), idx)
    return bp * np.where(idx.is_diag[None, :], 1.0, 2.0)


@lru_cache(maxsize=32)
def _commutation(N):
    k = np.zeros((N * N, N * N))
    i, j = np.meshgrid(np.arange(N), np.arange(N), indexing="ij")
    k[(i + j * N).ravel(), (j + i * N).ravel()] = 1.0
    k.setflags(write=False)
    return k


def commutation_matrix(N):
    """K with K vec(A) = vec(A^T) for N x N matrices."""
    if N < 1:
        raise DimensionError("N must be >= 1")
    return _commutation(int(N)).copy()
