"""Linear algebra primitives for the Q-geometry.

A :class:`QSpace` wraps a symmetric positive definite matrix ``Q`` and its
Cholesky factor and provides the inner product ``<x, y>_Q = x^T Q y``, the
induced norm and the quadratic energy ``H(y) = y^T Q y / 2``.  The module
also holds the small dense/banded solvers used inside the Krylov methods.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from math import factorial
from typing import Callable

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.linalg.lapack import get_lapack_funcs

from .errors import InvalidInput, SingularMatrix

Action = Callable[[np.ndarray], np.ndarray]

#: Relative pivot threshold below which an LU factorization is declared singular.
PIVOT_RTOL = 1e-14


def as_action(A) -> Action:
    """Return ``x -> A @ x`` for a matrix, or ``A`` itself if already callable."""
    if callable(A):
        return A
    return lambda x: A @ x


def _check_dim(n: int, *vectors: np.ndarray) -> None:
    for v in vectors:
        if v.ndim != 1 or v.shape[0] != n:
            raise InvalidInput(f"expected vector of length {n}, got shape {v.shape}")


def _bandwidth(M) -> int:
    M = sp.coo_matrix(M)
    if M.nnz == 0:
        return 0
    return int(np.max(np.abs(M.row - M.col)))


class QSpace:
    """Euclidean space equipped with the inner product induced by an SPD matrix.

    ``Q`` may be a dense array or a scipy sparse matrix.  Sparse input is
    factorized in band storage, so banded problems (e.g. long oscillator
    chains) stay cheap.  The space is immutable after construction.
    """

    def __init__(self, Q, *, sym_rtol: float = 1e-14):
        if sp.issparse(Q):
            Q = sp.csr_matrix(Q, dtype=float)
            asym = abs(Q - Q.T).max() if Q.nnz else 0.0
            scale = abs(Q).max() if Q.nnz else 1.0
        else:
            Q = np.array(Q, dtype=float)
            if Q.ndim != 2:
                raise InvalidInput("Q must be a square matrix")
            asym = np.max(np.abs(Q - Q.T)) if Q.size else 0.0
            scale = np.max(np.abs(Q)) if Q.size else 1.0
        if Q.shape[0] != Q.shape[1]:
            raise InvalidInput(f"Q must be square, got shape {Q.shape}")
        if asym > sym_rtol * scale:
            raise InvalidInput(f"Q is not symmetric (max asymmetry {asym:.3e})")
        # exact symmetry of the stored matrix
        Q = (Q + Q.T) * 0.5
        self.n = Q.shape[0]
        self.Q = Q
        try:
            if sp.issparse(Q):
                self.chol = self._banded_cholesky(Q)
            else:
                self.chol = scipy.linalg.cholesky(Q, lower=True)
        except np.linalg.LinAlgError as exc:
            raise InvalidInput("Q is not positive definite") from exc

    @staticmethod
    def _banded_cholesky(Q) -> sp.csr_matrix:
        n = Q.shape[0]
        bw = _bandwidth(Q)
        ab = np.zeros((bw + 1, n))
        for d in range(bw + 1):
            # lower storage: ab[d, j] = Q[j + d, j]
            ab[d, : n - d] = Q.diagonal(-d)
        cb = scipy.linalg.cholesky_banded(ab, lower=True)
        diags = [cb[d, : n - d] for d in range(bw + 1)]
        return sp.diags(diags, [-d for d in range(bw + 1)], shape=(n, n), format="csr")

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self.Q)

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self.Q @ x

    def inner(self, x: np.ndarray, y: np.ndarray):
        return q_inner(self, x, y)

    def norm(self, x: np.ndarray) -> float:
        return q_norm(self, x)

    def energy(self, y: np.ndarray) -> float:
        return energy(self, y)

    def dense_Q(self) -> np.ndarray:
        return self.Q.toarray() if self.is_sparse else np.array(self.Q)

    def dense_chol(self) -> np.ndarray:
        return self.chol.toarray() if sp.issparse(self.chol) else np.array(self.chol)

    def operator_norm(self, M: np.ndarray) -> float:
        """Operator norm of a dense matrix ``M`` induced by the Q-norm.

        Computed as the spectral norm of ``L^T M L^{-T}`` with ``Q = L L^T``.
        """
        L = self.dense_chol()
        T = L.T @ np.asarray(M)
        T = scipy.linalg.solve_triangular(L, T.T, lower=True).T
        return float(np.linalg.norm(T, 2))

    def __repr__(self) -> str:
        kind = "sparse" if self.is_sparse else "dense"
        return f"QSpace(n={self.n}, {kind})"


def q_inner(space: QSpace, x: np.ndarray, y: np.ndarray):
    """Return ``x^T Q y`` (complex input is not conjugated)."""
    x = np.asarray(x)
    y = np.asarray(y)
    _check_dim(space.n, x, y)
    return x @ (space.Q @ y)


def q_norm(space: QSpace, x: np.ndarray) -> float:
    """Q-norm of ``x``, evaluated as ``||L^T x||_2`` to avoid cancellation."""
    x = np.asarray(x)
    _check_dim(space.n, x)
    return float(np.linalg.norm(space.chol.T @ x))


def energy(space: QSpace, y: np.ndarray) -> float:
    """Quadratic Hamiltonian ``y^T Q y / 2``."""
    return 0.5 * float(q_inner(space, y, y))


@dataclass
class BandedMatrix:
    """Square matrix stored by diagonals.

    ``data[bw + i - j, j] == M[i, j]`` for ``|i - j| <= bw`` (the layout used by
    LAPACK and :func:`scipy.linalg.solve_banded` with ``l = u = bw``).  Entries
    outside the band are exactly zero.
    """

    data: np.ndarray
    bw: int

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 2 or self.data.shape[0] != 2 * self.bw + 1:
            raise InvalidInput(
                f"band data must have {2 * self.bw + 1} rows, got shape {self.data.shape}"
            )

    @property
    def order(self) -> int:
        return self.data.shape[1]

    @property
    def dtype(self):
        return self.data.dtype

    @classmethod
    def from_dense(cls, M: np.ndarray, bw: int, *, check: bool = True) -> "BandedMatrix":
        M = np.asarray(M)
        k = M.shape[0]
        data = np.zeros((2 * bw + 1, k), dtype=M.dtype)
        for d in range(-bw, bw + 1):
            if abs(d) >= k:
                continue
            diag = np.diagonal(M, d)
            # superdiagonal d sits in row bw - d, starting at column d
            if d >= 0:
                data[bw - d, d:] = diag
            else:
                data[bw - d, : k + d] = diag
        out = cls(data, bw)
        if check and not np.array_equal(out.to_dense(), M):
            raise InvalidInput(f"matrix has nonzeros outside semibandwidth {bw}")
        return out

    @classmethod
    def from_sparse(cls, M, bw: int | None = None) -> "BandedMatrix":
        M = sp.csr_matrix(M)
        if bw is None:
            bw = _bandwidth(M)
        elif _bandwidth(M) > bw:
            raise InvalidInput(f"matrix has nonzeros outside semibandwidth {bw}")
        k = M.shape[0]
        data = np.zeros((2 * bw + 1, k), dtype=M.dtype)
        for d in range(-bw, bw + 1):
            if abs(d) >= k:
                continue
            diag = M.diagonal(d)
            if d >= 0:
                data[bw - d, d:] = diag
            else:
                data[bw - d, : k + d] = diag
        return cls(data, bw)

    def entry(self, i: int, j: int):
        if abs(i - j) > self.bw:
            return self.data.dtype.type(0)
        return self.data[self.bw + i - j, j]

    def to_dense(self) -> np.ndarray:
        k = self.order
        M = np.zeros((k, k), dtype=self.data.dtype)
        for d in range(-self.bw, self.bw + 1):
            if abs(d) >= k:
                continue
            row = self.data[self.bw - d]
            M += np.diag(row[d:] if d >= 0 else row[: k + d], d)
        return M

    def matvec(self, x: np.ndarray) -> np.ndarray:
        k = self.order
        dtype = np.result_type(self.data, x)
        y = np.zeros(k, dtype=dtype)
        for d in range(-self.bw, self.bw + 1):
            if abs(d) >= k:
                continue
            row = self.data[self.bw - d]
            if d >= 0:
                y[: k - d] += row[d:] * x[d:]
            else:
                y[-d:] += row[: k + d] * x[: k + d]
        return y


def banded_solve(M: BandedMatrix, b: np.ndarray) -> np.ndarray:
    """Solve ``M x = b`` by banded LU with partial pivoting (LAPACK ``gbtrf``).

    Works for real and complex scalars; mixed input is promoted.  Raises
    :class:`SingularMatrix` if a pivot of ``U`` is at most ``1e-14`` times the
    largest entry of ``M``.
    """
    b = np.asarray(b)
    k = M.order
    if b.shape != (k,):
        raise InvalidInput(f"right-hand side must have shape ({k},), got {b.shape}")
    dtype = np.result_type(M.data, b, np.float64)
    bw = M.bw
    # gbtrf needs bw extra leading rows for fill-in from row interchanges
    ab = np.zeros((3 * bw + 1, k), dtype=dtype)
    ab[bw:] = M.data
    rhs = b.astype(dtype)
    gbtrf, gbtrs = get_lapack_funcs(("gbtrf", "gbtrs"), (ab, rhs))
    lu, piv, info = gbtrf(ab, bw, bw)
    scale = np.max(np.abs(M.data)) if M.data.size else 0.0
    pivots = np.abs(lu[2 * bw])
    if info > 0 or scale == 0.0 or np.min(pivots) <= PIVOT_RTOL * scale:
        raise SingularMatrix(f"banded LU pivot below {PIVOT_RTOL:g} * max|entry|")
    x, info = gbtrs(lu, bw, bw, rhs, piv)
    if info != 0:
        raise SingularMatrix(f"gbtrs failed with info={info}")
    return x


def dense_solve(M: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Dense LU solve with the same singularity threshold as :func:`banded_solve`."""
    M = np.asarray(M)
    scale = np.max(np.abs(M)) if M.size else 0.0
    with warnings.catch_warnings():
        # exact zero pivots are reported below as SingularMatrix
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(M, check_finite=True)
    if scale == 0.0 or np.min(np.abs(np.diag(lu))) <= PIVOT_RTOL * scale:
        raise SingularMatrix(f"dense LU pivot below {PIVOT_RTOL:g} * max|entry|")
    return scipy.linalg.lu_solve((lu, piv), b)


# degree-8 diagonal Pade kernel; error ~2e-19 for ||X||_1 <= 1
_EXPM_DEGREE = 8
_EXPM_COEFFS = [
    factorial(_EXPM_DEGREE) * factorial(2 * _EXPM_DEGREE - j)
    / (factorial(2 * _EXPM_DEGREE) * factorial(j) * factorial(_EXPM_DEGREE - j))
    for j in range(_EXPM_DEGREE + 1)
]


def small_skew_expm(H: np.ndarray) -> np.ndarray:
    """Exponential of a small skew-symmetric matrix.

    Scaling and squaring around a degree-8 diagonal Pade approximant.  The
    Pade approximant of a skew matrix is exactly orthogonal, so the result is
    orthogonal up to rounding accumulated in the squarings.
    """
    H = np.asarray(H, dtype=float)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise InvalidInput("expected a square matrix")
    k = H.shape[0]
    hmax = np.max(np.abs(H)) if H.size else 0.0
    if hmax == 0.0:
        return np.eye(k)
    if np.max(np.abs(H + H.T)) > 1e-13 * hmax:
        raise InvalidInput("matrix is not skew-symmetric")
    norm1 = np.linalg.norm(H, 1)
    squarings = max(0, int(np.ceil(np.log2(norm1)))) if norm1 > 1.0 else 0
    X = H / 2.0**squarings
    I = np.eye(k)
    X2 = X @ X
    even = np.zeros((k, k))
    odd = np.zeros((k, k))
    # even and odd parts of the numerator, in powers of X^2
    P = I
    for j in range(0, _EXPM_DEGREE + 1, 2):
        even += _EXPM_COEFFS[j] * P
        if j + 1 <= _EXPM_DEGREE:
            odd += _EXPM_COEFFS[j + 1] * P
        P = P @ X2
    odd = X @ odd
    E = np.linalg.solve(even - odd, even + odd)
    for _ in range(squarings):
        E = E @ E
    return E
