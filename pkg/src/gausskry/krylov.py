"""Q-Arnoldi process and Krylov approximations of Gauss collocation steps.

For ``A = h J Q`` (skew-adjoint in the Q-inner product) the Q-Arnoldi
process produces a Q-orthonormal basis ``V_k`` of ``K_k(A, y0)`` and a
skew-symmetric tridiagonal ``H_k``, and

    x_k = V_k R_s(H_k) e_1 ||y0||_Q

has ``||x_k||_Q == ||y0||_Q`` for every ``k``.  Two evaluations of ``x_k``
are provided (numerator/denominator with one banded solve, and partial
fractions with shifted tridiagonal solves), plus the Arnoldi approximation
of ``exp(A) y0`` and a plain GMRES baseline on the assembled Pade system.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .core import BandedMatrix, QSpace, as_action, banded_solve, small_skew_expm
from .errors import BreakdownError, InvalidInput
from .pade import PadeData
from .reports import IterationTrace, LinearSolveReport

BREAKDOWN_RTOL = 1e-14


def pade_poly_apply(coeffs, act, x: np.ndarray, sign: int = 1) -> np.ndarray:
    """``D(sign * A) x`` by Horner's scheme on the action of ``A``."""
    y = coeffs[-1] * x
    for c in coeffs[-2::-1]:
        y = sign * act(y) + c * x
    return y


def assemble_pade_matrix(A, p: PadeData, sign: int = 1) -> sp.csr_matrix:
    """Assemble ``D_s(sign * A)`` as a sparse matrix.

    The result has bandwidth at most ``s`` times that of ``A``.
    """
    if sign not in (1, -1):
        raise InvalidInput("sign must be +1 or -1")
    A = sp.csr_matrix(A)
    n = A.shape[0]
    if A.shape != (n, n):
        raise InvalidInput("A must be square")
    I = sp.identity(n, format="csr")
    M = p.coeffs[-1] * I
    for c in p.coeffs[-2::-1]:
        M = (sign * A) @ M + c * I
    M = sp.csr_matrix(M)
    M.eliminate_zeros()
    return M


@dataclass
class ArnoldiState:
    """State of a (Q-)Arnoldi process after ``k`` steps.

    In skew mode only the subdiagonal ``beta[j] = h_{j+2,j+1}`` is stored and
    ``H_k`` has ``beta`` below and ``-beta`` above the (zero) diagonal.  With
    ``keep_basis=False`` only the last two basis vectors are retained.
    """

    space: QSpace
    v_next: np.ndarray | None
    h_next: float
    k: int = 0
    beta: list = field(default_factory=list)
    skew: bool = True
    reorth: bool = False
    keep_basis: bool = True
    breakdown: bool = False
    H_full: np.ndarray | None = None
    _V: np.ndarray | None = None
    _last: list = field(default_factory=list)

    @property
    def V(self) -> np.ndarray:
        if not self.keep_basis:
            raise AttributeError("basis was not kept (keep_basis=False)")
        return self._V[:, : self.k]

    @property
    def last_vectors(self) -> list:
        """``[v_{k-1}, v_k]`` (or fewer at the start)."""
        if self.keep_basis:
            return [self._V[:, j] for j in range(max(0, self.k - 2), self.k)]
        return list(self._last)

    @property
    def Hk(self) -> np.ndarray:
        """Dense ``k x k`` projected matrix."""
        if not self.skew:
            return self.H_full[: self.k, : self.k].copy()
        return tridiagonal_skew(self.beta[: self.k - 1], dense=True)

    def Hk_sparse(self) -> sp.csr_matrix:
        if not self.skew:
            return sp.csr_matrix(self.Hk)
        return tridiagonal_skew(self.beta[: self.k - 1])

    def _store(self, v: np.ndarray) -> None:
        if self.keep_basis:
            if self._V is None:
                self._V = np.empty((v.shape[0], 16), dtype=v.dtype)
            if self.k >= self._V.shape[1]:
                grown = np.empty((v.shape[0], 2 * self._V.shape[1]), dtype=v.dtype)
                grown[:, : self.k] = self._V[:, : self.k]
                self._V = grown
            self._V[:, self.k] = v
        else:
            self._last = (self._last + [v])[-2:]
        self.k += 1


def tridiagonal_skew(beta, dense: bool = False):
    """Skew-symmetric tridiagonal matrix with subdiagonal ``beta``."""
    beta = np.asarray(beta, dtype=float)
    k = beta.shape[0] + 1
    if dense:
        return np.diag(beta, -1) - np.diag(beta, 1)
    return sp.diags([beta, -beta], [-1, 1], shape=(k, k), format="csr")


def q_arnoldi_start(space: QSpace, v: np.ndarray, *, skew: bool = True, reorth: bool = False,
                    keep_basis: bool = True) -> ArnoldiState:
    """Initial state with ``v_1 = v / ||v||_Q`` pending and ``k = 0``."""
    v = np.asarray(v, dtype=float)
    nv = space.norm(v)
    if nv == 0.0:
        raise InvalidInput("starting vector must be nonzero")
    state = ArnoldiState(space=space, v_next=v / nv, h_next=nv, skew=skew, reorth=reorth,
                         keep_basis=keep_basis or not skew)
    if not skew:
        state.H_full = np.zeros((space.n + 1, space.n))
    return state


def q_arnoldi_extend(state: ArnoldiState, A_apply, *,
                     breakdown_rtol: float = BREAKDOWN_RTOL) -> ArnoldiState:
    """Advance the Q-Arnoldi process by one step (in place).

    In skew mode this is the three-term (Lanczos) recurrence: the coefficient
    above the diagonal is the negated previous subdiagonal entry and all other
    coefficients vanish, so only ``h_{k+1,k} = ||w_k||_Q`` is new.  Breakdown
    is flagged when ``||w_k||_Q <= breakdown_rtol * ||A v_k||_Q``.
    """
    if state.breakdown:
        raise BreakdownError("cannot extend a Krylov basis after breakdown")
    if state.v_next is None:
        raise BreakdownError("no pending basis vector")
    space = state.space
    act = as_action(A_apply)
    v = state.v_next
    prev = state.last_vectors
    state._store(v)
    k = state.k

    w = act(v)
    scale = space.norm(w)
    if state.skew:
        if k > 1:
            w = w + state.beta[k - 2] * prev[-1]
    else:
        V = state.V
        for i in range(k):
            hik = space.inner(V[:, i], w)
            state.H_full[i, k - 1] = hik
            w = w - hik * V[:, i]
    if state.reorth:
        V = state.V
        for i in range(k):
            w = w - space.inner(V[:, i], w) * V[:, i]

    h = space.norm(w)
    state.h_next = h
    if h <= breakdown_rtol * scale:
        state.breakdown = True
        state.v_next = None
    else:
        state.v_next = w / h
    if state.skew:
        state.beta.append(h)
    else:
        state.H_full[k, k - 1] = h
    return state


def _check_start(space: QSpace, y0: np.ndarray, k_max: int | None) -> tuple[np.ndarray, int]:
    y0 = np.asarray(y0, dtype=float)
    if y0.shape != (space.n,):
        raise InvalidInput(f"expected vector of length {space.n}, got shape {y0.shape}")
    if not np.any(y0):
        raise InvalidInput("starting vector must be nonzero")
    k_max = space.n if k_max is None else int(k_max)
    if k_max < 1:
        raise InvalidInput("k_max must be positive")
    return y0, k_max


def _qaa(space, A_apply, y0, p: PadeData, k_max, rtol, variant, *, reorth=False, lean=False):
    y0, k_max = _check_start(space, y0, k_max)
    act = as_action(A_apply)
    t0 = time.perf_counter_ns()
    norm0 = space.norm(y0)
    rhs = pade_poly_apply(p.coeffs, act, y0, +1)
    state = q_arnoldi_start(space, y0, reorth=reorth, keep_basis=not lean)
    trace = IterationTrace()
    solves = 0
    converged = False
    e1 = None
    # short-recurrence bookkeeping for the lean s = 1 variant
    u_prev = l_z = None
    p_dir = acc = None

    while True:
        q_arnoldi_extend(state, act)
        k = state.k
        if variant == "v1":
            H = state.Hk_sparse()
            e1 = np.zeros(k)
            e1[0] = 1.0
            eta = pade_poly_apply(p.coeffs, lambda x: H @ x, e1, +1)
            Dk = BandedMatrix.from_sparse(_poly_matrix(p.coeffs, H, -1), bw=p.s)
            xi = banded_solve(Dk, eta)
            solves += 1
            x = norm0 * (state.V @ xi)
        elif lean:
            # LU of H_k - 2I without pivoting: diagonal stays <= -2
            v_k = state.last_vectors[-1]
            if k == 1:
                u = -2.0
                z = 1.0
                p_dir = v_k / u
                acc = z * p_dir
            else:
                b = state.beta[k - 2]
                lk = b / u_prev
                u = -2.0 + lk * b
                z = -lk * l_z
                p_dir = (v_k + b * p_dir) / u
                acc = acc + z * p_dir
            u_prev, l_z = u, z
            solves += 1
            x = -y0 - 4.0 * norm0 * acc
        else:
            H = state.Hk_sparse()
            e1 = np.zeros(k)
            e1[0] = 1.0
            comb = np.zeros(k)
            for tau, omega, factor in p.representatives():
                shift = tau.real if tau.imag == 0 else tau
                T = BandedMatrix.from_sparse(H - shift * sp.identity(k), bw=1)
                zeta = banded_solve(T, e1)
                solves += 1
                comb += factor * np.real(omega * zeta)
            x = p.sign * y0 + norm0 * (state.V @ comb)

        res = float(np.linalg.norm(pade_poly_apply(p.coeffs, act, x, -1) - rhs))
        dev = abs(1.0 - space.norm(x) / norm0)
        trace.append(k, res, dev, time.perf_counter_ns() - t0)
        if res <= rtol or state.breakdown:
            converged = True
            break
        if k >= k_max:
            break

    return LinearSolveReport(
        iterate=x, residual_euclid=res, energy_dev=dev, k=k, converged=converged,
        trace=trace, method=f"qaa_{variant}", solves=solves, breakdown=state.breakdown,
    )


def _poly_matrix(coeffs, H, sign):
    k = H.shape[0]
    I = sp.identity(k, format="csr")
    M = coeffs[-1] * I
    for c in coeffs[-2::-1]:
        M = (sign * H) @ M + c * I
    return M


def qaa_v1(space: QSpace, A_apply, y0: np.ndarray, p: PadeData, k_max: int | None = None,
           rtol: float = 0.0, *, reorth: bool = False) -> LinearSolveReport:
    """Q-Arnoldi approximation of ``R_s(A) y0``, numerator/denominator form.

    At each ``k``: ``eta = D_s(H_k) e_1``, ``D_k = D_s(-H_k)`` (semibandwidth
    ``s``), ``D_k xi = eta`` by banded LU and ``x_k = ||y0||_Q V_k xi``.

    Stops once ``||D_s(-A) x_k - D_s(A) y0||_2 <= rtol``, on breakdown (the
    iterate is then exact) or at ``k_max`` (default ``n``) with
    ``converged=False``.
    """
    return _qaa(space, A_apply, y0, p, k_max, rtol, "v1", reorth=reorth)


def qaa_v2(space: QSpace, A_apply, y0: np.ndarray, p: PadeData, k_max: int | None = None,
           rtol: float = 0.0, *, reorth: bool = False, lean: bool = False) -> LinearSolveReport:
    """Q-Arnoldi approximation of ``R_s(A) y0``, partial fraction form.

    ``x_k = (-1)^s y0 + ||y0||_Q V_k sum_j w_j zeta_j`` with
    ``(H_k - t_j I) zeta_j = e_1``.  Each conjugate pole pair costs one complex
    tridiagonal solve, so ``ceil(s/2)`` solves are done per step.

    ``lean=True`` (only for ``s == 1``) updates the iterate by a two-term
    recurrence from an incremental LU of ``H_k - 2I`` and keeps just the last
    two basis vectors instead of all of ``V_k``.
    """
    if lean and p.s != 1:
        raise InvalidInput("the short-recurrence mode is only available for s = 1")
    return _qaa(space, A_apply, y0, p, k_max, rtol, "v2", reorth=reorth, lean=lean)


def exp_arnoldi(space: QSpace, A_apply, y0: np.ndarray, k_max: int | None = None,
                k_fixed: int | None = None, rtol: float | None = None) -> LinearSolveReport:
    """Arnoldi approximation ``x_k = V_k exp(H_k) e_1 ||y0||_Q`` of ``exp(A) y0``.

    There is no natural residual; the trace records the a-posteriori estimate
    ``||y0||_Q h_{k+1,k} |e_k^T exp(H_k) e_1|``.  The run ends at ``k_fixed``,
    on breakdown, or (if ``rtol`` is given) once the estimate drops below it.
    """
    y0, k_max = _check_start(space, y0, k_max)
    if k_fixed is not None:
        k_max = min(k_max, int(k_fixed))
    act = as_action(A_apply)
    t0 = time.perf_counter_ns()
    norm0 = space.norm(y0)
    state = q_arnoldi_start(space, y0)
    trace = IterationTrace()
    converged = False
    while True:
        q_arnoldi_extend(state, act)
        k = state.k
        E = small_skew_expm(state.Hk)
        col = E[:, 0]
        x = norm0 * (state.V @ col)
        est = norm0 * state.h_next * abs(col[-1])
        dev = abs(1.0 - space.norm(x) / norm0)
        trace.append(k, est, dev, time.perf_counter_ns() - t0)
        if state.breakdown or (rtol is not None and k_fixed is None and est <= rtol):
            converged = True
            break
        if k >= k_max:
            converged = k_fixed is not None and k >= k_fixed
            break
    return LinearSolveReport(iterate=x, residual_euclid=est, energy_dev=dev, k=k,
                             converged=converged, trace=trace, method="exp_arnoldi",
                             breakdown=state.breakdown)


def gmres_baseline(space: QSpace, M_apply, b: np.ndarray, k_max: int | None = None,
                   rtol: float = 0.0, *, energy_ref: float | None = None) -> LinearSolveReport:
    """Non-restarted GMRES (Euclidean inner product) for ``M x = b`` from ``x_0 = 0``.

    Arnoldi with modified Gram-Schmidt, least squares by Givens rotations.
    ``energy_ref`` is the Q-norm the exact solution is known to have (for a
    Gauss step, ``||y0||_Q``); energy deviations are measured against it.
    """
    b, k_max = _check_start(space, b, k_max)
    act = as_action(M_apply)
    t0 = time.perf_counter_ns()
    n = b.shape[0]
    if energy_ref is None:
        energy_ref = space.norm(b)
    beta0 = float(np.linalg.norm(b))
    V = np.zeros((n, min(k_max, n) + 1))
    H = np.zeros((min(k_max, n) + 1, min(k_max, n)))
    cs = np.zeros(H.shape[1])
    sn = np.zeros(H.shape[1])
    g = np.zeros(H.shape[0])
    g[0] = beta0
    V[:, 0] = b / beta0
    trace = IterationTrace()
    converged = False
    k = 0
    x = np.zeros(n)
    while True:
        w = act(V[:, k])
        scale = np.linalg.norm(w)
        for i in range(k + 1):
            H[i, k] = V[:, i] @ w
            w = w - H[i, k] * V[:, i]
        H[k + 1, k] = np.linalg.norm(w)
        lucky = H[k + 1, k] <= BREAKDOWN_RTOL * scale
        if not lucky:
            V[:, k + 1] = w / H[k + 1, k]
        for i in range(k):
            a, c = H[i, k], H[i + 1, k]
            H[i, k] = cs[i] * a + sn[i] * c
            H[i + 1, k] = -sn[i] * a + cs[i] * c
        r = np.hypot(H[k, k], H[k + 1, k])
        cs[k], sn[k] = H[k, k] / r, H[k + 1, k] / r
        H[k, k], H[k + 1, k] = r, 0.0
        g[k + 1] = -sn[k] * g[k]
        g[k] = cs[k] * g[k]
        k += 1

        y = _back_substitute(H[:k, :k], g[:k])
        x = V[:, :k] @ y
        res = float(np.linalg.norm(b - act(x)))
        dev = abs(1.0 - space.norm(x) / energy_ref)
        trace.append(k, res, dev, time.perf_counter_ns() - t0)
        if res <= rtol or lucky:
            converged = True
            break
        if k >= min(k_max, n):
            break
    return LinearSolveReport(iterate=x, residual_euclid=res, energy_dev=dev, k=k,
                             converged=converged, trace=trace, method="gmres", breakdown=lucky)


def _back_substitute(R: np.ndarray, g: np.ndarray) -> np.ndarray:
    import scipy.linalg

    return scipy.linalg.solve_triangular(R, g, lower=False)
