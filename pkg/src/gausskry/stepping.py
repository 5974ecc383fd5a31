"""Gauss collocation time stepping for linear Poisson systems.

For constant ``J`` one step of the order-2s Gauss method is
``y_{i+1} = R_s(h J Q) y_i``; each step is evaluated by one of the iterative
solvers in :mod:`gausskry.krylov` (or a sparse direct solve as oracle),
stopped once the Euclidean residual of ``D_s(-hJQ) y = D_s(hJQ) y_i`` falls
below ``h^{2s}``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import InvalidInput
from .krylov import assemble_pade_matrix, exp_arnoldi, gmres_baseline, qaa_v1, qaa_v2
from .models import PoissonModel
from .pade import build_pade
from .reports import IterationTrace, LinearSolveReport, TrajectoryReport, write_csv

SOLVERS = ("qaa_v1", "qaa_v2", "gmres", "exp_arnoldi", "dense_direct")
REFERENCE_MAX_N = 4000
SUMMARY_HEADER = ["h", "s", "solver", "l2_error", "max_energy_dev", "avg_iters_per_step",
                  "total_steps"]


@dataclass(frozen=True)
class StepPolicy:
    """How each linear step is solved.

    ``rtol_mode`` is ``"order"`` (tolerance ``h^{2s}``) or a fixed float.  The
    effective tolerance is never below ``rtol_floor``.
    """

    s: int
    h: float
    solver: str = "qaa_v1"
    rtol_mode: str | float = "order"
    rtol_floor: float = 1e-15
    k_max: int | None = None

    def __post_init__(self):
        if self.solver not in SOLVERS:
            raise InvalidInput(f"unknown solver {self.solver!r}; choose from {SOLVERS}")
        if not self.h > 0:
            raise InvalidInput("step size h must be positive")
        if self.rtol_mode != "order" and not isinstance(self.rtol_mode, (int, float)):
            raise InvalidInput("rtol_mode must be 'order' or a number")

    @property
    def rtol(self) -> float:
        base = self.h ** (2 * self.s) if self.rtol_mode == "order" else float(self.rtol_mode)
        return max(base, self.rtol_floor)


class LinearStepper:
    """Reusable per-(model, policy) setup: step matrix, Pade data, assembled systems."""

    def __init__(self, model: PoissonModel, policy: StepPolicy):
        if not model.is_linear:
            raise InvalidInput("linear stepping requires a constant structure matrix")
        self.model = model
        self.policy = policy
        self.space = model.space
        self.pade = build_pade(policy.s)
        self.A = sp.csr_matrix(model.step_matrix(policy.h))
        self._lhs = self._rhs = self._lu = None
        if policy.solver in ("gmres", "dense_direct"):
            self._lhs = assemble_pade_matrix(self.A, self.pade, -1)
            self._rhs = assemble_pade_matrix(self.A, self.pade, +1)
        if policy.solver == "dense_direct":
            self._lu = spla.splu(sp.csc_matrix(self._lhs))

    def step(self, y: np.ndarray) -> tuple[np.ndarray, LinearSolveReport]:
        pol = self.policy
        y = np.asarray(y, dtype=float)
        if not np.any(y):
            raise InvalidInput("state must be nonzero")
        if self.A.nnz == 0:
            # J = 0: every solver reproduces y exactly
            trace = IterationTrace()
            trace.append(0, 0.0, 0.0, 0)
            return y.copy(), LinearSolveReport(y.copy(), 0.0, 0.0, 0, True, trace,
                                               method=pol.solver, breakdown=True)
        if pol.solver == "qaa_v1":
            rep = qaa_v1(self.space, self.A, y, self.pade, pol.k_max, pol.rtol)
        elif pol.solver == "qaa_v2":
            rep = qaa_v2(self.space, self.A, y, self.pade, pol.k_max, pol.rtol)
        elif pol.solver == "gmres":
            rep = gmres_baseline(self.space, self._lhs, self._rhs @ y, pol.k_max, pol.rtol,
                                 energy_ref=self.space.norm(y))
        elif pol.solver == "exp_arnoldi":
            rep = exp_arnoldi(self.space, self.A, y, pol.k_max, rtol=pol.rtol)
        else:
            x = self._lu.solve(self._rhs @ y)
            res = float(np.linalg.norm(self._lhs @ x - self._rhs @ y))
            dev = abs(1.0 - self.space.norm(x) / self.space.norm(y))
            trace = IterationTrace()
            trace.append(0, res, dev, 0)
            rep = LinearSolveReport(x, res, dev, 0, True, trace, method="dense_direct")
        return rep.iterate, rep


def gauss_step_linear(model: PoissonModel, y_prev: np.ndarray,
                      policy: StepPolicy) -> tuple[np.ndarray, LinearSolveReport]:
    """One Gauss step ``R_s(hJQ) y_prev`` with the solver chosen in ``policy``."""
    return LinearStepper(model, policy).step(y_prev)


def time_grid(T: float, h: float) -> np.ndarray:
    """Grid ``0, h, ..., T``; ``T`` must be an integer multiple of ``h``."""
    if not T > 0 or not h > 0:
        raise InvalidInput("T and h must be positive")
    m = int(round(T / h))
    if m < 1 or abs(m * h - T) > 1e-9 * T:
        raise InvalidInput(f"T={T} is not an integer multiple of h={h}")
    return h * np.arange(m + 1)


def integrate_linear(model: PoissonModel, T: float, policy: StepPolicy) -> TrajectoryReport:
    """Integrate from ``model.y0`` over ``[0, T]`` with constant step ``policy.h``."""
    times = time_grid(T, policy.h)
    stepper = LinearStepper(model, policy)
    space = model.space
    norm0 = space.norm(model.y0)
    states = np.empty((times.size, model.n))
    states[0] = model.y0
    iters = np.zeros(times.size - 1, dtype=int)
    conv = np.zeros(times.size - 1, dtype=bool)
    devs = np.zeros(times.size)
    y = model.y0.copy()
    for i in range(times.size - 1):
        y, rep = stepper.step(y)
        states[i + 1] = y
        iters[i] = rep.k
        conv[i] = rep.converged
        devs[i + 1] = abs(1.0 - space.norm(y) / norm0)
    return TrajectoryReport(times=times, states=states, iterations=iters, converged=conv,
                            q_norm0=norm0, energy_devs=devs,
                            label=f"{model.label}-s{policy.s}-{policy.solver}")


def l2_error(traj: TrajectoryReport, ref: TrajectoryReport) -> float:
    """Discrete ``L^2(0, T)`` distance, trapezoid weights on a uniform grid."""
    t1 = np.asarray(traj.times)
    t2 = np.asarray(ref.times)
    if t1.shape != t2.shape or not np.allclose(t1, t2, rtol=0, atol=1e-12 * max(1.0, t1[-1])):
        raise InvalidInput("trajectories live on different time grids")
    if t1.size == 1:
        return 0.0
    h = t1[1] - t1[0]
    sq = np.sum((np.asarray(traj.states) - np.asarray(ref.states)) ** 2, axis=1)
    w = np.ones_like(sq)
    w[0] = w[-1] = 0.5
    return float(np.sqrt(h * np.sum(w * sq)))


def reference_linear(model: PoissonModel, grid) -> TrajectoryReport:
    """Exact flow ``exp(t J Q) y0`` on ``grid`` via an eigendecomposition.

    In Cholesky coordinates ``z = L^T y`` (``Q = L L^T``) the system reads
    ``z' = B z`` with skew-symmetric ``B = L^T J L``; ``iB`` is Hermitian, so
    the flow is a unitary eigen-expansion and conserves the Q-norm exactly up
    to rounding.
    """
    if not model.is_linear:
        raise InvalidInput("reference_linear needs a constant structure matrix")
    if model.n > REFERENCE_MAX_N:
        raise InvalidInput(
            f"n={model.n} exceeds {REFERENCE_MAX_N}; use a smaller benchmark for the dense reference"
        )
    grid = np.asarray(grid, dtype=float)
    J = model.J_at()
    J = J.toarray() if sp.issparse(J) else np.asarray(J)
    L = model.space.dense_chol()
    B = L.T @ J @ L
    B = 0.5 * (B - B.T)
    lam, U = np.linalg.eigh(1j * B)
    z0 = L.T @ model.y0
    c = U.conj().T @ z0
    # exp(tB) = U diag(exp(-i lam t)) U^H
    Z = np.real((U[None, :, :] * np.exp(-1j * np.outer(grid, lam))[:, None, :]) @ c)
    states = np.linalg.solve(L.T, Z.T).T
    norm0 = model.space.norm(model.y0)
    devs = np.array([abs(1.0 - model.space.norm(y) / norm0) for y in states])
    m = grid.size
    return TrajectoryReport(times=grid, states=states, iterations=np.zeros(max(m - 1, 0), dtype=int),
                            converged=np.ones(max(m - 1, 0), dtype=bool), q_norm0=norm0,
                            energy_devs=devs, label=f"reference-{model.label}")


def fitted_order(hs, errors, floor: float = 1e-11) -> float:
    """Least-squares slope of ``log(error)`` against ``log(h)``.

    Points with error below ``floor`` are dropped; at least two must remain.
    """
    hs = np.asarray(hs, dtype=float)
    errors = np.asarray(errors, dtype=float)
    keep = errors >= floor
    if keep.sum() < 2:
        return float("nan")
    slope, _ = np.polyfit(np.log(hs[keep]), np.log(errors[keep]), 1)
    return float(slope)


def summary_row(h: float, s: int, solver: str, traj: TrajectoryReport,
                ref: TrajectoryReport) -> list:
    """One row of the sweep summary, in :data:`SUMMARY_HEADER` order."""
    return [float(h), int(s), solver, l2_error(traj, ref), traj.max_energy_dev,
            traj.avg_iterations, traj.steps]


def write_summary_csv(fh, rows) -> None:
    write_csv(fh, SUMMARY_HEADER, rows)
