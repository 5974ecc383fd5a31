"""Energy-preserving solvers for the implicit midpoint rule on Poisson systems.

The midpoint step ``y1 = y0 + h J((y0 + y1)/2) Q (y0 + y1)/2`` is rewritten as
the fixed-point equation ``y1 = Phi(y1)`` with

    Phi(x) = C(h/2 J((y0 + x)/2) Q) y0,      C(A) = (I - A)^{-1} (I + A).

Since ``h J Q`` is Q-skew-adjoint, ``C`` maps it into the Q-orthogonal group,
so every value of ``Phi`` has the Q-norm of ``y0``.  Both solvers below only
ever return such values, so energy is conserved independently of when the
iteration is stopped.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import InvalidInput
from .models import PoissonModel
from .pade import DENSE_THRESHOLD, cayley_apply
from .reports import IterationTrace, NonlinearSolveReport, TrajectoryReport
from .stepping import time_grid

METHODS = ("fixed_point", "cayley_bfgs")
CURVATURE_RTOL = 1e-14
STRUCTURE_RTOL = 1e-12


def _dense(M) -> np.ndarray:
    return M.toarray() if sp.issparse(M) else np.asarray(M, dtype=float)


class MidpointProblem:
    """One midpoint step of size ``h`` starting from ``y0``."""

    def __init__(self, model: PoissonModel, y0, h: float, *,
                 dense_threshold: int = DENSE_THRESHOLD, seed: int = 0):
        if h < 0:
            raise InvalidInput("step size h must be non-negative")
        self.model = model
        self.space = model.space
        self.y0 = np.array(y0, dtype=float)
        if self.y0.shape != (model.n,):
            raise InvalidInput(f"y0 must have length {model.n}")
        self.h = float(h)
        self.dense_threshold = dense_threshold
        self._check_structure(seed)

    def _check_structure(self, seed: int) -> None:
        # J(z) Q is Q-skew-adjoint iff Q J(z) Q is skew-symmetric
        Q = self.space.dense_Q()
        rng = np.random.default_rng(seed)
        for _ in range(5):
            QJ = Q @ _dense(self.model.J_at(rng.standard_normal(self.model.n)))
            QJQ = QJ @ Q
            scale = max(np.max(np.abs(QJ)), np.finfo(float).tiny)
            if np.max(np.abs(QJQ + QJQ.T)) > STRUCTURE_RTOL * scale * max(1.0, np.max(np.abs(Q))):
                raise InvalidInput("J(y) Q is not skew-adjoint in the Q inner product")

    @property
    def n(self) -> int:
        return self.model.n

    def half_step_matrix(self, x: np.ndarray):
        """``h/2 J(m) Q`` with midpoint ``m = (y0 + x)/2``."""
        m = 0.5 * (self.y0 + x)
        J = self.model.J_at(m)
        return 0.5 * self.h * (J @ self.space.Q)

    def F(self, x: np.ndarray) -> np.ndarray:
        return x - phi_apply(self, x)


def phi_apply(prob: MidpointProblem, x: np.ndarray) -> np.ndarray:
    """Cayley map ``Phi(x) = C(h/2 J((y0 + x)/2) Q) y0``."""
    x = np.asarray(x, dtype=float)
    if x.shape != (prob.n,):
        raise InvalidInput(f"x must have length {prob.n}")
    if prob.h == 0.0:
        return prob.y0.copy()
    A = prob.half_step_matrix(x)
    return cayley_apply(prob.space, A, prob.y0, dense_threshold=prob.dense_threshold)


def residual_tilde(prob: MidpointProblem, x: np.ndarray) -> np.ndarray:
    """Solve-free residual ``(I - A) x - (I + A) y0`` with ``A = h/2 J(m) Q``."""
    x = np.asarray(x, dtype=float)
    if x.shape != (prob.n,):
        raise InvalidInput(f"x must have length {prob.n}")
    A = prob.half_step_matrix(x)
    return (x - A @ x) - (prob.y0 + A @ prob.y0)


def _energy_dev(prob: MidpointProblem, x: np.ndarray, norm0: float) -> float:
    return abs(1.0 - prob.space.norm(x) / norm0)


def fixed_point_solve(prob: MidpointProblem, x0, tol: float,
                      k_max: int = 100) -> NonlinearSolveReport:
    """Iterate ``x_{k+1} = Phi(x_k)`` until ``||r(x_k)||_2 <= tol``.

    The trace row ``k`` describes ``x_k`` (``k >= 1``); the returned solution
    is the last computed ``x_k``.
    """
    x = np.array(x0, dtype=float)
    norm0 = prob.space.norm(prob.y0)
    trace = IterationTrace()
    iterates = []
    t0 = time.perf_counter_ns()
    converged = False
    k = 0
    for k in range(1, max(int(k_max), 1) + 1):
        x = phi_apply(prob, x)
        res = float(np.linalg.norm(residual_tilde(prob, x)))
        iterates.append(x)
        trace.append(k, res, _energy_dev(prob, x, norm0), time.perf_counter_ns() - t0)
        if res <= tol:
            converged = True
            break
    return NonlinearSolveReport(solution=x, trace=trace, k_used=k, converged=converged,
                                method="fixed_point", iterates=iterates)


def cayley_bfgs_solve(prob: MidpointProblem, x0, tol: float,
                      k_max: int = 100) -> NonlinearSolveReport:
    """Quasi-Newton iteration on ``F(x) = x - Phi(x)`` with Cayley iterates.

    ``w_k = Phi(x_k)`` and ``x_{k+1} = x_k - B_k^{-1} (x_k - w_k)`` where the
    inverse BFGS approximation starts at the identity.  The stopping test and
    the returned solution use ``w_k``, which always carries the energy of
    ``y0``.  Trace row ``k`` describes ``w_k`` (``k >= 0``); an update with
    vanishing curvature ``z^T s`` is skipped.
    """
    n = prob.n
    x = np.array(x0, dtype=float)
    norm0 = prob.space.norm(prob.y0)
    Binv = np.eye(n)
    trace = IterationTrace()
    ws, xs = [], []
    t0 = time.perf_counter_ns()

    w = phi_apply(prob, x)
    Fx = x - w
    k = 0
    converged = False
    while True:
        res = float(np.linalg.norm(residual_tilde(prob, w)))
        ws.append(w)
        xs.append(x)
        trace.append(k, res, _energy_dev(prob, w, norm0), time.perf_counter_ns() - t0)
        if res <= tol:
            converged = True
            break
        if k >= k_max:
            break
        x_new = x - Binv @ Fx
        w_new = phi_apply(prob, x_new)
        F_new = x_new - w_new
        s_k = x_new - x
        z_k = F_new - Fx
        zs = float(z_k @ s_k)
        if abs(zs) > CURVATURE_RTOL * np.linalg.norm(z_k) * np.linalg.norm(s_k):
            rho = 1.0 / zs
            V = np.eye(n) - rho * np.outer(s_k, z_k)
            Binv = V @ Binv @ V.T + rho * np.outer(s_k, s_k)
        x, w, Fx = x_new, w_new, F_new
        k += 1
    return NonlinearSolveReport(solution=w, trace=trace, k_used=k, converged=converged,
                                method="cayley_bfgs", iterates=ws, x_iterates=xs)


@dataclass(frozen=True)
class NonlinearPolicy:
    """Step size, solver and stopping rule for the midpoint integrator.

    ``tol_mode`` is ``"order"`` (stop once ``||r||_2 <= h^2``) or a fixed
    float tolerance.
    """

    h: float
    method: str = "fixed_point"
    tol_mode: str | float = "order"
    k_max: int = 100

    def __post_init__(self):
        if self.method not in METHODS:
            raise InvalidInput(f"unknown method {self.method!r}; choose from {METHODS}")
        if not self.h > 0:
            raise InvalidInput("step size h must be positive")
        if self.tol_mode != "order" and not isinstance(self.tol_mode, (int, float)):
            raise InvalidInput("tol_mode must be 'order' or a number")

    @property
    def tol(self) -> float:
        return self.h ** 2 if self.tol_mode == "order" else float(self.tol_mode)


def gauss_step_nonlinear(model: PoissonModel, y_prev,
                         policy: NonlinearPolicy) -> tuple[np.ndarray, NonlinearSolveReport]:
    """One midpoint step from ``y_prev``, started at ``x0 = y_prev``."""
    y_prev = np.asarray(y_prev, dtype=float)
    prob = MidpointProblem(model, y_prev, policy.h)
    solve = fixed_point_solve if policy.method == "fixed_point" else cayley_bfgs_solve
    rep = solve(prob, y_prev, policy.tol, policy.k_max)
    return rep.solution, rep


def integrate_nonlinear(model: PoissonModel, T: float, policy: NonlinearPolicy) -> TrajectoryReport:
    """Midpoint-rule trajectory on ``[0, T]``; iterations are ``k_used`` per step."""
    times = time_grid(T, policy.h)
    norm0 = model.space.norm(model.y0)
    states = np.empty((times.size, model.n))
    states[0] = model.y0
    iters = np.zeros(times.size - 1, dtype=int)
    conv = np.zeros(times.size - 1, dtype=bool)
    devs = np.zeros(times.size)
    y = model.y0.copy()
    for i in range(times.size - 1):
        y, rep = gauss_step_nonlinear(model, y, policy)
        states[i + 1] = y
        iters[i] = rep.k_used
        conv[i] = rep.converged
        devs[i + 1] = abs(1.0 - model.space.norm(y) / norm0)
    return TrajectoryReport(times=times, states=states, iterations=iters, converged=conv,
                            q_norm0=norm0, energy_devs=devs,
                            label=f"{model.label}-midpoint-{policy.method}")


def estimate_lipschitz(model: PoissonModel, center, radius: float, *,
                       samples: int = 1000, seed: int = 0) -> float:
    """Empirical Lipschitz constant of ``y -> J(y) Q`` on a Q-ball.

    Maximum of ``||J(u)Q - J(v)Q||_Q / ||u - v||_Q`` over ``samples`` random
    pairs drawn uniformly from the ball of Q-radius ``radius`` about
    ``center``; the operator norm is the one induced by the Q-norm.
    """
    space = model.space
    n = model.n
    center = np.asarray(center, dtype=float)
    L = space.dense_chol()
    Q = space.dense_Q()
    rng = np.random.default_rng(seed)

    def draw():
        g = rng.standard_normal(n)
        z = radius * rng.uniform() ** (1.0 / n) * g / np.linalg.norm(g)
        return center + np.linalg.solve(L.T, z)

    best = 0.0
    for _ in range(samples):
        u, v = draw(), draw()
        d = space.norm(u - v)
        if d == 0.0:
            continue
        D = _dense(model.J_at(u)) @ Q - _dense(model.J_at(v)) @ Q
        best = max(best, space.operator_norm(D) / d)
    return best
