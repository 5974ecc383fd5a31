"""Poisson systems ``y' = J(y) Q y`` used as benchmarks.

Two generators are provided: a chain of ``N`` harmonic oscillators (linear,
constant ``J``) and the free rigid body (``J(y)`` is the cross-product matrix
of ``y``).
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.io
import scipy.sparse as sp
from scipy.integrate import solve_ivp

from .core import QSpace
from .errors import AccuracyError, InvalidInput
from .reports import TrajectoryReport

SKEW_ATOL = 1e-13


class PoissonModel:
    """A Poisson system with quadratic Hamiltonian ``y^T Q y / 2``.

    ``J`` is either a constant (sparse or dense) skew-symmetric matrix or a
    callable ``y -> J(y)`` returning one.  Skew-symmetry of ``J`` is probed at
    five random states and ``Q`` must admit a Cholesky factorization.
    """

    def __init__(self, J, Q, y0, *, label: str = "", params: dict | None = None,
                 seed: int = 0):
        self.y0 = np.array(y0, dtype=float)
        self.n = self.y0.shape[0]
        self.space = QSpace(Q)
        if self.space.n != self.n:
            raise InvalidInput(f"Q has order {self.space.n} but y0 has length {self.n}")
        if callable(J):
            self._J_const = None
            self._J_fn: Callable | None = J
        else:
            self._J_const = sp.csr_matrix(J, dtype=float) if sp.issparse(J) else np.array(J, dtype=float)
            self._J_fn = None
            if self._J_const.shape != (self.n, self.n):
                raise InvalidInput(f"J must be {self.n}x{self.n}")
        self.label = label
        self.params = dict(params or {})
        self._check_skew(seed)

    def _check_skew(self, seed: int) -> None:
        rng = np.random.default_rng(seed)
        for _ in range(5):
            J = self.J_at(rng.standard_normal(self.n))
            J = J.toarray() if sp.issparse(J) else np.asarray(J)
            if np.max(np.abs(J + J.T)) > SKEW_ATOL * max(1.0, np.max(np.abs(J))):
                raise InvalidInput("structure matrix J(y) is not skew-symmetric")

    @property
    def Q(self):
        return self.space.Q

    @property
    def is_linear(self) -> bool:
        return self._J_fn is None

    def J_at(self, y=None):
        if self._J_fn is None:
            return self._J_const
        return self._J_fn(np.asarray(y, dtype=float))

    def rhs(self, y: np.ndarray) -> np.ndarray:
        """Vector field ``J(y) Q y``."""
        return self.J_at(y) @ (self.Q @ y)

    def step_matrix(self, h: float):
        """``h J Q`` for a linear model (sparse if the model is sparse)."""
        if not self.is_linear:
            raise InvalidInput(f"model {self.label!r} has a state-dependent J")
        J, Q = self._J_const, self.Q
        if sp.issparse(J) or sp.issparse(Q):
            return sp.csr_matrix(h * (sp.csr_matrix(J) @ sp.csr_matrix(Q)))
        return h * (J @ Q)

    def energy(self, y) -> float:
        return self.space.energy(y)

    def to_dict(self) -> dict:
        return {"label": self.label, "n": self.n, "parameters": self.params}

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    def export_matrix_market(self, directory) -> list[Path]:
        """Write ``Q`` (and a constant ``J``) as MatrixMarket coordinate files."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        written = []
        mats = {"Q": self.Q}
        if self.is_linear:
            mats["J"] = self._J_const
        for name, M in mats.items():
            path = directory / f"{self.label or 'model'}_{name}.mtx"
            scipy.io.mmwrite(str(path), sp.coo_matrix(M))
            written.append(path)
        return written

    def __repr__(self) -> str:
        kind = "linear" if self.is_linear else "nonlinear"
        return f"PoissonModel({self.label!r}, n={self.n}, {kind})"


def _per_oscillator(value, N: int, name: str) -> np.ndarray:
    arr = np.full(N, float(value)) if np.ndim(value) == 0 else np.asarray(value, dtype=float)
    if arr.shape != (N,):
        raise InvalidInput(f"{name} must be a scalar or have length {N}")
    if np.any(arr <= 0):
        raise InvalidInput(f"{name} must be positive")
    return arr


def mass_spring_chain(N: int, m: float | Sequence[float] = 0.5,
                      k: float | Sequence[float] = 124.0) -> PoissonModel:
    """Chain of ``N`` coupled oscillators, state ``(q_1, p_1, ..., q_N, p_N)``.

    ``J`` is block diagonal with blocks ``[[0, 1], [-1, 0]]``.  In ``Q`` the
    momentum entries are ``1/m_i``; the position block is tridiagonal with
    diagonal ``k_1, k_1 + k_2, ..., k_{N-1} + k_N`` and couplings ``-k_i``
    between positions ``i`` and ``i + 1``.  The initial value is ``e_1``.
    """
    if int(N) != N or N < 1:
        raise InvalidInput("N must be a positive integer")
    N = int(N)
    masses = _per_oscillator(m, N, "m")
    springs = _per_oscillator(k, N, "k")
    n = 2 * N
    pos = np.arange(0, n, 2)
    mom = pos + 1

    J = sp.lil_matrix((n, n))
    J[pos, mom] = 1.0
    J[mom, pos] = -1.0

    diag_pos = springs.copy()
    diag_pos[1:] = springs[:-1] + springs[1:]
    Q = sp.lil_matrix((n, n))
    Q[pos, pos] = diag_pos
    Q[mom, mom] = 1.0 / masses
    if N > 1:
        Q[pos[:-1], pos[1:]] = -springs[:-1]
        Q[pos[1:], pos[:-1]] = -springs[:-1]

    y0 = np.zeros(n)
    y0[0] = 1.0
    params = {"N": N, "m": masses.tolist(), "k": springs.tolist()}
    if np.all(masses == masses[0]) and np.all(springs == springs[0]):
        params.update(m=float(masses[0]), k=float(springs[0]))
    return PoissonModel(J.tocsr(), Q.tocsr(), y0, label=f"mass-spring-N{N}", params=params)


def cross_matrix(y: np.ndarray) -> np.ndarray:
    """``J(y)`` with ``J(y) v = y x v``."""
    return np.array([
        [0.0, -y[2], y[1]],
        [y[2], 0.0, -y[0]],
        [-y[1], y[0], 0.0],
    ])


def rigid_body(I1: float = 2.0, I2: float = 1.0, I3: float = 2.0 / 3.0,
               y0=(3.0, 3.0, 2.0)) -> PoissonModel:
    """Free rigid body (Euler equations) with inertia moments ``I1, I2, I3``."""
    inertia = np.array([I1, I2, I3], dtype=float)
    if np.any(inertia <= 0):
        raise InvalidInput("moments of inertia must be positive")
    Q = np.diag(1.0 / inertia)
    params = {"I1": float(I1), "I2": float(I2), "I3": float(I3),
              "y0": [float(v) for v in y0]}
    return PoissonModel(cross_matrix, Q, y0, label="rigid-body", params=params)


def reference_nonlinear(model: PoissonModel, grid, abs_tol: float = 1e-13, *,
                        energy_tol: float = 1e-11) -> TrajectoryReport:
    """High-accuracy reference trajectory on ``grid``.

    Integrated with the adaptive 8th order Dormand-Prince pair (DOP853).  The
    result is rejected if the relative Q-norm drifts by more than
    ``energy_tol``.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0 or grid[0] != 0.0 or np.any(np.diff(grid) <= 0):
        raise InvalidInput("grid must be increasing and start at 0")
    if grid.size == 1:
        states = model.y0[None, :].copy()
    else:
        sol = solve_ivp(lambda t, y: model.rhs(y), (0.0, grid[-1]), model.y0,
                        method="DOP853", t_eval=grid, rtol=max(abs_tol, 2.3e-14),
                        atol=abs_tol)
        if not sol.success:
            raise AccuracyError(f"reference integration failed: {sol.message}")
        states = sol.y.T
        states[0] = model.y0
    norm0 = model.space.norm(model.y0)
    devs = np.array([abs(1.0 - model.space.norm(y) / norm0) for y in states])
    if np.max(devs) > energy_tol:
        raise AccuracyError(f"reference energy drift {np.max(devs):.2e} exceeds {energy_tol:g}")
    m = grid.size
    return TrajectoryReport(times=grid, states=states, iterations=np.zeros(m - 1, dtype=int),
                            converged=np.ones(m - 1, dtype=bool), q_norm0=norm0,
                            energy_devs=devs, label=f"reference-{model.label}")
