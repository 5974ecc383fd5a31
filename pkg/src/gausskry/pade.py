"""Diagonal Pade approximants of the exponential and the Cayley transform.

``R_s(z) = D_s(z) / D_s(-z)`` with

    D_s(z) = sum_{j=0}^{s} s! (2s-j)! / ((2s)! j! (s-j)!) z^j,

which is the stability function of the order-2s Gauss collocation method.
Besides the polynomial form we keep the partial fraction form

    R_s(z) = (-1)^s + sum_j w_j / (z - t_j)

whose poles ``t_j`` all lie in the open right half plane.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from math import factorial

import numpy as np

from .core import QSpace, as_action, dense_solve
from .errors import InvalidInput, PoleHit

MAX_DEGREE = 8
DENSE_THRESHOLD = 64

# Published reference values (15 significant digits) used to cross-check the
# computed poles and residues.
REFERENCE_CONSTANTS = {
    1: ([2.0 + 0.0j], [-4.0 + 0.0j]),
    2: (
        [3.0 - np.sqrt(3.0) * 1j, 3.0 + np.sqrt(3.0) * 1j],
        [6.0 + 6.0 * np.sqrt(3.0) * 1j, 6.0 - 6.0 * np.sqrt(3.0) * 1j],
    ),
    3: (
        [
            3.67781464537391 - 3.50876191956744j,
            4.64437070925217 + 0.0j,
            3.67781464537391 + 3.50876191956744j,
        ],
        [
            16.6012701235744 - 20.5831842793869j,
            -57.2025402471486 + 0.0j,
            16.6012701235744 + 20.5831842793869j,
        ],
    ),
}
REFERENCE_ATOL = 1e-10


def exact_coefficients(s: int) -> list[Fraction]:
    """Exact rational coefficients ``a_0..a_s`` of ``D_s``."""
    return [
        Fraction(factorial(s) * factorial(2 * s - j),
                 factorial(2 * s) * factorial(j) * factorial(s - j))
        for j in range(s + 1)
    ]


def _horner(coeffs, z):
    acc = coeffs[-1]
    for c in coeffs[-2::-1]:
        acc = acc * z + c
    return acc


@dataclass(frozen=True)
class PadeData:
    """Degree-``s`` diagonal Pade approximant of ``exp``.

    ``poles`` are sorted by increasing imaginary part, so ``poles[j]`` and
    ``poles[s - 1 - j]`` are complex conjugates and a real pole (odd ``s``)
    sits in the middle.  ``weights`` are the matching residues.
    """

    s: int
    coeffs: np.ndarray
    poles: np.ndarray
    weights: np.ndarray
    kappa: float

    @property
    def sign(self) -> int:
        """The constant term ``(-1)^s`` of the partial fraction form."""
        return -1 if self.s % 2 else 1

    def representatives(self):
        """Yield ``(tau, omega, factor)`` covering every pole exactly once.

        For a conjugate pair only the pole with negative imaginary part is
        returned, with ``factor == 2``; the caller adds ``2 * Re(...)``.  Real
        poles come with ``factor == 1``.  There are ``ceil(s / 2)`` entries.
        """
        for tau, omega in zip(self.poles, self.weights):
            if tau.imag < 0:
                yield tau, omega, 2
            elif tau.imag == 0:
                yield tau, omega, 1

    def to_dict(self) -> dict:
        return {
            "degree": self.s,
            "coefficients": [float(c) for c in self.coeffs],
            "poles": [[float(t.real), float(t.imag)] for t in self.poles],
            "weights": [[float(w.real), float(w.imag)] for w in self.weights],
            "kappa": float(self.kappa),
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def lipschitz_constant(poles, weights) -> float:
    """``sum_j |w_j| / Re(t_j)^2``, a Lipschitz constant of ``R_s`` on the Lie algebra."""
    poles = np.asarray(poles)
    weights = np.asarray(weights)
    return float(np.sum(np.abs(weights) / poles.real**2))


def build_pade(s: int) -> PadeData:
    """Coefficients, poles, residues and Lipschitz constant of ``R_s``.

    Poles are the roots of ``D_s(-z)`` (companion-matrix eigenvalues), polished
    by Newton steps on ``D_s(-z)``; the residue at a pole ``t`` is
    ``D_s(t) / (-D_s'(-t))``, evaluated as a ratio of products over the poles.
    """
    if not isinstance(s, (int, np.integer)) or not 1 <= s <= MAX_DEGREE:
        raise InvalidInput(f"Pade degree must be an integer in [1, {MAX_DEGREE}], got {s!r}")
    s = int(s)
    exact = exact_coefficients(s)
    coeffs = np.array([float(c) for c in exact])
    # q(z) = D_s(-z), coefficients in increasing degree
    q = [float(c * (-1) ** j) for j, c in enumerate(exact)]
    dq = [j * q[j] for j in range(1, s + 1)]
    roots = np.roots(q[::-1]).astype(complex)
    for _ in range(3):
        roots = roots - _horner(q, roots) / _horner(dq, roots)
    # snap the real root of odd degree; D_s has real coefficients
    roots = np.where(np.abs(roots.imag) <= 1e-12 * np.abs(roots), roots.real + 0j, roots)
    roots = roots[np.lexsort((roots.real, roots.imag))]
    # conjugate symmetry made exact
    for j in range(s // 2):
        roots[s - 1 - j] = np.conj(roots[j])

    # residue at t_j is D_s(t_j) / q'(t_j); with q(z) = c prod_i (z - t_i) both
    # factors are products over the roots, which avoids Horner cancellation
    weights = np.array([
        np.prod(-roots[j] - roots) / np.prod(roots[j] - np.delete(roots, j))
        for j in range(s)
    ])
    for j in range(s // 2):
        weights[s - 1 - j] = np.conj(weights[j])
    weights = np.where(roots.imag == 0, weights.real + 0j, weights)

    if s in REFERENCE_CONSTANTS:
        ref_poles, ref_weights = REFERENCE_CONSTANTS[s]
        if (np.max(np.abs(roots - np.array(ref_poles))) > REFERENCE_ATOL
                or np.max(np.abs(weights - np.array(ref_weights))) > REFERENCE_ATOL):
            raise RuntimeError(f"computed Pade data for s={s} disagree with reference values")

    return PadeData(
        s=s,
        coeffs=coeffs,
        poles=roots,
        weights=weights,
        kappa=lipschitz_constant(roots, weights),
    )


def eval_scalar(p: PadeData, z: complex) -> complex:
    """``R_s(z)`` from the numerator/denominator polynomials (Horner)."""
    num = _horner(list(p.coeffs), z)
    den = _horner(list(p.coeffs), -z)
    if abs(den) <= 1e-300:
        raise PoleHit(f"z={z!r} is a pole of R_{p.s}")
    return num / den


def eval_scalar_pfd(p: PadeData, z: complex) -> complex:
    """``R_s(z)`` from the partial fraction form."""
    diffs = z - p.poles
    if np.min(np.abs(diffs)) <= 1e-300:
        raise PoleHit(f"z={z!r} is a pole of R_{p.s}")
    return p.sign + complex(np.sum(p.weights / diffs))


def eval_matrix(p: PadeData, A: np.ndarray) -> np.ndarray:
    """Dense ``R_s(A) = D_s(-A)^{-1} D_s(A)`` for small matrices."""
    A = np.asarray(A)
    n = A.shape[0]
    I = np.eye(n)
    num = p.coeffs[-1] * I
    den = p.coeffs[-1] * I
    for c in p.coeffs[-2::-1]:
        num = A @ num + c * I
        den = -A @ den + c * I
    return dense_solve(den, num)


def cayley_apply(space: QSpace, A_apply, y: np.ndarray, *,
                 dense_threshold: int = DENSE_THRESHOLD, rtol: float | None = None) -> np.ndarray:
    """Apply the Cayley transform ``(I - A)^{-1} (I + A)`` to ``y``.

    ``A`` is given as a matrix or as an action ``x -> A x``.  For ``n`` up to
    ``dense_threshold`` the matrix is formed and factorized densely.  Larger
    problems go through the Q-Arnoldi approximation of ``R_1(2A) y``, which
    is exact at convergence and Q-norm preserving at every iterate; it stops
    once ``||(I - A) x - (I + A) y||_2 <= rtol`` (default ``1e-13 ||y||_2``).
    """
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    if n != space.n:
        raise InvalidInput(f"expected vector of length {space.n}, got {n}")
    act = as_action(A_apply)
    if n <= dense_threshold:
        if callable(A_apply):
            A = np.column_stack([act(e) for e in np.eye(n)])
        else:
            A = A_apply.toarray() if hasattr(A_apply, "toarray") else np.asarray(A_apply)
        I = np.eye(n)
        return dense_solve(I - A, y + A @ y)

    from .krylov import qaa_v1

    if rtol is None:
        rtol = 1e-13 * float(np.linalg.norm(y))
    # D_1(-2A) x - D_1(2A) y is exactly the Cayley residual
    report = qaa_v1(space, lambda x: 2.0 * act(x), y, build_pade(1), k_max=n, rtol=rtol)
    return report.iterate
