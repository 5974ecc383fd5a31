import numpy as np
import pytest


def random_spd(rng, n, cond=10.0):
    """Random SPD matrix with eigenvalues in [1, cond]."""
    X, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return X @ np.diag(np.linspace(1.0, cond, n)) @ X.T


def random_skew(rng, n, scale=1.0):
    S = scale * rng.standard_normal((n, n))
    return S - S.T


def random_lie_algebra(rng, n, scale=1.0):
    """``(A, Q)`` with ``Q`` SPD and ``A = S Q`` Q-skew-adjoint."""
    Q = random_spd(rng, n)
    return random_skew(rng, n, scale) @ Q, Q


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pade_poly_dense(A, s, sign=1):
    """``D_s(sign * A)`` from the factorial formula, independent of the package."""
    from math import factorial

    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    M = np.zeros((n, n))
    P = np.eye(n)
    for j in range(s + 1):
        a = factorial(s) * factorial(2 * s - j) / (factorial(2 * s) * factorial(j) * factorial(s - j))
        M += a * P
        P = (sign * A) @ P
    return M


def dense_gauss_step(A, y, s):
    """Oracle for ``R_s(A) y`` by a dense LU solve of ``D_s(-A) x = D_s(A) y``."""
    import scipy.linalg

    return scipy.linalg.solve(pade_poly_dense(A, s, -1), pade_poly_dense(A, s, +1) @ y)


@pytest.fixture
def verdict(request):
    """Record and print one PASS/FAIL line per acceptance criterion, then assert."""
    lines = request.config.__dict__.setdefault("acceptance_lines", [])

    def report(label, ok, detail):
        line = f"{label}: {'PASS' if ok else 'FAIL'} | {detail}"
        lines.append(line)
        print(line)
        assert ok, line

    return report


def pytest_terminal_summary(terminalreporter, config):
    lines = config.__dict__.get("acceptance_lines")
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
