import numpy as np
import pytest

from qbrrr.model import ObservationSet, RrrProblem


def random_problem(rng, ell=6, m=4, p=3, frac=0.7, lam=None, C=None, tau=1.5):
    """Small random problem with a random subset of observed cells."""
    X = rng.normal(size=(ell, m))
    Z = X @ rng.normal(size=(m, p)) + 0.3 * rng.normal(size=(ell, p))
    keep = rng.random((ell, p)) < frac
    keep.flat[0] = True
    rows, cols = np.nonzero(keep)
    obs = ObservationSet(rows, cols, Z[rows, cols])
    lam = obs.n / 2 if lam is None else lam
    return RrrProblem(X, obs, p, lam=lam, tau=tau, C=C)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    """Record a one-line pass/fail verdict for an acceptance criterion."""

    def record(number, ok, detail):
        ACCEPTANCE_LINES.append(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
        print(ACCEPTANCE_LINES[-1])
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
