import numpy as np
import pytest


def random_pure(n, rng):
    v = rng.normal(size=n) + 1j * rng.normal(size=n)
    v /= np.linalg.norm(v)
    return np.outer(v, v.conj())


def random_mixed(n, rng, rank=None):
    k = n if rank is None else rank
    G = rng.normal(size=(n, k)) + 1j * rng.normal(size=(n, k))
    rho = G @ G.conj().T
    return rho / np.trace(rho).real


def random_unitary(n, rng):
    G = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    Q, R = np.linalg.qr(G)
    return Q * (np.diag(R) / np.abs(np.diag(R)))


def ginibre(n, rng):
    return rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# criterion number -> (verdict, one-line detail), filled by test_acceptance
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance")
    for n in sorted(ACCEPTANCE):
        verdict, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {verdict}  {detail}")
