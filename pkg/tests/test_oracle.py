import numpy as np
import pytest
from scipy.linalg import eigh_tridiagonal

from qmboot.opalg import PolynomialPotential
from qmboot.oracle import BasisConfig, OracleError, _lowest, diagonalize, diagonalize_with_size, hamiltonian


def grid_levels(V, L=8.0, n=6000, k=2):
    """Lowest levels from a 4th-order finite-difference Laplacian on [-L, L], Richardson-extrapolated."""

    def solve(m):
        x, h = np.linspace(-L, L, m, retstep=True)
        d = 1.0 / h**2 + V(x)
        e = np.full(m - 1, -0.5 / h**2)
        return eigh_tridiagonal(d, e, select="i", select_range=(0, k - 1), eigvals_only=True)

    return (4 * solve(2 * n) - solve(n)) / 3


def test_harmonic_exact():
    V = PolynomialPotential([0, 0, 1])
    vals = diagonalize(V, k=3)
    np.testing.assert_allclose(vals, (np.arange(3) + 0.5) * np.sqrt(2), atol=1e-10)


def test_harmonic_matched_frequency_any_size():
    V = PolynomialPotential([0, 0, 1])
    for N in (10, 17, 40):
        vals = _lowest(V, N, np.sqrt(2), 2)
        np.testing.assert_allclose(vals, [np.sqrt(2) / 2, 1.5 * np.sqrt(2)], atol=1e-12)


def test_pure_quartic():
    # 2^(-2/3) times the ground level of p^2 + x^4 (1.0603620904841829)
    V = PolynomialPotential.anharmonic(0, 2)
    assert diagonalize(V, k=1)[0] == pytest.approx(2 ** (-2 / 3) * 1.0603620904841829, abs=1e-8)


@pytest.mark.parametrize("g,n", [(1, 2), (1, 3), (1, 4), (-3, 2)])
def test_matches_finite_differences(g, n):
    V = PolynomialPotential.anharmonic(g, n)
    ref = grid_levels(V, L=6.0 if n > 2 else 8.0)
    np.testing.assert_allclose(diagonalize(V, k=2), ref, atol=1e-6)


@pytest.mark.parametrize("g", [0, 1, 3])
def test_omega_independence(g):
    V = PolynomialPotential.anharmonic(g, 2)
    vals = [diagonalize(V, BasisConfig(omega_ref=w), k=2) for w in (1.0, np.sqrt(2), 2.0)]
    for v in vals[1:]:
        np.testing.assert_allclose(v, vals[0], atol=1e-8)


def test_variational_in_size():
    V = PolynomialPotential.anharmonic(1, 3)
    prev = np.inf
    for N in (10, 20, 40, 80):
        e0 = _lowest(V, N, 2.0, 1)[0]
        assert e0 <= prev + 1e-12
        prev = e0


def test_hamiltonian_symmetric():
    H = hamiltonian(PolynomialPotential.anharmonic(0.5, 4), 30, 1.7)
    np.testing.assert_allclose(H, H.T, atol=1e-12)


def test_convergence_size_reported():
    vals, N = diagonalize_with_size(PolynomialPotential.anharmonic(1, 2))
    assert N >= 64 and N <= 2048
    assert vals[1] > vals[0]


def test_errors():
    with pytest.raises(ValueError):
        BasisConfig(N=5)
    with pytest.raises(ValueError):
        BasisConfig(omega_ref=0)
    with pytest.raises(ValueError):
        diagonalize(PolynomialPotential([0, 0, -1]))
    with pytest.raises(OracleError):
        # a badly mismatched basis cannot converge under a tiny size cap
        diagonalize(PolynomialPotential.anharmonic(1, 4), BasisConfig(N=10, omega_ref=0.05, max_size=40))
