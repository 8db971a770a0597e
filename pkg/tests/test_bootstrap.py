import numpy as np
import pytest

from qmboot.bootstrap import (
    BasisSpec,
    BootstrapError,
    build_matrix,
    is_feasible,
    min_eigenvalues,
    template,
)
from qmboot.opalg import PolynomialPotential
from qmboot.oracle import diagonalize
from qmboot.seedopt import maximize_min_eigenvalue


def test_basis_order():
    b = BasisSpec(kx=2, kp=1, depth=6)
    assert b.monomials == ((0, 0), (0, 1), (1, 0), (1, 1), (2, 0), (2, 1))
    assert BasisSpec.default(5).monomials == ((0, 0), (0, 1), (1, 0), (0, 2), (1, 1))


def test_basis_validation():
    with pytest.raises(ValueError):
        BasisSpec(kx=1, kp=1, depth=5)
    with pytest.raises(ValueError):
        BasisSpec.default(0)


def test_hermitian_random_builds():
    rng = np.random.default_rng(7)
    pots = [PolynomialPotential.anharmonic(g, n) for g, n in [(1, 2), (-2, 2), (0.4, 3), (1, 4)]] + [PolynomialPotential([0, 0, 3])]
    worst = 0.0
    for _ in range(1000):
        V = pots[rng.integers(len(pots))]
        depth = int(rng.integers(2, 14))
        basis = BasisSpec.default(depth)
        seeds = rng.uniform(0, 3, len(V.seed_powers()))
        M = build_matrix(float(rng.uniform(-3, 10)), seeds, V, basis).matrix
        scale = max(np.max(np.abs(M)), 1.0)
        worst = max(worst, np.max(np.abs(M - M.conj().T)) / scale)
    assert worst <= 1e-12


def test_matrix_entries_low_depth():
    # basis (1, p, x): <1>=1, <p>=0, <x>=0, <p^2>=2(E-<V>), <px> = -i/2
    V = PolynomialPotential([0, 0, 1])
    E = 1.3
    M = build_matrix(E, [], V, BasisSpec.default(3)).matrix
    x2 = E / 2
    p2 = 2 * (E - x2)
    expected = np.array([[1, 0, 0], [0, p2, -0.5j], [0, 0.5j, x2]])
    np.testing.assert_allclose(M, expected, atol=1e-14)


def test_exact_eigenstate_feasible():
    V = PolynomialPotential([0, 0, 1])
    for k in range(3):
        E = (k + 0.5) * np.sqrt(2)
        assert is_feasible(build_matrix(E, [], V, BasisSpec.default(10)))
    assert not is_feasible(build_matrix(1.4, [], V, BasisSpec.default(10)))


def test_oracle_point_feasible_quartic():
    # moments of the oracle ground state sit inside the feasible set
    V = PolynomialPotential.anharmonic(1, 2)
    E0 = diagonalize(V, k=1)[0]
    tpl = template(V, BasisSpec.default(8))
    res = maximize_min_eigenvalue(tpl, np.array([E0, E0 + 0.3]), [0.0], [2.0])
    assert res.best[0] >= -1e-9
    # a wrong energy has no feasible seed
    assert res.upper[1] < 0


def test_build_matrix_errors():
    V = PolynomialPotential.anharmonic(1, 3)
    with pytest.raises(ValueError):
        build_matrix(1.0, [0.5], V, BasisSpec.default(5))
    with pytest.raises(ValueError):
        build_matrix(float("nan"), [0.5, 0.5], V, BasisSpec.default(5))
    with pytest.raises(ValueError):
        build_matrix(1.0, [], PolynomialPotential([0, 0, -1]), BasisSpec.default(3))


def test_min_eigenvalues_scale_invariant_sign():
    M = np.diag([1.0, 1e12, 1e-6])
    M[0, 1] = M[1, 0] = 0.5e6
    assert min_eigenvalues(M) >= 0
    M[0, 1] = M[1, 0] = 2e6
    assert min_eigenvalues(M) < 0
    assert min_eigenvalues(np.diag([1.0, -2.0])) == -3.0
    assert min_eigenvalues(np.diag([1.0, -1e-17])) < -0.5


def test_nonfinite_matrix_raises():
    M = np.full((3, 3), np.inf)
    with pytest.raises(BootstrapError):
        is_feasible(M)


def test_trivial_feasibility():
    assert is_feasible(np.eye(3), tol=0)
    assert not is_feasible(np.diag([1.0, -0.1]), tol=1e-8)
    M = build_matrix(0.3, [], PolynomialPotential([0, 0, 1]), BasisSpec.default(1))
    np.testing.assert_array_equal(M.matrix, [[1]])


def test_harmonic_saturating_point():
    # basis (1, p, x) at the exact ground state: PSD with a zero eigenvalue
    g = 1.5
    M = build_matrix(np.sqrt(g / 2), [], PolynomialPotential([0, 0, g]), BasisSpec.default(3))
    assert is_feasible(M, tol=1e-9)
    assert abs(np.linalg.eigvalsh(M.matrix)[0]) <= 1e-12
    assert M.matrix[2, 2].real == pytest.approx(np.sqrt(g / 2) / (2 * g))


def test_seed_entry_exact():
    M = build_matrix(1.1, [0.37], PolynomialPotential.anharmonic(1, 2), BasisSpec.default(3))
    assert M.matrix[2, 2] == 0.37
    assert M.matrix[0, 0] == 1
