import numpy as np
import pytest
from scipy.linalg import eigh_tridiagonal

from qmboot.bootstrap import BasisSpec
from qmboot.opalg import PolynomialPotential
from qmboot.oracle import diagonalize
from qmboot.scan import (
    FeasibilityGrid,
    SearchBox,
    default_box,
    extract_islands,
    locate_islands,
    potential_minimum,
    refine,
    scan,
    scan_energy,
    seed_upper_bounds,
)


def test_search_box_validation():
    with pytest.raises(ValueError):
        SearchBox(("x2",), (0.0,), (1.0,), (3,))
    with pytest.raises(ValueError):
        SearchBox(("E",), (1.0,), (0.0,), (3,))
    box = SearchBox(("E", "x2"), (0.0, 0.0), (1.0, 2.0), (11, 5))
    assert box.spacing() == pytest.approx((0.1, 0.5))
    assert box.with_axis("x2", 0.5, 1.0, 3).counts == (11, 3)


def test_potential_minimum():
    assert potential_minimum(PolynomialPotential.anharmonic(1, 2)) == 0.0
    # g x^2 + x^4 with g < 0: minimum -g^2/4
    assert potential_minimum(PolynomialPotential.anharmonic(-3, 2)) == pytest.approx(-2.25)


def ground_moments(V, powers, L=7.0, m=4000):
    x, h = np.linspace(-L, L, m, retstep=True)
    d = 1.0 / h**2 + V(x)
    e = np.full(m - 1, -0.5 / h**2)
    w, v = eigh_tridiagonal(d, e, select="i", select_range=(0, 0))
    psi2 = v[:, 0] ** 2
    return w[0], [float(np.sum(psi2 * x**k)) for k in powers]


def test_seed_bounds_hold_for_ground_states():
    for g, n in [(1, 2), (-3, 2), (0, 3), (-1, 3), (1, 4)]:
        V = PolynomialPotential.anharmonic(g, n)
        e0, mom = ground_moments(V, V.seed_powers())
        bound = seed_upper_bounds(V, e0)
        assert np.all(np.array(mom) <= bound + 1e-9), (g, n)
    assert seed_upper_bounds(PolynomialPotential([0, 0, 1]), 5.0).size == 0


def test_default_box_shape():
    box = default_box(PolynomialPotential.anharmonic(1, 3))
    assert box.axes == ("E", "x2", "x4")
    assert box.counts == (201, 41, 41)


QBOX = SearchBox(("E", "x2"), (0.85, 0.2), (1.0, 0.45), (151, 251))


def test_lattice_scan_ground_island():
    V = PolynomialPotential.anharmonic(1, 2)
    grid = scan(V, BasisSpec.default(6), QBOX)
    assert grid.feasible.shape == (151, 251)
    isl = extract_islands(grid)
    assert len(isl) == 1 and not isl[0].touches_boundary
    assert isl[0].contains(diagonalize(V, k=1)[0])


def test_lattice_and_projected_agree():
    V = PolynomialPotential.anharmonic(1, 2)
    basis = BasisSpec.default(6)
    lattice = scan(V, basis, QBOX).feasible.any(axis=1)
    projected = scan_energy(V, basis, 0.85, 1.0, 151, [0.2], [0.45]).feasible
    # projection can only find more feasible energies than a finite seed lattice
    assert lattice.any()
    assert np.all(projected[lattice])


def test_extract_islands_merge():
    box = SearchBox(("E",), (0.0,), (1.0,), (11,))
    feas = np.array([0, 1, 1, 0, 1, 0, 0, 0, 1, 0, 0], dtype=bool)
    grid = FeasibilityGrid(box, feas, feas.astype(float) - 0.5, 5, 1e-9)
    isl = extract_islands(grid, merge_gap=1)
    assert len(isl) == 2 and isl[0].merged and not isl[1].merged
    assert extract_islands(grid, merge_gap=0)[0].points == 2
    assert grid.to_csv().splitlines()[0] == "E,feasible,min_eigenvalue"


def test_locate_islands_harmonic():
    V = PolynomialPotential([0, 0, 1])
    isl = locate_islands(V, BasisSpec.default(13), 0.0, 10.0, [], [])
    assert isl[0].contains(np.sqrt(0.5))
    assert isl[0].width / 2 <= 1e-4


def test_refine_shrinks_lattice_island():
    V = PolynomialPotential.anharmonic(1, 2)
    basis = BasisSpec.default(6)
    box = SearchBox(("E", "x2"), (0.85, 0.2), (1.0, 0.45), (31, 101))
    first = extract_islands(scan(V, basis, box))[0]
    fine = refine(V, basis, first, 2, box=box)
    assert fine.width <= first.width
    assert fine.contains(diagonalize(V, k=1)[0])


def test_depth_nesting_projected():
    V = PolynomialPotential.anharmonic(1, 2)
    e = np.linspace(0.5, 4.0, 71)
    prev = None
    for depth in (5, 7, 9):
        f = scan_energy(V, BasisSpec.default(depth), e[0], e[-1], e.size, [0.0], [1.5]).feasible
        if prev is not None:
            assert not np.any(f & ~prev)
        prev = f


def test_empty_box_all_false():
    V = PolynomialPotential.anharmonic(1, 2)
    box = SearchBox(("E", "x2"), (0.5, 1.0), (0.5, 1.0), (1, 1))
    grid = scan(V, BasisSpec.default(6), box)
    assert not grid.feasible.any()
    assert extract_islands(grid) == []


def test_tolerance_scaling_and_determinism():
    V = PolynomialPotential.anharmonic(1, 2)
    basis = BasisSpec.default(6)
    tight = scan(V, basis, QBOX, tol=1e-9)
    loose = scan(V, basis, QBOX, tol=1e-8)
    assert not np.any(tight.feasible & ~loose.feasible)
    again = scan(V, basis, QBOX, tol=1e-9)
    np.testing.assert_array_equal(tight.min_eig, again.min_eig)


def test_refine_zero_levels_identity():
    V = PolynomialPotential.anharmonic(1, 2)
    isl = extract_islands(scan(V, BasisSpec.default(6), QBOX))[0]
    assert refine(V, BasisSpec.default(6), isl, 0) is isl
