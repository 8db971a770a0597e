import io
import math

import numpy as np
import pytest

from qmboot.bootstrap import BootstrapError
from qmboot.opalg import PolynomialPotential
from qmboot.oracle import diagonalize
from qmboot.scan import SearchBox
from qmboot.spectra import (
    GapCurve,
    GapSample,
    SolveConfig,
    SpectrumPoint,
    default_g_grid,
    gap,
    read_curve_csv,
    solve_point,
    susceptibility,
    write_curve_csv,
)


def sample(g, y, n=2):
    return GapSample(g, n, 13, 1.0, 0.0, 1.0 + y, 0.0, y, y, 0.0)


def test_solve_point_quartic_matches_oracle():
    pt = solve_point(1.0, 2)
    ref = diagonalize(PolynomialPotential.anharmonic(1, 2), k=2)
    assert abs(pt.E0 - ref[0]) <= 1e-3
    assert abs(pt.E1 - ref[1]) <= 3e-3
    assert pt.E0_err >= 0 and pt.depth == 13


def test_solve_point_pure_quartic():
    assert solve_point(0.0, 2).E0 == pytest.approx(0.667986, abs=1e-3)


def test_solve_point_double_well():
    pt = solve_point(-2.0, 2)
    ref = diagonalize(PolynomialPotential.anharmonic(-2, 2), k=2)
    np.testing.assert_allclose([pt.E0, pt.E1], ref, atol=3e-3)
    assert gap(pt).gap_anharmonic == gap(pt).gap_raw


def test_solve_point_box_too_small():
    box = SearchBox(("E", "x2"), (0.0, 0.0), (1.5, 1.0), (11, 11))
    with pytest.raises(BootstrapError, match="island"):
        solve_point(1.0, 2, box=box)


def test_gap_conventions():
    pt = SpectrumPoint(2.0, 2, 1.0, 4.0, 1e-4, 2e-4, 13)
    s = gap(pt)
    assert s.gap_raw == 3.0
    assert s.gap_anharmonic == 3.0 - math.sqrt(4.0)
    assert s.gap_err == pytest.approx(3e-4)
    with pytest.raises(ValueError):
        SpectrumPoint(1.0, 2, 2.0, 1.0, 0.0, 0.0, 13)


def test_curve_requires_increasing_g():
    with pytest.raises(ValueError):
        GapCurve([sample(0.2, 1.0), sample(0.2, 0.9)], 2, 13, 1e-9)


def test_susceptibility_second_order():
    f = lambda g: np.exp(-g) * np.cos(g)  # noqa: E731
    df = lambda g: -np.exp(-g) * (np.cos(g) + np.sin(g))  # noqa: E731
    errs = []
    for h in (0.1, 0.05, 0.025):
        g = np.arange(0, 1 + h / 2, h)
        d = {round(x.g, 9): x for x in susceptibility((g, f(g)))}
        at = d[0.5]
        errs.append(max(abs(at.value - df(0.5)), abs(at.right - df(0.5)), abs(at.left - df(0.5))))
    assert errs[0] / errs[1] == pytest.approx(4, rel=0.25)
    assert errs[1] / errs[2] == pytest.approx(4, rel=0.25)


def test_susceptibility_keeps_phases_apart():
    g = np.array(default_g_grid(negative=True))
    y = np.where(g < 0, 2 * g + g**2, -g)  # kink at g = 0
    d = susceptibility((g, y))
    by_g = {round(x.g, 9): x for x in d}
    assert by_g[0.0].right == pytest.approx(-1.0)
    assert by_g[0.0].left == pytest.approx(2.0)
    assert math.isnan(by_g[0.0].value)
    assert by_g[-0.2].value == pytest.approx(2.0 - 0.4)
    assert by_g[0.2].value == pytest.approx(-1.0)


def test_csv_round_trip():
    curve = GapCurve([sample(0.0, 1.7), sample(0.2, 1.1 + 1e-13)], 2, 13, 1e-9)
    buf = io.StringIO()
    write_curve_csv(curve, buf, comment="hello\nworld")
    buf.seek(0)
    back = read_curve_csv(buf)
    assert back.samples == curve.samples


def test_default_grid():
    g = default_g_grid()
    assert len(g) == 26 and g[0] == 0.0 and g[-1] == 5.0
    assert len(default_g_grid(negative=True)) == 51


def test_solve_config_basis():
    cfg = SolveConfig(depth=9)
    assert cfg.basis().depth == 9 and cfg.basis(12).depth == 12


def test_susceptibility_linear():
    g = np.linspace(0, 2, 11)
    d = susceptibility((g, 3 * g))
    vals = [x.value for x in d[1:]] + [x.right for x in d[:-1]] + [x.left for x in d[1:]]
    np.testing.assert_allclose(vals, 3.0)
    with pytest.raises(ValueError):
        susceptibility((g[::-1], g))


def test_gap_example_pure_anharmonic():
    assert gap(SpectrumPoint(0.0, 2, 0.5, 1.5, 0.0, 0.0, 13)).gap_anharmonic == 1.0


def test_single_point_sweep_and_determinism():
    from qmboot.spectra import sweep

    a = sweep([1.0], 2, SolveConfig(depth=10))
    b = sweep([1.0], 2, SolveConfig(depth=10))
    assert len(a.samples) == 1
    assert a.samples == b.samples
