"""Coupling sweeps: lowest two levels, gaps and their g-derivatives."""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .bootstrap import DEFAULT_TOL, BasisSpec, BootstrapError
from .opalg import PolynomialPotential
from .scan import Island, SearchBox, default_box, locate_islands, potential_minimum, refine

log = logging.getLogger(__name__)

CSV_COLUMNS = ("g", "n", "depth", "E0", "E0_err", "E1", "E1_err", "gap_raw", "gap_anharmonic", "gap_err")


@dataclass(frozen=True)
class SolveConfig:
    """Numerical settings for one spectrum point.

    ``spacing`` is the energy lattice step used to bracket islands before
    bisection. If fewer than two levels separate at ``depth``, the depth is
    raised in steps of ``depth_step`` up to ``max_depth``.
    """

    depth: int = 13
    kp: int = 2
    kx: int | None = None
    tol: float = DEFAULT_TOL
    e_width: float = 10.0
    spacing: float = 0.05
    refine_levels: int = 0
    max_depth: int | None = None
    depth_step: int = 3
    xtol: float = 1e-10

    def basis(self, depth: int | None = None) -> BasisSpec:
        d = self.depth if depth is None else depth
        if self.kx is None:
            return BasisSpec.default(d, self.kp)
        return BasisSpec(self.kx, self.kp, d)


@dataclass
class SpectrumPoint:
    g: float
    n: int
    E0: float
    E1: float
    E0_err: float
    E1_err: float
    depth: int
    islands: tuple[Island, ...] = field(default=(), repr=False)

    def __post_init__(self):
        if not self.E1 > self.E0:
            raise ValueError(f"E1={self.E1} must exceed E0={self.E0}")
        if self.E0_err < 0 or self.E1_err < 0:
            raise ValueError("uncertainties must be non-negative")


@dataclass(frozen=True)
class GapSample:
    """``gap_anharmonic`` removes the harmonic spacing ``sqrt(2g)`` for ``g >= 0`` only."""

    g: float
    n: int
    depth: int
    E0: float
    E0_err: float
    E1: float
    E1_err: float
    gap_raw: float
    gap_anharmonic: float
    gap_err: float

    def row(self) -> tuple:
        return (self.g, self.n, self.depth, self.E0, self.E0_err, self.E1, self.E1_err,
                self.gap_raw, self.gap_anharmonic, self.gap_err)


@dataclass
class GapCurve:
    samples: list[GapSample]
    n: int
    depth: int
    tol: float
    failures: list[tuple[float, str]] = field(default_factory=list)

    def __post_init__(self):
        gs = [s.g for s in self.samples]
        if any(b <= a for a, b in zip(gs, gs[1:])):
            raise ValueError("gap curve g values must be strictly increasing")

    @property
    def g(self) -> np.ndarray:
        return np.array([s.g for s in self.samples])

    @property
    def gap(self) -> np.ndarray:
        return np.array([s.gap_anharmonic for s in self.samples])

    @property
    def err(self) -> np.ndarray:
        return np.array([s.gap_err for s in self.samples])


def solve_point(
    g: float,
    n: int,
    config: SolveConfig | None = None,
    box: SearchBox | None = None,
    e_window: tuple[float, float] | None = None,
) -> SpectrumPoint:
    """E0 and E1 of ``p^2/2 + g x^2 + x^(2n)`` from the two lowest bootstrap islands.

    ``box`` overrides the energy window and seed bounds; ``e_window`` only the
    energy window. Island widths are reported as uncertainties.
    """
    cfg = config or SolveConfig()
    if n < 2:
        raise ValueError("anharmonicity order n must be >= 2")
    V = PolynomialPotential.anharmonic(g, n)
    if box is None:
        box = default_box(V, width=cfg.e_width)
    e_lo, e_hi = (box.lo[0], box.hi[0]) if e_window is None else e_window
    seed_lo, seed_hi = box.seed_bounds()
    if e_window is not None:
        seed_hi = np.maximum(seed_hi, default_box(V, width=e_hi - potential_minimum(V)).seed_bounds()[1])
    count = max(int(math.ceil((e_hi - e_lo) / cfg.spacing)) + 1, 11)
    last = cfg.max_depth if cfg.max_depth is not None else cfg.depth
    depth = cfg.depth
    while True:
        basis = cfg.basis(depth)
        islands = locate_islands(V, basis, e_lo, e_hi, seed_lo, seed_hi, count=count, tol=cfg.tol, xtol=cfg.xtol)
        resolved = len(islands) >= 2 and not islands[1].touches_boundary
        if resolved or depth + cfg.depth_step > last:
            break
        depth += cfg.depth_step
        log.info("g=%g n=%d: raising depth to %d", g, n, depth)
    if len(islands) < 2:
        raise BootstrapError(
            f"g={g} n={n}: found {len(islands)} island(s) in E=[{e_lo:.6g}, {e_hi:.6g}] at depth {depth}; "
            "widen the box or raise the depth"
        )
    low = islands[:2]
    if any(isl.touches_boundary for isl in low):
        raise BootstrapError(
            f"g={g} n={n}: an island touches the search box edge at depth {depth} "
            f"(E0 in [{low[0].e_min:.6g}, {low[0].e_max:.6g}], E1 in [{low[1].e_min:.6g}, {low[1].e_max:.6g}]); "
            "the box is too small or the depth too low"
        )
    if cfg.refine_levels:
        low = [refine(V, basis, isl, cfg.refine_levels, cfg.tol, box=box) for isl in low]
    return SpectrumPoint(
        g=float(g),
        n=n,
        E0=low[0].energy,
        E1=low[1].energy,
        E0_err=low[0].width,
        E1_err=low[1].width,
        depth=depth,
        islands=tuple(low),
    )


def gap(point: SpectrumPoint) -> GapSample:
    raw = point.E1 - point.E0
    anh = raw - math.sqrt(2 * point.g) if point.g >= 0 else raw
    return GapSample(point.g, point.n, point.depth, point.E0, point.E0_err, point.E1, point.E1_err,
                     raw, anh, point.E0_err + point.E1_err)


def _solve_task(args):
    g, n, cfg = args
    try:
        return gap(solve_point(g, n, cfg)), None
    except (BootstrapError, ValueError) as exc:
        return None, str(exc)


def sweep(
    g_values: Sequence[float],
    n: int,
    config: SolveConfig | None = None,
    workers: int = 1,
    warm_start: bool = True,
) -> GapCurve:
    """Solve every ``g`` in order; failures are recorded per point rather than raised.

    Sequential sweeps narrow each energy window from the previous point's
    levels and fall back to the default window if that fails.
    """
    cfg = config or SolveConfig()
    gs = [float(g) for g in g_values]
    if any(b <= a for a, b in zip(gs, gs[1:])):
        raise ValueError("g values must be strictly increasing")
    samples: list[GapSample] = []
    failures: list[tuple[float, str]] = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_solve_task, [(g, n, cfg) for g in gs]))
        for g, (sample, err) in zip(gs, results):
            if sample is None:
                failures.append((g, err))
            else:
                samples.append(sample)
    else:
        prev: GapSample | None = None
        for g in gs:
            sample = None
            if warm_start and prev is not None:
                V = PolynomialPotential.anharmonic(g, n)
                vmin = potential_minimum(V)
                vprev = potential_minimum(PolynomialPotential.anharmonic(prev.g, n))
                top = vmin + 3.0 * (prev.E1 - vprev) + 1.0
                if top < vmin + cfg.e_width:
                    try:
                        sample = gap(solve_point(g, n, cfg, e_window=(vmin, top)))
                    except BootstrapError as exc:
                        log.info("warm start failed at g=%g: %s", g, exc)
            if sample is None:
                sample, err = _solve_task((g, n, cfg))
                if sample is None:
                    log.warning("g=%g failed: %s", g, err)
                    failures.append((g, err))
                    continue
            samples.append(sample)
            prev = sample
    if not samples:
        raise BootstrapError(f"every sweep point failed; first error: {failures[0][1]}")
    return GapCurve(samples, n, cfg.depth, cfg.tol, failures)


@dataclass(frozen=True)
class Derivative:
    """Finite-difference derivative of the gap at ``g``.

    ``left``/``right`` use only points on one side (backward/forward
    stencils); ``value`` is the central estimate, NaN at ``g = 0`` where the
    two phases meet.
    """

    g: float
    value: float
    left: float
    right: float


def _stencil_derivative(xs: np.ndarray, ys: np.ndarray, at: float) -> float:
    """Derivative at ``at`` of the interpolating polynomial through 2 or 3 points."""
    if len(xs) == 2:
        return float((ys[1] - ys[0]) / (xs[1] - xs[0]))
    total = 0.0
    for j in range(3):
        others = [xs[m] for m in range(3) if m != j]
        denom = np.prod([xs[j] - o for o in others])
        total += ys[j] * ((at - others[0]) + (at - others[1])) / denom
    return float(total)


def susceptibility(curve: GapCurve | tuple[Sequence[float], Sequence[float]]) -> list[Derivative]:
    """Second-order finite differences of the gap, never mixing ``g < 0`` with ``g > 0``."""
    if isinstance(curve, GapCurve):
        g, y = curve.g, curve.gap
    else:
        g, y = np.asarray(curve[0], dtype=float), np.asarray(curve[1], dtype=float)
    if len(g) < 3:
        raise ValueError("need at least 3 points")
    if np.any(np.diff(g) <= 0):
        raise ValueError("g grid must be strictly increasing")
    out = []
    for i, gi in enumerate(g):
        # neighbours must share the phase of gi; g = 0 belongs to both sides
        left_ok = [j for j in range(i) if gi <= 0 or g[j] >= 0]
        right_ok = [j for j in range(i + 1, len(g)) if gi >= 0 or g[j] <= 0]
        lsel = left_ok[-2:]
        rsel = right_ok[:2]
        left = _stencil_derivative(g[lsel + [i]], y[lsel + [i]], gi) if lsel else math.nan
        right = _stencil_derivative(g[[i] + rsel], y[[i] + rsel], gi) if rsel else math.nan
        if gi != 0 and lsel and rsel:
            c = [lsel[-1], i, rsel[0]]
            value = _stencil_derivative(g[c], y[c], gi)
        elif gi == 0:
            value = math.nan
        else:
            value = left if not rsel else right
        out.append(Derivative(float(gi), value, left, right))
    return out


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def write_curve_csv(curve: GapCurve, fh, comment: str | None = None) -> None:
    if comment:
        for line in comment.splitlines():
            fh.write(f"# {line}\n")
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for s in curve.samples:
        writer.writerow([_fmt(v) for v in s.row()])


def read_curve_csv(fh) -> GapCurve:
    lines = [ln for ln in fh if ln.strip() and not ln.startswith("#")]
    reader = csv.DictReader(lines)
    missing = set(CSV_COLUMNS) - set(reader.fieldnames or ())
    if missing:
        raise ValueError(f"sweep CSV is missing columns {sorted(missing)}")
    samples = []
    for row in reader:
        samples.append(
            GapSample(
                g=float(row["g"]),
                n=int(row["n"]),
                depth=int(row["depth"]),
                E0=float(row["E0"]),
                E0_err=float(row["E0_err"]),
                E1=float(row["E1"]),
                E1_err=float(row["E1_err"]),
                gap_raw=float(row["gap_raw"]),
                gap_anharmonic=float(row["gap_anharmonic"]),
                gap_err=float(row["gap_err"]),
            )
        )
    if not samples:
        raise ValueError("sweep CSV has no rows")
    return GapCurve(samples, samples[0].n, samples[0].depth, DEFAULT_TOL)


def default_g_grid(negative: bool = False) -> list[float]:
    pos = [round(0.2 * i, 10) for i in range(26)]
    if not negative:
        return pos
    return [-g for g in reversed(pos[1:])] + pos
