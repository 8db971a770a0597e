"""Feasibility scans over the search space and island extraction.

Two scan modes share the same grid and island types:

* :func:`scan` evaluates the positivity test on every point of a full
  ``(E, seeds...)`` lattice. This is the raw data behind band plots.
* :func:`scan_energy` puts the lattice on ``E`` only and, at each energy,
  maximises the minimum eigenvalue over the seed box (the feasible seeds form
  a convex set at fixed ``E``). Islands narrower than any affordable seed
  lattice are still resolved this way.

:func:`locate_islands` adds bracketed peak searches and endpoint bisection on
top of :func:`scan_energy`, giving energy intervals outside of which no
eigenvalue can lie at the given depth and tolerance.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage, optimize

from .bootstrap import DEFAULT_TOL, BasisSpec, BootstrapError, MatrixTemplate, template
from .opalg import PolynomialPotential
from .seedopt import maximize_min_eigenvalue

log = logging.getLogger(__name__)


def axis_names(V: PolynomialPotential) -> tuple[str, ...]:
    return ("E",) + tuple(f"x{k}" for k in V.seed_powers())


@dataclass(frozen=True)
class SearchBox:
    """Closed intervals and lattice counts, one per axis (``E`` first, then seeds)."""

    axes: tuple[str, ...]
    lo: tuple[float, ...]
    hi: tuple[float, ...]
    counts: tuple[int, ...]

    def __post_init__(self):
        n = len(self.axes)
        if not (len(self.lo) == len(self.hi) == len(self.counts) == n):
            raise ValueError("axes, lo, hi and counts must have equal length")
        if any(h < l for l, h in zip(self.lo, self.hi)):
            raise ValueError("search box has hi < lo")
        if any(c < 1 for c in self.counts):
            raise ValueError("lattice counts must be >= 1")
        if self.axes[0] != "E":
            raise ValueError("first axis must be the energy")

    @property
    def ndim(self) -> int:
        return len(self.axes)

    def coords(self) -> list[np.ndarray]:
        return [np.linspace(l, h, c) for l, h, c in zip(self.lo, self.hi, self.counts)]

    def spacing(self) -> tuple[float, ...]:
        return tuple((h - l) / (c - 1) if c > 1 else 0.0 for l, h, c in zip(self.lo, self.hi, self.counts))

    def with_axis(self, name: str, lo: float, hi: float, count: int | None = None) -> "SearchBox":
        i = self.axes.index(name)
        los, his, cs = list(self.lo), list(self.hi), list(self.counts)
        los[i], his[i] = float(lo), float(hi)
        if count is not None:
            cs[i] = int(count)
        return SearchBox(self.axes, tuple(los), tuple(his), tuple(cs))

    def seed_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return np.array(self.lo[1:], dtype=float), np.array(self.hi[1:], dtype=float)


def seed_upper_bounds(V: PolynomialPotential, e_max: float) -> np.ndarray:
    """Rigorous upper bounds on the seed moments of any state with ``E <= e_max``.

    Kinetic energy is non-negative, so ``<V> <= E``. For ``V = g x^2 + x^(2n)``
    with ``u = <x^(2n)>`` and ``<x^(2k)> <= u^(k/n)`` this gives
    ``u - max(-g, 0) u^(1/n) <= e_max``. Only the anharmonic family is handled.
    """
    if not V.seed_powers():
        return np.zeros(0)
    cs = V.coeffs
    d = V.degree
    n = d // 2
    if not V.is_even or cs[-1] != 1 or any(c for k, c in enumerate(cs[:-1]) if k not in (0, 2)):
        raise ValueError("automatic seed bounds need V = g x^2 + x^(2n) (+ const); pass an explicit box")
    g = float(cs[2]) if len(cs) > 2 else 0.0
    e = e_max - (float(cs[0]) if cs else 0.0)
    neg = max(-g, 0.0)
    # largest root of u - neg * u^(1/n) = e
    f = lambda u: u - neg * u ** (1.0 / n) - e  # noqa: E731
    hi = max(1.0, e, 1.0)
    while f(hi) < 0:
        hi *= 2
    u = optimize.brentq(f, 0.0, hi) if f(0.0) < 0 else hi
    bounds = np.array([u ** (k / (2.0 * n)) for k in V.seed_powers()])
    if g > 0:
        bounds[0] = min(bounds[0], max(e, 0.0) / g)
    return bounds


def default_box(V: PolynomialPotential, width: float = 10.0, counts: Sequence[int] | None = None) -> SearchBox:
    """Energy window ``[min V, min V + width]`` and seed boxes from :func:`seed_upper_bounds`."""
    vmin = potential_minimum(V)
    e_lo, e_hi = vmin, vmin + width
    try:
        seed_hi = 1.05 * seed_upper_bounds(V, e_hi)
    except ValueError:
        seed_hi = np.array([2.0, 4.0, 10.0, 20.0][: len(V.seed_powers())])
    axes = axis_names(V)
    if counts is None:
        counts = (201,) + (41,) * (len(axes) - 1)
    return SearchBox(axes, (e_lo,) + (0.0,) * len(seed_hi), (e_hi,) + tuple(float(h) for h in seed_hi), tuple(counts))


def potential_minimum(V: PolynomialPotential) -> float:
    """Global minimum of a confining polynomial (a strict lower bound for every eigenvalue)."""
    dv = [float(c) for c in V.derivative().coeffs]
    roots = np.roots(dv[::-1]) if len(dv) > 1 else np.array([])
    cands = [0.0] + [r.real for r in roots if abs(r.imag) < 1e-9]
    return float(min(V(x) for x in cands))


@dataclass
class FeasibilityGrid:
    """Boolean feasibility over a lattice with the (normalised) minimum eigenvalue per point.

    For projected grids (``projected=True``) the lattice is over ``E`` only and
    ``witness`` holds the best seeds found at each energy.
    """

    box: SearchBox
    feasible: np.ndarray
    min_eig: np.ndarray
    depth: int
    tol: float
    projected: bool = False
    witness: np.ndarray | None = None
    seed_axes: tuple[str, ...] = ()

    def to_csv(self, fh=None) -> str:
        """One row per lattice point: coordinates..., feasible (0/1), min_eigenvalue."""
        buf = fh if fh is not None else io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        header = list(self.box.axes)
        if self.projected:
            header += [f"{a}_witness" for a in self.seed_axes]
        writer.writerow(header + ["feasible", "min_eigenvalue"])
        coords = self.box.coords()
        for idx in np.ndindex(*self.feasible.shape):
            row = [_fmt(coords[k][i]) for k, i in enumerate(idx)]
            if self.projected and self.witness is not None:
                row += [_fmt(v) for v in self.witness[idx[0]]]
            row += [int(self.feasible[idx]), _fmt(self.min_eig[idx])]
            writer.writerow(row)
        return buf.getvalue() if fh is None else ""


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


@dataclass
class Island:
    """A connected set of feasible points and its energy interval.

    ``e_min``/``e_max`` bound the feasible energies, ``centroid`` lists ``E``
    followed by seed moments, ``extent`` the width along each axis.
    """

    e_min: float
    e_max: float
    centroid: tuple[float, ...]
    extent: tuple[float, ...]
    axes: tuple[str, ...]
    depth: int
    tol: float
    points: int = 1
    merged: bool = False
    touches_boundary: bool = False

    @property
    def energy(self) -> float:
        return self.centroid[0]

    @property
    def width(self) -> float:
        return self.e_max - self.e_min

    def contains(self, energy: float) -> bool:
        return self.e_min <= energy <= self.e_max

    def to_json(self) -> dict:
        return {
            "E_min": self.e_min,
            "E_max": self.e_max,
            "centroid": list(self.centroid),
            "extent": list(self.extent),
            "axes": list(self.axes),
            "depth": self.depth,
            "tol": self.tol,
            "points": self.points,
            "merged": self.merged,
            "touches_boundary": self.touches_boundary,
        }


def _scan_chunk(args):
    V, basis, pts = args
    tpl = template(V, basis)
    return tpl.min_eigenvalues(pts[:, 0], pts[:, 1:])


def scan(
    V: PolynomialPotential,
    basis: BasisSpec,
    box: SearchBox,
    tol: float = DEFAULT_TOL,
    workers: int = 1,
    chunk: int = 16384,
) -> FeasibilityGrid:
    """Positivity test at every point of the full search lattice."""
    tpl = template(V, basis)
    if box.ndim != tpl.n_seeds + 1:
        raise ValueError(f"search box has {box.ndim} axes, potential needs {tpl.n_seeds + 1} (E + seeds)")
    coords = box.coords()
    mesh = np.meshgrid(*coords, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    pieces = [pts[i : i + chunk] for i in range(0, pts.shape[0], chunk)]
    try:
        if workers > 1 and len(pieces) > 1:
            with ProcessPoolExecutor(max_workers=workers) as ex:
                lam = np.concatenate(list(ex.map(_scan_chunk, [(V, basis, p) for p in pieces])))
        else:
            lam = np.concatenate([tpl.min_eigenvalues(p[:, 0], p[:, 1:]) for p in pieces]) if pieces else np.empty(0)
    except BootstrapError as exc:
        raise BootstrapError(f"scan failed in box {box}: {exc}") from exc
    lam = lam.reshape(box.counts)
    return FeasibilityGrid(box, lam >= -tol, lam, basis.depth, tol)


def scan_energy(
    V: PolynomialPotential,
    basis: BasisSpec,
    e_lo: float,
    e_hi: float,
    count: int,
    seed_lo: Sequence[float],
    seed_hi: Sequence[float],
    tol: float = DEFAULT_TOL,
) -> FeasibilityGrid:
    """Projected scan: at each lattice energy, maximise positivity over the seed box."""
    tpl = template(V, basis)
    energies = np.linspace(e_lo, e_hi, count)
    res = maximize_min_eigenvalue(tpl, energies, seed_lo, seed_hi, tol=tol)
    box = SearchBox(("E",), (float(e_lo),), (float(e_hi),), (int(count),))
    seeds = axis_names(V)[1:]
    return FeasibilityGrid(box, res.feasible(tol), res.best, basis.depth, tol, True, res.witness, seeds)


def extract_islands(grid: FeasibilityGrid, merge_gap: int = 1) -> list[Island]:
    """Face-connected components of the feasible lattice, sorted by centroid energy.

    Components separated by fewer than ``merge_gap + 1`` empty cells are merged
    and flagged, which suppresses spurious splitting from lattice noise.
    """
    mask = np.asarray(grid.feasible, dtype=bool)
    if mask.size == 0:
        raise ValueError("empty feasibility grid")
    labels, nlab = ndimage.label(mask)
    if nlab == 0:
        return []
    if merge_gap > 0 and nlab > 1:
        grown = ndimage.binary_dilation(mask, structure=np.ones((3,) * mask.ndim), iterations=merge_gap)
        glabels, _ = ndimage.label(grown)
        merged_map = {}
        for lab in range(1, nlab + 1):
            first = tuple(np.argwhere(labels == lab)[0])
            merged_map.setdefault(glabels[first], []).append(lab)
        groups = list(merged_map.values())
    else:
        groups = [[lab] for lab in range(1, nlab + 1)]
    coords = grid.box.coords()
    spacing = grid.box.spacing()
    islands = []
    for group in groups:
        sel = np.isin(labels, group)
        idx = np.argwhere(sel)
        pts = np.stack([coords[k][idx[:, k]] for k in range(mask.ndim)], axis=1)
        lo_pts, hi_pts = pts.min(axis=0), pts.max(axis=0)
        half = np.array(spacing) / 2
        lo_b = np.maximum(lo_pts - half, np.array(grid.box.lo))
        hi_b = np.minimum(hi_pts + half, np.array(grid.box.hi))
        centroid = pts.mean(axis=0)
        touches = bool(
            np.any(idx.min(axis=0) == 0) and np.any(np.array(grid.box.counts) > 1)
            or np.any(idx.max(axis=0) == np.array(grid.box.counts) - 1)
        )
        if grid.projected and grid.witness is not None:
            w = grid.witness[idx[:, 0]]
            centroid = np.concatenate([centroid, w.mean(axis=0)])
            extent = np.concatenate([hi_b - lo_b, w.max(axis=0) - w.min(axis=0)])
            axes = grid.box.axes + grid.seed_axes
        else:
            extent = hi_b - lo_b
            axes = grid.box.axes
        islands.append(
            Island(
                e_min=float(lo_b[0]),
                e_max=float(hi_b[0]),
                centroid=tuple(float(c) for c in centroid),
                extent=tuple(float(e) for e in extent),
                axes=tuple(axes),
                depth=grid.depth,
                tol=grid.tol,
                points=int(idx.shape[0]),
                merged=len(group) > 1,
                touches_boundary=touches,
            )
        )
    islands.sort(key=lambda isl: isl.centroid[0])
    return islands


class EnergyProbe:
    """Projected feasibility ``lambda*(E)`` for one template and seed box, with a small cache."""

    def __init__(self, tpl: MatrixTemplate, seed_lo, seed_hi, tol: float):
        self.tpl = tpl
        self.seed_lo = np.asarray(seed_lo, dtype=float)
        self.seed_hi = np.asarray(seed_hi, dtype=float)
        self.tol = tol
        self._cache: dict[float, tuple[float, np.ndarray]] = {}

    def many(self, energies: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        energies = np.asarray(energies, dtype=float)
        todo = [e for e in energies if float(e) not in self._cache]
        if todo:
            res = maximize_min_eigenvalue(self.tpl, np.array(todo), self.seed_lo, self.seed_hi, tol=self.tol)
            for e, b, w in zip(todo, res.best, res.witness):
                self._cache[float(e)] = (float(b), w)
        lam = np.array([self._cache[float(e)][0] for e in energies])
        wit = np.array([self._cache[float(e)][1] for e in energies]).reshape(len(energies), -1)
        return lam, wit

    def __call__(self, energy: float) -> float:
        return float(self.many(np.array([energy]))[0][0])

    def feasible(self, energy: float) -> bool:
        return self(energy) >= -self.tol


def _bisect_edge(probe: EnergyProbe, inside: float, outside: float, xtol: float) -> float:
    """Boundary of the feasible set between a feasible and an infeasible energy."""
    a, b = inside, outside
    for _ in range(200):
        if abs(b - a) <= xtol:
            break
        m = 0.5 * (a + b)
        if probe.feasible(m):
            a = m
        else:
            b = m
    return a


def _golden_max(probe: EnergyProbe, a: float, b: float, xtol: float, stop: float) -> tuple[float, float]:
    """Golden-section search for the peak of ``lambda*(E)`` on ``[a, b]``.

    Peaks at eigenvalues are cusps, where interpolating minimisers stall;
    plain section search only needs unimodality. Stops early once the value
    reaches ``stop``.
    """
    inv = (math.sqrt(5) - 1) / 2
    c, d = b - inv * (b - a), a + inv * (b - a)
    fc, fd = probe(c), probe(d)
    while b - a > xtol:
        if max(fc, fd) >= stop:
            break
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - inv * (b - a)
            fc = probe(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv * (b - a)
            fd = probe(d)
    return (c, fc) if fc >= fd else (d, fd)


def locate_islands(
    V: PolynomialPotential,
    basis: BasisSpec,
    e_lo: float,
    e_hi: float,
    seed_lo: Sequence[float],
    seed_hi: Sequence[float],
    count: int = 81,
    tol: float = DEFAULT_TOL,
    xtol: float = 1e-10,
    max_peaks: int = 12,
) -> list[Island]:
    """Energy islands in ``[e_lo, e_hi]`` with bisected endpoints.

    Feasible lattice runs are kept; infeasible local maxima of ``lambda*(E)``
    are searched for narrow islands that fall between lattice points.
    """
    tpl = template(V, basis)
    probe = EnergyProbe(tpl, seed_lo, seed_hi, tol)
    energies = np.linspace(e_lo, e_hi, count)
    lam, _ = probe.many(energies)
    feas = lam >= -tol
    h = energies[1] - energies[0] if count > 1 else 0.0

    seeds_found: list[float] = []
    # candidate narrow islands: interior local maxima that are not feasible
    peaks = [
        i for i in range(1, count - 1) if not feas[i] and lam[i] >= lam[i - 1] and lam[i] >= lam[i + 1]
    ]
    peaks.sort(key=lambda i: -lam[i])
    for i in peaks[:max_peaks]:
        e_star, val = _golden_max(probe, energies[i - 1], energies[i + 1], xtol=min(h * 1e-9, 1e-12), stop=-tol)
        if val >= -tol:
            seeds_found.append(e_star)
    # a maximum may also sit between a boundary sample and its neighbour
    for i, j in ((0, 1), (count - 1, count - 2)):
        if count > 2 and not feas[i] and lam[i] > lam[j]:
            e_star, val = _golden_max(probe, min(energies[i], energies[j]), max(energies[i], energies[j]), min(h * 1e-9, 1e-12), -tol)
            if val >= -tol:
                seeds_found.append(e_star)

    # intervals: runs of feasible lattice points plus isolated peak seeds
    intervals: list[list[float]] = []
    run = None
    for i in range(count):
        if feas[i]:
            run = [i, i] if run is None else [run[0], i]
        elif run is not None:
            intervals.append(run)
            run = None
    if run is not None:
        intervals.append(run)

    islands: list[Island] = []
    for a, b in intervals:
        left = energies[a] if a == 0 else _bisect_edge(probe, energies[a], energies[a - 1], xtol)
        right = energies[b] if b == count - 1 else _bisect_edge(probe, energies[b], energies[b + 1], xtol)
        islands.append(_energy_island(probe, left, right, a == 0 or b == count - 1, basis, b - a + 1))
    for e_star in seeds_found:
        if any(isl.e_min <= e_star <= isl.e_max for isl in islands):
            continue
        k = np.searchsorted(energies, e_star)
        below = energies[max(k - 1, 0)]
        above = energies[min(k, count - 1)]
        left = _bisect_edge(probe, e_star, below, xtol) if below < e_star else e_star
        right = _bisect_edge(probe, e_star, above, xtol) if above > e_star else e_star
        islands.append(_energy_island(probe, left, right, False, basis, 0))
    islands.sort(key=lambda isl: isl.e_min)
    return _merge_overlaps(islands)


def _energy_island(probe: EnergyProbe, left: float, right: float, touches: bool, basis: BasisSpec, points: int) -> Island:
    mid = 0.5 * (left + right)
    lam, wit = probe.many(np.array([left, mid, right]))
    ok = lam >= -probe.tol
    w = wit[ok] if np.any(ok) else wit
    seeds = wit[1] if ok[1] else w.mean(axis=0)
    axes = axis_names(probe.tpl.V)
    return Island(
        e_min=float(left),
        e_max=float(right),
        centroid=(float(mid),) + tuple(float(s) for s in seeds),
        extent=(float(right - left),) + tuple(float(x) for x in (w.max(axis=0) - w.min(axis=0))),
        axes=axes,
        depth=basis.depth,
        tol=probe.tol,
        points=points,
        touches_boundary=touches,
    )


def _merge_overlaps(islands: list[Island]) -> list[Island]:
    out: list[Island] = []
    for isl in islands:
        if out and isl.e_min <= out[-1].e_max:
            prev = out[-1]
            lo, hi = min(prev.e_min, isl.e_min), max(prev.e_max, isl.e_max)
            out[-1] = Island(
                lo,
                hi,
                ((lo + hi) / 2,) + prev.centroid[1:],
                (hi - lo,) + prev.extent[1:],
                prev.axes,
                prev.depth,
                prev.tol,
                prev.points + isl.points,
                True,
                prev.touches_boundary or isl.touches_boundary,
            )
        else:
            out.append(isl)
    return out


def refine(
    V: PolynomialPotential,
    basis: BasisSpec,
    island: Island,
    levels: int,
    tol: float = DEFAULT_TOL,
    box: SearchBox | None = None,
    count: int = 41,
    pad_cells: float = 1.0,
) -> Island:
    """Re-scan a padded bounding box of ``island`` at finer resolution, ``levels`` times.

    Lattice islands (every axis in ``island.axes`` is a lattice axis) are
    re-scanned on the full lattice; energy islands use :func:`locate_islands`
    inside the padded energy window with the seed bounds of ``box``.
    """
    if levels <= 0:
        return island
    current = island
    full_axes = axis_names(V)
    lattice_mode = box is not None and len(island.axes) == box.ndim and island.points > 0 and box.counts[1:] != ()
    for level in range(levels):
        if lattice_mode:
            lo = np.array(current.centroid) - np.array(current.extent) / 2
            hi = np.array(current.centroid) + np.array(current.extent) / 2
            spacing = (hi - lo) / max(count - 1, 1)
            lo = np.maximum(lo - pad_cells * spacing, np.array(box.lo))
            hi = np.minimum(hi + pad_cells * spacing, np.array(box.hi))
            sub = SearchBox(box.axes, tuple(lo), tuple(hi), (count,) * box.ndim)
            grid = scan(V, basis, sub, tol)
            found = extract_islands(grid, merge_gap=0)
            if not found:
                raise BootstrapError(
                    f"island at E~{current.energy:.6g} vanished at refinement level {level + 1}; "
                    "loosen tol or lower the depth"
                )
            pts = np.argwhere(grid.feasible)
            coords = sub.coords()
            vals = np.stack([coords[k][pts[:, k]] for k in range(sub.ndim)], axis=1)
            sp = np.array(sub.spacing())
            lo_b = np.maximum(vals.min(axis=0) - sp / 2, lo)
            hi_b = np.minimum(vals.max(axis=0) + sp / 2, hi)
            current = Island(
                float(lo_b[0]),
                float(hi_b[0]),
                tuple(float(c) for c in vals.mean(axis=0)),
                tuple(float(e) for e in np.minimum(hi_b - lo_b, current.extent)),
                box.axes,
                basis.depth,
                tol,
                int(pts.shape[0]),
                len(found) > 1,
            )
        else:
            if box is None:
                box = default_box(V)
            seed_lo, seed_hi = box.seed_bounds()
            width = max(current.width, 1e-12)
            pad = pad_cells * width / max(count - 1, 1)
            lo_e, hi_e = current.e_min - pad, current.e_max + pad
            found = locate_islands(V, basis, lo_e, hi_e, seed_lo, seed_hi, count=count, tol=tol)
            found = [f for f in found if f.e_max >= current.e_min and f.e_min <= current.e_max] or found
            if not found:
                raise BootstrapError(
                    f"island at E~{current.energy:.6g} vanished at refinement level {level + 1}; "
                    "loosen tol or lower the depth"
                )
            lo, hi = min(f.e_min for f in found), max(f.e_max for f in found)
            lo, hi = max(lo, current.e_min), min(hi, current.e_max) if hi > lo else hi
            best = min(found, key=lambda f: abs(f.energy - current.energy))
            current = Island(
                lo,
                max(hi, lo),
                ((lo + max(hi, lo)) / 2,) + best.centroid[1:],
                (max(hi, lo) - lo,) + best.extent[1:],
                tuple(full_axes),
                basis.depth,
                tol,
                sum(f.points for f in found),
                len(found) > 1,
            )
    return current
