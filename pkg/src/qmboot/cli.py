"""Command-line entry point: ``qmboot <command> [options]``.

Exit codes: 0 success, 1 usage or configuration error, 2 numerical failure.
Outputs are written atomically into ``--out`` (default ``$QMBOOT_OUT`` or the
current directory); CSV files start with a comment line carrying the hash of
the resolved configuration.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import os
import sys
import tempfile
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import analysis, oracle, spectra
from .bootstrap import DEFAULT_TOL, BasisSpec, BootstrapError
from .opalg import PolynomialPotential, dump_reductions
from .scan import axis_names, default_box, extract_islands, locate_islands, refine, scan, scan_energy, SearchBox

log = logging.getLogger("qmboot")

FORMAT_VERSION = 1
OUT_ENV = "QMBOOT_OUT"


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """Everything a run depends on; serialisable to JSON and hashed into outputs."""

    command: str = ""
    n: int = 2
    g: list[float] = field(default_factory=list)
    depth: int = 13
    kx: int | None = None
    kp: int = 2
    tol: float = DEFAULT_TOL
    refine: int = 0
    box: dict[str, list[float]] = field(default_factory=dict)
    grid: dict[str, int] = field(default_factory=dict)
    mode: str = "projected"
    max_depth: int | None = None
    regime: str = "any"
    weighted: bool = True
    input: str | None = None
    k: int = 2
    basis_size: int = 32
    omega: float | None = None
    workers: int = 1
    out: str = "."
    version: int = FORMAT_VERSION

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("out")
        d.pop("workers")
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def solve_config(self) -> spectra.SolveConfig:
        kw = dict(depth=self.depth, kp=self.kp, kx=self.kx, tol=self.tol, refine_levels=self.refine, max_depth=self.max_depth)
        if "E" in self.grid and "E" in self.box:
            lo, hi = self.box["E"]
            kw["spacing"] = (hi - lo) / max(self.grid["E"] - 1, 1)
        return spectra.SolveConfig(**kw)

    def basis(self) -> BasisSpec:
        return self.solve_config().basis()


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _parse_pairs(items, conv, what) -> dict:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"--{what} expects DIM=VALUE, got {item!r}")
        key, val = item.split("=", 1)
        out[key.strip()] = conv(val)
    return out


def _interval(text: str) -> list[float]:
    parts = text.split(":")
    if len(parts) != 2:
        raise ConfigError(f"interval must be LO:HI, got {text!r}")
    lo, hi = float(parts[0]), float(parts[1])
    if hi < lo:
        raise ConfigError(f"interval {text!r} has HI < LO")
    return [lo, hi]


def _g_values(args) -> list[float] | None:
    if args.g_list is not None:
        return [float(v) for v in args.g_list.split(",") if v.strip()]
    if args.g_range is not None:
        parts = args.g_range.split(":")
        if len(parts) != 3:
            raise ConfigError("--g-range expects LO:HI:COUNT")
        lo, hi, count = float(parts[0]), float(parts[1]), int(parts[2])
        if count < 1:
            raise ConfigError("--g-range COUNT must be >= 1")
        return [float(v) for v in np.round(np.linspace(lo, hi, count), 12)]
    if args.g is not None:
        return [float(args.g)]
    return None


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON file with RunConfig keys (flags override it)")
    common.add_argument("--out", help=f"output directory (default ${OUT_ENV} or .)")
    common.add_argument("--workers", type=int, help="parallel worker processes")
    common.add_argument("-v", "--verbose", action="store_true")

    model = _Parser(add_help=False)
    model.add_argument("--n", type=int, help="anharmonicity order (V = g x^2 + x^(2n))")
    model.add_argument("--g", type=float, help="single coupling")
    model.add_argument("--g-list", help="comma-separated couplings")
    model.add_argument("--g-range", help="LO:HI:COUNT couplings")

    boot = _Parser(add_help=False)
    boot.add_argument("--depth", type=int, help="number of basis operators")
    boot.add_argument("--kx", type=int, help="max power of x in the basis")
    boot.add_argument("--kp", type=int, help="max power of p in the basis")
    boot.add_argument("--tol", type=float, help="PSD tolerance on the normalised minimum eigenvalue")
    boot.add_argument("--refine", type=int, help="refinement levels for each island")
    boot.add_argument("--box", action="append", metavar="DIM=LO:HI", help="search interval, e.g. E=0:10, x2=0:2")
    boot.add_argument("--grid", action="append", metavar="DIM=COUNT", help="lattice points along DIM")
    boot.add_argument("--max-depth", type=int, help="raise the depth up to this value if levels merge")

    p = _Parser(prog="qmboot", description="Bootstrap spectra of anharmonic oscillators.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("scan", parents=[common, model, boot], help="feasibility grid and islands at one coupling")
    s.add_argument("--mode", choices=("projected", "lattice"), help="projected E-scan or full lattice")
    s.add_argument("--dump-reductions", type=int, metavar="MAXDEG", help="print reduced <x^a p^b> up to a+b=MAXDEG and exit")

    sub.add_parser("spectrum", parents=[common, model, boot], help="E0, E1 and gaps over a coupling sweep")

    f = sub.add_parser("fit", parents=[common], help="fit the gap formula to a sweep CSV")
    f.add_argument("input", nargs="?", help="sweep CSV from the spectrum command")
    f.add_argument("--regime", choices=analysis.REGIMES, help="fit protocol (see analysis.fit_gap)")
    f.add_argument("--unweighted", action="store_true", help="ignore island widths as weights")

    d = sub.add_parser("susceptibility", parents=[common], help="finite-difference derivative of the gap")
    d.add_argument("input", nargs="?", help="sweep CSV from the spectrum command")

    o = sub.add_parser("oneloop", parents=[common], help="one-loop quartic ground state")
    o.add_argument("--g", type=float)
    o.add_argument("--g-list")
    o.add_argument("--g-range")

    r = sub.add_parser("oracle", parents=[common, model], help="reference eigenvalues by diagonalisation")
    r.add_argument("--k", type=int, help="number of levels")
    r.add_argument("--basis-size", type=int, help="starting basis size N")
    r.add_argument("--omega", type=float, help="reference oscillator frequency")
    return p


def resolve_config(args) -> RunConfig:
    data: dict = {}
    if args.config:
        try:
            with open(args.config) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
    cfg = RunConfig.from_dict({**data, "command": args.command})
    ns = vars(args)
    for key in ("n", "depth", "kx", "kp", "tol", "refine", "mode", "regime", "k", "basis_size", "omega", "workers",
                "max_depth", "input"):
        if ns.get(key) is not None:
            setattr(cfg, key, ns[key])
    if ns.get("unweighted"):
        cfg.weighted = False
    if "g" in ns or "g_list" in ns:
        gv = _g_values(args)
        if gv is not None:
            cfg.g = gv
    if ns.get("box"):
        cfg.box = {**cfg.box, **_parse_pairs(ns["box"], _interval, "box")}
    if ns.get("grid"):
        cfg.grid = {**cfg.grid, **_parse_pairs(ns["grid"], int, "grid")}
    cfg.out = ns.get("out") or data.get("out") or os.environ.get(OUT_ENV, ".")
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    if cfg.n < 1:
        raise ConfigError("--n must be >= 1")
    if cfg.depth < 1 or cfg.kp < 0 or (cfg.kx is not None and cfg.kx < 0):
        raise ConfigError("depth must be >= 1 and kx, kp >= 0")
    if not cfg.tol >= 0:
        raise ConfigError("--tol must be non-negative")
    if cfg.refine < 0 or cfg.workers < 1:
        raise ConfigError("--refine must be >= 0 and --workers >= 1")
    if any(c < 1 for c in cfg.grid.values()):
        raise ConfigError("--grid counts must be >= 1")
    if any(not all(map(math.isfinite, g)) for g in [cfg.g]):
        raise ConfigError("couplings must be finite")
    if cfg.command in ("scan", "spectrum", "oracle") and not cfg.g:
        raise ConfigError(f"{cfg.command} needs --g, --g-list or --g-range")
    if cfg.command == "scan" and len(cfg.g) != 1:
        raise ConfigError("scan takes exactly one coupling")
    if cfg.command in ("fit", "susceptibility") and not cfg.input:
        raise ConfigError(f"{cfg.command} needs an input CSV")
    try:
        cfg.basis()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _potential(cfg: RunConfig, g: float) -> PolynomialPotential:
    if cfg.n == 1:
        return PolynomialPotential([0, 0, g])
    return PolynomialPotential.anharmonic(g, cfg.n)


def _box(cfg: RunConfig, V: PolynomialPotential) -> SearchBox:
    base = default_box(V)
    axes = axis_names(V)
    extra = (set(cfg.box) | set(cfg.grid)) - set(axes)
    if extra:
        raise ConfigError(f"unknown box dimensions {sorted(extra)}; this potential has {list(axes)}")
    lo, hi, counts = list(base.lo), list(base.hi), list(base.counts)
    for i, ax in enumerate(axes):
        if ax in cfg.box:
            lo[i], hi[i] = cfg.box[ax]
        if ax in cfg.grid:
            counts[i] = cfg.grid[ax]
    return SearchBox(axes, tuple(lo), tuple(hi), tuple(counts))


class Outputs:
    """Collects files in memory and writes them only after the command succeeded."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.files: dict[str, str] = {}

    def header(self) -> str:
        return f"# qmboot {self.cfg.command} format={FORMAT_VERSION} config-sha256={self.cfg.digest()}\n# config={self.cfg.to_json()}\n"

    def csv(self, name: str, columns, rows) -> None:
        buf = io.StringIO()
        buf.write(self.header())
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
        self.files[name] = buf.getvalue()

    def raw(self, name: str, text: str) -> None:
        self.files[name] = text

    def commit(self) -> list[Path]:
        out = Path(self.cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        written = []
        for name, text in self.files.items():
            target = out / name
            fd, tmp = tempfile.mkstemp(dir=out, prefix=f".{name}.", suffix=".tmp")
            try:
                with os.fdopen(fd, "w") as fh:
                    fh.write(text)
                os.replace(tmp, target)
            except BaseException:
                if os.path.exists(tmp):
                    os.unlink(tmp)
                raise
            written.append(target)
        return written


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    return format(float(v), ".17g")


def _tag(g: float) -> str:
    return format(g, "g").replace("-", "m")


def cmd_scan(cfg: RunConfig, outputs: Outputs) -> int:
    g = cfg.g[0]
    V = _potential(cfg, g)
    basis = cfg.basis()
    box = _box(cfg, V)
    if cfg.mode == "lattice":
        grid = scan(V, basis, box, cfg.tol, workers=cfg.workers)
        islands = extract_islands(grid)
    else:
        seed_lo, seed_hi = box.seed_bounds()
        grid = scan_energy(V, basis, box.lo[0], box.hi[0], box.counts[0], seed_lo, seed_hi, cfg.tol)
        islands = locate_islands(V, basis, box.lo[0], box.hi[0], seed_lo, seed_hi, count=box.counts[0], tol=cfg.tol)
    if cfg.refine:
        islands = [refine(V, basis, isl, cfg.refine, cfg.tol, box=box if cfg.mode == "lattice" else None) for isl in islands]
    stem = f"scan_n{cfg.n}_g{_tag(g)}_d{cfg.depth}"
    outputs.raw(f"{stem}.csv", outputs.header() + grid.to_csv())
    report = {"config_sha256": cfg.digest(), "islands": [isl.to_json() for isl in islands]}
    outputs.raw(f"{stem}_islands.json", json.dumps(report, indent=2, sort_keys=True) + "\n")
    for isl in islands:
        print(f"island E in [{isl.e_min:.10g}, {isl.e_max:.10g}]  centroid E={isl.energy:.10g}  width={isl.width:.3g}")
    if not islands:
        print("no feasible points in the search box", file=sys.stderr)
        return 2
    return 0


def cmd_spectrum(cfg: RunConfig, outputs: Outputs) -> int:
    curve = spectra.sweep(sorted(cfg.g), cfg.n, cfg.solve_config(), workers=cfg.workers)
    for g, msg in curve.failures:
        print(f"g={g}: {msg}", file=sys.stderr)
    outputs.csv(f"spectrum_n{cfg.n}.csv", spectra.CSV_COLUMNS, [s.row() for s in curve.samples])
    return 0


def cmd_fit(cfg: RunConfig, outputs: Outputs) -> int:
    curve = _read_curve(cfg.input)
    fit = analysis.fit_curve(curve, regime=cfg.regime, weighted=cfg.weighted)
    record = fit.to_json()
    record["config_sha256"] = cfg.digest()
    outputs.raw(f"fit_n{curve.n}.json", json.dumps(record, indent=2, sort_keys=True) + "\n")
    print(f"n={curve.n}  regime={fit.regime}  points={fit.n_points}  rms={fit.rms:.3g}")
    for k in "abcd":
        err = fit.stderr.get(k)
        flag = "  (flagged)" if k in fit.flags else ""
        print(f"  {k} = {getattr(fit, k):.10g}" + (f" +- {err:.2g}" if err is not None else "") + flag)
    print(f"  anchor = {fit.anchor:.10g}")
    return 0


def cmd_susceptibility(cfg: RunConfig, outputs: Outputs) -> int:
    curve = _read_curve(cfg.input)
    rows = [(d.g, d.value, d.left, d.right) for d in spectra.susceptibility(curve)]
    outputs.csv(f"susceptibility_n{curve.n}.csv", ("g", "derivative", "left", "right"), rows)
    return 0


def cmd_oneloop(cfg: RunConfig, outputs: Outputs) -> int:
    if not cfg.g:
        raise ConfigError("oneloop needs --g, --g-list or --g-range")
    if any(g <= 0 for g in cfg.g):
        raise ConfigError("one-loop formula needs every g > 0")
    rows = []
    for g in cfg.g:
        asym = analysis.oneloop_asymptotic(g, 1) if g >= analysis.ASYMPTOTIC_FLOOR else math.nan
        rows.append((g, analysis.oneloop_E0(g), asym))
    outputs.csv("oneloop.csv", ("g", "E0_oneloop", "E0_asymptotic_1term"), rows)
    return 0


def cmd_oracle(cfg: RunConfig, outputs: Outputs) -> int:
    bc = oracle.BasisConfig(N=cfg.basis_size, omega_ref=cfg.omega)
    rows = []
    for g in cfg.g:
        vals, size = oracle.diagonalize_with_size(_potential(cfg, g), bc, cfg.k)
        rows += [(g, k, e, size) for k, e in enumerate(vals)]
    outputs.csv(f"oracle_n{cfg.n}.csv", ("g", "k", "E_k", "N_converged"), rows)
    for g, k, e, size in rows:
        print(f"g={g:g} k={k} E={e:.12g} (N={size})")
    return 0


def _read_curve(path: str) -> spectra.GapCurve:
    try:
        with open(path) as fh:
            return spectra.read_curve_csv(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc


COMMANDS = {
    "scan": cmd_scan,
    "spectrum": cmd_spectrum,
    "fit": cmd_fit,
    "susceptibility": cmd_susceptibility,
    "oneloop": cmd_oneloop,
    "oracle": cmd_oracle,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "scan" and args.dump_reductions is not None:
        n = args.n or 2
        g = args.g if args.g is not None else 1.0
        V = PolynomialPotential.anharmonic(g, n) if n > 1 else PolynomialPotential([0, 0, g])
        print("\n".join(dump_reductions(V, args.dump_reductions)))
        return 0
    try:
        cfg = resolve_config(args)
    except (ConfigError, ValueError) as exc:
        print(f"qmboot: config error: {exc}", file=sys.stderr)
        return 1
    outputs = Outputs(cfg)
    try:
        code = COMMANDS[cfg.command](cfg, outputs)
    except ConfigError as exc:
        print(f"qmboot: config error: {exc}", file=sys.stderr)
        return 1
    except (BootstrapError, analysis.FitError, oracle.OracleError) as exc:
        print(f"qmboot: numerical failure: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"qmboot: invalid input: {exc}", file=sys.stderr)
        return 1
    for path in outputs.commit():
        print(f"wrote {path}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
