"""Closed-form references and the universal gap formula fit.

The gap model is ``2 A exp(-a g^b) / (1 + exp(-c g^d))`` with the anchor
``A`` taken from the ``g = 0`` data point, so the formula reproduces it
exactly there. The one-loop ground state of the quartic oscillator uses the
scaled complementary error function to stay finite for large ``g``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from itertools import product
from typing import Sequence

import numpy as np
from scipy import optimize, special

ASYMPTOTIC_FLOOR = 5.0
MAX_TERMS = 5
DEFAULT_STARTS = tuple(
    (a, b, c, d) for a, b, c, d in product((0.01, 0.1, 1.0), (0.5, 1.0, 2.0), (0.01, 0.1, 1.0), (0.5, 1.0, 2.0))
)
REGIMES = ("any", "subdominant", "leading")


class FitError(RuntimeError):
    """No multi-start run of the gap fit converged."""


@dataclass
class FitParams:
    """Fitted ``(a, b, c, d)`` with the fixed anchor and diagnostics.

    ``stderr`` holds linearised standard errors (from the Jacobian at the
    optimum, scaled by the weighted residual variance); ``flags`` lists
    parameters that drifted to a degenerate edge of the search space.
    """

    a: float
    b: float
    c: float
    d: float
    anchor: float
    rms: float = 0.0
    n_points: int = 0
    starts_converged: int = 0
    n: int | None = None
    regime: str = "any"
    stderr: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)

    def __post_init__(self):
        if min(self.a, self.b, self.c, self.d) <= 0:
            raise ValueError("a, b, c, d must be positive")

    @property
    def values(self) -> tuple[float, float, float, float]:
        return (self.a, self.b, self.c, self.d)

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "a": self.a,
            "b": self.b,
            "c": self.c,
            "d": self.d,
            "anchor": self.anchor,
            "rms": self.rms,
            "n_points": self.n_points,
            "starts_converged": self.starts_converged,
            "regime": self.regime,
            "stderr": self.stderr,
            "flags": self.flags,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True)


def gap_formula(g, p: FitParams):
    """``2 A e^(-a g^b) / (1 + e^(-c g^d))``; underflows cleanly to 0 for large ``g``."""
    g_arr = np.asarray(g, dtype=float)
    if np.any(g_arr < 0):
        raise ValueError("gap formula is defined for g >= 0 only")
    out = _model(g_arr, p.anchor, p.a, p.b, p.c, p.d)
    return float(out) if np.ndim(out) == 0 else out


def _model(g, A, a, b, c, d):
    with np.errstate(over="ignore", under="ignore"):
        return 2 * A * np.exp(-a * g**b) * special.expit(c * g**d)


def gap_formula_derivative(g, p: FitParams):
    """Analytic ``d/dg`` of :func:`gap_formula` for ``g > 0``."""
    g = np.asarray(g, dtype=float)
    f = _model(g, p.anchor, *p.values)
    s = special.expit(-p.c * g**p.d)
    return f * (-p.a * p.b * g ** (p.b - 1) + p.c * p.d * g ** (p.d - 1) * s)


def _partials(g, A, a, b, c, d):
    """Model value and its derivatives with respect to (a, b, c, d)."""
    f = _model(g, A, a, b, c, d)
    gb = g**b
    gd = g**d
    lg = np.log(g)
    s = special.expit(-c * gd)  # 1 - sigmoid
    return f, np.stack([-f * gb, -f * a * gb * lg, f * gd * s, f * c * gd * lg * s], axis=1)


def _unpack(theta, regime):
    with np.errstate(over="ignore"):
        a, b, d = (float(v) for v in np.exp([theta[0], theta[1], theta[3]]))
    u = theta[2]
    if regime == "subdominant":
        # c = a * sigmoid(u) keeps the correction term below the leading decay rate
        sig = float(special.expit(u))
        c = a * sig
        # dc/d(la) = c, dc/du = a * sig * (1 - sig)
        chain = np.array([[a, 0, 0, 0], [0, b, 0, 0], [c, 0, a * sig * (1 - sig), 0], [0, 0, 0, d]]).T
    else:
        with np.errstate(over="ignore"):
            c = float(np.exp(u))
        chain = np.diag([a, b, c, d])
    return (a, b, c, d), chain


def _pack(params, regime):
    a, b, c, d = params
    if regime == "subdominant":
        ratio = min(max(c / a, 1e-12), 1 - 1e-9)
        u = math.log(ratio / (1 - ratio))
    else:
        u = math.log(c)
    return np.array([math.log(a), math.log(b), u, math.log(d)])


def _prepare(g, gap, err):
    g = np.asarray(g, dtype=float)
    y = np.asarray(gap, dtype=float)
    if g.shape != y.shape:
        raise ValueError("g and gap must have the same length")
    if np.any(g < 0):
        raise ValueError("gap fit covers the oscillator phase g >= 0 only")
    zero = np.nonzero(g == 0)[0]
    if zero.size != 1:
        raise ValueError("data must contain exactly one g = 0 point (the anchor)")
    mask = g > 0
    if mask.sum() < 6:
        raise ValueError("need at least 6 points with g > 0")
    sigma = np.ones(int(mask.sum()))
    if err is not None:
        e = np.asarray(err, dtype=float)[mask]
        pos = e[e > 0]
        if pos.size:
            # zero widths get the tightest finite weight; only ratios matter
            sigma = np.where(e > 0, e, pos.min()) / pos.min()
    return float(y[zero[0]]), g[mask], y[mask], 1.0 / sigma


def _multistart(resid, jac, starts):
    """Run LM from every start; returns (best result, converged count, trace)."""
    best = None
    converged = 0
    trace = []
    for k, theta0 in enumerate(starts):
        try:
            with np.errstate(all="ignore"):
                res = optimize.least_squares(
                    resid, theta0, jac=jac, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=3000
                )
        except (ValueError, FloatingPointError, OverflowError) as exc:
            trace.append((k, str(exc)))
            continue
        if not np.all(np.isfinite(res.fun)) or not np.all(np.isfinite(res.x)):
            trace.append((k, "non-finite"))
            continue
        converged += int(res.status > 0)
        trace.append((k, float(res.cost)))
        if res.status > 0 and (best is None or res.cost < best.cost * (1 - 1e-12)):
            best = res
    return best, converged, trace


def _stderr(res, chain, nparams=4) -> dict:
    r = res.fun
    dof = max(len(r) - nparams, 1)
    try:
        cov_theta = np.linalg.pinv(res.jac.T @ res.jac) * float(r @ r) / dof
    except np.linalg.LinAlgError:
        return {}
    cov = chain @ cov_theta @ chain.T
    return {k: float(math.sqrt(max(cov[i, i], 0.0))) for i, k in enumerate("abcd"[: cov.shape[0]])}


def fit_gap(
    g: Sequence[float],
    gap: Sequence[float],
    err: Sequence[float] | None = None,
    starts: Sequence[tuple[float, float, float, float]] = DEFAULT_STARTS,
    regime: str = "any",
    n: int | None = None,
) -> FitParams:
    """Weighted least squares for ``(a, b, c, d)`` with the anchor fixed at ``gap(g=0)``.

    Every start runs Levenberg-Marquardt in log-parameters; the best residual
    wins, ties going to the earliest start. Weights are ``1/err^2``.

    ``regime`` selects the protocol:

    * ``"any"``: unconstrained global fit.
    * ``"subdominant"``: restricted to ``c < a``.
    * ``"leading"``: first fit the leading decay ``A exp(-a g^b)`` (the
      ``c -> 0`` limit), then release ``(c, d)`` from small-``c`` starts
      inside ``c < a``. If the released fit leaves the interior of that
      region, the leading ``(a, b)`` are kept and ``(c, d)`` are fitted with
      ``(a, b)`` frozen and flagged as unresolved.
    """
    if regime not in REGIMES:
        raise ValueError(f"regime must be one of {REGIMES}")
    anchor, gx, yx, w = _prepare(g, gap, err)
    npts = int(gx.size)
    if regime == "leading":
        return _fit_leading(anchor, gx, yx, w, n)
    mode = regime

    def resid(theta):
        (a, b, c, d), _ = _unpack(theta, mode)
        return (_model(gx, anchor, a, b, c, d) - yx) * w

    def jac(theta):
        params, chain = _unpack(theta, mode)
        _, dp = _partials(gx, anchor, *params)
        return (dp @ chain) * w[:, None]

    thetas = []
    for start in starts:
        s = list(start)
        if mode == "subdominant" and s[2] >= s[0]:
            s[2] = 0.5 * s[0]
        thetas.append(_pack(s, mode))
    best, converged, trace = _multistart(resid, jac, thetas)
    if best is None:
        raise FitError(f"no start converged; trace: {trace}")
    params, chain = _unpack(best.x, mode)
    a, b, c, d = params
    rms = float(np.sqrt(np.mean(best.fun**2)))
    flags = [k for k, v in zip("abcd", params) if v < 1e-8 or v > 1e3]
    if mode == "subdominant" and c / a > 1 - 1e-6:
        flags.append("c~a")
    return FitParams(a, b, c, d, anchor, rms, npts, converged, n, regime, _stderr(best, chain), flags)


def _fit_leading(anchor, gx, yx, w, n) -> FitParams:
    lead_starts = [np.log([a, b]) for a, b in product((0.01, 0.1, 1.0), (0.5, 1.0, 2.0))]

    def r1(t):
        a, b = np.exp(t)
        with np.errstate(over="ignore", under="ignore"):
            return (anchor * np.exp(-a * gx**b) - yx) * w

    def j1(t):
        a, b = np.exp(t)
        with np.errstate(over="ignore", under="ignore"):
            f = anchor * np.exp(-a * gx**b)
        gb = gx**b
        return np.stack([-f * gb * a, -f * a * gb * np.log(gx) * b], axis=1) * w[:, None]

    lead, conv1, trace = _multistart(r1, j1, lead_starts)
    if lead is None:
        raise FitError(f"leading-order fit did not converge; trace: {trace}")
    a0, b0 = (float(v) for v in np.exp(lead.x))

    def resid(theta):
        (a, b, c, d), _ = _unpack(theta, "subdominant")
        return (_model(gx, anchor, a, b, c, d) - yx) * w

    def jac(theta):
        params, chain = _unpack(theta, "subdominant")
        _, dp = _partials(gx, anchor, *params)
        return (dp @ chain) * w[:, None]

    released = [_pack((a0, b0, k * a0, d0), "subdominant") for k in (1e-3, 1e-2, 1e-1) for d0 in (0.5, 1.0, 2.0)]
    best, conv2, _ = _multistart(resid, jac, released)
    if best is not None:
        params, chain = _unpack(best.x, "subdominant")
        a, b, c, d = params
        if 1e-8 < c / a < 0.5 and 1e-3 < d < 1e3:
            rms = float(np.sqrt(np.mean(best.fun**2)))
            return FitParams(a, b, c, d, anchor, rms, int(gx.size), conv1 + conv2, n, "leading", _stderr(best, chain), [])

    # correction not identifiable: keep (a0, b0), fit (c, d) alone
    def r2(t):
        c, d = np.exp(t)
        return (_model(gx, anchor, a0, b0, c, d) - yx) * w

    fixed, conv3, _ = _multistart(r2, "2-point", [np.log([k * a0, d0]) for k in (1e-3, 1e-2) for d0 in (1.0, 2.0)])
    c, d = (float(v) for v in np.exp(fixed.x)) if fixed is not None else (float("nan"), float("nan"))
    if not (c > 0 and d > 0):
        c, d = np.finfo(float).tiny, 1.0
    res = fixed if fixed is not None else lead
    rms = float(np.sqrt(np.mean(res.fun**2)))
    stderr = _stderr(lead, np.diag([a0, b0]), nparams=2)
    return FitParams(a0, b0, c, d, anchor, rms, int(gx.size), conv1 + conv3, n, "leading", stderr, ["c", "d"])


def fit_curve(curve, regime: str = "any", weighted: bool = True, **kw) -> FitParams:
    """:func:`fit_gap` on the non-negative part of a spectra ``GapCurve``."""
    g, y, e = curve.g, curve.gap, curve.err
    keep = g >= 0
    return fit_gap(g[keep], y[keep], e[keep] if weighted else None, regime=regime, n=curve.n, **kw)


def erfc(z):
    return special.erfc(z)


def erfcx(z):
    """``exp(z^2) erfc(z)``, finite for large ``z``."""
    return special.erfcx(z)


def oneloop_E0(g):
    """One-loop ground state of ``p^2/2 + g x^2 + x^4``, valid in the weak regime (large ``g``)."""
    g_arr = np.asarray(g, dtype=float)
    if np.any(g_arr <= 0):
        raise ValueError("one-loop formula needs g > 0 (it wrongly gives E0 = 0 as g -> 0)")
    z = g_arr**1.5 / math.sqrt(3)
    out = np.sqrt(g_arr / 2) + (math.sqrt(6) * g_arr - math.sqrt(2 * math.pi) * g_arr**2.5 * erfcx(z)) / math.pi
    return float(out) if np.ndim(out) == 0 else out


def oneloop_asymptotic(g: float, terms: int = 1) -> float:
    """Large-``g`` expansion of :func:`oneloop_E0` through ``terms`` corrections."""
    if g < ASYMPTOTIC_FLOOR:
        raise ValueError(f"asymptotic series used below its validity floor g >= {ASYMPTOTIC_FLOOR}")
    if not 0 <= terms <= MAX_TERMS:
        raise ValueError(f"terms must lie in [0, {MAX_TERMS}]")
    z2 = g**3 / 3
    total = 0.0
    for m in range(1, terms + 1):
        total += (-1) ** (m + 1) * special.poch(0.5, m) / z2**m
    return math.sqrt(g / 2) + math.sqrt(6) * g * total / math.pi


def oneloop_curve(g_values: Sequence[float]) -> list[tuple[float, float]]:
    return [(float(g), oneloop_E0(g)) for g in g_values]
