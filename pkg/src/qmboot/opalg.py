"""Exact operator algebra for the canonical pair ``x``, ``p`` with ``[x, p] = i``.

Operators are kept in normal order (every ``x`` to the left of every ``p``)
with Gaussian-rational coefficients, so all commutator combinatorics are exact.
Expectation values in an energy eigenstate are reduced to affine forms in the
position moments ``<x^t>`` whose coefficients are polynomials in the energy.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from math import comb, perm
from typing import Iterable, Mapping, Sequence, Union

import numpy as np

Number = Union[int, Fraction]


@dataclass(frozen=True, slots=True)
class GaussQ:
    """Exact complex number ``re + i*im`` with rational parts."""

    re: Fraction = Fraction(0)
    im: Fraction = Fraction(0)

    @classmethod
    def of(cls, value: "GaussQ | Number | complex") -> "GaussQ":
        if isinstance(value, GaussQ):
            return value
        if isinstance(value, complex):
            return cls(Fraction(value.real), Fraction(value.imag))
        return cls(Fraction(value), Fraction(0))

    def __bool__(self) -> bool:
        return bool(self.re) or bool(self.im)

    def __add__(self, other):
        o = GaussQ.of(other)
        return GaussQ(self.re + o.re, self.im + o.im)

    __radd__ = __add__

    def __neg__(self):
        return GaussQ(-self.re, -self.im)

    def __sub__(self, other):
        return self + (-GaussQ.of(other))

    def __rsub__(self, other):
        return GaussQ.of(other) - self

    def __mul__(self, other):
        o = GaussQ.of(other)
        return GaussQ(self.re * o.re - self.im * o.im, self.re * o.im + self.im * o.re)

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = GaussQ.of(other)
        den = o.re * o.re + o.im * o.im
        if not den:
            raise ZeroDivisionError("division by exact zero")
        num = self * o.conjugate()
        return GaussQ(num.re / den, num.im / den)

    def conjugate(self) -> "GaussQ":
        return GaussQ(self.re, -self.im)

    def __complex__(self) -> complex:
        return complex(float(self.re), float(self.im))

    def __repr__(self) -> str:
        if not self.im:
            return str(self.re)
        im = abs(self.im)
        mag = "" if im == 1 else f"{im}*" if im.denominator == 1 else f"({im})*"
        if not self.re:
            return f"{'-' if self.im < 0 else ''}{mag}i"
        sign = "+" if self.im > 0 else "-"
        return f"({self.re}{sign}{mag}i)"


I = GaussQ(Fraction(0), Fraction(1))
ONE = GaussQ(Fraction(1))

# (-i)**j for j mod 4
_MINUS_I_POW = (ONE, -I, GaussQ(Fraction(-1)), I)


def _clean(terms: Mapping) -> dict:
    return {k: v for k, v in terms.items() if v}


class OperatorPoly:
    """Normal-ordered polynomial ``sum c_ab x^a p^b`` with exact coefficients.

    Instances are immutable; arithmetic returns new objects.
    """

    __slots__ = ("_terms", "_hash")

    def __init__(self, terms: Mapping[tuple[int, int], "GaussQ | Number | complex"] | None = None):
        clean = {}
        for (a, b), c in (terms or {}).items():
            if a < 0 or b < 0:
                raise ValueError(f"negative power in monomial x^{a} p^{b}")
            c = GaussQ.of(c)
            if c:
                clean[(int(a), int(b))] = clean.get((int(a), int(b)), GaussQ()) + c
        self._terms = _clean(clean)
        self._hash = None

    @classmethod
    def monomial(cls, xpow: int, ppow: int, coeff: "GaussQ | Number | complex" = 1) -> "OperatorPoly":
        return cls({(xpow, ppow): coeff})

    @property
    def terms(self) -> dict[tuple[int, int], GaussQ]:
        return dict(self._terms)

    def items(self):
        return self._terms.items()

    def __eq__(self, other) -> bool:
        if not isinstance(other, OperatorPoly):
            return NotImplemented
        return self._terms == other._terms

    def __hash__(self) -> int:
        if self._hash is None:
            self._hash = hash(frozenset(self._terms.items()))
        return self._hash

    def __bool__(self) -> bool:
        return bool(self._terms)

    def __add__(self, other: "OperatorPoly") -> "OperatorPoly":
        out = dict(self._terms)
        for k, v in other._terms.items():
            out[k] = out.get(k, GaussQ()) + v
        return OperatorPoly(out)

    def __neg__(self) -> "OperatorPoly":
        return OperatorPoly({k: -v for k, v in self._terms.items()})

    def __sub__(self, other: "OperatorPoly") -> "OperatorPoly":
        return self + (-other)

    def scale(self, c: "GaussQ | Number | complex") -> "OperatorPoly":
        c = GaussQ.of(c)
        return OperatorPoly({k: v * c for k, v in self._terms.items()})

    def __mul__(self, other: "OperatorPoly") -> "OperatorPoly":
        return normal_order(self, other)

    def __repr__(self) -> str:
        if not self._terms:
            return "0"
        parts = []
        for (a, b), c in sorted(self._terms.items()):
            mono = "".join(
                s for s in (f"x^{a}" if a > 1 else "x" if a else "", f"p^{b}" if b > 1 else "p" if b else "")
            )
            parts.append(f"{c!r}*{mono}" if mono else repr(c))
        return " + ".join(parts)


@lru_cache(maxsize=None)
def _px_swap(b: int, c: int) -> tuple[tuple[int, int, GaussQ], ...]:
    """Normal-ordered expansion of ``p^b x^c`` as ``(xpow, ppow, coeff)`` triples.

    ``p^b x^c = sum_j C(b, j) c!/(c-j)! (-i)^j x^(c-j) p^(b-j)``.
    """
    out = []
    for j in range(min(b, c) + 1):
        coeff = _MINUS_I_POW[j % 4] * (comb(b, j) * perm(c, j))
        out.append((c - j, b - j, coeff))
    return tuple(out)


def normal_order(left: OperatorPoly, right: OperatorPoly) -> OperatorPoly:
    """Product ``left * right`` rewritten in normal order using ``p x = x p - i``."""
    out: dict[tuple[int, int], GaussQ] = {}
    for (a, b), c1 in left.items():
        for (c, d), c2 in right.items():
            base = c1 * c2
            for xs, ps, k in _px_swap(b, c):
                key = (a + xs, ps + d)
                out[key] = out.get(key, GaussQ()) + base * k
    return OperatorPoly(out)


def adjoint(op: OperatorPoly) -> OperatorPoly:
    """Hermitian conjugate: ``(c x^a p^b)^dagger = conj(c) p^b x^a``, re-normal-ordered."""
    out = OperatorPoly()
    for (a, b), c in op.items():
        out = out + normal_order(OperatorPoly.monomial(0, b, c.conjugate()), OperatorPoly.monomial(a, 0))
    return out


def _to_fraction(c) -> Fraction:
    # floats go through their shortest repr so 0.2 stays 1/5
    if isinstance(c, (float, np.floating)):
        return Fraction(repr(float(c)))
    if isinstance(c, np.integer):
        return Fraction(int(c))
    return Fraction(c)


@dataclass(frozen=True)
class PolynomialPotential:
    """Polynomial ``V(x) = sum_k coeffs[k] x^k`` with exact rational coefficients."""

    coeffs: tuple[Fraction, ...]

    def __init__(self, coeffs: Iterable[Number | float | str]):
        cs = [_to_fraction(c) for c in coeffs]
        while cs and cs[-1] == 0:
            cs.pop()
        object.__setattr__(self, "coeffs", tuple(cs))

    @classmethod
    def anharmonic(cls, g: Number | float | str, n: int) -> "PolynomialPotential":
        """``V = g x^2 + x^(2n)``; ``g < 0`` gives the symmetric double well."""
        if n < 2:
            raise ValueError("anharmonicity order n must be >= 2")
        cs = [Fraction(0)] * (2 * n + 1)
        cs[2] = _to_fraction(g)
        cs[2 * n] = Fraction(1)
        return cls(cs)

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1

    @property
    def leading(self) -> Fraction:
        return self.coeffs[-1] if self.coeffs else Fraction(0)

    @property
    def is_even(self) -> bool:
        return all(c == 0 for k, c in enumerate(self.coeffs) if k % 2)

    @property
    def is_confining(self) -> bool:
        return self.degree >= 2 and self.degree % 2 == 0 and self.leading > 0

    def derivative(self) -> "PolynomialPotential":
        return PolynomialPotential([k * c for k, c in enumerate(self.coeffs)][1:] or [0])

    def as_operator(self) -> OperatorPoly:
        return OperatorPoly({(k, 0): c for k, c in enumerate(self.coeffs) if c})

    def seed_powers(self) -> tuple[int, ...]:
        """Position moments left free by the recursion (``<x^0> = 1`` excluded).

        Even potentials fix odd moments to zero, leaving ``<x^2>, ..., <x^(D-2)>``.
        """
        d = self.degree
        if self.is_even:
            return tuple(range(2, d - 1, 2))
        return tuple(range(1, d - 1))

    def __call__(self, x):
        out = 0.0
        for c in reversed(self.coeffs):
            out = out * x + float(c)
        return out

    def __repr__(self) -> str:
        return f"PolynomialPotential({[str(c) for c in self.coeffs]})"


class MomentExpression:
    """Affine form ``sum_t P_t(E) <x^t>`` with ``<x^0> = 1`` as the constant term.

    ``P_t`` are polynomials in the energy with Gaussian-rational coefficients,
    stored as ``{t: {deg: coeff}}``.
    """

    __slots__ = ("_terms",)

    def __init__(self, terms: Mapping[int, Mapping[int, "GaussQ | Number"]] | None = None):
        clean: dict[int, dict[int, GaussQ]] = {}
        for t, poly in (terms or {}).items():
            if t < 0:
                raise ValueError("negative moment index")
            p = {d: GaussQ.of(c) for d, c in poly.items() if GaussQ.of(c)}
            if p:
                clean[int(t)] = p
        self._terms = clean

    @classmethod
    def moment(cls, t: int, coeff: "GaussQ | Number" = 1) -> "MomentExpression":
        return cls({t: {0: coeff}})

    @property
    def terms(self) -> dict[int, dict[int, GaussQ]]:
        return {t: dict(p) for t, p in self._terms.items()}

    def __eq__(self, other) -> bool:
        if not isinstance(other, MomentExpression):
            return NotImplemented
        return self._terms == other._terms

    def __bool__(self) -> bool:
        return bool(self._terms)

    def __add__(self, other: "MomentExpression") -> "MomentExpression":
        out = {t: dict(p) for t, p in self._terms.items()}
        for t, p in other._terms.items():
            q = out.setdefault(t, {})
            for d, c in p.items():
                q[d] = q.get(d, GaussQ()) + c
        return MomentExpression(out)

    def __neg__(self) -> "MomentExpression":
        return self.scale(-1)

    def __sub__(self, other: "MomentExpression") -> "MomentExpression":
        return self + (-other)

    def scale(self, c: "GaussQ | Number") -> "MomentExpression":
        c = GaussQ.of(c)
        return MomentExpression({t: {d: v * c for d, v in p.items()} for t, p in self._terms.items()})

    def times_energy(self, power: int = 1) -> "MomentExpression":
        return MomentExpression({t: {d + power: v for d, v in p.items()} for t, p in self._terms.items()})

    @property
    def max_moment(self) -> int:
        return max(self._terms, default=0)

    @property
    def energy_degree(self) -> int:
        return max((d for p in self._terms.values() for d in p), default=0)

    def real_part(self) -> "MomentExpression":
        return MomentExpression({t: {d: c.re for d, c in p.items()} for t, p in self._terms.items()})

    def imag_part(self) -> "MomentExpression":
        return MomentExpression({t: {d: c.im for d, c in p.items()} for t, p in self._terms.items()})

    def evaluate(self, energy: float, moments: Sequence[float]) -> complex:
        """Numeric value given ``E`` and ``moments[t] = <x^t>`` (``moments[0]`` must be 1)."""
        total = 0j
        for t, p in self._terms.items():
            coeff = sum(complex(c) * energy**d for d, c in p.items())
            total += coeff * moments[t]
        return total

    def substitute(self, table: Mapping[int, "MomentExpression"]) -> "MomentExpression":
        """Replace each ``<x^t>`` found in ``table`` by its expression."""
        out = MomentExpression()
        for t, p in self._terms.items():
            for d, c in p.items():
                piece = table[t] if t in table else MomentExpression.moment(t)
                out = out + piece.scale(c).times_energy(d)
        return out

    def __repr__(self) -> str:
        if not self._terms:
            return "0"
        parts = []
        for t in sorted(self._terms):
            poly = " + ".join(
                f"{c!r}" + (f"*E^{d}" if d > 1 else "*E" if d else "") for d, c in sorted(self._terms[t].items())
            )
            parts.append(f"({poly})" + (f"<x^{t}>" if t else ""))
        return " + ".join(parts)


def _moment_of_x_power_times(V: PolynomialPotential, shift: int, scale: Number) -> MomentExpression:
    """``scale * <x^shift V(x)>`` as a moment expression."""
    return MomentExpression({shift + k: {0: c * scale} for k, c in enumerate(V.coeffs) if c})


def recursion_relation(V: PolynomialPotential, t: int) -> MomentExpression:
    """Left-hand side of the position-moment recursion at order ``t`` (equals zero).

    ``t(t-1)(t-2)<x^(t-3)> - 8t<x^(t-1)V> + 8tE<x^(t-1)> - 4<x^t V'> = 0``
    """
    if t < 0:
        raise ValueError("recursion order must be >= 0")
    expr = MomentExpression()
    if t >= 3:
        expr = expr + MomentExpression.moment(t - 3, t * (t - 1) * (t - 2))
    if t >= 1:
        expr = expr + _moment_of_x_power_times(V, t - 1, -8 * t)
        expr = expr + MomentExpression.moment(t - 1, 8 * t).times_energy()
    expr = expr + _moment_of_x_power_times(V.derivative(), t, -4)
    return expr


def derive_recursion(V: PolynomialPotential, t: int) -> MomentExpression:
    """Solve the order-``t`` recursion for its top moment ``<x^(t-1+deg V)>``.

    Returns the top moment expressed through lower moments and ``E``.
    At ``t = 0`` the relation is the force balance ``<V'> = 0``.
    """
    if V.degree < 1:
        raise ValueError("potential must have degree >= 1")
    rel = recursion_relation(V, t)
    top = t - 1 + V.degree
    lead_poly = rel.terms.get(top, {})
    if set(lead_poly) - {0} or not lead_poly:
        raise ValueError(f"degenerate leading coefficient for <x^{top}> at t={t}")
    lead = lead_poly[0]
    rest = MomentExpression({k: p for k, p in rel.terms.items() if k != top})
    return rest.scale(GaussQ(Fraction(-1)) / lead)


class MomentReducer:
    """Reduce mixed moments ``<x^a p^b>`` of a fixed potential to position moments.

    Uses ``<x^a p> = (i a / 2) <x^(a-1)>`` and, for ``b >= 2``,
    ``<x^a p^b> = 2 (E <x^a p^(b-2)> - <x^a p^(b-2) V>)``. Results are cached;
    the cache is only ever filled, never mutated.
    """

    def __init__(self, V: PolynomialPotential):
        if V.degree < 2:
            raise ValueError("potential must be at least quadratic")
        self.V = V
        self._Vop = V.as_operator()
        self._cache: dict[tuple[int, int], MomentExpression] = {}

    def mixed(self, a: int, b: int) -> MomentExpression:
        if a < 0 or b < 0:
            raise ValueError("powers must be non-negative")
        key = (a, b)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        if b == 0:
            out = MomentExpression.moment(a)
        elif b == 1:
            out = MomentExpression.moment(a - 1, GaussQ(Fraction(0), Fraction(a, 2))) if a else MomentExpression()
        else:
            out = self.mixed(a, b - 2).times_energy().scale(2)
            prod = normal_order(OperatorPoly.monomial(a, b - 2), self._Vop)
            for (xa, pb), c in prod.items():
                if pb >= b:  # pragma: no cover - p-power never grows when moving p past V(x)
                    raise RuntimeError("mixed-moment reduction failed to terminate")
                out = out - self.mixed(xa, pb).scale(c * 2)
        self._cache[key] = out
        return out

    def expectation(self, op: OperatorPoly) -> MomentExpression:
        out = MomentExpression()
        for (a, b), c in op.items():
            out = out + self.mixed(a, b).scale(c)
        return out


@lru_cache(maxsize=64)
def _reducer(V: PolynomialPotential) -> MomentReducer:
    return MomentReducer(V)


def reduce_mixed_moment(a: int, b: int, V: PolynomialPotential) -> MomentExpression:
    """``<x^a p^b>`` in an eigenstate of ``p^2/2 + V`` as an affine form in ``<x^t>`` and ``E``."""
    return _reducer(V).mixed(a, b)


def seed_table(V: PolynomialPotential, max_moment: int) -> dict[int, MomentExpression]:
    """Every ``<x^t>`` with ``t <= max_moment`` written in the seed moments and ``E``.

    The returned expressions only reference ``<x^0>`` (= 1) and the moments in
    ``V.seed_powers()``; odd moments of an even potential map to zero.
    """
    seeds = set(V.seed_powers())
    table: dict[int, MomentExpression] = {0: MomentExpression.moment(0)}
    for t in range(1, max_moment + 1):
        if V.is_even and t % 2:
            table[t] = MomentExpression()
        elif t in seeds:
            table[t] = MomentExpression.moment(t)
        else:
            r = t + 1 - V.degree
            table[t] = derive_recursion(V, r).substitute(table)
    return table


def dump_reductions(V: PolynomialPotential, max_total: int) -> list[str]:
    """One reduction identity per line for ``a + b <= max_total`` (debug/golden output)."""
    lines = []
    for total in range(max_total + 1):
        for b in range(total + 1):
            a = total - b
            lines.append(f"<x^{a} p^{b}> = {reduce_mixed_moment(a, b, V)!r}")
    return lines
