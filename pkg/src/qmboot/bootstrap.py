"""Bootstrap matrices, positivity tests and feasibility scans.

For a basis of operators ``O_i = x^m p^n`` the matrix ``M_ij = <O_i^dagger O_j>``
of an energy eigenstate must be positive semidefinite. Entries are reduced
symbolically once per (potential, basis) and compiled into a dense coefficient
tensor, so evaluating ``M`` at many ``(E, seeds)`` points is a single matrix
product.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

from .opalg import (
    MomentExpression,
    OperatorPoly,
    PolynomialPotential,
    _reducer,
    adjoint,
    derive_recursion,
    normal_order,
)

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-9


class BootstrapError(RuntimeError):
    """Numerical failure in the bootstrap pipeline."""


@dataclass(frozen=True)
class BasisSpec:
    """Operators ``x^m p^n`` (``m <= kx``, ``n <= kp``) in graded-lex order, truncated to ``depth``.

    Ordering is by total degree ``m + n``, then by ascending ``m``. ``depth`` is
    the number of operators kept, i.e. the matrix dimension.
    """

    kx: int
    kp: int
    depth: int

    def __post_init__(self):
        if self.kx < 0 or self.kp < 0:
            raise ValueError("kx and kp must be non-negative")
        if not 1 <= self.depth <= (self.kx + 1) * (self.kp + 1):
            raise ValueError(f"depth must lie in [1, {(self.kx + 1) * (self.kp + 1)}]")

    @classmethod
    def default(cls, depth: int, kp: int = 2) -> "BasisSpec":
        """``depth`` operators with at most ``kp`` powers of ``p`` and no cap on the x-power.

        Every graded-lex level below the cut contributes at least one operator,
        so ``kx = depth - 1`` never truncates the ordering prefix.
        """
        if depth < 1:
            raise ValueError("depth must be >= 1")
        return cls(kx=depth - 1, kp=kp, depth=depth)

    @property
    def monomials(self) -> tuple[tuple[int, int], ...]:
        return _graded_lex(self.kx, self.kp)[: self.depth]

    def operators(self) -> list[OperatorPoly]:
        return [OperatorPoly.monomial(m, n) for m, n in self.monomials]


@lru_cache(maxsize=None)
def _graded_lex(kx: int, kp: int) -> tuple[tuple[int, int], ...]:
    mons = [(m, n) for m in range(kx + 1) for n in range(kp + 1)]
    return tuple(sorted(mons, key=lambda mn: (mn[0] + mn[1], mn[0])))


class MatrixTemplate:
    """Compiled form of the bootstrap matrix for one potential and basis.

    ``entries[i][j]`` is the exact :class:`MomentExpression` of
    ``<O_i^dagger O_j>``; ``coeffs[t, d, i, j]`` holds the same data as complex
    floats (coefficient of ``E^d <x^t>``).
    """

    def __init__(self, V: PolynomialPotential, basis: BasisSpec):
        if not V.is_confining:
            raise ValueError("potential must be confining (even degree, positive leading coefficient)")
        self.V = V
        self.basis = basis
        reducer = _reducer(V)
        ops = basis.operators()
        k = len(ops)
        self.entries: list[list[MomentExpression]] = [[None] * k for _ in range(k)]  # type: ignore[list-item]
        for i, oi in enumerate(ops):
            left = adjoint(oi)
            for j, oj in enumerate(ops):
                self.entries[i][j] = reducer.expectation(normal_order(left, oj))
        self.max_moment = max(e.max_moment for row in self.entries for e in row)
        self.max_energy_degree = max(e.energy_degree for row in self.entries for e in row)
        coeffs = np.zeros((self.max_moment + 1, self.max_energy_degree + 1, k, k), dtype=complex)
        for i in range(k):
            for j in range(k):
                for t, poly in self.entries[i][j].terms.items():
                    for d, c in poly.items():
                        coeffs[t, d, i, j] = complex(c)
        self.coeffs = coeffs
        self._flat = coeffs.reshape(-1, k * k)
        self.recursion = MomentRecursion(V, self.max_moment)

    @property
    def dim(self) -> int:
        return self.basis.depth

    @property
    def n_seeds(self) -> int:
        return len(self.V.seed_powers())

    def matrices(self, energy: np.ndarray, seeds: np.ndarray) -> np.ndarray:
        """Stack of bootstrap matrices, shape ``(P, dim, dim)``, for ``P`` points."""
        energy = np.atleast_1d(np.asarray(energy, dtype=float))
        seeds = np.asarray(seeds, dtype=float).reshape(energy.shape[0], -1)
        return self._from_moments(energy, self.recursion(energy, seeds))

    def _from_moments(self, energy: np.ndarray, mom: np.ndarray) -> np.ndarray:
        epow = energy[:, None] ** np.arange(self.max_energy_degree + 1)[None, :]
        weights = (mom[:, :, None] * epow[:, None, :]).reshape(energy.shape[0], -1)
        k = self.dim
        return (weights @ self._flat).reshape(-1, k, k)

    def affine_parts(self, energy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Split ``M(E, s) = A0(E) + sum_i s_i A_i(E)`` at each energy.

        Returns ``A0`` with shape ``(P, dim, dim)`` and ``A`` with shape
        ``(P, n_seeds, dim, dim)``. The split is exact because the moments are
        linear in the seeds at fixed energy.
        """
        energy = np.atleast_1d(np.asarray(energy, dtype=float))
        parts = self.recursion.linear_parts(energy)
        a0 = self._from_moments(energy, parts[:, 0])
        ai = [self._from_moments(energy, parts[:, i + 1]) for i in range(self.n_seeds)]
        k = self.dim
        return a0, (np.stack(ai, axis=1) if ai else np.zeros((energy.shape[0], 0, k, k), dtype=complex))

    def min_eigenvalues(self, energy: np.ndarray, seeds: np.ndarray, chunk: int = 8192) -> np.ndarray:
        """Normalised smallest eigenvalue at each point, evaluated in bounded-memory chunks."""
        energy = np.atleast_1d(np.asarray(energy, dtype=float))
        seeds = np.asarray(seeds, dtype=float).reshape(energy.shape[0], -1)
        out = np.empty(energy.shape[0])
        for lo in range(0, energy.shape[0], chunk):
            hi = lo + chunk
            out[lo:hi] = min_eigenvalues(self.matrices(energy[lo:hi], seeds[lo:hi]))
        return out


class MomentRecursion:
    """Numeric position moments ``<x^0..x^tmax>`` from ``E`` and the seed moments."""

    def __init__(self, V: PolynomialPotential, tmax: int):
        self.V = V
        self.tmax = tmax
        self.seed_powers = V.seed_powers()
        self.steps: list[tuple[int, list[tuple[int, float, float]]]] = []
        seeds = set(self.seed_powers)
        for t in range(1, tmax + 1):
            if t in seeds or (V.is_even and t % 2):
                continue
            expr = derive_recursion(V, t + 1 - V.degree)
            terms = []
            for src, poly in expr.terms.items():
                c0 = complex(poly.get(0, 0)).real if 0 in poly else 0.0
                c1 = complex(poly.get(1, 0)).real if 1 in poly else 0.0
                terms.append((src, c0, c1))
            self.steps.append((t, terms))

    def __call__(self, energy: np.ndarray, seeds: np.ndarray) -> np.ndarray:
        energy = np.atleast_1d(np.asarray(energy, dtype=float))
        seeds = np.asarray(seeds, dtype=float).reshape(energy.shape[0], -1)
        if seeds.shape[1] != len(self.seed_powers):
            raise ValueError(f"expected {len(self.seed_powers)} seed moments, got {seeds.shape[1]}")
        if not (np.all(np.isfinite(energy)) and np.all(np.isfinite(seeds))):
            raise ValueError("energy and seed moments must be finite")
        return self._run(energy, 1.0, seeds)

    def linear_parts(self, energy: np.ndarray) -> np.ndarray:
        """Moments split as ``m0 + sum_i s_i m_i``; shape ``(P, 1 + n_seeds, tmax + 1)``."""
        energy = np.atleast_1d(np.asarray(energy, dtype=float))
        ns = len(self.seed_powers)
        out = [self._run(energy, 1.0, np.zeros((energy.shape[0], ns)))]
        for i in range(ns):
            unit = np.zeros((energy.shape[0], ns))
            unit[:, i] = 1.0
            out.append(self._run(energy, 0.0, unit))
        return np.stack(out, axis=1)

    def _run(self, energy: np.ndarray, norm: float, seeds: np.ndarray) -> np.ndarray:
        mom = np.zeros((energy.shape[0], self.tmax + 1))
        mom[:, 0] = norm
        for col, power in enumerate(self.seed_powers):
            if power <= self.tmax:
                mom[:, power] = seeds[:, col]
        for t, terms in self.steps:
            acc = np.zeros(energy.shape[0])
            for src, c0, c1 in terms:
                acc += (c0 + c1 * energy) * mom[:, src]
            mom[:, t] = acc
        return mom


@lru_cache(maxsize=32)
def template(V: PolynomialPotential, basis: BasisSpec) -> MatrixTemplate:
    return MatrixTemplate(V, basis)


@dataclass
class BootstrapMatrix:
    matrix: np.ndarray
    energy: float
    seeds: tuple[float, ...]
    potential: PolynomialPotential
    basis: BasisSpec

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


def build_matrix(energy: float, seeds: Sequence[float], V: PolynomialPotential, basis: BasisSpec) -> BootstrapMatrix:
    """Evaluate ``<O_i^dagger O_j>`` at one ``(E, seeds)`` point."""
    seeds = tuple(float(s) for s in seeds)
    if not np.isfinite(energy) or not all(np.isfinite(seeds)):
        raise ValueError("energy and seed moments must be finite")
    tpl = template(V, basis)
    if len(seeds) != tpl.n_seeds:
        raise ValueError(f"potential needs {tpl.n_seeds} seed moments {V.seed_powers()}, got {len(seeds)}")
    m = tpl.matrices(np.array([energy]), np.array([seeds]))[0]
    return BootstrapMatrix(m, float(energy), seeds, V, basis)


def min_eigenvalues(mats: np.ndarray) -> np.ndarray:
    """Smallest eigenvalue of each diagonally normalised Hermitian matrix.

    ``M -> D^-1/2 M D^-1/2`` with ``D = diag(M)`` is a congruence, so it keeps
    the sign of the spectrum while removing the huge dynamic range of high
    moments. A non-positive diagonal entry (impossible for a normalisable
    state) maps to ``-1 + min(diag)``, below any tolerance.
    """
    mats = np.asarray(mats)
    single = mats.ndim == 2
    if single:
        mats = mats[None]
    if not np.all(np.isfinite(mats)):
        raise BootstrapError("bootstrap matrix has non-finite entries")
    diag = np.real(np.einsum("pii->pi", mats))
    bad = np.min(diag, axis=1)
    ok = bad > 0
    # rounding can leave an exactly-zero <O^dagger O> at -1e-17, so never let it pass a tolerance
    out = np.where(ok, 0.0, -1.0 + np.minimum(bad, 0.0))
    if np.any(ok):
        sub = mats[ok]
        s = 1.0 / np.sqrt(diag[ok])
        sub = sub * s[:, :, None] * s[:, None, :]
        sub = 0.5 * (sub + np.conj(np.swapaxes(sub, 1, 2)))
        try:
            out[ok] = np.linalg.eigvalsh(sub)[:, 0]
        except np.linalg.LinAlgError as exc:
            raise BootstrapError(f"Hermitian eigensolver did not converge: {exc}") from exc
    return out[0] if single else out


def is_feasible(M: BootstrapMatrix | np.ndarray, tol: float = DEFAULT_TOL) -> bool:
    mat = M.matrix if isinstance(M, BootstrapMatrix) else np.asarray(M)
    try:
        lam = min_eigenvalues(mat)
    except BootstrapError as exc:
        raise BootstrapError(f"{exc}\nmatrix:\n{np.array2string(mat, precision=6)}") from exc
    return bool(lam >= -tol)
