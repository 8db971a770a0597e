"""Reference spectra from dense diagonalisation in a harmonic-oscillator basis.

Used only to check bootstrap results; nothing in the bootstrap path imports it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg, optimize

from .opalg import PolynomialPotential

MAX_SIZE = 2048


class OracleError(RuntimeError):
    """Diagonalisation did not converge within the basis-size cap."""


@dataclass(frozen=True)
class BasisConfig:
    """Truncated basis of ``N`` harmonic-oscillator states with frequency ``omega_ref``.

    ``omega_ref=None`` uses twice the frequency that minimises the Gaussian
    trial energy of the potential. The narrower basis keeps high powers of
    ``x`` well conditioned, which matters for the octic and beyond.
    """

    N: int = 32
    omega_ref: float | None = None
    conv_tol: float = 1e-8
    max_size: int = MAX_SIZE

    def __post_init__(self):
        if self.N < 10:
            raise ValueError("basis size N must be >= 10")
        if self.omega_ref is not None and not self.omega_ref > 0:
            raise ValueError("omega_ref must be positive")


def gaussian_frequency(V: PolynomialPotential) -> float:
    """Frequency of the best Gaussian trial state centred at the origin."""
    cs = [float(c) for c in V.coeffs]

    def energy(logw):
        w = np.exp(logw)
        e = w / 4
        for k, c in enumerate(cs):
            if c and k % 2 == 0:
                # <x^(2m)> = (2m-1)!! / (2w)^m
                m = k // 2
                e += c * float(np.prod(np.arange(1, 2 * m, 2))) / (2 * w) ** m
        return e

    res = optimize.minimize_scalar(energy, bounds=(-8.0, 8.0), method="bounded")
    return float(np.exp(res.x))


def hamiltonian(V: PolynomialPotential, N: int, omega: float) -> np.ndarray:
    """``p^2/2 + V(x)`` in the first ``N`` oscillator states.

    Powers of ``x`` are formed in a padded space so the kept ``N x N`` block
    is exact.
    """
    cs = [float(c) for c in V.coeffs]
    M = N + len(cs) + 2
    a = np.diag(np.sqrt(np.arange(1, M)), 1)
    x = (a + a.T) / np.sqrt(2 * omega)
    p = 1j * np.sqrt(omega / 2) * (a.T - a)
    H = 0.5 * np.real(p @ p)
    xk = np.eye(M)
    for k, c in enumerate(cs):
        if k:
            xk = xk @ x
        if c:
            H = H + c * xk
    return H[:N, :N]


def _lowest(V, N, omega, k):
    H = hamiltonian(V, N, omega)
    return linalg.eigh(H, eigvals_only=True, subset_by_index=[0, k - 1])


def diagonalize(V: PolynomialPotential, cfg: BasisConfig | None = None, k: int = 2) -> np.ndarray:
    """The ``k`` lowest eigenvalues, doubling ``N`` until they move by less than ``cfg.conv_tol``."""
    return diagonalize_with_size(V, cfg, k)[0]


def diagonalize_with_size(V: PolynomialPotential, cfg: BasisConfig | None = None, k: int = 2) -> tuple[np.ndarray, int]:
    cfg = cfg or BasisConfig()
    if not V.is_confining:
        raise ValueError("potential must be confining (even degree, positive leading coefficient)")
    if not 1 <= k <= cfg.N:
        raise ValueError("k must lie in [1, N]")
    omega = cfg.omega_ref if cfg.omega_ref is not None else 2.0 * gaussian_frequency(V)
    N = cfg.N
    prev = _lowest(V, N, omega, k)
    while True:
        if 2 * N > cfg.max_size:
            raise OracleError(f"eigenvalues not converged to {cfg.conv_tol} at N={N} (omega_ref={omega:.6g})")
        cur = _lowest(V, 2 * N, omega, k)
        if np.max(np.abs(cur - prev)) < cfg.conv_tol:
            return cur, 2 * N
        prev, N = cur, 2 * N
