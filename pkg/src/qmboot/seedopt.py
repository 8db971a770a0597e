"""Best-case positivity over the seed moments at fixed energy.

At fixed ``E`` the bootstrap matrix is affine in the seed moments, so
``phi(s) = lambda_min(S M(E, s) S)`` is concave for any fixed positive diagonal
scaling ``S``. Its maximum over a seed box decides whether any state with that
energy survives the positivity test. Points are solved in lock-step batches:
bisection for one seed, a central-cut ellipsoid method for more.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

from .bootstrap import DEFAULT_TOL, BootstrapError, MatrixTemplate


@dataclass
class SeedSearch:
    """Result of the seed maximisation at each energy.

    ``best`` is the largest scaled minimum eigenvalue found (a lower bound on
    the true maximum), ``upper`` a certified upper bound, ``witness`` the seeds
    achieving ``best``. ``decided`` is False where the iteration cap was hit
    with ``best < -tol <= upper``.
    """

    energy: np.ndarray
    best: np.ndarray
    upper: np.ndarray
    witness: np.ndarray
    decided: np.ndarray

    def feasible(self, tol: float = DEFAULT_TOL) -> np.ndarray:
        return self.best >= -tol


def _scaling(a0: np.ndarray, ai: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Seed-independent diagonal scale from the largest |diag M| over the box corners and centre."""
    ns = ai.shape[1]
    d0 = np.real(np.einsum("pii->pi", a0))
    di = np.real(np.einsum("psii->psi", ai))
    pts = [0.5 * (lo + hi)] + [np.where(np.array(c), hi, lo) for c in product((0, 1), repeat=ns)]
    mag = np.zeros_like(d0)
    for pt in pts:
        mag = np.maximum(mag, np.abs(d0 + np.einsum("s,psi->pi", pt, di)))
    mag = np.where(mag > 0, mag, 1.0)
    return 1.0 / np.sqrt(mag)


def _lam_and_grad(b0, bi, x):
    m = b0 + np.einsum("ps,psij->pij", x, bi)
    m = 0.5 * (m + np.conj(np.swapaxes(m, 1, 2)))
    try:
        w, v = np.linalg.eigh(m)
    except np.linalg.LinAlgError as exc:
        raise BootstrapError(f"Hermitian eigensolver did not converge: {exc}") from exc
    vec = v[:, :, 0]
    grad = np.real(np.einsum("pi,psij,pj->ps", np.conj(vec), bi, vec))
    return w[:, 0], grad


def maximize_min_eigenvalue(
    tpl: MatrixTemplate,
    energy: np.ndarray,
    lo,
    hi,
    tol: float = DEFAULT_TOL,
    max_iter: int = 600,
    rel_gap: float = 0.05,
) -> SeedSearch:
    """Maximise the scaled minimum eigenvalue over the seed box ``[lo, hi]`` at each energy.

    Iteration stops per point once it is proven feasible (``best >= -tol``), or
    proven infeasible with the bound gap below ``rel_gap * |best|``.
    """
    energy = np.atleast_1d(np.asarray(energy, dtype=float))
    lo = np.asarray(lo, dtype=float).reshape(-1)
    hi = np.asarray(hi, dtype=float).reshape(-1)
    ns = tpl.n_seeds
    if lo.shape[0] != ns or hi.shape[0] != ns:
        raise ValueError(f"seed box must have {ns} dimensions")
    if np.any(hi < lo):
        raise ValueError("seed box has hi < lo")
    npts = energy.shape[0]
    a0, ai = tpl.affine_parts(energy)
    scale = _scaling(a0, ai, lo, hi)
    b0 = a0 * scale[:, :, None] * scale[:, None, :]
    bi = ai * scale[:, None, :, None] * scale[:, None, None, :]

    best = np.full(npts, -np.inf)
    upper = np.full(npts, np.inf)
    witness = np.tile(0.5 * (lo + hi), (npts, 1))
    if ns == 0:
        lam, _ = _lam_and_grad(b0, bi, np.zeros((npts, 0)))
        return SeedSearch(energy, lam, lam.copy(), witness, np.ones(npts, bool))

    active = np.ones(npts, bool)
    if ns == 1:
        left = np.full(npts, lo[0])
        right = np.full(npts, hi[0])
        for _ in range(max_iter):
            idx = np.nonzero(active)[0]
            if idx.size == 0:
                break
            x = 0.5 * (left[idx] + right[idx])
            lam, grad = _lam_and_grad(b0[idx], bi[idx], x[:, None])
            g = grad[:, 0]
            improve = lam > best[idx]
            best[idx] = np.where(improve, lam, best[idx])
            witness[idx, 0] = np.where(improve, x, witness[idx, 0])
            reach = np.where(g > 0, right[idx] - x, x - left[idx])
            upper[idx] = np.minimum(upper[idx], lam + np.abs(g) * reach)
            go_right = g > 0
            left[idx] = np.where(go_right, x, left[idx])
            right[idx] = np.where(go_right, right[idx], x)
            done = (
                (best[idx] >= -tol)
                | ((upper[idx] < -tol) & (upper[idx] - best[idx] <= rel_gap * np.abs(best[idx])))
                | (g == 0)
                | (right[idx] - left[idx] <= 1e-15 * max(1.0, float(np.max(np.abs(hi)))))
            )
            active[idx[done]] = False
    else:
        center = np.tile(0.5 * (lo + hi), (npts, 1))
        shape = np.tile(np.diag(((hi - lo) / 2) ** 2 * ns), (npts, 1, 1))
        n = float(ns)
        for _ in range(max_iter):
            idx = np.nonzero(active)[0]
            if idx.size == 0:
                break
            x = center[idx]
            outside = (x < lo) | (x > hi)
            cut = np.zeros_like(x)
            out_rows = np.any(outside, axis=1)
            if np.any(out_rows):
                viol = np.maximum(lo - x, x - hi)
                j = np.argmax(viol, axis=1)
                sign = np.where(x[np.arange(x.shape[0]), j] < lo[j], 1.0, -1.0)
                cut[np.arange(x.shape[0]), j] = sign
            inside = ~out_rows
            if np.any(inside):
                ii = idx[inside]
                lam, grad = _lam_and_grad(b0[ii], bi[ii], x[inside])
                improve = lam > best[ii]
                best[ii] = np.where(improve, lam, best[ii])
                witness[ii] = np.where(improve[:, None], x[inside], witness[ii])
                pg = np.einsum("pij,pj->pi", shape[ii], grad)
                rad = np.sqrt(np.maximum(np.einsum("pi,pi->p", grad, pg), 0.0))
                upper[ii] = np.minimum(upper[ii], lam + rad)
                cut[inside] = grad
            pc = np.einsum("pij,pj->pi", shape[idx], cut)
            den = np.sqrt(np.maximum(np.einsum("pi,pi->p", cut, pc), 0.0))
            stalled = den <= 0
            den = np.where(stalled, 1.0, den)
            gt = pc / den[:, None]
            center[idx] = x + gt / (n + 1)
            shape[idx] = (n * n / (n * n - 1)) * (shape[idx] - 2.0 / (n + 1) * np.einsum("pi,pj->pij", gt, gt))
            done = (
                (best[idx] >= -tol)
                | ((upper[idx] < -tol) & (upper[idx] - best[idx] <= rel_gap * np.abs(best[idx])))
                | stalled
            )
            active[idx[done]] = False
    decided = (best >= -tol) | (upper < -tol)
    return SeedSearch(energy, best, upper, witness, decided)
