"""Shared numerical kernels: Hermitian eigendecompositions, water-filling,
Haar-random semi-unitary sampling, Gaussian tail probability, and seeded
complex Gaussian matrix sampling.

All routines are pure functions of their inputs; randomness enters only
through an explicit :class:`SeededRng`, so results are reproducible across
runs and independent of how callers parallelize.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc

HERMITIAN_TOL = 1e-12


@dataclass(frozen=True)
class SeededRng:
    """Deterministic random stream keyed by (seed, stream_id).

    Identical keys yield identical sample sequences regardless of process,
    thread count, or call ordering elsewhere in the program. Monte Carlo
    loops derive one stream per sample index via :meth:`substream`.
    """

    seed: int
    stream_id: int = 0
    _subkey: tuple = ()

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream_id, *self._subkey))
        return np.random.Generator(np.random.PCG64(ss))

    def substream(self, index: int) -> "SeededRng":
        # (seed, stream_id, index...) keys stay distinct because SeedSequence
        # hashes the whole spawn key.
        return SeededRng(self.seed, self.stream_id, self._subkey + (index,))


def require_hermitian(a: np.ndarray, tol: float = HERMITIAN_TOL, name: str = "matrix") -> np.ndarray:
    """Validate Hermitian symmetry to within `tol` (relative to scale)."""
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"{name} must be square, got shape {a.shape}")
    scale = max(1.0, float(np.abs(a).max(initial=0.0)))
    if np.abs(a - a.conj().T).max(initial=0.0) > tol * scale:
        raise ValueError(f"{name} is not Hermitian within tolerance {tol}")
    return 0.5 * (a + a.conj().T)


def require_psd(a: np.ndarray, tol: float = 1e-10, name: str = "matrix") -> np.ndarray:
    """Validate that a Hermitian matrix is PSD: min eigenvalue >= -tol*trace."""
    a = require_hermitian(a, name=name)
    w = np.linalg.eigvalsh(a)
    floor = -tol * max(1.0, abs(float(np.real(np.trace(a)))))
    if w.min(initial=0.0) < floor:
        raise ValueError(f"{name} is not positive semidefinite (min eig {w.min():.3e})")
    return a


def eig_hermitian(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a Hermitian matrix with a fixed ordering.

    Returns (eigenvalues sorted descending, eigenvectors as columns of a
    unitary matrix). Each eigenvector's global phase is fixed by making its
    first significantly nonzero entry real and positive, so repeated calls
    (and downstream sweeps) are deterministic.
    """
    a = require_hermitian(a)
    w, u = np.linalg.eigh(a)
    w = w[::-1].copy()
    u = u[:, ::-1].copy()
    # Phase canonicalization per column.
    for k in range(u.shape[1]):
        col = u[:, k]
        idx = np.flatnonzero(np.abs(col) > 1e-12 * np.abs(col).max())
        if idx.size:
            ph = col[idx[0]]
            u[:, k] = col * (np.conj(ph) / abs(ph))
    return w, u


def water_fill(gains, budget: float) -> np.ndarray:
    """Water-filling power allocation p_i = max(mu - 1/g_i, 0), sum p = budget.

    The water level mu is located by bisection and then refined exactly on
    the resulting active set, so the budget is met to machine precision.
    """
    g = np.asarray(gains, dtype=float)
    if g.size == 0:
        raise ValueError("gains must be nonempty")
    if np.any(g <= 0):
        raise ValueError("all gains must be positive")
    if budget <= 0:
        raise ValueError("budget must be positive")
    inv = 1.0 / g
    lo = inv.min()           # water level where every allocation is zero
    hi = inv.max() + budget  # level where the sum certainly exceeds budget
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if np.maximum(mid - inv, 0.0).sum() > budget:
            hi = mid
        else:
            lo = mid
        if hi - lo < 1e-12 * max(1.0, hi):
            break
    active = 0.5 * (lo + hi) - inv > 0
    if not active.any():
        active = inv == inv.min()
    mu = (budget + inv[active].sum()) / active.sum()
    return np.where(active, np.maximum(mu - inv, 0.0), 0.0)


def haar_semiunitary(rows: int, cols: int, rng: SeededRng) -> np.ndarray:
    """Draw a Haar-distributed semi-unitary matrix Q (rows x cols), Q Q^H = I.

    Construction: QR factorization of an i.i.d. complex Gaussian matrix with
    the triangular factor's diagonal phases absorbed into Q, which makes the
    law exactly rotation invariant.
    """
    if cols < rows:
        raise ValueError(f"need cols >= rows, got rows={rows}, cols={cols}")
    gen = rng.generator()
    g = (gen.standard_normal((cols, rows)) + 1j * gen.standard_normal((cols, rows))) / np.sqrt(2.0)
    q, r = np.linalg.qr(g, mode="reduced")
    d = np.diagonal(r)
    q = q * (d / np.abs(d))
    return q.conj().T


def gaussian_q(x):
    """Standard normal tail probability Q(x) = P(Z > x)."""
    x = np.asarray(x, dtype=float)
    out = 0.5 * erfc(x / np.sqrt(2.0))
    return float(out) if out.ndim == 0 else out


def sample_gaussian_matrix(rows: int, cols: int, variance: float, rng: SeededRng) -> np.ndarray:
    """I.i.d. circularly symmetric complex Gaussian matrix, per-entry variance as given."""
    if variance < 0:
        raise ValueError("variance must be nonnegative")
    gen = rng.generator()
    scale = np.sqrt(variance / 2.0)
    return scale * (gen.standard_normal((rows, cols)) + 1j * gen.standard_normal((rows, cols)))


def hermitian_sqrt(a: np.ndarray) -> np.ndarray:
    """PSD square root via eigendecomposition (negative dust clipped at 0)."""
    w, u = eig_hermitian(a)
    return (u * np.sqrt(np.maximum(w, 0.0))) @ u.conj().T


def project_psd_trace(a: np.ndarray, budget: float) -> np.ndarray:
    """Euclidean projection onto {X Hermitian PSD, tr X <= budget}.

    Eigenvalues are clipped at zero; if their sum still exceeds the budget
    they are shifted down by a common water level before clipping (the
    simplex projection), which is the exact projection in Frobenius norm.
    """
    w, u = eig_hermitian(0.5 * (a + a.conj().T))
    w = np.real(w)
    wp = np.maximum(w, 0.0)
    if wp.sum() > budget:
        # find nu with sum(max(w - nu, 0)) = budget (piecewise linear in nu)
        ws = np.sort(w)[::-1]
        csum = np.cumsum(ws)
        k = np.arange(1, w.size + 1)
        nu_candidates = (csum - budget) / k
        valid = ws - nu_candidates > 0
        nu = nu_candidates[np.flatnonzero(valid)[-1]]
        wp = np.maximum(w - nu, 0.0)
    return (u * wp) @ u.conj().T


def map_indexed(fn, n_items: int, workers: int = 1) -> list:
    """Apply fn(i) for i in range(n_items), returning results in index order.

    Worker count only affects wall time, never the results: each item is
    keyed by its index and the output list ordering is fixed.
    """
    if workers <= 1 or n_items <= 1:
        return [fn(i) for i in range(n_items)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(n_items)))
