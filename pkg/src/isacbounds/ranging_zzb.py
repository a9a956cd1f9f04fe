"""Ranging waveform analysis: delay CRB, Ziv-Zakai bound, and PSD design.

A waveform is represented by its power spectral density on [0, f_high].
The delay CRB depends only on the RMS bandwidth, so it is minimized by a
single tone at the band edge; the Ziv-Zakai bound additionally penalizes
autocorrelation sidelobes through

    zzb = integral_0^{eps_max} x * Q( sqrt(snr (1 - R(x)) / 2) ) dx

with R the normalized autocorrelation (cosine transform of the PSD) and Q
the standard normal tail. Minimizing the ZZB over unit-energy PSDs moves
power from low to high frequencies as the SNR grows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import SeededRng, gaussian_q, map_indexed


@dataclass(frozen=True)
class WaveformPsd:
    freqs: np.ndarray        # strictly increasing, >= 0, Hz
    power: np.ndarray        # nonnegative spectral density per bin

    def __post_init__(self):
        f = np.asarray(self.freqs, dtype=float)
        p = np.asarray(self.power, dtype=float)
        if f.ndim != 1 or f.size == 0 or p.shape != f.shape:
            raise ValueError("frequency and power grids must be matching 1-D arrays")
        if f.size > 1 and np.any(np.diff(f) <= 0):
            raise ValueError("frequency grid must be strictly increasing")
        if np.any(f < 0):
            raise ValueError("frequencies must be nonnegative")
        if np.any(p < -1e-15):
            raise ValueError("power values must be nonnegative")
        object.__setattr__(self, "freqs", f)
        object.__setattr__(self, "power", np.maximum(p, 0.0))
        if self.total_energy <= 0:
            raise ValueError("total energy must be positive")

    @property
    def quad_weights(self) -> np.ndarray:
        """Trapezoid weights of the frequency grid (unit mass for one bin)."""
        f = self.freqs
        if f.size == 1:
            return np.ones(1)
        w = np.empty_like(f)
        w[1:-1] = 0.5 * (f[2:] - f[:-2])
        w[0] = 0.5 * (f[1] - f[0])
        w[-1] = 0.5 * (f[-1] - f[-2])
        return w

    @property
    def total_energy(self) -> float:
        return float(self.quad_weights @ self.power)


@dataclass(frozen=True)
class Acf:
    """Normalized autocorrelation sampled on a distance-lag grid."""

    lags: np.ndarray         # meters (delay times propagation speed)
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if np.any(np.abs(v) > 1.0 + 1e-9):
            raise ValueError("normalized autocorrelation cannot exceed one")
        lags = np.asarray(self.lags, dtype=float)
        at_zero = np.flatnonzero(lags == 0.0)
        if at_zero.size and abs(v[at_zero[0]] - 1.0) > 1e-12:
            raise ValueError("autocorrelation must equal one at zero lag")
        object.__setattr__(self, "lags", lags)
        object.__setattr__(self, "values", v)


def rms_bandwidth(psd: WaveformPsd) -> float:
    """Energy-weighted RMS frequency: sqrt(int f^2 S / int S)."""
    w = psd.quad_weights * psd.power
    total = w.sum()
    if total <= 0:
        raise ValueError("zero-energy waveform has no RMS bandwidth")
    return float(np.sqrt((w @ psd.freqs ** 2) / total))


def crb_delay(beta: float, snr: float, wave_speed: float = 1.0) -> float:
    """Delay-estimation CRB in squared distance: c^2 / (8 pi^2 beta^2 snr)."""
    if beta <= 0 or snr <= 0:
        raise ValueError("bandwidth and SNR must be positive")
    return wave_speed ** 2 / (8.0 * np.pi ** 2 * beta ** 2 * snr)


def acf_from_psd(psd: WaveformPsd, lag_grid, wave_speed: float = 1.0) -> Acf:
    """Cosine transform of the PSD, normalized to one at zero lag."""
    lags = np.asarray(lag_grid, dtype=float)
    w = psd.quad_weights * psd.power
    w = w / w.sum()
    phases = 2.0 * np.pi * np.outer(lags / wave_speed, psd.freqs)
    return Acf(lags, np.cos(phases) @ w)


def zzb(psd: WaveformPsd, snr: float, eps_max: float, x_grid=None,
        wave_speed: float = 1.0, n_lag: int = 2048) -> float:
    """Trapezoid evaluation of the Ziv-Zakai delay bound in squared distance."""
    if eps_max <= 0:
        raise ValueError("maximum ranging error must be positive")
    if snr < 0:
        raise ValueError("SNR must be nonnegative")
    x = np.linspace(0.0, eps_max, n_lag) if x_grid is None else np.asarray(x_grid, dtype=float)
    acf = acf_from_psd(psd, x, wave_speed)
    integrand = x * gaussian_q(np.sqrt(np.maximum(snr * (1.0 - acf.values) / 2.0, 0.0)))
    return float(np.trapezoid(integrand, x))


def _zzb_value_and_gradient(q_mass, cos_mat, x, wx, snr):
    """Objective and gradient in normalized-mass coordinates.

    q_mass holds per-bin energies summing to one, so the autocorrelation is
    simply cos_mat @ q_mass and the energy constraint is the unit simplex.
    """
    acf = cos_mat @ q_mass
    snr_term = np.maximum(1.0 - acf, 0.0)
    g = np.sqrt(np.maximum(snr * snr_term / 2.0, 1e-300))
    q_tail = gaussian_q(g)
    val = float(np.trapezoid(x * q_tail, x))
    phi = np.exp(-0.5 * g * g) / np.sqrt(2.0 * np.pi)
    # d/dq of x*Q(g): the x=0 node contributes nothing (double zero there)
    coef = np.where(g > 1e-12, wx * x * phi * snr / (4.0 * g), 0.0)
    grad = cos_mat.T @ coef
    return val, grad


def _project_simplex(v):
    """Euclidean projection onto {q >= 0, sum q = 1}."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    rho = np.flatnonzero(u - css / np.arange(1, v.size + 1) > 0)[-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def _minimize_zzb_from(q0, cos_mat, x, wx, snr, max_iters=400, tol=1e-12):
    q = _project_simplex(np.asarray(q0, dtype=float))
    val, grad = _zzb_value_and_gradient(q, cos_mat, x, wx, snr)
    step = 1.0 / max(np.linalg.norm(grad), 1e-12)
    for _ in range(max_iters):
        improved = False
        for _ in range(50):
            cand = _project_simplex(q - step * grad)
            cand_val, cand_grad = _zzb_value_and_gradient(cand, cos_mat, x, wx, snr)
            if cand_val <= val:
                improved = True
                break
            step *= 0.5
        if not improved:
            break
        delta = val - cand_val
        q, val, grad = cand, cand_val, cand_grad
        step *= 2.0
        if delta <= tol * max(1.0, abs(val)):
            break
    return q, val


def zzb_optimal_psd(snr: float, n_bins: int, f_high: float, eps_max: float = None,
                    restarts: int = 20, rng: SeededRng = None, wave_speed: float = 1.0,
                    n_lag: int = 2048, max_iters: int = 400, workers: int = 1):
    """Search for the unit-energy PSD minimizing the Ziv-Zakai bound.

    Projected gradient on the energy simplex with multiple starts: a flat
    spectrum, all power at the band edge, and Dirichlet-random draws. The
    objective is nonconvex (ambiguity sidelobes), so the best restart wins.
    Returns (WaveformPsd, zzb value).
    """
    if n_bins < 2:
        raise ValueError("need at least two frequency bins")
    if rng is None:
        rng = SeededRng(0)
    if eps_max is None:
        eps_max = 10.0 * wave_speed / f_high
    freqs = np.linspace(0.0, f_high, n_bins)
    x = np.linspace(0.0, eps_max, n_lag)
    wx = np.empty_like(x)
    wx[1:-1] = 0.5 * (x[2:] - x[:-2])
    wx[0] = 0.5 * (x[1] - x[0])
    wx[-1] = 0.5 * (x[-1] - x[-2])
    cos_mat = np.cos(2.0 * np.pi * np.outer(x / wave_speed, freqs))

    edge = np.zeros(n_bins)
    edge[-1] = 1.0
    starts = [np.full(n_bins, 1.0 / n_bins), edge]
    for i in range(max(0, restarts - len(starts))):
        starts.append(rng.substream(i).generator().dirichlet(np.ones(n_bins)))

    def solve_one(i):
        return _minimize_zzb_from(starts[i], cos_mat, x, wx, snr, max_iters=max_iters)

    results = map_indexed(solve_one, len(starts), workers)
    best_q, best_val = min(results, key=lambda r: r[1])
    # map normalized bin energies back to density values on the grid
    weights = WaveformPsd(freqs, np.ones(n_bins)).quad_weights
    power = best_q / weights
    return WaveformPsd(freqs, power), float(best_val)


def band_power_fraction(psd: WaveformPsd, f_low: float, f_high: float = None) -> float:
    """Fraction of total energy carried at frequencies in [f_low, f_high]."""
    w = psd.quad_weights * psd.power
    sel = psd.freqs >= f_low
    if f_high is not None:
        sel &= psd.freqs <= f_high
    return float(w[sel].sum() / w.sum())
