"""Rate / detection-error-exponent tradeoff region.

For a joint waveform with statistical covariance R (PSD, tr R <= P) the two
achievable-performance bounds are

    rate      R <= log2 |I + H_c R H_c^H / sigma_c^2|          [bits/use]
    exponent  E <= (1/4) tr{H_s R H_s^H} / sigma_s^2

The boundary is traced by scalarizing with a weight lambda in [0, 1]:
lambda = 0 is the communication-optimal corner (water-filling on the
communication eigenmodes), lambda = 1 the sensing-optimal corner (all power
on the dominant sensing eigenvector).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channels import CommChannel, SensingChannel, steering_vector
from .numerics import eig_hermitian, project_psd_trace, require_psd, water_fill


@dataclass(frozen=True)
class TradeoffPoint:
    rate: float
    sensing_value: float
    metric_kind: str          # exponent | distortion | crb | elmmse
    control: float            # sweep parameter in [0, 1]

    def __post_init__(self):
        if self.metric_kind not in ("exponent", "distortion", "crb", "elmmse"):
            raise ValueError(f"unknown metric kind {self.metric_kind!r}")
        if self.rate < -1e-12:
            raise ValueError("rate must be nonnegative")
        if self.metric_kind == "exponent" and self.sensing_value < -1e-12:
            raise ValueError("error exponent must be nonnegative")


@dataclass
class TradeoffCurve:
    points: list
    metadata: dict = field(default_factory=dict)

    def rates(self) -> np.ndarray:
        return np.array([p.rate for p in self.points])

    def sensing_values(self) -> np.ndarray:
        return np.array([p.sensing_value for p in self.points])

    def controls(self) -> np.ndarray:
        return np.array([p.control for p in self.points])


def re_bound(cov: np.ndarray, comm: CommChannel, sens: SensingChannel) -> tuple[float, float]:
    """Evaluate the (rate, exponent) right-hand sides at a given covariance."""
    cov = require_psd(cov, name="input covariance")
    hc, hs = comm.h, sens.h
    gram = np.eye(hc.shape[0]) + hc @ cov @ hc.conj().T / comm.noise_var
    sign, logdet = np.linalg.slogdet(gram)
    rate = max(0.0, float(np.real(logdet)) / np.log(2.0))
    exponent = 0.25 * float(np.real(np.trace(hs @ cov @ hs.conj().T))) / sens.noise_var
    return rate, exponent


def _pointlike_rate_exponent(r_vec, a_c, a_s, alpha_c, alpha_s, power, sigma_c2, sigma_s2):
    # Rank-one covariance P * r r^H pushed through the two bounds.
    gc = abs(np.vdot(r_vec, a_c)) ** 2
    gs = abs(np.vdot(r_vec, a_s)) ** 2
    n = a_s.size
    rate = np.log2(1.0 + power * abs(alpha_c) ** 2 * gc / sigma_c2)
    exponent = 0.25 * power * abs(alpha_s) ** 2 * n * gs / sigma_s2
    return rate, exponent


def re_boundary_pointlike(theta_c, theta_s, alpha_c, alpha_s, power,
                          sigma_c2, sigma_s2, lambda_grid=None,
                          n_elements=10) -> TradeoffCurve:
    """Boundary sweep for the single-antenna-user, point-like-target scenario.

    For each lambda the optimal beamformer r(lambda) is the top eigenvector of
    (1-lambda) a_c a_c^H + lambda a_s a_s^H; the returned points evaluate the
    rank-one covariance P r r^H.
    """
    if lambda_grid is None:
        lambda_grid = np.linspace(0.0, 1.0, 101)
    lambda_grid = np.asarray(lambda_grid, dtype=float)
    if np.any(lambda_grid < 0) or np.any(lambda_grid > 1):
        raise ValueError("lambda grid must lie in [0, 1]")
    a_c = steering_vector(theta_c, n_elements)
    a_s = steering_vector(theta_s, n_elements)
    pts = []
    for lam in lambda_grid:
        m = (1.0 - lam) * np.outer(a_c, a_c.conj()) + lam * np.outer(a_s, a_s.conj())
        _, u = eig_hermitian(m)
        r_vec = u[:, 0]
        rate, exponent = _pointlike_rate_exponent(
            r_vec, a_c, a_s, alpha_c, alpha_s, power, sigma_c2, sigma_s2)
        pts.append(TradeoffPoint(rate, exponent, "exponent", float(lam)))
    meta = dict(theta_c=theta_c, theta_s=theta_s, alpha_c=alpha_c, alpha_s=alpha_s,
                power=power, sigma_c2=sigma_c2, sigma_s2=sigma_s2, n_elements=n_elements)
    return TradeoffCurve(pts, meta)


def _scalarized_objective(cov, comm, sens, lam):
    hc, hs = comm.h, sens.h
    gram = np.eye(hc.shape[0]) + hc @ cov @ hc.conj().T / comm.noise_var
    _, logdet = np.linalg.slogdet(gram)
    rate = float(np.real(logdet)) / np.log(2.0)
    expo = 0.25 * float(np.real(np.trace(hs @ cov @ hs.conj().T))) / sens.noise_var
    return (1.0 - lam) * rate + lam * expo


def _scalarized_gradient(cov, comm, sens, lam):
    hc, hs = comm.h, sens.h
    gram = np.eye(hc.shape[0]) + hc @ cov @ hc.conj().T / comm.noise_var
    inv = np.linalg.inv(gram)
    g_rate = hc.conj().T @ inv @ hc / (comm.noise_var * np.log(2.0))
    g_exp = 0.25 * hs.conj().T @ hs / sens.noise_var
    g = (1.0 - lam) * g_rate + lam * g_exp
    return 0.5 * (g + g.conj().T)


def _maximize_covariance(comm, sens, power, lam, max_iters=5000, tol=1e-9):
    """Projected gradient ascent over {R PSD, tr R <= P} for one lambda."""
    m = comm.h.shape[1]
    cov = np.eye(m, dtype=complex) * (power / m)
    obj = _scalarized_objective(cov, comm, sens, lam)
    step = power  # initial scale; backtracking adapts it
    converged = False
    for _ in range(max_iters):
        grad = _scalarized_gradient(cov, comm, sens, lam)
        # Backtracking line search on the projected step.
        improved = False
        for _ in range(60):
            cand = project_psd_trace(cov + step * grad, power)
            cand_obj = _scalarized_objective(cand, comm, sens, lam)
            if cand_obj >= obj:
                improved = True
                break
            step *= 0.5
        if not improved:
            converged = True
            break
        delta = cand_obj - obj
        cov, obj = cand, cand_obj
        step *= 2.0  # let the step grow back after cautious phases
        if delta <= tol * max(1.0, abs(obj)):
            converged = True
            break
    return cov, obj, converged


def closed_form_corner(comm: CommChannel, sens: SensingChannel, power: float, lam01: int):
    """Closed-form covariance at lambda = 0 (water-filling) or lambda = 1."""
    if lam01 == 0:
        w, u = eig_hermitian(comm.h.conj().T @ comm.h)
        gains = np.maximum(np.real(w), 0.0) / comm.noise_var
        pos = gains > 1e-15 * max(gains.max(initial=0.0), 1.0)
        alloc = np.zeros_like(gains)
        if pos.any():
            alloc[pos] = water_fill(gains[pos], power)
        return (u * alloc) @ u.conj().T
    w, u = eig_hermitian(sens.h.conj().T @ sens.h)
    top = u[:, 0]
    return power * np.outer(top, top.conj())


def re_boundary_general(comm: CommChannel, sens: SensingChannel, power: float,
                        lambda_grid=None, max_iters=5000, tol=1e-9) -> TradeoffCurve:
    """Boundary sweep for arbitrary channel matrices.

    Each lambda maximizes (1-lambda) * rate + lambda * exponent over the PSD
    trace ball by projected gradient ascent; non-converged solves are kept
    (best iterate) and flagged in the curve metadata.
    """
    if power <= 0:
        raise ValueError("power must be positive")
    if lambda_grid is None:
        lambda_grid = np.linspace(0.0, 1.0, 101)
    lambda_grid = np.asarray(lambda_grid, dtype=float)
    pts, covs, flags = [], [], []
    for lam in lambda_grid:
        cov, _, ok = _maximize_covariance(comm, sens, power, lam, max_iters, tol)
        rate, exponent = re_bound(cov, comm, sens)
        pts.append(TradeoffPoint(rate, exponent, "exponent", float(lam)))
        covs.append(cov)
        flags.append(ok)
    meta = dict(power=power, converged=all(flags), convergence_flags=flags, covariances=covs)
    return TradeoffCurve(pts, meta)


def beampattern(v: np.ndarray, theta_grid) -> np.ndarray:
    """Array gain |v^H a(theta)|^2 of a unit-norm beamformer over a grid."""
    v = np.asarray(v, dtype=complex).ravel()
    if abs(np.linalg.norm(v) - 1.0) > 1e-9:
        raise ValueError("beamformer must have unit norm")
    theta_grid = np.asarray(theta_grid, dtype=float)
    # a(theta) for all grid points at once: (n_theta, N)
    phases = np.exp(1j * np.pi * np.outer(np.sin(theta_grid), np.arange(v.size)))
    return np.abs(phases.conj() @ v) ** 2


def upper_convex_hull(curve: TradeoffCurve) -> TradeoffCurve:
    """Upper-left convex hull of the (rate, exponent) sweep.

    Time-sharing between operating points makes any point under a chord
    achievable, so the emitted region boundary is concave in rate.
    """
    order = np.argsort([(p.rate, p.sensing_value) for p in curve.points], axis=0)[:, 0]
    pts = [curve.points[i] for i in order]
    # drop near-duplicates
    dedup = []
    for p in pts:
        if dedup and abs(p.rate - dedup[-1].rate) < 1e-9:
            if p.sensing_value > dedup[-1].sensing_value:
                dedup[-1] = p
            continue
        dedup.append(p)
    hull: list = []
    for p in dedup:
        while len(hull) >= 2:
            (x1, y1), (x2, y2) = (hull[-2].rate, hull[-2].sensing_value), (hull[-1].rate, hull[-1].sensing_value)
            # keep the chain concave (cross product of consecutive segments)
            if (x2 - x1) * (p.sensing_value - y1) - (p.rate - x1) * (y2 - y1) >= -1e-15:
                hull.pop()
            else:
                break
        hull.append(p)
    return TradeoffCurve(hull, dict(curve.metadata, hull=True))
