"""CRB-rate corner points for joint sensing and communication signaling.

The sensing figure of merit is the trace of the inverse Bayesian Fisher
information matrix, where the information matrix is an affine map of the
signal's sample covariance R = X X^H / T:

    Phi(A) = sum_i F_i A^T F_i^H + sum_j G_j A G_j^H + J_prior
    J      = (T / sigma_s^2) * Phi(R)
    crb    = tr{J^{-1}} = (sigma_s^2 / T) * tr{Phi(R)^{-1}}

Two corner points are characterized: the capacity-first point (Gaussian
signaling shaped by water-filling on the communication channel, CRB
evaluated by Monte Carlo over the random sample covariance and sandwiched
between a Jensen lower bound and a degrees-of-freedom-loss upper bound) and
the sensing-first point (deterministic-CRB-minimizing covariance, achieved
exactly by semi-unitary signaling, with the high-SNR achievable rate of the
semi-unitary codebook including its rate offset constant).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from .channels import CommChannel
from .numerics import (SeededRng, eig_hermitian, haar_semiunitary, hermitian_sqrt,
                       project_psd_trace, require_hermitian, require_psd,
                       sample_gaussian_matrix, water_fill)

LOG2 = np.log(2.0)


class SingularFimError(RuntimeError):
    """Raised when the Fisher information matrix of a draw is singular."""


@dataclass(frozen=True)
class BfimMap:
    """Affine map from signal covariance to Bayesian Fisher information."""

    f_blocks: tuple          # r1 K x M matrices (act on A^T)
    g_blocks: tuple          # r2 K x M matrices (act on A)
    j_prior: np.ndarray      # K x K Hermitian PSD prior information

    def __post_init__(self):
        f = tuple(np.asarray(m, dtype=complex) for m in self.f_blocks)
        g = tuple(np.asarray(m, dtype=complex) for m in self.g_blocks)
        jp = require_psd(np.asarray(self.j_prior, dtype=complex), name="prior information")
        k = jp.shape[0]
        for blk in (*f, *g):
            if blk.ndim != 2 or blk.shape[0] != k:
                raise ValueError("all blocks must have K rows matching the prior")
        dims = {blk.shape[1] for blk in (*f, *g)}
        if len(dims) > 1:
            raise ValueError("all blocks must share the signal dimension M")
        object.__setattr__(self, "f_blocks", f)
        object.__setattr__(self, "g_blocks", g)
        object.__setattr__(self, "j_prior", jp)

    @property
    def k_dim(self) -> int:
        return self.j_prior.shape[0]

    @property
    def m_dim(self) -> int:
        for blk in (*self.f_blocks, *self.g_blocks):
            return blk.shape[1]
        return self.j_prior.shape[0]


@dataclass(frozen=True)
class SignalEnsemble:
    """Random signal family with a fixed shaping (covariance square root)."""

    kind: str                # gaussian_cs | semiunitary_sc
    shaping: np.ndarray      # M x M, shaping @ shaping^H = target covariance
    t_block: int
    rng: SeededRng = None

    def __post_init__(self):
        if self.kind not in ("gaussian_cs", "semiunitary_sc"):
            raise ValueError(f"unknown ensemble kind {self.kind!r}")
        shaping = np.asarray(self.shaping, dtype=complex)
        if shaping.ndim != 2 or shaping.shape[0] != shaping.shape[1]:
            raise ValueError("shaping must be a square matrix")
        if self.kind == "semiunitary_sc" and self.t_block < shaping.shape[0]:
            raise ValueError("semi-unitary signaling needs T >= M")
        if self.t_block < 1:
            raise ValueError("block length must be positive")
        object.__setattr__(self, "shaping", shaping)


def phi_apply(bfim: BfimMap, a: np.ndarray) -> np.ndarray:
    """Evaluate Phi(A); the output is Hermitian K x K."""
    a = require_hermitian(a, name="covariance argument")
    if a.shape[0] != bfim.m_dim:
        raise ValueError(f"dimension mismatch: map expects {bfim.m_dim}, got {a.shape[0]}")
    out = bfim.j_prior.astype(complex).copy()
    at = a.T
    for f in bfim.f_blocks:
        out += f @ at @ f.conj().T
    for g in bfim.g_blocks:
        out += g @ a @ g.conj().T
    return 0.5 * (out + out.conj().T)


def _trace_inverse(mat: np.ndarray, ridge=None, cond_tol: float = 1e-12) -> float:
    w = np.linalg.eigvalsh(mat)
    if ridge is not None:
        w = w + ridge
    if w.min() <= cond_tol * max(w.max(), 1e-300):
        raise SingularFimError("Fisher information matrix is singular")
    return float(np.sum(1.0 / w))


def crb_of_sample(bfim: BfimMap, x: np.ndarray, t_block=None, sigma_s2: float = 1.0,
                  ridge=None) -> float:
    """CRB of one signal realization: (sigma_s^2 / T) * tr{Phi(X X^H / T)^{-1}}.

    A singular information matrix raises SingularFimError rather than being
    silently regularized; pass `ridge` to opt into regularization.
    """
    x = np.asarray(x, dtype=complex)
    t = x.shape[1] if t_block is None else int(t_block)
    if t != x.shape[1]:
        raise ValueError(f"block length {t} does not match signal columns {x.shape[1]}")
    r_x = x @ x.conj().T / t
    phi = phi_apply(bfim, r_x)
    return (sigma_s2 / t) * _trace_inverse(phi, ridge=ridge)


def sample_isac_signal(ens: SignalEnsemble, rng: SeededRng = None) -> np.ndarray:
    """Draw one M x T signal block from the ensemble."""
    use = rng if rng is not None else ens.rng
    if use is None:
        raise ValueError("ensemble has no random stream; pass rng")
    m = ens.shaping.shape[0]
    if ens.kind == "gaussian_cs":
        d = sample_gaussian_matrix(m, ens.t_block, 1.0, use)
        return ens.shaping @ d
    q = haar_semiunitary(m, ens.t_block, use)
    return np.sqrt(ens.t_block) * ens.shaping @ q


@dataclass
class McCrb:
    mean: float
    std_error: float
    n_valid: int
    n_singular: int


def miller_chang_crb(bfim: BfimMap, ens: SignalEnsemble, sigma_s2: float,
                     n_mc: int, rng: SeededRng) -> McCrb:
    """Monte Carlo estimate of E{tr J^{-1}} over the signal ensemble.

    Singular draws are counted and excluded. Per-draw substreams keep the
    result independent of evaluation order and worker count.
    """
    if n_mc < 2:
        raise ValueError("need at least two Monte Carlo draws")
    vals = np.full(n_mc, np.nan)
    n_singular = 0
    for i in range(n_mc):
        x = sample_isac_signal(ens, rng.substream(i))
        try:
            vals[i] = crb_of_sample(bfim, x, sigma_s2=sigma_s2)
        except SingularFimError:
            n_singular += 1
    good = vals[~np.isnan(vals)]
    if good.size < 2:
        raise SingularFimError("all Monte Carlo draws were singular")
    return McCrb(
        mean=float(good.mean()),
        std_error=float(good.std(ddof=1) / np.sqrt(good.size)),
        n_valid=int(good.size),
        n_singular=n_singular,
    )


def _rank(mat: np.ndarray, rel_tol: float = 1e-8) -> int:
    w = np.linalg.eigvalsh(mat)
    top = max(float(w.max()), 0.0)
    if top <= 0.0:
        return 0
    return int(np.sum(w > rel_tol * top))


@dataclass
class PcsPoint:
    rate_bits: float
    cov: np.ndarray
    crb_mc: McCrb
    crb_lower: float
    crb_upper: float
    rank: int
    sandwich_ok: bool


def capacity_covariance(comm: CommChannel, power: float) -> np.ndarray:
    """Water-filling transmit covariance on the communication eigenmodes."""
    gram = comm.h.conj().T @ comm.h / comm.noise_var
    w, u = eig_hermitian(gram)
    gains = np.maximum(np.real(w), 0.0)
    pos = gains > 1e-15 * max(gains.max(initial=0.0), 1.0)
    alloc = np.zeros_like(gains)
    if pos.any():
        alloc[pos] = water_fill(gains[pos], power)
    return (u * alloc) @ u.conj().T


def ergodic_rate_bits(cov: np.ndarray, comm: CommChannel) -> float:
    gram = np.eye(comm.h.shape[0]) + comm.h @ cov @ comm.h.conj().T / comm.noise_var
    _, logdet = np.linalg.slogdet(gram)
    return float(np.real(logdet)) / LOG2


def pcs_point(bfim: BfimMap, comm: CommChannel, power: float, sigma_s2: float,
              t_block: int, n_mc: int, rng: SeededRng,
              channel_sampler=None, n_channel_draws: int = 64) -> PcsPoint:
    """Capacity-first corner: rate-optimal Gaussian signaling, sensing cost.

    The transmit covariance comes from water-filling; the Monte Carlo CRB of
    the Wishart-distributed sample covariance is certified against its
    Jensen lower bound and the degrees-of-freedom-loss upper bound
    lower * T / (T - min{K, rank}). With `channel_sampler` (a callable
    index -> channel matrix) the rate is averaged over channel draws
    (ergodic mode); the covariance still water-fills the nominal channel.
    """
    cov = capacity_covariance(comm, power)
    rank = _rank(cov)
    k = bfim.k_dim
    dof = min(k, rank)
    if t_block <= dof:
        raise ValueError(
            f"DoF-loss bound undefined: need T > min(K, rank) = {dof}, got T = {t_block}")
    if channel_sampler is None:
        rate = ergodic_rate_bits(cov, comm)
    else:
        draws = [ergodic_rate_bits(cov, CommChannel(channel_sampler(i), comm.noise_var))
                 for i in range(n_channel_draws)]
        rate = float(np.mean(draws))
    crb_lower = (sigma_s2 / t_block) * _trace_inverse(phi_apply(bfim, cov))
    crb_upper = crb_lower * t_block / (t_block - dof)
    ens = SignalEnsemble("gaussian_cs", hermitian_sqrt(cov), t_block)
    mc = miller_chang_crb(bfim, ens, sigma_s2, n_mc, rng)
    slack = 3.0 * mc.std_error
    ok = (crb_lower - slack <= mc.mean) and (mc.mean <= crb_upper + slack)
    return PcsPoint(rate_bits=rate, cov=cov, crb_mc=mc, crb_lower=crb_lower,
                    crb_upper=crb_upper, rank=rank, sandwich_ok=bool(ok))


def _phi_gradient_of_trace_inverse(bfim: BfimMap, cov: np.ndarray) -> np.ndarray:
    """Gradient of f(R) = tr{Phi(R)^{-1}} with respect to Hermitian R."""
    phi = phi_apply(bfim, cov)
    phi_inv = np.linalg.inv(phi)
    phi_inv2 = phi_inv @ phi_inv
    grad = np.zeros_like(cov)
    for f in bfim.f_blocks:
        grad -= (f.conj().T @ phi_inv2 @ f).T
    for g in bfim.g_blocks:
        grad -= g.conj().T @ phi_inv2 @ g
    return 0.5 * (grad + grad.conj().T)


@dataclass
class PscPoint:
    cov: np.ndarray
    crb_min: float
    kkt_residual: float
    converged: bool
    ridge_used: float = 0.0


def psc_point(bfim: BfimMap, power: float, sigma_s2: float = 1.0, t_block: int = 1,
              tol: float = 1e-6, max_iters: int = 2000, init_cov=None) -> PscPoint:
    """Sensing-first corner: minimize tr{Phi(R)^{-1}} over the trace ball.

    Projected gradient descent on the PSD cone with backtracking; the
    reported KKT residual is the norm of the projected-gradient step at the
    solution scaled by the step and gradient size, so values below `tol`
    certify stationarity. The problem is convex, hence restarts agree in
    objective even when the minimizer itself is non-unique.
    """
    if power <= 0:
        raise ValueError("power must be positive")
    m = bfim.m_dim
    cov = np.eye(m, dtype=complex) * (power / m) if init_cov is None \
        else np.asarray(init_cov, dtype=complex)
    ridge_used = 0.0
    try:
        obj = _trace_inverse(phi_apply(bfim, cov))
    except SingularFimError:
        # ridge continuation: start from a regularized map and relax it
        ridge_used = 1e-6
        obj = _trace_inverse(phi_apply(bfim, cov), ridge=ridge_used)
    step = power
    converged = False
    for _ in range(max_iters):
        grad = _grad_with_ridge(bfim, cov, ridge_used)
        improved = False
        for _ in range(60):
            cand = project_psd_trace(cov - step * grad, power)
            try:
                cand_obj = _trace_inverse(phi_apply(bfim, cand), ridge=ridge_used or None)
            except SingularFimError:
                step *= 0.5
                continue
            if cand_obj <= obj:
                improved = True
                break
            step *= 0.5
        if not improved:
            if ridge_used > 1e-12:
                ridge_used *= 0.1          # continuation toward the clean map
                obj = _trace_inverse(phi_apply(bfim, cov), ridge=ridge_used)
                continue
            converged = True
            break
        delta = obj - cand_obj
        cov, obj = cand, cand_obj
        step *= 2.0
        if delta <= tol * 1e-3 * max(1.0, abs(obj)):
            if ridge_used > 1e-12:
                ridge_used *= 0.1
                obj = _trace_inverse(phi_apply(bfim, cov), ridge=ridge_used)
                continue
            converged = True
            break
    grad = _phi_gradient_of_trace_inverse(bfim, cov)
    probe = max(1e-8, 1e-4 * power / max(np.linalg.norm(grad), 1e-300))
    moved = project_psd_trace(cov - probe * grad, power)
    kkt = float(np.linalg.norm(moved - cov) / (probe * max(1.0, np.linalg.norm(grad))))
    crb_min = (sigma_s2 / t_block) * _trace_inverse(phi_apply(bfim, cov))
    return PscPoint(cov=cov, crb_min=crb_min, kkt_residual=kkt,
                    converged=converged, ridge_used=ridge_used)


def _grad_with_ridge(bfim, cov, ridge):
    if not ridge:
        return _phi_gradient_of_trace_inverse(bfim, cov)
    k = bfim.k_dim
    ridged = BfimMap(bfim.f_blocks, bfim.g_blocks, bfim.j_prior + ridge * np.eye(k))
    return _phi_gradient_of_trace_inverse(ridged, cov)


def stiefel_rate_offset(m_sc: int, t_block: int) -> float:
    """Rate offset (nats) of the uniform semi-unitary codebook at high SNR.

    (M/T) * [(T - M/2) ln(T/e) - ln Gamma(T) + ln(2 sqrt(pi))]; tends to
    zero as the block length grows.
    """
    if m_sc == 0:
        return 0.0
    t = float(t_block)
    return (m_sc / t) * ((t - m_sc / 2.0) * np.log(t / np.e)
                         - float(gammaln(t)) + np.log(2.0 * np.sqrt(np.pi)))


@dataclass
class PscRate:
    rate_bits: float
    c0_nats: float
    m_sc: int
    rank_deficient: bool


def psc_rate(cov_sc: np.ndarray, comm: CommChannel, t_block: int,
             high_snr_warn: float = 10.0) -> PscRate:
    """High-SNR achievable rate of semi-unitary signaling through cov_sc.

    rate = (1 - M_sc / 2T) * log|H cov H^H / sigma_c^2| + c0, computed in
    nats and converted to bits; a rank-deficient effective channel falls
    back to the pseudo-determinant over nonzero eigenvalues and is flagged.
    """
    cov_sc = require_psd(cov_sc, name="sensing covariance")
    m_sc = _rank(cov_sc)
    if m_sc == 0:
        return PscRate(rate_bits=0.0, c0_nats=0.0, m_sc=0, rank_deficient=False)
    gram = comm.h @ cov_sc @ comm.h.conj().T / comm.noise_var
    w = np.linalg.eigvalsh(0.5 * (gram + gram.conj().T))
    nonzero = w > 1e-12 * max(float(w.max()), 1e-300)
    rank_deficient = int(nonzero.sum()) < gram.shape[0]
    if not nonzero.any():
        return PscRate(rate_bits=0.0, c0_nats=0.0, m_sc=m_sc, rank_deficient=True)
    if float(w[nonzero].min()) < high_snr_warn:
        warnings.warn("psc_rate used outside the high-SNR regime; the "
                      "asymptotic expression may be loose", RuntimeWarning)
    logdet = float(np.log(w[nonzero]).sum())
    c0 = stiefel_rate_offset(m_sc, t_block)
    rate_nats = (1.0 - m_sc / (2.0 * t_block)) * logdet + c0
    return PscRate(rate_bits=max(0.0, rate_nats / LOG2), c0_nats=c0,
                   m_sc=m_sc, rank_deficient=rank_deficient)


def random_bfim_map(k_dim: int, m_dim: int, rng: SeededRng, n_f: int = 1,
                    n_g: int = 1, prior_scale: float = 0.05) -> BfimMap:
    """Random well-posed instance used by sweeps and certification tests."""
    gen_idx = 0
    blocks_f, blocks_g = [], []
    for _ in range(n_f):
        blocks_f.append(sample_gaussian_matrix(k_dim, m_dim, 1.0, rng.substream(gen_idx)))
        gen_idx += 1
    for _ in range(n_g):
        blocks_g.append(sample_gaussian_matrix(k_dim, m_dim, 1.0, rng.substream(gen_idx)))
        gen_idx += 1
    j_prior = prior_scale * np.eye(k_dim)
    return BfimMap(tuple(blocks_f), tuple(blocks_g), j_prior)


@dataclass
class CornerSweep:
    rows: list = field(default_factory=list)    # dict rows for CSV emission


def corner_points(bfim: BfimMap, comm: CommChannel, power: float, sigma_s2: float,
                  t_cs: int, t_sc: int, n_mc: int, rng: SeededRng) -> CornerSweep:
    """Both corner points of the CRB-rate region for one scenario."""
    cs = pcs_point(bfim, comm, power, sigma_s2, t_cs, n_mc, rng)
    sc = psc_point(bfim, power, sigma_s2=sigma_s2, t_block=t_sc)
    sc_rate = psc_rate(sc.cov, comm, t_sc)
    rows = [
        dict(point="CS", rate_bits=cs.rate_bits, crb=cs.crb_mc.mean,
             crb_lower=cs.crb_lower, crb_upper=cs.crb_upper,
             rank=cs.rank, T=t_cs, K=bfim.k_dim),
        dict(point="SC", rate_bits=sc_rate.rate_bits, crb=sc.crb_min,
             crb_lower=sc.crb_min, crb_upper=sc.crb_min,
             rank=sc_rate.m_sc, T=t_sc, K=bfim.k_dim),
    ]
    return CornerSweep(rows=rows)
