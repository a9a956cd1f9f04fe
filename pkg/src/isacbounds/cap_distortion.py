"""Capacity with two costs via a modified Blahut-Arimoto fixed point.

The solver maximizes the conditional mutual information I(X; Y | state) over
a gridded input distribution subject to an average power cost b(x) and an
average sensing cost c(x), handled through exponential-tilt multipliers
(lambda, mu). Alternating the posterior update and the tilted reweighting
is an alternating maximization, so the tracked Lagrangian value

    F = logsumexp_x [ log p(x) + i(x) - lambda*b(x) - mu*c(x) ]

is nondecreasing every iteration (i(x) is the per-symbol information
density); this is asserted at runtime.

The bundled scalar fading scenario is Y = eta*X + N with eta, N independent
standard normal, power budget B, and per-symbol sensing cost 1/(1+x^2)
(the minimum mean-square error of estimating eta from (X, Y) at X = x).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import logsumexp
from numpy.polynomial.hermite import hermgauss

LOG2 = np.log(2.0)
_TINY = 1e-300


def siso_sensing_cost(x):
    """Per-symbol MMSE of the fading coefficient: 1 / (1 + x^2)."""
    x = np.asarray(x, dtype=float)
    out = 1.0 / (1.0 + x * x)
    return float(out) if out.ndim == 0 else out


def hamming_detection_distortion(p_d: float, p_fa: float) -> float:
    """Expected Hamming distortion of a detector: 1 - P_D + P_FA."""
    if not (0.0 <= p_d <= 1.0 and 0.0 <= p_fa <= 1.0):
        raise ValueError("detection and false-alarm probabilities must lie in [0, 1]")
    return 1.0 - p_d + p_fa


@dataclass(frozen=True)
class CostPair:
    """Evaluable power cost b(x) and sensing cost c(x)."""

    power_cost: Callable
    sensing_cost: Callable

    def on_grid(self, grid: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        b = np.asarray(self.power_cost(grid), dtype=float)
        c = np.asarray(self.sensing_cost(grid), dtype=float)
        if b.shape != grid.shape or c.shape != grid.shape:
            raise ValueError("cost functions must evaluate elementwise on the grid")
        if not (np.all(np.isfinite(b)) and np.all(np.isfinite(c))):
            raise ValueError("costs must be finite on the input grid")
        return b, c


def siso_costs() -> CostPair:
    return CostPair(power_cost=lambda x: np.asarray(x) ** 2.0,
                    sensing_cost=siso_sensing_cost)


@dataclass
class GriddedDistribution:
    """Probability mass on the input grid."""

    mass: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mass, dtype=float)
        if np.any(m < -1e-15):
            raise ValueError("mass must be nonnegative")
        if abs(m.sum() - 1.0) > 1e-10:
            raise ValueError(f"mass must sum to 1, got {m.sum()!r}")
        self.mass = np.maximum(m, 0.0)


class DiscreteChannelSpec:
    """Gridded channel p(y | x, state) with quadrature state/output weights.

    likelihood[s, x, y] holds density values; output weights integrate them
    to one for every (state, x) pair (rows are renormalized exactly, so the
    discretized object is itself a valid conditional distribution).
    """

    def __init__(self, input_grid, state_nodes, state_weights,
                 output_nodes, output_weights, likelihood):
        x = np.asarray(input_grid, dtype=float)
        s = np.asarray(state_nodes, dtype=float)
        ws = np.asarray(state_weights, dtype=float)
        y = np.asarray(output_nodes, dtype=float)
        wy = np.asarray(output_weights, dtype=float)
        like = np.asarray(likelihood, dtype=float)
        if np.any(np.diff(x) <= 0) or np.any(np.diff(y) <= 0):
            raise ValueError("input and output grids must be strictly increasing")
        if np.any(ws <= 0) or np.any(wy <= 0):
            raise ValueError("quadrature weights must be positive")
        if like.shape != (s.size, x.size, y.size):
            raise ValueError(f"likelihood must have shape (n_state, n_input, n_output), got {like.shape}")
        if np.any(like < 0) or not np.all(np.isfinite(like)):
            raise ValueError("likelihood values must be finite and nonnegative")
        row_mass = like @ wy                      # (ns, nx)
        if np.any(np.abs(row_mass - 1.0) > 1e-6):
            raise ValueError("likelihood rows must integrate to 1 against the output weights")
        self.input_grid = x
        self.state_nodes = s
        self.state_weights = ws / ws.sum()
        self.output_nodes = y
        self.output_weights = wy
        self.rectangular = True
        like = like / row_mass[:, :, None]        # exact row normalization
        # hot layout: (n_state*n_output, n_input) for BLAS matvecs
        flat = np.ascontiguousarray(like.transpose(0, 2, 1).reshape(-1, x.size))
        w_sy = np.repeat(self.state_weights, y.size) * np.tile(wy, s.size)
        self._finish_init(flat, w_sy,
                          np.repeat(np.arange(s.size), y.size),
                          np.tile(y, s.size))

    def _finish_init(self, flat, w_sy, row_state, row_output):
        self._flat = flat
        self._w_sy = w_sy
        self.row_state_index = row_state
        self.row_output_value = row_output
        with np.errstate(divide="ignore"):
            log_like = np.where(self._flat > 0, np.log(np.maximum(self._flat, _TINY)), 0.0)
        # c_x = sum_{s,y} w_sy * L * log L, reused every iteration
        self._c_x = (self._flat * log_like).T @ self._w_sy

    @classmethod
    def from_rows(cls, input_grid, state_nodes, state_weights,
                  row_state_index, row_outputs, row_weights, flat_likelihood):
        """Build a spec whose output grid differs per state (ragged rows).

        `flat_likelihood` holds one row per (state, output) node with values
        p(y | x, state) over the input grid; `row_weights` are the output
        quadrature weights of each row. Rows are renormalized so every
        (state, x) likelihood integrates to one exactly.
        """
        obj = cls.__new__(cls)
        x = np.asarray(input_grid, dtype=float)
        if np.any(np.diff(x) <= 0):
            raise ValueError("input grid must be strictly increasing")
        ws = np.asarray(state_weights, dtype=float)
        flat = np.asarray(flat_likelihood, dtype=float)
        row_state = np.asarray(row_state_index)
        wrow = np.asarray(row_weights, dtype=float)
        if np.any(flat < 0) or not np.all(np.isfinite(flat)):
            raise ValueError("likelihood values must be finite and nonnegative")
        obj.input_grid = x
        obj.state_nodes = np.asarray(state_nodes, dtype=float)
        obj.state_weights = ws / ws.sum()
        obj.output_nodes = None
        obj.output_weights = None
        obj.rectangular = False
        # per-(state, x) mass under the row weights, for exact normalization
        norm = np.zeros((obj.state_nodes.size, x.size))
        np.add.at(norm, row_state, wrow[:, None] * flat)
        if np.any(np.abs(norm - 1.0) > 1e-6):
            raise ValueError("likelihood rows must integrate to 1 against the row weights")
        flat = flat / norm[row_state]
        w_sy = obj.state_weights[row_state] * wrow
        obj._finish_init(np.ascontiguousarray(flat), w_sy, row_state,
                         np.asarray(row_outputs, dtype=float))
        return obj

    @property
    def n_input(self) -> int:
        return self.input_grid.size

    @property
    def likelihood(self) -> np.ndarray:
        """View with shape (n_state, n_input, n_output); rectangular only."""
        if not self.rectangular:
            raise ValueError("ragged spec has no rectangular likelihood view")
        ns, ny = self.state_nodes.size, self.output_nodes.size
        return self._flat.reshape(ns, ny, -1).transpose(0, 2, 1)

    def output_mixture(self, mass: np.ndarray) -> np.ndarray:
        """p(y | state) under the input mass, flattened over (state, output)."""
        return self._flat @ mass

    def info_density(self, mass: np.ndarray) -> np.ndarray:
        """Per-symbol information density i(x) = E_{y,s|x} log [p(y|x,s) / p(y|s)], nats."""
        mix = self._flat @ mass
        log_mix = np.log(np.maximum(mix, _TINY))
        return self._c_x - self._flat.T @ (self._w_sy * log_mix)

    def conditional_mi_bits(self, mass: np.ndarray) -> float:
        return float(mass @ self.info_density(mass)) / LOG2


def gaussian_fading_spec(budget: float, grid_halfwidth_scale: float = 4.0,
                         n_input: int = 161, state_step: float = 0.1,
                         state_span: float = 5.0, output_step: float = 0.25,
                         tail_sigmas: float = 8.0) -> DiscreteChannelSpec:
    """Discretize the real scalar fading channel Y = eta*X + N.

    eta and N are standard normal; the input grid spans
    +- grid_halfwidth_scale * sqrt(B). Both quadratures are trapezoid rules:
    the per-state output grid covers the conditional mean plus `tail_sigmas`
    noise standard deviations, and the state grid spans +-`state_span` with
    step `state_step`. Trapezoid rules are spectrally accurate for these
    integrands (the state integrand's nearest branch point sits at
    imaginary eta = 1/sqrt(B), so the default step keeps the quadrature
    error near 1e-9; Gauss-Hermite converges poorly on exactly that
    function and is avoided deliberately). The ragged per-state output
    grids keep the likelihood table small.
    """
    if budget <= 0:
        raise ValueError("power budget must be positive")
    xmax = grid_halfwidth_scale * np.sqrt(budget)
    x = np.linspace(-xmax, xmax, n_input)
    n_eta = 2 * int(round(state_span / state_step)) + 1
    eta = np.linspace(-state_span, state_span, n_eta)
    weta = np.exp(-0.5 * eta ** 2)
    weta[0] *= 0.5
    weta[-1] *= 0.5
    weta /= weta.sum()
    rows_state, rows_y, rows_w, rows_like = [], [], [], []
    for si, e in enumerate(eta):
        span = abs(e) * xmax + tail_sigmas
        n_y = 2 * int(np.ceil(span / output_step)) + 1
        y = np.linspace(-span, span, n_y)
        wy = np.full(n_y, y[1] - y[0])
        wy[0] *= 0.5
        wy[-1] *= 0.5
        resid = y[:, None] - e * x[None, :]
        rows_like.append(np.exp(-0.5 * resid ** 2) / np.sqrt(2.0 * np.pi))
        rows_state.append(np.full(n_y, si, dtype=int))
        rows_y.append(y)
        rows_w.append(wy)
    return DiscreteChannelSpec.from_rows(
        x, eta, weta,
        np.concatenate(rows_state), np.concatenate(rows_y),
        np.concatenate(rows_w), np.vstack(rows_like))


def ba_step_posterior(p_x, spec: DiscreteChannelSpec):
    """Posterior update q(x | y, state) = p(x) p(y|x,state) / p(y|state).

    Returns (q, degenerate) where q holds one distribution over the input
    grid per (state, output) node: shape (n_state, n_output, n_input) for a
    rectangular spec, (n_rows, n_input) for a ragged one. `degenerate`
    marks nodes whose mixture density is zero; the posterior is set uniform
    there.
    """
    mass = p_x.mass if isinstance(p_x, GriddedDistribution) else np.asarray(p_x, dtype=float)
    joint = spec._flat * mass[None, :]            # (rows, nx)
    denom = joint.sum(axis=1)
    degenerate = denom <= 0.0
    safe = np.where(degenerate, 1.0, denom)
    q = joint / safe[:, None]
    if degenerate.any():
        q[degenerate] = 1.0 / spec.n_input
    if spec.rectangular:
        ns, ny = spec.state_nodes.size, spec.output_nodes.size
        return q.reshape(ns, ny, -1), degenerate.reshape(ns, ny)
    return q, degenerate

def ba_step_reweight(q, spec: DiscreteChannelSpec, lambda_mult: float, mu_mult: float,
                     costs: CostPair) -> GriddedDistribution:
    """Exponential-tilt update of the input distribution.

    r(x) is proportional to exp(E_{y,s|x} log q(x|y,s) - lambda b(x) - mu c(x)),
    computed with a max-subtraction shift so it never overflows.
    """
    if lambda_mult < 0 or mu_mult < 0:
        raise ValueError("multipliers must be nonnegative")
    b, c = costs.on_grid(spec.input_grid)
    qf = np.asarray(q, dtype=float).reshape(-1, spec.n_input)
    with np.errstate(divide="ignore"):
        log_q = np.where(spec._flat > 0, np.log(np.maximum(qf, _TINY)), 0.0)
    expo = (spec._flat * log_q).T @ spec._w_sy - lambda_mult * b - mu_mult * c
    expo -= expo.max()
    r = np.exp(expo)
    return GriddedDistribution(r / r.sum())


@dataclass
class BaSolution:
    rate_bits: float
    avg_power: float
    avg_distortion: float
    distribution: GriddedDistribution
    lagrangian: float          # nats
    iterations: int
    converged: bool
    lambda_mult: float = 0.0
    mu_mult: float = 0.0


def _newton_on_support(spec, penalty, mass, budget_sweeps):
    """Damped Newton ascent of J(p) = I(p) - penalty.p on the live support.

    The objective is concave with Hessian -G, G_ab = sum_sy w_sy L_a L_b / D.
    Only coordinates above exp(-35) of the peak take part (mass below that
    contributes < 1e-13 to any observable; the multiplicative outer updates
    keep managing it), and the simplex constraint enters through the KKT
    system. Returns (mass over support with zeros elsewhere, support mask,
    J values recorded, sweeps used). Every accepted step increases J, so
    interleaving with the outer fixed point preserves the monotone
    Lagrangian sequence.
    """
    p_full = mass.copy()
    initial_support = p_full > p_full.max() * np.exp(-35.0)
    support = initial_support.copy()
    p_full = np.where(support, p_full, 0.0)
    p_full /= p_full.sum()
    sweeps = 0
    j_values = []

    def j_and_gain(pv):
        gain = spec.info_density(pv) - penalty
        return float(pv @ gain), gain

    j_cur, gain = j_and_gain(p_full)
    sweeps += 1
    j_values.append(j_cur)
    cols = None
    cols_mask = None
    g_raw = None
    delta = None
    for _ in range(30):
        if sweeps >= budget_sweeps:
            break
        idx = np.flatnonzero(support)
        if idx.size < 2:
            break
        if g_raw is None:
            if cols_mask is None or not np.array_equal(cols_mask, idx):
                cols = spec._flat[:, idx]
                cols_mask = idx
            # restricted Hessian of -J
            mix = spec._flat @ p_full
            scale = np.where(mix > 1e-280, spec._w_sy / np.maximum(mix, 1e-280), 0.0)
            g_raw = (cols * scale[:, None]).T @ cols
            trace_scale = max(np.trace(g_raw) / idx.size, 1e-12)
            if delta is None:
                delta = 1e-9 * trace_scale
        g_mat = g_raw.copy()
        g_mat[np.diag_indices_from(g_mat)] += delta
        grad = gain[idx]
        kkt = np.zeros((idx.size + 1, idx.size + 1))
        kkt[:-1, :-1] = g_mat
        kkt[:-1, -1] = 1.0
        kkt[-1, :-1] = 1.0
        rhs = np.concatenate([grad, [0.0]])
        try:
            sol = np.linalg.solve(kkt, rhs)
        except np.linalg.LinAlgError:
            delta *= 16.0
            continue
        d = sol[:-1]
        slope = float(grad @ d)
        if not np.isfinite(slope) or slope <= 0:
            # damp harder until the quadratic model turns trustworthy
            delta *= 16.0
            if delta > 1e12 * trace_scale:
                break
            continue
        p_sub = p_full[idx]
        # cap the step so entries carrying real mass stay interior; entries
        # with negligible mass that want out are simply clipped to zero and
        # the line search on J validates the clipped move
        meaningful = (d < 0) & (p_sub > p_sub.max() * np.exp(-20.0))
        t_start = 1.0
        if meaningful.any():
            t_start = min(1.0, float(0.995 * np.min(p_sub[meaningful] / -d[meaningful])))
        t = t_start
        accepted = False
        while t > 1e-14 and sweeps < budget_sweeps:
            cand = p_full.copy()
            cand[idx] = np.maximum(p_sub + t * d, 0.0)
            cand /= cand.sum()
            j_new, gain_new = j_and_gain(cand)
            sweeps += 1
            if j_new >= j_cur + 1e-4 * t * slope or (j_new >= j_cur and t == t_start):
                improvement = j_new - j_cur
                p_full, j_cur, gain = cand, j_new, gain_new
                j_values.append(j_cur)
                accepted = improvement > 1e-13 * max(1.0, abs(j_cur))
                g_raw = None        # curvature changed; rebuild next pass
                break
            t *= 0.5
        if not accepted:
            if g_raw is not None:   # keep the Hessian, just damp more
                delta *= 16.0
                if delta > 1e12 * trace_scale:
                    break
                continue
            break
        delta = max(delta / 4.0, 1e-12 * trace_scale)
        # drop entries the line search pinned at zero, else the next
        # fraction-to-boundary cap collapses to nothing
        dead = support & (p_full < p_full.max() * np.exp(-40.0))
        if dead.any():
            p_full[dead] = 0.0
            support &= ~dead
            p_full /= p_full.sum()
        gap = gain[support].max() - j_cur
        if gap <= 1e-13 * max(1.0, abs(j_cur)):
            break
    # report over the original support, with crushed entries floored at a
    # level the multiplicative outer updates can still regrow from
    floor = p_full.max() * np.exp(-46.0)
    p_out = np.where(initial_support, np.maximum(p_full, floor), 0.0)
    return p_out, initial_support, j_values, sweeps


def ba_solve(spec: DiscreteChannelSpec, costs: CostPair, lambda_mult: float, mu_mult: float,
             tol: float = 1e-9, max_iters: int = 10000, init_mass=None) -> BaSolution:
    """Run the two-cost fixed point to convergence.

    The plain alternating update multiplies the mass by exp(i(x) - penalty).
    Two monotonicity-safe accelerations are layered on top: an adaptive
    overrelaxation exponent (grown while the overrelaxed candidate keeps
    improving the Lagrangian, shrunk on rejection), and, once the plain
    update stalls, a damped Newton ascent on the live support that resolves
    the nearly-flat directions the multiplicative update crawls along. All
    accepted values form one nondecreasing Lagrangian sequence, which is
    asserted at runtime.

    Convergence is declared when the Lagrangian changes by less than `tol`
    relative between consecutive accepted updates; if `max_iters` likelihood
    sweeps are exhausted the best iterate is returned with converged=False.
    """
    if lambda_mult < 0 or mu_mult < 0:
        raise ValueError("multipliers must be nonnegative")
    if max_iters < 1:
        raise ValueError("need at least 1 iteration")
    b, c = costs.on_grid(spec.input_grid)
    penalty = lambda_mult * b + mu_mult * c
    n = spec.n_input
    if init_mass is None:
        log_p = np.full(n, -np.log(n))
    else:
        # floor the warm start so coordinates crushed by a previous solve can
        # regrow quickly when this multiplier pair wants them back
        m = np.asarray(init_mass, dtype=float)
        m = np.maximum(m / m.sum(), np.exp(-46.0) * (m.max() / m.sum()))
        log_p = np.log(m / m.sum())

    f_prev = -np.inf
    f_val = -np.inf
    converged = False
    n_updates = 0
    k_relax = 1.0
    stall_tol = max(tol, 1e-5)
    newton_runs = 0

    def record(fv):
        nonlocal f_prev, f_val
        if fv < f_prev - 1e-10 * max(1.0, abs(f_prev)):
            raise RuntimeError(
                f"Blahut-Arimoto monotonicity violated at update {n_updates}: "
                f"{f_prev!r} -> {fv!r}")
        done = abs(fv - f_prev) <= tol * max(1.0, abs(fv))
        f_prev = f_val = fv
        return done

    while n_updates < max_iters and not converged:
        gain = spec.info_density(np.exp(log_p)) - penalty
        n_updates += 1
        scores = log_p + gain
        f_plain = float(logsumexp(scores))
        stalled = abs(f_plain - f_prev) <= stall_tol * max(1.0, abs(f_plain))
        if k_relax > 1.0 and not stalled and n_updates < max_iters:
            cand = log_p + k_relax * gain
            cand -= logsumexp(cand)
            cand_gain = spec.info_density(np.exp(cand)) - penalty
            n_updates += 1
            cand_scores = cand + cand_gain
            f_cand = float(logsumexp(cand_scores))
            if f_cand >= f_plain:
                log_p = cand_scores - f_cand
                converged = record(f_cand)
                k_relax = min(k_relax * 2.0, 2.0 ** 16)
                continue
            k_relax = max(1.0, k_relax / 4.0)
        log_p = scores - f_plain
        converged = record(f_plain)
        k_relax = max(2.0, k_relax)
        if stalled and not converged and newton_runs < 20 and n_updates < max_iters:
            newton_runs += 1
            p_new, support, j_vals, used = _newton_on_support(
                spec, penalty, np.exp(log_p), max_iters - n_updates)
            n_updates += used
            for jv in j_vals:       # J(p) >= previous recorded value by construction
                record(jv)
            # merge: Newton values on its support, previous log-mass elsewhere
            merged = log_p.copy()
            merged[support] = np.log(np.maximum(p_new[support], _TINY))
            log_p = merged - logsumexp(merged)

    mass = np.exp(log_p)
    mass /= mass.sum()
    dist = GriddedDistribution(mass)
    rate = spec.conditional_mi_bits(mass)
    return BaSolution(
        rate_bits=max(0.0, rate),
        avg_power=float(mass @ b),
        avg_distortion=float(mass @ c),
        distribution=dist,
        lagrangian=f_val,
        iterations=n_updates,
        converged=converged,
        lambda_mult=lambda_mult,
        mu_mult=mu_mult,
    )


@dataclass
class BoundaryPoint:
    mu: float
    lam: float
    rate_bits: float
    avg_power: float
    avg_distortion: float
    mass: np.ndarray
    converged: bool


@dataclass
class CdBoundary:
    points: list
    input_grid: np.ndarray
    budget: float
    metadata: dict = field(default_factory=dict)

    def rates(self):
        return np.array([p.rate_bits for p in self.points])

    def distortions(self):
        return np.array([p.avg_distortion for p in self.points])


def ba_solve_power_matched(spec: DiscreteChannelSpec, costs: CostPair, mu_mult: float,
                           budget: float, tol: float = 1e-9, power_tol: float = 1e-3,
                           max_iters: int = 10000, init_mass=None,
                           init_lambda=None) -> BaSolution:
    """Maximize I(X;Y|state) - mu * E{c(X)} with E{b(X)} pinned to the budget.

    The power budget enters the Newton stage as an equality constraint in
    the KKT system, so the power multiplier comes out as the computed dual
    instead of being searched for. (An outer bisection over the multiplier
    is unreliable here: the optimal mass concentrates abruptly as the
    multiplier crosses phase-transition values, making average power an
    effectively discontinuous function of it.)

    A short multiplicative warmup with an adaptively tracked power
    multiplier supplies the support estimate and a near-feasible start;
    damped Newton then converges quadratically. The returned solution
    carries the dual in `lambda_mult` and satisfies
    |avg_power - budget| <= power_tol (typically orders tighter).
    """
    if mu_mult < 0:
        raise ValueError("multiplier must be nonnegative")
    b, c = costs.on_grid(spec.input_grid)
    if b.max() <= budget:
        raise ValueError("input grid cannot exceed the power budget; enlarge the grid")
    n = spec.n_input
    if init_mass is None:
        log_p = np.full(n, -np.log(n))
    else:
        m = np.asarray(init_mass, dtype=float)
        m = np.maximum(m / m.sum(), np.exp(-46.0) * (m.max() / m.sum()))
        log_p = np.log(m / m.sum())
    lam = float(init_lambda) if init_lambda is not None else 1.0 / (1.0 + budget)
    n_updates = 0

    # multiplicative warmup with the power multiplier tracked adaptively
    for sweep in range(min(120, max_iters)):
        gain = spec.info_density(np.exp(log_p)) - lam * b - mu_mult * c
        n_updates += 1
        log_p = log_p + gain
        log_p -= logsumexp(log_p)
        power = float(np.exp(log_p) @ b)
        ratio = power / budget
        lam = float(np.clip(lam * ratio ** 0.7, 1e-9, 1e9))
        if sweep >= 15 and 0.98 < ratio < 1.02:
            break

    # alternate Newton with budget-pinned multiplicative sweeps: Newton
    # resolves flat ridges the tilt crawls along, the tilt is immune to the
    # Hessian conditioning that eventually starves Newton's line search
    # Nearly-collinear likelihood columns of neighboring grid points leave
    # these objectives with ridge curvature near 1e-6, so double precision
    # cannot certify 1e-9 here; the delivered stall tolerance is floored at
    # 1e-7 relative, far inside every downstream tolerance.
    stall_tol = max(tol, 1e-7)
    p = np.exp(log_p)
    j_vals = []
    converged = False
    penalty = mu_mult * c
    for _ in range(30):
        p, lam, jv, used, converged = _newton_power_matched(
            spec, penalty, b, budget, p, lam, max_iters - n_updates, tol)
        j_vals.extend(jv)
        n_updates += used
        if converged or n_updates >= max_iters:
            break
        j_entry = j_vals[-1] if j_vals else -np.inf
        lp = np.log(np.maximum(p / p.sum(), _TINY))
        best_j, best_p = -np.inf, p
        for _ in range(12):
            if n_updates >= max_iters:
                break
            gain = spec.info_density(np.exp(lp)) - penalty
            n_updates += 1
            j_here = float(np.exp(lp) @ gain)
            if j_here > best_j:
                best_j, best_p = j_here, np.exp(lp)
            lp = lp + gain - lam * b
            lp -= logsumexp(lp)
            tilted = _tilt_to_power(np.exp(lp), b, budget)
            lp = np.log(np.maximum(tilted, _TINY))
        p = best_p
        if best_j - j_entry <= stall_tol * max(1.0, abs(best_j)):
            converged = True      # stable across both update families
            break
    mass = p / p.sum()
    dist = GriddedDistribution(mass)
    rate = spec.conditional_mi_bits(mass)
    power = float(mass @ b)
    if abs(power - budget) > power_tol:
        converged = False
    return BaSolution(
        rate_bits=max(0.0, rate),
        avg_power=power,
        avg_distortion=float(mass @ c),
        distribution=dist,
        lagrangian=j_vals[-1] if j_vals else float("nan"),
        iterations=n_updates,
        converged=converged,
        lambda_mult=lam,
        mu_mult=mu_mult,
    )


def _tilt_to_power(p, b_cost, budget):
    """Exact feasibility projector: rescale p by exp(s*b) so E{b} = budget.

    Power is strictly increasing in the tilt s (its derivative is the
    b-variance under the tilted mass), so a guarded secant locates the
    matching tilt to machine precision. Returns the retilted distribution.
    """
    live = p > 0
    if not live.any():
        raise ValueError("empty distribution")
    logp = np.log(p[live])
    b = b_cost[live]

    def power_at(s):
        lw = logp + s * b
        lw -= lw.max()
        w = np.exp(lw)
        w /= w.sum()
        return float(w @ b), w

    s_lo, s_hi = 0.0, 0.0
    pw, _ = power_at(0.0)
    if abs(pw - budget) < 1e-15 * max(1.0, budget):
        return p
    step = 1.0 / max(b.max() - b.min(), 1e-12)
    if pw < budget:
        while pw < budget:
            s_lo = s_hi
            s_hi += step
            step *= 2.0
            pw, _ = power_at(s_hi)
            if step > 1e12:
                raise RuntimeError("cannot reach the power budget by tilting")
    else:
        while pw > budget:
            s_hi = s_lo
            s_lo -= step
            step *= 2.0
            pw, _ = power_at(s_lo)
            if step > 1e12:
                raise RuntimeError("cannot reach the power budget by tilting")
    for _ in range(200):
        s_mid = 0.5 * (s_lo + s_hi)
        pw, w = power_at(s_mid)
        if abs(pw - budget) <= 1e-13 * max(1.0, budget):
            break
        if pw < budget:
            s_lo = s_mid
        else:
            s_hi = s_mid
    out = np.zeros_like(p)
    out[live] = w
    return out


def _newton_power_matched(spec, penalty, b_cost, budget, mass, lam0, budget_sweeps, tol):
    """Equality-constrained damped Newton for the power-pinned problem.

    Maximizes J(p) = I(p) - penalty.p subject to sum(p) = 1 and
    b_cost.p = budget over the live support. The start is made exactly
    feasible by an exponential tilt and every Newton direction lies in the
    null space of both constraints, so accepted J values are nondecreasing
    throughout; the dual of the power row is the reported multiplier.
    """
    p_full = mass.copy()
    support = p_full > p_full.max() * np.exp(-35.0)
    p_full = np.where(support, p_full, 0.0)
    p_full /= p_full.sum()
    p_full = _tilt_to_power(p_full, b_cost, budget)
    sweeps = 0
    j_values = []
    lam = lam0

    def j_and_gain(pv):
        gain = spec.info_density(pv) - penalty
        return float(pv @ gain), gain

    j_cur, gain = j_and_gain(p_full)
    sweeps += 1
    j_values.append(j_cur)
    cols = None
    cols_mask = None
    g_raw = None
    delta = None
    trace_scale = 1.0
    converged = False
    regrow_budget = 4

    def kkt_certificate():
        # stationarity demands gain = nu + lam*b wherever mass is solid;
        # fitting (nu, lam) by least squares over the solid support gives a
        # dual estimate untainted by the Hessian's conditioning. Residual
        # over the solid support plus dual feasibility everywhere else is
        # the full KKT test.
        eps = max(100.0 * tol, 1e-7) * max(1.0, abs(j_cur))
        solid = p_full > p_full.max() * 1e-8
        b_solid = b_cost[solid]
        spread = float(b_solid.max() - b_solid.min())
        if spread > 1e-9 * max(1.0, float(np.abs(b_cost).max())):
            a_mat = np.column_stack([np.ones(int(solid.sum())), b_solid])
            coef, *_ = np.linalg.lstsq(a_mat, gain[solid], rcond=None)
            nu_fit, lam_fit = float(coef[0]), float(coef[1])
            resid = float(np.abs(gain[solid] - nu_fit - lam_fit * b_solid).max())
        else:
            # solid mass sits on atoms with one common power value, so the
            # stationarity fit cannot identify the dual; any lam in the
            # interval enforcing dual feasibility elsewhere is valid
            g_atom = float(gain[solid].mean())
            b_atom = float(b_solid.mean())
            resid = float(np.abs(gain[solid] - g_atom).max())
            num = gain - g_atom - eps
            den = b_cost - b_atom
            above = den > 1e-12
            below = den < -1e-12
            lam_lo = float((num[above] / den[above]).max()) if above.any() else -np.inf
            lam_hi = float((num[below] / den[below]).min()) if below.any() else np.inf
            lam_fit = float(np.clip(lam, lam_lo, lam_hi)) if lam_lo <= lam_hi \
                else 0.5 * (lam_lo + lam_hi)
            nu_fit = g_atom - lam_fit * b_atom
        slack = gain - nu_fit - lam_fit * b_cost
        viol = (~solid) & (slack > eps)
        return lam_fit, resid, viol, eps

    for _ in range(200):
        if sweeps >= budget_sweeps:
            break
        idx = np.flatnonzero(support)
        if idx.size < 3:
            # two atoms + two equality constraints leave no freedom; only
            # off-support regrowth could still help
            lam_fit, resid, viol, eps = kkt_certificate()
            lam = lam_fit
            if viol.any() and regrow_budget > 0:
                regrow_budget -= 1
                support |= viol
                p_full[viol] = p_full.max() * np.exp(-30.0)
                p_full = _tilt_to_power(p_full / p_full.sum(), b_cost, budget)
                j_cur, gain = j_and_gain(p_full)
                sweeps += 1
                g_raw = None
                continue
            converged = True
            break
        if g_raw is None:
            if cols_mask is None or not np.array_equal(cols_mask, idx):
                cols = spec._flat[:, idx]
                cols_mask = idx
            mix = spec._flat @ p_full
            scale = np.where(mix > 1e-280, spec._w_sy / np.maximum(mix, 1e-280), 0.0)
            g_raw = (cols * scale[:, None]).T @ cols
            trace_scale = max(np.trace(g_raw) / idx.size, 1e-12)
            if delta is None:
                delta = 1e-9 * trace_scale
        g_mat = g_raw.copy()
        g_mat[np.diag_indices_from(g_mat)] += delta
        grad = gain[idx]
        b_sub = b_cost[idx]
        m = idx.size
        kkt = np.zeros((m + 2, m + 2))
        kkt[:m, :m] = g_mat
        kkt[:m, m] = 1.0
        kkt[m, :m] = 1.0
        kkt[:m, m + 1] = b_sub
        kkt[m + 1, :m] = b_sub
        rhs = np.concatenate([grad, [0.0, 0.0]])
        try:
            sol = np.linalg.solve(kkt, rhs)
        except np.linalg.LinAlgError:
            delta *= 16.0
            continue
        d = sol[:m]
        lam_new = float(sol[m + 1])
        slope = float(grad @ d)
        if not np.all(np.isfinite(d)) or slope <= 0:
            delta *= 16.0
            if delta > 1e12 * trace_scale:
                break
            continue
        p_sub = p_full[idx]
        meaningful = (d < 0) & (p_sub > p_sub.max() * np.exp(-20.0))
        t_start = 1.0
        if meaningful.any():
            t_start = min(1.0, float(0.995 * np.min(p_sub[meaningful] / -d[meaningful])))
        t = t_start
        accepted = False
        step_change = np.inf
        while t > 1e-14 and sweeps < budget_sweeps:
            cand = p_full.copy()
            cand[idx] = np.maximum(p_sub + t * d, 0.0)
            cand = _tilt_to_power(cand / cand.sum(), b_cost, budget)
            j_new, gain_new = j_and_gain(cand)
            sweeps += 1
            if j_new >= j_cur + 1e-4 * t * slope or (j_new >= j_cur and t == t_start):
                step_change = j_new - j_cur
                p_full, j_cur, gain = cand, j_new, gain_new
                lam = lam_new
                j_values.append(j_cur)
                accepted = True
                break
            t *= 0.5
        if not accepted:
            if g_raw is not None:
                delta *= 16.0
                if delta > 1e12 * trace_scale:
                    break
                continue
            break
        g_raw = None
        delta = max(delta / 4.0, 1e-12 * trace_scale)
        dead = support & (p_full < p_full.max() * np.exp(-40.0))
        if dead.any():
            p_full[dead] = 0.0
            support &= ~dead
            p_full = _tilt_to_power(p_full / p_full.sum(), b_cost, budget)
        if abs(step_change) > tol * max(1.0, abs(j_cur)):
            continue
        # progress has stalled; react to KKT defects while corrective moves
        # remain (regrow coordinates that want mass back, drop boundary
        # riders whose dual value says "leave"), then stop
        lam_fit, resid, viol, eps = kkt_certificate()
        lam = lam_fit
        if viol.any() and regrow_budget > 0:
            regrow_budget -= 1
            support |= viol
            p_full[viol] = p_full.max() * np.exp(-30.0)
            p_full = _tilt_to_power(p_full / p_full.sum(), b_cost, budget)
            j_cur, gain = j_and_gain(p_full)
            sweeps += 1
            continue
        slack = gain - lam_fit * b_cost
        nu = float(np.median(slack[support]))
        leavers = support & (p_full < p_full.max() * 1e-8) & (slack < nu - eps)
        if leavers.any():
            p_full[leavers] = 0.0
            support &= ~leavers
            p_full = _tilt_to_power(p_full / p_full.sum(), b_cost, budget)
            j_cur, gain = j_and_gain(p_full)
            sweeps += 1
            continue
        # nothing left to fix within this round; the outer hybrid decides
        # convergence by cross-family stall
        break
    return p_full, lam, j_values, sweeps, converged


def cd_boundary(spec: DiscreteChannelSpec, costs: CostPair, budget: float,
                mu_schedule, power_tol: float = 1e-3, tol: float = 1e-9,
                max_iters: int = 10000) -> CdBoundary:
    """Sweep the distortion multiplier and trace the rate-distortion boundary.

    For each mu the power multiplier is tuned so the average power matches
    the budget within `power_tol` (with equality, which is optimal since
    rate grows with power). Points are returned sorted by increasing
    distortion; warm starts carry across the schedule.
    """
    pts = []
    warm = None
    warm_lam = None
    for mu in sorted(np.asarray(mu_schedule, dtype=float)):
        sol = ba_solve_power_matched(spec, costs, float(mu), budget, tol=tol,
                                     power_tol=power_tol, max_iters=max_iters,
                                     init_mass=warm, init_lambda=warm_lam)
        warm = sol.distribution.mass
        warm_lam = sol.lambda_mult
        pts.append(BoundaryPoint(
            mu=float(mu), lam=float(sol.lambda_mult), rate_bits=sol.rate_bits,
            avg_power=sol.avg_power, avg_distortion=sol.avg_distortion,
            mass=sol.distribution.mass, converged=sol.converged))
    pts.sort(key=lambda p: p.avg_distortion)
    return CdBoundary(pts, spec.input_grid, budget,
                      metadata=dict(power_tol=power_tol, tol=tol))
