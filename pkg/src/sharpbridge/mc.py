"""Monte Carlo for the time-changed conditioned diffusion.

Linear models (Brownian motion included) are sampled from the exact
Gaussian bridge law: the conditional distribution of each grid point
given the current state and the conditioning endpoint is Gaussian with
matrices precomputed per step, so the only error is statistical.
Other models fall back to Euler-Maruyama on the rescaled bridge SDE
with the drift taken from the expansion fields.

Exit probabilities support a per-step crossing correction: for each
surviving step the Brownian-bridge probability of having crossed the
half-space boundary between the two grid points multiplies into a
survival weight, removing the discrete-monitoring bias of the plain
counting estimator.

Reproducibility: all randomness is drawn from the counter-based
generator in rng.py keyed by (seed, path index, step group), paths are
processed in fixed-size chunks and partial sums are combined in chunk
order, so results are bit-identical for a given seed regardless of
worker count or scheduling.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .errors import ConfigError
from .expansion import build_expansion
from .model import BridgeProblem, HalfSpaceDomain, diffusion_matrix
from .ou import gram_matrix
from . import rng

CHUNK = 1 << 18
Z95 = 1.959963984540054
WILSON_COUNT_FLOOR = 30
DRIFT_STEP_LIMIT = 0.5

STREAM_BRIDGE = 1
STREAM_EULER = 2
STREAM_FREE = 3


@dataclass(frozen=True)
class McConfig:
    """Simulation settings.

    steps is the per-unit-time resolution of the rescaled clock; the
    simulated window [s, 1 - delta] is discretized with round(steps *
    window) uniform steps (at least 4).
    """

    paths: int = 100_000
    steps: int = 64
    delta: float = 0.05
    seed: int = 0
    workers: int = 1
    crossing_correction: bool = True

    def __post_init__(self) -> None:
        if self.paths < 1:
            raise ConfigError(f"paths must be at least 1, got {self.paths}")
        if self.steps < 4:
            raise ConfigError(f"steps must be at least 4, got {self.steps}")
        if not 0.0 <= self.delta < 1.0:
            raise ConfigError(f"delta must lie in [0, 1), got {self.delta}")
        if self.workers < 1:
            raise ConfigError(f"workers must be at least 1, got {self.workers}")


@dataclass(frozen=True)
class McEstimate:
    """Exit-probability estimate with a 95% confidence half-width."""

    p_hat: float
    half_width: float
    n_paths: int
    t_value: float
    truncated_at: float
    corrected: bool
    n_hard_exits: int


def _time_grid(s: float, end: float, steps_per_unit: int) -> np.ndarray:
    window = end - s
    if window <= 0.0:
        raise ConfigError(
            f"empty simulation window: [{s}, {end}] has no interior")
    n = max(4, int(round(steps_per_unit * window)))
    return np.linspace(s, end, n + 1)


def _half_width(values_sum: float, squares_sum: float, n: int,
                hard_exits: int) -> float:
    """Normal-approximation half-width with a Wilson fallback when the
    hard-exit count is too small for the CLT to be trusted."""
    if hard_exits < WILSON_COUNT_FLOOR:
        p = hard_exits / n
        z2 = Z95 * Z95
        return float(Z95 * np.sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n))
                     / (1.0 + z2 / n))
    mean = values_sum / n
    var = max(squares_sum - n * mean * mean, 0.0) / max(n - 1, 1)
    return float(Z95 * np.sqrt(var / n))


# ---------------------------------------------------------------------------
# exact Gaussian bridge stepping (linear models)
# ---------------------------------------------------------------------------

def _linear_bridge_maps(M: np.ndarray, y: np.ndarray, t: float,
                        v_grid: np.ndarray):
    """Per-step affine maps of the exact conditional law.

    Given the state z at v_n and the conditioning point y at v = 1,
    the next grid state is F z + g + L xi with xi standard normal:
    Gaussian conditioning of the one-step propagation on the remaining
    transition to y.
    """
    d = M.shape[0]
    dt_phys = float(t * (v_grid[1] - v_grid[0]))
    a1 = expm(M * dt_phys)
    s1 = gram_matrix(M, dt_phys)
    s1_inv = np.linalg.inv(s1)
    fs, gs, ls = [], [], []
    for n in range(v_grid.size - 1):
        remain = float(t * (1.0 - v_grid[n + 1]))
        if remain <= 0:
            raise ConfigError("bridge grid reaches the conditioning time")
        a2 = expm(M * remain)
        s2 = gram_matrix(M, remain)
        t2 = np.linalg.solve(s2, a2)
        lam = s1_inv + a2.T @ t2
        sigma = np.linalg.inv(lam)
        sigma = 0.5 * (sigma + sigma.T)
        fs.append(sigma @ s1_inv @ a1)
        gs.append(sigma @ t2.T @ y)
        ls.append(np.linalg.cholesky(sigma))
    return np.stack(fs), np.stack(gs), np.stack(ls)


# ---------------------------------------------------------------------------
# Euler stepping (general models)
# ---------------------------------------------------------------------------

class _EulerDrift:
    """Vectorized rescaled-bridge drift for the Euler route.

    Linear models use the exact Gaussian score per step (affine in the
    state). One-dimensional models precompute the signed Riemannian
    distance to y and the first-order drift correction on a grid and
    interpolate. Anything else is evaluated per path through the
    expansion fields, which is correct but slow.
    """

    def __init__(self, problem: BridgeProblem, v_grid: np.ndarray):
        self.problem = problem
        model = problem.model
        t = problem.t
        self.t = t
        self.linear = model.linear_spec is not None
        if self.linear:
            M = model.linear_spec
            self._rows = []
            for n in range(v_grid.size - 1):
                remain = float(t * (1.0 - v_grid[n]))
                emt = expm(M * remain)
                score = emt.T @ np.linalg.inv(gram_matrix(M, remain))
                # t * (M z + score (y - emt z)) as affine map R z + r
                self._rows.append((t * (M - score @ emt),
                                   t * (score @ problem.y)))
            return
        self.expansion = build_expansion(model, problem.y)
        if model.dim == 1:
            x0 = float(problem.x[0])
            y0 = float(problem.y[0])
            lo = min(x0, y0)
            hi = max(x0, y0)
            pad = 4.0 * max(hi - lo, 1.0)
            self._grid = np.linspace(lo - pad, hi + pad, 4001)
            sig = np.array([float(model.dispersion(np.array([g]))[0, 0])
                            for g in self._grid])
            if np.any(sig <= 0):
                raise ConfigError("dispersion must stay positive on the "
                                  "working interval")
            self._sigma_grid = sig
            inv = 1.0 / sig
            phi = np.concatenate([[0.0], np.cumsum(
                0.5 * (inv[1:] + inv[:-1]) * np.diff(self._grid))])
            self._phi_grid = phi
            self._phi_y = float(np.interp(y0, self._grid, phi))
            # first-order drift interpolation table; coarse geodesics
            # suffice for an O(t) correction term
            from .expansion import first_order_drift
            b1_nodes = np.linspace(lo - 0.5, hi + 0.5, 17)
            if model.linear_spec is not None or self.expansion.provenance != "geometry":
                b1_vals = np.array([float(self.expansion.b_first(
                    np.array([g]), 0.0)[0]) for g in b1_nodes])
            else:
                b1_vals = np.array([float(first_order_drift(
                    model, problem.y, np.array([g]), n_segments=60)[0])
                    for g in b1_nodes])
            self._b1_nodes = b1_nodes
            self._b1_vals = b1_vals

    def __call__(self, Z: np.ndarray, n: int, v: float) -> np.ndarray:
        if self.linear:
            R, r = self._rows[n]
            return Z @ R.T + r
        if self.problem.model.dim == 1:
            z = Z[:, 0]
            sig = np.interp(z, self._grid, self._sigma_grid)
            phi = np.interp(z, self._grid, self._phi_grid)
            b_lim = sig * (self._phi_y - phi) / (1.0 - v)
            b1 = np.interp(z, self._b1_nodes, self._b1_vals)
            return (b_lim + self.t * b1)[:, None]
        out = np.empty_like(Z)
        for i in range(Z.shape[0]):
            out[i] = (np.asarray(self.expansion.b_limit(Z[i], v), dtype=float)
                      + self.t * np.asarray(self.expansion.b_first(Z[i], v),
                                            dtype=float))
        return out

    def noise_scale(self, Z: np.ndarray) -> np.ndarray:
        """sqrt(t) sigma(z) per path, shape (P, d, d)."""
        model = self.problem.model
        root_t = np.sqrt(self.t)
        if self.linear:
            return None  # identity dispersion, handled by the caller
        if model.dim == 1:
            sig = np.interp(Z[:, 0], self._grid, self._sigma_grid)
            return (root_t * sig)[:, None, None]
        return np.stack([root_t * np.asarray(model.dispersion(z), dtype=float)
                         for z in Z])


# ---------------------------------------------------------------------------
# chunked exit estimator
# ---------------------------------------------------------------------------

def _run_chunks(n_paths: int, workers: int, worker_fn):
    n_chunks = (n_paths + CHUNK - 1) // CHUNK
    if workers <= 1 or n_chunks == 1:
        results = [worker_fn(i) for i in range(n_chunks)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(worker_fn, range(n_chunks)))
    return results


def _exit_chunk_linear(problem: BridgeProblem, config: McConfig,
                       v_grid, maps, lo: int, hi: int):
    """Exit tallies for paths [lo, hi) of an exact linear bridge."""
    fs, gs, ls = maps
    domain = problem.domain
    v = domain.normal
    k = domain.level
    d = problem.model.dim
    t = problem.t

    ids = np.arange(lo, hi, dtype=np.uint64)
    normals = rng.PathNormals(config.seed, ids, d, stream=STREAM_BRIDGE)
    P = hi - lo
    Z = np.tile(problem.x, (P, 1))
    proj = Z @ v
    surv = np.ones(P)
    exited = np.zeros(P, dtype=bool)
    dv = float(v_grid[1] - v_grid[0])
    var_step = t * dv  # <a v, v> = 1 for identity dispersion

    for n in range(v_grid.size - 1):
        xi = normals.take(n)
        Z = Z @ fs[n].T + gs[n] + xi @ ls[n].T
        proj1 = Z @ v
        crossed = (proj >= k) | (proj1 >= k)
        if config.crossing_correction:
            gap0 = np.maximum(k - proj, 0.0)
            gap1 = np.maximum(k - proj1, 0.0)
            p_cross = np.where(crossed, 1.0,
                               np.exp(-2.0 * gap0 * gap1 / var_step))
        else:
            p_cross = crossed.astype(float)
        surv *= 1.0 - p_cross
        exited |= crossed
        proj = proj1

    values = 1.0 - surv
    return float(values.sum()), float((values * values).sum()), int(exited.sum())


def _exit_chunk_euler(problem: BridgeProblem, config: McConfig,
                      v_grid, drift: _EulerDrift, lo: int, hi: int):
    domain = problem.domain
    v = domain.normal
    k = domain.level
    d = problem.model.dim
    t = problem.t

    ids = np.arange(lo, hi, dtype=np.uint64)
    normals = rng.PathNormals(config.seed, ids, d, stream=STREAM_EULER)
    P = hi - lo
    Z = np.tile(problem.x, (P, 1))
    proj = Z @ v
    surv = np.ones(P)
    exited = np.zeros(P, dtype=bool)
    frozen = np.zeros(P, dtype=bool)
    dv = float(v_grid[1] - v_grid[0])
    advisories = 0

    for n in range(v_grid.size - 1):
        xi = normals.take(n)
        mu = drift(Z, n, float(v_grid[n]))
        too_fast = np.abs(mu).max(axis=1) * dv > DRIFT_STEP_LIMIT
        newly_frozen = too_fast & ~frozen
        advisories += int(newly_frozen.sum())
        frozen |= too_fast
        scale = drift.noise_scale(Z)
        if scale is None:
            step = mu * dv + np.sqrt(t * dv) * xi
        else:
            step = mu * dv + np.sqrt(dv) * np.einsum("pij,pj->pi", scale, xi)
        Z = np.where(frozen[:, None], Z, Z + step)

        proj1 = Z @ v
        crossed = (proj >= k) | (proj1 >= k)
        if config.crossing_correction:
            if drift.linear or problem.model.dim != 1:
                a_vv = np.ones(P) if drift.linear else np.array(
                    [float(v @ (diffusion_matrix(problem.model, z) @ v))
                     for z in Z])
            else:
                sig = np.interp(Z[:, 0], drift._grid, drift._sigma_grid)
                a_vv = sig * sig
            gap0 = np.maximum(k - proj, 0.0)
            gap1 = np.maximum(k - proj1, 0.0)
            active = ~frozen
            p_cross = np.where(crossed, 1.0, np.where(
                active, np.exp(-2.0 * gap0 * gap1 / (t * dv * a_vv)), 0.0))
        else:
            p_cross = crossed.astype(float)
        surv *= 1.0 - p_cross
        exited |= crossed
        proj = proj1

    if advisories:
        warnings.warn(
            f"{advisories} paths truncated early: drift step exceeded "
            f"{DRIFT_STEP_LIMIT} near the conditioning time", RuntimeWarning)
    values = 1.0 - surv
    return float(values.sum()), float((values * values).sum()), int(exited.sum())


def exit_probability(problem: BridgeProblem, config: McConfig) -> McEstimate:
    """Probability that the bridge leaves the half space before 1 - delta.

    Exact Gaussian sampling for linear models, Euler otherwise; with
    crossing_correction each path contributes one minus its survival
    weight instead of a bare exit indicator.
    """
    end = 1.0 - config.delta
    v_grid = _time_grid(problem.s, end, config.steps)

    if problem.model.linear_spec is not None:
        maps = _linear_bridge_maps(problem.model.linear_spec, problem.y,
                                   problem.t, v_grid)

        def worker(i):
            lo = i * CHUNK
            hi = min(lo + CHUNK, config.paths)
            return _exit_chunk_linear(problem, config, v_grid, maps, lo, hi)
    else:
        drift = _EulerDrift(problem, v_grid)

        def worker(i):
            lo = i * CHUNK
            hi = min(lo + CHUNK, config.paths)
            return _exit_chunk_euler(problem, config, v_grid, drift, lo, hi)

    tallies = _run_chunks(config.paths, config.workers, worker)
    s_v = 0.0
    s_v2 = 0.0
    hard = 0
    for a, b, c in tallies:
        s_v += a
        s_v2 += b
        hard += c
    n = config.paths
    return McEstimate(p_hat=s_v / n,
                      half_width=_half_width(s_v, s_v2, n, hard),
                      n_paths=n, t_value=problem.t, truncated_at=end,
                      corrected=config.crossing_correction,
                      n_hard_exits=hard)


def unconditioned_exit_probability(domain: HalfSpaceDomain, x: np.ndarray,
                                   s: float, eps: float,
                                   config: McConfig) -> McEstimate:
    """Diagnostic mode: exit probability of dX = sqrt(eps) dB on [s, 1].

    No conditioning and no truncation; the crossing correction is
    exact here, so the estimator is unbiased at any step count.
    """
    x = np.asarray(x, dtype=float)
    v = domain.normal
    k = domain.level
    d = x.size
    v_grid = _time_grid(s, 1.0, config.steps)
    dt = float(v_grid[1] - v_grid[0])
    scale = float(np.sqrt(eps * dt))

    def worker(i):
        lo = i * CHUNK
        hi = min(lo + CHUNK, config.paths)
        ids = np.arange(lo, hi, dtype=np.uint64)
        normals = rng.PathNormals(config.seed, ids, d, stream=STREAM_FREE)
        P = hi - lo
        Z = np.tile(x, (P, 1))
        proj = Z @ v
        surv = np.ones(P)
        exited = np.zeros(P, dtype=bool)
        for n in range(v_grid.size - 1):
            Z = Z + scale * normals.take(n)
            proj1 = Z @ v
            crossed = (proj >= k) | (proj1 >= k)
            if config.crossing_correction:
                gap0 = np.maximum(k - proj, 0.0)
                gap1 = np.maximum(k - proj1, 0.0)
                p_cross = np.where(crossed, 1.0,
                                   np.exp(-2.0 * gap0 * gap1 / (eps * dt)))
            else:
                p_cross = crossed.astype(float)
            surv *= 1.0 - p_cross
            exited |= crossed
            proj = proj1
        values = 1.0 - surv
        return (float(values.sum()), float((values * values).sum()),
                int(exited.sum()))

    tallies = _run_chunks(config.paths, config.workers, worker)
    s_v = sum(a for a, _, _ in tallies)
    s_v2 = sum(b for _, b, _ in tallies)
    hard = sum(c for _, _, c in tallies)
    n = config.paths
    return McEstimate(p_hat=s_v / n,
                      half_width=_half_width(s_v, s_v2, n, hard),
                      n_paths=n, t_value=eps, truncated_at=1.0,
                      corrected=config.crossing_correction,
                      n_hard_exits=hard)


# ---------------------------------------------------------------------------
# path sampling
# ---------------------------------------------------------------------------

def sample_bridge_paths(problem: BridgeProblem, config: McConfig,
                        path_ids: np.ndarray):
    """Full discrete trajectories for the given path indices.

    Returns (v_grid, states) with states of shape
    (len(path_ids), len(v_grid), d). Exact sampling for linear models,
    Euler otherwise, drawing the same numbers as exit_probability for
    equal indices.
    """
    end = 1.0 - config.delta
    v_grid = _time_grid(problem.s, end, config.steps)
    ids = np.asarray(path_ids, dtype=np.uint64)
    P = ids.size
    d = problem.model.dim
    out = np.empty((P, v_grid.size, d))
    out[:, 0] = problem.x

    if problem.model.linear_spec is not None:
        fs, gs, ls = _linear_bridge_maps(problem.model.linear_spec,
                                         problem.y, problem.t, v_grid)
        normals = rng.PathNormals(config.seed, ids, d, stream=STREAM_BRIDGE)
        Z = np.tile(problem.x, (P, 1))
        for n in range(v_grid.size - 1):
            Z = Z @ fs[n].T + gs[n] + normals.take(n) @ ls[n].T
            out[:, n + 1] = Z
        return v_grid, out

    drift = _EulerDrift(problem, v_grid)
    normals = rng.PathNormals(config.seed, ids, d, stream=STREAM_EULER)
    Z = np.tile(problem.x, (P, 1))
    dv = float(v_grid[1] - v_grid[0])
    frozen = np.zeros(P, dtype=bool)
    for n in range(v_grid.size - 1):
        xi = normals.take(n)
        mu = drift(Z, n, float(v_grid[n]))
        frozen |= np.abs(mu).max(axis=1) * dv > DRIFT_STEP_LIMIT
        scale = drift.noise_scale(Z)
        if scale is None:
            step = mu * dv + np.sqrt(problem.t * dv) * xi
        else:
            step = mu * dv + np.sqrt(dv) * np.einsum("pij,pj->pi", scale, xi)
        Z = np.where(frozen[:, None], Z, Z + step)
        out[:, n + 1] = Z
    if frozen.any():
        warnings.warn(
            f"{int(frozen.sum())} paths truncated early: drift step "
            f"exceeded {DRIFT_STEP_LIMIT} near the conditioning time",
            RuntimeWarning)
    return v_grid, out


def sample_bridge_path(problem: BridgeProblem, config: McConfig,
                       stream: int):
    """Single trajectory owned by the given path index."""
    v_grid, states = sample_bridge_paths(problem, config, np.array([stream]))
    return v_grid, states[0]


# ---------------------------------------------------------------------------
# rate and prefactor extrapolation
# ---------------------------------------------------------------------------

def fit_rate_prefactor(t_values, p_values) -> tuple[float, float]:
    """Least-squares fit of -t log p against t.

    Returns (intercept, slope); the intercept estimates the decay rate
    and the slope absorbs the logarithmic prefactor drift.
    """
    t = np.asarray(t_values, dtype=float)
    p = np.asarray(p_values, dtype=float)
    if t.size < 3:
        raise ValueError("rate fit needs at least 3 grid points")
    yv = -t * np.log(p)
    slope, intercept = np.polyfit(t, yv, 1)
    return float(intercept), float(slope)


@dataclass(frozen=True)
class ExtrapolationRow:
    t: float
    p_hat: float
    half_width: float
    c_hat: float
    c_half_width: float


@dataclass(frozen=True)
class ExtrapolationResult:
    ell_hat: float
    slope: float
    ell_pred: float
    rows: tuple
    dropped: tuple


def extrapolate(problem: BridgeProblem, t_grid, config: McConfig, *,
                ell_pred: float | None = None,
                estimates: dict[float, McEstimate] | None = None) -> ExtrapolationResult:
    """Monte Carlo estimates across a decreasing t grid with a rate fit.

    Per-point prefactor estimates are p_hat * exp(ell / t) with ell the
    sharp prediction (computed from the closed route when available).
    Grid points with zero estimated probability are dropped with a
    warning; fewer than three survivors is an error.
    """
    t_grid = [float(t) for t in t_grid]
    if len(t_grid) < 3:
        raise ValueError("extrapolation needs at least 3 grid points")
    if ell_pred is None:
        from .hj import sharp_estimate
        ell_pred = sharp_estimate(problem, route="closed").u_value

    rows = []
    dropped = []
    ts, ps = [], []
    for t in t_grid:
        est = None if estimates is None else estimates.get(t)
        if est is None:
            sub = BridgeProblem(model=problem.model, domain=problem.domain,
                                x=problem.x, y=problem.y, s=problem.s, t=t)
            est = exit_probability(sub, config)
        if est.p_hat <= 0.0:
            warnings.warn(f"no exits observed at t={t}; point dropped",
                          RuntimeWarning)
            dropped.append(t)
            continue
        boost = float(np.exp(ell_pred / t))
        rows.append(ExtrapolationRow(t=t, p_hat=est.p_hat,
                                     half_width=est.half_width,
                                     c_hat=est.p_hat * boost,
                                     c_half_width=est.half_width * boost))
        ts.append(t)
        ps.append(est.p_hat)
    if len(ts) < 3:
        raise ValueError("fewer than 3 usable grid points after dropping "
                         "zero-probability estimates")
    ell_hat, slope = fit_rate_prefactor(ts, ps)
    return ExtrapolationResult(ell_hat=ell_hat, slope=slope,
                               ell_pred=float(ell_pred), rows=tuple(rows),
                               dropped=tuple(dropped))
