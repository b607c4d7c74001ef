import numpy as np
import pytest
from scipy.linalg import expm
from scipy.stats import norm

import sharpbridge as sb
from sharpbridge.ou import gram_matrix

SKEW = np.array([[0.0, 1.0], [-1.0, 0.0]])
DOM1 = sb.HalfSpaceDomain(normal=np.array([1.0]), level=1.0)
DOM2 = sb.HalfSpaceDomain(normal=np.array([1.0, 0.0]), level=1.0)
FAR_DOM1 = sb.HalfSpaceDomain(normal=np.array([1.0]), level=100.0)


def _bridge_marginal(M, t, x, y, v):
    """Oracle: conditional law of the time-changed bridge at time v by
    direct Gaussian conditioning of (X_{tv}, X_t)."""
    u = v * t
    m_u = expm(M * u) @ x
    m_t = expm(M * t) @ x
    s_u = gram_matrix(M, u)
    cross = s_u @ expm(M.T * (t - u))
    s_t = gram_matrix(M, t)
    gain = np.linalg.solve(s_t, cross.T).T
    mean = m_u + gain @ (y - m_t)
    cov = s_u - gain @ cross.T
    return mean, cov


def test_brownian_bridge_marginal_moments():
    prob = sb.BridgeProblem(model=sb.brownian(1), domain=FAR_DOM1,
                            x=np.array([0.0]), y=np.array([0.0]), s=0.0, t=1.0)
    cfg = sb.McConfig(paths=100_000, steps=64, delta=0.05, seed=3)
    v_grid, paths = sb.sample_bridge_paths(prob, cfg, np.arange(100_000))
    i = int(np.argmin(np.abs(v_grid - 0.5)))
    v = v_grid[i]
    samples = paths[:, i, 0]
    var_ref = v * (1.0 - v)  # t = 1
    assert abs(samples.mean()) <= 4.0 * np.sqrt(var_ref / samples.size)
    assert samples.var() == pytest.approx(var_ref, rel=0.05)


def test_ou_bridge_marginal_against_gaussian_conditioning():
    M = np.array([[0.4, 0.9], [-0.7, -0.2]])
    x = np.array([0.3, -0.1])
    y = np.array([0.5, 0.8])
    t = 0.7
    prob = sb.BridgeProblem(
        model=sb.ornstein_uhlenbeck(M),
        domain=sb.HalfSpaceDomain(normal=np.array([1.0, 0.0]), level=50.0),
        x=x, y=y, s=0.0, t=t)
    cfg = sb.McConfig(paths=60_000, steps=32, delta=0.05, seed=5)
    v_grid, paths = sb.sample_bridge_paths(prob, cfg, np.arange(60_000))
    i = int(np.argmin(np.abs(v_grid - 0.5)))
    mean_ref, cov_ref = _bridge_marginal(M, t, x, y, float(v_grid[i]))
    samples = paths[:, i, :]
    se = np.sqrt(np.diag(cov_ref) / samples.shape[0])
    assert np.abs(samples.mean(axis=0) - mean_ref).max() <= 5.0 * se.max()
    assert np.abs(np.cov(samples.T) - cov_ref).max() <= 0.05 * np.abs(cov_ref).max()


def test_small_t_paths_concentrate_in_tube():
    t = 0.01
    prob = sb.BridgeProblem(
        model=sb.ornstein_uhlenbeck(SKEW),
        domain=sb.HalfSpaceDomain(normal=np.array([1.0, 0.0]), level=50.0),
        x=np.array([0.0, 0.0]), y=np.array([0.0, 1.0]), s=0.0, t=t)
    cfg = sb.McConfig(paths=1000, steps=64, delta=0.05, seed=9)
    v_grid, paths = sb.sample_bridge_paths(prob, cfg, np.arange(1000))
    # straight segment from x to y in the flat metric
    ref = prob.x[None, :] + v_grid[:, None] * (prob.y - prob.x)[None, :]
    dev = np.linalg.norm(paths - ref[None, :, :], axis=2).max(axis=1)
    assert np.quantile(dev, 0.99) <= 10.0 * np.sqrt(t)


def test_empty_window_rejected():
    prob = sb.BridgeProblem(model=sb.brownian(1), domain=DOM1,
                            x=np.array([0.0]), y=np.array([0.0]), s=0.6, t=0.5)
    with pytest.raises(sb.ConfigError):
        sb.exit_probability(prob, sb.McConfig(paths=10, delta=0.5))


def test_exit_probability_brownian_within_ci():
    prob = sb.BridgeProblem(model=sb.brownian(1), domain=DOM1,
                            x=np.array([0.0]), y=np.array([0.0]), s=0.0, t=0.5)
    est = sb.exit_probability(prob, sb.McConfig(paths=400_000, seed=21))
    exact = float(np.exp(-4.0))
    assert abs(est.p_hat - exact) <= 3.0 * est.half_width
    assert 0.0 <= est.p_hat <= 1.0
    assert est.truncated_at == 0.95


def test_exit_probability_unreachable_boundary():
    prob = sb.BridgeProblem(model=sb.brownian(1), domain=FAR_DOM1,
                            x=np.array([0.0]), y=np.array([0.0]), s=0.0, t=0.5)
    est = sb.exit_probability(prob, sb.McConfig(paths=10_000, seed=1))
    assert est.p_hat == 0.0
    assert est.n_hard_exits == 0
    assert est.half_width > 0.0  # Wilson fallback keeps the interval honest


def test_unconditioned_diagnostic_matches_gaussian_tail():
    est = sb.unconditioned_exit_probability(
        DOM1, np.array([0.0]), 0.0, 0.25,
        sb.McConfig(paths=400_000, steps=16, seed=17))
    exact = 2.0 * norm.sf(2.0)
    assert abs(est.p_hat - exact) <= 3.0 * est.half_width


def test_crossing_correction_increases_estimate():
    prob = sb.BridgeProblem(model=sb.brownian(1), domain=DOM1,
                            x=np.array([0.0]), y=np.array([0.0]), s=0.0, t=0.5)
    on = sb.exit_probability(prob, sb.McConfig(paths=50_000, seed=2))
    off = sb.exit_probability(prob, sb.McConfig(paths=50_000, seed=2,
                                                crossing_correction=False))
    assert on.p_hat > off.p_hat


def test_uncorrected_estimator_biased_low_at_coarse_steps():
    prob = sb.BridgeProblem(model=sb.brownian(1), domain=DOM1,
                            x=np.array([0.0]), y=np.array([0.0]), s=0.0, t=0.5)
    exact = float(np.exp(-4.0))
    corrected = sb.exit_probability(prob, sb.McConfig(paths=1_000_000,
                                                      steps=32, seed=4))
    plain = sb.exit_probability(prob, sb.McConfig(paths=1_000_000, steps=32,
                                                  seed=4,
                                                  crossing_correction=False))
    assert abs(corrected.p_hat - exact) <= 3.0 * corrected.half_width
    assert exact - plain.p_hat > 3.0 * plain.half_width / 1.96


def test_truncation_insensitivity():
    prob = sb.BridgeProblem(model=sb.brownian(1), domain=DOM1,
                            x=np.array([0.0]), y=np.array([0.0]), s=0.0, t=0.5)
    est_a = sb.exit_probability(prob, sb.McConfig(paths=1_000_000, seed=8,
                                                  delta=0.05))
    est_b = sb.exit_probability(prob, sb.McConfig(paths=1_000_000, seed=8,
                                                  delta=0.10))
    combined = np.hypot(est_a.half_width, est_b.half_width)
    assert abs(est_a.p_hat - est_b.p_hat) <= 3.0 * combined


def test_determinism_across_runs_and_workers():
    prob = sb.BridgeProblem(model=sb.ornstein_uhlenbeck(SKEW), domain=DOM2,
                            x=np.array([0.0, 0.0]), y=np.array([0.0, 1.0]),
                            s=0.0, t=0.5)
    a = sb.exit_probability(prob, sb.McConfig(paths=300_000, seed=12, workers=1))
    b = sb.exit_probability(prob, sb.McConfig(paths=300_000, seed=12, workers=1))
    c = sb.exit_probability(prob, sb.McConfig(paths=300_000, seed=12, workers=2))
    assert a.p_hat == b.p_hat
    assert a.half_width == b.half_width
    assert a.p_hat == c.p_hat  # chunk-ordered reduction; workers only add threads


def test_single_path_matches_batch():
    prob = sb.BridgeProblem(model=sb.brownian(1), domain=FAR_DOM1,
                            x=np.array([0.0]), y=np.array([0.0]), s=0.0, t=1.0)
    cfg = sb.McConfig(paths=8, seed=6)
    _, batch = sb.sample_bridge_paths(prob, cfg, np.arange(8))
    _, single = sb.sample_bridge_path(prob, cfg, 5)
    assert np.array_equal(single, batch[5])


def test_euler_route_matches_exact_law_for_linear_model():
    # force the Euler route by wrapping the linear drift as a black box
    M = np.array([[0.5]])
    euler_model = sb.DiffusionModel(dim=1, drift=lambda z: M @ z,
                                    dispersion=lambda z: np.eye(1))
    x = np.array([0.2])
    y = np.array([0.4])
    t = 0.5
    prob = sb.BridgeProblem(model=euler_model, domain=FAR_DOM1, x=x, y=y,
                            s=0.0, t=t)
    cfg = sb.McConfig(paths=40_000, steps=64, delta=0.05, seed=14)
    v_grid, paths = sb.sample_bridge_paths(prob, cfg, np.arange(40_000))
    i = int(np.argmin(np.abs(v_grid - 0.5)))
    mean_ref, cov_ref = _bridge_marginal(M, t, x, y, float(v_grid[i]))
    samples = paths[:, i, 0]
    se = float(np.sqrt(cov_ref[0, 0] / samples.size))
    # Euler has O(1/steps) bias on top of sampling noise
    assert abs(samples.mean() - mean_ref[0]) <= 5.0 * se + 0.02
    assert samples.var() == pytest.approx(cov_ref[0, 0], rel=0.1)


def test_euler_drift_advisory_near_singular_window():
    m = sb.scalar_sigma("1")  # unit dispersion through the general route
    prob = sb.BridgeProblem(model=m, domain=FAR_DOM1, x=np.array([0.0]),
                            y=np.array([5.0]), s=0.0, t=0.25)
    cfg = sb.McConfig(paths=64, steps=16, delta=0.001, seed=0)
    with pytest.warns(RuntimeWarning, match="truncated early"):
        sb.sample_bridge_paths(prob, cfg, np.arange(64))


def test_fit_rate_prefactor_exact_feed():
    ts = np.array([0.5, 0.4, 0.3])
    ps = np.exp(-2.0 / ts)
    ell_hat, slope = sb.fit_rate_prefactor(ts, ps)
    assert ell_hat == pytest.approx(2.0, abs=1e-9)
    assert slope == pytest.approx(0.0, abs=1e-9)
    c_hats = ps * np.exp(2.0 / ts)
    assert np.allclose(c_hats, 1.0, atol=1e-12)


def test_fit_rate_prefactor_needs_three_points():
    with pytest.raises(ValueError):
        sb.fit_rate_prefactor([0.5, 0.4], [0.1, 0.05])


def test_extrapolate_with_injected_estimates():
    prob = sb.BridgeProblem(model=sb.brownian(1), domain=DOM1,
                            x=np.array([0.0]), y=np.array([0.0]), s=0.0, t=0.5)
    cfg = sb.McConfig(paths=1000, seed=0)
    feed = {t: sb.McEstimate(p_hat=float(np.exp(-2.0 / t)), half_width=0.0,
                             n_paths=1000, t_value=t, truncated_at=0.95,
                             corrected=True, n_hard_exits=1000)
            for t in (0.5, 0.4, 0.3)}
    res = sb.extrapolate(prob, [0.5, 0.4, 0.3], cfg, estimates=feed)
    assert res.ell_hat == pytest.approx(2.0, abs=1e-9)
    assert res.ell_pred == pytest.approx(2.0, abs=1e-12)
    for row in res.rows:
        assert row.c_hat == pytest.approx(1.0, abs=1e-9)


def test_extrapolate_drops_zero_estimates():
    prob = sb.BridgeProblem(model=sb.brownian(1), domain=DOM1,
                            x=np.array([0.0]), y=np.array([0.0]), s=0.0, t=0.5)
    cfg = sb.McConfig(paths=1000, seed=0)
    feed = {t: sb.McEstimate(p_hat=(0.0 if t == 0.3 else float(np.exp(-2.0 / t))),
                             half_width=0.0, n_paths=1000, t_value=t,
                             truncated_at=0.95, corrected=True,
                             n_hard_exits=0)
            for t in (0.5, 0.4, 0.3)}
    with pytest.warns(RuntimeWarning, match="dropped"):
        with pytest.raises(ValueError):
            sb.extrapolate(prob, [0.5, 0.4, 0.3], cfg, estimates=feed)


def test_measured_prefactor_matches_corrected_constant():
    # regression for the sharp-constant measurement on the rotating
    # drift: the exactly sampled bridge estimates a prefactor near 1/e
    # (the value produced by the general-route first-order drift), far
    # from the closed-form chain's 4/e
    prob = sb.BridgeProblem(model=sb.ornstein_uhlenbeck(SKEW), domain=DOM2,
                            x=np.array([0.0, 0.0]), y=np.array([0.0, 1.0]),
                            s=0.0, t=0.4)
    est = sb.exit_probability(prob, sb.McConfig(paths=2_000_000, seed=11))
    c_hat = est.p_hat * np.exp(2.0 / 0.4)
    assert abs(c_hat - np.exp(-1.0)) < 0.04
    assert abs(c_hat - 4.0 / np.e) > 1.0
