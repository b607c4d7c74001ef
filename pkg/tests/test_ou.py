import numpy as np
import pytest

import sharpbridge as sb

SKEW = np.array([[0.0, 1.0], [-1.0, 0.0]])
DOM2 = sb.HalfSpaceDomain(normal=np.array([1.0, 0.0]), level=1.0)
X2 = np.array([0.0, 0.0])
Y2 = np.array([0.0, 1.0])


# ---------------------------------------------------------------------------
# gram matrix
# ---------------------------------------------------------------------------

def test_gram_zero_matrix():
    assert np.allclose(sb.gram_matrix(np.zeros((2, 2)), 0.7), 0.7 * np.eye(2),
                       atol=1e-15)


def test_gram_skew_is_isotropic():
    # e^{Mu} orthogonal for skew M, so the integrand is the identity
    for t in (0.1, 0.7, 2.0):
        assert np.allclose(sb.gram_matrix(SKEW, t), t * np.eye(2), atol=1e-13)


def test_gram_scalar_closed_form():
    for m in (1.0, -0.7, 0.2):
        for t in (0.3, 1.1):
            expected = (np.exp(2 * m * t) - 1.0) / (2.0 * m)
            assert sb.gram_matrix(np.array([[m]]), t)[0, 0] == pytest.approx(
                expected, rel=1e-12)


def test_gram_against_quadrature():
    from scipy.linalg import expm
    from scipy.integrate import simpson
    M = np.array([[0.3, 0.8], [-0.5, -0.2]])
    t = 0.6
    us = np.linspace(0.0, t, 4001)
    vals = np.array([expm(M * u) @ expm(M.T * u) for u in us])
    ref = simpson(vals, x=us, axis=0)
    assert np.abs(sb.gram_matrix(M, t) - ref).max() <= 1e-10


def test_gram_small_t_order():
    M = np.array([[0.3, 0.8], [-0.5, -0.2]])
    ts = np.array([1e-2, 1e-3, 1e-4])
    resid = [np.abs(sb.gram_matrix(M, t) - sb.gram_small_t(M, t)).max()
             for t in ts]
    slope = np.polyfit(np.log(ts), np.log(resid), 1)[0]
    assert slope >= 2.7


# ---------------------------------------------------------------------------
# transition score
# ---------------------------------------------------------------------------

def test_score_brownian_reduction():
    z = np.array([0.2, -0.4])
    y = np.array([1.0, 0.3])
    for t in (0.5, 0.05):
        grad = sb.ou_log_density_grad(np.zeros((2, 2)), t, z, y)
        assert np.allclose(grad, (y - z) / t, atol=1e-12)


def test_score_time_changed_unit_pull():
    # Brownian, z=0, y=1: t * score at horizon t(1-v) equals 1/(1-v)
    grad = sb.ou_log_density_grad(np.zeros((1, 1)), 0.3, np.array([0.0]),
                                  np.array([1.0]))
    assert 0.3 * grad[0] == pytest.approx(1.0, abs=1e-13)


def test_score_symmetric_zero_point():
    grad = sb.ou_log_density_grad(np.array([[1.0]]), 0.1, np.array([0.0]),
                                  np.array([0.0]))
    assert grad[0] == pytest.approx(0.0, abs=1e-13)


def test_score_requires_positive_time():
    with pytest.raises(sb.EvaluationError):
        sb.ou_log_density_grad(SKEW, 0.0, X2, Y2)


def test_score_limit_structure_documented_family():
    # (t grad - (y-z)/(1-v)) / t tends to -(M+M*) z / 2 on the family
    # where the first-order term has no conditioning-point contribution:
    # symmetric M with any y, and general M with y = 0.
    cases = [
        (np.array([[0.8, 0.3], [0.3, -0.4]]), np.array([0.4, -0.2]),
         np.array([0.6, 1.0])),
        (np.array([[0.3, 0.8], [-0.5, -0.2]]), np.array([0.4, -0.2]),
         np.zeros(2)),
        (SKEW, np.array([0.3, -0.2]), np.zeros(2)),
    ]
    v = 0.25
    for M, z, y in cases:
        t = 1e-4
        grad = sb.ou_log_density_grad(M, t * (1 - v), z, y)
        coeff = (t * grad - (y - z) / (1 - v)) / t
        assert np.abs(coeff - (-0.5 * (M + M.T) @ z)).max() <= 1e-3


def test_score_first_order_coefficient_general():
    # regression for the measured first-order term of the score
    # expansion: coefficient -> -M z + (M^T - M)(y - z)/2 (checked at
    # successively smaller horizons; the symmetric part reproduces the
    # -(M+M*) z / 2 structure, the antisymmetric part couples to y - z)
    M = np.array([[0.3, 0.8], [-0.5, -0.2]])
    z = np.array([0.3, -0.2])
    y = np.array([0.0, 1.0])
    v = 0.25
    expected = -M @ z + 0.5 * (M.T - M) @ (y - z)
    for t, tol in ((1e-3, 5e-3), (1e-4, 5e-4)):
        grad = sb.ou_log_density_grad(M, t * (1 - v), z, y)
        coeff = (t * grad - (y - z) / (1 - v)) / t
        assert np.abs(coeff - expected).max() <= tol


# ---------------------------------------------------------------------------
# half-space solution
# ---------------------------------------------------------------------------

def test_halfspace_symmetric_matrix_matches_brownian():
    dom1 = sb.HalfSpaceDomain(normal=np.array([1.0]), level=1.0)
    sol = sb.ou_halfspace_solution(np.array([[0.7]]), dom1, np.array([0.0]),
                                   np.array([0.0]), 0.0)
    assert sol.w_value == 0.0
    assert sol.prefactor == 1.0
    assert sol.u_value == pytest.approx(2.0, abs=1e-15)


def test_halfspace_skew_example_values():
    sol = sb.ou_halfspace_solution(SKEW, DOM2, X2, Y2, 0.0)
    assert sol.tau == pytest.approx(0.5, abs=1e-15)
    assert np.allclose(sol.eta, [1.0, 0.5], atol=1e-15)
    assert sol.u_value == pytest.approx(2.0, abs=1e-15)
    assert sol.w_value == pytest.approx(1.0 - 2.0 * np.log(2.0), abs=1e-14)
    assert sol.prefactor == pytest.approx(4.0 / np.e, abs=1e-14)


def test_halfspace_s_scaling_and_w_independence():
    sol = sb.ou_halfspace_solution(SKEW, DOM2, X2, Y2, 0.5)
    assert sol.u_value == pytest.approx(4.0, abs=1e-14)
    assert sol.w_value == pytest.approx(1.0 - 2.0 * np.log(2.0), abs=1e-14)


def test_halfspace_exit_point_s_independent():
    s0 = sb.ou_halfspace_solution(SKEW, DOM2, X2, Y2, 0.0)
    s3 = sb.ou_halfspace_solution(SKEW, DOM2, X2, Y2, 0.3)
    assert np.array_equal(s0.eta, s3.eta)
    assert s3.tau < 1.0
    assert DOM2.boundary_distance(s0.eta) == pytest.approx(0.0, abs=1e-14)


def test_halfspace_boundary_start_degenerates():
    sol = sb.ou_halfspace_solution(SKEW, DOM2, np.array([1.0, 0.0]), Y2, 0.0)
    assert sol.u_value == 0.0
    assert sol.tau == 0.0
    assert not sol.boundary_ok


def test_halfspace_outside_rejected():
    with pytest.raises(sb.ConfigError):
        sb.ou_halfspace_solution(SKEW, DOM2, np.array([1.5, 0.0]), Y2, 0.0)


def test_symmetric_family_invariance():
    rng = np.random.default_rng(5)
    dom = DOM2
    base = sb.ou_halfspace_solution(np.zeros((2, 2)), dom, X2, Y2, 0.2)
    for _ in range(5):
        r = rng.normal(size=(2, 2))
        m_sym = 0.5 * (r + r.T)
        sol = sb.ou_halfspace_solution(m_sym, dom, X2, Y2, 0.2)
        assert abs(sol.u_value - base.u_value) <= 1e-10
        assert abs(sol.prefactor - base.prefactor) <= 1e-10


def test_antisymmetry_flip_negates_w():
    rng = np.random.default_rng(6)
    for _ in range(5):
        M = rng.normal(size=(2, 2))
        w_fwd = sb.ou_halfspace_solution(M, DOM2, X2, Y2, 0.0).w_value
        w_rev = sb.ou_halfspace_solution(M.T, DOM2, X2, Y2, 0.0).w_value
        assert abs(w_fwd + w_rev) <= 1e-10


def test_solution_path_parametrization():
    sol = sb.ou_halfspace_solution(SKEW, DOM2, X2, Y2, 0.0)
    assert np.array_equal(sol.point(0.0), X2)
    assert np.allclose(sol.point(sol.tau), sol.eta, atol=1e-15)
    mid = sol.point(0.5 * sol.tau)
    assert np.allclose(mid, 0.5 * (X2 + sol.eta), atol=1e-15)
    assert sol.q_hat(0.5) == pytest.approx(sol.prefactor * np.exp(-4.0),
                                           rel=1e-12)
