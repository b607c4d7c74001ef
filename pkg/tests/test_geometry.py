import numpy as np
import pytest

import sharpbridge as sb
from sharpbridge.geometry import metric

from conftest import variable_metric_2d

EXP_SIGMA = sb.scalar_sigma("exp(z)")
D1_DIST = 1.0 - np.exp(-1.0)  # int_0^1 dz / e^z


def test_path_length_euclidean_segment():
    m = sb.brownian(2)
    for n in (2, 7, 50):
        nodes = np.linspace([0.0, 0.0], [3.0, 4.0], n)
        assert sb.path_length(m, nodes) == pytest.approx(5.0, abs=1e-12)


def test_path_length_variable_sigma_quadrature():
    nodes = np.linspace([0.0], [1.0], 1001)
    assert sb.path_length(EXP_SIGMA, nodes) == pytest.approx(D1_DIST, abs=1e-5)


def test_path_length_scaled_metric():
    m = sb.DiffusionModel(dim=2, drift=lambda z: np.zeros(2),
                          dispersion=lambda z: 2.0 * np.eye(2))
    nodes = np.linspace([0.0, 0.0], [1.0, 0.0], 11)
    assert sb.path_length(m, nodes) == pytest.approx(0.5, abs=1e-14)


def test_path_length_singular_metric_errors():
    m = sb.DiffusionModel(dim=1, drift=lambda z: np.zeros(1),
                          dispersion=lambda z: np.array([[0.0]]))
    with pytest.raises(sb.EvaluationError):
        sb.path_length(m, np.linspace([0.0], [1.0], 5))


def test_geodesic_constant_metric_is_straight():
    geo = sb.geodesic_bvp(sb.brownian(2), np.array([0.0, 0.0]),
                          np.array([1.0, 1.0]))
    assert geo.converged
    assert geo.length == pytest.approx(np.sqrt(2.0), abs=1e-12)
    assert np.allclose(geo.initial_velocity, [1.0, 1.0], atol=1e-9)
    straight = np.linspace([0.0, 0.0], [1.0, 1.0], geo.nodes.shape[0])
    assert np.abs(geo.nodes - straight).max() <= 1e-10


def test_geodesic_variable_sigma_distance():
    geo = sb.geodesic_bvp(EXP_SIGMA, np.array([0.0]), np.array([1.0]))
    assert geo.converged
    assert geo.length == pytest.approx(D1_DIST, abs=1e-4)
    # energy >= length^2/2 with near equality at the minimizer
    slack = geo.energy - 0.5 * geo.length ** 2
    assert 0.0 <= slack <= 1e-6


def test_geodesic_coincident_endpoints():
    geo = sb.geodesic_bvp(sb.brownian(2), np.array([0.3, 0.3]),
                          np.array([0.3, 0.3]))
    assert geo.length == 0.0
    assert geo.energy == 0.0
    assert np.array_equal(geo.initial_velocity, np.zeros(2))


def test_geodesic_endpoints_pinned_exactly():
    x = np.array([0.1, -0.2])
    y = np.array([0.8, 0.9])
    geo = sb.geodesic_bvp(variable_metric_2d(), x, y, 80)
    assert np.array_equal(geo.nodes[0], x)
    assert np.array_equal(geo.nodes[-1], y)


def test_exp_map_straight_lines_for_constant_metric():
    end = sb.exp_map(sb.brownian(2), np.array([0.0, 0.0]), np.array([1.0, 2.0]))
    assert np.allclose(end, [1.0, 2.0], atol=1e-12)

    m4 = sb.DiffusionModel(dim=2, drift=lambda z: np.zeros(2),
                           dispersion=lambda z: 2.0 * np.eye(2))
    end = sb.exp_map(m4, np.array([0.0, 0.0]), np.array([2.0, 0.0]))
    assert np.allclose(end, [2.0, 0.0], atol=1e-12)


def test_exp_map_bvp_round_trip_1d():
    geo = sb.geodesic_bvp(EXP_SIGMA, np.array([0.0]), np.array([1.0]))
    end = sb.exp_map(EXP_SIGMA, np.array([0.0]), geo.initial_velocity)
    assert abs(end[0] - 1.0) <= 1e-6


@pytest.mark.parametrize("model,x,y", [
    (sb.brownian(2), np.array([0.0, 0.0]), np.array([0.7, -0.4])),
    (EXP_SIGMA, np.array([0.0]), np.array([1.0])),
    (EXP_SIGMA, np.array([0.5]), np.array([-0.5])),
    (variable_metric_2d(), np.array([0.0, 0.0]), np.array([0.8, 0.6])),
    (variable_metric_2d(0.5), np.array([-0.3, 0.2]), np.array([0.6, 0.9])),
])
def test_round_trip_battery(model, x, y):
    geo = sb.geodesic_bvp(model, x, y)
    end = sb.exp_map(model, x, geo.initial_velocity)
    assert float(np.abs(end - y).max()) <= 1e-5


def test_van_vleck_identity_and_scaled_metric():
    assert sb.van_vleck_H(sb.brownian(2), np.array([0.2, 0.1]),
                          np.array([0.9, -0.5])) == pytest.approx(1.0, abs=1e-8)
    mc = sb.DiffusionModel(dim=2, drift=lambda z: np.zeros(2),
                           dispersion=lambda z: 3.0 * np.eye(2))
    assert sb.van_vleck_H(mc, np.array([0.0, 0.0]),
                          np.array([1.0, 1.0])) == pytest.approx(1.0, abs=1e-8)


def test_van_vleck_variable_sigma_richardson_pair():
    x = np.array([0.0])
    y = np.array([1.0])
    h1 = sb.van_vleck_H(EXP_SIGMA, x, y, fd_rel_step=1e-5)
    h2 = sb.van_vleck_H(EXP_SIGMA, x, y, fd_rel_step=2e-5)
    assert abs(h1 - h2) <= 1e-4
    # solvable case: exp_0(xi) = -log(1 - xi), so H = exp(-y/2)
    assert h1 == pytest.approx(np.exp(-0.5), abs=1e-5)


def test_van_vleck_zero_velocity_regular():
    class Fake:
        initial_velocity = np.zeros(2)
        nodes = np.zeros((3, 2))
        converged = True

    m = sb.brownian(2)
    h = sb.van_vleck_H(m, np.array([0.0, 0.0]), np.array([0.0, 0.0]),
                       geodesic=Fake())
    assert h == pytest.approx(1.0, abs=1e-8)


def test_van_vleck_near_conjugate_reports_determinant(monkeypatch):
    # collapse the exponential-map Jacobian to drive the conjugate-point
    # guard; the error message must carry the determinant value
    from sharpbridge import geometry as geo_mod

    monkeypatch.setattr(geo_mod, "_exp_jacobian",
                        lambda model, x, xi, rel_step=1e-5: np.diag([1e-12, 1.0]))
    m = sb.brownian(2)
    with pytest.raises(sb.ConjugatePointError, match="determinant"):
        geo_mod.van_vleck_H(m, np.array([0.0, 0.0]), np.array([0.5, 0.5]))


def test_work_integral_zero_drift():
    geo = sb.geodesic_bvp(sb.brownian(2), np.array([0.0, 0.0]),
                          np.array([1.0, 1.0]))
    assert sb.work_integral_A(sb.brownian(2), geo) == 0.0


def test_work_integral_gradient_case():
    m = sb.DiffusionModel(dim=2, drift=lambda z: z,
                          dispersion=lambda z: np.eye(2),
                          potential=lambda z: 0.5 * float(z @ z))
    geo = sb.geodesic_bvp(m, np.array([0.0, 0.0]), np.array([1.0, 1.0]))
    assert sb.work_integral_A(m, geo) == pytest.approx(1.0, abs=1e-8)


def test_work_integral_constant_drift():
    beta = np.array([0.7, -0.3])
    m = sb.DiffusionModel(dim=2, drift=lambda z: beta,
                          dispersion=lambda z: np.eye(2))
    x = np.array([0.2, 0.1])
    y = np.array([1.0, 0.9])
    geo = sb.geodesic_bvp(m, x, y)
    assert sb.work_integral_A(m, geo) == pytest.approx(float(beta @ (y - x)),
                                                       abs=1e-10)


def test_work_integral_requires_convergence():
    geo = sb.geodesic_bvp(sb.brownian(2), np.array([0.0, 0.0]),
                          np.array([1.0, 1.0]))
    bad = sb.GeodesicResult(nodes=geo.nodes, length=geo.length,
                            energy=geo.energy,
                            initial_velocity=geo.initial_velocity,
                            converged=False, gradient_norm=1.0)
    with pytest.raises(sb.NumericsError):
        sb.work_integral_A(sb.brownian(2), bad)


def test_work_integral_gradient_identity_discretization_independent():
    m = sb.DiffusionModel(dim=2, drift=lambda z: z,
                          dispersion=lambda z: np.eye(2),
                          potential=lambda z: 0.5 * float(z @ z))
    x = np.array([-0.4, 0.2])
    y = np.array([0.9, 1.1])
    target = 0.5 * float(y @ y) - 0.5 * float(x @ x)
    for n in (100, 400):
        geo = sb.geodesic_bvp(m, x, y, n)
        assert sb.work_integral_A(m, geo) == pytest.approx(target, abs=1e-6)


def test_distance_symmetry():
    cases = [
        (EXP_SIGMA, np.array([0.0]), np.array([1.0])),
        (variable_metric_2d(), np.array([0.0, 0.0]), np.array([0.8, 0.6])),
    ]
    for model, x, y in cases:
        d_xy = sb.geodesic_bvp(model, x, y, polish=False).length
        d_yx = sb.geodesic_bvp(model, y, x, polish=False).length
        assert abs(d_xy - d_yx) <= 1e-6


def test_gauss_lemma_gradient_of_squared_distance():
    model = variable_metric_2d()
    y = np.array([0.8, 0.6])
    h = 1e-4
    for z in (np.array([0.0, 0.0]), np.array([0.2, -0.1])):
        base = sb.geodesic_bvp(model, z, y)
        grad_fd = np.empty(2)
        for j in range(2):
            e = np.zeros(2)
            e[j] = h
            dp = sb.geodesic_bvp(model, z + e, y, initial_nodes=base.nodes,
                                 polish=False).length
            dm = sb.geodesic_bvp(model, z - e, y, initial_nodes=base.nodes,
                                 polish=False).length
            grad_fd[j] = (dp ** 2 - dm ** 2) / (4.0 * h)
        expected = -metric(model, z) @ base.initial_velocity
        assert float(np.abs(grad_fd - expected).max()) <= 2e-4
