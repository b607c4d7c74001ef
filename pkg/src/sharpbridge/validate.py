"""Self-contained oracle battery behind the CLI validate command.

Each check compares an implementation path against an independent
closed form or a second numerical route, on fixed desk-scale cases.
Rows use the convention error <= tolerance, so order-of-convergence
checks are encoded as the violation distance against tolerance zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import hj, mc, ou
from .expansion import ou_expansion
from .geometry import exp_map, geodesic_bvp, van_vleck_H, work_integral_A
from .hj import ClosedHalfSpaceU
from .model import BridgeProblem, DiffusionModel, HalfSpaceDomain, brownian, ornstein_uhlenbeck, scalar_sigma


@dataclass(frozen=True)
class ValidationRow:
    check: str
    passed: bool
    error: float
    tolerance: float


def _row(check: str, error: float, tolerance: float) -> ValidationRow:
    return ValidationRow(check=check, passed=bool(error <= tolerance),
                         error=float(error), tolerance=float(tolerance))


SKEW = np.array([[0.0, 1.0], [-1.0, 0.0]])
DOM2 = HalfSpaceDomain(normal=np.array([1.0, 0.0]), level=1.0)
DOM1 = HalfSpaceDomain(normal=np.array([1.0]), level=1.0)


def run_battery(mc_paths: int = 200_000, seed: int = 2024) -> list[ValidationRow]:
    rows: list[ValidationRow] = []
    x2 = np.array([0.0, 0.0])
    y2 = np.array([0.0, 1.0])

    # closed-form value function against the direct product formula
    err = 0.0
    for xv in (0.0, 0.25, 0.5):
        for yv in (0.0, 0.3):
            u_ref = 2.0 * (1.0 - xv) * (1.0 - yv)
            u_val = hj.u_halfspace_closed(DOM1, np.eye(1), np.array([yv]),
                                          np.array([xv]), 0.0)
            err = max(err, abs(u_val - u_ref))
    rows.append(_row("u_closed_vs_product_formula", err, 1e-12))

    # characteristic ODE against the explicit exit time and point
    sol = ou.ou_halfspace_solution(SKEW, DOM2, x2, y2, 0.0)
    model = ornstein_uhlenbeck(SKEW)
    expn = ou_expansion(SKEW, y2)
    ufield = ClosedHalfSpaceU(DOM2, y2)
    char = hj.characteristic_solve(model, DOM2, expn, ufield.grad, x2, 0.0)
    rows.append(_row("characteristic_exit_time", abs(char.t_star - sol.tau), 1e-6))
    rows.append(_row("characteristic_exit_point",
                     float(np.abs(char.exit_point - sol.eta).max()), 1e-6))

    # prefactor exponent: quadrature along the characteristic vs closed form
    w_quad = hj.w_integral(model, expn, ufield, char)
    rows.append(_row("w_quadrature_vs_closed_form",
                     abs(w_quad - sol.w_value), 1e-6))

    # symmetric drift matrix leaves w at zero
    m_sym = np.array([[0.6, -0.2], [-0.2, 1.1]])
    sol_sym = ou.ou_halfspace_solution(m_sym, DOM2, x2, y2, 0.0)
    char_sym = hj.characteristic_solve(ornstein_uhlenbeck(m_sym), DOM2,
                                       ou_expansion(m_sym, y2), ufield.grad,
                                       x2, 0.0)
    w_sym = hj.w_integral(ornstein_uhlenbeck(m_sym), ou_expansion(m_sym, y2),
                          ufield, char_sym)
    rows.append(_row("w_symmetric_drift", max(abs(w_sym), abs(sol_sym.w_value)), 1e-8))

    # PDE residuals of the closed forms
    class _WField:
        def value(self, z, s):
            return ou.ou_halfspace_solution(SKEW, DOM2, np.asarray(z), y2, 0.0).w_value

    probes = [(np.array([a, b]), s)
              for a in (0.0, 0.3, 0.6) for b in (-0.3, 0.2, 0.7)
              for s in (0.1, 0.3)]
    res = hj.pde_residuals(model, ufield, _WField(), expn, probes)
    rows.append(_row("hj_residual_closed_u", res["hj_residual"], 1e-6))
    rows.append(_row("transport_residual_closed_w", res["transport_residual"], 1e-4))

    # geometry oracles
    bm2 = brownian(2)
    geo = geodesic_bvp(bm2, np.array([0.0, 0.0]), np.array([1.0, 1.0]))
    rows.append(_row("distance_constant_metric",
                     abs(geo.length - np.sqrt(2.0)), 1e-12))

    ms = scalar_sigma("exp(z)")
    geo1 = geodesic_bvp(ms, np.array([0.0]), np.array([1.0]))
    rows.append(_row("distance_1d_vs_quadrature",
                     abs(geo1.length - (1.0 - np.exp(-1.0))), 1e-4))
    end = exp_map(ms, np.array([0.0]), geo1.initial_velocity)
    rows.append(_row("bvp_ivp_round_trip", float(np.abs(end - 1.0).max()), 1e-5))

    rows.append(_row("van_vleck_identity_metric",
                     abs(van_vleck_H(bm2, np.array([0.0, 0.0]),
                                     np.array([0.4, 0.7])) - 1.0), 1e-8))

    grad_model = DiffusionModel(
        dim=2, drift=lambda z: z, dispersion=lambda z: np.eye(2),
        potential=lambda z: 0.5 * float(z @ z))
    geo_g = geodesic_bvp(grad_model, np.array([0.0, 0.0]), np.array([1.0, 1.0]))
    rows.append(_row("work_integral_gradient_case",
                     abs(work_integral_A(grad_model, geo_g) - 1.0), 1e-6))

    # Brownian bridge exactness of the corrected Monte Carlo estimator
    pb = BridgeProblem(model=brownian(1), domain=DOM1, x=np.array([0.0]),
                       y=np.array([0.0]), s=0.0, t=0.5)
    est = mc.exit_probability(pb, mc.McConfig(paths=mc_paths, seed=seed))
    exact = float(np.exp(-4.0))
    rows.append(_row("mc_brownian_exactness", abs(est.p_hat - exact),
                     3.0 * est.half_width))

    # small-time development order of the Gram matrix
    m_mix = np.array([[0.3, 0.8], [-0.5, -0.2]])
    ts = np.array([1e-2, 1e-3, 1e-4])
    resid = [np.abs(ou.gram_matrix(m_mix, t) - ou.gram_small_t(m_mix, t)).max()
             for t in ts]
    slope = float(np.polyfit(np.log(ts), np.log(resid), 1)[0])
    rows.append(_row("gram_small_t_order", max(0.0, 2.7 - slope), 0.0))

    return rows
