"""Riemannian machinery for the metric a^{-1}.

The inverse diffusion matrix G = a^{-1} turns R^d into a Riemannian
manifold. This module provides curve length, geodesic boundary value
solves by discrete energy minimization, the exponential map by direct
integration of the geodesic equation, the exponential-map Jacobian
factor H = det(d exp)^{-1/2}, and the drift work integral along a
geodesic.

Energy, not length, is the minimized functional: its minimizers are
the constant-speed geodesics and the discrete problem is better
conditioned. The reported length uses the same midpoint quadrature as
the energy, so energy >= length^2 / 2 holds exactly for every discrete
path, with near equality at a converged minimizer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import minimize

from .errors import ConjugatePointError, EvaluationError, NumericsError
from .model import DiffusionModel, diffusion_matrix, diffusion_matrix_jacobian

DEFAULT_SEGMENTS = 200
MAX_ITER = 5000
GRAD_TOL = 1e-8
CONJUGATE_DET_FLOOR = 1e-8
FD_REL_STEP_GEO = 1e-5


def metric(model: DiffusionModel, z: np.ndarray) -> np.ndarray:
    """Metric tensor G(z) = a(z)^{-1}."""
    a = diffusion_matrix(model, z)
    try:
        g = np.linalg.inv(a)
    except np.linalg.LinAlgError as exc:
        raise EvaluationError(f"singular diffusion matrix at z={z}") from exc
    if not np.all(np.isfinite(g)):
        raise EvaluationError(f"metric not finite at z={z}")
    return g


def _sigma_batch(model: DiffusionModel, pts: np.ndarray) -> np.ndarray:
    if model.dispersion_batch is not None:
        sig = np.asarray(model.dispersion_batch(pts), dtype=float)
        if sig.shape != (pts.shape[0], model.dim, model.dim):
            raise EvaluationError(
                f"dispersion_batch returned shape {sig.shape}")
    else:
        sig = np.stack([np.asarray(model.dispersion(p), dtype=float)
                        for p in pts])
    if not np.all(np.isfinite(sig)):
        raise EvaluationError("dispersion non-finite along path")
    return sig


def _metric_batch(model: DiffusionModel, pts: np.ndarray) -> np.ndarray:
    sig = _sigma_batch(model, pts)
    a = np.matmul(sig, sig.transpose(0, 2, 1))
    try:
        g = np.linalg.inv(a)
    except np.linalg.LinAlgError as exc:
        raise EvaluationError("singular diffusion matrix along path") from exc
    if not np.all(np.isfinite(g)):
        raise EvaluationError("metric not finite along path")
    return g


def metric_jacobian(model: DiffusionModel, z: np.ndarray) -> np.ndarray:
    """Derivative tensor dG[l] = d(a^{-1})/dz_l via dG = -G (da) G."""
    g = metric(model, z)
    da = diffusion_matrix_jacobian(model, z)
    return -np.einsum("ij,ljk,km->lim", g, da, g)


def _metric_and_jacobian_batch(model: DiffusionModel, pts: np.ndarray):
    """Batched (G, dG) along a set of points.

    Coefficient callables are evaluated per point (they are black
    boxes) but all linear algebra is vectorized. dG uses the analytic
    dispersion Jacobian when the model carries one, otherwise central
    differences of the diffusion matrix.
    """
    n, d = pts.shape
    sig = _sigma_batch(model, pts)
    a = np.matmul(sig, sig.transpose(0, 2, 1))
    if model.dispersion_jacobian is not None:
        dsig = np.stack([np.asarray(model.dispersion_jacobian(p), dtype=float)
                         for p in pts])
        t = np.einsum("nlij,nkj->nlik", dsig, sig)
        da = t + t.transpose(0, 1, 3, 2)
    else:
        h = FD_REL_STEP_GEO * (1.0 + np.linalg.norm(pts, axis=1))
        da = np.empty((n, d, d, d))
        for l in range(d):
            shift = np.zeros((n, d))
            shift[:, l] = h
            sp = _sigma_batch(model, pts + shift)
            sm = _sigma_batch(model, pts - shift)
            ap = np.matmul(sp, sp.transpose(0, 2, 1))
            am = np.matmul(sm, sm.transpose(0, 2, 1))
            da[:, l] = (ap - am) / (2.0 * h)[:, None, None]
    try:
        g = np.linalg.inv(a)
    except np.linalg.LinAlgError as exc:
        raise EvaluationError("singular diffusion matrix along path") from exc
    if not np.all(np.isfinite(g)):
        raise EvaluationError("metric not finite along path")
    dg = -np.einsum("nij,nljk,nkm->nlim", g, da, g)
    return g, dg


def path_length(model: DiffusionModel, nodes: np.ndarray) -> float:
    """Riemannian length of a polyline by the trapezoidal rule.

    Each segment contributes the average of the speeds measured with
    the metric at its two endpoints.
    """
    nodes = np.asarray(nodes, dtype=float)
    if nodes.ndim != 2 or nodes.shape[0] < 2:
        raise ValueError("path_length needs at least two nodes")
    g = _metric_batch(model, nodes)
    delta = np.diff(nodes, axis=0)
    q_left = np.einsum("ni,nij,nj->n", delta, g[:-1], delta)
    q_right = np.einsum("ni,nij,nj->n", delta, g[1:], delta)
    return float(0.5 * (np.sqrt(q_left) + np.sqrt(q_right)).sum())


@dataclass(frozen=True, eq=False)
class GeodesicResult:
    """Discretized minimizing path between two points.

    nodes has shape (N+1, d) on the uniform grid of [0, 1] with the
    endpoints pinned exactly. initial_velocity is the constant-speed
    velocity of the unit-time geodesic at the first node.
    """

    nodes: np.ndarray
    length: float
    energy: float
    initial_velocity: np.ndarray
    converged: bool
    gradient_norm: float

    @property
    def distance(self) -> float:
        return self.length


def _energy_and_grad(model: DiffusionModel, nodes: np.ndarray,
                     inv_dt: float) -> tuple[float, np.ndarray, np.ndarray]:
    """Discrete energy, its gradient in all nodes, and segment quadratics.

    E = (inv_dt / 2) * sum_i Q_i with Q_i = <G(mid_i) D_i, D_i>, where
    D_i is the segment increment and the metric is taken at midpoints.
    """
    delta = np.diff(nodes, axis=0)
    mids = 0.5 * (nodes[:-1] + nodes[1:])
    g, dg = _metric_and_jacobian_batch(model, mids)
    q = np.einsum("ni,nij,nj->n", delta, g, delta)
    gd = np.einsum("nij,nj->ni", g, delta)
    c = np.einsum("nljk,nj,nk->nl", dg, delta, delta)
    grad = np.zeros_like(nodes)
    grad[1:] += inv_dt * gd + 0.25 * inv_dt * c
    grad[:-1] += -inv_dt * gd + 0.25 * inv_dt * c
    energy = 0.5 * inv_dt * float(q.sum())
    return energy, grad, q


def _descend(objective, w0: np.ndarray, grad_tol: float,
             max_iter: int) -> np.ndarray:
    """Quasi-Newton descent to a tight gradient norm.

    L-BFGS does the bulk of the work but its line search stops making
    measurable f-progress near double precision; a Newton-CG stage
    (Hessian products by differencing the analytic gradient) pushes the
    gradient the last order of magnitude when needed.
    """
    res = minimize(objective, w0, jac=True, method="L-BFGS-B",
                   options={"maxiter": max_iter, "maxfun": 4 * max_iter,
                            "ftol": 1e-18, "gtol": grad_tol})
    w = res.x
    if float(np.abs(res.jac).max()) <= grad_tol:
        return w

    def hessp(wv, v):
        eps = 1e-6 * (1.0 + float(np.linalg.norm(wv))) / max(
            float(np.linalg.norm(v)), 1e-30)
        _, gp = objective(wv + eps * v)
        _, gm = objective(wv - eps * v)
        return (gp - gm) / (2.0 * eps)

    res2 = minimize(objective, w, jac=True, hessp=hessp, method="Newton-CG",
                    options={"maxiter": 50, "xtol": 1e-14})
    _, g2 = objective(res2.x)
    _, g1 = objective(w)
    return res2.x if np.abs(g2).max() < np.abs(g1).max() else w


def geodesic_bvp(model: DiffusionModel, x: np.ndarray, y: np.ndarray,
                 n_segments: int = DEFAULT_SEGMENTS, *,
                 initial_nodes: np.ndarray | None = None,
                 polish: bool = True,
                 grad_tol: float = GRAD_TOL,
                 max_iter: int = MAX_ITER) -> GeodesicResult:
    """Minimizing geodesic from x to y by discrete energy descent.

    Starts from the straight segment (or a supplied warm start),
    minimizes the discrete energy over the interior nodes with a
    quasi-Newton descent, then optionally polishes the initial velocity
    by Newton shooting through the exponential map.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    d = model.dim
    if np.array_equal(x, y):
        nodes = np.tile(x, (n_segments + 1, 1))
        return GeodesicResult(nodes=nodes, length=0.0, energy=0.0,
                              initial_velocity=np.zeros(d),
                              converged=True, gradient_norm=0.0)

    if initial_nodes is not None:
        nodes0 = np.array(initial_nodes, dtype=float)
        if nodes0.shape != (n_segments + 1, d):
            raise ValueError("initial_nodes has the wrong shape")
        # spread endpoint mismatches affinely along the path instead of
        # kinking the first and last segments
        ts = np.linspace(0.0, 1.0, n_segments + 1)[:, None]
        nodes0 = nodes0 + (1.0 - ts) * (x - nodes0[0]) + ts * (y - nodes0[-1])
        nodes0[0] = x
        nodes0[-1] = y
    else:
        ts = np.linspace(0.0, 1.0, n_segments + 1)[:, None]
        nodes0 = (1.0 - ts) * x + ts * y

    inv_dt = float(n_segments)

    def objective(w: np.ndarray):
        nodes = np.empty((n_segments + 1, d))
        nodes[0] = x
        nodes[-1] = y
        nodes[1:-1] = w.reshape(n_segments - 1, d)
        e, grad, _ = _energy_and_grad(model, nodes, inv_dt)
        return e, grad[1:-1].ravel()

    w = _descend(objective, nodes0[1:-1].ravel(), grad_tol, max_iter)
    nodes = np.empty((n_segments + 1, d))
    nodes[0] = x
    nodes[-1] = y
    nodes[1:-1] = w.reshape(n_segments - 1, d)

    energy, grad, q = _energy_and_grad(model, nodes, inv_dt)
    gnorm = float(np.abs(grad[1:-1]).max()) if n_segments > 1 else 0.0
    converged = gnorm <= grad_tol
    length = float(np.sqrt(np.maximum(q, 0.0)).sum())

    v0 = inv_dt * (nodes[1] - nodes[0])
    g_x = metric(model, x)
    speed = float(np.sqrt(v0 @ (g_x @ v0)))
    xi = v0 * (length / speed) if speed > 0 else v0

    if polish and length > 0:
        xi = _polish_velocity(model, x, y, xi)

    return GeodesicResult(nodes=nodes, length=length, energy=energy,
                          initial_velocity=xi, converged=converged,
                          gradient_norm=gnorm)


def _polish_velocity(model: DiffusionModel, x: np.ndarray, y: np.ndarray,
                     xi: np.ndarray, max_newton: int = 8,
                     tol: float = 1e-11) -> np.ndarray:
    """Newton correction of the shooting velocity so exp_x(xi) hits y."""
    target_tol = tol * (1.0 + float(np.linalg.norm(y)))
    best_xi, best_err = xi, np.inf
    for _ in range(max_newton):
        try:
            end = exp_map(model, x, xi)
        except (NumericsError, EvaluationError):
            break
        err = float(np.linalg.norm(end - y))
        stalled = err > 0.5 * best_err  # finite-difference Jacobian floor
        if err < best_err:
            best_xi, best_err = xi.copy(), err
        if err <= target_tol or stalled:
            break
        try:
            jac = _exp_jacobian(model, x, xi)
            step = np.linalg.solve(jac, y - end)
        except (np.linalg.LinAlgError, NumericsError, EvaluationError):
            break
        if not np.all(np.isfinite(step)):
            break
        xi = xi + step
    return best_xi


def _geodesic_rhs(model: DiffusionModel):
    d = model.dim

    def rhs(_t, state):
        z = state[:d]
        v = state[d:]
        dg = metric_jacobian(model, z)
        w = np.einsum("jlk,j,k->l", dg, v, v)
        p = np.einsum("ljk,j,k->l", dg, v, v)
        a = diffusion_matrix(model, z)
        acc = -a @ (w - 0.5 * p)
        return np.concatenate([v, acc])

    return rhs


def exp_map(model: DiffusionModel, x: np.ndarray, xi: np.ndarray, *,
            return_path: bool = False, rtol: float = 1e-10,
            atol: float = 1e-10):
    """Exponential map of the metric a^{-1}: follow the geodesic with
    initial velocity xi for unit time.

    Returns the endpoint, or (endpoint, times, states) when
    return_path is set.
    """
    x = np.asarray(x, dtype=float)
    xi = np.asarray(xi, dtype=float)
    state0 = np.concatenate([x, xi])
    sol = solve_ivp(_geodesic_rhs(model), (0.0, 1.0), state0,
                    method="DOP853", rtol=rtol, atol=atol,
                    dense_output=return_path)
    if not sol.success:
        raise NumericsError(f"geodesic integration failed: {sol.message}")
    end = sol.y[:model.dim, -1]
    if return_path:
        ts = np.linspace(0.0, 1.0, 101)
        states = sol.sol(ts)[:model.dim].T
        return end, ts, states
    return end


def _exp_jacobian(model: DiffusionModel, x: np.ndarray, xi: np.ndarray,
                  rel_step: float = 1e-5) -> np.ndarray:
    """d exp_x(xi) / d xi by central differences, columns j = d/dxi_j."""
    d = model.dim
    h = rel_step * (1.0 + float(np.linalg.norm(xi)))
    cols = []
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        cols.append((exp_map(model, x, xi + e) - exp_map(model, x, xi - e))
                    / (2.0 * h))
    return np.stack(cols, axis=-1)


def van_vleck_H(model: DiffusionModel, x: np.ndarray, y: np.ndarray, *,
                geodesic: GeodesicResult | None = None,
                n_segments: int = DEFAULT_SEGMENTS,
                fd_rel_step: float = 1e-5) -> float:
    """Jacobian factor H(x, y) = det(d exp_x / d xi)^{-1/2} at the
    minimizing velocity.

    Requires a unique non-conjugate minimizing geodesic; a near-zero
    Jacobian determinant is reported as a conjugate-point error.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if geodesic is None:
        geodesic = geodesic_bvp(model, x, y, n_segments)
    jac = _exp_jacobian(model, x, geodesic.initial_velocity, fd_rel_step)
    det = float(np.linalg.det(jac))
    if det <= CONJUGATE_DET_FLOOR:
        raise ConjugatePointError(
            f"exponential-map Jacobian determinant {det:.6e} at x={x}, "
            f"y={y}; points are conjugate or nearly so")
    return det ** -0.5


def work_integral_A(model: DiffusionModel, geodesic: GeodesicResult) -> float:
    """Line integral of a^{-1} b along the geodesic (trapezoidal rule)."""
    if not geodesic.converged:
        raise NumericsError("work integral requires a converged geodesic")
    nodes = geodesic.nodes
    g = _metric_batch(model, nodes)
    b = np.stack([np.asarray(model.drift(p), dtype=float) for p in nodes])
    w = np.einsum("nij,nj->ni", g, b)
    delta = np.diff(nodes, axis=0)
    return float(0.5 * np.einsum("ni,ni->", w[:-1] + w[1:], delta))
