"""Closed forms for the linear model b(z) = M z with identity dispersion.

The transition law is Gaussian with mean e^{Mt} x and covariance
S_t = int_0^t e^{Mu} e^{M^T u} du, which makes every quantity of the
half-space exit problem available in closed form. This module is the
primary numerical oracle for the rest of the package:

* S_t by the augmented block matrix exponential (no quadrature error),
* the exact Gaussian score used as the conditioned bridge drift,
* the full half-space solution: value u, exit time tau, exit point
  eta, prefactor exponent w and prefactor c = e^{-w}.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .errors import ConfigError, EvaluationError
from .model import HalfSpaceDomain


def gram_matrix(M: np.ndarray, t: float) -> np.ndarray:
    """Covariance S_t = int_0^t e^{Mu} e^{M^T u} du.

    Computed from the identity expm([[M, I], [0, -M^T]] t) =
    [[e^{Mt}, V], [0, e^{-M^T t}]] with S_t = V e^{M^T t}, exact up to
    matrix-exponential accuracy.
    """
    M = np.asarray(M, dtype=float)
    if t < 0:
        raise ValueError(f"time must be nonnegative, got {t}")
    d = M.shape[0]
    block = np.zeros((2 * d, 2 * d))
    block[:d, :d] = M
    block[:d, d:] = np.eye(d)
    block[d:, d:] = -M.T
    e = expm(block * t)
    s = e[:d, d:] @ expm(M.T * t)
    return 0.5 * (s + s.T)


def gram_small_t(M: np.ndarray, t: float) -> np.ndarray:
    """Second-order development S_t = t I + (M + M^T) t^2 / 2."""
    M = np.asarray(M, dtype=float)
    return t * np.eye(M.shape[0]) + 0.5 * t * t * (M + M.T)


def ou_log_density_grad(M: np.ndarray, t: float, z: np.ndarray,
                        y: np.ndarray) -> np.ndarray:
    """Gradient in z of log p(t, z, y) for the linear model.

    p(t, z, .) is the N(e^{Mt} z, S_t) density, so the score is
    e^{M^T t} S_t^{-1} (y - e^{Mt} z). Used as the exact conditioned
    drift in simulation.
    """
    if t <= 0:
        raise EvaluationError(f"transition time must be positive, got {t}")
    M = np.asarray(M, dtype=float)
    z = np.asarray(z, dtype=float)
    y = np.asarray(y, dtype=float)
    emt = expm(M * t)
    s = gram_matrix(M, t)
    return emt.T @ np.linalg.solve(s, y - emt @ z)


@dataclass(frozen=True, eq=False)
class OuSolution:
    """Exact half-space exit solution for the linear model.

    The optimal exit trajectory is the line segment from x to eta,
    parametrized over [s, tau]; eta does not depend on s.
    """

    u_value: float
    tau: float
    eta: np.ndarray
    w_value: float
    prefactor: float
    x: np.ndarray
    y: np.ndarray
    s: float
    boundary_ok: bool

    def point(self, t: float) -> np.ndarray:
        """Position on the optimal exit segment at time t in [s, tau]."""
        if self.tau == self.s:
            return self.x.copy()
        lam = (t - self.s) / (self.tau - self.s)
        return self.x + lam * (self.eta - self.x)

    def q_hat(self, t: float) -> float:
        """Sharp estimate c * exp(-u / t) of the exit probability."""
        return self.prefactor * float(np.exp(-self.u_value / t))


def ou_halfspace_solution(M: np.ndarray, domain: HalfSpaceDomain,
                          x: np.ndarray, y: np.ndarray,
                          s: float = 0.0) -> OuSolution:
    """All closed forms of the half-space exit problem for b(z) = M z.

    u equals the Brownian-bridge value 2 (k - <x,v>)(k - <y,v>)/(1-s);
    the exit time and point follow from the straight characteristic,
    and w is the explicit integral of <(M - M^T) gamma, v>/(1-t) scaled
    by the boundary distance of y (w does not depend on s).
    """
    M = np.asarray(M, dtype=float)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    v = domain.normal
    k = domain.level
    if not 0.0 <= s < 1.0:
        raise ConfigError(f"start time s must lie in [0, 1), got {s}")
    dx = k - float(x @ v)
    dy = k - float(y @ v)
    if dx < 0 or dy < 0:
        raise ConfigError("x and y must lie in the closed half space")
    boundary_ok = dx > 0 and dy > 0

    denom = 2.0 * k - float((x + y) @ v)
    u_value = 2.0 * dx * dy / (1.0 - s)
    if denom <= 0:
        # both endpoints on the boundary: immediate degenerate exit
        return OuSolution(u_value=0.0, tau=s, eta=x.copy(), w_value=0.0,
                          prefactor=1.0, x=x, y=y, s=s,
                          boundary_ok=False)
    ratio = dx / denom
    tau = s + (1.0 - s) * ratio
    eta = x + ratio * (y - x + 2.0 * dy * v)

    skew = M - M.T
    w_value = dy * (ratio * float(v @ (skew @ (y - x)))
                    + np.log(dy / denom) * float(v @ (skew @ y)))
    return OuSolution(u_value=u_value, tau=tau, eta=eta, w_value=w_value,
                      prefactor=float(np.exp(-w_value)), x=x, y=y, s=s,
                      boundary_ok=boundary_ok)
