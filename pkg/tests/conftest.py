import numpy as np
import pytest

from sharpbridge import DiffusionModel


@pytest.fixture(scope="session", autouse=True)
def _warm_rng():
    # first call compiles the optional jit kernel; keep it out of timings
    from sharpbridge import rng
    rng.uniform_block(0, np.arange(8, dtype=np.uint64), 0)


def variable_metric_2d(alpha: float = 0.3) -> DiffusionModel:
    """Curved two-dimensional test metric with analytic derivatives:
    sigma(z) = diag(exp(alpha z2), exp(alpha z1))."""

    def dispersion(z):
        return np.diag([np.exp(alpha * z[1]), np.exp(alpha * z[0])])

    def dispersion_jacobian(z):
        out = np.zeros((2, 2, 2))
        out[0, 1, 1] = alpha * np.exp(alpha * z[0])
        out[1, 0, 0] = alpha * np.exp(alpha * z[1])
        return out

    def dispersion_batch(pts):
        out = np.zeros((pts.shape[0], 2, 2))
        out[:, 0, 0] = np.exp(alpha * pts[:, 1])
        out[:, 1, 1] = np.exp(alpha * pts[:, 0])
        return out

    return DiffusionModel(dim=2, drift=lambda z: np.zeros(2),
                          dispersion=dispersion,
                          drift_jacobian=lambda z: np.zeros((2, 2)),
                          dispersion_jacobian=dispersion_jacobian,
                          dispersion_batch=dispersion_batch,
                          name="curved-2d")


def gradient_drift_model_2d(alpha: float, q: np.ndarray) -> DiffusionModel:
    """Gradient-drift model on the curved metric: b = a grad U with the
    quadratic potential U(z) = <q z, z> / 2."""
    base = variable_metric_2d(alpha)
    q = np.asarray(q, dtype=float)

    def drift(z):
        a = base.dispersion(z) @ base.dispersion(z).T
        return a @ (q @ z)

    return DiffusionModel(dim=2, drift=drift, dispersion=base.dispersion,
                          potential=lambda z: 0.5 * float(z @ (q @ z)),
                          dispersion_jacobian=base.dispersion_jacobian,
                          dispersion_batch=base.dispersion_batch,
                          name="gradient-curved-2d")


def gradient_drift_model_1d(sigma_expr: str, q: float) -> DiffusionModel:
    """One-dimensional gradient-drift model b = sigma^2 U' with
    U(z) = q z^2 / 2."""
    from sharpbridge.model import parse_scalar_expression
    sig = parse_scalar_expression(sigma_expr)

    def drift(z):
        s = float(sig(float(z[0])))
        return np.array([s * s * q * float(z[0])])

    return DiffusionModel(dim=1, drift=drift,
                          dispersion=lambda z: np.array([[float(sig(float(z[0])))]]),
                          potential=lambda z: 0.5 * q * float(z[0]) ** 2,
                          name="gradient-1d")
