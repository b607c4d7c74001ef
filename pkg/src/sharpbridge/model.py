"""Diffusion models, exit domains and bridge problem definitions.

A model couples a drift field b with a dispersion field sigma on R^d.
The diffusion matrix a = sigma sigma^T induces the Riemannian metric
a^{-1} consumed by the geometry layer. Ellipticity of a is a standing
assumption; it is checked by sampling probe points, not proved.

Coefficient fields are plain callables taking a point of shape (d,).
Analytic Jacobians are optional; every derivative that is not supplied
is replaced by central finite differences with step 1e-5 * (1 + |z|).
"""

from __future__ import annotations

import ast
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigError, EvaluationError

VectorField = Callable[[np.ndarray], np.ndarray]
ScalarField = Callable[[np.ndarray], float]

FD_REL_STEP = 1e-5
ELLIPTICITY_FLOOR = 1e-10


def fd_step(z: np.ndarray, rel: float = FD_REL_STEP) -> float:
    """Default finite-difference step, scaled with the magnitude of z."""
    return rel * (1.0 + float(np.linalg.norm(z)))


def fd_gradient(f: Callable[[np.ndarray], float], z: np.ndarray,
                step: float | None = None) -> np.ndarray:
    """Central-difference gradient of a scalar function."""
    z = np.asarray(z, dtype=float)
    h = fd_step(z) if step is None else step
    g = np.empty(z.size)
    for j in range(z.size):
        e = np.zeros(z.size)
        e[j] = h
        g[j] = (f(z + e) - f(z - e)) / (2.0 * h)
    return g


def fd_jacobian(f: Callable[[np.ndarray], np.ndarray], z: np.ndarray,
                step: float | None = None) -> np.ndarray:
    """Central-difference Jacobian of a vector function, columns = d/dz_j."""
    z = np.asarray(z, dtype=float)
    h = fd_step(z) if step is None else step
    cols = []
    for j in range(z.size):
        e = np.zeros(z.size)
        e[j] = h
        cols.append((np.asarray(f(z + e), dtype=float)
                     - np.asarray(f(z - e), dtype=float)) / (2.0 * h))
    return np.stack(cols, axis=-1)


@dataclass(frozen=True, eq=False)
class DiffusionModel:
    """Time-homogeneous diffusion dX = b(X) dt + sigma(X) dB on R^d.

    potential, when supplied, carries the contract grad U = a^{-1} b.
    linear_spec marks the linear special case b(z) = M z with sigma = I,
    which unlocks exact Gaussian machinery downstream.
    """

    dim: int
    drift: VectorField
    dispersion: Callable[[np.ndarray], np.ndarray]
    potential: Optional[ScalarField] = None
    drift_jacobian: Optional[Callable[[np.ndarray], np.ndarray]] = None
    dispersion_jacobian: Optional[Callable[[np.ndarray], np.ndarray]] = None
    # optional fast path: sigma evaluated on a whole (n, d) batch of
    # points at once, returning (n, d, d); must agree with dispersion
    dispersion_batch: Optional[Callable[[np.ndarray], np.ndarray]] = None
    linear_spec: Optional[np.ndarray] = None
    name: str = "custom"

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise ConfigError(f"model dimension must be positive, got {self.dim}")
        if self.linear_spec is not None:
            M = np.asarray(self.linear_spec, dtype=float)
            if M.shape != (self.dim, self.dim):
                raise ConfigError(
                    f"linear_spec must be {self.dim}x{self.dim}, got {M.shape}")
            object.__setattr__(self, "linear_spec", M)

    @property
    def is_linear(self) -> bool:
        return self.linear_spec is not None


def diffusion_matrix(model: DiffusionModel, z: np.ndarray) -> np.ndarray:
    """Diffusion matrix a(z) = sigma(z) sigma(z)^T, symmetrized."""
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise EvaluationError(f"non-finite evaluation point {z}")
    sigma = np.asarray(model.dispersion(z), dtype=float)
    if sigma.shape != (model.dim, model.dim):
        raise EvaluationError(
            f"dispersion returned shape {sigma.shape}, expected "
            f"({model.dim}, {model.dim})")
    if not np.all(np.isfinite(sigma)):
        raise EvaluationError(f"dispersion non-finite at z={z}")
    a = sigma @ sigma.T
    return 0.5 * (a + a.T)


def diffusion_matrix_jacobian(model: DiffusionModel, z: np.ndarray) -> np.ndarray:
    """Derivative tensor T[l] = d a / d z_l, shape (d, d, d).

    Uses the analytic dispersion Jacobian when present, finite
    differences of a otherwise.
    """
    z = np.asarray(z, dtype=float)
    d = model.dim
    if model.dispersion_jacobian is not None:
        sigma = np.asarray(model.dispersion(z), dtype=float)
        dsig = np.asarray(model.dispersion_jacobian(z), dtype=float)
        if dsig.shape != (d, d, d):
            raise EvaluationError(
                f"dispersion_jacobian returned shape {dsig.shape}, "
                f"expected {(d, d, d)}")
        out = np.empty((d, d, d))
        for l in range(d):
            t = dsig[l] @ sigma.T
            out[l] = t + t.T
        return out
    h = fd_step(z)
    out = np.empty((d, d, d))
    for l in range(d):
        e = np.zeros(d)
        e[l] = h
        out[l] = (diffusion_matrix(model, z + e)
                  - diffusion_matrix(model, z - e)) / (2.0 * h)
    return out


@dataclass(frozen=True)
class EllipticityReport:
    min_eigenvalue: float
    ok: bool
    worst_point: np.ndarray
    n_probes: int


def ellipticity_check(model: DiffusionModel,
                      probes: Sequence[np.ndarray]) -> EllipticityReport:
    """Smallest eigenvalue of a(z) across probe points.

    Pure diagnostic: a report is returned even for degenerate models;
    ok is False when the minimum eigenvalue is at or below 1e-10.
    """
    probes = [np.asarray(p, dtype=float) for p in probes]
    if not probes:
        raise ValueError("ellipticity_check requires at least one probe")
    lam_min = np.inf
    worst = probes[0]
    for p in probes:
        lam = float(np.linalg.eigvalsh(diffusion_matrix(model, p))[0])
        if lam < lam_min:
            lam_min, worst = lam, p
    return EllipticityReport(min_eigenvalue=lam_min,
                             ok=lam_min > ELLIPTICITY_FLOOR,
                             worst_point=worst,
                             n_probes=len(probes))


def default_probes(x: np.ndarray, y: np.ndarray, pad: float = 0.5) -> list[np.ndarray]:
    """Probe set for ellipticity checks: the box hull of {x, y} inflated
    by the given fraction, sampled at corners, face centers and center."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    lo = np.minimum(x, y)
    hi = np.maximum(x, y)
    span = np.maximum(hi - lo, 1e-6)
    lo = lo - pad * span
    hi = hi + pad * span
    d = x.size
    center = 0.5 * (lo + hi)
    pts = [center]
    for mask in range(2 ** d):
        corner = np.array([hi[j] if (mask >> j) & 1 else lo[j] for j in range(d)])
        pts.append(corner)
    for j in range(d):
        for val in (lo[j], hi[j]):
            p = center.copy()
            p[j] = val
            pts.append(p)
    return pts


@dataclass(frozen=True, eq=False)
class HalfSpaceDomain:
    """Half space D = {z : <normal, z> < level} with unit normal."""

    normal: np.ndarray
    level: float

    def __post_init__(self) -> None:
        v = np.asarray(self.normal, dtype=float)
        nrm = float(np.linalg.norm(v))
        if abs(nrm - 1.0) > 1e-12:
            raise ConfigError(
                f"domain normal must be a unit vector (|v| = {nrm!r})")
        object.__setattr__(self, "normal", v)
        object.__setattr__(self, "level", float(self.level))

    @property
    def dim(self) -> int:
        return self.normal.size

    def boundary_distance(self, z: np.ndarray) -> float:
        """Signed distance to the boundary, positive inside D."""
        return self.level - float(np.dot(self.normal, np.asarray(z, dtype=float)))

    def contains(self, z: np.ndarray, strict: bool = True) -> bool:
        d = self.boundary_distance(z)
        return d > 0.0 if strict else d >= 0.0

    def reflect(self, y: np.ndarray, a0: np.ndarray | None = None) -> np.ndarray:
        """Mirror image of y across the boundary hyperplane.

        With a constant diffusion matrix a0 the reflection is taken in
        the a0^{-1} inner product, i.e. along the conormal a0 v; with
        a0 = I this is the Euclidean mirror point.
        """
        y = np.asarray(y, dtype=float)
        v = self.normal
        if a0 is None:
            conormal = v
            q = 1.0
        else:
            a0 = np.asarray(a0, dtype=float)
            conormal = a0 @ v
            q = float(v @ conormal)
        lam = 2.0 * self.boundary_distance(y) / q
        return y + lam * conormal


@dataclass(frozen=True, eq=False)
class BridgeProblem:
    """Exit problem for a diffusion bridge.

    The process starts at x at (rescaled) time s in [0, 1), is
    conditioned to sit at y at time 1, and t is the physical length of
    the conditioning window. Both endpoints must lie strictly inside
    the domain.
    """

    model: DiffusionModel
    domain: HalfSpaceDomain
    x: np.ndarray
    y: np.ndarray
    s: float = 0.0
    t: float = 0.5

    def __post_init__(self) -> None:
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if x.shape != (self.model.dim,) or y.shape != (self.model.dim,):
            raise ConfigError("x and y must match the model dimension")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "s", float(self.s))
        object.__setattr__(self, "t", float(self.t))
        if not self.domain.contains(x):
            raise ConfigError("start outside domain")
        if not self.domain.contains(y):
            raise ConfigError("conditioning point outside domain")
        if not 0.0 <= self.s < 1.0:
            raise ConfigError(f"start time s must lie in [0, 1), got {self.s}")
        if self.t <= 0.0:
            raise ConfigError(f"conditioning horizon t must be positive, got {self.t}")


# ---------------------------------------------------------------------------
# scalar coefficient expressions (the d = 1 "scalar-sigma" model family)
# ---------------------------------------------------------------------------

_ALLOWED_BINOPS = (ast.Add, ast.Mult)


def _check_expr(node: ast.expr) -> None:
    if isinstance(node, ast.Constant):
        if not isinstance(node.value, (int, float)):
            raise ConfigError(f"non-numeric constant {node.value!r} in expression")
        return
    if isinstance(node, ast.Name):
        if node.id != "z":
            raise ConfigError(f"unknown symbol {node.id!r}; only 'z' is allowed")
        return
    if isinstance(node, ast.BinOp) and isinstance(node.op, _ALLOWED_BINOPS):
        _check_expr(node.left)
        _check_expr(node.right)
        return
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, ast.USub):
        _check_expr(node.operand)
        return
    if (isinstance(node, ast.Call) and isinstance(node.func, ast.Name)
            and node.func.id == "exp" and len(node.args) == 1
            and not node.keywords):
        _check_expr(node.args[0])
        return
    raise ConfigError(
        f"unsupported expression element {ast.dump(node)}; the grammar "
        "allows constants, z, +, *, unary minus and exp()")


def parse_scalar_expression(text: str) -> Callable[[float], float]:
    """Compile a scalar field over the restricted grammar.

    Allowed: numeric constants, the variable z, +, *, unary minus and
    exp(...). The returned callable broadcasts over numpy arrays.
    """
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        raise ConfigError(f"cannot parse expression {text!r}: {exc}") from exc
    _check_expr(tree.body)
    code = compile(tree, "<field>", "eval")

    def evaluate(z):
        return eval(code, {"__builtins__": {}}, {"z": z, "exp": np.exp})

    return evaluate


# ---------------------------------------------------------------------------
# built-in model constructors
# ---------------------------------------------------------------------------

def brownian(dim: int) -> DiffusionModel:
    """Standard Brownian motion: zero drift, identity dispersion."""
    eye = np.eye(dim)
    zero_t = np.zeros((dim, dim, dim))
    return DiffusionModel(
        dim=dim,
        drift=lambda z: np.zeros(dim),
        dispersion=lambda z: eye,
        drift_jacobian=lambda z: np.zeros((dim, dim)),
        dispersion_jacobian=lambda z: zero_t,
        dispersion_batch=lambda pts: np.broadcast_to(eye, (pts.shape[0], dim, dim)),
        linear_spec=np.zeros((dim, dim)),
        name="brownian",
    )


def ornstein_uhlenbeck(M: np.ndarray) -> DiffusionModel:
    """Linear drift b(z) = M z with identity dispersion.

    When M is symmetric the drift is the gradient field of the
    quadratic potential U(z) = <M z, z> / 2, which is recorded on the
    model so downstream code can exploit it.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ConfigError(f"M must be a square matrix, got shape {M.shape}")
    dim = M.shape[0]
    eye = np.eye(dim)
    zero_t = np.zeros((dim, dim, dim))
    potential = None
    if np.allclose(M, M.T, atol=1e-14):
        potential = lambda z: 0.5 * float(z @ (M @ z))
    return DiffusionModel(
        dim=dim,
        drift=lambda z: M @ z,
        dispersion=lambda z: eye,
        potential=potential,
        drift_jacobian=lambda z: M,
        dispersion_jacobian=lambda z: zero_t,
        dispersion_batch=lambda pts: np.broadcast_to(eye, (pts.shape[0], dim, dim)),
        linear_spec=M,
        name="ou",
    )


def scalar_sigma(sigma: str, drift: str | None = None,
                 potential: str | None = None) -> DiffusionModel:
    """One-dimensional model with sigma given as an expression in z.

    drift and potential are optional expressions over the same grammar.
    When only a potential U is supplied the drift is derived from the
    gradient contract b = a U', with U' by central differences.
    """
    sigma_f = parse_scalar_expression(sigma)

    def dispersion(z: np.ndarray) -> np.ndarray:
        return np.array([[float(sigma_f(float(z[0])))]])

    potential_f = parse_scalar_expression(potential) if potential else None

    if drift is not None:
        drift_f = parse_scalar_expression(drift)

        def drift_field(z: np.ndarray) -> np.ndarray:
            return np.array([float(drift_f(float(z[0])))])
    elif potential_f is not None:
        def drift_field(z: np.ndarray) -> np.ndarray:
            z0 = float(z[0])
            h = 1e-6 * (1.0 + abs(z0))
            du = (potential_f(z0 + h) - potential_f(z0 - h)) / (2.0 * h)
            return np.array([float(sigma_f(z0)) ** 2 * du])
    else:
        def drift_field(z: np.ndarray) -> np.ndarray:
            return np.zeros(1)

    pot_field = None
    if potential_f is not None:
        pot_field = lambda z: float(potential_f(float(z[0])))

    def dispersion_batch(pts: np.ndarray) -> np.ndarray:
        vals = np.asarray(sigma_f(pts[:, 0]), dtype=float)
        if vals.ndim == 0:  # constant expression
            vals = np.full(pts.shape[0], float(vals))
        return vals.reshape(-1, 1, 1)

    return DiffusionModel(
        dim=1,
        drift=drift_field,
        dispersion=dispersion,
        potential=pot_field,
        dispersion_batch=dispersion_batch,
        name="scalar-sigma",
    )
