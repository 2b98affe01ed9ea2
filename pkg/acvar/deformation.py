"""
Domain deformations Φ_t(x) = x + tη(x) + ½t²ζ(x), energies of deformed
configurations, and finite-difference oracles for the inner variations.
"""

import math
import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import settings
from .errors import DomainError, InversionError, PropagationError
from .fields import AmbientScalarField, AmbientVectorField, zero
from .geometry import Hypersurface, build_tube, project, surface_frames, surface_nodes, tube_integral
from .phase_field import PhaseField, ac_second_inner_variation, double_well
from .sharp_interface import TWO_SIGMA

logger = logging.getLogger(__name__)

DET_FLOOR = 0.5
T_CAP = 1.0
BISECTION_STEPS = 40
T_FRACTIONS = (0.25, 0.5, 0.75, 1.0)
SAMPLE_OFFSETS = 9
MAX_SAMPLE_NODES = 4096

INVERT_TOL = 1e-13
INVERT_MAXITER = 25

FD_BASE_FRACTION = 0.05
FD_HALVINGS = 3
RICHARDSON_P = 2
RICHARDSON_R = 2.0
NOISE_FACTOR = 1e3

PUSHFORWARD_PAD = 2.0    # extra half-width of the deformed-coordinate tube, in units of ε


@dataclass(frozen=True, eq=False)
class DeformationFlow:
    """Φ_t with det∇Φ_t ≥ ½ at the sample points for |t| ≤ t_max."""
    eta: AmbientVectorField
    zeta: AmbientVectorField
    t_max: float

    def check(self, t: float):
        if abs(t) > self.t_max * (1.0 + 1e-12):
            raise DomainError(f"|t| = {abs(t):.4g} exceeds t_max = {self.t_max:.4g}")


def _gradients(eta, zeta, x, t):
    dimension = x.shape[-1]
    M = eta.jacobian(x)
    C = zeta.jacobian(x)
    return np.eye(dimension) + t * M + 0.5 * t * t * C


def _min_det(jacobians, t):
    M, C = jacobians
    dimension = M.shape[-1]
    worst = math.inf
    for sign in (1.0, -1.0):
        G = np.eye(dimension) + sign * t * M + 0.5 * t * t * C
        worst = min(worst, float(np.min(np.linalg.det(G))))
    return worst


def build_flow(eta: AmbientVectorField, zeta: AmbientVectorField, sample_points) -> DeformationFlow:
    """Bisect for the largest t ≤ 1 with det∇Φ_{±τ} ≥ ½ at every sample point for τ ∈ (0, t]."""
    points = np.asarray(sample_points, dtype=float).reshape(-1, eta.dimension)
    jacobians = (eta.jacobian(points), zeta.jacobian(points))

    def admissible(t):
        return all(_min_det(jacobians, f * t) >= DET_FLOOR for f in T_FRACTIONS)

    if admissible(T_CAP):
        t_max = T_CAP
    else:
        lo, hi = 0.0, T_CAP
        for _ in range(BISECTION_STEPS):
            mid = 0.5 * (lo + hi)
            if admissible(mid):
                lo = mid
            else:
                hi = mid
        t_max = lo
    if t_max <= 0.0:
        raise DomainError("no admissible deformation time: det∇Φ_t < 1/2 for every t > 0")
    logger.debug("t_max = %.6g from %d sample points", t_max, points.shape[0])
    return DeformationFlow(eta, zeta, t_max)


def tube_sample_points(surface: Hypersurface, s_max: float) -> np.ndarray:
    """Surface nodes (strided to at most MAX_SAMPLE_NODES) shifted along the normal."""
    frame, _ = surface_frames(surface)
    stride = max(1, len(frame) // MAX_SAMPLE_NODES)
    sub = frame[::stride]
    offsets = np.linspace(-s_max, s_max, SAMPLE_OFFSETS)
    return (sub.point[:, None, :] + offsets[None, :, None] * sub.normal[:, None, :]).reshape(-1, surface.dimension_ambient)


def flow_for_field(field: PhaseField, eta: AmbientVectorField, zeta: AmbientVectorField) -> DeformationFlow:
    return build_flow(eta, zeta, tube_sample_points(field.surface, field.s_max))


def flow_for_surface(surface: Hypersurface, eta: AmbientVectorField, zeta: AmbientVectorField) -> DeformationFlow:
    frame, _ = surface_frames(surface)
    stride = max(1, len(frame) // MAX_SAMPLE_NODES)
    return build_flow(eta, zeta, frame.point[::stride])


# ---------------------------------------------------------------------------
# Flow map
# ---------------------------------------------------------------------------

def flow_gradient(flow: DeformationFlow, t: float, x) -> np.ndarray:
    """∇Φ_t(x) = I + t∇η + ½t²∇ζ."""
    return _gradients(flow.eta, flow.zeta, np.asarray(x, dtype=float), t)


def flow_apply(flow: DeformationFlow, t: float, x) -> np.ndarray:
    flow.check(t)
    x = np.asarray(x, dtype=float)
    return x + t * flow.eta.value(x) + 0.5 * t * t * flow.zeta.value(x)


def flow_invert(flow: DeformationFlow, t: float, y) -> np.ndarray:
    """Newton iteration on Φ_t(x) = y from x = y."""
    flow.check(t)
    y = np.asarray(y, dtype=float)
    target = y.reshape(-1, flow.eta.dimension)
    x = target.copy()
    scale = np.maximum(1.0, np.linalg.norm(target, axis=-1))
    for iteration in range(INVERT_MAXITER + 1):
        residual = x + t * flow.eta.value(x) + 0.5 * t * t * flow.zeta.value(x) - target
        size = np.linalg.norm(residual, axis=-1)
        if np.all(size <= INVERT_TOL * scale):
            logger.debug("flow inversion converged in %d iterations", iteration)
            return x.reshape(y.shape)
        if iteration == INVERT_MAXITER or not np.all(np.isfinite(size)):
            break
        G = _gradients(flow.eta, flow.zeta, x, t)
        x = x - np.linalg.solve(G, residual[..., None])[..., 0]
    raise InversionError(
        f"Newton inversion of Φ_t at t={t:.4g} did not converge in {INVERT_MAXITER} iterations "
        f"(max residual {float(np.nanmax(size)):.3g})"
    )


# ---------------------------------------------------------------------------
# Expansion residuals
# ---------------------------------------------------------------------------

def det_expansion_residual(A, B, t: float) -> float:
    """|det(I + tA + ½t²B) − (1 + t trA + ½t²[trB + (trA)² − tr(A²)])|."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    exact = np.linalg.det(np.eye(A.shape[0]) + t * A + 0.5 * t * t * B)
    trA = np.trace(A)
    expansion = 1.0 + t * trA + 0.5 * t * t * (np.trace(B) + trA ** 2 - np.trace(A @ A))
    return float(abs(exact - expansion))


def jacobian_inverse_residual(flow: DeformationFlow, x, t: float) -> float:
    """Frobenius norm of (∇Φ_t)^{-1} − (I − t∇η − ½t²∇ζ + t²(∇η)²) at a single point."""
    flow.check(t)
    x = np.asarray(x, dtype=float)
    M = flow.eta.jacobian(x)
    C = flow.zeta.jacobian(x)
    eye = np.eye(M.shape[-1])
    try:
        exact = np.linalg.inv(eye + t * M + 0.5 * t * t * C)
    except np.linalg.LinAlgError as e:
        raise DomainError(f"∇Φ_t is singular at t={t:.4g}: {e}")
    expansion = eye - t * M - 0.5 * t * t * C + t * t * (M @ M)
    return float(np.linalg.norm(exact - expansion))


def residual_slope(residual: Callable[[float], float], ts: Sequence[float] = (1e-1, 1e-2, 1e-3, 1e-4)) -> float:
    """Least-squares slope of log residual against log t; inf when the residual vanishes."""
    points = [(t, residual(t)) for t in ts]
    points = [(t, r) for t, r in points if r > 0.0]
    if len(points) < 2:
        return math.inf
    log_t = np.log([t for t, _ in points])
    log_r = np.log([r for _, r in points])
    return float(np.polyfit(log_t, log_r, 1)[0])


# ---------------------------------------------------------------------------
# Deformed energies
# ---------------------------------------------------------------------------

def deformed_ac_energy(field: PhaseField, flow: DeformationFlow, t: float) -> float:
    """E_ε(u∘Φ_t^{-1}) by change of variables onto the undeformed tube:

        ∫ [ε|∇u·(∇Φ_t)^{-1}|²/2 + W(u)/ε] |det∇Φ_t| dx
    """
    flow.check(t)
    if not field.layers:
        return 0.0

    def integrand(frame, s, x):
        u, du = field.profile(s)
        grad_u = du[:, None] * frame.normal
        G = _gradients(flow.eta, flow.zeta, x, t)
        pulled = np.linalg.solve(np.swapaxes(G, -1, -2), grad_u[..., None])[..., 0]
        density = 0.5 * field.epsilon * np.sum(pulled ** 2, axis=-1) + double_well(u) / field.epsilon
        return density * np.abs(np.linalg.det(G))

    return tube_integral(field.surface, field.quadrature, integrand)


def pushforward_ac_energy(field: PhaseField, flow: DeformationFlow, t: float) -> float:
    """E_ε(u∘Φ_t^{-1}) integrated directly in the deformed coordinates y.

    The y-nodes come from a second tube rule around Γ, wide enough to hold Φ_t of the
    field's tube. At each node u(Φ_t^{-1}(y)) is found by Newton inversion and
    closest-point evaluation, and ∇_y(u∘Φ_t^{-1}) = (∇Φ_t)^{-T}∇u; no Jacobian
    determinant enters.
    """
    flow.check(t)
    if not field.layers:
        return 0.0
    surface = field.surface
    edge = flow_apply(flow, t, tube_sample_points(surface, field.s_max))
    s_edge, _ = project(surface, edge)
    half_width = float(np.max(np.abs(s_edge))) + PUSHFORWARD_PAD * field.epsilon
    if half_width >= surface.reach:
        raise DomainError(
            f"Φ_t at t={t:.4g} moves the tube to distance {half_width:.4g}, beyond the reach {surface.reach:.4g}"
        )
    quad = build_tube(surface, half_width, panel_width=2.0 * field.epsilon, nodes_per_panel=field.nodes_per_panel)
    logger.debug("pushforward tube: half-width %.4g, %d nodes", half_width, quad.size)

    def integrand(frame, s, y):
        x = flow_invert(flow, t, y)
        u, grad_u = field.evaluate(x)
        G = _gradients(flow.eta, flow.zeta, x, t)
        grad_y = np.linalg.solve(np.swapaxes(G, -1, -2), grad_u[..., None])[..., 0]
        return 0.5 * field.epsilon * np.sum(grad_y ** 2, axis=-1) + double_well(u) / field.epsilon

    return tube_integral(surface, quad, integrand)


def deformed_area_energy(surface: Hypersurface, flow: DeformationFlow, t: float) -> float:
    """2σ H^{N-1}(Φ_t(Γ)) from the Gram determinant of the pushed tangent vectors."""
    flow.check(t)
    frame, _ = surface_frames(surface)
    _, weights = surface_nodes(surface)
    J = np.einsum("kni,kij->knj", frame.tangents, frame.chart_factor)
    partials = []
    block = max(1, settings.CHUNK_POINTS)
    for start in range(0, len(frame), block):
        stop = start + block
        G = _gradients(flow.eta, flow.zeta, frame.point[start:stop], t)
        pushed = np.einsum("knm,kmi->kni", G, J[start:stop])
        gram = np.einsum("kni,knj->kij", pushed, pushed)
        partials.append(np.sum(weights[start:stop] * np.sqrt(np.linalg.det(gram))))
    return TWO_SIGMA * math.fsum(float(p) for p in partials)


# ---------------------------------------------------------------------------
# Finite differences
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FDEstimate:
    value: float
    step: float
    order_estimate: float
    exact: bool = False
    differences: tuple[float, ...] = ()


def richardson_extrapolate(values: Sequence[float], p: int = RICHARDSON_P, r: float = RICHARDSON_R) -> float:
    """Richardson table for estimates at steps h, h/r, h/r², ... with error in powers h^p, h^{2p}, ..."""
    table = [float(v) for v in values]
    j = 1
    while len(table) > 1:
        factor = r ** (p * j)
        table = [(factor * table[i + 1] - table[i]) / (factor - 1.0) for i in range(len(table) - 1)]
        j += 1
    return table[0]


def fd_derivative(g: Callable[[float], float], order: int, base_step: float) -> FDEstimate:
    """Central first or second difference with step halving and Richardson extrapolation."""
    if order not in (1, 2):
        raise DomainError(f"order must be 1 or 2, got {order}")
    if not base_step > 0:
        raise DomainError(f"base_step must be positive, got {base_step}")

    cache: dict[float, float] = {}

    def evaluate(t):
        if t not in cache:
            value = float(g(t))
            if not math.isfinite(value):
                raise PropagationError(f"g({t:.6g}) is not finite")
            cache[t] = value
        return cache[t]

    steps = [base_step / 2 ** i for i in range(FD_HALVINGS)]
    g0 = evaluate(0.0) if order == 2 else None
    estimates = []
    for h in steps:
        if order == 1:
            estimates.append((evaluate(h) - evaluate(-h)) / (2.0 * h))
        else:
            estimates.append((evaluate(h) - 2.0 * g0 + evaluate(-h)) / (h * h))

    value = richardson_extrapolate(estimates)
    diffs = (abs(estimates[0] - estimates[1]), abs(estimates[1] - estimates[2]))
    scale = max(abs(v) for v in cache.values())
    floor = NOISE_FACTOR * np.finfo(float).eps * max(scale, 1e-300) / steps[-1] ** order
    if diffs[0] <= floor and diffs[1] <= floor:
        return FDEstimate(value, base_step, math.nan, exact=True, differences=diffs)
    if diffs[1] == 0.0:
        order_estimate = math.inf
    else:
        order_estimate = math.log2(diffs[0] / diffs[1])
    return FDEstimate(value, base_step, order_estimate, exact=False, differences=diffs)


def fd_base_step(flow: DeformationFlow) -> float:
    return FD_BASE_FRACTION * flow.t_max


# ---------------------------------------------------------------------------
# Polarization and injectivity
# ---------------------------------------------------------------------------

def material_velocity(field: PhaseField, V: AmbientVectorField) -> AmbientScalarField:
    """x ↦ −∇u(x)·V(x), the t-derivative of u∘(x + tV)^{-1} at t = 0."""
    def evaluate(x):
        return -np.sum(field.gradient(x) * V.value(x), axis=-1), None
    return AmbientScalarField(V.dimension, evaluate, label=f"-grad u . {V.label}")


def injectivity_pairing(field: PhaseField, V: AmbientVectorField) -> float:
    """ε ∫ |∇u·V|²."""
    if not field.layers:
        return 0.0

    def integrand(frame, s, x):
        _, du = field.profile(s)
        return field.epsilon * (du * np.sum(frame.normal * V.value(x), axis=-1)) ** 2

    return tube_integral(field.surface, field.quadrature, integrand)


def polarized_form(field: PhaseField, V: AmbientVectorField, W: AmbientVectorField) -> float:
    """[Q_ε(V+W) − Q_ε(V−W)]/4 with Q_ε(V) the second inner variation along (V, 0)."""
    z = zero(V.dimension)
    plus = ac_second_inner_variation(field, V + W, z).value
    minus = ac_second_inner_variation(field, V - W, z).value
    return 0.25 * (plus - minus)
