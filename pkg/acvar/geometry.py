"""
Parametric closed hypersurfaces in R^2 and R^3.

Built-in shapes (circle, ellipse, sphere, torus) carry closed-form charts with first
and second parameter derivatives. Everything else (frames, curvature, signed distance,
surface and tube quadrature) is computed from those charts in vectorized form: a
"frame" is usually a batch of frames with a leading node axis.
"""

import math
import logging
from dataclasses import dataclass, fields
from enum import Enum
from functools import lru_cache
from typing import Callable

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import integrate, optimize

from . import settings
from .errors import ChartDegeneracyError, ConfigurationError, ConvergenceError, OutOfTubeError

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi

DEFAULT_NODES_2D = 2048
DEFAULT_NODES_THETA_3D = 256
DEFAULT_NODES_PHI_3D = 512
DEFAULT_NODES_PER_PANEL = 16
MIN_NORMAL_NODES = 64

NEWTON_TOL = 1e-12
NEWTON_MAXITER = 50
SCAN_SAMPLES = 256
DEGENERACY_TOL = 1e-12
POLE_TOL = 1e-8


class SurfaceKind(str, Enum):
    CIRCLE = "circle"
    ELLIPSE = "ellipse"
    SPHERE = "sphere"
    TORUS = "torus"


@dataclass(frozen=True)
class ChartSample:
    point: np.ndarray   # (K, N)
    d1: np.ndarray      # (K, N, N-1)   dp/dy_i
    d2: np.ndarray      # (K, N, N-1, N-1)   d2p/dy_i dy_j


# ---------------------------------------------------------------------------
# Hypersurface
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Hypersurface:
    """Closed C^2 hypersurface given by an analytic periodic chart.

    Parameters are theta for curves, (theta polar, phi azimuth) for the sphere
    and (u major angle, v minor angle) for the torus. Frozen and hashable so that
    frames at quadrature nodes can be cached per surface.
    """
    kind: SurfaceKind
    center: tuple[float, ...]
    radius: float | None = None
    semi_axes: tuple[float, float] | None = None
    r_major: float | None = None
    r_minor: float | None = None
    nodes_theta: int | None = None
    nodes_phi: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", SurfaceKind(self.kind))
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if len(self.center) != self.dimension_ambient:
            raise ConfigurationError(
                f"{self.kind.value} needs a center in R^{self.dimension_ambient}, got {self.center}"
            )
        if self.kind in (SurfaceKind.CIRCLE, SurfaceKind.SPHERE):
            if self.radius is None or self.radius <= 0:
                raise ConfigurationError(f"{self.kind.value} needs a positive radius")
        elif self.kind is SurfaceKind.ELLIPSE:
            if self.semi_axes is None:
                raise ConfigurationError("ellipse needs semi_axes = [a, b]")
            a, b = self.semi_axes
            if not a >= b > 0:
                raise ConfigurationError(f"ellipse semi_axes must satisfy a >= b > 0, got {self.semi_axes}")
            object.__setattr__(self, "semi_axes", (float(a), float(b)))
        elif self.kind is SurfaceKind.TORUS:
            if self.r_major is None or self.r_minor is None or not self.r_major > self.r_minor > 0:
                raise ConfigurationError("torus needs r_major > r_minor > 0")
        for name in ("nodes_theta", "nodes_phi"):
            value = getattr(self, name)
            if value is not None and value < 4:
                raise ConfigurationError(f"{name} must be at least 4, got {value}")

    # -- constructors -------------------------------------------------------

    @classmethod
    def circle(cls, radius: float, center=(0.0, 0.0), nodes: int | None = None) -> "Hypersurface":
        return cls(SurfaceKind.CIRCLE, tuple(center), radius=radius, nodes_theta=nodes)

    @classmethod
    def ellipse(cls, a: float, b: float, center=(0.0, 0.0), nodes: int | None = None) -> "Hypersurface":
        return cls(SurfaceKind.ELLIPSE, tuple(center), semi_axes=(a, b), nodes_theta=nodes)

    @classmethod
    def sphere(cls, radius: float, center=(0.0, 0.0, 0.0),
               nodes_theta: int | None = None, nodes_phi: int | None = None) -> "Hypersurface":
        return cls(SurfaceKind.SPHERE, tuple(center), radius=radius,
                   nodes_theta=nodes_theta, nodes_phi=nodes_phi)

    @classmethod
    def torus(cls, r_major: float, r_minor: float, center=(0.0, 0.0, 0.0),
              nodes_theta: int | None = None, nodes_phi: int | None = None) -> "Hypersurface":
        return cls(SurfaceKind.TORUS, tuple(center), r_major=r_major, r_minor=r_minor,
                   nodes_theta=nodes_theta, nodes_phi=nodes_phi)

    # -- geometry -----------------------------------------------------------

    @property
    def dimension_ambient(self) -> int:
        return 2 if self.kind in (SurfaceKind.CIRCLE, SurfaceKind.ELLIPSE) else 3

    @property
    def reach(self) -> float:
        if self.kind in (SurfaceKind.CIRCLE, SurfaceKind.SPHERE):
            return float(self.radius)
        if self.kind is SurfaceKind.ELLIPSE:
            a, b = self.semi_axes
            return b * b / a
        return float(min(self.r_minor, self.r_major - self.r_minor))

    @property
    def parameter_domain(self) -> tuple[tuple[float, float], ...]:
        if self.kind is SurfaceKind.SPHERE:
            return ((0.0, math.pi), (0.0, TWO_PI))
        if self.kind is SurfaceKind.TORUS:
            return ((0.0, TWO_PI), (0.0, TWO_PI))
        return ((0.0, TWO_PI),)

    @property
    def node_counts(self) -> tuple[int, ...]:
        if self.dimension_ambient == 2:
            return (self.nodes_theta or DEFAULT_NODES_2D,)
        return (self.nodes_theta or DEFAULT_NODES_THETA_3D, self.nodes_phi or DEFAULT_NODES_PHI_3D)

    def chart(self, params) -> ChartSample:
        params = as_params(self, params)
        return _CHARTS[self.kind](self, params)

    def closed_form_measure(self) -> float:
        """H^{N-1}(Γ) in closed form (ellipse perimeter by adaptive reference quadrature)."""
        if self.kind is SurfaceKind.CIRCLE:
            return TWO_PI * self.radius
        if self.kind is SurfaceKind.SPHERE:
            return 4.0 * math.pi * self.radius ** 2
        if self.kind is SurfaceKind.TORUS:
            return 4.0 * math.pi ** 2 * self.r_major * self.r_minor
        a, b = self.semi_axes
        value, _ = integrate.quad(
            lambda th: math.hypot(a * math.sin(th), b * math.cos(th)),
            0.0, TWO_PI, epsabs=1e-14, epsrel=1e-13, limit=200,
        )
        return value


def as_params(surface: Hypersurface, params) -> np.ndarray:
    """Coerce a parameter tuple or batch to shape (K, N-1)."""
    arr = np.asarray(params, dtype=float)
    return arr.reshape(-1, surface.dimension_ambient - 1)


def _circle_chart(surface, params):
    th = params[:, 0]
    c, s = np.cos(th), np.sin(th)
    R = surface.radius
    center = np.asarray(surface.center)
    point = center + R * np.stack([c, s], axis=-1)
    d1 = (R * np.stack([-s, c], axis=-1))[:, :, None]
    d2 = (-R * np.stack([c, s], axis=-1))[:, :, None, None]
    return ChartSample(point, d1, d2)


def _ellipse_chart(surface, params):
    th = params[:, 0]
    c, s = np.cos(th), np.sin(th)
    a, b = surface.semi_axes
    center = np.asarray(surface.center)
    point = center + np.stack([a * c, b * s], axis=-1)
    d1 = np.stack([-a * s, b * c], axis=-1)[:, :, None]
    d2 = np.stack([-a * c, -b * s], axis=-1)[:, :, None, None]
    return ChartSample(point, d1, d2)


def _sphere_chart(surface, params):
    th, ph = params[:, 0], params[:, 1]
    st, ct, sp, cp = np.sin(th), np.cos(th), np.sin(ph), np.cos(ph)
    R = surface.radius
    zero = np.zeros_like(th)
    point = np.asarray(surface.center) + R * np.stack([st * cp, st * sp, ct], axis=-1)
    p_t = R * np.stack([ct * cp, ct * sp, -st], axis=-1)
    p_p = R * np.stack([-st * sp, st * cp, zero], axis=-1)
    p_tt = -R * np.stack([st * cp, st * sp, ct], axis=-1)
    p_tp = R * np.stack([-ct * sp, ct * cp, zero], axis=-1)
    p_pp = -R * np.stack([st * cp, st * sp, zero], axis=-1)
    d1 = np.stack([p_t, p_p], axis=-1)
    d2 = np.stack([np.stack([p_tt, p_tp], axis=-1), np.stack([p_tp, p_pp], axis=-1)], axis=-1)
    return ChartSample(point, d1, d2)


def _torus_chart(surface, params):
    u, v = params[:, 0], params[:, 1]
    su, cu, sv, cv = np.sin(u), np.cos(u), np.sin(v), np.cos(v)
    Rm, r = surface.r_major, surface.r_minor
    rho = Rm + r * cv
    zero = np.zeros_like(u)
    point = np.asarray(surface.center) + np.stack([rho * cu, rho * su, r * sv], axis=-1)
    p_u = np.stack([-rho * su, rho * cu, zero], axis=-1)
    p_v = r * np.stack([-sv * cu, -sv * su, cv], axis=-1)
    p_uu = -np.stack([rho * cu, rho * su, zero], axis=-1)
    p_uv = r * np.stack([sv * su, -sv * cu, zero], axis=-1)
    p_vv = -r * np.stack([cv * cu, cv * su, sv], axis=-1)
    d1 = np.stack([p_u, p_v], axis=-1)
    d2 = np.stack([np.stack([p_uu, p_uv], axis=-1), np.stack([p_uv, p_vv], axis=-1)], axis=-1)
    return ChartSample(point, d1, d2)


_CHARTS = {
    SurfaceKind.CIRCLE: _circle_chart,
    SurfaceKind.ELLIPSE: _ellipse_chart,
    SurfaceKind.SPHERE: _sphere_chart,
    SurfaceKind.TORUS: _torus_chart,
}


# ---------------------------------------------------------------------------
# Frames
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SurfaceFrame:
    """Point, outward normal, orthonormal tangents and shape operator at chart nodes.

    `chart_factor` is the triangular R of the QR factorisation J = T R of the chart
    Jacobian; it converts parameter gradients into tangential gradients. The shape
    operator A = dn is expressed in the tangent basis, so a convex surface with an
    outward normal has positive principal curvatures.
    """
    params: np.ndarray
    point: np.ndarray
    normal: np.ndarray
    tangents: np.ndarray
    shape_operator: np.ndarray
    area_element: np.ndarray
    chart_factor: np.ndarray

    def __len__(self):
        return self.point.shape[0] if self.point.ndim > 1 else 1

    def __getitem__(self, index) -> "SurfaceFrame":
        return SurfaceFrame(*(getattr(self, f.name)[index] for f in fields(self)))

    def repeat(self, count: int) -> "SurfaceFrame":
        return SurfaceFrame(*(np.repeat(getattr(self, f.name), count, axis=0) for f in fields(self)))

    @property
    def dimension(self) -> int:
        return self.point.shape[-1]

    @property
    def principal_curvatures(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.shape_operator)

    @property
    def mean_curvature(self) -> np.ndarray:
        return np.trace(self.shape_operator, axis1=-2, axis2=-1)

    @property
    def curvature_norm_sq(self) -> np.ndarray:
        return np.sum(self.shape_operator ** 2, axis=(-2, -1))

    @property
    def rotation(self) -> np.ndarray:
        """Orthogonal matrix with columns τ_1..τ_{N-1}, n."""
        return np.concatenate([self.tangents, self.normal[..., :, None]], axis=-1)

    def tangential_gradient(self, param_gradient) -> np.ndarray:
        """∇^Γ f = T R^{-T} ∂_y f for f given as a function of the chart parameters."""
        g = np.asarray(param_gradient, dtype=float)
        coords = np.linalg.solve(np.swapaxes(self.chart_factor, -1, -2), g[..., None])[..., 0]
        return np.einsum("...ni,...i->...n", self.tangents, coords)


def frames(surface: Hypersurface, params) -> SurfaceFrame:
    """Batched frame computation at parameter nodes of shape (K, N-1)."""
    params = as_params(surface, params)
    sample = surface.chart(params)
    J = sample.d1
    T, R = np.linalg.qr(J)
    signs = np.sign(np.diagonal(R, axis1=-2, axis2=-1))
    signs[signs == 0] = 1.0
    T = T * signs[:, None, :]
    R = R * signs[:, :, None]

    diag = np.diagonal(R, axis1=-2, axis2=-1)
    scale = max(1.0, float(np.max(np.abs(J))))
    if np.any(diag <= DEGENERACY_TOL * scale):
        bad = params[np.any(diag <= DEGENERACY_TOL * scale, axis=-1)][0]
        raise ChartDegeneracyError(f"{surface.kind.value} chart has rank < N-1 at params {tuple(bad)}")

    if surface.dimension_ambient == 2:
        t = T[:, :, 0]
        normal = np.stack([t[:, 1], -t[:, 0]], axis=-1)
    else:
        cross = np.cross(J[:, :, 0], J[:, :, 1])
        normal = cross / np.linalg.norm(cross, axis=-1, keepdims=True)

    # L_ij = -n . d2p/dy_i dy_j ; A = R^{-T} L R^{-1}
    L = -np.einsum("kn,knij->kij", normal, sample.d2)
    R_inv = np.linalg.inv(R)
    A = np.einsum("kai,kab,kbj->kij", R_inv, L, R_inv)
    A = 0.5 * (A + np.swapaxes(A, -1, -2))
    area = np.abs(np.prod(diag, axis=-1))
    return SurfaceFrame(params, sample.point, normal, T, A, area, R)


def frame_at(surface: Hypersurface, params) -> SurfaceFrame:
    """Frame at a single parameter tuple (no batch axis)."""
    return frames(surface, params)[0]


# ── Sphere poles ──────────────────────────────────────────────────
#
# Closest points on the polar axis project to θ ∈ {0, π}, where the sphere chart
# is singular. Consumers of projected points use foot_frames, which builds the
# frame there from the geometry directly.

def sphere_poles(surface: Hypersurface, params) -> np.ndarray:
    """Mask of parameter rows at (or within POLE_TOL of) a sphere pole."""
    params = as_params(surface, params)
    if surface.kind is not SurfaceKind.SPHERE:
        return np.zeros(params.shape[0], dtype=bool)
    return np.abs(np.sin(params[:, 0])) <= POLE_TOL


def foot_frames(surface: Hypersurface, params) -> SurfaceFrame:
    """Like frames, but sphere poles get the exact pole frame instead of raising.

    At a pole the tangents are σe_1, e_2 with σ = cos θ, A = I/R and the area element
    is 0. The chart factor there is a placeholder: parameter gradients at poles go
    through pole_gradient.
    """
    params = as_params(surface, params)
    poles = sphere_poles(surface, params)
    if not np.any(poles):
        return frames(surface, params)

    count = params.shape[0]
    R = surface.radius
    sigma = np.where(np.cos(params[:, 0]) >= 0, 1.0, -1.0)
    point = np.empty((count, 3))
    normal = np.empty((count, 3))
    tangents = np.empty((count, 3, 2))
    shape_operator = np.empty((count, 2, 2))
    area = np.empty(count)
    chart_factor = np.empty((count, 2, 2))

    regular = ~poles
    if np.any(regular):
        frame = frames(surface, params[regular])
        point[regular] = frame.point
        normal[regular] = frame.normal
        tangents[regular] = frame.tangents
        shape_operator[regular] = frame.shape_operator
        area[regular] = frame.area_element
        chart_factor[regular] = frame.chart_factor

    sp = sigma[poles]
    e3 = np.array([0.0, 0.0, 1.0])
    point[poles] = np.asarray(surface.center) + R * sp[:, None] * e3
    normal[poles] = sp[:, None] * e3
    tangents[poles] = 0.0
    tangents[poles, 0, 0] = sp
    tangents[poles, 1, 1] = 1.0
    shape_operator[poles] = np.eye(2) / R
    area[poles] = 0.0
    chart_factor[poles] = R * np.eye(2)
    return SurfaceFrame(params, point, normal, tangents, shape_operator, area, chart_factor)


def pole_gradient(surface: Hypersurface, evaluate, params) -> np.ndarray:
    """Ambient tangential gradient at sphere poles of f given in chart parameters.

    Uses the θ-derivatives along the meridians φ = 0 and φ = π/2, which leave the pole
    in the directions ±e_1 and ±e_2.
    """
    params = as_params(surface, params)
    theta = np.where(np.cos(params[:, 0]) >= 0, 0.0, math.pi)
    sigma = np.cos(theta)
    _, g0 = evaluate(np.stack([theta, np.zeros_like(theta)], axis=-1))
    _, g1 = evaluate(np.stack([theta, np.full_like(theta, 0.5 * math.pi)], axis=-1))
    grad = np.stack([g0[:, 0], g1[:, 0], np.zeros_like(theta)], axis=-1)
    return (sigma / surface.radius)[:, None] * grad


def surface_nodes(surface: Hypersurface) -> tuple[np.ndarray, np.ndarray]:
    """Quadrature nodes in parameter space and their weights (sum = parameter-domain measure)."""
    return _surface_nodes(surface)


@lru_cache(maxsize=64)
def _surface_nodes(surface: Hypersurface):
    counts = surface.node_counts
    if surface.dimension_ambient == 2:
        n = counts[0]
        params = (TWO_PI * np.arange(n) / n)[:, None]
        weights = np.full(n, TWO_PI / n)
    else:
        n_first, n_second = counts
        phi = TWO_PI * np.arange(n_second) / n_second
        w_phi = np.full(n_second, TWO_PI / n_second)
        if surface.kind is SurfaceKind.SPHERE:
            x, w = leggauss(n_first)
            first = 0.5 * math.pi * (x + 1.0)
            w_first = 0.5 * math.pi * w
        else:
            first = TWO_PI * np.arange(n_first) / n_first
            w_first = np.full(n_first, TWO_PI / n_first)
        A, B = np.meshgrid(first, phi, indexing="ij")
        params = np.stack([A.ravel(), B.ravel()], axis=-1)
        weights = np.outer(w_first, w_phi).ravel()
    params.setflags(write=False)
    weights.setflags(write=False)
    return params, weights


@lru_cache(maxsize=64)
def surface_frames(surface: Hypersurface) -> tuple[SurfaceFrame, np.ndarray]:
    """Frames at the quadrature nodes and the H^{N-1} weights (parameter weight × area element)."""
    params, weights = surface_nodes(surface)
    frame = frames(surface, params)
    logger.debug("frames for %s: %d nodes", surface.kind.value, len(frame))
    return frame, weights * frame.area_element


def surface_integral(surface: Hypersurface, integrand: Callable[[SurfaceFrame], np.ndarray]):
    """∫_Γ integrand dH^{N-1}; the integrand is evaluated on the batch of node frames.

    Returns a float, or an array when the integrand returns one column per node and
    quantity (shape (K, Q)).
    """
    frame, weights = surface_frames(surface)
    values = np.asarray(integrand(frame), dtype=float)
    if values.ndim == 0:
        values = np.full(len(frame), float(values))
    if values.ndim == 1:
        return float(np.sum(weights * values))
    return np.sum(weights[:, None] * values, axis=0)


# ---------------------------------------------------------------------------
# Signed distance
# ---------------------------------------------------------------------------

def project(surface: Hypersurface, points) -> tuple[np.ndarray, np.ndarray]:
    """Closest-point projection onto Γ without the tube check.

    Returns (s, params) for points of shape (P, N): s is positive outside the
    enclosed region and point = chart(params) + s n(params) whenever |s| < reach.
    """
    x = np.asarray(points, dtype=float).reshape(-1, surface.dimension_ambient)
    v = x - np.asarray(surface.center)
    if surface.kind is SurfaceKind.CIRCLE:
        r = np.hypot(v[:, 0], v[:, 1])
        theta = np.mod(np.arctan2(v[:, 1], v[:, 0]), TWO_PI)
        return r - surface.radius, theta[:, None]
    if surface.kind is SurfaceKind.SPHERE:
        r = np.linalg.norm(v, axis=-1)
        cos_t = np.divide(v[:, 2], r, out=np.ones_like(r), where=r > 0)
        theta = np.arccos(np.clip(cos_t, -1.0, 1.0))
        phi = np.mod(np.arctan2(v[:, 1], v[:, 0]), TWO_PI)
        return r - surface.radius, np.stack([theta, phi], axis=-1)
    if surface.kind is SurfaceKind.TORUS:
        rho = np.hypot(v[:, 0], v[:, 1])
        u = np.mod(np.arctan2(v[:, 1], v[:, 0]), TWO_PI)
        w = rho - surface.r_major
        vv = np.mod(np.arctan2(v[:, 2], w), TWO_PI)
        return np.hypot(w, v[:, 2]) - surface.r_minor, np.stack([u, vv], axis=-1)
    return _project_ellipse(surface, v)


def _project_ellipse(surface, v):
    a, b = surface.semi_axes
    count = v.shape[0]
    if count == 1:
        # the array Newton path needs more than one starting point
        s, params = _project_ellipse(surface, np.repeat(v, 2, axis=0))
        return s[:1], params[:1]

    scan = TWO_PI * np.arange(SCAN_SAMPLES) / SCAN_SAMPLES
    curve = np.stack([a * np.cos(scan), b * np.sin(scan)], axis=-1)
    theta0 = np.empty(count)
    step = max(1, settings.CHUNK_POINTS // SCAN_SAMPLES)
    for start in range(0, count, step):
        chunk = v[start:start + step]
        d2 = np.sum((chunk[:, None, :] - curve[None, :, :]) ** 2, axis=-1)
        theta0[start:start + step] = scan[np.argmin(d2, axis=1)]

    # D(θ) = |p(θ) - v|^2 / 2 ; Newton-Halley on D'(θ) = 0
    def d1(th):
        c, s = np.cos(th), np.sin(th)
        return (a * c - v[:, 0]) * (-a * s) + (b * s - v[:, 1]) * (b * c)

    def d2(th):
        c, s = np.cos(th), np.sin(th)
        return (a * s) ** 2 + (b * c) ** 2 + (a * c - v[:, 0]) * (-a * c) + (b * s - v[:, 1]) * (-b * s)

    def d3(th):
        c, s = np.cos(th), np.sin(th)
        tangent_dot = (-a * s) * (-a * c) + (b * c) * (-b * s)
        return 3.0 * tangent_dot + (a * c - v[:, 0]) * (a * s) + (b * s - v[:, 1]) * (-b * c)

    try:
        theta, converged, _ = optimize.newton(d1, theta0, fprime=d2, fprime2=d3, tol=NEWTON_TOL,
                                             maxiter=NEWTON_MAXITER, full_output=True)
    except RuntimeError as e:
        raise ConvergenceError(f"ellipse closest point did not converge in {NEWTON_MAXITER} iterations: {e}")
    if not np.all(converged):
        raise ConvergenceError(
            f"ellipse closest point did not converge in {NEWTON_MAXITER} iterations "
            f"for {int(np.count_nonzero(~converged))} of {count} points"
        )
    theta = np.mod(theta, TWO_PI)
    foot = np.stack([a * np.cos(theta), b * np.sin(theta)], axis=-1)
    normal = np.stack([b * np.cos(theta), a * np.sin(theta)], axis=-1)
    normal /= np.linalg.norm(normal, axis=-1, keepdims=True)
    s = np.sum((v - foot) * normal, axis=-1)
    return s, theta[:, None]


def signed_distance(surface: Hypersurface, point):
    """Signed distance and foot parameters; positive outside the enclosed region.

    A single point returns (float, tuple); a batch (P, N) returns arrays.
    """
    x = np.asarray(point, dtype=float)
    single = x.ndim == 1
    s, params = project(surface, x)
    outside = np.abs(s) >= surface.reach
    if np.any(outside):
        worst = float(np.max(np.abs(s)))
        raise OutOfTubeError(f"point at distance {worst:.6g} is outside the tube of reach {surface.reach:.6g}")
    if single:
        return float(s[0]), tuple(float(p) for p in params[0])
    return s, params


# ---------------------------------------------------------------------------
# Tube quadrature
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TubeQuadrature:
    """Product rule: surface nodes × composite Gauss-Legendre nodes in s ∈ [-s_max, s_max].

    The change of variables x = p(y) + s n(y) contributes the Jacobian
    ∏(1 + s κ_i) (see `tube_jacobian`), positive because s_max < reach.
    """
    surface: Hypersurface
    normal_nodes: np.ndarray
    normal_weights: np.ndarray
    s_max: float

    @property
    def surface_nodes(self) -> tuple[np.ndarray, np.ndarray]:
        return surface_nodes(self.surface)

    @property
    def size(self) -> int:
        return len(self.surface_nodes[1]) * len(self.normal_nodes)


def build_tube(surface: Hypersurface, s_max: float, panel_width: float | None = None,
               nodes_per_panel: int = DEFAULT_NODES_PER_PANEL) -> TubeQuadrature:
    if not 0.0 < s_max < surface.reach:
        raise ConfigurationError(f"tube half-width {s_max:.6g} must lie in (0, reach={surface.reach:.6g})")
    if nodes_per_panel < 2:
        raise ConfigurationError("nodes_per_panel must be at least 2")
    width = panel_width if panel_width and panel_width > 0 else 2.0 * s_max
    panels = max(1, math.ceil(2.0 * s_max / width - 1e-9))
    panels = max(panels, math.ceil(MIN_NORMAL_NODES / nodes_per_panel))
    x, w = leggauss(nodes_per_panel)
    edges = np.linspace(-s_max, s_max, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    logger.debug("tube on %s: s_max=%.4g, %d panels x %d nodes", surface.kind.value, s_max, panels, nodes_per_panel)
    return TubeQuadrature(surface, nodes, weights, float(s_max))


def tube_jacobian(frame: SurfaceFrame, s) -> np.ndarray:
    """∏_i (1 + s κ_i): volume factor of x = p + s n."""
    kappa = frame.principal_curvatures
    return np.prod(1.0 + np.asarray(s)[..., None] * kappa, axis=-1)


def tube_integral(surface: Hypersurface, quad: TubeQuadrature,
                  integrand: Callable[[SurfaceFrame, np.ndarray, np.ndarray], np.ndarray]):
    """∑ weights · integrand(frame, s, x) · ∏(1 + s κ_i) over the tube.

    The integrand receives the foot frames (repeated per normal node), the signed
    distances s and the ambient points x, flattened to one axis. Evaluation is
    chunked over surface nodes; chunk partials are combined with fsum so the result
    is deterministic for a given node count.
    """
    if quad.surface != surface:
        raise ConfigurationError("tube quadrature was built for a different surface")
    frame, sweights = surface_frames(surface)
    m = len(quad.normal_nodes)
    block = max(1, settings.CHUNK_POINTS // m)
    partials = []
    for start in range(0, len(frame), block):
        sub = frame[start:start + block]
        kc = len(sub)
        kappa = np.repeat(sub.principal_curvatures, m, axis=0)
        rep = sub.repeat(m)
        s = np.tile(quad.normal_nodes, kc)
        x = rep.point + s[:, None] * rep.normal
        jac = np.prod(1.0 + s[:, None] * kappa, axis=-1)
        w = np.repeat(sweights[start:start + block], m) * np.tile(quad.normal_weights, kc) * jac
        values = np.asarray(integrand(rep, s, x), dtype=float)
        if values.ndim == 1:
            partials.append(np.sum(w * values))
        else:
            partials.append(np.sum(w[:, None] * values, axis=0))
    if np.ndim(partials[0]) == 0:
        return math.fsum(float(p) for p in partials)
    stacked = np.stack(partials)
    return np.array([math.fsum(stacked[:, q]) for q in range(stacked.shape[1])])
