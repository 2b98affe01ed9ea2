"""
Vector and scalar fields used as deformation velocities, test functions and
surface functions.

An AmbientVectorField evaluates value and Jacobian together on a batch of points
(P, N); the Jacobian convention is (∇η)_ij = ∂η^i/∂x_j. SurfaceFunctions live on
the chart parameters of a Hypersurface and provide parameter gradients, from which
frames build tangential gradients.
"""

import math
import logging
from dataclasses import dataclass
from enum import Enum
from itertools import product
from typing import Callable, Mapping, Sequence, Union

import numpy as np
from scipy.special import gammaln, lpmv

from .errors import DomainError
from .geometry import Hypersurface, SurfaceFrame, foot_frames, frames, pole_gradient, project, sphere_poles

logger = logging.getLogger(__name__)

MAX_POLYNOMIAL_DEGREE = 3
CUTOFF_START = 0.9    # fraction of reach where the normal extension starts to fade
CUTOFF_END = 0.95     # fraction of reach where it vanishes


class FieldFamily(str, Enum):
    ZERO = "zero"
    CONSTANT = "constant"
    ROTATION = "rotation"
    DILATION = "dilation"
    LINEAR = "linear"
    POLYNOMIAL = "polynomial"
    NORMAL_EXTENSION = "normal_extension"
    COMBINATION = "combination"


def _batch(x, dimension: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != dimension:
        raise DomainError(f"expected points in R^{dimension}, got shape {x.shape}")
    return x.reshape(-1, dimension)


# ── Polynomial machinery ─────────────────────────────────────────────────────

def _parse_terms(terms, dimension: int, width: int):
    """Normalize polynomial terms to (exponents (T, N), coefficients (T, width))."""
    if isinstance(terms, Mapping):
        items = list(terms.items())
    else:
        items = [(power, coefficient) for power, coefficient in terms]
    if not items:
        return np.zeros((0, dimension), dtype=int), np.zeros((0, width))
    exponents = np.array([tuple(int(e) for e in power) for power, _ in items], dtype=int)
    coefficients = np.array([np.broadcast_to(np.asarray(c, dtype=float), (width,)) for _, c in items])
    if exponents.shape[1] != dimension:
        raise DomainError(f"monomial exponents must have {dimension} entries")
    if np.any(exponents < 0):
        raise DomainError("monomial exponents must be non-negative")
    degree = int(exponents.sum(axis=1).max())
    if degree > MAX_POLYNOMIAL_DEGREE:
        raise DomainError(f"polynomial degree {degree} exceeds {MAX_POLYNOMIAL_DEGREE}")
    return exponents, coefficients


def _monomials(x: np.ndarray, exponents: np.ndarray):
    """Monomial values (P, T) and their gradients (P, T, N)."""
    count, dimension = x.shape
    powers = x[:, None, :] ** exponents[None, :, :]
    values = np.prod(powers, axis=-1)
    lowered = x[:, None, :] ** np.maximum(exponents - 1, 0)[None, :, :]
    grads = np.empty((count, exponents.shape[0], dimension))
    for j in range(dimension):
        others = np.prod(np.delete(powers, j, axis=-1), axis=-1)
        grads[:, :, j] = exponents[None, :, j] * lowered[:, :, j] * others
    return values, grads


def _all_exponents(dimension: int, degree: int) -> list[tuple[int, ...]]:
    return [e for e in product(range(degree + 1), repeat=dimension) if sum(e) <= degree]


# ── Vector fields ────────────────────────────────────────────────────────────

Evaluator = Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]]


@dataclass(frozen=True, eq=False)
class AmbientVectorField:
    """Velocity or acceleration field η, ζ on R^N.

    `support_radius` is None when the field is defined on the entire domain.
    """
    family: FieldFamily
    dimension: int
    evaluate: Evaluator
    support_radius: float | None = None
    label: str = ""

    def value(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        v, _ = self.evaluate(_batch(x, self.dimension))
        return v.reshape(x.shape)

    def jacobian(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        _, J = self.evaluate(_batch(x, self.dimension))
        return J.reshape(x.shape + (self.dimension,))

    def divergence(self, x) -> np.ndarray:
        return np.trace(self.jacobian(x), axis1=-2, axis2=-1)

    def _combine(self, other: "AmbientVectorField", a: float, b: float, label: str) -> "AmbientVectorField":
        if other.dimension != self.dimension:
            raise DomainError("cannot combine fields of different dimension")

        def evaluate(x):
            v1, j1 = self.evaluate(x)
            v2, j2 = other.evaluate(x)
            return a * v1 + b * v2, a * j1 + b * j2

        support = None
        if self.support_radius is not None and other.support_radius is not None:
            support = max(self.support_radius, other.support_radius)
        return AmbientVectorField(FieldFamily.COMBINATION, self.dimension, evaluate, support, label)

    def __add__(self, other):
        return self._combine(other, 1.0, 1.0, f"({self.label} + {other.label})")

    def __sub__(self, other):
        return self._combine(other, 1.0, -1.0, f"({self.label} - {other.label})")

    def __mul__(self, scale):
        scale = float(scale)

        def evaluate(x):
            v, J = self.evaluate(x)
            return scale * v, scale * J

        return AmbientVectorField(FieldFamily.COMBINATION, self.dimension, evaluate,
                                  self.support_radius, f"{scale:g}*{self.label}")

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0


def zero(dimension: int) -> AmbientVectorField:
    def evaluate(x):
        return np.zeros_like(x), np.zeros(x.shape + (dimension,))
    return AmbientVectorField(FieldFamily.ZERO, dimension, evaluate, label="0")


def constant(vector: Sequence[float]) -> AmbientVectorField:
    c = np.asarray(vector, dtype=float)
    dimension = c.shape[0]

    def evaluate(x):
        return np.broadcast_to(c, x.shape).copy(), np.zeros(x.shape + (dimension,))

    return AmbientVectorField(FieldFamily.CONSTANT, dimension, evaluate, label=f"const{tuple(c.tolist())}")


def linear(matrix, offset: Sequence[float] | None = None) -> AmbientVectorField:
    """η(x) = M x + b."""
    M = np.asarray(matrix, dtype=float)
    dimension = M.shape[0]
    if M.shape != (dimension, dimension):
        raise DomainError(f"linear field needs a square matrix, got {M.shape}")
    b = np.zeros(dimension) if offset is None else np.asarray(offset, dtype=float)

    def evaluate(x):
        return x @ M.T + b, np.broadcast_to(M, x.shape + (dimension,)).copy()

    return AmbientVectorField(FieldFamily.LINEAR, dimension, evaluate, label="linear")


def dilation(center: Sequence[float]) -> AmbientVectorField:
    """η(x) = x − center."""
    c = np.asarray(center, dtype=float)
    field = linear(np.eye(c.shape[0]), -c)
    return AmbientVectorField(FieldFamily.DILATION, field.dimension, field.evaluate, label="x")


def rotation(center: Sequence[float], axis: Sequence[float] | None = None) -> AmbientVectorField:
    """Infinitesimal rigid rotation about `center` (about `axis` in R^3, default e_3)."""
    c = np.asarray(center, dtype=float)
    dimension = c.shape[0]
    if dimension == 2:
        M = np.array([[0.0, -1.0], [1.0, 0.0]])
    else:
        w = np.array([0.0, 0.0, 1.0]) if axis is None else np.asarray(axis, dtype=float)
        M = np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])
    field = linear(M, -M @ c)
    return AmbientVectorField(FieldFamily.ROTATION, dimension, field.evaluate, label="rotation")


def polynomial(terms, dimension: int) -> AmbientVectorField:
    """Vector polynomial of degree ≤ 3.

    `terms` maps a multi-index (exponent per coordinate) to the vector coefficient
    of that monomial, e.g. {(1, 0): (1.0, 0.0), (0, 2): (0.0, 0.5)}.
    """
    exponents, coefficients = _parse_terms(terms, dimension, dimension)

    def evaluate(x):
        values, grads = _monomials(x, exponents)
        return values @ coefficients, np.einsum("ti,ptj->pij", coefficients, grads)

    return AmbientVectorField(FieldFamily.POLYNOMIAL, dimension, evaluate, label="polynomial")


def random_polynomial(dimension: int, degree: int = MAX_POLYNOMIAL_DEGREE, seed: int = 0,
                      scale: float = 1.0) -> AmbientVectorField:
    """Seeded random vector polynomial with standard normal coefficients times `scale`."""
    if not 0 <= degree <= MAX_POLYNOMIAL_DEGREE:
        raise DomainError(f"degree must lie in [0, {MAX_POLYNOMIAL_DEGREE}]")
    rng = np.random.default_rng(seed)
    exps = _all_exponents(dimension, degree)
    coefficients = scale * rng.standard_normal((len(exps), dimension))
    field = polynomial(dict(zip(exps, coefficients)), dimension)
    return AmbientVectorField(FieldFamily.POLYNOMIAL, dimension, field.evaluate,
                              label=f"random_poly(deg={degree}, seed={seed})")


# ── Scalar fields ────────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class AmbientScalarField:
    """Test function φ on R^N; `evaluate` returns (value (P,), gradient (P, N) or None)."""
    dimension: int
    evaluate: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray | None]]
    label: str = ""

    def value(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        v, _ = self.evaluate(_batch(x, self.dimension))
        return v.reshape(x.shape[:-1])

    def gradient(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        _, g = self.evaluate(_batch(x, self.dimension))
        if g is None:
            raise DomainError(f"scalar field {self.label!r} has no gradient")
        return g.reshape(x.shape)

    def __call__(self, x) -> np.ndarray:
        return self.value(x)


def scalar_polynomial(terms, dimension: int) -> AmbientScalarField:
    """Scalar polynomial of degree ≤ 3 from {multi-index: coefficient}."""
    exponents, coefficients = _parse_terms(terms, dimension, 1)
    c = coefficients[:, 0]

    def evaluate(x):
        values, grads = _monomials(x, exponents)
        return values @ c, np.einsum("t,ptj->pj", c, grads)

    return AmbientScalarField(dimension, evaluate, label="polynomial")


def scalar_constant(value: float, dimension: int) -> AmbientScalarField:
    return scalar_polynomial({(0,) * dimension: value}, dimension)


def random_scalar_polynomial(dimension: int, degree: int = 2, seed: int = 0) -> AmbientScalarField:
    if not 0 <= degree <= MAX_POLYNOMIAL_DEGREE:
        raise DomainError(f"degree must lie in [0, {MAX_POLYNOMIAL_DEGREE}]")
    rng = np.random.default_rng(seed)
    exps = _all_exponents(dimension, degree)
    field = scalar_polynomial(dict(zip(exps, rng.standard_normal(len(exps)))), dimension)
    return AmbientScalarField(dimension, field.evaluate, label=f"random_poly(deg={degree}, seed={seed})")


# ── Surface functions ────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class SurfaceFunction:
    """f on Γ, written in chart parameters.

    `evaluate(params)` returns the values (K,) and parameter gradients (K, N-1).
    """
    evaluate: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]]
    label: str = ""

    def value(self, frame: SurfaceFrame) -> np.ndarray:
        v, _ = self.evaluate(np.atleast_2d(frame.params))
        return v if frame.params.ndim > 1 else v[0]

    def tangential_gradient(self, frame: SurfaceFrame) -> np.ndarray:
        _, g = self.evaluate(np.atleast_2d(frame.params))
        if frame.params.ndim == 1:
            g = g[0]
        return frame.tangential_gradient(g)

    def _combine(self, other: "SurfaceFunction", a: float, b: float, label: str) -> "SurfaceFunction":
        def evaluate(params):
            v1, g1 = self.evaluate(params)
            v2, g2 = other.evaluate(params)
            return a * v1 + b * v2, a * g1 + b * g2
        return SurfaceFunction(evaluate, label)

    def __add__(self, other):
        return self._combine(other, 1.0, 1.0, f"({self.label} + {other.label})")

    def __sub__(self, other):
        return self._combine(other, 1.0, -1.0, f"({self.label} - {other.label})")

    def __mul__(self, scale):
        scale = float(scale)

        def evaluate(params):
            v, g = self.evaluate(params)
            return scale * v, scale * g

        return SurfaceFunction(evaluate, f"{scale:g}*{self.label}")

    __rmul__ = __mul__


def surface_constant(value: float) -> SurfaceFunction:
    def evaluate(params):
        return np.full(params.shape[0], float(value)), np.zeros_like(params)
    return SurfaceFunction(evaluate, f"{value:g}")


def fourier_mode(k: int, parity: str = "cos", axis: int = 0, amplitude: float = 1.0) -> SurfaceFunction:
    """cos(kθ) or sin(kθ) in the chart parameter number `axis`."""
    if parity not in ("cos", "sin"):
        raise DomainError(f"parity must be 'cos' or 'sin', got {parity!r}")

    def evaluate(params):
        th = params[:, axis]
        grad = np.zeros_like(params)
        if parity == "cos":
            value = amplitude * np.cos(k * th)
            grad[:, axis] = -amplitude * k * np.sin(k * th)
        else:
            value = amplitude * np.sin(k * th)
            grad[:, axis] = amplitude * k * np.cos(k * th)
        return value, grad

    return SurfaceFunction(evaluate, f"{parity}({k}θ)")


def _legendre_theta(l: int, m: int, theta: np.ndarray):
    """P_l^m(cos θ) and its θ-derivative (Condon-Shortley phase, as scipy)."""
    x = np.cos(theta)
    value = lpmv(m, l, x)
    upper = lpmv(m + 1, l, x) if m + 1 <= l else np.zeros_like(x)
    if m == 0:
        deriv = upper
    else:
        deriv = 0.5 * (upper - (l + m) * (l - m + 1) * lpmv(m - 1, l, x))
    return value, deriv


def spherical_harmonic(l: int, m: int, parity: str = "cos") -> SurfaceFunction:
    """Real spherical harmonic of degree l, order m ≥ 0 on the sphere chart (θ, φ).

    Normalized to unit L² norm on the unit sphere.
    """
    if not 0 <= m <= l:
        raise DomainError(f"spherical harmonic needs 0 <= m <= l, got l={l}, m={m}")
    if parity not in ("cos", "sin"):
        raise DomainError(f"parity must be 'cos' or 'sin', got {parity!r}")
    if m == 0 and parity == "sin":
        raise DomainError("sin parity is empty for m = 0")
    log_norm = 0.5 * (math.log((2 * l + 1) / (4.0 * math.pi)) + gammaln(l - m + 1) - gammaln(l + m + 1))
    norm = math.exp(log_norm) * (math.sqrt(2.0) if m > 0 else 1.0)

    def evaluate(params):
        theta, phi = params[:, 0], params[:, 1]
        P, dP = _legendre_theta(l, m, theta)
        if parity == "cos":
            ang, dang = np.cos(m * phi), -m * np.sin(m * phi)
        else:
            ang, dang = np.sin(m * phi), m * np.cos(m * phi)
        value = norm * P * ang
        grad = np.stack([norm * dP * ang, norm * P * dang], axis=-1)
        return value, grad

    return SurfaceFunction(evaluate, f"Y({l},{m},{parity})")


def restriction(surface: Hypersurface, phi: AmbientScalarField) -> SurfaceFunction:
    """φ restricted to Γ; parameter gradient J^T ∇φ."""

    def evaluate(params):
        frame = frames(surface, params)
        v, g = phi.evaluate(frame.point)
        if g is None:
            raise DomainError(f"scalar field {phi.label!r} has no gradient")
        J = np.einsum("kni,kij->knj", frame.tangents, frame.chart_factor)
        return v, np.einsum("kni,kn->ki", J, g)

    return SurfaceFunction(evaluate, f"{phi.label}|Γ")


# ── Normal extension ─────────────────────────────────────────────────────────

def _cutoff(s: np.ndarray, reach: float):
    """C² quintic step in |s|: 1 up to CUTOFF_START·reach, 0 from CUTOFF_END·reach; (χ, dχ/ds)."""
    start, width = CUTOFF_START * reach, (CUTOFF_END - CUTOFF_START) * reach
    t = np.clip((np.abs(s) - start) / width, 0.0, 1.0)
    chi = 1.0 - t ** 3 * (10.0 - 15.0 * t + 6.0 * t ** 2)
    dchi = -30.0 * t ** 2 * (1.0 - t) ** 2 / width * np.sign(s)
    return chi, dchi


def normal_extension(surface: Hypersurface, f: Union[SurfaceFunction, float]) -> AmbientVectorField:
    """η̃(p(y) + s n(y)) = χ(s) f(y) n(y): constant along normals inside the uncut tube."""
    if not isinstance(f, SurfaceFunction):
        f = surface_constant(float(f))
    reach = surface.reach
    dimension = surface.dimension_ambient
    eye = np.eye(dimension - 1)

    def evaluate(x):
        value = np.zeros_like(x)
        jac = np.zeros(x.shape + (dimension,))
        s_all, params_all = project(surface, x)
        inside = np.abs(s_all) < CUTOFF_END * reach
        if not np.any(inside):
            return value, jac
        s, params = s_all[inside], params_all[inside]
        frame = foot_frames(surface, params)
        fv, fg = f.evaluate(params)
        grad_f = frame.tangential_gradient(fg)
        poles = sphere_poles(surface, params)
        if np.any(poles):
            grad_f[poles] = pole_gradient(surface, f.evaluate, params[poles])
        n, T, A = frame.normal, frame.tangents, frame.shape_operator
        inv = np.linalg.inv(eye + s[:, None, None] * A)
        # ∇(f∘π) = T (I + sA)^{-1} T^T ∇^Γ f ;  ∇(n∘π) = T A (I + sA)^{-1} T^T
        grad_f_pi = np.einsum("kni,kij,kmj,km->kn", T, inv, T, grad_f)
        grad_n = np.einsum("kni,kij,kjl,kml->knm", T, A, inv, T)
        chi, dchi = _cutoff(s, reach)
        outer_nn = n[:, :, None] * n[:, None, :]
        value[inside] = (chi * fv)[:, None] * n
        jac[inside] = (chi[:, None, None] * (n[:, :, None] * grad_f_pi[:, None, :] + fv[:, None, None] * grad_n)
                       + (fv * dchi)[:, None, None] * outer_nn)
        return value, jac

    return AmbientVectorField(FieldFamily.NORMAL_EXTENSION, dimension, evaluate,
                              support_radius=CUTOFF_END * reach, label=f"ext({f.label})")
