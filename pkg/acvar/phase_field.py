"""
Layered phase fields u^ε concentrating on a hypersurface, and the Allen-Cahn energy
E_ε(u) = ∫ ε|∇u|²/2 + W(u)/ε with its inner variations and measure pairings.

A field is a sum of tanh profiles of the scaled signed distance. Since |∇d| = 1 in
the tube, ∇u = (du/ds) n(foot), so every integrand is written in terms of the
profile derivative along s and the foot-point frame.
"""

import math
import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable

import numpy as np

from .errors import DomainError
from .fields import AmbientScalarField, AmbientVectorField
from .geometry import (
    DEFAULT_NODES_PER_PANEL,
    Hypersurface,
    TubeQuadrature,
    build_tube,
    foot_frames,
    project,
    tube_integral,
)
from .sharp_interface import SVEP_TERMS, VariationReport

logger = logging.getLogger(__name__)

TAIL_WIDTH = 12.0           # tube half-width in units of ε beyond the outermost layer
TUBE_REACH_FRACTION = 0.9
DEFAULT_LAYER_SPACING = 2.0


def double_well(u):
    """W(u) = ½(1 − u²)²."""
    return 0.5 * (1.0 - np.square(u)) ** 2


def optimal_profile(s):
    """q(s) = tanh s and q'(s) = 1 − q², so that q' = √(2W(q))."""
    q = np.tanh(s)
    return q, 1.0 - q * q


@dataclass(frozen=True)
class Layer:
    offset: float
    sign: int


@dataclass(frozen=True)
class EnergyDensity:
    gradient_part: np.ndarray
    potential_part: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.gradient_part + self.potential_part


def default_layers(epsilon: float, m: int, spacing: float = DEFAULT_LAYER_SPACING) -> tuple[Layer, ...]:
    """m layers at offsets (j − (m−1)/2)·spacing·√ε with alternating orientation."""
    if m < 0:
        raise DomainError(f"number of layers must be non-negative, got {m}")
    step = spacing * math.sqrt(epsilon)
    return tuple(Layer((j - 0.5 * (m - 1)) * step, 1 if j % 2 == 0 else -1) for j in range(m))


@dataclass(frozen=True, eq=False)
class PhaseField:
    """u(x) = Σ_j s_j q((d(x) − a_j)/ε) + c, with c chosen so u = −s_0 inside Γ.

    Outside the tube u is clamped to its far value on each side and ∇u = 0.
    """
    surface: Hypersurface
    epsilon: float
    layers: tuple[Layer, ...]
    nodes_per_panel: int = DEFAULT_NODES_PER_PANEL
    tail_width: float = TAIL_WIDTH

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.epsilon > 0:
            raise DomainError(f"epsilon must be positive, got {self.epsilon}")
        offsets = [layer.offset for layer in self.layers]
        if any(b <= a for a, b in zip(offsets, offsets[1:])):
            raise DomainError(f"layer offsets must be strictly increasing, got {offsets}")
        if any(layer.sign not in (1, -1) for layer in self.layers):
            raise DomainError("layer orientations must be +1 or -1")
        if any(a.sign == b.sign for a, b in zip(self.layers, self.layers[1:])):
            raise DomainError("adjacent layers must have opposite orientations")
        for a in offsets:
            if abs(a) + self.tail_width * self.epsilon >= self.surface.reach:
                raise DomainError(
                    f"layer at offset {a:.4g} with eps={self.epsilon:g} does not fit in the tube "
                    f"(reach {self.surface.reach:.4g})"
                )

    @property
    def multiplicity(self) -> int:
        return len(self.layers)

    @property
    def shift(self) -> float:
        if not self.layers:
            return 1.0
        return float(sum(layer.sign for layer in self.layers) - self.layers[0].sign)

    @property
    def inner_value(self) -> float:
        return -float(self.layers[0].sign) if self.layers else 1.0

    @property
    def outer_value(self) -> float:
        if not self.layers:
            return 1.0
        return float(2 * sum(layer.sign for layer in self.layers) - self.layers[0].sign)

    @property
    def far_value(self) -> float:
        return self.outer_value

    @property
    def s_max(self) -> float:
        widest = max((abs(layer.offset) for layer in self.layers), default=0.0)
        return min(self.tail_width * self.epsilon + widest, TUBE_REACH_FRACTION * self.surface.reach)

    @cached_property
    def quadrature(self) -> TubeQuadrature:
        return build_tube(self.surface, self.s_max, panel_width=2.0 * self.epsilon,
                          nodes_per_panel=self.nodes_per_panel)

    def profile(self, s):
        """u and du/ds as functions of the signed distance, inside the tube."""
        s = np.asarray(s, dtype=float)
        u = np.full(s.shape, self.shift)
        du = np.zeros(s.shape)
        for layer in self.layers:
            q, dq = optimal_profile((s - layer.offset) / self.epsilon)
            u += layer.sign * q
            du += layer.sign * dq / self.epsilon
        return u, du

    def energy_density(self, s) -> EnergyDensity:
        u, du = self.profile(s)
        return EnergyDensity(0.5 * self.epsilon * du * du, double_well(u) / self.epsilon)

    def evaluate(self, x):
        """u(x) and ∇u(x) for points of shape (..., N)."""
        x = np.asarray(x, dtype=float)
        batch = x.reshape(-1, self.surface.dimension_ambient)
        s, params = project(self.surface, batch)
        inside = np.abs(s) < self.s_max
        u = np.where(s < 0, self.inner_value, self.outer_value).astype(float)
        grad = np.zeros_like(batch)
        if np.any(inside):
            ui, dui = self.profile(s[inside])
            u[inside] = ui
            grad[inside] = dui[:, None] * foot_frames(self.surface, params[inside]).normal
        return u.reshape(x.shape[:-1]), grad.reshape(x.shape)

    def value(self, x) -> np.ndarray:
        return self.evaluate(x)[0]

    def gradient(self, x) -> np.ndarray:
        return self.evaluate(x)[1]


def layered_field(surface: Hypersurface, epsilon: float, layers: Iterable = None, m: int = 1,
                  spacing: float = DEFAULT_LAYER_SPACING,
                  nodes_per_panel: int = DEFAULT_NODES_PER_PANEL) -> PhaseField:
    """Build a PhaseField from explicit layers ((offset, sign) pairs or Layer) or from m."""
    if layers is None:
        built = default_layers(epsilon, m, spacing)
    else:
        built = tuple(layer if isinstance(layer, Layer) else Layer(float(layer[0]), int(layer[1]))
                      for layer in layers)
    return PhaseField(surface, float(epsilon), built, nodes_per_panel=nodes_per_panel)


# ---------------------------------------------------------------------------
# Energies and variations
# ---------------------------------------------------------------------------

def _integrate(field: PhaseField, integrand):
    if not field.layers:
        return 0.0
    return tube_integral(field.surface, field.quadrature, integrand)


def ac_energy(field: PhaseField) -> float:
    value = _integrate(field, lambda frame, s, x: field.energy_density(s).total)
    logger.debug("E_eps(eps=%g, m=%d) = %.12g", field.epsilon, field.multiplicity, value)
    return value


def ac_first_inner_variation(field: PhaseField, eta: AmbientVectorField) -> float:
    """∫ (ε|∇u|²/2 + W(u)/ε) div η − ε(∇u, ∇u·∇η)."""
    def integrand(frame, s, x):
        density = field.energy_density(s).total
        _, du = field.profile(s)
        M = eta.jacobian(x)
        n = frame.normal
        nMn = np.einsum("ki,kij,kj->k", n, M, n)
        return density * np.trace(M, axis1=-2, axis2=-1) - field.epsilon * du * du * nMn
    return _integrate(field, integrand)


def ac_second_inner_variation(field: PhaseField, eta: AmbientVectorField,
                              zeta: AmbientVectorField) -> VariationReport:
    """Second inner variation as six separately integrated terms.

    With e the energy density, M = ∇η, C = ∇ζ and g = ε|∇u|²:
        e·div ζ,  e·[(div η)² − tr M²],  g|M^T n|²,  2g n·M²n,  −g n·Cn,  −2g (n·Mn) div η
    """
    def integrand(frame, s, x):
        density = field.energy_density(s).total
        _, du = field.profile(s)
        g = field.epsilon * du * du
        M = eta.jacobian(x)
        C = zeta.jacobian(x)
        n = frame.normal
        div_eta = np.trace(M, axis1=-2, axis2=-1)
        M2 = np.einsum("kij,kjl->kil", M, M)
        MTn = np.einsum("kij,ki->kj", M, n)
        nMn = np.einsum("ki,kij,kj->k", n, M, n)
        return np.stack([
            density * np.trace(C, axis1=-2, axis2=-1),
            density * (div_eta ** 2 - np.trace(M2, axis1=-2, axis2=-1)),
            g * np.sum(MTn ** 2, axis=-1),
            2.0 * g * np.einsum("ki,kij,kj->k", n, M2, n),
            -g * np.einsum("ki,kij,kj->k", n, C, n),
            -2.0 * g * nMn * div_eta,
        ], axis=-1)

    if not field.layers:
        return VariationReport.from_terms({name: 0.0 for name in SVEP_TERMS})
    terms = _integrate(field, integrand)
    return VariationReport.from_terms(dict(zip(SVEP_TERMS, terms)))


# ---------------------------------------------------------------------------
# Measures
# ---------------------------------------------------------------------------

def energy_measure_pairing(field: PhaseField, phi: AmbientScalarField) -> float:
    """∫ (ε|∇u|²/2 + W(u)/ε) φ."""
    return _integrate(field, lambda frame, s, x: field.energy_density(s).total * phi.value(x))


def stress_pairing(field: PhaseField, eta: AmbientVectorField) -> float:
    """∫ ε(∇u, ∇u·∇η)."""
    def integrand(frame, s, x):
        _, du = field.profile(s)
        n = frame.normal
        return field.epsilon * du * du * np.einsum("ki,kij,kj->k", n, eta.jacobian(x), n)
    return _integrate(field, integrand)


def equipartition_defect(field: PhaseField) -> float:
    """∫ |ε|∇u|²/2 − W(u)/ε|."""
    def integrand(frame, s, x):
        density = field.energy_density(s)
        return np.abs(density.gradient_part - density.potential_part)
    return _integrate(field, integrand)
