"""
Experiment configuration: TOML files parsed into strict pydantic models.

The same models are the JSON request bodies of the HTTP routes. Unknown keys are
rejected, and every validation failure surfaces as a ConfigurationError.
"""

import logging
import math
from enum import Enum
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import fields as vf
from .errors import ConfigurationError, LabError
from .geometry import DEFAULT_NODES_PER_PANEL, Hypersurface, SurfaceKind
from .phase_field import DEFAULT_LAYER_SPACING, TAIL_WIDTH, Layer, default_layers

logger = logging.getLogger(__name__)


class ExperimentKind(str, Enum):
    ENERGY = "energy"
    FIRST_VAR = "first-var"
    SECOND_VAR = "second-var"
    MEASURE = "measure"
    STRESS = "stress"
    EQUIPARTITION = "equipartition"
    DISCREPANCY = "discrepancy"
    MULTIPLICITY = "multiplicity"


DEFAULT_SCHEDULE_2D = (0.04, 0.02, 0.01, 0.005, 0.0025)
DEFAULT_SCHEDULE_3D = (0.04, 0.02, 0.01, 0.005)


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


# ── Surface ───────────────────────────────────────────────────────

class SurfaceSpec(StrictModel):
    kind: SurfaceKind
    radius: Optional[float] = None
    semi_axes: Optional[tuple[float, float]] = None
    r_major: Optional[float] = None
    r_minor: Optional[float] = None
    center: Optional[list[float]] = None
    nodes_theta: Optional[int] = Field(default=None, ge=4)
    nodes_phi: Optional[int] = Field(default=None, ge=4)
    nodes_normal: int = Field(default=DEFAULT_NODES_PER_PANEL, ge=2)
    s_max_over_eps: float = Field(default=TAIL_WIDTH, gt=0)

    @model_validator(mode="after")
    def _required_keys(self):
        if self.kind in (SurfaceKind.CIRCLE, SurfaceKind.SPHERE) and self.radius is None:
            raise ValueError(f"{self.kind.value} needs 'radius'")
        if self.kind is SurfaceKind.ELLIPSE and self.semi_axes is None:
            raise ValueError("ellipse needs 'semi_axes'")
        if self.kind is SurfaceKind.TORUS and (self.r_major is None or self.r_minor is None):
            raise ValueError("torus needs 'r_major' and 'r_minor'")
        return self

    @property
    def dimension(self) -> int:
        return 2 if self.kind in (SurfaceKind.CIRCLE, SurfaceKind.ELLIPSE) else 3

    def build(self) -> Hypersurface:
        center = tuple(self.center) if self.center is not None else (0.0,) * self.dimension
        return Hypersurface(
            self.kind, center,
            radius=self.radius, semi_axes=self.semi_axes,
            r_major=self.r_major, r_minor=self.r_minor,
            nodes_theta=self.nodes_theta, nodes_phi=self.nodes_phi,
        )


# ── Fields ────────────────────────────────────────────────────────

class PolynomialTerm(StrictModel):
    power: list[int]
    coefficient: list[float]


class ScalarTerm(StrictModel):
    power: list[int]
    coefficient: float


class SurfaceFunctionSpec(StrictModel):
    kind: Literal["constant", "fourier", "harmonic"] = "constant"
    value: float = 1.0
    k: int = Field(default=1, ge=0)
    l: int = Field(default=0, ge=0)
    m: int = Field(default=0, ge=0)
    parity: Literal["cos", "sin"] = "cos"

    def build(self) -> vf.SurfaceFunction:
        if self.kind == "constant":
            return vf.surface_constant(self.value)
        if self.kind == "fourier":
            return vf.fourier_mode(self.k, self.parity, amplitude=self.value)
        return vf.spherical_harmonic(self.l, self.m, self.parity) * self.value


class FieldSpec(StrictModel):
    family: Literal["zero", "constant", "rotation", "dilation", "linear",
                    "polynomial", "random_polynomial", "normal_extension"]
    vector: Optional[list[float]] = None
    center: Optional[list[float]] = None
    axis: Optional[list[float]] = None
    matrix: Optional[list[list[float]]] = None
    terms: Optional[list[PolynomialTerm]] = None
    degree: int = Field(default=3, ge=0, le=vf.MAX_POLYNOMIAL_DEGREE)
    scale: float = 1.0
    seed: Optional[int] = None
    function: Optional[SurfaceFunctionSpec] = None

    @model_validator(mode="after")
    def _family_keys(self):
        if self.family == "constant" and self.vector is None:
            raise ValueError("constant field needs 'vector'")
        if self.family == "linear" and self.matrix is None:
            raise ValueError("linear field needs 'matrix'")
        if self.family == "polynomial":
            if not self.terms:
                raise ValueError("polynomial field needs 'terms'")
            if any(sum(t.power) > vf.MAX_POLYNOMIAL_DEGREE for t in self.terms):
                raise ValueError(f"polynomial degree must be <= {vf.MAX_POLYNOMIAL_DEGREE}")
        return self

    def check_surface(self, surface: SurfaceSpec, name: str):
        """Reject vectors, centers, matrices and terms that do not live in the surface's R^N."""
        dimension = surface.dimension
        for key in ("vector", "center", "axis"):
            value = getattr(self, key)
            if value is None:
                continue
            if key == "axis" and dimension != 3:
                raise ValueError(f"{name}.axis only applies to surfaces in R^3")
            if len(value) != dimension:
                raise ValueError(f"{name}.{key} has {len(value)} entries, the surface lives in R^{dimension}")
        if self.matrix is not None and (len(self.matrix) != dimension
                                        or any(len(row) != dimension for row in self.matrix)):
            raise ValueError(f"{name}.matrix must be {dimension}x{dimension}")
        for term in self.terms or ():
            if len(term.power) != dimension or len(term.coefficient) != dimension:
                raise ValueError(f"{name} term {term.power} needs {dimension} powers and {dimension} coefficients")
        if (self.family == "normal_extension" and self.function is not None
                and self.function.kind == "harmonic" and surface.kind is not SurfaceKind.SPHERE):
            raise ValueError(f"{name}: spherical harmonics need a sphere, got {surface.kind.value}")

    def build(self, surface: Hypersurface, seed: int) -> vf.AmbientVectorField:
        dimension = surface.dimension_ambient
        center = self.center if self.center is not None else surface.center
        if self.family == "zero":
            return vf.zero(dimension)
        if self.family == "constant":
            return vf.constant(self.vector)
        if self.family == "rotation":
            return vf.rotation(center, self.axis)
        if self.family == "dilation":
            return vf.dilation(center)
        if self.family == "linear":
            return vf.linear(self.matrix)
        if self.family == "polynomial":
            return vf.polynomial([(t.power, t.coefficient) for t in self.terms], dimension)
        if self.family == "random_polynomial":
            return vf.random_polynomial(dimension, self.degree, self.seed if self.seed is not None else seed, self.scale)
        return vf.normal_extension(surface, (self.function or SurfaceFunctionSpec()).build())


class TestFunctionSpec(StrictModel):
    family: Literal["constant", "polynomial", "random_polynomial"] = "constant"
    value: float = 1.0
    terms: Optional[list[ScalarTerm]] = None
    degree: int = Field(default=2, ge=0, le=vf.MAX_POLYNOMIAL_DEGREE)
    seed: Optional[int] = None

    @model_validator(mode="after")
    def _family_keys(self):
        if self.family == "polynomial" and not self.terms:
            raise ValueError("polynomial test function needs 'terms'")
        return self

    def check_surface(self, surface: SurfaceSpec):
        for term in self.terms or ():
            if len(term.power) != surface.dimension:
                raise ValueError(f"test_function term {term.power} needs {surface.dimension} powers")

    def build(self, dimension: int, seed: int) -> vf.AmbientScalarField:
        if self.family == "constant":
            return vf.scalar_constant(self.value, dimension)
        if self.family == "polynomial":
            return vf.scalar_polynomial([(t.power, t.coefficient) for t in self.terms], dimension)
        return vf.random_scalar_polynomial(dimension, self.degree, self.seed if self.seed is not None else seed)


class LayerSpec(StrictModel):
    offset: float
    sign: Literal[1, -1]


class ToleranceSpec(StrictModel):
    """Verdict thresholds applied to the row at the smallest ε."""
    rel_err: Optional[float] = Field(default=None, gt=0)
    abs_err: Optional[float] = Field(default=None, gt=0)
    min_rate: Optional[float] = None
    monotone: bool = False


DEFAULT_TOLERANCES = {
    ExperimentKind.ENERGY: ToleranceSpec(rel_err=0.01, min_rate=1.0),
    ExperimentKind.FIRST_VAR: ToleranceSpec(rel_err=0.01, abs_err=1e-8, min_rate=1.0),
    ExperimentKind.SECOND_VAR: ToleranceSpec(rel_err=0.02, abs_err=1e-8),
    ExperimentKind.DISCREPANCY: ToleranceSpec(rel_err=0.02, monotone=True),
    ExperimentKind.MEASURE: ToleranceSpec(rel_err=0.01, abs_err=1e-8, monotone=True),
    ExperimentKind.STRESS: ToleranceSpec(rel_err=0.01, abs_err=1e-8, monotone=True),
    ExperimentKind.EQUIPARTITION: ToleranceSpec(abs_err=1e-10),
    ExperimentKind.MULTIPLICITY: ToleranceSpec(rel_err=0.01),
}
MULTILAYER_EQUIPARTITION = ToleranceSpec(abs_err=1e-3, monotone=True)


# ── Experiment ────────────────────────────────────────────────────

class ExperimentConfig(StrictModel):
    kind: Optional[ExperimentKind] = None
    surface: SurfaceSpec
    eta: FieldSpec = FieldSpec(family="dilation")
    zeta: FieldSpec = FieldSpec(family="zero")
    test_function: Optional[TestFunctionSpec] = None
    epsilon_schedule: Optional[list[float]] = None
    multiplicity: int = Field(default=1, ge=1)
    layers: Optional[list[LayerSpec]] = None
    layer_spacing: float = Field(default=DEFAULT_LAYER_SPACING, gt=0)
    tolerance: Optional[ToleranceSpec] = None
    output: Optional[str] = None
    seed: int = 0

    @field_validator("epsilon_schedule")
    @classmethod
    def _decreasing(cls, schedule):
        if schedule is None:
            return schedule
        if not schedule:
            raise ValueError("epsilon_schedule must not be empty")
        if any(not (e > 0 and math.isfinite(e)) for e in schedule):
            raise ValueError("epsilon_schedule entries must be positive")
        if any(b >= a for a, b in zip(schedule, schedule[1:])):
            raise ValueError("epsilon_schedule must be strictly decreasing")
        return schedule

    @model_validator(mode="after")
    def _layers_match(self):
        if self.layers is not None and len(self.layers) != self.multiplicity:
            raise ValueError(f"{len(self.layers)} layers given but multiplicity = {self.multiplicity}")
        return self

    @model_validator(mode="after")
    def _fields_match_surface(self):
        if self.surface.center is not None and len(self.surface.center) != self.surface.dimension:
            raise ValueError(f"surface.center needs {self.surface.dimension} entries")
        self.eta.check_surface(self.surface, "eta")
        self.zeta.check_surface(self.surface, "zeta")
        if self.test_function is not None:
            self.test_function.check_surface(self.surface)
        return self

    def resolved_kind(self, kind=None) -> ExperimentKind:
        if kind is not None:
            kind = ExperimentKind(kind)
            if self.kind is not None and self.kind is not kind:
                raise ConfigurationError(f"config is for '{self.kind.value}', not '{kind.value}'")
            return kind
        if self.kind is None:
            raise ConfigurationError("experiment kind missing")
        return self.kind

    def schedule(self) -> list[float]:
        if self.epsilon_schedule is not None:
            return list(self.epsilon_schedule)
        default = DEFAULT_SCHEDULE_2D if self.surface.dimension == 2 else DEFAULT_SCHEDULE_3D
        if self.multiplicity > 1:
            default = tuple(e for e in default if e <= 0.02)
        return list(default)

    def layers_for(self, epsilon: float) -> tuple[Layer, ...]:
        if self.layers is not None:
            return tuple(Layer(spec.offset, spec.sign) for spec in self.layers)
        return default_layers(epsilon, self.multiplicity, self.layer_spacing)

    def tolerance_for(self, kind: ExperimentKind) -> ToleranceSpec:
        if self.tolerance is not None:
            return self.tolerance
        if kind is ExperimentKind.EQUIPARTITION and self.multiplicity > 1:
            return MULTILAYER_EQUIPARTITION
        return DEFAULT_TOLERANCES[kind]

    def validate_geometry(self) -> Hypersurface:
        """Build the surface and check every (ε, layers) pair against the tube constraint."""
        try:
            surface = self.surface.build()
        except LabError as e:
            raise ConfigurationError(str(e))
        tail = self.surface.s_max_over_eps
        for eps in self.schedule():
            for layer in self.layers_for(eps):
                if abs(layer.offset) + tail * eps >= surface.reach:
                    raise ConfigurationError(
                        f"eps={eps:g}: layer offset {layer.offset:.4g} + {tail:g}*eps reaches "
                        f"beyond the tube (reach {surface.reach:.4g})"
                    )
        return surface


def parse_config(data: dict) -> ExperimentConfig:
    try:
        config = ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigurationError(f"invalid experiment config: {e}")
    config.validate_geometry()
    return config


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        with path.open("rb") as f:
            data = tomllib.load(f)
    except FileNotFoundError:
        raise ConfigurationError(f"{path}: config file not found")
    except tomllib.TOMLDecodeError as e:
        raise ConfigurationError(f"{path}: {e}")
    logger.debug("loaded config %s", path)
    return parse_config(data)
