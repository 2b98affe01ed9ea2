"""
ε-sweep driver, convergence-rate fitting, the finite-difference oracle matrix,
the algebraic identity suites and CSV/human report emission.
"""

import csv
import io
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from . import settings
from . import fields as vf
from . import sharp_interface as si
from .config import ExperimentConfig, ExperimentKind, ToleranceSpec
from .deformation import (
    build_flow,
    deformed_ac_energy,
    deformed_area_energy,
    det_expansion_residual,
    fd_base_step,
    fd_derivative,
    flow_for_field,
    flow_for_surface,
    jacobian_inverse_residual,
    residual_slope,
)
from .errors import LabError, ReportError
from .geometry import Hypersurface, SurfaceKind, frame_at, surface_integral
from .phase_field import (
    PhaseField,
    ac_energy,
    default_layers,
    ac_first_inner_variation,
    ac_second_inner_variation,
    energy_measure_pairing,
    equipartition_defect,
    stress_pairing,
)

logger = logging.getLogger(__name__)

NOISE_FLOOR = 1e-13
MONOTONE_SLACK = 1e-12
CSV_HEADER = ("eps", "measured", "reference", "abs_err", "rel_err")
ORACLE_HEADER = ("quantity", "analytic", "fd_value", "fd_order", "rel_err")
IDENTITY_HEADER = ("suite", "check", "value", "passed")
SPECTRUM_HEADER = ("k", "lambda", "multiplicity")

ORACLE_REL_TOL = 1e-5
ORACLE_ORDER_RANGE = (1.8, 2.2)    # central differences; exact rows carry NaN
IDENTITY_TOL = 1e-12
SLOPE_MIN = 2.9


# ---------------------------------------------------------------------------
# Tables
# ---------------------------------------------------------------------------

@dataclass
class ConvergenceRow:
    epsilon: float
    measured: float
    reference: float
    abs_err: float
    rel_err: float
    flagged: bool = False
    note: str = ""

    @classmethod
    def compare(cls, epsilon: float, measured: float, reference: float) -> "ConvergenceRow":
        abs_err = abs(measured - reference)
        rel_err = abs_err / abs(reference) if reference != 0 else abs_err
        return cls(epsilon, measured, reference, abs_err, rel_err)

    @classmethod
    def failed(cls, epsilon: float, note: str) -> "ConvergenceRow":
        nan = math.nan
        return cls(epsilon, nan, nan, nan, nan, flagged=True, note=note)

    def as_tuple(self) -> tuple[float, ...]:
        return (self.epsilon, self.measured, self.reference, self.abs_err, self.rel_err)


@dataclass
class ConvergenceTable:
    kind: str
    rows: list[ConvergenceRow] = field(default_factory=list)
    seed: int = 0
    fitted_rate: Union[float, str, None] = None
    verdict: Optional[bool] = None
    failures: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        """JSON-ready form; non-finite numbers become None."""
        def num(v):
            return float(v) if math.isfinite(v) else None

        return {
            "kind": self.kind,
            "seed": self.seed,
            "rows": [
                {"eps": r.epsilon, "measured": num(r.measured), "reference": num(r.reference),
                 "abs_err": num(r.abs_err), "rel_err": num(r.rel_err), "flagged": r.flagged, "note": r.note}
                for r in self.rows
            ],
            "fitted_rate": self.fitted_rate,
            "verdict": "pass" if self.verdict else "fail",
            "failures": self.failures,
        }


def fit_rate(table: Union[ConvergenceTable, Sequence[ConvergenceRow]]) -> Union[float, str, None]:
    """Least-squares slope of log(abs_err) against log(ε).

    None with fewer than three rows; "saturated" when fewer than two rows lie above
    the quadrature noise floor.
    """
    rows = table.rows if isinstance(table, ConvergenceTable) else list(table)
    rows = [r for r in rows if not r.flagged]
    if len(rows) < 3:
        return None
    usable = [r for r in rows if r.abs_err >= NOISE_FLOOR]
    if len(usable) < 2:
        return "saturated"
    slope = np.polyfit(np.log([r.epsilon for r in usable]), np.log([r.abs_err for r in usable]), 1)[0]
    return float(slope)


def _judge(table: ConvergenceTable, tolerance: ToleranceSpec) -> None:
    failures = []
    if not table.rows:
        failures.append("empty sweep")
    flagged = [r for r in table.rows if r.flagged]
    if flagged:
        failures.extend(f"eps={r.epsilon:g}: {r.note}" for r in flagged)
    good = [r for r in table.rows if not r.flagged]
    if good:
        last = good[-1]
        ok = False
        if tolerance.rel_err is not None and last.reference != 0 and last.rel_err <= tolerance.rel_err:
            ok = True
        if tolerance.abs_err is not None and last.abs_err <= tolerance.abs_err:
            ok = True
        if tolerance.rel_err is None and tolerance.abs_err is None:
            ok = True
        if not ok:
            failures.append(f"final error abs={last.abs_err:.3g} rel={last.rel_err:.3g} above tolerance")
        if tolerance.monotone:
            errs = [r.abs_err for r in good]
            if any(b > a + MONOTONE_SLACK for a, b in zip(errs, errs[1:])):
                failures.append("error does not decrease monotonically")
        if tolerance.min_rate is not None and isinstance(table.fitted_rate, float):
            if table.fitted_rate < tolerance.min_rate:
                failures.append(f"fitted rate {table.fitted_rate:.3g} below {tolerance.min_rate:g}")
    table.failures.extend(failures)
    table.verdict = not table.failures


# ---------------------------------------------------------------------------
# Sweep
# ---------------------------------------------------------------------------

def _references(kind: ExperimentKind, config: ExperimentConfig, surface: Hypersurface, eta, zeta, phi) -> dict:
    m = config.multiplicity
    if kind is ExperimentKind.ENERGY:
        return {"reference": m * si.area_energy(surface)}
    if kind is ExperimentKind.FIRST_VAR:
        return {"reference": m * si.first_inner_variation(surface, eta)}
    if kind is ExperimentKind.SECOND_VAR:
        return {"reference": si.predicted_limit(surface, eta, zeta, m)}
    if kind is ExperimentKind.DISCREPANCY:
        return {
            "reference": m * si.discrepancy(surface, eta),
            "sharp": m * si.second_inner_variation(surface, eta, zeta).value,
        }
    if kind in (ExperimentKind.MEASURE, ExperimentKind.MULTIPLICITY):
        return {"surface_mass": si.TWO_SIGMA * _surface_pairing(surface, phi)}
    if kind is ExperimentKind.STRESS:
        return {"reference": m * si.TWO_SIGMA * _surface_stress(surface, eta)}
    return {"reference": 0.0}


def _surface_pairing(surface: Hypersurface, phi) -> float:
    return surface_integral(surface, lambda frame: phi.value(frame.point))


def _surface_stress(surface: Hypersurface, eta) -> float:
    return surface_integral(
        surface, lambda frame: np.einsum("ki,kij,kj->k", frame.normal, eta.jacobian(frame.point), frame.normal)
    )


def _measure(kind: ExperimentKind, config: ExperimentConfig, field_: PhaseField, refs: dict, eta, zeta, phi):
    m = config.multiplicity
    if kind is ExperimentKind.ENERGY:
        return ac_energy(field_), refs["reference"]
    if kind is ExperimentKind.FIRST_VAR:
        return ac_first_inner_variation(field_, eta), refs["reference"]
    if kind is ExperimentKind.SECOND_VAR:
        return ac_second_inner_variation(field_, eta, zeta).value, refs["reference"]
    if kind is ExperimentKind.DISCREPANCY:
        return ac_second_inner_variation(field_, eta, zeta).value - refs["sharp"], refs["reference"]
    if kind is ExperimentKind.MEASURE:
        return energy_measure_pairing(field_, phi), m * refs["surface_mass"]
    if kind is ExperimentKind.STRESS:
        return stress_pairing(field_, eta), refs["reference"]
    if kind is ExperimentKind.EQUIPARTITION:
        return equipartition_defect(field_), 0.0
    return energy_measure_pairing(field_, phi) / refs["surface_mass"], float(m)


def run_experiment(config: ExperimentConfig, kind=None) -> ConvergenceTable:
    """Sweep ε, compare each phase-field quantity with its sharp-interface limit and judge."""
    kind = config.resolved_kind(kind)
    surface = config.validate_geometry()
    seed = config.seed
    eta = config.eta.build(surface, seed)
    zeta = config.zeta.build(surface, seed + 1)
    phi = (config.test_function.build(surface.dimension_ambient, seed + 2)
           if config.test_function is not None else vf.scalar_constant(1.0, surface.dimension_ambient))
    logger.info("experiment %s on %s, m=%d, schedule=%s", kind.value, surface.kind.value,
                config.multiplicity, config.schedule())
    refs = _references(kind, config, surface, eta, zeta, phi)

    def point(eps: float) -> ConvergenceRow:
        try:
            field_ = PhaseField(surface, eps, config.layers_for(eps),
                                nodes_per_panel=config.surface.nodes_normal,
                                tail_width=config.surface.s_max_over_eps)
            measured, reference = _measure(kind, config, field_, refs, eta, zeta, phi)
            row = ConvergenceRow.compare(eps, measured, reference)
            if kind is ExperimentKind.DISCREPANCY and not abs(measured) > 0.5 * reference:
                row.flagged = True
                row.note = "gap to the sharp second variation is below half the discrepancy"
        except (LabError, np.linalg.LinAlgError, FloatingPointError) as e:
            logger.warning("eps=%g failed: %s", eps, e)
            return ConvergenceRow.failed(eps, str(e))
        logger.info("eps=%g measured=%.12g reference=%.12g rel_err=%.3g", eps, measured, reference, row.rel_err)
        return row

    with ThreadPoolExecutor(max_workers=max(1, settings.WORKERS)) as pool:
        rows = list(pool.map(point, config.schedule()))

    table = ConvergenceTable(kind.value, rows, seed=seed)
    table.fitted_rate = fit_rate(table)
    if table.fitted_rate == "saturated":
        logger.warning("%s: errors at the noise floor, rate saturated", kind.value)
    _judge(table, config.tolerance_for(kind))
    logger.info("experiment %s: rate=%s verdict=%s", kind.value, table.fitted_rate,
                "pass" if table.verdict else "fail")
    return table


# ---------------------------------------------------------------------------
# Emission
# ---------------------------------------------------------------------------

def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def _write(text: str, out) -> str:
    if out is not None:
        path = Path(out)
        try:
            path.write_text(text)
        except OSError as e:
            raise ReportError(e.strerror or str(e), str(path))
        logger.info("wrote %s", path)
    return text


def emit_rows(header: Sequence[str], rows: Sequence[Sequence], fmt: str = "csv",
              out=None, comment: Optional[str] = None, footer: Sequence[str] = ()) -> str:
    """Serialize rows as CSV (17 significant digits) or an aligned human table."""
    if fmt == "csv":
        buffer = io.StringIO()
        if comment:
            buffer.write(f"# {comment}\n")
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
        return _write(buffer.getvalue(), out)
    if fmt != "human":
        raise ReportError(f"unknown format {fmt!r}", str(out or "-"))
    cells = [list(header)] + [[_fmt(v) if not isinstance(v, float) else f"{v:.6e}" for v in row] for row in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    lines = [comment] if comment else []
    lines += ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cells]
    lines += list(footer)
    return _write("\n".join(lines) + "\n", out)


def emit(table: ConvergenceTable, fmt: str = "csv", out=None) -> str:
    comment = f"acvar kind={table.kind} seed={table.seed}"
    footer = []
    if fmt == "human":
        rate = table.fitted_rate
        footer.append(f"fitted_rate: {rate:.4f}" if isinstance(rate, float) else f"fitted_rate: {rate or 'n/a'}")
        footer.append(f"verdict: {'PASS' if table.verdict else 'FAIL'}")
        footer.extend(f"  - {reason}" for reason in table.failures)
    return emit_rows(CSV_HEADER, [r.as_tuple() for r in table.rows], fmt, out, comment, footer)


# ---------------------------------------------------------------------------
# Oracle matrix
# ---------------------------------------------------------------------------

@dataclass
class OracleRow:
    quantity: str
    analytic: float
    fd_value: float
    fd_order: float
    rel_err: float

    @property
    def passed(self) -> bool:
        if not self.rel_err < ORACLE_REL_TOL:
            return False
        low, high = ORACLE_ORDER_RANGE
        return math.isnan(self.fd_order) or low <= self.fd_order <= high

    def as_tuple(self):
        return (self.quantity, self.analytic, self.fd_value, self.fd_order, self.rel_err)


ORACLE_SURFACES = {
    "circle": lambda: Hypersurface.circle(0.5, nodes=256),
    "sphere": lambda: Hypersurface.sphere(0.5, nodes_theta=32, nodes_phi=64),
}


def _oracle_fields(dimension: int, seed: int):
    center = (0.0,) * dimension
    etas = {
        "x": vf.dilation(center),
        "constant": vf.constant(np.linspace(1.0, 0.5, dimension)),
        "rotation": vf.rotation(center),
        "cubic": vf.random_polynomial(dimension, 3, seed, scale=0.5),
    }
    zetas = {
        "zero": vf.zero(dimension),
        "quadratic": vf.random_polynomial(dimension, 2, seed + 1, scale=0.5),
    }
    return etas, zetas


def _oracle_row(name: str, analytic: float, estimate, g0: float) -> OracleRow:
    denom = max(abs(analytic), abs(g0) * 1e-3)
    rel = abs(analytic - estimate.value) / denom if denom > 0 else abs(analytic - estimate.value)
    return OracleRow(name, analytic, estimate.value, estimate.order_estimate, rel)


def run_oracle(epsilons: Sequence[float] = (0.02, 0.01), seed: int = 0, nodes_per_panel: int = 8) -> list[OracleRow]:
    """Analytic first and second inner variations against central differences of the
    deformed energies, for circle and sphere × four η × two ζ families."""
    rows: list[OracleRow] = []
    for surface_name, make in ORACLE_SURFACES.items():
        surface = make()
        etas, zetas = _oracle_fields(surface.dimension_ambient, seed)
        for eta_name, eta in etas.items():
            for zeta_name, zeta in zetas.items():
                tag = f"{surface_name}/{eta_name}/{zeta_name}"
                flow = flow_for_surface(surface, eta, zeta)
                h = fd_base_step(flow)
                area = lambda t: deformed_area_energy(surface, flow, t)  # noqa: E731
                g0 = area(0.0)
                rows.append(_oracle_row(f"{tag}/area/first", si.first_inner_variation(surface, eta),
                                        fd_derivative(area, 1, h), g0))
                rows.append(_oracle_row(f"{tag}/area/second", si.second_inner_variation(surface, eta, zeta).value,
                                        fd_derivative(area, 2, h), g0))
                for eps in epsilons:
                    field_ = PhaseField(surface, eps, default_layers(eps, 1), nodes_per_panel=nodes_per_panel)
                    flow_eps = flow_for_field(field_, eta, zeta)
                    h_eps = fd_base_step(flow_eps)
                    energy = lambda t: deformed_ac_energy(field_, flow_eps, t)  # noqa: E731
                    e0 = energy(0.0)
                    rows.append(_oracle_row(f"{tag}/eps={eps:g}/first", ac_first_inner_variation(field_, eta),
                                            fd_derivative(energy, 1, h_eps), e0))
                    rows.append(_oracle_row(f"{tag}/eps={eps:g}/second",
                                            ac_second_inner_variation(field_, eta, zeta).value,
                                            fd_derivative(energy, 2, h_eps), e0))
                logger.info("oracle %s done", tag)
    return rows


def emit_oracle(rows: Sequence[OracleRow], fmt: str = "csv", out=None) -> str:
    return emit_rows(ORACLE_HEADER, [r.as_tuple() for r in rows], fmt, out, comment="acvar oracle")


# ---------------------------------------------------------------------------
# Identity suites
# ---------------------------------------------------------------------------

@dataclass
class IdentityReport:
    residuals: dict[str, float]
    det_slope: float
    inverse_slope: float

    @property
    def passed(self) -> bool:
        return (all(r < IDENTITY_TOL for r in self.residuals.values())
                and self.det_slope >= SLOPE_MIN and self.inverse_slope >= SLOPE_MIN)

    def rows(self):
        rows = [("frame", key, value, value < IDENTITY_TOL) for key, value in self.residuals.items()]
        rows.append(("expansion", "det_slope", self.det_slope, self.det_slope >= SLOPE_MIN))
        rows.append(("expansion", "inverse_slope", self.inverse_slope, self.inverse_slope >= SLOPE_MIN))
        return rows


IDENTITY_SURFACES = (
    Hypersurface.circle(0.5),
    Hypersurface.ellipse(2.0, 1.0),
    Hypersurface.sphere(0.5),
    Hypersurface.torus(1.0, 0.3),
)


def _random_params(surface: Hypersurface, rng) -> tuple[float, ...]:
    if surface.kind is SurfaceKind.SPHERE:
        return (rng.uniform(0.1, math.pi - 0.1), rng.uniform(0.0, 2 * math.pi))
    return tuple(rng.uniform(0.0, 2 * math.pi, surface.dimension_ambient - 1))


def run_identities(samples: int = 100, expansions: int = 50, seed: int = 0) -> IdentityReport:
    """Worst frame-identity residual per identity over random frames and Jacobians,
    and the worst log-log slope of both expansion residuals over random matrices."""
    rng = np.random.default_rng(seed)
    worst = {key: 0.0 for key in si.IDENTITY_KEYS}
    for i in range(samples):
        surface = IDENTITY_SURFACES[i % len(IDENTITY_SURFACES)]
        frame = frame_at(surface, _random_params(surface, rng))
        jac = rng.standard_normal((surface.dimension_ambient,) * 2)
        for key, value in si.frame_identity_residuals(frame, jac).items():
            worst[key] = max(worst[key], value)

    det_slope = math.inf
    inverse_slope = math.inf
    for _ in range(expansions):
        A = 0.3 * rng.standard_normal((3, 3))
        B = 0.3 * rng.standard_normal((3, 3))
        det_slope = min(det_slope, residual_slope(lambda t: det_expansion_residual(A, B, t)))
        x = rng.standard_normal(3)
        flow = build_flow(vf.linear(A), vf.linear(B), x[None, :])
        ts = tuple(t for t in (1e-1, 1e-2, 1e-3, 1e-4) if t <= flow.t_max)
        inverse_slope = min(inverse_slope, residual_slope(lambda t: jacobian_inverse_residual(flow, x, t), ts))
    report = IdentityReport(worst, det_slope, inverse_slope)
    logger.info("identities: max residual %.3g, slopes det=%.3f inverse=%.3f",
                max(worst.values()), det_slope, inverse_slope)
    return report


def emit_identities(report: IdentityReport, fmt: str = "csv", out=None) -> str:
    return emit_rows(IDENTITY_HEADER, report.rows(), fmt, out, comment="acvar identities")


# ---------------------------------------------------------------------------
# Spectra
# ---------------------------------------------------------------------------

def spectrum_rows(report: si.SpectrumReport) -> list[tuple[int, float, int]]:
    return report.rows()


def emit_spectrum(report: si.SpectrumReport, fmt: str = "csv", out=None) -> str:
    comment = (f"acvar spectrum kind={report.kind.value} radius={report.radius:g} "
               f"morse_index={report.morse_index} nullity={report.nullity} "
               f"positivity_count={report.positivity_count}")
    return emit_rows(SPECTRUM_HEADER, spectrum_rows(report), fmt, out, comment=comment)
