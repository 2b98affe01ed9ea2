"""
Area functional E(Γ) = 2σ H^{N-1}(Γ) and its inner variations.

All surface integrands are assembled from the ambient Jacobian M = ∇η at the
surface nodes, split in the orthonormal frame {τ_1..τ_{N-1}, n}:

    b = T^T M T        tangential block   (div^Γ η = tr b)
    β = n^T M T        normal row          (Σ|(D_τ η)^⊥|² = |β|²)
    nMn                normal-normal entry (n, n·∇η)
"""

import math
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate, linalg

from .errors import DomainError
from .fields import AmbientVectorField, SurfaceFunction, fourier_mode, spherical_harmonic, surface_constant
from .geometry import Hypersurface, SurfaceFrame, SurfaceKind, surface_frames, surface_integral

logger = logging.getLogger(__name__)

SIGMA = 2.0 / 3.0
TWO_SIGMA = 2.0 * SIGMA

ZERO_EIGENVALUE_TOL = 1e-9
CLUSTER_TOL = 1e-6
DEFAULT_MAX_MODE = 32


def sigma_constant() -> float:
    """σ = ∫_{-1}^{1} √(W(s)/2) ds for the double well (2/3)."""
    from .phase_field import double_well

    value, _ = integrate.quad(lambda s: math.sqrt(double_well(s) / 2.0), -1.0, 1.0, epsabs=1e-14, epsrel=1e-14)
    return value


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VariationReport:
    value: float
    breakdown: dict[str, float]

    @classmethod
    def from_terms(cls, terms: dict[str, float]) -> "VariationReport":
        clean = {name: float(v) for name, v in terms.items()}
        return cls(math.fsum(clean.values()), clean)

    def rows(self) -> list[tuple[str, float]]:
        return list(self.breakdown.items()) + [("total", self.value)]


@dataclass(frozen=True)
class SpectralLevel:
    k: int
    value: float
    multiplicity: int
    closed_form: float


@dataclass(frozen=True)
class SpectrumReport:
    kind: SurfaceKind
    radius: float
    eigenvalues: tuple[float, ...]
    levels: tuple[SpectralLevel, ...]
    morse_index: int
    nullity: int
    positivity_count: int

    @property
    def total_modes(self) -> int:
        return len(self.eigenvalues)

    @property
    def max_closed_form_error(self) -> float:
        return max(abs(level.value - level.closed_form) for level in self.levels)

    def rows(self) -> list[tuple[int, float, int]]:
        return [(level.k, level.value, level.multiplicity) for level in self.levels]


# ---------------------------------------------------------------------------
# Frame splitting
# ---------------------------------------------------------------------------

def _split(frame: SurfaceFrame, M: np.ndarray):
    T, n = frame.tangents, frame.normal
    b = np.einsum("...ni,...nm,...mj->...ij", T, M, T)
    beta = np.einsum("...n,...nm,...mj->...j", n, M, T)
    nMn = np.einsum("...n,...nm,...m->...", n, M, n)
    return b, beta, nMn


def _tangential_divergence(frame: SurfaceFrame, M: np.ndarray) -> np.ndarray:
    return np.einsum("...ni,...nm,...mi->...", frame.tangents, M, frame.tangents)


# ---------------------------------------------------------------------------
# Area functional and its variations
# ---------------------------------------------------------------------------

def area_energy(surface: Hypersurface) -> float:
    return TWO_SIGMA * surface_integral(surface, lambda frame: np.ones(len(frame)))


def first_inner_variation(surface: Hypersurface, eta: AmbientVectorField) -> float:
    """2σ ∫_Γ div η − (n, n·∇η)."""
    def integrand(frame):
        M = eta.jacobian(frame.point)
        return np.trace(M, axis1=-2, axis2=-1) - _split(frame, M)[2]
    return TWO_SIGMA * surface_integral(surface, integrand)


def second_inner_variation(surface: Hypersurface, eta: AmbientVectorField,
                           zeta: AmbientVectorField) -> VariationReport:
    """2σ ∫_Γ div^Γζ + (div^Γη)² + Σ|(D_τi η)^⊥|² − Σ(τ_i·D_τj η)(τ_j·D_τi η)."""
    def integrand(frame):
        M = eta.jacobian(frame.point)
        C = zeta.jacobian(frame.point)
        b, beta, _ = _split(frame, M)
        div_eta = np.trace(b, axis1=-2, axis2=-1)
        cross = np.einsum("kij,kji->k", b, b)
        return np.stack([
            _tangential_divergence(frame, C),
            div_eta ** 2,
            np.sum(beta ** 2, axis=-1),
            -cross,
        ], axis=-1)

    terms = TWO_SIGMA * surface_integral(surface, integrand)
    return VariationReport.from_terms({
        "div_zeta": terms[0],
        "div_eta_sq": terms[1],
        "normal_part": terms[2],
        "cross": terms[3],
    })


def discrepancy(surface: Hypersurface, eta: AmbientVectorField) -> float:
    """2σ ∫_Γ (n, n·∇η)², non-negative."""
    def integrand(frame):
        return _split(frame, eta.jacobian(frame.point))[2] ** 2
    return TWO_SIGMA * surface_integral(surface, integrand)


def _check_multiplicity(m) -> int:
    if isinstance(m, bool) or int(m) != m or m < 1:
        raise DomainError(f"multiplicity must be a positive integer, got {m!r}")
    return int(m)


def predicted_limit(surface: Hypersurface, eta: AmbientVectorField, zeta: AmbientVectorField,
                    m: int = 1) -> float:
    """m δ²E(Γ, η, ζ) + 2mσ ∫_Γ (n, n·∇η)²."""
    m = _check_multiplicity(m)
    return m * (second_inner_variation(surface, eta, zeta).value + discrepancy(surface, eta))


def limit_breakdown(surface: Hypersurface, eta: AmbientVectorField, zeta: AmbientVectorField,
                    m: int = 1) -> VariationReport:
    """ε → 0 limits of the six phase-field second-variation terms, keyed as in
    `phase_field.ac_second_inner_variation`. Their sum is `predicted_limit`."""
    m = _check_multiplicity(m)

    def integrand(frame):
        M = eta.jacobian(frame.point)
        C = zeta.jacobian(frame.point)
        n = frame.normal
        div_eta = np.trace(M, axis1=-2, axis2=-1)
        M2 = np.einsum("kij,kjl->kil", M, M)
        MTn = np.einsum("kij,ki->kj", M, n)
        nMn = np.einsum("ki,kij,kj->k", n, M, n)
        return np.stack([
            np.trace(C, axis1=-2, axis2=-1),
            div_eta ** 2 - np.trace(M2, axis1=-2, axis2=-1),
            np.sum(MTn ** 2, axis=-1),
            2.0 * np.einsum("ki,kij,kj->k", n, M2, n),
            -np.einsum("ki,kij,kj->k", n, C, n),
            -2.0 * nMn * div_eta,
        ], axis=-1)

    terms = m * TWO_SIGMA * surface_integral(surface, integrand)
    return VariationReport.from_terms(dict(zip(SVEP_TERMS, terms)))


SVEP_TERMS = ("density_div_zeta", "density_div_eta", "grad_eta", "grad_eta_sq", "grad_zeta", "grad_eta_div")


# ---------------------------------------------------------------------------
# Normal variations
# ---------------------------------------------------------------------------

def jacobi_form(surface: Hypersurface, f: SurfaceFunction,
                grad_f: Optional[Callable[[SurfaceFrame], np.ndarray]] = None,
                mode: str = "tangential",
                normal_derivative: Optional[Callable[[SurfaceFrame], np.ndarray]] = None,
                scale: float = TWO_SIGMA) -> float:
    """scale · ∫_Γ |grad f|² − |A|² f².

    In "tangential" mode grad f is the surface gradient. In "full" mode the squared
    normal derivative of an ambient extension, supplied by the caller, is added.
    """
    if mode not in ("tangential", "full"):
        raise DomainError(f"mode must be 'tangential' or 'full', got {mode!r}")
    if mode == "full" and normal_derivative is None:
        raise DomainError("full mode needs the normal derivative of the extension")

    def integrand(frame):
        g = grad_f(frame) if grad_f is not None else f.tangential_gradient(frame)
        grad_sq = np.sum(g ** 2, axis=-1)
        if mode == "full":
            grad_sq = grad_sq + np.asarray(normal_derivative(frame)) ** 2
        return grad_sq - frame.curvature_norm_sq * f.value(frame) ** 2

    return scale * surface_integral(surface, integrand)


def normal_bilinear_form(surface: Hypersurface, f: SurfaceFunction, g: SurfaceFunction,
                         scale: float = TWO_SIGMA) -> float:
    """Second inner variation of area along normal extensions f n, g n (ζ = 0):

        scale · ∫_Γ ∇^Γf·∇^Γg − |A|² f g + H² f g
    """
    def integrand(frame):
        grads = np.sum(f.tangential_gradient(frame) * g.tangential_gradient(frame), axis=-1)
        weight = frame.mean_curvature ** 2 - frame.curvature_norm_sq
        return grads + weight * f.value(frame) * g.value(frame)
    return scale * surface_integral(surface, integrand)


def sharp_polarized_form(surface: Hypersurface, V: AmbientVectorField, W: AmbientVectorField) -> float:
    """[δ²E(Γ, V+W, 0) − δ²E(Γ, V−W, 0)] / 4."""
    from .fields import zero

    z = zero(surface.dimension_ambient)
    plus = second_inner_variation(surface, V + W, z).value
    minus = second_inner_variation(surface, V - W, z).value
    return 0.25 * (plus - minus)


# ---------------------------------------------------------------------------
# Jacobi spectra
# ---------------------------------------------------------------------------

def _circle_blocks(max_mode: int):
    basis = [surface_constant(1.0)]
    for k in range(1, max_mode + 1):
        basis.extend([fourier_mode(k, "cos"), fourier_mode(k, "sin")])
    return [basis]


def _sphere_blocks(max_mode: int):
    # real harmonics of different (m, parity) are orthogonal in φ, so the form is block diagonal
    blocks = []
    for m in range(max_mode + 1):
        for parity in (("cos",) if m == 0 else ("cos", "sin")):
            blocks.append([spherical_harmonic(l, m, parity) for l in range(m, max_mode + 1)])
    return blocks


def _galerkin_block(frame: SurfaceFrame, weights: np.ndarray, basis: list[SurfaceFunction]) -> np.ndarray:
    values = np.stack([f.value(frame) for f in basis])
    grads = np.stack([f.tangential_gradient(frame) for f in basis])
    norms = np.sqrt((values ** 2) @ weights)
    values = values / norms[:, None]
    grads = grads / norms[:, None, None]
    mass = (values * weights) @ values.T
    stiffness = sum((grads[:, :, i] * weights) @ grads[:, :, i].T for i in range(grads.shape[-1]))
    stiffness = stiffness - (values * (weights * frame.curvature_norm_sq)) @ values.T
    mass = 0.5 * (mass + mass.T)
    stiffness = 0.5 * (stiffness + stiffness.T)
    return linalg.eigh(stiffness, mass, eigvals_only=True)


def _cluster(eigenvalues: np.ndarray) -> list[tuple[float, int]]:
    levels: list[list[float]] = []
    for lam in np.sort(eigenvalues):
        if levels and abs(lam - levels[-1][0]) <= CLUSTER_TOL * max(1.0, abs(lam)):
            levels[-1].append(lam)
        else:
            levels.append([lam])
    return [(float(np.mean(group)), len(group)) for group in levels]


def jacobi_spectrum(kind: str, radius: float = 1.0, max_mode: int = DEFAULT_MAX_MODE) -> SpectrumReport:
    """Galerkin eigenvalues of ∫|∇^Γf|² − |A|²f² relative to ∫f² on a circle or sphere.

    Circle: (k² − 1)/R² with multiplicity 2 for k ≥ 1. Sphere: (l(l+1) − 2)/R² with
    multiplicity 2l + 1.
    """
    kind = SurfaceKind(kind)
    if max_mode < 2:
        raise DomainError(f"max_mode must be at least 2, got {max_mode}")
    if radius <= 0:
        raise DomainError(f"radius must be positive, got {radius}")
    if kind is SurfaceKind.CIRCLE:
        surface = Hypersurface.circle(radius, nodes=max(256, 8 * max_mode))
        blocks = _circle_blocks(max_mode)

        def closed_form(k):
            return (k * k - 1.0) / radius ** 2
    elif kind is SurfaceKind.SPHERE:
        surface = Hypersurface.sphere(radius, nodes_theta=max(64, 4 * max_mode), nodes_phi=max(64, 4 * max_mode + 8))
        blocks = _sphere_blocks(max_mode)

        def closed_form(k):
            return (k * (k + 1.0) - 2.0) / radius ** 2
    else:
        raise DomainError(f"Jacobi spectra are available for circle and sphere, not {kind.value}")

    frame, weights = surface_frames(surface)
    eigenvalues = np.sort(np.concatenate([_galerkin_block(frame, weights, basis) for basis in blocks]))
    levels = tuple(
        SpectralLevel(k, value, multiplicity, closed_form(k))
        for k, (value, multiplicity) in enumerate(_cluster(eigenvalues))
    )
    negative = int(np.sum(eigenvalues < -ZERO_EIGENVALUE_TOL))
    null = int(np.sum(np.abs(eigenvalues) <= ZERO_EIGENVALUE_TOL))
    report = SpectrumReport(
        kind=kind,
        radius=float(radius),
        eigenvalues=tuple(float(v) for v in eigenvalues),
        levels=levels,
        morse_index=negative,
        nullity=null,
        positivity_count=len(eigenvalues) - negative - null,
    )
    logger.info("jacobi spectrum %s R=%g: index=%d nullity=%d modes=%d",
                kind.value, radius, report.morse_index, report.nullity, report.total_modes)
    return report


# ---------------------------------------------------------------------------
# Local-coordinate identities
# ---------------------------------------------------------------------------

IDENTITY_KEYS = ("i", "ii", "iii", "iv", "v", "vi", "vii", "viii", "ix", "x", "xi", "xii")


def frame_identity_residuals(frame: SurfaceFrame, jac) -> dict[str, float]:
    """Both sides of the frame-coordinate identities behind the discrepancy formula.

    Left sides use the ambient Jacobian M and the frame vectors; right sides use the
    rotated Jacobian M' = Q^T M Q in coordinates where n = e_N. Absolute differences.
    """
    M = np.asarray(jac, dtype=float)
    N = M.shape[0]
    Q = frame.rotation
    T, n = frame.tangents, frame.normal
    Mr = Q.T @ M @ Q
    M2 = M @ M
    nMn = n @ M @ n
    MTn = M.T @ n
    tang = T.T @ M @ T                                   # τ_i·D_τj η
    perp = M @ T - T @ tang                              # columns (D_τi η)^⊥
    cross_frame = float(np.sum(tang * tang.T))
    cross_rot = float(np.sum(Mr[:N - 1, :N - 1] * Mr[:N - 1, :N - 1].T))
    normal_row = float(np.sum(Mr[N - 1, :N - 1] ** 2))

    lhs_xii = -np.trace(M2) + MTn @ MTn + 2.0 * (n @ M2 @ n) - nMn ** 2
    rhs_xii = float(np.sum(perp ** 2)) + nMn ** 2 - cross_frame

    residuals = {
        "i": np.max(np.abs(Q @ Mr @ Q.T - M)),
        "ii": np.max(np.abs(Q.T @ M2 @ Q - Mr @ Mr)),
        "iii": abs(np.trace(M2) - np.sum(Mr * Mr.T)),
        "iv": abs(2.0 * (n @ M2 @ n) - 2.0 * (Mr[N - 1, :] @ Mr[:, N - 1])),
        "v": abs(nMn ** 2 - Mr[N - 1, N - 1] ** 2),
        "vi": abs(MTn @ MTn - np.sum(Mr[N - 1, :] ** 2)),
        "vii": abs(MTn @ MTn - nMn ** 2 - normal_row),
        "viii": np.max(np.abs(perp - np.outer(n, Mr[N - 1, :N - 1]))),
        "ix": abs(np.sum(perp ** 2) - normal_row),
        "x": np.max(np.abs(tang - Mr[:N - 1, :N - 1])),
        "xi": abs(cross_frame - cross_rot),
        "xii": abs(lhs_xii - rhs_xii),
    }
    return {key: float(residuals[key]) for key in IDENTITY_KEYS}
