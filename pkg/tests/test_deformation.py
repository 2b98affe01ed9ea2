import math

import numpy as np
import pytest

from acvar import fields as vf
from acvar import sharp_interface as si
from acvar.deformation import (
    build_flow,
    deformed_ac_energy,
    deformed_area_energy,
    det_expansion_residual,
    fd_base_step,
    fd_derivative,
    flow_apply,
    flow_for_field,
    flow_for_surface,
    flow_gradient,
    flow_invert,
    injectivity_pairing,
    jacobian_inverse_residual,
    material_velocity,
    polarized_form,
    pushforward_ac_energy,
    residual_slope,
    richardson_extrapolate,
    tube_sample_points,
)
from acvar.errors import DomainError, InversionError, PropagationError
from acvar.geometry import Hypersurface, surface_frames
from acvar.phase_field import ac_energy, ac_first_inner_variation, ac_second_inner_variation, layered_field

FOUR_PI_OVER_3 = 4.0 * math.pi / 3.0


# ── Flows ────────────────────────────────────────────────────────


def test_t_max_for_dilation():
    # det(I − tI) = (1 − t)² ≥ 1/2 in the plane
    flow = build_flow(vf.dilation((0.0, 0.0)), vf.zero(2), np.array([[0.5, 0.0], [0.0, 0.5]]))
    assert flow.t_max == pytest.approx(1.0 - 1.0 / math.sqrt(2.0), abs=1e-9)


def test_t_max_is_capped():
    flow = build_flow(vf.constant([1.0, 0.0]), vf.zero(2), np.zeros((3, 2)))
    assert flow.t_max == 1.0


def test_flow_check(circle):
    flow = flow_for_surface(circle, vf.dilation((0.0, 0.0)), vf.zero(2))
    with pytest.raises(DomainError):
        flow_apply(flow, 2 * flow.t_max, np.array([0.5, 0.0]))


def test_flow_apply_and_gradient():
    M = np.array([[0.1, 0.2], [0.0, -0.3]])
    C = np.array([[0.0, 1.0], [1.0, 0.0]])
    flow = build_flow(vf.linear(M), vf.linear(C), np.zeros((1, 2)))
    x = np.array([0.4, -0.2])
    t = 0.5 * flow.t_max
    np.testing.assert_allclose(flow_apply(flow, t, x), x + t * M @ x + 0.5 * t * t * C @ x)
    np.testing.assert_allclose(flow_gradient(flow, t, x), np.eye(2) + t * M + 0.5 * t * t * C)


@pytest.mark.parametrize("surface_name", ["circle", "sphere"])
def test_flow_inversion(surface_name, request):
    surface = request.getfixturevalue(surface_name)
    dim = surface.dimension_ambient
    eta = vf.random_polynomial(dim, 3, seed=21, scale=0.5)
    zeta = vf.random_polynomial(dim, 2, seed=22, scale=0.5)
    flow = flow_for_surface(surface, eta, zeta)
    frame, _ = surface_frames(surface)
    x = frame.point[::7]
    t = 0.5 * flow.t_max
    np.testing.assert_allclose(flow_invert(flow, t, flow_apply(flow, t, x)), x, atol=1e-12)


def test_flow_inversion_failure_is_reported(monkeypatch):
    from acvar import deformation

    flow = build_flow(vf.random_polynomial(2, 3, seed=1), vf.zero(2), np.zeros((1, 2)))
    monkeypatch.setattr(deformation, "INVERT_MAXITER", 0)
    with pytest.raises(InversionError):
        flow_invert(flow, 0.5 * flow.t_max, np.array([[0.3, 0.2]]))


def test_tube_sample_points(circle):
    points = tube_sample_points(circle, 0.2)
    assert points.shape == (64 * 9, 2)
    radii = np.linalg.norm(points, axis=-1)
    assert radii.min() == pytest.approx(0.3)
    assert radii.max() == pytest.approx(0.7)


# ── Expansion residuals ──────────────────────────────────────────


def test_det_expansion_is_third_order():
    A = np.diag([0.3, 0.4, 0.5])
    # residual is exactly t³ det A here
    assert det_expansion_residual(A, np.zeros((3, 3)), 0.1) == pytest.approx(0.06e-3, rel=1e-8)
    assert residual_slope(lambda t: det_expansion_residual(A, np.zeros((3, 3)), t)) == pytest.approx(3.0, abs=0.05)


def test_jacobian_inverse_expansion_is_third_order():
    A = np.array([[0.2, 0.1, 0.0], [0.0, -0.1, 0.3], [0.1, 0.0, 0.2]])
    B = 0.5 * np.eye(3)
    flow = build_flow(vf.linear(A), vf.linear(B), np.zeros((1, 3)))
    slope = residual_slope(lambda t: jacobian_inverse_residual(flow, np.array([0.1, 0.2, 0.3]), t),
                           (1e-1, 1e-2, 1e-3))
    assert slope >= 2.9


def test_residual_slope_of_vanishing_residual():
    assert residual_slope(lambda t: 0.0) == math.inf


# ── Finite differences ───────────────────────────────────────────


def test_richardson_cancels_even_powers():
    values = [1.0 + 0.3 * h ** 2 - 0.2 * h ** 4 for h in (0.1, 0.05, 0.025)]
    assert richardson_extrapolate(values) == pytest.approx(1.0, abs=1e-14)


def test_fd_of_polynomial_is_exact():
    first = fd_derivative(lambda t: 1.0 + 2.0 * t + 3.0 * t * t, 1, 0.1)
    second = fd_derivative(lambda t: 1.0 + 2.0 * t + 3.0 * t * t, 2, 0.1)
    assert first.exact and second.exact
    assert first.value == pytest.approx(2.0, abs=1e-12)
    assert second.value == pytest.approx(6.0, abs=1e-10)
    assert math.isnan(first.order_estimate)


def test_fd_of_exponential():
    first = fd_derivative(math.exp, 1, 0.1)
    second = fd_derivative(math.exp, 2, 0.1)
    assert first.value == pytest.approx(1.0, abs=1e-10)
    assert second.value == pytest.approx(1.0, abs=1e-8)
    assert first.order_estimate == pytest.approx(2.0, abs=0.1)
    assert second.order_estimate == pytest.approx(2.0, abs=0.1)


def test_fd_argument_checks():
    with pytest.raises(DomainError):
        fd_derivative(math.exp, 3, 0.1)
    with pytest.raises(DomainError):
        fd_derivative(math.exp, 1, 0.0)
    with pytest.raises(PropagationError):
        fd_derivative(lambda t: math.nan, 1, 0.1)


# ── Deformed energies ────────────────────────────────────────────


def test_deformed_area_of_dilated_circle(circle):
    flow = flow_for_surface(circle, vf.dilation((0.0, 0.0)), vf.zero(2))
    t = 0.2
    assert deformed_area_energy(circle, flow, t) == pytest.approx(si.TWO_SIGMA * math.pi * (1 + t), rel=1e-13)


@pytest.mark.parametrize("surface_name", ["circle", "sphere"])
def test_area_variations_match_finite_differences(surface_name, request):
    surface = request.getfixturevalue(surface_name)
    dim = surface.dimension_ambient
    eta = vf.random_polynomial(dim, 3, seed=31, scale=0.5)
    zeta = vf.random_polynomial(dim, 2, seed=32, scale=0.5)
    flow = flow_for_surface(surface, eta, zeta)
    h = fd_base_step(flow)

    def area(t):
        return deformed_area_energy(surface, flow, t)

    first = fd_derivative(area, 1, h)
    second = fd_derivative(area, 2, h)
    assert first.value == pytest.approx(si.first_inner_variation(surface, eta), rel=1e-5, abs=1e-9)
    assert second.value == pytest.approx(si.second_inner_variation(surface, eta, zeta).value, rel=1e-5, abs=1e-9)


def test_deformed_energy_at_zero_is_the_energy(circle):
    field = layered_field(circle, 0.02)
    flow = flow_for_field(field, vf.random_polynomial(2, 3, seed=4), vf.zero(2))
    assert deformed_ac_energy(field, flow, 0.0) == pytest.approx(ac_energy(field), rel=1e-12)


def test_dilation_energy_is_quadratic_in_t(circle):
    field = layered_field(circle, 0.02)
    flow = flow_for_field(field, vf.dilation((0.0, 0.0)), vf.zero(2))
    g = lambda t: deformed_ac_energy(field, flow, t)  # noqa: E731
    first = fd_derivative(g, 1, fd_base_step(flow))
    second = fd_derivative(g, 2, fd_base_step(flow))
    assert first.exact and second.exact
    assert first.value == pytest.approx(FOUR_PI_OVER_3, rel=1e-9)
    assert second.value == pytest.approx(FOUR_PI_OVER_3, rel=1e-9)


@pytest.mark.parametrize("eta_seed, zeta_seed", [(41, 42), (43, None)])
def test_phase_field_variations_match_finite_differences(circle, eta_seed, zeta_seed):
    field = layered_field(circle, 0.02)
    eta = vf.random_polynomial(2, 3, seed=eta_seed, scale=0.5)
    zeta = vf.random_polynomial(2, 2, seed=zeta_seed, scale=0.5) if zeta_seed is not None else vf.zero(2)
    flow = flow_for_field(field, eta, zeta)
    g = lambda t: deformed_ac_energy(field, flow, t)  # noqa: E731
    h = fd_base_step(flow)
    first = fd_derivative(g, 1, h)
    second = fd_derivative(g, 2, h)
    assert first.value == pytest.approx(ac_first_inner_variation(field, eta), rel=1e-5, abs=1e-8)
    assert second.value == pytest.approx(ac_second_inner_variation(field, eta, zeta).value, rel=1e-5, abs=1e-8)


def test_pushforward_energy_agrees_with_change_of_variables(circle):
    field = layered_field(circle, 0.02)
    flow = flow_for_field(field, vf.rotation((0.0, 0.0)) + 0.3 * vf.dilation((0.0, 0.0)), vf.zero(2))
    t = 0.1
    expected = deformed_ac_energy(field, flow, t)
    assert expected != pytest.approx(ac_energy(field), rel=1e-3)
    assert pushforward_ac_energy(field, flow, t) == pytest.approx(expected, rel=1e-8)


def test_pushforward_energy_for_a_cubic_deformation():
    surface = Hypersurface.circle(0.5, nodes=256)
    field = layered_field(surface, 0.01)
    eta = vf.random_polynomial(2, 3, seed=5, scale=0.3)
    zeta = vf.random_polynomial(2, 2, seed=6, scale=0.3)
    flow = flow_for_field(field, eta, zeta)
    t = min(0.05, 0.5 * flow.t_max)
    assert pushforward_ac_energy(field, flow, t) == pytest.approx(deformed_ac_energy(field, flow, t), rel=1e-8)


def test_pushforward_energy_rejects_tube_beyond_reach(circle):
    field = layered_field(circle, 0.02)
    flow = flow_for_field(field, vf.constant([1.0, 0.0]), vf.zero(2))
    with pytest.raises(DomainError, match="beyond the reach"):
        pushforward_ac_energy(field, flow, 0.5)


# ── Polarization and injectivity ─────────────────────────────────


def test_material_velocity(circle):
    field = layered_field(circle, 0.02)
    velocity = material_velocity(field, vf.constant([1.0, 0.0]))
    x = np.array([[0.5, 0.0], [0.0, 0.5]])
    np.testing.assert_allclose(velocity.value(x), [-1.0 / 0.02, 0.0], atol=1e-10)


def test_material_velocity_is_linear(circle, rng):
    field = layered_field(circle, 0.02)
    V = vf.random_polynomial(2, 2, seed=3, scale=0.5)
    W = vf.dilation((0.1, -0.2))
    angle, radius = rng.uniform(0.0, 2.0 * math.pi, 40), rng.uniform(0.4, 0.6, 40)
    x = radius[:, None] * np.stack([np.cos(angle), np.sin(angle)], axis=-1)
    combined = material_velocity(field, V * 2.0 - W).value(x)
    separate = 2.0 * material_velocity(field, V).value(x) - material_velocity(field, W).value(x)
    np.testing.assert_allclose(combined, separate, rtol=1e-12, atol=1e-9)


def test_material_velocity_vanishes_for_tangential_fields(circle, sphere):
    frame, _ = surface_frames(circle)
    velocity = material_velocity(layered_field(circle, 0.02), vf.rotation((0.0, 0.0)))
    np.testing.assert_allclose(velocity.value(frame.point), 0.0, atol=1e-9)
    frame, _ = surface_frames(sphere)
    V = vf.rotation((0.0, 0.0, 0.0), axis=(1.0, 2.0, -0.5))
    velocity = material_velocity(layered_field(sphere, 0.02), V)
    np.testing.assert_allclose(velocity.value(frame.point), 0.0, atol=1e-8)


def test_material_velocity_on_the_polar_axis(sphere):
    field = layered_field(sphere, 0.02)
    velocity = material_velocity(field, vf.constant([0.0, 0.0, 1.0]))
    x = np.array([[0.0, 0.0, 0.5], [0.0, 0.0, -0.5]])
    np.testing.assert_allclose(velocity.value(x), [-1.0 / 0.02, 1.0 / 0.02], rtol=1e-12)


def test_injectivity_surrogate(circle):
    field = layered_field(circle, 0.005)
    V = vf.normal_extension(circle, 1.0)
    measured = injectivity_pairing(field, V)
    assert measured > si.SIGMA * math.pi
    assert measured == pytest.approx(si.TWO_SIGMA * math.pi, rel=0.02)


def test_polarized_form_is_bilinear(circle):
    field = layered_field(circle, 0.01)
    V = vf.dilation((0.0, 0.0))
    W = vf.rotation((0.0, 0.0))
    zero = vf.zero(2)
    assert polarized_form(field, V, V) == pytest.approx(ac_second_inner_variation(field, V, zero).value, rel=1e-12)
    assert polarized_form(field, V, W) == pytest.approx(polarized_form(field, W, V), rel=1e-12, abs=1e-12)


def test_polarized_form_of_normal_extensions_converges():
    from acvar.geometry import Hypersurface

    circle = Hypersurface.circle(0.5, nodes=256)
    f, g = vf.fourier_mode(1, "cos"), vf.fourier_mode(1, "cos") + vf.surface_constant(1.0)
    V, W = vf.normal_extension(circle, f), vf.normal_extension(circle, g)
    reference = si.normal_bilinear_form(circle, f, g)
    errors = [abs(polarized_form(layered_field(circle, eps), V, W) - reference) for eps in (0.01, 0.005)]
    assert errors[1] < 2e-2
    assert errors[1] < errors[0]
