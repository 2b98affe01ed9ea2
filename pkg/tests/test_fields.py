import math

import numpy as np
import pytest

from acvar import fields as vf
from acvar.errors import DomainError
from acvar.geometry import Hypersurface, frames, surface_frames, surface_integral


def numeric_jacobian(field, x, h=1e-6):
    cols = []
    for j in range(field.dimension):
        step = np.zeros(field.dimension)
        step[j] = h
        cols.append((field.value(x + step) - field.value(x - step)) / (2 * h))
    return np.stack(cols, axis=-1)


# ── Vector fields ────────────────────────────────────────────────


def test_dilation_and_constant():
    x = np.array([[0.3, -0.2, 0.5]])
    eta = vf.dilation((0.1, 0.0, 0.0))
    np.testing.assert_allclose(eta.value(x), [[0.2, -0.2, 0.5]])
    np.testing.assert_allclose(eta.jacobian(x)[0], np.eye(3))
    assert eta.divergence(x)[0] == pytest.approx(3.0)
    c = vf.constant([1.0, 2.0])
    np.testing.assert_allclose(c.jacobian(np.zeros((4, 2))), np.zeros((4, 2, 2)))


def test_rotation_is_skew():
    eta = vf.rotation((0.0, 0.0, 0.0), axis=(1.0, 1.0, 0.0))
    J = eta.jacobian(np.array([0.2, 0.1, -0.4]))
    np.testing.assert_allclose(J, -J.T, atol=1e-15)
    np.testing.assert_allclose(eta.value(np.array([1.0, 1.0, 0.0])), 0.0, atol=1e-15)


def test_polynomial_terms():
    # η = (x y², 3)
    eta = vf.polynomial([((1, 2), (1.0, 0.0)), ((0, 0), (0.0, 3.0))], dimension=2)
    x = np.array([2.0, 3.0])
    np.testing.assert_allclose(eta.value(x), [18.0, 3.0])
    np.testing.assert_allclose(eta.jacobian(x), [[9.0, 12.0], [0.0, 0.0]])


def test_polynomial_degree_limit():
    with pytest.raises(DomainError):
        vf.polynomial([((4, 0), (1.0, 0.0))], dimension=2)


@pytest.mark.parametrize("dimension", [2, 3])
def test_random_polynomial_jacobian_matches_differences(dimension, rng):
    eta = vf.random_polynomial(dimension, 3, seed=5, scale=0.5)
    x = rng.uniform(-0.6, 0.6, size=dimension)
    np.testing.assert_allclose(eta.jacobian(x), numeric_jacobian(eta, x), atol=1e-8)


def test_random_polynomial_is_seeded():
    x = np.array([0.3, 0.2])
    a = vf.random_polynomial(2, 3, seed=9).value(x)
    b = vf.random_polynomial(2, 3, seed=9).value(x)
    c = vf.random_polynomial(2, 3, seed=10).value(x)
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c)


def test_field_arithmetic():
    x = np.array([[0.2, 0.7]])
    V = vf.dilation((0.0, 0.0))
    W = vf.rotation((0.0, 0.0))
    np.testing.assert_allclose((V + W).jacobian(x), V.jacobian(x) + W.jacobian(x))
    np.testing.assert_allclose((V - 2.0 * W).value(x), V.value(x) - 2.0 * W.value(x))
    np.testing.assert_allclose((-V).value(x), -V.value(x))
    with pytest.raises(DomainError):
        V + vf.zero(3)


def test_points_of_wrong_dimension_rejected():
    with pytest.raises(DomainError):
        vf.dilation((0.0, 0.0)).value(np.zeros((3, 3)))


# ── Scalar fields ────────────────────────────────────────────────


def test_scalar_polynomial():
    phi = vf.scalar_polynomial([((2, 0), 1.0), ((0, 1), -2.0)], dimension=2)
    x = np.array([[1.5, 0.5]])
    assert phi.value(x)[0] == pytest.approx(1.25)
    np.testing.assert_allclose(phi.gradient(x)[0], [3.0, -2.0])
    assert phi(x)[0] == pytest.approx(1.25)


def test_scalar_constant():
    phi = vf.scalar_constant(2.5, 3)
    np.testing.assert_allclose(phi.value(np.zeros((4, 3))), 2.5)


# ── Surface functions ────────────────────────────────────────────


def test_fourier_modes_are_orthogonal():
    circle = Hypersurface.circle(1.0, nodes=64)
    c2, s2, c3 = vf.fourier_mode(2, "cos"), vf.fourier_mode(2, "sin"), vf.fourier_mode(3, "cos")
    assert surface_integral(circle, lambda f: c2.value(f) * s2.value(f)) == pytest.approx(0.0, abs=1e-14)
    assert surface_integral(circle, lambda f: c2.value(f) * c3.value(f)) == pytest.approx(0.0, abs=1e-14)
    assert surface_integral(circle, lambda f: c2.value(f) ** 2) == pytest.approx(math.pi)


@pytest.mark.parametrize("l, m, parity", [(0, 0, "cos"), (1, 0, "cos"), (2, 1, "sin"), (3, 2, "cos"), (4, 4, "sin")])
def test_spherical_harmonics_are_normalized(l, m, parity):
    sphere = Hypersurface.sphere(1.0, nodes_theta=48, nodes_phi=24)
    Y = vf.spherical_harmonic(l, m, parity)
    assert surface_integral(sphere, lambda f: Y.value(f) ** 2) == pytest.approx(1.0, rel=1e-12)


def test_spherical_harmonic_gradient_energy():
    # ∫|∇Y|² = l(l+1) ∫Y² on the unit sphere
    sphere = Hypersurface.sphere(1.0, nodes_theta=48, nodes_phi=24)
    Y = vf.spherical_harmonic(3, 1, "cos")
    energy = surface_integral(sphere, lambda f: np.sum(Y.tangential_gradient(f) ** 2, axis=-1))
    assert energy == pytest.approx(12.0, rel=1e-10)


def test_spherical_harmonic_arguments():
    with pytest.raises(DomainError):
        vf.spherical_harmonic(1, 2)
    with pytest.raises(DomainError):
        vf.spherical_harmonic(2, 0, "sin")


def test_restriction_of_coordinate_function(circle):
    phi = vf.scalar_polynomial([((1, 0), 1.0)], dimension=2)
    f = vf.restriction(circle, phi)
    frame = frames(circle, np.array([[0.4]]))
    assert f.value(frame)[0] == pytest.approx(0.5 * math.cos(0.4))
    # tangential part of e1
    expected = frame.tangents[0, :, 0] * frame.tangents[0, 0, 0]
    np.testing.assert_allclose(f.tangential_gradient(frame)[0], expected, atol=1e-15)


# ── Normal extension ─────────────────────────────────────────────


def test_cutoff_profile():
    chi, dchi = vf._cutoff(np.array([0.0, 0.85, 0.9, 0.95, 1.0]), 1.0)
    np.testing.assert_allclose(chi, [1.0, 1.0, 1.0, 0.0, 0.0], atol=1e-15)
    np.testing.assert_allclose(dchi, 0.0, atol=1e-12)


def test_normal_extension_is_constant_along_normals(circle):
    f = vf.fourier_mode(2, "cos")
    eta = vf.normal_extension(circle, f)
    theta = 0.7
    n = np.array([math.cos(theta), math.sin(theta)])
    for s in (-0.2, 0.0, 0.3):
        x = 0.5 * n + s * n
        np.testing.assert_allclose(eta.value(x), math.cos(2 * theta) * n, atol=1e-14)


def test_normal_extension_vanishes_outside_support(circle):
    eta = vf.normal_extension(circle, 1.0)
    np.testing.assert_allclose(eta.value(np.array([[0.0, 0.01], [1.2, 0.0]])), 0.0)
    assert eta.support_radius == pytest.approx(0.475)


@pytest.mark.parametrize("surface, f", [
    (Hypersurface.circle(0.5), vf.fourier_mode(3, "sin")),
    (Hypersurface.ellipse(2.0, 1.0), vf.fourier_mode(1, "cos")),
    (Hypersurface.sphere(0.5), vf.spherical_harmonic(2, 1, "cos")),
    (Hypersurface.torus(1.0, 0.3), vf.fourier_mode(2, "cos", axis=1)),
])
def test_normal_extension_jacobian_matches_differences(surface, f, rng):
    eta = vf.normal_extension(surface, f)
    params = rng.uniform(0.4, 2.6, size=(4, surface.dimension_ambient - 1))
    batch = frames(surface, params)
    # points inside the uncut part and inside the cut-off band
    for fraction in (0.3, -0.5, 0.92):
        x_all = batch.point + fraction * surface.reach * batch.normal
        for x in x_all:
            np.testing.assert_allclose(eta.jacobian(x), numeric_jacobian(eta, x), atol=5e-6)


def test_normal_extension_on_surface(sphere):
    frame, _ = surface_frames(sphere)
    eta = vf.normal_extension(sphere, 2.0)
    np.testing.assert_allclose(eta.value(frame.point[:10]), 2.0 * frame.normal[:10], atol=1e-14)


@pytest.mark.parametrize("surface, f", [
    (Hypersurface.circle(0.5), vf.fourier_mode(3, "sin")),
    (Hypersurface.ellipse(2.0, 1.0), vf.fourier_mode(2, "cos")),
    (Hypersurface.sphere(0.5), vf.spherical_harmonic(3, 2, "sin")),
    (Hypersurface.torus(1.0, 0.3), vf.fourier_mode(1, "sin", axis=0)),
])
def test_normal_extension_has_no_normal_stretch(surface, f, rng):
    eta = vf.normal_extension(surface, f)
    params = rng.uniform(0.4, 2.6, size=(6, surface.dimension_ambient - 1))
    batch = frames(surface, params)
    for fraction in (-0.8, -0.2, 0.0, 0.5, 0.85):
        x = batch.point + fraction * surface.reach * batch.normal
        nMn = np.einsum("ki,kij,kj->k", batch.normal, eta.jacobian(x), batch.normal)
        np.testing.assert_allclose(nMn, 0.0, atol=1e-10)


@pytest.mark.parametrize("pole", [1.0, -1.0])
def test_normal_extension_on_the_polar_axis(pole):
    sphere = Hypersurface.sphere(0.5)
    x = np.array([0.0, 0.0, 0.55 * pole])
    np.testing.assert_allclose(vf.normal_extension(sphere, 1.0).value(x), [0.0, 0.0, pole], atol=1e-15)
    eta = vf.normal_extension(sphere, vf.spherical_harmonic(1, 1) + vf.spherical_harmonic(2, 1, "sin"))
    np.testing.assert_allclose(eta.jacobian(x), numeric_jacobian(eta, x), atol=5e-6)
    inner = np.array([0.0, 0.0, 0.3 * pole])
    np.testing.assert_allclose(eta.jacobian(inner), numeric_jacobian(eta, inner), atol=5e-6)
