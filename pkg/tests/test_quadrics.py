import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from parallel_refractor.errors import DegenerateFoci, NoIntersection, NonVisible, RimProximity
from parallel_refractor.quadrics import (
    Eccentricity,
    Ellipsoid,
    Hyperboloid,
    confocal_expand,
    confocal_expand_s,
    contact_conic,
    ellipsoid_eval_grad,
    ellipsoid_hessian,
    hyperboloid_derivatives,
    hyperboloid_eval,
    max_semiaxis,
    semiaxis_bound,
)
from parallel_refractor.receiver import HorizontalPlane
from parallel_refractor.refraction import refract


def random_sheet(rng, eps=2.0, n=2):
    return Hyperboloid(rng.uniform(0.3, 2.0), [*rng.uniform(-1, 1, n), rng.uniform(4.0, 10.0)], eps)


def test_eccentricity_constants():
    e = Eccentricity(2.0)
    assert e.kappa == 0.75
    assert e.k == 3.0
    assert e.lipschitz_bound == pytest.approx(1 / np.sqrt(3.0))
    with pytest.raises(ValueError):
        Eccentricity(1.0)
    with pytest.raises(ValueError):
        Eccentricity(-2.0)


def test_focal_distance_identity(rng):
    # every point of the sheet satisfies |X - Z| = eps (Zh - X_h) - k a
    for _ in range(20):
        H = random_sheet(rng, eps=rng.uniform(1.1, 4.0))
        x = rng.uniform(-3, 3, size=(50, 2))
        X = np.concatenate([x, H(x)[:, None]], axis=1)
        lhs = np.linalg.norm(X - H.Z, axis=1)
        rhs = H.ecc.eps * (H.height - X[:, -1]) - H.ecc.k * H.a
        np.testing.assert_allclose(lhs, rhs, rtol=1e-12)


def test_sheet_focuses_vertical_rays(rng):
    for _ in range(10):
        H = random_sheet(rng, eps=rng.uniform(1.2, 3.0))
        x = rng.uniform(-2, 2, size=(20, 2))
        X = np.concatenate([x, H(x)[:, None]], axis=1)
        Y = refract(H.gradient(x), H.ecc)
        d = (H.Z - X) / np.linalg.norm(H.Z - X, axis=1, keepdims=True)
        np.testing.assert_allclose(Y, d, atol=1e-12)


def test_derivatives_match_finite_differences(rng):
    H = random_sheet(rng)
    x = rng.uniform(-2, 2, size=(10, 2))
    g, Hs = hyperboloid_derivatives(H, x)
    h = 1e-5
    for j, e in enumerate(np.eye(2)):
        np.testing.assert_allclose(g[:, j], (H(x + h * e) - H(x - h * e)) / (2 * h), atol=1e-9)
        np.testing.assert_allclose(Hs[:, :, j], (H.gradient(x + h * e) - H.gradient(x - h * e)) / (2 * h), atol=1e-8)


@settings(max_examples=100, deadline=None)
@given(eps=st.floats(1.05, 5.0), a=st.floats(1e-3, 10.0), r=st.floats(0.0, 1e4))
def test_gradient_strictly_below_asymptote(eps, a, r):
    H = Hyperboloid(a, [0.0, 0.0, 1.0], eps)
    g = H.gradient(np.array([r, 0.0]))
    assert np.linalg.norm(g) < 1.0 / np.sqrt(H.ecc.k)


def test_semiaxis_bound_touches_zero(rng):
    for _ in range(20):
        eps = rng.uniform(1.1, 3.0)
        h, rho = rng.uniform(5, 20), rng.uniform(0.1, 2.0)
        a = semiaxis_bound(h, rho, eps)
        H = Hyperboloid(a, [0.0, 0.0, h], eps)
        assert H(np.array([rho, 0.0])) == pytest.approx(0.0, abs=1e-12 * h)
        assert H(np.array([0.5 * rho, 0.0])) > 0.0


def test_max_semiaxis_rejects_invisible_focus():
    with pytest.raises(NonVisible):
        max_semiaxis([0.0, 0.0, -1.0], 1.0, 2.0)
    with pytest.raises(NonVisible):
        max_semiaxis([0.0, 0.0, 0.1], 10.0, 2.0)
    a, rho = max_semiaxis([0.0, 0.0, 10.0], 1.0, 2.0)
    assert rho == 1.0
    assert a == pytest.approx((20.0 - np.hypot(10.0, 1.0)) / 3.0)


def test_confocal_expansion_touches_and_dominates(rng):
    for _ in range(10):
        H1 = random_sheet(rng)
        x0 = rng.uniform(-1, 1, 2)
        H2 = confocal_expand_s(H1, x0, rng.uniform(1.1, 3.0))
        assert H2(x0) == pytest.approx(H1(x0), abs=1e-12)
        xs = x0 + 0.3 * rng.normal(size=(200, 2))
        assert np.all(H2(xs) - H1(xs) >= -1e-12)


def test_confocal_expand_lands_on_surface(rng):
    H1 = Hyperboloid(1.0, [0.0, 0.0, 5.0], 2.0)
    target = HorizontalPlane(8.0)
    H2 = confocal_expand(H1, np.array([0.3, -0.2]), target)
    assert H2.height == pytest.approx(8.0, abs=1e-12)
    with pytest.raises(NoIntersection):
        confocal_expand(H1, np.array([0.3, -0.2]), HorizontalPlane(3.0))


def test_contact_conic_contains_crossings(rng):
    for _ in range(10):
        H1, H2 = random_sheet(rng), random_sheet(rng)
        conic = contact_conic(H1, H2)
        for _ in range(10):
            x = rng.uniform(-4, 4, 2)
            d = rng.normal(size=2)
            f = lambda s: H1(x + s * d) - H2(x + s * d)
            ss = np.linspace(-20, 20, 401)
            vals = np.array([f(s) for s in ss])
            for i in np.nonzero(np.sign(vals[:-1]) != np.sign(vals[1:]))[0]:
                from scipy.optimize import brentq
                s = brentq(f, ss[i], ss[i + 1], xtol=1e-14)
                X = x + s * d
                assert abs(conic.evaluate(X)) <= 1e-8 * conic.residual_scale(X)


def test_contact_conic_classification():
    ecc = Eccentricity(2.0)
    far = contact_conic(Hyperboloid(1.0, [0, 0, 5], ecc), Hyperboloid(1.0, [3, 0, 5], ecc))
    assert far.classification == "hyperboloid-sheet"
    near = contact_conic(Hyperboloid(1.0, [0, 0, 5], ecc), Hyperboloid(0.5, [0.1, 0, 8], ecc))
    assert near.classification == "ellipsoid"
    with pytest.raises(DegenerateFoci):
        contact_conic(Hyperboloid(1.0, [0, 0, 5], ecc), Hyperboloid(0.5, [0, 0, 8], ecc))
    assert contact_conic(Hyperboloid(1.0, [0, 0, 5], ecc), Hyperboloid(0.5, [0, 0, 8], ecc),
                         allow_degenerate=True).classification == "ellipsoid"


def test_ellipsoid_derivatives_and_rim(rng):
    E = Ellipsoid(1.0, [0.0, 0.0, 5.0], 0.5)
    x = rng.uniform(-0.5, 0.5, size=(10, 2))
    v, g = ellipsoid_eval_grad(E, x)
    h = 1e-6
    for j, e in enumerate(np.eye(2)):
        fd = (ellipsoid_eval_grad(E, x + h * e)[0] - ellipsoid_eval_grad(E, x - h * e)[0]) / (2 * h)
        np.testing.assert_allclose(g[:, j], fd, atol=1e-8)
        fdh = (ellipsoid_eval_grad(E, x + h * e)[1] - ellipsoid_eval_grad(E, x - h * e)[1]) / (2 * h)
        np.testing.assert_allclose(ellipsoid_hessian(E, x)[:, :, j], fdh, atol=1e-6)
    with pytest.raises(RimProximity):
        ellipsoid_eval_grad(E, np.array([E.rim_radius, 0.0]))


def test_ellipsoid_focuses_vertical_rays(rng):
    E = Ellipsoid(1.0, [0.2, -0.1, 5.0], 0.6)
    x = E.z + rng.uniform(-0.4, 0.4, size=(20, 2))
    v, g = ellipsoid_eval_grad(E, x)
    X = np.concatenate([x, v[:, None]], axis=1)
    d = (E.Z - X) / np.linalg.norm(E.Z - X, axis=1, keepdims=True)
    np.testing.assert_allclose(refract(g, E.ecc), d, atol=1e-12)


def test_eval_broadcasts():
    H = Hyperboloid(1.0, [0, 0, 5], 2.0)
    x = np.zeros((3, 4, 2))
    assert hyperboloid_eval(H, x).shape == (3, 4)
    assert H.Z.flags.writeable is False
