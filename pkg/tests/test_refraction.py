import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from parallel_refractor.errors import GradientTooLarge, TotalInternal
from parallel_refractor.quadrics import Eccentricity
from parallel_refractor.refraction import (
    check_slope,
    cone_floor,
    q_value,
    refract,
    refract_from_normal,
    refract_jacobian,
    snell_angles,
    surface_normal,
)


def heckbert_refract(incident, normal, ratio):
    """Textbook vector Snell law with ``normal`` facing the incoming ray."""
    c = -incident @ normal
    k = 1.0 - ratio ** 2 * (1.0 - c * c)
    return ratio * incident + (ratio * c - np.sqrt(k)) * normal


def admissible_slopes(rng, ecc, size, n=2, fill=0.95):
    d = rng.normal(size=(size, n))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r = fill * (1.0 / np.sqrt(ecc.k) if ecc.kappa > 0 else 3.0)
    return d * (r * rng.uniform(0, 1, size=(size, 1)) ** 0.5)


@pytest.mark.parametrize("eps", [1.5, 2.0, 3.0, 0.5, 0.8])
def test_matches_textbook_snell(eps, rng):
    ecc = Eccentricity(eps)
    p = admissible_slopes(rng, ecc, 200)
    Y = refract(p, ecc)
    gam = surface_normal(p)
    e = np.array([0.0, 0.0, 1.0])
    for j in range(len(p)):
        ref = heckbert_refract(e, -gam[j], eps)
        np.testing.assert_allclose(Y[j], ref, atol=1e-13)


@pytest.mark.parametrize("eps,expected", [(1.5, 2 / 3), (2.0, 0.5), (3.0, 1 / 3), (0.5, 0.5), (0.8, 0.8)])
def test_cone_floor_frozen(eps, expected):
    assert cone_floor(eps) == pytest.approx(expected, rel=1e-15)


@pytest.mark.parametrize("eps", [1.5, 2.0, 0.8])
def test_cone_floor_is_limit_of_vertical_component(eps):
    ecc = Eccentricity(eps)
    lim = (1 - 1e-8) / np.sqrt(ecc.k) if ecc.kappa > 0 else 1e6
    Y = refract(np.array([lim, 0.0]), ecc)
    assert Y[-1] >= cone_floor(ecc) - 1e-12
    assert Y[-1] == pytest.approx(cone_floor(ecc), abs=1e-3)


def test_normal_form_agrees_with_slope_form(rng):
    ecc = Eccentricity(2.0)
    p = admissible_slopes(rng, ecc, 100)
    np.testing.assert_allclose(refract_from_normal(surface_normal(p), ecc), refract(p, ecc), atol=1e-14)


def test_total_internal_reflection_raises():
    with pytest.raises(TotalInternal):
        refract_from_normal(surface_normal(np.array([5.0, 0.0])), Eccentricity(2.0))


def test_slope_guard():
    ecc = Eccentricity(2.0)
    with pytest.raises(GradientTooLarge):
        check_slope(np.array([1.0 / np.sqrt(3.0), 0.0]), ecc)
    check_slope(np.array([0.5, 0.0]), ecc)
    check_slope(np.array([100.0, 0.0]), Eccentricity(0.5))


def test_jacobian_matches_finite_differences(rng):
    ecc = Eccentricity(1.7)
    for p in admissible_slopes(rng, ecc, 10):
        J = refract_jacobian(p, ecc)
        h = 1e-6
        fd = np.stack([(refract(p + h * e, ecc) - refract(p - h * e, ecc)) / (2 * h) for e in np.eye(2)], axis=-1)
        np.testing.assert_allclose(J, fd, atol=1e-8)


@settings(max_examples=200, deadline=None)
@given(
    eps=st.sampled_from([1.2, 1.5, 2.0, 3.0, 0.3, 0.5, 0.8]),
    px=st.floats(-0.99, 0.99),
    py=st.floats(-0.99, 0.99),
)
def test_unit_length_and_snell_ratio(eps, px, py):
    ecc = Eccentricity(eps)
    p = np.array([px, py])
    if ecc.kappa > 0:
        p = p / np.sqrt(ecc.k)
        if np.linalg.norm(p) >= 0.999 / np.sqrt(ecc.k):
            return
    Y = refract(p, ecc)
    assert abs(np.linalg.norm(Y) - 1.0) < 1e-12
    assert Y[-1] >= cone_floor(ecc) - 1e-12
    t1, t2 = snell_angles(p, ecc)
    assert abs(np.sin(t2) - eps * np.sin(t1)) < 1e-12
    assert q_value(p, ecc) > 0
