import numpy as np
import pytest

from parallel_refractor.domain import (
    ConstantDensity,
    Disk,
    ExpressionDensity,
    GridDensity,
    Polygon,
    Rect,
    domain_from_descriptor,
    make_grid,
)


def shoelace(v):
    x, y = v[:, 0], v[:, 1]
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def test_disk_area_converges():
    for res, tol in ((64, 1e-3), (256, 1e-4)):
        area = make_grid(Disk((0.3, -0.2), 1.0), res).weights().sum()
        assert area == pytest.approx(np.pi, rel=tol)


def test_rect_area_exact():
    assert make_grid(Rect((0, 0), (2, 1)), 50).weights().sum() == pytest.approx(2.0, rel=1e-14)


def test_polygon_area_matches_shoelace():
    v = np.array([[0, 0], [2, 0], [2.5, 1.5], [1, 2.2], [-0.4, 1.0]])
    grid = make_grid(Polygon(v), 256, supersample=16)
    assert grid.weights().sum() == pytest.approx(shoelace(v), rel=5e-4)


def test_rho_is_farthest_point():
    d = Disk((0.0, 0.0), 2.0)
    assert d.rho([1.0, 0.0]) == pytest.approx(3.0)
    r = Rect((0, 0), (1, 2))
    assert r.rho([0, 0]) == pytest.approx(np.hypot(1, 2))
    p = Polygon([[0, 0], [1, 0], [0, 1]])
    assert p.rho([0, 0]) == pytest.approx(1.0)


def test_project_lands_inside_or_on_boundary(rng):
    for dom in (Disk((0, 0), 1.0), Rect((-1, -1), (1, 1)), Polygon([[0, 0], [2, 0], [1, 2]])):
        x = rng.uniform(-3, 3, size=(50, 2))
        px = dom.project(x)
        nudged = px + 1e-9 * (np.mean(dom.bbox(), axis=0) - px)
        assert np.all(dom.contains(nudged) | np.isclose(np.linalg.norm(px - x, axis=1), 0))


def test_descriptor_roundtrip():
    for dom in (Disk((0.1, 0.2), 1.5), Rect((0, 0), (1, 3)), Polygon([[0, 0], [1, 0], [0, 1]])):
        again = domain_from_descriptor(dom.descriptor())
        assert again.descriptor() == dom.descriptor()


def test_expression_density():
    f = ExpressionDensity("1 + 0.5*cos(pi*x0)*x1**2")
    x = np.array([[0.0, 1.0], [1.0, 2.0]])
    np.testing.assert_allclose(f(x), [1.5, -1.0])
    assert ExpressionDensity("2").__call__(x).shape == (2,)
    with pytest.raises(ValueError):
        ExpressionDensity("__import__('os')")


def test_grid_density_interpolates_linearly():
    f = GridDensity([0.0, 0.0], [1.0, 1.0], np.array([[0.0, 1.0], [2.0, 3.0]]))
    assert f(np.array([0.5, 0.5])) == pytest.approx(1.5)
    assert f(np.array([5.0, 5.0])) == 0.0
    assert f.upper_bound() == 3.0
    with pytest.raises(ValueError):
        GridDensity([0, 0], [1, 1], -np.ones((2, 2)))


def test_weights_scale_with_density():
    grid = make_grid(Rect((0, 0), (1, 1)), 20)
    np.testing.assert_allclose(grid.weights(ConstantDensity(3.0)), 3.0 * grid.weights())
