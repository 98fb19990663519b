import numpy as np
import pytest

from parallel_refractor.errors import NoHit, OutsideReceiverGrid, TangentialHit, VariantUnsupported
from parallel_refractor.gridfile import read_grid_file, write_grid_file
from parallel_refractor.quadrics import Eccentricity
from parallel_refractor.receiver import (
    GraphReceiver,
    GridReceiver,
    HorizontalPlane,
    ImplicitReceiver,
    check_visibility,
    load_grid_receiver,
    paraboloid,
    receiver_from_descriptor,
    second_fundamental_form,
    sphere_cap,
    stretch,
    stretch_gradient,
    tilted_plane,
)
from parallel_refractor.refraction import refract

ECC = Eccentricity(1.8)


def directions(rng, size):
    p = rng.uniform(-0.5, 0.5, size=(size, 2))
    return refract(p, ECC)


def test_plane_closed_form(rng):
    rcv = HorizontalPlane(7.0)
    X = np.concatenate([rng.uniform(-1, 1, (30, 2)), rng.uniform(0, 1, (30, 1))], axis=1)
    Y = directions(rng, 30)
    t = rcv.intersect(X, Y)
    np.testing.assert_allclose((X + t[:, None] * Y)[:, -1], 7.0, atol=1e-13)


def test_paraboloid_march_matches_quadratic_root(rng):
    height, curv = 6.0, -0.4
    rcv = paraboloid(height, curv)
    X = np.concatenate([rng.uniform(-1, 1, (40, 2)), rng.uniform(0, 1, (40, 1))], axis=1)
    Y = directions(rng, 40)
    t = rcv.intersect(X, Y)
    # X_h + t Y_h = height + curv/2 |x + t y|^2 solved as a quadratic in t
    A = 0.5 * curv * np.sum(Y[:, :2] ** 2, axis=1)
    B = curv * np.sum(X[:, :2] * Y[:, :2], axis=1) - Y[:, 2]
    C = height + 0.5 * curv * np.sum(X[:, :2] ** 2, axis=1) - X[:, 2]
    disc = np.sqrt(B * B - 4 * A * C)
    roots = np.stack([(-B - disc) / (2 * A), (-B + disc) / (2 * A)], axis=1)
    oracle = np.where(roots > 0, roots, np.inf).min(axis=1)
    np.testing.assert_allclose(t, oracle, rtol=1e-12)


def test_sphere_intersection_on_surface(rng):
    rcv = sphere_cap([0.0, 0.0, 2.0], 6.0)
    X = np.concatenate([rng.uniform(-1, 1, (20, 2)), np.zeros((20, 1))], axis=1)
    Y = directions(rng, 20)
    Z = X + rcv.intersect(X, Y)[:, None] * Y
    np.testing.assert_allclose(np.linalg.norm(Z - [0, 0, 2], axis=1), 6.0, rtol=1e-12)


def test_implicit_receiver_matches_graph(rng):
    graph = paraboloid(5.0, -0.3)
    implicit = ImplicitReceiver(graph.psi, graph.grad, graph.hess, n=2, height_scale=5.0,
                                check_points=np.array([[0.1, 0.2, 5.0]]))
    X = np.concatenate([rng.uniform(-1, 1, (10, 2)), np.zeros((10, 1))], axis=1)
    Y = directions(rng, 10)
    np.testing.assert_allclose(implicit.intersect(X, Y), graph.intersect(X, Y), rtol=1e-12)
    np.testing.assert_allclose(implicit.shifted(1.0).psi(X + [0, 0, 6]), graph.psi(X + [0, 0, 5]))


def test_origin_above_receiver_raises():
    with pytest.raises(NoHit):
        paraboloid(1.0, -0.1).intersect(np.array([[0.0, 0.0, 2.0]]), np.array([[0.0, 0.0, 1.0]]))


def test_derivative_check_rejects_wrong_hessian():
    with pytest.raises(ValueError, match="hessian"):
        GraphReceiver(lambda z: np.sum(z ** 2, -1), lambda z: 2 * z,
                      lambda z: np.broadcast_to(np.eye(2), np.shape(z)[:-1] + (2, 2)))


def test_tangential_hit_detected():
    class Wall(ImplicitReceiver):
        def intersect(self, X, Y, t_max=None):
            return np.full(np.shape(X)[:-1], 5.0)

    e1 = lambda Z: np.broadcast_to([1.0, 0.0, 0.0], np.shape(Z)).copy()  # noqa: E731
    rcv = Wall(lambda Z: Z[..., 0], e1, lambda Z: np.zeros(np.shape(Z) + (3,)), height_scale=5.0)
    with pytest.raises(TangentialHit):
        stretch(np.array([0.0, 0.0]), np.array(0.0), np.array([0.0, 0.0]), ECC, rcv)


def test_stretch_gradient_matches_finite_differences(rng):
    from parallel_refractor.quadrics import Hyperboloid
    rcv = paraboloid(8.0, -0.2)
    H = Hyperboloid(1.0, [0.1, -0.2, 7.0], ECC)
    x = rng.uniform(-0.8, 0.8, size=(6, 2))

    def t_of(x):
        return stretch(x, H(x), H.gradient(x), ECC, rcv).t

    tj = stretch_gradient(x, H(x), H.gradient(x), H.hessian(x), ECC, rcv)
    h = 1e-6
    for j, e in enumerate(np.eye(2)):
        np.testing.assert_allclose(tj[:, j], (t_of(x + h * e) - t_of(x - h * e)) / (2 * h), atol=1e-7)


def test_second_fundamental_form():
    rcv = paraboloid(5.0, -0.5)
    np.testing.assert_allclose(second_fundamental_form(rcv, np.zeros(2)), -0.5 * np.eye(2))
    cap = sphere_cap([0, 0, 0], 10.0)
    np.testing.assert_allclose(second_fundamental_form(cap, np.zeros(2)), -0.1 * np.eye(2), atol=1e-14)
    with pytest.raises(VariantUnsupported):
        second_fundamental_form(ImplicitReceiver(None, None, None), np.zeros(2))


def test_grid_receiver_roundtrip(tmp_path):
    exact = paraboloid(6.0, -0.3)
    axes = [np.linspace(-2, 2, 41)] * 2
    Zg = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    path = tmp_path / "rcv.txt"
    write_grid_file(path, [-2.0, -2.0], [0.1, 0.1], exact.phi(Zg))
    origin, spacing, values = read_grid_file(path)
    assert values.shape == (41, 41)
    rcv = load_grid_receiver(str(path))
    z = np.array([[0.33, -0.71], [1.2, 0.4]])
    np.testing.assert_allclose(rcv.phi(z), exact.phi(z), atol=1e-10)
    np.testing.assert_allclose(rcv.grad_phi(z), exact.grad_phi(z), atol=1e-8)
    np.testing.assert_allclose(rcv.hess_phi(z), exact.hess_phi(z), atol=1e-6)
    with pytest.raises(OutsideReceiverGrid):
        rcv.phi(np.array([3.0, 0.0]))
    assert isinstance(receiver_from_descriptor({"type": "grid", "path": str(path)}), GridReceiver)


def test_descriptor_roundtrip():
    for rcv in (HorizontalPlane(5.0), paraboloid(5.0, -0.2, [0.1, 0.0]), sphere_cap([0, 0, 1], 8.0),
                tilted_plane(4.0, [0.1, 0.2])):
        again = receiver_from_descriptor(rcv.descriptor())
        z = np.array([0.2, -0.3, 0.0])
        assert again.psi(z) == pytest.approx(rcv.psi(z))
    shifted = receiver_from_descriptor({"type": "plane", "height": 5.0, "offset": 2.0})
    assert shifted.psi(np.array([0.0, 0.0, 7.0])) == pytest.approx(0.0)


def test_visibility_plane_passes_and_crossing_plane_fails():
    ok = check_visibility(HorizontalPlane(5.0), [-1, -1], [1, 1], 0.5, ECC, samples=300)
    assert ok.passed and ok.min_value > 0
    bad = check_visibility(tilted_plane(0.2, [1.0, 0.0]), [-1, -1], [1, 1], 0.5, ECC, samples=300)
    assert not bad.passed
