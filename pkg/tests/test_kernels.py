import numpy as np
import pytest

from parallel_refractor import _pykernels, kernels

ck = pytest.importorskip("parallel_refractor._ckernels")


def data(rng, M=2000, N=7, eps=1.7):
    pts = rng.uniform(-1, 1, size=(M, 2))
    a = rng.uniform(0.2, 1.0, N)
    foci = rng.uniform(-1, 1, size=(N, 2))
    heights = rng.uniform(5, 8, N)
    return pts, a, foci, heights, eps


def test_backends_agree_on_envelope(rng):
    args = data(rng)
    v1, i1 = _pykernels.envelope_min(*args)
    v2, i2 = ck.envelope_min(*args)
    np.testing.assert_allclose(v1, v2, rtol=0, atol=1e-13)
    np.testing.assert_array_equal(i1, i2)


def test_envelope_matches_bruteforce(rng):
    pts, a, foci, heights, eps = data(rng, M=300)
    k = eps * eps - 1
    r2 = ((pts[:, None, :] - foci[None]) ** 2).sum(-1)
    H = heights - a * eps - np.sqrt(a * a + r2 / k)
    val, idx = kernels.envelope_min(pts, a, foci, heights, eps)
    np.testing.assert_allclose(val, H.min(1), atol=1e-13)
    np.testing.assert_array_equal(idx, H.argmin(1))


def test_ties_pick_lowest_index():
    pts = np.zeros((1, 2))
    for mod in (_pykernels, ck):
        v, i = mod.envelope_min(pts, np.array([1.0, 1.0, 1.0]), np.zeros((3, 2)), np.full(3, 5.0), 2.0)
        assert i[0] == 0


def test_capture_flux_semantics(rng):
    M = 500
    r2 = rng.uniform(0, 2, M)
    w = rng.uniform(0, 1, M)
    lower = rng.uniform(-3, 3, M)
    upper = rng.uniform(-3, 3, M)
    a, h, eps = 0.7, 5.0, 2.0
    H = h - a * eps - np.sqrt(a * a + r2 / (eps * eps - 1))
    ref = w[(H < lower) & (H <= upper)].sum()
    for mod in (_pykernels, ck):
        assert mod.capture_flux(r2, w, a, h, eps, lower, upper) == pytest.approx(ref, rel=1e-13)


def test_backend_flag():
    assert kernels.BACKEND in ("cython", "python")
