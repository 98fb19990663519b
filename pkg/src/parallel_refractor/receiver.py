"""Receiver surfaces, the stretch function and visibility diagnostics.

A receiver is the zero set of a level function ``psi`` on R^{n+1}.  Graph
receivers use ``psi(Z) = Z^{n+1} - phi(z)`` so that ``psi < 0`` below the
surface and ``psi_{n+1} = 1``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import CubicSpline, RectBivariateSpline

from .errors import (
    NoHit,
    OutsideReceiverGrid,
    TangentialHit,
    VariantUnsupported,
)
from .gridfile import read_grid_file
from .quadrics import as_ecc
from .refraction import cone_floor, refract, refract_jacobian

MARCH_STEPS = 64
MARCH_REFINES = 30
BISECT_RTOL = 1e-12
NEWTON_STEPS = 2
TANGENT_TOL = 1e-10


class Receiver:
    """Common interface: level function with first and second derivatives."""

    n: int
    height_scale: float
    is_graph: bool = False

    def psi(self, Z):
        raise NotImplementedError

    def grad(self, Z):
        raise NotImplementedError

    def hess(self, Z):
        raise NotImplementedError

    def descriptor(self) -> dict:
        return {"type": "custom"}

    def shifted(self, M: float) -> "Receiver":
        raise NotImplementedError

    def intersect(self, X, Y, t_max: Optional[float] = None):
        """Smallest positive ``t`` with ``psi(X + t Y) = 0``."""
        return _march_intersect(self, X, Y, t_max)


@dataclass(frozen=True)
class HorizontalPlane(Receiver):
    m: float
    n: int = 2

    def __post_init__(self):
        if not self.m > 0.0:
            raise ValueError(f"plane height must be positive, got {self.m}")

    is_graph = True

    @property
    def height_scale(self) -> float:
        return float(self.m)

    def phi(self, z):
        z = np.asarray(z, dtype=float)
        return np.full(z.shape[:-1], float(self.m))

    def grad_phi(self, z):
        return np.zeros_like(np.asarray(z, dtype=float))

    def hess_phi(self, z):
        z = np.asarray(z, dtype=float)
        return np.zeros(z.shape[:-1] + (self.n, self.n))

    def psi(self, Z):
        return np.asarray(Z, dtype=float)[..., -1] - self.m

    def grad(self, Z):
        Z = np.asarray(Z, dtype=float)
        g = np.zeros_like(Z)
        g[..., -1] = 1.0
        return g

    def hess(self, Z):
        Z = np.asarray(Z, dtype=float)
        return np.zeros(Z.shape + (Z.shape[-1],))

    def descriptor(self) -> dict:
        return {"type": "plane", "height": float(self.m), "n": self.n}

    def shifted(self, M: float) -> "HorizontalPlane":
        return HorizontalPlane(self.m + M, self.n)

    def intersect(self, X, Y, t_max=None):
        X = np.asarray(X, dtype=float)
        Y = np.asarray(Y, dtype=float)
        t = (self.m - X[..., -1]) / Y[..., -1]
        if np.any(~(t > 0.0)):
            raise NoHit("ray starts on or above the receiver plane")
        return t


class GraphReceiver(Receiver):
    """Receiver ``Z^{n+1} = phi(z)`` given by analytic callables."""

    is_graph = True

    def __init__(
        self,
        phi: Callable,
        grad_phi: Callable,
        hess_phi: Callable,
        n: int = 2,
        height_scale: Optional[float] = None,
        descriptor: Optional[dict] = None,
        check_points=None,
        check: bool = True,
    ):
        self._phi = phi
        self._grad_phi = grad_phi
        self._hess_phi = hess_phi
        self.n = int(n)
        if height_scale is None:
            height_scale = max(1.0, abs(float(phi(np.zeros(self.n)))))
        self.height_scale = float(height_scale)
        self._descriptor = descriptor or {"type": "custom"}
        if check:
            if check_points is None:
                rng = np.random.default_rng(0)
                check_points = 0.5 * rng.uniform(-1.0, 1.0, size=(4, self.n))
            check_derivatives(self, np.atleast_2d(check_points))

    def phi(self, z):
        return np.asarray(self._phi(np.asarray(z, dtype=float)), dtype=float)

    def grad_phi(self, z):
        return np.asarray(self._grad_phi(np.asarray(z, dtype=float)), dtype=float)

    def hess_phi(self, z):
        return np.asarray(self._hess_phi(np.asarray(z, dtype=float)), dtype=float)

    def psi(self, Z):
        Z = np.asarray(Z, dtype=float)
        return Z[..., -1] - self.phi(Z[..., :-1])

    def grad(self, Z):
        Z = np.asarray(Z, dtype=float)
        g = self.grad_phi(Z[..., :-1])
        return np.concatenate([-g, np.ones(g.shape[:-1] + (1,))], axis=-1)

    def hess(self, Z):
        Z = np.asarray(Z, dtype=float)
        h = self.hess_phi(Z[..., :-1])
        out = np.zeros(Z.shape + (Z.shape[-1],))
        out[..., :-1, :-1] = -h
        return out

    def descriptor(self) -> dict:
        return dict(self._descriptor)

    def shifted(self, M: float) -> "GraphReceiver":
        desc = dict(self._descriptor)
        desc["offset"] = desc.get("offset", 0.0) + M
        return GraphReceiver(
            lambda z: self.phi(z) + M,
            self.grad_phi,
            self.hess_phi,
            n=self.n,
            height_scale=self.height_scale + M,
            descriptor=desc,
            check=False,
        )


class ImplicitReceiver(Receiver):
    """Receiver ``psi(Z) = 0`` with ``psi < 0`` on the source side."""

    def __init__(self, psi, grad, hess, n: int = 2, height_scale: float = 1.0,
                 check_points=None, check: bool = True):
        self._psi, self._grad, self._hess = psi, grad, hess
        self.n = int(n)
        self.height_scale = float(height_scale)
        if check and check_points is not None:
            check_derivatives(self, np.atleast_2d(check_points))

    def psi(self, Z):
        return np.asarray(self._psi(np.asarray(Z, dtype=float)), dtype=float)

    def grad(self, Z):
        return np.asarray(self._grad(np.asarray(Z, dtype=float)), dtype=float)

    def hess(self, Z):
        return np.asarray(self._hess(np.asarray(Z, dtype=float)), dtype=float)

    def shifted(self, M: float) -> "ImplicitReceiver":
        e = np.zeros(self.n + 1)
        e[-1] = M
        return ImplicitReceiver(
            lambda Z: self.psi(np.asarray(Z) - e),
            lambda Z: self.grad(np.asarray(Z) - e),
            lambda Z: self.hess(np.asarray(Z) - e),
            n=self.n,
            height_scale=self.height_scale + M,
            check=False,
        )


def check_derivatives(rcv: Receiver, points, rtol: float = 1e-5):
    """Compare analytic derivatives against central differences; raise on mismatch."""
    points = np.asarray(points, dtype=float)
    if isinstance(rcv, GraphReceiver):
        f, g, h = rcv.phi, rcv.grad_phi, rcv.hess_phi
        dim = rcv.n
    else:
        f, g, h = rcv.psi, rcv.grad, rcv.hess
        dim = rcv.n + 1
    if points.shape[-1] != dim:
        raise ValueError(f"check points must have dimension {dim}")
    step = 1e-5 * max(1.0, float(np.max(np.abs(points))))
    eye = np.eye(dim)
    for x in points:
        g0 = g(x)
        h0 = h(x)
        fd_g = np.array([(f(x + step * e) - f(x - step * e)) / (2 * step) for e in eye])
        fd_h = np.array([(g(x + step * e) - g(x - step * e)) / (2 * step) for e in eye])
        scale_g = max(1.0, float(np.max(np.abs(g0))))
        scale_h = max(1.0, float(np.max(np.abs(h0))))
        if np.max(np.abs(fd_g - g0)) > rtol * scale_g:
            raise ValueError(f"receiver gradient inconsistent with its values at {x.tolist()}")
        if np.max(np.abs(fd_h - h0)) > rtol * scale_h or np.max(np.abs(h0 - np.swapaxes(h0, -1, -2))) > rtol * scale_h:
            raise ValueError(f"receiver hessian inconsistent with its gradient at {x.tolist()}")


def paraboloid(height: float, curvature: float, center=None, n: int = 2) -> GraphReceiver:
    """``phi(z) = height + curvature/2 |z - c|^2``; concave for ``curvature < 0``."""
    c = np.zeros(n) if center is None else np.asarray(center, dtype=float)
    k = float(curvature)

    def phi(z):
        r = z - c
        return height + 0.5 * k * np.einsum("...i,...i->...", r, r)

    def grad(z):
        return k * (z - c)

    def hess(z):
        return k * np.broadcast_to(np.eye(n), np.shape(z)[:-1] + (n, n)).copy()

    desc = {"type": "paraboloid", "height": float(height), "curvature": k, "center": c.tolist()}
    return GraphReceiver(phi, grad, hess, n=n, height_scale=abs(height), descriptor=desc)


def sphere_cap(center, radius: float, concave: bool = True) -> GraphReceiver:
    """Upper (``concave``) or lower hemisphere of a sphere as a graph."""
    C = np.asarray(center, dtype=float)
    n = C.size - 1
    c, ch, R = C[:-1], C[-1], float(radius)
    s = 1.0 if concave else -1.0

    def root(z):
        r = z - c
        return np.sqrt(R * R - np.einsum("...i,...i->...", r, r))

    def phi(z):
        return ch + s * root(z)

    def grad(z):
        return -s * (z - c) / root(z)[..., None]

    def hess(z):
        r = z - c
        w = root(z)[..., None, None]
        outer = r[..., :, None] * r[..., None, :]
        return -s * (np.eye(n) / w + outer / w ** 3)

    desc = {"type": "sphere_cap", "center": C.tolist(), "radius": R, "concave": bool(concave)}
    pts = c + 0.3 * R * np.array([[0.1 * (i + 1) - 0.2] * n for i in range(3)])
    return GraphReceiver(phi, grad, hess, n=n, height_scale=abs(ch) + R,
                         descriptor=desc, check_points=pts)


def tilted_plane(height: float, slope, n: int = 2) -> GraphReceiver:
    """``phi(z) = height + slope . z``."""
    s = np.asarray(slope, dtype=float)
    desc = {"type": "tilted_plane", "height": float(height), "slope": s.tolist()}
    return GraphReceiver(
        lambda z: height + np.asarray(z) @ s,
        lambda z: np.broadcast_to(s, np.shape(z)).copy(),
        lambda z: np.zeros(np.shape(z)[:-1] + (n, n)),
        n=n,
        height_scale=abs(height),
        descriptor=desc,
    )


class GridReceiver(GraphReceiver):
    """Graph receiver interpolated from samples on a regular grid.

    Queries outside the sampled rectangle raise :class:`OutsideReceiverGrid`.
    """

    def __init__(self, origin, spacing, values, path: Optional[str] = None):
        values = np.asarray(values, dtype=float)
        origin = np.atleast_1d(np.asarray(origin, dtype=float))
        spacing = np.atleast_1d(np.asarray(spacing, dtype=float))
        n = values.ndim
        if n not in (1, 2):
            raise ValueError("grid receivers support n = 1 or n = 2")
        self.axes = [origin[i] + spacing[i] * np.arange(values.shape[i]) for i in range(n)]
        self.lo = np.array([a[0] for a in self.axes])
        self.hi = np.array([a[-1] for a in self.axes])
        if n == 2:
            spl = RectBivariateSpline(self.axes[0], self.axes[1], values, kx=3, ky=3)
            self._spl = spl

            def phi(z):
                return self._ev(z, 0, 0)

            def grad(z):
                return np.stack([self._ev(z, 1, 0), self._ev(z, 0, 1)], axis=-1)

            def hess(z):
                hxx, hxy, hyy = self._ev(z, 2, 0), self._ev(z, 1, 1), self._ev(z, 0, 2)
                return np.stack([np.stack([hxx, hxy], -1), np.stack([hxy, hyy], -1)], -2)
        else:
            spl = CubicSpline(self.axes[0], values)
            self._spl = spl

            def phi(z):
                return spl(self._inside(z)[..., 0])

            def grad(z):
                return spl(self._inside(z)[..., 0], 1)[..., None]

            def hess(z):
                return spl(self._inside(z)[..., 0], 2)[..., None, None]

        mid = 0.5 * (self.lo + self.hi)
        half = 0.25 * (self.hi - self.lo)
        pts = mid + half * np.array([[0.3] * n, [-0.2] * n, [0.1] * n])
        desc = {"type": "grid", "path": path} if path else {"type": "grid"}
        super().__init__(phi, grad, hess, n=n,
                         height_scale=float(np.max(np.abs(values))),
                         descriptor=desc, check_points=pts)

    def _inside(self, z):
        z = np.asarray(z, dtype=float)
        tol = 1e-12 * (1.0 + np.abs(self.hi - self.lo))
        if np.any(z < self.lo - tol) or np.any(z > self.hi + tol):
            raise OutsideReceiverGrid("query point lies outside the sampled receiver grid")
        return z

    def _ev(self, z, dx, dy):
        z = self._inside(z)
        shape = z.shape[:-1]
        zz = z.reshape(-1, 2)
        return self._spl.ev(zz[:, 0], zz[:, 1], dx=dx, dy=dy).reshape(shape)

    def shifted(self, M: float) -> "GridReceiver":
        out = GraphReceiver.shifted(self, M)
        out.lo, out.hi = self.lo, self.hi
        return out


def load_grid_receiver(path: str) -> GridReceiver:
    """Read a sampled receiver in the layout described in :mod:`.gridfile`."""
    origin, spacing, values = read_grid_file(path)
    return GridReceiver(origin, spacing, values, path=path)


def receiver_from_descriptor(desc: dict) -> Receiver:
    kind = desc.get("type")
    n = int(desc.get("n", 2))
    offset = float(desc.get("offset", 0.0))
    if kind == "plane":
        rcv = HorizontalPlane(float(desc["height"]), n)
    elif kind == "paraboloid":
        center = desc.get("center")
        n = len(center) if center is not None else n
        rcv = paraboloid(float(desc["height"]), float(desc["curvature"]), center, n)
    elif kind == "sphere_cap":
        rcv = sphere_cap(desc["center"], float(desc["radius"]), bool(desc.get("concave", True)))
    elif kind == "tilted_plane":
        rcv = tilted_plane(float(desc["height"]), desc["slope"], len(desc["slope"]))
    elif kind == "grid":
        rcv = load_grid_receiver(desc["path"])
    else:
        raise ValueError(f"unknown receiver type {kind!r}")
    return rcv.shifted(offset) if offset else rcv


@dataclass(frozen=True)
class SurfacePoint:
    """Hit point ``Z = X + t Y`` of a refracted ray on the receiver."""

    Z: np.ndarray
    t: np.ndarray
    Y: np.ndarray


def default_t_max(rcv: Receiver, ecc) -> float:
    return 10.0 * rcv.height_scale / cone_floor(ecc)


def _march_intersect(rcv: Receiver, X, Y, t_max=None, steps: int = MARCH_STEPS):
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    shape = np.broadcast_shapes(X.shape, Y.shape)
    X = np.broadcast_to(X, shape).reshape(-1, shape[-1])
    Y = np.broadcast_to(Y, shape).reshape(-1, shape[-1])
    if t_max is None:
        t_max = 10.0 * rcv.height_scale / max(float(np.min(Y[:, -1])), 1e-3)
    f0 = rcv.psi(X)
    if np.any(~(f0 < 0.0)):
        raise NoHit("ray origin is not below the receiver")
    M = X.shape[0]
    lo = np.zeros(M)
    hi = np.full(M, np.nan)
    span = np.full(M, float(t_max))
    pending = np.arange(M)
    # rays that leave the receiver's footprint (psi undefined) are marched
    # again over the shorter span before the first undefined sample
    for _ in range(MARCH_REFINES):
        if pending.size == 0:
            break
        start = lo[pending].copy()
        dt = (span[pending] - start) / steps
        active = np.ones(pending.size, dtype=bool)
        cut = np.zeros(pending.size, dtype=bool)
        for k in range(1, steps + 1):
            j = np.nonzero(active)[0]
            if j.size == 0:
                break
            t = start[j] + k * dt[j]
            with np.errstate(invalid="ignore"):
                f = rcv.psi(X[pending[j]] + t[:, None] * Y[pending[j]])
            crossed = f >= 0.0
            undefined = ~np.isfinite(f)
            hi[pending[j[crossed]]] = t[crossed]
            span[pending[j[undefined]]] = t[undefined]
            ok = ~(crossed | undefined)
            lo[pending[j[ok]]] = t[ok]
            cut[j[undefined]] = True
            active[j[~ok]] = False
        missed = pending[active]
        if missed.size:
            raise NoHit(f"{missed.size} ray(s) travel farther than {t_max:.6g} without reaching the receiver")
        pending = pending[cut]
    if pending.size:
        raise NoHit(f"{pending.size} ray(s) leave the receiver's footprint without reaching it")
    while True:
        width = hi - lo
        todo = width > BISECT_RTOL * hi
        if not np.any(todo):
            break
        idx = np.nonzero(todo)[0]
        mid = 0.5 * (lo[idx] + hi[idx])
        f = rcv.psi(X[idx] + mid[:, None] * Y[idx])
        up = f >= 0.0
        hi[idx[up]] = mid[up]
        lo[idx[~up]] = mid[~up]
    t = 0.5 * (lo + hi)
    for _ in range(NEWTON_STEPS):
        Z = X + t[:, None] * Y
        slope = np.einsum("ij,ij->i", rcv.grad(Z), Y)
        f = rcv.psi(Z)
        with np.errstate(divide="ignore", invalid="ignore"):
            t_new = t - f / slope
        ok = np.isfinite(t_new) & (t_new >= lo - BISECT_RTOL * hi) & (t_new <= hi + BISECT_RTOL * hi)
        t = np.where(ok, t_new, t)
    return t.reshape(shape[:-1])


def stretch(x, u, p, ecc, rcv: Receiver, t_max: Optional[float] = None) -> SurfacePoint:
    """Follow the refracted ray from ``(x, u)`` with slope ``p`` to the receiver."""
    ecc = as_ecc(ecc)
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    Y = refract(p, ecc)
    X = np.concatenate([x, u[..., None]], axis=-1)
    if t_max is None:
        t_max = default_t_max(rcv, ecc)
    t = rcv.intersect(X, Y, t_max)
    Z = X + t[..., None] * Y
    g = rcv.grad(Z)
    gY = np.einsum("...i,...i->...", g, Y)
    if np.any(np.abs(gY) < TANGENT_TOL * np.linalg.norm(g, axis=-1)):
        raise TangentialHit("refracted ray meets the receiver tangentially")
    return SurfacePoint(Z, t, Y)


def stretch_gradient(x, u, p, D2u, ecc, rcv: Receiver, sp: Optional[SurfacePoint] = None):
    """Derivatives ``t_j`` of the stretch along the source coordinates."""
    ecc = as_ecc(ecc)
    p = np.asarray(p, dtype=float)
    if sp is None:
        sp = stretch(x, u, p, ecc, rcv)
    g = rcv.grad(sp.Z)
    dYdp = refract_jacobian(p, ecc)
    Yj = np.einsum("...ak,...kj->...aj", dYdp, np.asarray(D2u, dtype=float))
    gY = np.einsum("...a,...a->...", g, sp.Y)
    gYj = np.einsum("...a,...aj->...j", g, Yj)
    num = g[..., :-1] + g[..., -1:] * p + sp.t[..., None] * gYj
    return -num / gY[..., None]


def second_fundamental_form(rcv: Receiver, z):
    """``D^2 phi / sqrt(1 + |D phi|^2)`` for graph receivers."""
    if not getattr(rcv, "is_graph", False):
        raise VariantUnsupported("second fundamental form requires a graph receiver")
    z = np.asarray(z, dtype=float)
    g = rcv.grad_phi(z)
    h = rcv.hess_phi(z)
    w = np.sqrt(1.0 + np.einsum("...i,...i->...", g, g))
    return h / w[..., None, None]


@dataclass(frozen=True)
class VisibilityReport:
    min_value: float
    passed: bool
    pairs: int
    worst_X: np.ndarray
    worst_Z: np.ndarray


def check_visibility(rcv: Receiver, box_lo, box_hi, m0: float, ecc, samples: int = 2000,
                     patch_lo=None, patch_hi=None, seed: int = 0) -> VisibilityReport:
    """Sample ``grad psi(Z) . (Z - X)`` over source points and receiver points.

    ``X`` ranges over ``box x [0, m0]`` and ``Z`` over the receiver above the
    patch (the box widened by the reach of the refraction cone by default).
    Only pairs whose direction ``Z - X`` lies inside the refraction cone
    are counted, since no refracted ray joins any other pair.  With the
    ``psi`` orientation used here the value is positive when rays meet
    the receiver from below.
    """
    ecc = as_ecc(ecc)
    box_lo = np.asarray(box_lo, dtype=float)
    box_hi = np.asarray(box_hi, dtype=float)
    rng = np.random.default_rng(seed)
    c = cone_floor(ecc)
    n = box_lo.size
    X = np.concatenate(
        [rng.uniform(box_lo, box_hi, size=(samples, n)), rng.uniform(0.0, m0, size=(samples, 1))], axis=1
    )
    if getattr(rcv, "is_graph", False):
        reach = rcv.height_scale * np.sqrt(1.0 - c * c) / c
        plo = box_lo - reach if patch_lo is None else np.asarray(patch_lo, dtype=float)
        phi_ = box_hi + reach if patch_hi is None else np.asarray(patch_hi, dtype=float)
        zs = rng.uniform(plo, phi_, size=(samples, n))
        Z = np.concatenate([zs, rcv.phi(zs)[:, None]], axis=1)
    else:
        dirs = rng.normal(size=(samples, n))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        cz = rng.uniform(c, 1.0, size=samples)
        Y = np.concatenate([dirs * np.sqrt(1 - cz * cz)[:, None], cz[:, None]], axis=1)
        t = rcv.intersect(X, Y, default_t_max(rcv, ecc))
        Z = X + t[:, None] * Y
    g = rcv.grad(Z)
    best, bi, bj, count = np.inf, 0, 0, 0
    for i in range(samples):
        d = Z - X[i]
        dn = np.linalg.norm(d, axis=1)
        in_cone = d[:, -1] >= c * dn
        if not np.any(in_cone):
            continue
        vals = np.einsum("ij,ij->i", g, d)
        vals = np.where(in_cone, vals, np.inf)
        j = int(np.argmin(vals))
        count += int(in_cone.sum())
        if vals[j] < best:
            best, bi, bj = float(vals[j]), i, j
    return VisibilityReport(best, bool(best > 0.0), count, X[bi], Z[bj])
