"""Refractors built as lower envelopes of finitely many hyperboloid sheets."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.optimize import minimize

from . import kernels
from .domain import Domain, SourceGrid
from .errors import DistanceViolation, NonUnique, VariantUnsupported
from .quadrics import Eccentricity, Hyperboloid, as_ecc, semiaxis_bound
from .receiver import Receiver, receiver_from_descriptor, stretch


class RefractorEnvelope:
    """``u(x) = min_i H(x, a_i, Z_i)`` with foci ``Z_i`` on the receiver."""

    def __init__(self, ecc, a, Z, receiver: Receiver, domain: Optional[Domain] = None,
                 check_bounds: bool = True):
        self.ecc = as_ecc(ecc)
        if self.ecc.eps <= 1.0:
            raise ValueError("envelopes are built from hyperboloids (eps > 1)")
        a = np.array(a, dtype=float).reshape(-1)
        Z = np.array(Z, dtype=float).reshape(a.size, -1)
        if np.any(~(a > 0.0)):
            raise ValueError("every semiaxis must be positive")
        if np.any(Z[:, -1] <= 0.0):
            raise DistanceViolation("targets must lie strictly above the source plane")
        self.receiver = receiver
        self.domain = domain
        if domain is not None and check_bounds:
            rho = np.array([domain.rho(z) for z in Z[:, :-1]])
            a_bar = semiaxis_bound(Z[:, -1], rho, self.ecc)
            too_big = a > a_bar * (1.0 + 1e-12)
            if np.any(too_big):
                raise ValueError(
                    f"semiaxes exceed their nonnegativity bound for pieces {np.nonzero(too_big)[0].tolist()}"
                )
        a.setflags(write=False)
        Z.setflags(write=False)
        self.a = a
        self.Z = Z

    @property
    def N(self) -> int:
        return self.a.size

    @property
    def n(self) -> int:
        return self.Z.shape[1] - 1

    def piece(self, i: int) -> Hyperboloid:
        return Hyperboloid(self.a[i], self.Z[i], self.ecc)

    @property
    def pieces(self):
        return [self.piece(i) for i in range(self.N)]

    def with_semiaxes(self, a) -> "RefractorEnvelope":
        return RefractorEnvelope(self.ecc, a, self.Z, self.receiver, self.domain, check_bounds=False)

    def eval(self, x):
        """Envelope value and active piece index (lowest index on ties)."""
        x = np.asarray(x, dtype=float)
        flat = np.ascontiguousarray(x.reshape(-1, self.n))
        val, idx = kernels.envelope_min(
            flat, np.ascontiguousarray(self.a), np.ascontiguousarray(self.Z[:, :-1]),
            np.ascontiguousarray(self.Z[:, -1]), self.ecc.eps,
        )
        return val.reshape(x.shape[:-1]), idx.reshape(x.shape[:-1])

    def value(self, x):
        return self.eval(x)[0]

    def piece_values(self, x):
        """All sheet heights, shape ``(N, ...)``."""
        x = np.asarray(x, dtype=float)
        r = x[None, ...] - self.Z[:, :-1].reshape((self.N,) + (1,) * (x.ndim - 1) + (self.n,))
        r2 = np.einsum("...i,...i->...", r, r)
        a = self.a.reshape((self.N,) + (1,) * (x.ndim - 1))
        zh = self.Z[:, -1].reshape(a.shape)
        return zh - a * self.ecc.eps - np.sqrt(a * a + r2 / self.ecc.k)

    def derivatives(self, x):
        """Value, active index, gradient and Hessian of the active piece."""
        x = np.asarray(x, dtype=float)
        val, idx = self.eval(x)
        k = self.ecc.k
        r = x - self.Z[idx, :-1]
        a = self.a[idx]
        r2 = np.einsum("...i,...i->...", r, r)
        S = np.sqrt(a * a + r2 / k)
        grad = -(r / k) / S[..., None]
        outer = r[..., :, None] * r[..., None, :]
        hess = -(np.eye(self.n) - outer / (k * S[..., None, None] ** 2)) / (k * S[..., None, None])
        return val, idx, grad, hess

    def active_ties(self, x, rtol: float = 1e-12):
        """Boolean ``(N, ...)`` mask of pieces within ``rtol`` of the envelope value."""
        vals = self.piece_values(x)
        best = vals.min(axis=0)
        tol = rtol * np.maximum(1.0, np.abs(best))
        return vals <= best + tol

    def refractor_map(self, x):
        """Focus of the active supporting sheet at each ``x``."""
        _, idx = self.eval(x)
        return self.Z[idx]

    def visibility_set(self, i: int, grid: SourceGrid, f=None) -> "VisibilitySet":
        _, idx = self.eval(grid.centers)
        member = (idx == i) & grid.mask
        w = np.zeros(grid.shape)
        w[grid.mask] = grid.weights(f)
        return VisibilitySet(i, member, float(w[member].sum()))

    def lipschitz_certificate(self, grid: SourceGrid) -> float:
        """Largest difference quotient of ``u`` along axis-aligned grid edges inside the domain."""
        return lipschitz_certificate(self, grid)

    def a0_slope_bound(self, grid_or_box) -> float:
        """Slope bound over a box for sheets with semiaxis at least ``min a_i``."""
        if isinstance(grid_or_box, SourceGrid):
            lo, hi = grid_or_box.lo, grid_or_box.hi
        else:
            lo, hi = (np.asarray(v, dtype=float) for v in grid_or_box)
        corners = np.array(np.meshgrid(*zip(lo, hi), indexing="ij")).reshape(self.n, -1).T
        d0 = max(float(np.max(np.linalg.norm(corners - z, axis=1))) for z in self.Z[:, :-1])
        return lipschitz_bound_a0(self.ecc, float(self.a.min()), d0)

    def descriptor_header(self) -> list:
        return [f"# eps = {self.ecc.eps:.17g}",
                f"# n = {self.n}",
                f"# receiver = {json.dumps(self.receiver.descriptor(), sort_keys=True)}"]


def lipschitz_bound_a0(ecc, a0: float, d0: float) -> float:
    """Sup of ``|DH|`` over ``|x - z| <= d0`` for sheets with semiaxis ``>= a0``."""
    ecc = as_ecc(ecc)
    k = ecc.k
    return d0 / np.sqrt(k * (a0 * a0 * k + d0 * d0))


def lipschitz_certificate(env: RefractorEnvelope, grid: SourceGrid) -> float:
    u = env.value(grid.centers)
    mask = grid.mask
    h = grid.spacing
    best = 0.0
    for ax in range(grid.n):
        du = np.abs(np.diff(u, axis=ax)) / h[ax]
        both = np.logical_and(np.take(mask, range(mask.shape[ax] - 1), axis=ax),
                              np.take(mask, range(1, mask.shape[ax]), axis=ax))
        if np.any(both):
            best = max(best, float(du[both].max()))
    return best


@dataclass(frozen=True)
class VisibilitySet:
    index: int
    member: np.ndarray
    measure: float


def save_envelope(path: str, env: RefractorEnvelope):
    lines = env.descriptor_header()
    for a, Z in zip(env.a, env.Z):
        lines.append(" ".join(f"{v:.17g}" for v in (a, *Z)))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_envelope(path: str, receiver: Optional[Receiver] = None,
                  domain: Optional[Domain] = None) -> RefractorEnvelope:
    eps = None
    desc = None
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, val = line[1:].partition("=")
                key = key.strip()
                if key == "eps":
                    eps = float(val)
                elif key == "receiver":
                    desc = json.loads(val)
                continue
            rows.append([float(v) for v in line.split()])
    if eps is None:
        raise ValueError(f"{path}: missing eps header")
    if receiver is None:
        if desc is None:
            raise ValueError(f"{path}: missing receiver header")
        receiver = receiver_from_descriptor(desc)
    data = np.array(rows, dtype=float)
    return RefractorEnvelope(Eccentricity(eps), data[:, 0], data[:, 1:], receiver, domain,
                             check_bounds=False)


def trace_focus(env: RefractorEnvelope, x):
    """Trace the refracted ray of the active piece from ``x`` to the receiver."""
    val, _, grad, _ = env.derivatives(x)
    return stretch(x, val, grad, env.ecc, env.receiver).Z


class LegendreTransform:
    """``v(z) = min_x eps (phi(z) - u(x)) - |(x, u(x)) - (z, phi(z))|``.

    The minimum is taken over the sample points, then refined locally with
    a continuous ``u`` when one is supplied.
    """

    def __init__(self, points, values, receiver: Receiver, ecc, u: Optional[Callable] = None,
                 domain: Optional[Domain] = None, spacing: Optional[float] = None):
        if not getattr(receiver, "is_graph", False):
            raise VariantUnsupported("the transform needs a receiver given as a height over the source plane")
        self.points = np.asarray(points, dtype=float).reshape(-1, receiver.n)
        self.values = np.asarray(values, dtype=float).reshape(-1)
        self.receiver = receiver
        self.ecc = as_ecc(ecc)
        self.u = u
        self.domain = domain
        if spacing is None:
            ext = self.points.max(axis=0) - self.points.min(axis=0)
            spacing = float(np.max(ext)) / max(1.0, self.points.shape[0] ** (1.0 / receiver.n))
        self.spacing = float(spacing)

    @classmethod
    def from_envelope(cls, env: RefractorEnvelope, grid: SourceGrid, domain: Optional[Domain] = None):
        pts = grid.points()
        return cls(pts, env.value(pts), env.receiver, env.ecc, u=env.value,
                   domain=domain or env.domain, spacing=float(np.max(grid.spacing)))

    def _objective(self, z, x, ux):
        Zh = float(self.receiver.phi(np.asarray(z, dtype=float)))
        r = x - z
        delta = np.sqrt(np.einsum("...i,...i->...", r, r) + (ux - Zh) ** 2)
        return self.ecc.eps * (Zh - ux) - delta

    def _project(self, x):
        return self.domain.project(x) if self.domain is not None else x

    def minimizers(self, z, rtol: float = 1e-9):
        """Best value, best point and all sample points within tolerance of it."""
        z = np.asarray(z, dtype=float)
        vals = self._objective(z, self.points, self.values)
        j = int(np.argmin(vals))
        best_v, best_x = float(vals[j]), self.points[j].copy()
        if self.u is not None:
            def obj(x):
                xp = self._project(np.asarray(x, dtype=float))
                return float(self._objective(z, xp, float(self.u(xp))))
            res = minimize(obj, best_x, method="Nelder-Mead",
                           options={"xatol": 1e-11, "fatol": 1e-15, "maxiter": 4000,
                                    "initial_simplex": best_x + np.vstack([np.zeros(z.size), 0.5 * self.spacing * np.eye(z.size)])})
            if res.fun < best_v:
                best_v, best_x = float(res.fun), self._project(res.x)
        tol = rtol * max(1.0, abs(best_v))
        cand = self.points[vals <= best_v + tol]
        return best_v, best_x, cand

    def value(self, z) -> float:
        return self.minimizers(z)[0]

    def semiaxis(self, z) -> float:
        """Semiaxis of the supporting sheet with focus over ``z``."""
        return self.value(z) / self.ecc.k

    def gradient(self, z):
        v, x, cand = self.minimizers(z)
        if cand.shape[0] > 1:
            spread = np.max(np.linalg.norm(cand - cand.mean(axis=0), axis=1))
            if spread > 2.0 * self.spacing:
                raise NonUnique(
                    f"{cand.shape[0]} sample points attain the minimum at z={np.asarray(z).tolist()}"
                )
        z = np.asarray(z, dtype=float)
        ux = float(self.u(x)) if self.u is not None else float(self.values[np.argmin(np.linalg.norm(self.points - x, axis=1))])
        Zh = float(self.receiver.phi(z))
        Dphi = self.receiver.grad_phi(z)
        d = np.append(z - x, Zh - ux)
        Y = d / np.linalg.norm(d)
        return self.ecc.eps * Dphi - (Y[:-1] + Dphi * Y[-1])

    def semiconcavity_constant(self, z_samples) -> float:
        """Hessian upper bound used for the line checks of ``v``."""
        z_samples = np.asarray(z_samples, dtype=float)
        g = self.receiver.grad_phi(z_samples)
        h = self.receiver.hess_phi(z_samples)
        gmax = float(np.max(np.einsum("...i,...i->...", g, g)))
        hmax = float(np.max(np.abs(np.linalg.eigvalsh(h)))) if h.size else 0.0
        Zh = self.receiver.phi(z_samples)
        dist = float(np.min(Zh) - np.max(self.values))
        return (1.0 + gmax) / dist + (self.ecc.eps + 1.0) * hmax


def legendre_value(transform: LegendreTransform, z) -> float:
    return transform.value(z)


def legendre_gradient(transform: LegendreTransform, z):
    return transform.gradient(z)
