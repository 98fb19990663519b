"""Hyperboloid and ellipsoid of revolution primitives.

Points live in R^{n+1} with the source plane at height 0; a quadric is
described by its larger semiaxis ``a`` and its upper focus ``Z``.  All
evaluators broadcast over leading dimensions of ``x``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .errors import DegenerateFoci, NoIntersection, NonVisible, RimProximity

ELLIPSOID_RIM_MARGIN = 1e-3
PARABOLOID_TOL = 1e-10


@dataclass(frozen=True)
class Eccentricity:
    """Ratio ``eps = n1/n2`` of refractive indices."""

    eps: float

    def __post_init__(self):
        eps = float(self.eps)
        if not np.isfinite(eps) or eps <= 0.0 or eps == 1.0:
            raise ValueError(f"eccentricity must be positive and != 1, got {eps}")
        object.__setattr__(self, "eps", eps)

    @property
    def kappa(self) -> float:
        return (self.eps * self.eps - 1.0) / (self.eps * self.eps)

    @property
    def k(self) -> float:
        """``eps**2 - 1``; positive for hyperboloids, negative for ellipsoids."""
        return self.eps * self.eps - 1.0

    @property
    def lipschitz_bound(self) -> float:
        """Asymptotic slope ``1/sqrt(eps**2 - 1)`` of a hyperboloid sheet."""
        if self.eps <= 1.0:
            return np.inf
        return 1.0 / np.sqrt(self.k)


def as_ecc(ecc) -> Eccentricity:
    return ecc if isinstance(ecc, Eccentricity) else Eccentricity(float(ecc))


def _frozen_point(Z) -> np.ndarray:
    Z = np.array(Z, dtype=float).reshape(-1)
    if Z.size < 2:
        raise ValueError("focus must have at least two coordinates")
    Z.setflags(write=False)
    return Z


@dataclass(frozen=True)
class Hyperboloid:
    """Lower sheet of a hyperboloid of revolution with vertical axis."""

    a: float
    Z: np.ndarray
    ecc: Eccentricity = field(default_factory=lambda: Eccentricity(2.0))

    def __post_init__(self):
        object.__setattr__(self, "ecc", as_ecc(self.ecc))
        object.__setattr__(self, "Z", _frozen_point(self.Z))
        object.__setattr__(self, "a", float(self.a))
        if self.ecc.eps <= 1.0:
            raise ValueError("hyperboloid requires eps > 1")
        if not self.a > 0.0:
            raise ValueError(f"semiaxis must be positive, got {self.a}")

    @property
    def n(self) -> int:
        return self.Z.size - 1

    @property
    def z(self) -> np.ndarray:
        return self.Z[:-1]

    @property
    def height(self) -> float:
        return float(self.Z[-1])

    @property
    def b(self) -> float:
        return self.a * np.sqrt(self.ecc.k)

    def __call__(self, x):
        return hyperboloid_eval(self, x)

    def gradient(self, x):
        return hyperboloid_derivatives(self, x)[0]

    def hessian(self, x):
        return hyperboloid_derivatives(self, x)[1]


@dataclass(frozen=True)
class Ellipsoid:
    """Lower half of an ellipsoid of revolution with vertical axis."""

    a: float
    Z: np.ndarray
    ecc: Eccentricity = field(default_factory=lambda: Eccentricity(0.5))
    margin: float = ELLIPSOID_RIM_MARGIN

    def __post_init__(self):
        object.__setattr__(self, "ecc", as_ecc(self.ecc))
        object.__setattr__(self, "Z", _frozen_point(self.Z))
        object.__setattr__(self, "a", float(self.a))
        if self.ecc.eps >= 1.0:
            raise ValueError("ellipsoid requires eps < 1")
        if not self.a > 0.0:
            raise ValueError(f"semiaxis must be positive, got {self.a}")

    @property
    def n(self) -> int:
        return self.Z.size - 1

    @property
    def z(self) -> np.ndarray:
        return self.Z[:-1]

    @property
    def rim_radius(self) -> float:
        return self.a * np.sqrt(1.0 - self.ecc.eps ** 2)


def _offsets(x, z):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1)
    if x.shape[-1] != z.size:
        raise ValueError(f"expected points of dimension {z.size}, got shape {x.shape}")
    return x - z


def hyperboloid_eval(H: Hyperboloid, x):
    """Height of the hyperboloid sheet over ``x``."""
    r = _offsets(x, H.z)
    r2 = np.einsum("...i,...i->...", r, r)
    return H.height - H.a * H.ecc.eps - np.sqrt(H.a * H.a + r2 / H.ecc.k)


def hyperboloid_derivatives(H: Hyperboloid, x):
    """Gradient ``(..., n)`` and Hessian ``(..., n, n)`` of the sheet."""
    k = H.ecc.k
    r = _offsets(x, H.z)
    r2 = np.einsum("...i,...i->...", r, r)
    S = np.sqrt(H.a * H.a + r2 / k)
    grad = -(r / k) / S[..., None]
    eye = np.eye(H.n)
    outer = r[..., :, None] * r[..., None, :]
    hess = -(eye - outer / (k * S[..., None, None] ** 2)) / (k * S[..., None, None])
    return grad, hess


def ellipsoid_eval_grad(E: Ellipsoid, x):
    """Value and gradient of the lower ellipsoid cap; raises near the rim."""
    one_m = 1.0 - E.ecc.eps ** 2
    r = _offsets(x, E.z)
    r2 = np.einsum("...i,...i->...", r, r)
    limit = E.rim_radius * (1.0 - E.margin)
    if np.any(np.sqrt(r2) >= limit):
        raise RimProximity(
            f"point within the rim margin: |x-z| = {np.max(np.sqrt(r2)):.6g} >= {limit:.6g}"
        )
    s = np.sqrt(1.0 - r2 / (E.a * E.a * one_m))
    value = E.Z[-1] - E.a * E.ecc.eps - E.a * s
    grad = (r / (E.a * one_m)) / s[..., None]
    return value, grad


def ellipsoid_hessian(E: Ellipsoid, x):
    one_m = 1.0 - E.ecc.eps ** 2
    r = _offsets(x, E.z)
    r2 = np.einsum("...i,...i->...", r, r)
    s2 = 1.0 - r2 / (E.a * E.a * one_m)
    s = np.sqrt(s2)
    c = 1.0 / (E.a * one_m)
    eye = np.eye(E.n)
    outer = r[..., :, None] * r[..., None, :]
    return c * (eye / s[..., None, None] + c / E.a * outer / (s2 * s)[..., None, None])


def semiaxis_bound(height: float, rho: float, ecc) -> float:
    """Largest semiaxis keeping a sheet of focal height ``height`` nonnegative on a ball of radius ``rho``."""
    ecc = as_ecc(ecc)
    return (ecc.eps * height - np.hypot(height, rho)) / ecc.k


def max_semiaxis(Z, U, ecc):
    """Extremal semiaxis ``a_bar`` and covering radius ``rho`` for focus ``Z`` over domain ``U``.

    ``U`` is any object with a ``rho(z)`` method (see :mod:`.domain`) or a
    bare number used as ``rho`` directly.
    """
    Z = np.asarray(Z, dtype=float)
    if Z[-1] <= 0.0:
        raise NonVisible(f"focus height must be positive, got {Z[-1]}")
    rho = float(U) if np.isscalar(U) else float(U.rho(Z[:-1]))
    a_bar = semiaxis_bound(Z[-1], rho, ecc)
    if a_bar <= 0.0:
        raise NonVisible(
            f"no nonnegative hyperboloid with focus {Z.tolist()} covers the source (a_bar={a_bar:.6g})"
        )
    return float(a_bar), rho


def confocal_expand_s(H1: Hyperboloid, x0, s: float) -> Hyperboloid:
    """Move the focus along the ray from the touching point ``X0`` through ``Z1`` by factor ``s``."""
    x0 = np.asarray(x0, dtype=float)
    xi1 = float(hyperboloid_eval(H1, x0))
    X0 = np.append(x0, xi1)
    d = H1.Z - X0
    Z2 = X0 + s * d
    a2 = (s * H1.ecc.eps * (H1.height - xi1) - s * np.linalg.norm(d)) / H1.ecc.k
    return Hyperboloid(a2, Z2, H1.ecc)


def confocal_expand(H1: Hyperboloid, x0, target_surface, s_max: float = 1e3) -> Hyperboloid:
    """Confocal expansion whose new focus lands on ``target_surface``.

    The extension ray starts at ``Z1`` and the first crossing of
    ``target_surface`` beyond it fixes the parameter ``s >= 1``.
    """
    x0 = np.asarray(x0, dtype=float)
    X0 = np.append(x0, float(hyperboloid_eval(H1, x0)))
    d = H1.Z - X0

    def psi_at(s):
        return float(target_surface.psi(X0 + s * d))

    p1 = psi_at(1.0)
    scale = max(1.0, abs(H1.height))
    if abs(p1) <= 1e-12 * scale:
        return confocal_expand_s(H1, x0, 1.0)
    if p1 > 0.0:
        raise NoIntersection("focus already lies above the target surface")
    s_lo, s_hi = 1.0, 1.0
    step = 0.25
    while True:
        s_hi = s_lo + step
        if s_hi > s_max:
            raise NoIntersection("extension ray does not reach the target surface")
        if psi_at(s_hi) >= 0.0:
            break
        s_lo = s_hi
        step *= 1.5
    s = brentq(psi_at, s_lo, s_hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    return confocal_expand_s(H1, x0, s)


@dataclass(frozen=True)
class ConicSection:
    """Projection onto the source plane of the contact set of two sheets.

    The world-frame quadric is ``x.A.x + b.x + c = 0``.  ``C, D, E, F``
    are the scalar coefficients in the frame whose first axis is
    ``axis`` and whose origin is the source origin.
    """

    C: float
    D: float
    E: float
    F: float
    axis: np.ndarray
    classification: str
    A: np.ndarray
    b: np.ndarray
    c: float

    def evaluate(self, x):
        x = np.asarray(x, dtype=float)
        return np.einsum("...i,ij,...j->...", x, self.A, x) + x @ self.b + self.c

    def residual_scale(self, x):
        """Magnitude of the largest term in :meth:`evaluate`, for relative checks."""
        x = np.asarray(x, dtype=float)
        quad = np.abs(np.einsum("...i,ij,...j->...", x, self.A, x))
        lin = np.abs(x @ self.b)
        return np.maximum(np.maximum(quad, lin), abs(self.c))


def contact_conic(H1: Hyperboloid, H2: Hyperboloid, allow_degenerate: bool = False) -> ConicSection:
    """Quadric through every ``x`` with ``H1(x) = H2(x)``."""
    if H1.ecc != H2.ecc:
        raise ValueError("both sheets must share the eccentricity")
    k = H1.ecc.k
    z1, z2 = H1.z, H2.z
    d = z2 - z1
    dn = float(np.linalg.norm(d))
    C = H1.height - H2.height - H1.ecc.eps * (H1.a - H2.a)
    D = 0.5 * ((z1 @ z1 - z2 @ z2) / k + C * C + H1.a ** 2 - H2.a ** 2)
    n = z1.size
    eye = np.eye(n)
    if dn == 0.0:
        if not allow_degenerate:
            raise DegenerateFoci("coincident focal axes: contact set is a circle about the common axis")
        axis = np.zeros(n)
        axis[0] = 1.0
    else:
        axis = d / dn
    A = np.outer(d, d) / k ** 2 - (C * C / k) * eye
    b = 2.0 * D * d / k + 2.0 * C * C * z1 / k
    c = D * D - C * C * H1.a ** 2 - C * C * (z1 @ z1) / k
    E = dn * dn / k - C * C
    z1_axial = float(z1 @ axis)
    B = D * dn + C * C * z1_axial
    if dn == 0.0:
        F = D * D - C * C * H1.a ** 2
        cls = "ellipsoid"
    else:
        scale = max(dn * dn / k, C * C)
        if abs(E) < PARABOLOID_TOL * scale:
            cls = "paraboloid"
            F = D * D - C * C * H1.a ** 2
        else:
            cls = "ellipsoid" if E < 0.0 else "hyperboloid-sheet"
            F = D * D - C * C * H1.a ** 2 - (E / k) * (B * B / (E * E) + C * C * z1_axial ** 2 / E)
    axis = axis.copy()
    axis.setflags(write=False)
    return ConicSection(float(C), float(D), float(E), float(F), axis, cls, A, b, float(c))
