"""Vector Snell law for vertical rays crossing a graph interface.

The incident direction is ``e_{n+1}``.  A slope ``p = Du(x)`` fixes the
interface normal and, through the auxiliary scalar
``q = sqrt(1 - kappa (1 + |p|^2))``, the refracted unit direction ``Y``.
All functions broadcast over leading dimensions of ``p``.
"""

from __future__ import annotations

import numpy as np

from .errors import GradientTooLarge, TotalInternal
from .quadrics import as_ecc

GRADIENT_HEADROOM = 1e-9


def surface_normal(p):
    """Upward unit normal ``(-p, 1)/sqrt(1+|p|^2)``."""
    p = np.asarray(p, dtype=float)
    one = np.ones(p.shape[:-1] + (1,))
    g = np.concatenate([-p, one], axis=-1)
    return g / np.linalg.norm(g, axis=-1, keepdims=True)


def cone_floor(ecc) -> float:
    """Lower bound on the vertical component of every refracted direction."""
    eps = as_ecc(ecc).eps
    return 1.0 / eps if eps > 1.0 else eps


def check_slope(p, ecc):
    """Raise :class:`GradientTooLarge` when ``q`` would lose its headroom."""
    ecc = as_ecc(ecc)
    if ecc.kappa <= 0.0:
        return
    p = np.asarray(p, dtype=float)
    pn = np.linalg.norm(p, axis=-1)
    limit = (1.0 - GRADIENT_HEADROOM) / np.sqrt(ecc.k)
    if np.any(pn >= limit):
        raise GradientTooLarge(
            f"|Du| = {np.max(pn):.17g} reaches the admissible bound {limit:.17g}"
        )


def q_value(p, ecc):
    ecc = as_ecc(ecc)
    check_slope(p, ecc)
    p = np.asarray(p, dtype=float)
    p2 = np.einsum("...i,...i->...", p, p)
    return np.sqrt(1.0 - ecc.kappa * (1.0 + p2))


def refract(p, ecc):
    """Refracted unit direction ``Y`` for slope ``p``."""
    ecc = as_ecc(ecc)
    p = np.asarray(p, dtype=float)
    q = q_value(p, ecc)
    kap = ecc.kappa
    horiz = kap * p / (1.0 + q)[..., None]
    vert = 1.0 - kap / (1.0 + q)
    return ecc.eps * np.concatenate([horiz, vert[..., None]], axis=-1)


def refract_from_normal(gamma, ecc):
    """Refracted direction from the unit interface normal ``gamma``."""
    ecc = as_ecc(ecc)
    gamma = np.asarray(gamma, dtype=float)
    ge = gamma[..., -1]
    disc = ge * ge - ecc.kappa
    if np.any(disc < 0.0):
        raise TotalInternal("normal too oblique: (gamma . e)^2 < kappa")
    coef = np.sqrt(disc) - ge
    e = np.zeros(gamma.shape[-1])
    e[-1] = 1.0
    return ecc.eps * (e + coef[..., None] * gamma)


def refract_jacobian(p, ecc):
    """Derivatives ``dY/dp`` with shape ``(..., n+1, n)``."""
    ecc = as_ecc(ecc)
    p = np.asarray(p, dtype=float)
    q = q_value(p, ecc)
    kap, eps = ecc.kappa, ecc.eps
    n = p.shape[-1]
    qq = q[..., None, None]
    outer = p[..., :, None] * p[..., None, :]
    top = eps * kap * (np.eye(n) / (1.0 + qq) + kap * outer / (qq * (1.0 + qq) ** 2))
    bottom = -eps * kap * kap * p / (q * (1.0 + q) ** 2)[..., None]
    return np.concatenate([top, bottom[..., None, :]], axis=-2)


def snell_angles(p, ecc):
    """Incidence and refraction angles against the interface normal.

    Returns ``(theta1, theta2)`` with ``theta1 = angle(e, gamma)`` and
    ``theta2 = angle(Y, gamma)``, so that ``sin(theta2) = eps sin(theta1)``.
    """
    gamma = surface_normal(p)
    Y = refract(p, ecc)
    cos1 = np.clip(gamma[..., -1], -1.0, 1.0)
    e = np.zeros(gamma.shape[-1])
    e[-1] = 1.0
    sin1 = np.linalg.norm(e - cos1[..., None] * gamma, axis=-1)
    cos2 = np.einsum("...i,...i->...", Y, gamma)
    sin2 = np.linalg.norm(Y - cos2[..., None] * gamma, axis=-1)
    return np.arctan2(sin1, cos1), np.arctan2(sin2, cos2)
