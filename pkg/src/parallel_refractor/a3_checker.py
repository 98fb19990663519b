"""Sign of the p-Hessian of ``G`` contracted with orthogonal pairs ``(xi, eta)``.

For ``kappa > 0`` the regularity condition requires the contracted form to
be positive; for ``kappa < 0`` it requires it to be negative.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.stats import qmc

from .quadrics import as_ecc
from .receiver import Receiver, second_fundamental_form, stretch
from .refraction import q_value


def xi_factor(p, xi, ecc):
    """``|xi|^2 - kappa eps^2 (p . xi)^2``; positive for admissible slopes."""
    ecc = as_ecc(ecc)
    p = np.asarray(p, dtype=float)
    xi = np.asarray(xi, dtype=float)
    pxi = np.einsum("...i,...i->...", p, xi)
    return np.einsum("...i,...i->...", xi, xi) - ecc.kappa * ecc.eps ** 2 * pxi ** 2


def g_contracted(x, u, p, xi, ecc, rcv: Receiver):
    """``G^{ij} xi^i xi^j`` with the stretch recomputed for slope ``p``."""
    ecc = as_ecc(ecc)
    sp = stretch(x, u, p, ecc, rcv)
    return (q_value(p, ecc) + 1.0) / sp.t * xi_factor(p, xi, ecc)


def householder_to(Y):
    """Symmetric orthogonal matrices taking ``e_{n+1}`` to ``Y``."""
    Y = np.asarray(Y, dtype=float)
    m = Y.shape[-1]
    v = -Y.copy()
    v[..., -1] += 1.0
    vv = np.einsum("...i,...i->...", v, v)
    safe = np.where(vv > 1e-30, vv, 1.0)
    R = np.eye(m) - 2.0 * v[..., :, None] * v[..., None, :] / safe[..., None, None]
    return np.where((vv > 1e-30)[..., None, None], R, np.eye(m))


@dataclass(frozen=True)
class FrameGeometry:
    """Receiver geometry at the hit point in the frame whose last axis is ``Y``."""

    slope: np.ndarray
    hess: np.ndarray
    second_form: np.ndarray


def rotated_graph(rcv: Receiver, Z, Y) -> FrameGeometry:
    """Slope, Hessian and second fundamental form of the receiver graphed over the plane normal to ``Y``."""
    R = householder_to(Y)
    g = np.einsum("...ij,...j->...i", R, rcv.grad(Z))
    H = R @ rcv.hess(Z) @ R
    gn1 = g[..., -1]
    slope = -g[..., :-1] / gn1[..., None]
    n = slope.shape[-1]
    L = np.concatenate([np.broadcast_to(np.eye(n), slope.shape[:-1] + (n, n)), slope[..., None, :]], axis=-2)
    D2 = -np.swapaxes(L, -1, -2) @ H @ L / gn1[..., None, None]
    w = np.sqrt(1.0 + np.einsum("...i,...i->...", slope, slope))
    return FrameGeometry(slope, D2, D2 / w[..., None, None])


def g_form(x, u, p, xi, eta, rcv: Receiver, ecc):
    """Closed form of ``D^2_{p eta, p eta} (G^{ij} xi^i xi^j)`` for orthogonal ``xi, eta``.

    The receiver curvature enters through its second fundamental form in
    the frame aligned with ``Y``, evaluated on the tangent lift of the
    slope direction.
    """
    ecc = as_ecc(ecc)
    kap, eps = ecc.kappa, ecc.eps
    p = np.asarray(p, dtype=float)
    eta = np.asarray(eta, dtype=float)
    sp = stretch(x, u, p, ecc, rcv)
    q = q_value(p, ecc)
    t, Y = sp.t, sp.Y
    gpsi = rcv.grad(sp.Z)
    gY = np.einsum("...i,...i->...", gpsi, Y)
    peta = np.einsum("...i,...i->...", p, eta)
    q_eta = -kap * peta / q
    W = np.concatenate([kap * eta, q_eta[..., None]], axis=-1)
    w = W - np.einsum("...i,...i->...", W, Y)[..., None] * Y
    R = householder_to(Y)
    w_hat = np.einsum("...ij,...j->...i", R, w)[..., :-1]
    geo = rotated_graph(rcv, sp.Z, Y)
    II_ww = np.einsum("...i,...ij,...j->...", w_hat, geo.second_form, w_hat)
    metric = np.sqrt(1.0 + np.einsum("...i,...i->...", geo.slope, geo.slope))
    eta2 = np.einsum("...i,...i->...", eta, eta)
    curv = t * (eps / (q + 1.0)) ** 2 * gY * metric * II_ww
    slope_term = eps / (q + 1.0) * gpsi[..., -1] * (kap / q) * (eta2 + kap * peta ** 2 / q ** 2)
    return -(q + 1.0) / (t * gY) * (curv + slope_term) * xi_factor(p, xi, ecc)


def fd_form(x, u, p, xi, eta, rcv: Receiver, ecc, step: Optional[float] = None):
    """Second central difference of ``G xi xi`` along ``eta`` in ``p``."""
    ecc = as_ecc(ecc)
    if step is None:
        step = 1e-4 * p_radius(ecc)
    p = np.asarray(p, dtype=float)
    eta = np.asarray(eta, dtype=float)
    gp = g_contracted(x, u, p + step * eta, xi, ecc, rcv)
    g0 = g_contracted(x, u, p, xi, ecc, rcv)
    gm = g_contracted(x, u, p - step * eta, xi, ecc, rcv)
    return (gp - 2.0 * g0 + gm) / step ** 2


def g_form_fd_crosscheck(x, u, p, xi, eta, rcv: Receiver, ecc, step: Optional[float] = None):
    """Relative discrepancy between :func:`g_form` and :func:`fd_form`."""
    exact = g_form(x, u, p, xi, eta, rcv, ecc)
    approx = fd_form(x, u, p, xi, eta, rcv, ecc, step)
    return np.abs(approx - exact) / np.maximum(np.abs(exact), 1e-300)


def p_radius(ecc, fraction: float = 0.95) -> float:
    ecc = as_ecc(ecc)
    if ecc.kappa > 0.0:
        return fraction / np.sqrt(ecc.k)
    return 1.0


@dataclass(frozen=True)
class A3Samples:
    x: np.ndarray
    u: np.ndarray
    p: np.ndarray
    xi: np.ndarray
    eta: np.ndarray


def sample_states(box_lo, box_hi, m0: float, ecc, samples: int, seed: int = 0,
                  radius: Optional[float] = None) -> A3Samples:
    """Quasi-random ``(x, u, p, xi, eta)`` with ``p`` uniform in a ball and ``xi ⟂ eta`` unit."""
    ecc = as_ecc(ecc)
    lo = np.asarray(box_lo, dtype=float)
    hi = np.asarray(box_hi, dtype=float)
    n = lo.size
    R = p_radius(ecc) if radius is None else float(radius)
    d = n + 1 + n + n * n + 1
    U = qmc.Halton(d, scramble=True, seed=seed).random(samples)
    x = lo + (hi - lo) * U[:, :n]
    u = m0 * U[:, n]
    gauss = _normal_from_uniform(U[:, n + 1:n + 1 + n])
    direction = gauss / np.linalg.norm(gauss, axis=1, keepdims=True)
    radial = R * U[:, -1] ** (1.0 / n)
    p = direction * radial[:, None]
    frames = _normal_from_uniform(U[:, 2 * n + 1:2 * n + 1 + n * n]).reshape(-1, n, n)
    Q, _ = np.linalg.qr(frames)
    return A3Samples(x, u, p, Q[:, :, 0], Q[:, :, 1] if n > 1 else Q[:, :, 0])


def _normal_from_uniform(U):
    from scipy.special import ndtri
    return ndtri(np.clip(U, 1e-12, 1 - 1e-12))


@dataclass(frozen=True)
class A3Report:
    forms: np.ndarray
    min_form: float
    max_form: float
    verdict: str
    kappa: float
    delta: float
    t_min: float
    case1_threshold: float
    lambda_hat: Optional[float]
    samples: A3Samples


def _verdict(forms, kappa) -> bool:
    return bool(np.min(forms) > 0.0) if kappa > 0.0 else bool(np.max(forms) < 0.0)


def certify_region(box_lo, box_hi, m0: float, rcv: Receiver, ecc, samples: int = 10000,
                   seed: int = 0, radius: Optional[float] = None,
                   offset_max: Optional[float] = None, bisect_steps: int = 40) -> A3Report:
    """Sample the form over the design box and classify the receiver.

    ``lambda_hat`` is the smallest upward receiver offset (found by
    bisection on the same samples) at which the verdict becomes PASS; it is
    ``0`` when the receiver already passes and ``None`` when no offset up to
    ``offset_max`` does.
    """
    ecc = as_ecc(ecc)
    S = sample_states(box_lo, box_hi, m0, ecc, samples, seed, radius)

    def forms_for(r):
        return g_form(S.x, S.u, S.p, S.xi, S.eta, r, ecc)

    forms = forms_for(rcv)
    ok = _verdict(forms, ecc.kappa)
    sp = stretch(S.x, S.u, S.p, ecc, rcv)
    t_min = float(sp.t.min())
    if getattr(rcv, "is_graph", False):
        II = second_fundamental_form(rcv, sp.Z[:, :-1])
        eig = np.linalg.eigvalsh(II)
        delta = float(-eig[:, -1].max()) if ecc.kappa > 0.0 else float(eig[:, 0].min())
    else:
        delta = float("nan")
    thr = 4.0 / (delta * ecc.eps ** 4 * ecc.kappa) if ecc.kappa > 0.0 and delta > 0.0 else float("inf")

    lam: Optional[float]
    if ok:
        lam = 0.0
    else:
        top = offset_max if offset_max is not None else 100.0 * rcv.height_scale
        if not _verdict(forms_for(rcv.shifted(top)), ecc.kappa):
            lam = None
        else:
            lo, hi = 0.0, top
            for _ in range(bisect_steps):
                mid = 0.5 * (lo + hi)
                if _verdict(forms_for(rcv.shifted(mid)), ecc.kappa):
                    hi = mid
                else:
                    lo = mid
            lam = hi
    return A3Report(forms, float(forms.min()), float(forms.max()), "PASS" if ok else "FAIL",
                    ecc.kappa, delta, t_min, thr, lam, S)
