"""Monge-Ampere residual of a sampled refractor and the Jacobian factorization check."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import DivisionByZeroDensity
from .quadrics import as_ecc
from .receiver import Receiver, stretch
from .refraction import check_slope, q_value


class SampledSurface:
    """Heights ``u`` on a regular node grid, with optional analytic derivatives.

    Without callbacks, derivatives are central differences with step equal
    to the grid spacing (one-sided on the boundary rows).
    """

    def __init__(self, lo, spacing, u, grad: Optional[Callable] = None,
                 hess: Optional[Callable] = None, mask=None):
        self.u = np.asarray(u, dtype=float)
        self.n = self.u.ndim
        self.lo = np.broadcast_to(np.asarray(lo, dtype=float), (self.n,)).copy()
        self.spacing = np.broadcast_to(np.asarray(spacing, dtype=float), (self.n,)).copy()
        self._grad = grad
        self._hess = hess
        self.mask = np.ones(self.u.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)

    @classmethod
    def from_function(cls, func, lo, hi, shape, grad=None, hess=None):
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        shape = tuple(shape)
        spacing = (hi - lo) / (np.asarray(shape) - 1)
        axes = [lo[i] + spacing[i] * np.arange(shape[i]) for i in range(lo.size)]
        x = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        return cls(lo, spacing, func(x), grad, hess)

    @property
    def shape(self):
        return self.u.shape

    @property
    def nodes(self) -> np.ndarray:
        axes = [self.lo[i] + self.spacing[i] * np.arange(self.shape[i]) for i in range(self.n)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    @property
    def interior(self) -> np.ndarray:
        """Nodes at least one cell away from the boundary and inside the mask."""
        inner = np.zeros(self.shape, dtype=bool)
        inner[tuple(slice(1, -1) for _ in range(self.n))] = True
        return inner & self.mask

    def _fd_gradient(self) -> np.ndarray:
        parts = np.gradient(self.u, *self.spacing, edge_order=2)
        parts = list(parts) if isinstance(parts, (list, tuple)) else [parts]
        return np.stack(parts, axis=-1)

    def gradient(self) -> np.ndarray:
        if self._grad is not None:
            return np.asarray(self._grad(self.nodes), dtype=float)
        return self._fd_gradient()

    def hessian(self) -> np.ndarray:
        if self._hess is not None:
            return np.asarray(self._hess(self.nodes), dtype=float)
        n = self.n
        p = self.gradient()
        H = np.empty(self.shape + (n, n))
        for i in range(n):
            di = np.gradient(p[..., i], *self.spacing, edge_order=2)
            di = list(di) if isinstance(di, (list, tuple)) else [di]
            for j in range(n):
                H[..., i, j] = di[j]
        u = self.u
        for i in range(n):
            # compact three-point stencil on the diagonal
            core, fwd, bwd = ([slice(None)] * n for _ in range(3))
            core[i], fwd[i], bwd[i] = slice(1, -1), slice(2, None), slice(None, -2)
            h = self.spacing[i]
            H[tuple(core) + (i, i)] = (u[tuple(fwd)] - 2.0 * u[tuple(core)] + u[tuple(bwd)]) / (h * h)
        return 0.5 * (H + np.swapaxes(H, -1, -2))


@dataclass
class NodeState:
    """Refraction quantities at every node of a surface."""

    x: np.ndarray
    u: np.ndarray
    p: np.ndarray
    D2u: np.ndarray
    q: np.ndarray
    Y: np.ndarray
    t: np.ndarray
    Z: np.ndarray
    grad_psi: np.ndarray

    @property
    def gY(self) -> np.ndarray:
        return np.einsum("...i,...i->...", self.grad_psi, self.Y)


def node_state(surface: SampledSurface, rcv: Receiver, ecc) -> NodeState:
    ecc = as_ecc(ecc)
    x = surface.nodes
    p = surface.gradient()
    check_slope(p, ecc)
    D2 = surface.hessian()
    sp = stretch(x, surface.u, p, ecc, rcv)
    return NodeState(x, surface.u, p, D2, q_value(p, ecc), sp.Y, sp.t, sp.Z, rcv.grad(sp.Z))


def g_matrix(p, t, ecc):
    """``G = (q+1)(Id - kappa eps^2 p p^T)/t`` for slopes ``p`` and stretches ``t``."""
    ecc = as_ecc(ecc)
    p = np.asarray(p, dtype=float)
    q = q_value(p, ecc)
    n = p.shape[-1]
    outer = p[..., :, None] * p[..., None, :]
    M = np.eye(n) - ecc.kappa * ecc.eps ** 2 * outer
    return ((q + 1.0) / np.asarray(t, dtype=float))[..., None, None] * M


def assemble_G(surface: SampledSurface, rcv: Receiver, ecc, state: Optional[NodeState] = None):
    st = state or node_state(surface, rcv, ecc)
    return g_matrix(st.p, st.t, ecc)


def _density_at(f, pts):
    if callable(f):
        return np.asarray(f(pts), dtype=float)
    return np.full(np.shape(pts)[:-1], float(f))


def rhs_h(surface: SampledSurface, rcv: Receiver, ecc, f, g, state: Optional[NodeState] = None):
    """Right-hand side ``h`` at every node (negative for positive densities)."""
    ecc = as_ecc(ecc)
    st = state or node_state(surface, rcv, ecc)
    fv = _density_at(f, st.x)
    gv = _density_at(g, st.Z)
    if np.any(gv <= 0.0):
        raise DivisionByZeroDensity("target density vanishes at an image point")
    n = surface.n
    gn = np.linalg.norm(st.grad_psi, axis=-1)
    factor = ((st.q + 1.0) / (st.t * ecc.eps * ecc.kappa)) ** n
    return -ecc.eps * st.q * factor * (st.gY / gn) * fv / gv


@dataclass(frozen=True)
class ResidualReport:
    field: np.ndarray
    min_eig: np.ndarray
    interior: np.ndarray
    max_abs: float
    mean_abs: float
    argmax: np.ndarray
    min_eig_value: float


def signed_matrix(G, D2u, ecc):
    """The matrix whose determinant enters the equation, positive semidefinite for admissible ``u``."""
    ecc = as_ecc(ecc)
    if ecc.kappa > 0.0:
        return -G / (ecc.eps * ecc.kappa) - D2u
    return D2u + G / (ecc.eps * ecc.kappa)


def residual(surface: SampledSurface, rcv: Receiver, ecc, f, g) -> ResidualReport:
    ecc = as_ecc(ecc)
    st = node_state(surface, rcv, ecc)
    G = g_matrix(st.p, st.t, ecc)
    S = signed_matrix(G, st.D2u, ecc)
    h = rhs_h(surface, rcv, ecc, f, g, state=st)
    field = np.linalg.det(S) - np.abs(h)
    min_eig = np.linalg.eigvalsh(0.5 * (S + np.swapaxes(S, -1, -2)))[..., 0]
    inner = surface.interior
    vals = np.abs(field[inner])
    flat = np.argmax(np.where(inner, np.abs(field), -np.inf))
    loc = st.x.reshape(-1, surface.n)[flat]
    return ResidualReport(field, min_eig, inner, float(vals.max()), float(vals.mean()), loc,
                          float(min_eig[inner].min()))


def mu_matrices(state: NodeState, ecc):
    """The two factors ``mu1``, ``mu2`` of the Jacobian of the receiver map."""
    ecc = as_ecc(ecc)
    y = state.Y[..., :-1]
    Yn = state.Y[..., -1]
    gpsi = state.grad_psi
    hat = gpsi[..., :-1] - y * (gpsi[..., -1] / Yn)[..., None]
    n = y.shape[-1]
    mu1 = np.eye(n) - (y[..., :, None] * hat[..., None, :]) / state.gY[..., None, None]
    p = state.p
    mu2 = np.eye(n) + ecc.kappa * (p[..., :, None] * p[..., None, :]) / (state.q * (state.q + 1.0))[..., None, None]
    return mu1, mu2


def mu2_inverse(p, ecc):
    ecc = as_ecc(ecc)
    p = np.asarray(p, dtype=float)
    q = q_value(p, ecc)
    n = p.shape[-1]
    return np.eye(n) - (ecc.kappa / (1.0 - ecc.kappa + q))[..., None, None] * (p[..., :, None] * p[..., None, :])


def closed_form_Dz(state: NodeState, ecc):
    ecc = as_ecc(ecc)
    mu1, mu2 = mu_matrices(state, ecc)
    p = state.p
    n = p.shape[-1]
    inner = (np.eye(n) - ecc.kappa * ecc.eps ** 2 * (p[..., :, None] * p[..., None, :])
             + (state.t * ecc.kappa * ecc.eps / (state.q + 1.0))[..., None, None] * state.D2u)
    return mu1 @ mu2 @ inner


def closed_form_det(state: NodeState, ecc):
    """``det mu1 * det mu2 * det[Id - kappa eps^2 p p^T + t kappa eps/(q+1) D^2u]``."""
    ecc = as_ecc(ecc)
    det_mu1 = (state.grad_psi[..., -1] / state.Y[..., -1]) / state.gY
    det_mu2 = (1.0 - ecc.kappa + state.q) / (state.q * (state.q + 1.0))
    p = state.p
    n = p.shape[-1]
    inner = (np.eye(n) - ecc.kappa * ecc.eps ** 2 * (p[..., :, None] * p[..., None, :])
             + (state.t * ecc.kappa * ecc.eps / (state.q + 1.0))[..., None, None] * state.D2u)
    return det_mu1 * det_mu2 * np.linalg.det(inner)


def fd_map_jacobian(surface: SampledSurface, state: NodeState) -> np.ndarray:
    """Central differences of ``z(x) = x + t y`` over the node grid, shape ``(..., n, n)``."""
    z = state.Z[..., :-1]
    n = surface.n
    D = np.empty(surface.shape + (n, n))
    for c in range(n):
        parts = np.gradient(z[..., c], *surface.spacing, edge_order=2)
        parts = list(parts) if isinstance(parts, (list, tuple)) else [parts]
        for j in range(n):
            D[..., c, j] = parts[j]
    return D


def push_forward_density(surface: SampledSurface, rcv: Receiver, ecc, g=1.0, state=None):
    """Source density ``f = g |grad psi|/|psi_{n+1}| |det Dz|`` matching ``g`` through the map."""
    st = state or node_state(surface, rcv, ecc)
    detfd = np.linalg.det(fd_map_jacobian(surface, st))
    gv = _density_at(g, st.Z)
    gn = np.linalg.norm(st.grad_psi, axis=-1)
    return gv * gn / np.abs(st.grad_psi[..., -1]) * np.abs(detfd)


@dataclass(frozen=True)
class JacobianReport:
    det_fd: np.ndarray
    det_closed: np.ndarray
    interior: np.ndarray
    max_rel: float
    max_abs: float


def jacobian_factorization_check(surface: SampledSurface, rcv: Receiver, ecc) -> JacobianReport:
    st = node_state(surface, rcv, ecc)
    dfd = np.linalg.det(fd_map_jacobian(surface, st))
    dcf = closed_form_det(st, ecc)
    inner = surface.interior
    diff = np.abs(dfd - dcf)[inner]
    scale = np.abs(dcf)[inner]
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(scale > 0.0, diff / scale, np.where(diff > 0.0, np.inf, 0.0))
    return JacobianReport(dfd, dcf, inner, float(rel.max()), float(diff.max()))
