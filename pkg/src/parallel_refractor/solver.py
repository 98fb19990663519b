"""Monotone semiaxis iteration for the semi-discrete refractor problem.

Target ``N`` keeps its extremal semiaxis; every other semiaxis starts
near zero and is only ever raised, each time to the largest value whose
visibility set does not exceed its prescribed energy.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from . import kernels
from .domain import ConstantDensity, Density, Domain, SourceGrid, make_grid
from .envelope import RefractorEnvelope
from .errors import BalanceViolation, SpanViolation, Stalled
from .quadrics import as_ecc, max_semiaxis
from .receiver import Receiver

log = logging.getLogger(__name__)

A_INIT_FRACTION = 1e-3
BISECT_ITERS = 60
CAPACITY_SLACK = 1e-9
BALANCE_RTOL = 1e-3
PIN_RETRIES = 12
PIN_DROP_FRACTION = 1e-3


@dataclass
class ProblemSpec:
    domain: Domain
    density: Density
    ecc: object
    receiver: Receiver
    Z: np.ndarray
    C: np.ndarray
    balance_rtol: float = BALANCE_RTOL

    def __post_init__(self):
        self.ecc = as_ecc(self.ecc)
        self.Z = np.atleast_2d(np.asarray(self.Z, dtype=float))
        self.C = np.asarray(self.C, dtype=float).reshape(-1)
        if self.Z.shape[0] != self.C.size:
            raise ValueError("one weight per target is required")
        if self.Z.shape[1] != self.domain.n + 1:
            raise ValueError("targets must have n + 1 coordinates")
        if np.any(self.C < 0.0):
            raise ValueError("target weights must be nonnegative")
        if self.density is None:
            self.density = ConstantDensity(1.0)

    @property
    def N(self) -> int:
        return self.C.size


def span_coefficient(ecc) -> float:
    eps = as_ecc(ecc).eps
    return 2.0 / (eps - 1.0) + 1.0 / np.sqrt(eps * eps - 1.0)


def max_level(rho, height, ecc):
    """Height below which every extremal sheet stays over the source."""
    eps = as_ecc(ecc).eps
    rho = np.asarray(rho, dtype=float)
    height = np.asarray(height, dtype=float)
    return rho * rho / ((eps - 1.0) * (np.hypot(height, rho) + height))


@dataclass(frozen=True)
class SpanReport:
    coefficient: float
    rho: np.ndarray
    heights: np.ndarray
    required: np.ndarray
    L0: np.ndarray
    passed: np.ndarray

    @property
    def ok(self) -> bool:
        return bool(np.all(self.passed))


def check_span(spec: ProblemSpec) -> SpanReport:
    coef = span_coefficient(spec.ecc)
    rho = np.array([spec.domain.rho(z) for z in spec.Z[:, :-1]])
    heights = spec.Z[:, -1].copy()
    required = coef * rho
    return SpanReport(coef, rho, heights, required, max_level(rho, heights, spec.ecc), heights >= required)


def check_balance(spec: ProblemSpec, grid: SourceGrid) -> float:
    """Return the source mass on ``grid``; raise when the weights do not match it."""
    total = float(grid.weights(spec.density).sum())
    s = float(spec.C.sum())
    if not total > 0.0:
        raise BalanceViolation("source density has no mass on the domain")
    if abs(s - total) > spec.balance_rtol * total:
        raise BalanceViolation(
            f"energy balance violated: sum of target weights {s:.17g} vs source mass {total:.17g}"
        )
    return total


def flux(env: RefractorEnvelope, i: int, f: Optional[Density], grid: SourceGrid) -> float:
    """Midpoint-rule energy of the visibility set of piece ``i``."""
    return float(fluxes(env, f, grid)[i])


def fluxes(env: RefractorEnvelope, f: Optional[Density], grid: SourceGrid) -> np.ndarray:
    pts = grid.points()
    _, idx = env.eval(pts)
    return np.bincount(idx, weights=grid.weights(f), minlength=env.N)


@dataclass(frozen=True)
class SolveReport:
    envelope: RefractorEnvelope
    flux: np.ndarray
    target: np.ndarray
    residuals: np.ndarray
    iterations: int
    wall_time: float
    history: list = field(repr=False)
    flux_history: list = field(repr=False)
    grid: SourceGrid = field(repr=False)
    pinned: int = -1
    pin_drop: float = 0.0

    @property
    def max_residual(self) -> float:
        return float(np.max(np.abs(self.residuals)))


class _Sheets:
    """Sheet heights on the quadrature points, kept in sync with the semiaxes."""

    def __init__(self, pts, Z, eps):
        self.eps = eps
        self.k = eps * eps - 1.0
        self.zh = Z[:, -1]
        self.r2 = np.ascontiguousarray(
            np.stack([np.einsum("ij,ij->i", pts - z, pts - z) for z in Z[:, :-1]])
        )
        self.H = np.empty_like(self.r2)

    def set(self, i, a):
        self.H[i] = self.zh[i] - a * self.eps - np.sqrt(a * a + self.r2[i] / self.k)

    def bounds(self, i):
        """Envelope of the pieces before ``i`` and after ``i``."""
        N = self.H.shape[0]
        inf = np.full(self.H.shape[1], np.inf)
        lower = self.H[:i].min(axis=0) if i > 0 else inf
        upper = self.H[i + 1:].min(axis=0) if i + 1 < N else inf
        return np.ascontiguousarray(lower), np.ascontiguousarray(upper)

    def fluxes(self, w):
        idx = np.argmin(self.H, axis=0)
        return np.bincount(idx, weights=w, minlength=self.H.shape[0])


def pinned_target(spec: ProblemSpec) -> int:
    """Index of the target whose sheet stays at its extremal semiaxis.

    Every other semiaxis is capped by its own extremal value, so the pinned
    sheet is the one with the smallest cap; with the last index pinned
    instead, an underfed target whose cap is below the pinned one can get
    stuck at that cap.
    """
    a_bar = np.array([max_semiaxis(Z, spec.domain, spec.ecc)[0] for Z in spec.Z])
    return int(np.flatnonzero(a_bar == a_bar.min())[-1])


def solve(spec: ProblemSpec, tol: float = 1e-3, max_iter: int = 200,
          grid: Union[int, SourceGrid] = 256, check_inputs: bool = True,
          pinned: Optional[int] = None) -> SolveReport:
    """Adjust semiaxes until every visibility set carries its weight within ``tol * sum(C)``.

    ``pinned`` selects the target kept at its extremal semiaxis; by default
    it is :func:`pinned_target`.  Pass ``spec.N - 1`` to pin the last one.
    When a sweep stalls with an underfed target already at its own cap, the
    run restarts with the pinned semiaxis lowered by a doubling margin
    (``pin_drop`` in the report).  Results are reported in the caller's
    target order; ``history`` covers the final run only.
    """
    start = time.perf_counter()
    if not isinstance(grid, SourceGrid):
        grid = make_grid(spec.domain, grid)
    if check_inputs:
        span = check_span(spec)
        if not span.ok:
            bad = np.nonzero(~span.passed)[0].tolist()
            raise SpanViolation(
                f"targets {bad} are too close to the source for the span condition "
                f"(height >= {span.coefficient:.6g} * rho)"
            )
    total = check_balance(spec, grid)
    N = spec.N
    pin = pinned_target(spec) if pinned is None else int(pinned) % N
    order = np.array([i for i in range(N) if i != pin] + [pin])
    back = np.argsort(order)
    Zp = spec.Z[order]
    Cp = spec.C[order] * (total / spec.C.sum())
    a_bar = np.array([max_semiaxis(Zi, spec.domain, spec.ecc)[0] for Zi in Zp])
    drop = 0.0
    budget = max_iter
    for attempt in range(PIN_RETRIES + 1):
        try:
            a, fl, sweeps, history, flux_history = _iterate(
                Zp, Cp, a_bar, a_bar[-1] - drop, spec, grid, tol, budget, total)
            break
        except Stalled as exc:
            budget -= exc.sweeps
            if not exc.capped or attempt == PIN_RETRIES or budget <= 0:
                exc.a = exc.a[back]
                exc.flux = exc.flux[back]
                exc.capped = sorted(int(order[i]) for i in exc.capped)
                raise
            drop = max(2.0 * drop, PIN_DROP_FRACTION * a_bar[-1])
            log.info("underfed targets at their caps; lowering the pinned semiaxis by %.3e", drop)
    C = spec.C * (total / spec.C.sum())
    a, fl = a[back], fl[back]
    env = RefractorEnvelope(spec.ecc, a, spec.Z, spec.receiver, spec.domain, check_bounds=False)
    return SolveReport(env, fl, C, fl - C, max_iter - budget + sweeps, time.perf_counter() - start,
                       [h[back] for h in history], [f[back] for f in flux_history], grid, pin, drop)


def _iterate(Z, C, a_bar, a_pin, spec, grid, tol, max_iter, total):
    """Monotone sweeps with the last target held at ``a_pin``; arrays are in the permuted order."""
    N = Z.shape[0]
    eps = spec.ecc.eps
    a = np.full(N, A_INIT_FRACTION * a_bar.min())
    a[-1] = a_pin

    pts = grid.points()
    w = np.ascontiguousarray(grid.weights(spec.density))
    sheets = _Sheets(pts, Z, eps)
    for i in range(N):
        sheets.set(i, a[i])

    tol_abs = tol * total
    inner = tol_abs / max(N, 1)
    cap_slack = CAPACITY_SLACK * total
    history = [a.copy()]
    flux_history = []
    iterations = 0
    while True:
        fl = sheets.fluxes(w)
        flux_history.append(fl.copy())
        resid = fl - C
        if np.max(np.abs(resid)) <= tol_abs:
            break
        if iterations >= max_iter:
            raise _stalled(f"no convergence after {max_iter} sweeps (max residual {np.max(np.abs(resid)):.3e})",
                           a, fl, C, a_bar, inner, iterations)
        deficit = C[:-1] - fl[:-1]
        order = [int(i) for i in np.argsort(-deficit, kind="stable") if deficit[i] > inner]
        if not order:
            raise _stalled(
                f"no underfed target left but residual {np.max(np.abs(resid)):.3e} exceeds tolerance",
                a, fl, C, a_bar, inner, iterations,
            )
        before = a.sum()
        for i in order:
            lower, upper = sheets.bounds(i)
            r2 = sheets.r2[i]

            def capture(ai):
                return kernels.capture_flux(r2, w, ai, sheets.zh[i], eps, lower, upper)

            if capture(a[i]) >= C[i] - inner:
                continue
            cap = C[i] + cap_slack
            if capture(a_bar[i]) <= cap:
                new = a_bar[i]
            else:
                lo, hi = a[i], a_bar[i]
                for _ in range(BISECT_ITERS):
                    mid = 0.5 * (lo + hi)
                    if mid <= lo or mid >= hi:
                        break
                    if capture(mid) <= cap:
                        lo = mid
                    else:
                        hi = mid
                new = lo
            if new > a[i]:
                a[i] = new
                sheets.set(i, new)
        iterations += 1
        history.append(a.copy())
        log.debug("sweep %d: max residual %.3e", iterations, np.max(np.abs(resid)))
        if abs(a.sum() - before) <= 4 * np.finfo(float).eps * before:
            fl = sheets.fluxes(w)
            raise _stalled(
                f"sweep {iterations} left the semiaxes unchanged with residual {np.max(np.abs(fl - C)):.3e}",
                a, fl, C, a_bar, inner, iterations,
            )
    return a, fl, iterations, history, flux_history


def _stalled(message, a, fl, C, a_bar, inner, sweeps) -> Stalled:
    capped = [i for i in range(len(a) - 1) if a[i] >= a_bar[i] and C[i] - fl[i] > inner]
    if capped:
        message += f"; targets {capped} are underfed at their extremal semiaxis"
    else:
        message += "; the grid may be too coarse for the requested tolerance"
    exc = Stalled(message, a.copy(), fl.copy())
    exc.capped = capped
    exc.sweeps = sweeps
    return exc


def lump_weights(g, Z, receiver, patch_lo, patch_hi, resolution: int = 200) -> np.ndarray:
    """Nearest-target lumping of a continuous receiver density into point weights."""
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    lo = np.asarray(patch_lo, dtype=float)
    hi = np.asarray(patch_hi, dtype=float)
    n = lo.size
    h = (hi - lo) / resolution
    axes = [lo[i] + h[i] * (np.arange(resolution) + 0.5) for i in range(n)]
    z = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
    pts = np.concatenate([z, receiver.phi(z)[:, None]], axis=1)
    dphi = receiver.grad_phi(z)
    dA = np.sqrt(1.0 + np.einsum("ij,ij->i", dphi, dphi)) * np.prod(h)
    gval = g(pts) if callable(g) else np.full(len(pts), float(g))
    d2 = ((pts[:, None, :] - Z[None, :, :]) ** 2).sum(-1)
    owner = np.argmin(d2, axis=1)
    return np.bincount(owner, weights=gval * dA, minlength=Z.shape[0])
