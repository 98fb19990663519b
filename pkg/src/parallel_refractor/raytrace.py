"""Monte-Carlo forward check: trace source rays through an envelope and bin the hits."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .domain import ConstantDensity, Density, Domain
from .envelope import RefractorEnvelope
from .errors import SeedRequired
from .receiver import stretch

BATCH = 65536


@dataclass(frozen=True)
class TraceResult:
    Z: np.ndarray
    index: np.ndarray
    x: np.ndarray
    ridge: np.ndarray


def trace_ray(env: RefractorEnvelope, x) -> TraceResult:
    """Refract the vertical ray at ``x`` with the active sheet's slope and follow it to the receiver."""
    x = np.asarray(x, dtype=float)
    val, idx, grad, _ = env.derivatives(x)
    sp = stretch(x, val, grad, env.ecc, env.receiver)
    ties = env.active_ties(x)
    ridge = ties.sum(axis=0) > 1
    return TraceResult(sp.Z, idx, x, ridge)


def capture_radius(targets) -> float:
    T = np.atleast_2d(np.asarray(targets, dtype=float))
    if T.shape[0] < 2:
        return np.inf
    d = np.linalg.norm(T[:, None, :] - T[None, :, :], axis=-1)
    d[np.diag_indices_from(d)] = np.inf
    return 0.5 * float(d.min())


def assign_targets(Z, targets, radius: float):
    """Nearest target index per hit, ``-1`` when farther than ``radius``."""
    T = np.atleast_2d(np.asarray(targets, dtype=float))
    d = np.linalg.norm(Z[:, None, :] - T[None, :, :], axis=-1)
    j = np.argmin(d, axis=1)
    near = d[np.arange(len(j)), j] <= radius if np.isfinite(radius) else np.ones(len(j), dtype=bool)
    return np.where(near, j, -1)


@dataclass(frozen=True)
class FluxReport:
    """Per-target energies measured by ray tracing.

    ``measured[i] = counts[i] * ray_mass`` where ``ray_mass`` is the
    source mass represented by one accepted ray.
    """

    prescribed: np.ndarray
    measured: np.ndarray
    stderr: np.ndarray
    counts: np.ndarray
    unassigned_count: int
    proposals: int
    ray_mass: float

    @property
    def total_rays(self) -> int:
        return int(self.counts.sum() + self.unassigned_count)

    @property
    def unassigned(self) -> float:
        return self.unassigned_count * self.ray_mass

    @property
    def sampled_mass(self) -> float:
        return self.total_rays * self.ray_mass


def _shard_generator(seed: int, shard: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=seed).jumped(shard))


def _trace_shard(env, f, domain, lo, hi, fmax, n_rays, seed, shard, targets, radius, scatter):
    rng = _shard_generator(seed, shard)
    counts = np.zeros(len(targets), dtype=np.int64)
    unassigned = 0
    proposals = 0
    accepted = 0
    pairs = []
    while accepted < n_rays:
        m = BATCH
        x = rng.uniform(lo, hi, size=(m, lo.size))
        v = rng.uniform(0.0, fmax, size=m)
        keep = domain.contains(x) & (v < f(x))
        idx_keep = np.nonzero(keep)[0]
        need = n_rays - accepted
        if idx_keep.size > need:
            cut = idx_keep[need - 1] + 1
            proposals += int(cut)
            idx_keep = idx_keep[:need]
        else:
            proposals += m
        xs = x[idx_keep]
        accepted += xs.shape[0]
        if xs.shape[0] == 0:
            continue
        res = trace_ray(env, xs)
        lab = assign_targets(res.Z, targets, radius)
        counts += np.bincount(lab[lab >= 0], minlength=len(targets))
        unassigned += int(np.sum(lab < 0))
        if scatter:
            pairs.append(np.concatenate([xs, res.Z], axis=1))
    return counts, unassigned, proposals, (np.concatenate(pairs) if pairs else None)


def measure_beta(env: RefractorEnvelope, f: Optional[Density], domain: Domain, n_rays: int = 10 ** 6,
                 seed: Optional[int] = None, targets=None, prescribed=None, shards: int = 8,
                 threads: int = 1, f_max: Optional[float] = None, scatter: bool = False):
    """Rejection-sample ``x ∝ f``, trace, and bin hits by nearest target.

    Rays are split across ``shards`` independent counter-based streams and
    merged in shard order, so the result depends only on ``seed`` and
    ``shards``, not on ``threads``.  Returns the report and, if requested,
    an array of ``(x, Z)`` rows.
    """
    if seed is None:
        raise SeedRequired("a seed is required for reproducible tracing")
    if n_rays < 1000:
        raise ValueError("at least 1000 rays are required")
    f = f or ConstantDensity(1.0)
    targets = env.Z if targets is None else np.atleast_2d(np.asarray(targets, dtype=float))
    lo, hi = (np.asarray(v, dtype=float) for v in domain.bbox())
    if f_max is None:
        if isinstance(f, ConstantDensity):
            f_max = f.value
        else:
            from .domain import make_grid
            f_max = f.upper_bound(make_grid(domain, 128))
    radius = capture_radius(targets)
    per = [n_rays // shards + (1 if s < n_rays % shards else 0) for s in range(shards)]
    args = [(env, f, domain, lo, hi, f_max, per[s], seed, s, targets, radius, scatter)
            for s in range(shards) if per[s] > 0]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda a: _trace_shard(*a), args))
    else:
        results = [_trace_shard(*a) for a in args]
    counts = sum(r[0] for r in results)
    unassigned = sum(r[1] for r in results)
    proposals = sum(r[2] for r in results)
    box = float(np.prod(hi - lo))
    ray_mass = box * f_max / proposals
    frac = counts / proposals
    measured = counts * ray_mass
    stderr = box * f_max * np.sqrt(frac * (1.0 - frac) / proposals)
    prescribed = np.full(len(targets), np.nan) if prescribed is None else np.asarray(prescribed, dtype=float)
    report = FluxReport(prescribed, measured, stderr, counts, int(unassigned), int(proposals), ray_mass)
    pairs = None
    if scatter:
        pairs = np.concatenate([r[3] for r in results if r[3] is not None])
    return report, pairs
