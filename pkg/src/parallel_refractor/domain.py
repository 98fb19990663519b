"""Source domains, densities and the Cartesian quadrature grid over them."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.interpolate import RegularGridInterpolator

SUPERSAMPLE = 8


class Domain:
    """Bounded source region in the plane ``X^{n+1} = 0``."""

    n: int

    def contains(self, x):
        raise NotImplementedError

    def bbox(self):
        raise NotImplementedError

    def rho(self, z) -> float:
        """Radius of the smallest ball about ``z`` containing the domain."""
        raise NotImplementedError

    def project(self, x):
        raise NotImplementedError

    def descriptor(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class Disk(Domain):
    center: tuple
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if not self.radius > 0.0:
            raise ValueError("disk radius must be positive")

    @property
    def n(self) -> int:
        return len(self.center)

    def contains(self, x):
        r = np.asarray(x, dtype=float) - np.asarray(self.center)
        return np.einsum("...i,...i->...", r, r) <= self.radius ** 2

    def bbox(self):
        c = np.asarray(self.center)
        return c - self.radius, c + self.radius

    def rho(self, z):
        return float(np.linalg.norm(np.asarray(z, dtype=float) - np.asarray(self.center))) + self.radius

    def project(self, x):
        c = np.asarray(self.center)
        r = np.asarray(x, dtype=float) - c
        d = np.linalg.norm(r, axis=-1, keepdims=True)
        scale = np.where(d > self.radius, self.radius / np.maximum(d, 1e-300), 1.0)
        return c + r * scale

    def descriptor(self):
        return {"type": "disk", "center": list(self.center), "radius": self.radius}


@dataclass(frozen=True)
class Rect(Domain):
    lo: tuple
    hi: tuple

    def __post_init__(self):
        object.__setattr__(self, "lo", tuple(float(v) for v in self.lo))
        object.__setattr__(self, "hi", tuple(float(v) for v in self.hi))
        if len(self.lo) != len(self.hi) or any(h <= l for l, h in zip(self.lo, self.hi)):
            raise ValueError("rectangle needs lo < hi in every coordinate")

    @property
    def n(self) -> int:
        return len(self.lo)

    def contains(self, x):
        x = np.asarray(x, dtype=float)
        return np.all((x >= np.asarray(self.lo)) & (x <= np.asarray(self.hi)), axis=-1)

    def bbox(self):
        return np.asarray(self.lo), np.asarray(self.hi)

    def rho(self, z):
        z = np.asarray(z, dtype=float)
        far = np.maximum(np.abs(z - np.asarray(self.lo)), np.abs(z - np.asarray(self.hi)))
        return float(np.linalg.norm(far))

    def project(self, x):
        return np.clip(np.asarray(x, dtype=float), self.lo, self.hi)

    def descriptor(self):
        return {"type": "rect", "lo": list(self.lo), "hi": list(self.hi)}


class Polygon(Domain):
    """Simple polygon in the plane given by its vertices in order."""

    n = 2

    def __init__(self, vertices):
        v = np.asarray(vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 3:
            raise ValueError("polygon needs at least three planar vertices")
        self.vertices = v

    def contains(self, x):
        x = np.asarray(x, dtype=float)
        px, py = x[..., 0], x[..., 1]
        inside = np.zeros(px.shape, dtype=bool)
        v = self.vertices
        for (x1, y1), (x2, y2) in zip(v, np.roll(v, -1, axis=0)):
            crosses = (y1 > py) != (y2 > py)
            with np.errstate(divide="ignore", invalid="ignore"):
                xint = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
            inside ^= crosses & (px < xint)
        return inside

    def bbox(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def rho(self, z):
        return float(np.max(np.linalg.norm(self.vertices - np.asarray(z, dtype=float), axis=1)))

    def project(self, x):
        x = np.asarray(x, dtype=float)
        flat = x.reshape(-1, 2)
        out = flat.copy()
        outside = ~self.contains(flat)
        if np.any(outside):
            pts = flat[outside]
            best = np.full(pts.shape[0], np.inf)
            proj = np.zeros_like(pts)
            v = self.vertices
            for a, b in zip(v, np.roll(v, -1, axis=0)):
                ab = b - a
                s = np.clip(((pts - a) @ ab) / (ab @ ab), 0.0, 1.0)
                cand = a + s[:, None] * ab
                d = np.linalg.norm(pts - cand, axis=1)
                better = d < best
                best[better] = d[better]
                proj[better] = cand[better]
            out[outside] = proj
        return out.reshape(x.shape)

    def descriptor(self):
        return {"type": "polygon", "vertices": self.vertices.tolist()}


def domain_from_descriptor(desc: dict) -> Domain:
    kind = desc.get("type")
    if kind == "disk":
        return Disk(tuple(desc["center"]), float(desc["radius"]))
    if kind == "rect":
        return Rect(tuple(desc["lo"]), tuple(desc["hi"]))
    if kind == "polygon":
        return Polygon(desc["vertices"])
    raise ValueError(f"unknown source domain type {kind!r}")


class Density:
    """Nonnegative source intensity ``f`` on the source plane."""

    def __call__(self, x):
        raise NotImplementedError

    def upper_bound(self, grid: "SourceGrid") -> float:
        """A constant dominating ``f`` on the domain, for rejection sampling."""
        vals = self(grid.centers[grid.mask])
        return 1.1 * float(np.max(vals))


@dataclass(frozen=True)
class ConstantDensity(Density):
    value: float = 1.0

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return np.full(x.shape[:-1], float(self.value))

    def upper_bound(self, grid=None) -> float:
        return float(self.value)


class ExpressionDensity(Density):
    """Density given as a numpy expression in ``x0, x1, ...`` (and ``x`` for the stacked array)."""

    _NAMES = {name: getattr(np, name) for name in (
        "sin", "cos", "tan", "exp", "log", "sqrt", "abs", "tanh", "arctan", "pi", "minimum", "maximum", "where",
    )}

    def __init__(self, expr: str):
        self.expr = expr
        self._code = compile(expr, "<density>", "eval")
        for name in self._code.co_names:
            if name not in self._NAMES and not (name == "x" or (name.startswith("x") and name[1:].isdigit())):
                raise ValueError(f"density expression uses unknown name {name!r}")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        env = dict(self._NAMES)
        env["x"] = x
        for i in range(x.shape[-1]):
            env[f"x{i}"] = x[..., i]
        val = eval(self._code, {"__builtins__": {}}, env)
        return np.broadcast_to(np.asarray(val, dtype=float), x.shape[:-1]).copy()


class GridDensity(Density):
    """Piecewise-linear density sampled on a regular grid (same file layout as grid receivers)."""

    def __init__(self, origin, spacing, values):
        values = np.asarray(values, dtype=float)
        if np.any(values < 0.0):
            raise ValueError("density samples must be nonnegative")
        axes = [origin[i] + spacing[i] * np.arange(values.shape[i]) for i in range(values.ndim)]
        self._interp = RegularGridInterpolator(axes, values, bounds_error=False, fill_value=0.0)
        self._max = float(values.max())

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self._interp(x.reshape(-1, x.shape[-1])).reshape(x.shape[:-1])

    def upper_bound(self, grid=None) -> float:
        return self._max


@dataclass
class SourceGrid:
    """Uniform cell-centred grid over the bounding box of a domain.

    ``coverage`` is the fraction of each cell inside the domain, estimated
    by supersampling boundary cells; interior cells have coverage one.
    """

    lo: np.ndarray
    hi: np.ndarray
    shape: tuple
    coverage: np.ndarray

    @property
    def n(self) -> int:
        return len(self.shape)

    @property
    def spacing(self) -> np.ndarray:
        return (self.hi - self.lo) / np.asarray(self.shape)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def axes(self):
        h = self.spacing
        return [self.lo[i] + h[i] * (np.arange(self.shape[i]) + 0.5) for i in range(self.n)]

    @property
    def centers(self) -> np.ndarray:
        return np.stack(np.meshgrid(*self.axes, indexing="ij"), axis=-1)

    @property
    def mask(self) -> np.ndarray:
        return self.coverage > 0.0

    def points(self) -> np.ndarray:
        """Centres of the cells meeting the domain, flattened ``(M, n)``."""
        return self.centers[self.mask]

    def weights(self, f: Optional[Density] = None) -> np.ndarray:
        """Quadrature weights ``f(center) * coverage * cell volume`` on the active cells."""
        cov = self.coverage[self.mask] * self.cell_volume
        if f is None:
            return cov
        vals = np.asarray(f(self.points()), dtype=float)
        if np.any(vals < 0.0):
            raise ValueError("density must be nonnegative")
        return vals * cov


def make_grid(domain: Domain, resolution=256, supersample: int = SUPERSAMPLE) -> SourceGrid:
    lo, hi = (np.asarray(v, dtype=float) for v in domain.bbox())
    n = lo.size
    shape = tuple([int(resolution)] * n) if np.isscalar(resolution) else tuple(int(r) for r in resolution)
    h = (hi - lo) / np.asarray(shape)
    corner_axes = [lo[i] + h[i] * np.arange(shape[i] + 1) for i in range(n)]
    corners = np.stack(np.meshgrid(*corner_axes, indexing="ij"), axis=-1)
    cin = domain.contains(corners).astype(np.int8)
    total = np.zeros(shape, dtype=np.int16)
    for offs in np.ndindex(*([2] * n)):
        sl = tuple(slice(o, o + s) for o, s in zip(offs, shape))
        total += cin[sl]
    coverage = (total == 2 ** n).astype(float)
    mixed = np.argwhere((total > 0) & (total < 2 ** n))
    if mixed.size:
        sub = (np.arange(supersample) + 0.5) / supersample
        offs = np.stack(np.meshgrid(*([sub] * n), indexing="ij"), axis=-1).reshape(-1, n)
        base = lo + mixed * h
        pts = base[:, None, :] + offs[None, :, :] * h
        coverage[tuple(mixed.T)] = domain.contains(pts).mean(axis=1)
    return SourceGrid(lo, hi, shape, coverage)
