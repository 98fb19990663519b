"""Command-line front end: ``parallel-refractor <command> --config FILE``.

Exit codes: 0 success, 1 input or evaluation error, 2 solver stalled.
"""

from __future__ import annotations

import argparse
import datetime
import json
import os
import sys
from typing import Optional

import numpy as np

from .a3_checker import certify_region
from .config import RunConfig
from .domain import make_grid
from .envelope import LegendreTransform, RefractorEnvelope, load_envelope, save_envelope
from .errors import (
    BalanceViolation,
    NonUnique,
    RefractorError,
    SpanViolation,
    Stalled,
)
from .ma_residual import SampledSurface, push_forward_density, residual
from .quadrics import Eccentricity, Hyperboloid, hyperboloid_derivatives, hyperboloid_eval
from .raytrace import measure_beta
from .solver import ProblemSpec, check_span, solve

EXIT_OK, EXIT_INPUT, EXIT_STALLED = 0, 1, 2


def fmt(v) -> str:
    """Seventeen significant digits for every float written by the CLI."""
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return f"{float(v):.17g}"


class Writer:
    def __init__(self, out: str, timestamp: bool):
        self.out = out
        self.timestamp = timestamp
        os.makedirs(out, exist_ok=True)

    def path(self, name: str) -> str:
        return os.path.join(self.out, name)

    def csv(self, name: str, header, rows):
        with open(self.path(name), "w") as fh:
            if self.timestamp:
                fh.write(f"# generated {datetime.datetime.now(datetime.timezone.utc).isoformat()}\n")
            fh.write(",".join(header) + "\n")
            for row in rows:
                fh.write(",".join(x if isinstance(x, str) else fmt(x) for x in row) + "\n")
        return self.path(name)

    def text(self, name: str, lines):
        with open(self.path(name), "w") as fh:
            fh.write("\n".join(lines) + "\n")
        return self.path(name)


def _override(args, section: dict, key: str, attr: str, default):
    val = getattr(args, attr, None)
    return val if val is not None else section.get(key, default)


def _problem(cfg: RunConfig) -> ProblemSpec:
    cfg.require("eps", "receiver", "source", "targets")
    Z, C = cfg.targets()
    return ProblemSpec(cfg.domain(), cfg.density(), Eccentricity(cfg.eps), cfg.receiver(), Z, C,
                       balance_rtol=float(cfg.raw.get("balance_rtol", 1e-3)))


def _envelope(cfg: RunConfig) -> RefractorEnvelope:
    cfg.require("envelope")
    return load_envelope(cfg.path(cfg.raw["envelope"]), domain=cfg.domain() if "source" in cfg.raw else None)


def cmd_solve(cfg: RunConfig, args, w: Writer) -> int:
    spec = _problem(cfg)
    sec = cfg.sections["solver"]
    tol = float(_override(args, sec, "tol", "tol", 1e-3))
    grid = int(_override(args, sec, "grid", "grid", 256))
    max_iter = int(sec.get("max_iter", 200))
    span = check_span(spec)
    if not span.ok:
        bad = np.nonzero(~span.passed)[0].tolist()
        print(f"error: span condition fails for targets {bad}: height must be at least "
              f"{fmt(span.coefficient)} * rho", file=sys.stderr)
        return EXIT_INPUT
    rep = solve(spec, tol=tol, max_iter=max_iter, grid=grid)
    save_envelope(w.path("envelope.txt"), rep.envelope)
    n = spec.domain.n
    header = ["index"] + [f"z{k}" for k in range(n)] + ["Zh", "C", "flux", "residual"]
    rows = [[i, *spec.Z[i], rep.target[i], rep.flux[i], rep.residuals[i]] for i in range(spec.N)]
    w.csv("flux.csv", header, rows)
    summary = [
        f"targets {spec.N}",
        f"sweeps {rep.iterations}",
        f"max_abs_residual {fmt(rep.max_residual)}",
        f"max_rel_residual {fmt(rep.max_residual / rep.target.sum())}",
        f"relative_tolerance {fmt(tol)}",
        f"grid {grid}",
        f"pinned_target {rep.pinned}",
        f"pin_drop {fmt(rep.pin_drop)}",
    ]
    w.text("summary.txt", summary)
    print("\n".join(summary))
    return EXIT_OK


def cmd_trace(cfg: RunConfig, args, w: Writer) -> int:
    env = _envelope(cfg)
    sec = cfg.sections["trace"]
    rays = int(_override(args, sec, "rays", "rays", 10 ** 6))
    seed = _override(args, sec, "seed", "seed", None)
    threads = int(_override(args, sec, "threads", "threads", 1))
    prescribed = None
    if "targets" in cfg.raw:
        _, prescribed = cfg.targets()
    report, pairs = measure_beta(
        env, cfg.density(), cfg.domain(), rays, seed=None if seed is None else int(seed),
        prescribed=prescribed, shards=int(sec.get("shards", 8)), threads=threads,
        f_max=sec.get("f_max"), scatter=bool(sec.get("scatter", False)),
    )
    rows = [[i, report.prescribed[i], report.measured[i], report.stderr[i], int(report.counts[i])]
            for i in range(len(report.measured))]
    rows.append(["unassigned", "", report.unassigned, "", report.unassigned_count])
    rows.append(["total", "", report.sampled_mass, "", report.total_rays])
    w.csv("trace.csv", ["index", "C", "measured", "stderr", "rays"], rows)
    if pairs is not None:
        n = env.n
        w.csv("scatter.csv", [f"x{k}" for k in range(n)] + [f"Z{k}" for k in range(n + 1)], pairs)
    print(f"rays {report.total_rays}")
    print(f"unassigned_mass {fmt(report.unassigned)}")
    if prescribed is not None:
        rel = np.abs(report.measured - prescribed) / np.maximum(prescribed, 1e-300)
        print(f"max_relative_deviation {fmt(rel.max())}")
    return EXIT_OK


def _residual_surface(cfg: RunConfig, sec: dict, res: int):
    surf = sec.get("surface", {"type": "envelope"})
    if surf["type"] == "hyperboloid":
        ecc = Eccentricity(cfg.eps)
        H = Hyperboloid(float(surf["a"]), surf["focus"], ecc)
        func = lambda x: hyperboloid_eval(H, x)  # noqa: E731
        grad = lambda x: hyperboloid_derivatives(H, x)[0]  # noqa: E731
        hess = lambda x: hyperboloid_derivatives(H, x)[1]  # noqa: E731
        rcv = cfg.receiver()
    else:
        env = _envelope(cfg)
        ecc = env.ecc
        func = env.value
        grad = lambda x: env.derivatives(x)[2]  # noqa: E731
        hess = lambda x: env.derivatives(x)[3]  # noqa: E731
        rcv = env.receiver
    if "box" in sec:
        lo, hi = (np.asarray(v, dtype=float) for v in sec["box"])
    else:
        lo, hi = cfg.domain().bbox()
    surface = SampledSurface.from_function(func, lo, hi, (res,) * len(lo), grad, hess)
    return surface, rcv, ecc


def cmd_residual(cfg: RunConfig, args, w: Writer) -> int:
    sec = cfg.sections["residual"]
    res = int(_override(args, sec, "grid", "grid", 129))
    surface, rcv, ecc = _residual_surface(cfg, sec, res)
    g = float(sec.get("g", 1.0))
    fdesc = sec.get("f", "pushforward")
    if fdesc == "pushforward":
        fvals = push_forward_density(surface, rcv, ecc, g)

        def f(x):
            return fvals
    else:
        f = cfg.density(fdesc)
    rep = residual(surface, rcv, ecc, f, g)
    nodes = surface.nodes.reshape(-1, surface.n)
    inner = rep.interior.reshape(-1)
    field = rep.field.reshape(-1)
    eig = rep.min_eig.reshape(-1)
    rows = [[*nodes[j], field[j], eig[j]] for j in np.nonzero(inner)[0]]
    w.csv("residual.csv", [f"x{k}" for k in range(surface.n)] + ["residual", "min_eig"], rows)
    line = (f"residual max {fmt(rep.max_abs)} mean {fmt(rep.mean_abs)} argmax "
            f"{' '.join(fmt(v) for v in rep.argmax)} min_eig {fmt(rep.min_eig_value)}")
    w.text("residual_summary.txt", [line])
    print(line)
    return EXIT_OK


def cmd_check_a3(cfg: RunConfig, args, w: Writer) -> int:
    cfg.require("eps", "receiver")
    sec = cfg.sections["a3"]
    rcv = cfg.receiver()
    ecc = Eccentricity(cfg.eps)
    if "box" in sec:
        lo, hi = (np.asarray(v, dtype=float) for v in sec["box"])
    else:
        lo, hi = cfg.domain().bbox()
    seed = int(_override(args, sec, "seed", "seed", 0))
    rep = certify_region(lo, hi, float(sec.get("m0", 0.0)), rcv, ecc, int(sec.get("samples", 10000)),
                         seed=seed, radius=sec.get("radius"), offset_max=sec.get("offset_max"))
    S = rep.samples
    n = lo.size
    header = ([f"x{k}" for k in range(n)] + ["u"] + [f"p{k}" for k in range(n)]
              + [f"xi{k}" for k in range(n)] + [f"eta{k}" for k in range(n)] + ["form"])
    rows = [[*S.x[j], S.u[j], *S.p[j], *S.xi[j], *S.eta[j], rep.forms[j]] for j in range(len(rep.forms))]
    w.csv("a3_samples.csv", header, rows)
    lam = "none" if rep.lambda_hat is None else fmt(rep.lambda_hat)
    line = (f"verdict {rep.verdict} min_form {fmt(rep.min_form)} max_form {fmt(rep.max_form)} "
            f"delta {fmt(rep.delta)} t_min {fmt(rep.t_min)} case1_threshold {fmt(rep.case1_threshold)} "
            f"lambda_hat {lam}")
    w.text("a3_summary.txt", [line])
    print(line)
    return EXIT_OK


def cmd_legendre(cfg: RunConfig, args, w: Writer) -> int:
    env = _envelope(cfg)
    sec = cfg.sections["legendre"]
    res = int(_override(args, sec, "grid", "grid", 256))
    grid = make_grid(cfg.domain(), res)
    T = LegendreTransform.from_envelope(env, grid, cfg.domain())
    points = np.atleast_2d(np.asarray(sec.get("points", env.Z[:, :-1].tolist()), dtype=float))
    n = env.n
    rows = []
    for z in points:
        v = T.value(z)
        try:
            g = T.gradient(z)
            gcols = list(g)
        except NonUnique:
            gcols = ["nonunique"] * n
        rows.append([*z, v, v / env.ecc.k, *gcols])
    w.csv("legendre.csv", [f"z{k}" for k in range(n)] + ["v", "a0"] + [f"dv{k}" for k in range(n)], rows)
    print(f"points {len(rows)}")
    return EXIT_OK


def mesh_from_envelope(env: RefractorEnvelope, grid):
    """Triangulate the envelope over the grid nodes whose four cells are all inside the domain."""
    lo, hi, shape = grid.lo, grid.hi, grid.shape
    axes = [np.linspace(lo[k], hi[k], shape[k] + 1) for k in range(2)]
    X, Yy = np.meshgrid(*axes, indexing="ij")
    inside = np.zeros((shape[0] + 2, shape[1] + 2), dtype=bool)
    inside[1:-1, 1:-1] = grid.coverage >= 1.0
    # a quad (i, j) between nodes uses cell (i, j) of the grid
    quads = np.argwhere(inside[1:-1, 1:-1])
    used = np.zeros((shape[0] + 1, shape[1] + 1), dtype=bool)
    for i, j in quads:
        used[i:i + 2, j:j + 2] = True
    vid = -np.ones(used.shape, dtype=np.int64)
    vid[used] = np.arange(int(used.sum()))
    pts = np.stack([X[used], Yy[used]], axis=-1)
    verts = np.concatenate([pts, env.value(pts)[:, None]], axis=1)
    faces = []
    for i, j in quads:
        a, b, c, d = vid[i, j], vid[i + 1, j], vid[i + 1, j + 1], vid[i, j + 1]
        faces.append((a, b, c))
        faces.append((a, c, d))
    return verts, np.array(faces, dtype=np.int64)


def cmd_export_mesh(cfg: RunConfig, args, w: Writer) -> int:
    env = _envelope(cfg)
    if env.n != 2:
        raise RefractorError("mesh export supports n = 2 only")
    sec = cfg.sections["mesh"]
    res = int(_override(args, sec, "grid", "grid", 64))
    grid = make_grid(cfg.domain(), res)
    verts, faces = mesh_from_envelope(env, grid)
    lines = [f"# units: {cfg.units}"]
    lines += [f"v {fmt(a)} {fmt(b)} {fmt(c)}" for a, b, c in verts]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in faces]
    w.text("surface.obj", lines)
    print(f"vertices {len(verts)} faces {len(faces)}")
    return EXIT_OK


COMMANDS = {
    "solve": cmd_solve,
    "trace": cmd_trace,
    "residual": cmd_residual,
    "check-a3": cmd_check_a3,
    "legendre": cmd_legendre,
    "export-mesh": cmd_export_mesh,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="parallel-refractor", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON or YAML run configuration")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--tol", type=float, help="relative flux tolerance (solve)")
        p.add_argument("--grid", type=int, help="grid resolution per axis")
        p.add_argument("--rays", type=int, help="number of traced rays (trace)")
        p.add_argument("--seed", type=int, help="random seed")
        p.add_argument("--threads", type=int, help="worker threads for tracing")
        p.add_argument("--no-timestamp", action="store_true", help="omit the timestamp line in CSV files")
    return parser


def _validate_overrides(args):
    if args.tol is not None and not 0.0 < args.tol < 1.0:
        raise RefractorError("--tol must lie in (0, 1)")
    if args.grid is not None and not 8 <= args.grid <= 4096:
        raise RefractorError("--grid must lie in [8, 4096]")
    if args.rays is not None and args.rays < 1000:
        raise RefractorError("--rays must be at least 1000")
    if args.threads is not None and args.threads < 1:
        raise RefractorError("--threads must be positive")


def main(argv: Optional[list] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _validate_overrides(args)
        cfg = RunConfig.load(args.config)
        writer = Writer(args.out, not args.no_timestamp)
        return COMMANDS[args.command](cfg, args, writer)
    except Stalled as exc:
        print(f"error: solver stalled: {exc}", file=sys.stderr)
        return EXIT_STALLED
    except BalanceViolation as exc:
        print(f"error: energy balance check failed: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SpanViolation as exc:
        print(f"error: span condition check failed: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (RefractorError, OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
