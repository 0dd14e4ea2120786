"""Command-line front end.

Subcommands: ``sample``, ``lift``, ``norms``, ``greedy``, ``tail``,
``solve``, ``stability``.  Every run writes its data files plus
``manifest.json`` into ``--out``.

Parameter precedence (lowest first): built-in defaults, values from the
JSON file given by ``--config``, explicit command-line flags.  A
manifest written by a previous run is itself a valid ``--config`` file;
its ``config`` record is used.

Exit codes
----------
0 success; 2 invalid input (bad parameter, malformed file, structural
mismatch); 3 numerical failure (divergence, non-PSD covariance,
linear-algebra breakdown); 4 I/O failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from . import greedy as gr
from . import norms as nm
from . import stability_lab as sl
from .errors import (
    DegenerateSpacingError,
    DivergenceError,
    DomainError,
    KernelNotPSDError,
    StructuralError,
)
from .gaussian_paths import (
    FbmSpec,
    TimeGrid,
    chen_defect,
    ito_lift,
    lift_piecewise_linear,
    sample_fbm,
    symmetry_defect,
)
from .io import atomic_write, dumps_json, lift_to_csv, path_to_csv, read_path_csv
from .rde_solver import run_manifest, solve
from .reports import jsonable
from .systems import REGISTRY, build

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4

COMMON = ("seed", "out", "jobs", "config")


# ---------------------------------------------------------------------------
# Parser.


def _common(p):
    p.add_argument("--seed", type=int, default=0, help="root seed of all random streams")
    p.add_argument("--out", default="roughstab_out", help="output directory")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for Monte-Carlo runs")
    p.add_argument("--config", default=None, help="JSON file of parameters (flags override it)")


def _fbm_flags(p, n=1024, horizon=1.0, dims=1):
    p.add_argument("--hurst", type=float, default=0.45)
    p.add_argument("--dims", type=int, default=dims)
    p.add_argument("--n", type=int, default=n, help="number of grid points")
    p.add_argument("--horizon", type=float, default=horizon)


def _input_flag(p):
    p.add_argument("--input", default=None,
                   help="path CSV (t,x1..xm); generated from the fBm flags when omitted")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="roughstab", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"roughstab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="draw an fBm path")
    _common(p)
    _fbm_flags(p)

    p = sub.add_parser("lift", help="second-level lift of a path")
    _common(p)
    _fbm_flags(p)
    _input_flag(p)
    p.add_argument("--kind", choices=("geometric", "ito"), default="geometric")

    p = sub.add_parser("norms", help="variation and Hölder seminorms of a path")
    _common(p)
    _fbm_flags(p, n=257)
    _input_flag(p)
    p.add_argument("--p", type=float, default=2.5)
    p.add_argument("--sigma", type=float, default=0.0)
    p.add_argument("--beta", type=float, default=None, help="also report the beta-Hölder seminorm")

    p = sub.add_parser("greedy", help="greedy partition of a lifted path")
    _common(p)
    _fbm_flags(p, n=257)
    _input_flag(p)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--p", type=float, default=2.5)
    p.add_argument("--sigma", type=float, default=0.0)
    p.add_argument("--variant", choices=gr.VARIANTS, default="plain")

    p = sub.add_parser("tail", help="Monte-Carlo tail of the greedy count")
    _common(p)
    _fbm_flags(p, n=513, dims=3)
    p.add_argument("--gamma", type=float, default=0.25)
    p.add_argument("--p", type=float, default=2.5)
    p.add_argument("--sigma", type=float, default=0.02)
    p.add_argument("--samples", type=int, default=2000)
    p.add_argument("--variant", choices=gr.VARIANTS, default="plain")

    p = sub.add_parser("solve", help="integrate one built-in system along one fBm driver")
    _common(p)
    _fbm_flags(p, n=2049, horizon=20.0)
    _system_flags(p)
    p.add_argument("--y0", type=_floats, default=None, help="comma-separated initial state")
    p.add_argument("--residuals", action="store_true",
                   help="also report change-of-variables residuals")

    p = sub.add_parser("stability", help="exponent sweep over diffusion scales")
    _common(p)
    _fbm_flags(p, n=2049, horizon=50.0)
    _system_flags(p)
    p.add_argument("--scales", type=_floats, default=None,
                   help="comma-separated diffusion scales (defaults to --sigma)")
    p.add_argument("--seeds", type=int, default=100)
    p.add_argument("--y0", type=_floats, default=None)
    return parser


def _floats(text):
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _system_flags(p):
    p.add_argument("--preset", choices=sorted(REGISTRY), default="scalar-linear")
    p.add_argument("--lambda", dest="lam", type=float, default=None, help="decay rate")
    p.add_argument("--sigma", type=float, default=None, help="diffusion scale")


# ---------------------------------------------------------------------------
# Helpers.


def _spec(args) -> FbmSpec:
    return FbmSpec(args.hurst, args.dims, args.horizon)


def _grid(args) -> TimeGrid:
    if args.n < 2:
        raise DomainError("--n must be at least 2")
    return TimeGrid.uniform(0.0, args.horizon, args.n)


def _path(args):
    if getattr(args, "input", None):
        return read_path_csv(args.input)
    return sample_fbm(_spec(args), _grid(args), args.seed)


def _system(args, sigma=None):
    params = {"lam": args.lam, "sigma": args.sigma if sigma is None else sigma}
    if args.preset == "diagonal-linear":
        params["dim"] = args.dims
    return build(args.preset, **params)


def _config(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("config", "out")}


def _finish(args, files: dict, report=None) -> dict:
    """Write outputs then the manifest; all content is ready before the first write."""
    out = Path(args.out)
    hashes = {name: hashlib.sha256(text.encode()).hexdigest() for name, text in files.items()}
    manifest = run_manifest(command=args.command, config=_config(args), outputs=hashes,
                            version=__version__, numpy=np.__version__)
    for name, text in files.items():
        atomic_write(out / name, text)
    atomic_write(out / "manifest.json", dumps_json(manifest))
    if report is not None:
        print(json.dumps(jsonable(report), sort_keys=True))
    return manifest


def _chunks(total: int, jobs: int):
    jobs = max(1, min(jobs, total))
    size = math.ceil(total / jobs)
    return [(lo, min(size, total - lo)) for lo in range(0, total, size)]


def _map(fn, items, jobs):
    if jobs <= 1 or len(items) <= 1:
        return [fn(*it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, *zip(*items)))


# ---------------------------------------------------------------------------
# Commands.


def cmd_sample(args):
    path = sample_fbm(_spec(args), _grid(args), args.seed)
    return _finish(args, {"path.csv": path_to_csv(path)})


def cmd_lift(args):
    path = _path(args)
    rp = lift_piecewise_linear(path) if args.kind == "geometric" else ito_lift(path)
    report = {"chen_defect": chen_defect(rp), "symmetry_defect": symmetry_defect(rp),
              "geometric": rp.geometric}
    return _finish(args, {"path.csv": path_to_csv(path), "lift.csv": lift_to_csv(rp),
                          "lift_report.json": dumps_json(report)}, report)


def cmd_norms(args):
    path = _path(args)
    x, t = path.values, path.times
    reports = {"p_var": nm.p_var(x, args.p).to_dict(),
               "p_sigma_var": nm.p_sigma_var(x, args.p, args.sigma, t).to_dict()}
    if args.beta is not None:
        reports["holder"] = nm.holder_seminorm(x, args.beta, t).to_dict()
    rp = lift_piecewise_linear(path)
    reports["rough_path_norm"] = {"kind": "rough_path_norm", "p": args.p, "sigma": args.sigma,
                                  "value": nm.rough_path_norm(rp, args.p, args.sigma),
                                  "interval": [0, path.n - 1]}
    summary = {k: v["value"] for k, v in reports.items()}
    return _finish(args, {"norms.json": dumps_json(reports)}, summary)


def cmd_greedy(args):
    rp = lift_piecewise_linear(_path(args))
    part = gr.greedy_times(rp, args.gamma, args.p, args.sigma, variant=args.variant)
    report = {"count": part.count, "pieces": part.pieces, "gamma": args.gamma,
              "variant": args.variant, "coarse_steps": part.coarse_steps}
    return _finish(args, {"partition.csv": part.to_csv(),
                          "greedy_report.json": dumps_json(report)}, report)


def _tail_worker(spec_fields, gamma, p, sigma, seed, lo, count, n, variant):
    return gr.tail_counts(FbmSpec(*spec_fields), gamma, p, sigma, seed, range(lo, lo + count),
                          n, variant)


def cmd_tail(args):
    spec = _spec(args)
    if args.samples <= 0:
        raise DomainError("--samples must be positive")
    if spec.horizon > 1:
        raise DomainError("the tail study is stated for horizons <= 1")
    fields = (spec.hurst, spec.dims, spec.horizon)
    items = [(fields, args.gamma, args.p, args.sigma, args.seed, lo, c, args.n, args.variant)
             for lo, c in _chunks(args.samples, args.jobs)]
    counts = np.concatenate(_map(_tail_worker, items, args.jobs))
    table = gr.tail_table(counts, gr.tail_threshold(args.p, args.gamma), args.p)
    summary = table.summary()
    summary.update(variant=args.variant, exp_moment=gr.exp_moment(counts),
                   mean_count=float(counts.mean()))
    return _finish(args, {"tail.csv": table.to_csv(), "tail_summary.json": dumps_json(summary)},
                   summary)


def cmd_solve(args):
    system = _system(args)
    if args.dims != system.noise_dim:
        args.dims = system.noise_dim
    rp = lift_piecewise_linear(sample_fbm(_spec(args), _grid(args), args.seed))
    y0 = np.ones(system.dim) / math.sqrt(system.dim) if args.y0 is None else np.array(args.y0)
    traj = solve(system.drift, system.diff, rp, y0)
    polar = sl.polar_decompose(traj)
    report = {"system": system.name, "params": system.params,
              "lyapunov_estimate": sl.lyapunov_estimate(polar),
              "final_norm": float(np.linalg.norm(traj.y[-1]))}
    files = {"trajectory.csv": traj.to_csv()}
    if args.residuals:
        res = sl.step1_rde_residuals(traj, system.drift, system.diff, rp)
        report["residuals"] = res
        files["residuals.json"] = dumps_json(res)
    files["solve_report.json"] = dumps_json(report)
    return _finish(args, files, report)


def _stability_worker(preset, lam, dims, hurst, horizon, scale, n_steps, seed, lo, count, y0):
    params = {"lam": lam, "sigma": scale}
    if preset == "diagonal-linear":
        params["dim"] = dims
    system = build(preset, **params)
    spec = FbmSpec(hurst, system.noise_dim, horizon)
    return sl.ensemble_exponents(system, spec, n_steps, count, seed, y0, start=lo)


def cmd_stability(args):
    scales = args.scales if args.scales else [args.sigma if args.sigma is not None else 0.2]
    if args.seeds <= 0:
        raise DomainError("--seeds must be positive")
    if any(c < 0 for c in scales):
        raise DomainError("diffusion scales must be non-negative")
    probe = _system(args, scales[0])
    FbmSpec(args.hurst, probe.noise_dim, args.horizon)
    y0 = None if args.y0 is None else np.array(args.y0)
    chunks = _chunks(args.seeds, args.jobs)
    items = [(args.preset, args.lam, args.dims, args.hurst, args.horizon, c, args.n - 1,
              args.seed, lo, cnt, y0) for c in scales for lo, cnt in chunks]
    parts = _map(_stability_worker, items, args.jobs)
    k = len(chunks)
    ensembles = [sl.Ensemble.merge(parts[i * k:(i + 1) * k]) for i in range(len(scales))]
    report = sl.sweep_report(scales, ensembles, probe.drift.h_fn)
    summary = report.summary()
    return _finish(args, {"sweep.csv": report.to_csv(),
                          "stability_summary.json": dumps_json(summary)}, summary)


COMMANDS = {"sample": cmd_sample, "lift": cmd_lift, "norms": cmd_norms, "greedy": cmd_greedy,
            "tail": cmd_tail, "solve": cmd_solve, "stability": cmd_stability}


# ---------------------------------------------------------------------------
# Entry point.


def _load_config(path) -> dict:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise StructuralError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise StructuralError("config must be a JSON object")
    if isinstance(data.get("config"), dict):
        data = data["config"]
    return {k: v for k, v in data.items() if k not in ("command", "config", "out")}


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        cfg = _load_config(args.config)
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = sorted(set(cfg) - known)
        if unknown:
            raise StructuralError(f"unknown config keys for {args.command}: {unknown}")
        for a in sub._actions:
            if a.dest in cfg and a.type is not None and cfg[a.dest] is not None:
                cfg[a.dest] = a.type(cfg[a.dest]) if not isinstance(cfg[a.dest], list) else cfg[a.dest]
        sub.set_defaults(**cfg)
        args = parser.parse_args(argv)
    if args.jobs < 1:
        raise DomainError("--jobs must be at least 1")
    return args


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
        COMMANDS[args.command](args)
    except (DomainError, StructuralError, DegenerateSpacingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (DivergenceError, KernelNotPSDError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
