"""Command-line front end for reproducible experiments.

Every subcommand is a pure function of the configuration file and the
flags: defaults, then file values, then environment overrides, then flags,
in increasing precedence.  Fields go to CSV, structured reports to JSON;
with --no-timestamp a rerun reproduces every output byte for byte.
"""

import argparse
import copy
import csv
import json
import math
import os
import sys
from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np

from . import __version__
from .deviations import McConfig, ScalingSchedule, deviation_field, mc_run
from .grids import Control, Grid, SpaceField, SpaceTimeField, ht_norm, sup_t_l2
from .kernels import KernelConfig, verify_kernel_estimates
from .noise import SeedSpec, girsanov_log_density, girsanov_shift, sample_sheet
from .ratefn import SkeletonContext, rate_value
from .solvers import (
    ContractionFailureError,
    InstabilityError,
    SigmaSpec,
    SolverConfig,
    solve_controlled,
    solve_deterministic,
    solve_spde,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERICAL = 3
EXIT_CHECK = 4

ENV_PREFIX = "BURGERSLAB_"

DEFAULTS = {
    "grid": {"nx": 64, "nt": 256, "T": 1.0},
    "initial": {"kind": "sine", "amplitude": 1.0, "mode": 1},
    "sigma": {"kind": "cosine", "params": [1.0]},
    "schedule": {"kind": "moderate", "theta": 0.25},
    "mc": {
        "eps_grid": [1e-2, 5e-3, 2.5e-3, 1.25e-3],
        "n_paths": 256,
        "r": 0.12,
        "q_list": [2],
        "seed": 0,
        "use_importance": False,
        "importance_scale": 0.5,
    },
    "solver": {"fp_tol": 1e-4, "fp_max_iter": 40},
    "kernel": {"truncation": 50, "method": "auto"},
    "rate": {"tol": 1e-6, "max_iter": 2000},
    "girsanov": {"n_sheets": 20000, "eps": 1e-3, "route_tol": 5e-2},
    "output": {"dir": ".", "format": "csv"},
}


class ConfigError(Exception):
    """Invalid configuration or usage; maps to exit code 2."""


# ------------------------------------------------------ config assembly


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        if key not in base:
            raise ConfigError(f"unknown config key: {path}{key}")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"config key {path}{key} must be a table")
            out[key] = _merge(base[key], val, f"{path}{key}.")
        else:
            out[key] = val
    return out


def _load_file(path: str) -> dict:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"config parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    return data


def _apply_env(cfg: dict, environ) -> dict:
    out = copy.deepcopy(cfg)
    for name in sorted(environ):
        if not name.startswith(ENV_PREFIX):
            continue
        rest = name[len(ENV_PREFIX) :]
        if "__" not in rest:
            raise ConfigError(f"environment override {name} needs SECTION__KEY form")
        sec_raw, key_raw = rest.split("__", 1)
        section = sec_raw.lower()
        if section not in out:
            raise ConfigError(f"environment override {name}: unknown section")
        match = [k for k in out[section] if k.upper() == key_raw.upper()]
        if not match:
            raise ConfigError(f"environment override {name}: unknown key")
        raw = environ[name]
        try:
            val = json.loads(raw)
        except json.JSONDecodeError:
            val = raw
        out[section][match[0]] = val
    return out


def assemble_config(args, environ=None) -> dict:
    """defaults < config file < environment < flags."""
    cfg = copy.deepcopy(DEFAULTS)
    if args.config:
        cfg = _merge(cfg, _load_file(args.config))
    cfg = _apply_env(cfg, os.environ if environ is None else environ)
    if args.seed is not None:
        cfg["mc"]["seed"] = args.seed
    if args.out is not None:
        cfg["output"]["dir"] = args.out
    if args.format is not None:
        cfg["output"]["format"] = args.format
    return cfg


@dataclass(frozen=True)
class RunConfig:
    """Validated run: every module object constructed up front."""

    grid: Grid
    u0: SpaceField
    sigma: SigmaSpec
    schedule: ScalingSchedule
    mc: McConfig
    solver: SolverConfig
    kernel: KernelConfig
    rate_tol: float
    rate_max_iter: int
    girsanov_n_sheets: int
    girsanov_eps: float
    girsanov_route_tol: float
    out_dir: str
    fmt: str
    timestamp: bool


def _build_initial(g: Grid, spec: dict) -> SpaceField:
    kind = spec["kind"]
    if kind == "zero":
        return SpaceField.zero(g)
    if kind == "sine":
        amp = float(spec["amplitude"])
        mode = int(spec["mode"])
        if mode < 1:
            raise ConfigError("initial.mode must be a positive integer")
        return SpaceField.sample(g, lambda x: amp * np.sin(mode * np.pi * x))
    raise ConfigError(f"initial.kind must be zero|sine, got {kind!r}")


def _build_sigma(spec: dict) -> SigmaSpec:
    kind = spec["kind"]
    params = spec["params"]
    if kind == "constant":
        return SigmaSpec.constant(float(params[0]))
    if kind == "cosine":
        return SigmaSpec.cosine(float(params[0]))
    if kind == "tabulated":
        xs, ys = params
        return SigmaSpec.tabulated(tuple(xs), tuple(ys))
    raise ConfigError(f"sigma.kind must be constant|cosine|tabulated, got {kind!r}")


def _build_schedule(spec: dict) -> ScalingSchedule:
    kind = spec["kind"]
    if kind == "clt":
        return ScalingSchedule.clt()
    if kind == "moderate":
        return ScalingSchedule.moderate(float(spec["theta"]))
    if kind == "ldp":
        return ScalingSchedule.ldp()
    raise ConfigError(f"schedule.kind must be clt|moderate|ldp, got {kind!r}")


def validate_config(cfg: dict, threads: int, timestamp: bool) -> RunConfig:
    try:
        g = Grid(
            nx=int(cfg["grid"]["nx"]),
            nt=int(cfg["grid"]["nt"]),
            T=float(cfg["grid"]["T"]),
        )
        u0 = _build_initial(g, cfg["initial"])
        sigma = _build_sigma(cfg["sigma"])
        schedule = _build_schedule(cfg["schedule"])
        mc = McConfig(
            eps_grid=tuple(cfg["mc"]["eps_grid"]),
            n_paths=int(cfg["mc"]["n_paths"]),
            threshold=float(cfg["mc"]["r"]),
            moment_orders=tuple(cfg["mc"]["q_list"]),
            master_seed=int(cfg["mc"]["seed"]),
            use_importance=bool(cfg["mc"]["use_importance"]),
            importance_scale=float(cfg["mc"]["importance_scale"]),
            threads=threads,
        )
        solver = SolverConfig(
            fp_tol=float(cfg["solver"]["fp_tol"]),
            fp_max_iter=int(cfg["solver"]["fp_max_iter"]),
        )
        kernel = KernelConfig(
            truncation=int(cfg["kernel"]["truncation"]),
            method=str(cfg["kernel"]["method"]),
        )
        rate_tol = float(cfg["rate"]["tol"])
        rate_max_iter = int(cfg["rate"]["max_iter"])
        if rate_tol <= 0 or rate_max_iter < 1:
            raise ValueError("rate.tol must be positive and rate.max_iter >= 1")
        n_sheets = int(cfg["girsanov"]["n_sheets"])
        geps = float(cfg["girsanov"]["eps"])
        rtol = float(cfg["girsanov"]["route_tol"])
        if n_sheets < 2 or geps <= 0 or rtol <= 0:
            raise ValueError("girsanov needs n_sheets >= 2 and positive eps/route_tol")
        fmt = cfg["output"]["format"]
        if fmt not in ("csv", "json", "both"):
            raise ValueError(f"output.format must be csv|json|both, got {fmt!r}")
    except (ValueError, TypeError, KeyError, IndexError) as exc:
        raise ConfigError(f"invalid config: {exc}") from exc
    return RunConfig(
        grid=g,
        u0=u0,
        sigma=sigma,
        schedule=schedule,
        mc=mc,
        solver=solver,
        kernel=kernel,
        rate_tol=rate_tol,
        rate_max_iter=rate_max_iter,
        girsanov_n_sheets=n_sheets,
        girsanov_eps=geps,
        girsanov_route_tol=rtol,
        out_dir=cfg["output"]["dir"],
        fmt=fmt,
        timestamp=timestamp,
    )


# ------------------------------------------------------------ file output


def _metadata(rc: RunConfig, command: str) -> dict:
    meta = {"tool": "burgerslab", "version": __version__, "command": command}
    if rc.timestamp:
        meta["generated_at"] = datetime.now(timezone.utc).isoformat()
    return meta


def _write_json(obj: dict, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _field_to_csv(frames: np.ndarray, g: Grid, path: str, label: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([label, "nx", g.nx, "nt", g.nt, "T", repr(g.T)])
        for row in frames:
            writer.writerow([repr(float(x)) for x in row])


def read_field_csv(path: str) -> tuple:
    """Read a field CSV back as (frames, Grid); inverse of the writer."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ConfigError(f"cannot read field file: {exc}") from exc
    try:
        head = rows[0]
        g = Grid(nx=int(head[2]), nt=int(head[4]), T=float(head[6]))
        frames = np.array([[float(x) for x in r] for r in rows[1:]])
    except (IndexError, ValueError) as exc:
        raise ConfigError(f"malformed field file {path}: {exc}") from exc
    return frames, g


def _field_to_json_dict(frames: np.ndarray, g: Grid) -> dict:
    return {
        "nx": g.nx,
        "nt": g.nt,
        "T": g.T,
        "frames": [[float(x) for x in row] for row in frames],
    }


def _emit_field(rc: RunConfig, frames: np.ndarray, stem: str, label: str) -> list:
    written = []
    if rc.fmt in ("csv", "both"):
        path = os.path.join(rc.out_dir, f"{stem}.csv")
        _field_to_csv(frames, rc.grid, path, label)
        written.append(path)
    if rc.fmt in ("json", "both"):
        path = os.path.join(rc.out_dir, f"{stem}.json")
        _write_json(_field_to_json_dict(frames, rc.grid), path)
        written.append(path)
    return written


def _energies(frames: np.ndarray, g: Grid) -> list:
    return [float(x) for x in np.sqrt((frames**2) @ g.space_weights())]


# ------------------------------------------------------------- commands


def cmd_deterministic(rc: RunConfig) -> int:
    field = solve_deterministic(rc.u0, rc.grid, rc.solver)
    _emit_field(rc, field.frames, "solution", "field")
    summary = {
        "metadata": _metadata(rc, "deterministic"),
        "energy": _energies(field.frames, rc.grid),
        "sup_t_l2": sup_t_l2(field, rc.grid),
    }
    _write_json(summary, os.path.join(rc.out_dir, "summary.json"))
    return EXIT_OK


def cmd_simulate(rc: RunConfig, eps: float | None) -> int:
    if eps is None:
        eps = rc.mc.eps_grid[0]
    if eps < 0:
        raise ConfigError("eps must be nonnegative")
    w = sample_sheet(rc.grid, SeedSpec(rc.mc.master_seed, 0))
    u_eps = solve_spde(rc.u0, rc.grid, eps, rc.sigma, w, rc.solver)
    u_det = solve_deterministic(rc.u0, rc.grid, rc.solver)
    if eps == 0.0:
        # the path coincides with the limit bit for bit; the rescaled
        # deviation is identically zero whatever the schedule says
        dev_frames = np.zeros_like(u_eps.frames)
    else:
        dev_frames = deviation_field(u_eps, u_det, rc.schedule, eps).frames
    _emit_field(rc, u_eps.frames, "solution", "field")
    _emit_field(rc, dev_frames, "deviation", "field")
    summary = {
        "metadata": _metadata(rc, "simulate"),
        "eps": eps,
        "seed": rc.mc.master_seed,
        "schedule": {"kind": rc.schedule.kind, "theta": rc.schedule.theta},
        "sup_t_l2_solution": sup_t_l2(u_eps, rc.grid),
        "sup_t_l2_deviation": sup_t_l2(
            SpaceTimeField(dev_frames, rc.grid), rc.grid
        ),
    }
    _write_json(summary, os.path.join(rc.out_dir, "summary.json"))
    return EXIT_OK


def cmd_mc(rc: RunConfig) -> int:
    stats = mc_run(rc.u0, rc.grid, rc.sigma, rc.schedule, rc.mc, rc.solver)
    report = {"metadata": _metadata(rc, "mc")}
    report.update(stats.to_json_dict())
    _write_json(report, os.path.join(rc.out_dir, "stats.json"))
    stats.to_csv(os.path.join(rc.out_dir, "stats.csv"))
    return EXIT_OK


def cmd_kernel_check(rc: RunConfig) -> int:
    if rc.grid.nt < 2:
        raise ConfigError("kernel-check needs nt >= 2 (single-t range is degenerate)")
    report = verify_kernel_estimates(rc.grid, rc.kernel)
    payload = {
        "metadata": _metadata(rc, "kernel-check"),
        "items": report.to_json_list(),
        "all_pass": report.all_pass(),
    }
    _write_json(payload, os.path.join(rc.out_dir, "kernel_report.json"))
    return EXIT_OK if report.all_pass() else EXIT_CHECK


def cmd_rate(rc: RunConfig, target_path: str | None) -> int:
    if not target_path:
        raise ConfigError("rate needs --target FILE (field CSV)")
    frames, tg = read_field_csv(target_path)
    if tg != rc.grid:
        raise ConfigError(
            f"target grid {tg} does not match configured grid {rc.grid}"
        )
    try:
        target = SpaceTimeField(frames, rc.grid)
        ctx = SkeletonContext.build(rc.u0, rc.grid, rc.sigma, rc.solver)
        result = rate_value(
            target, ctx, tol=rc.rate_tol, max_iter=rc.rate_max_iter
        )
    except ValueError as exc:
        raise ConfigError(f"invalid rate target: {exc}") from exc
    v_path = os.path.join(rc.out_dir, "v_star.csv")
    _field_to_csv(result.v_star.values, rc.grid, v_path, "control")
    payload = {"metadata": _metadata(rc, "rate")}
    payload.update(result.to_json_dict(v_star_csv_path="v_star.csv"))
    _write_json(payload, os.path.join(rc.out_dir, "rate_result.json"))
    return EXIT_OK


def _unit_profile_control(g: Grid) -> Control:
    vals = np.tile(np.sin(np.pi * g.x_interior()), (g.nt, 1))
    return Control(vals / ht_norm(vals, g), g)


def cmd_girsanov_check(rc: RunConfig) -> int:
    g = rc.grid
    v = _unit_profile_control(g)
    zero_v = Control.zero(g)

    # density with no shift is exp(0) on every sheet
    w_probe = sample_sheet(g, SeedSpec(rc.mc.master_seed, 0))
    zero_mean = float(math.exp(girsanov_log_density(w_probe, zero_v, 1.0)))

    # exponential-martingale mean over independent sheets, h = 1
    n = rc.girsanov_n_sheets
    weights = np.empty(n)
    for i in range(n):
        w = sample_sheet(g, SeedSpec(rc.mc.master_seed, i))
        weights[i] = math.exp(girsanov_log_density(w, v, 1.0))
    mean = float(weights.mean())
    stderr = float(weights.std(ddof=1) / math.sqrt(n))
    mean_pass = abs(mean - 1.0) <= 3.0 * stderr

    # the controlled solver against the shifted-noise route
    eps = rc.girsanov_eps
    h = rc.schedule.h(eps)
    w0 = sample_sheet(g, SeedSpec(rc.mc.master_seed, 0))
    direct = solve_controlled(
        rc.u0, g, eps, rc.schedule, rc.sigma, v, w0, rc.solver
    )
    shifted = girsanov_shift(w0, v, h)
    u_det = solve_deterministic(rc.u0, g, rc.solver)
    via = deviation_field(
        solve_spde(rc.u0, g, eps, rc.sigma, shifted, rc.solver),
        u_det,
        rc.schedule,
        eps,
    )
    gap = sup_t_l2(SpaceTimeField(direct.frames - via.frames, g), g)
    route_pass = gap <= rc.girsanov_route_tol

    payload = {
        "metadata": _metadata(rc, "girsanov-check"),
        "zero_control_mean": zero_mean,
        "n_sheets": n,
        "mean": mean,
        "stderr": stderr,
        "mean_within_3se": mean_pass,
        "eps": eps,
        "route_gap": gap,
        "route_tol": rc.girsanov_route_tol,
        "route_pass": route_pass,
    }
    _write_json(payload, os.path.join(rc.out_dir, "girsanov_report.json"))
    ok = mean_pass and route_pass and zero_mean == 1.0
    return EXIT_OK if ok else EXIT_CHECK


# ----------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON config file")
    common.add_argument("--seed", type=int, metavar="U64", help="override mc.seed")
    common.add_argument(
        "--threads",
        type=int,
        default=None,
        metavar="N",
        help="solver threads inside mc (default: available cores)",
    )
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument(
        "--format", choices=["csv", "json", "both"], help="field file format"
    )
    common.add_argument(
        "--no-timestamp",
        action="store_true",
        help="omit the timestamp so reruns are byte-identical",
    )
    common.add_argument(
        "--dump-config",
        action="store_true",
        help="print the effective configuration and exit",
    )

    parser = argparse.ArgumentParser(
        prog="burgerslab",
        description="Stochastic Burgers equation laboratory",
    )
    parser.add_argument(
        "--version", action="version", version=f"burgerslab {__version__}"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser(
        "deterministic", parents=[common], help="zero-noise solution and energy"
    )
    sim = sub.add_parser(
        "simulate", parents=[common], help="one noisy path plus its deviation field"
    )
    sim.add_argument(
        "--eps", type=float, default=None, help="noise amplitude (default mc.eps_grid[0])"
    )
    sub.add_parser("mc", parents=[common], help="Monte Carlo deviation statistics")
    sub.add_parser(
        "kernel-check", parents=[common], help="re-measure the heat-kernel estimates"
    )
    rate = sub.add_parser(
        "rate", parents=[common], help="least control energy of a target profile"
    )
    rate.add_argument("--target", metavar="CSV", help="target field file")
    sub.add_parser(
        "girsanov-check",
        parents=[common],
        help="density mean-one test and the two-route comparison",
    )
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = assemble_config(args)
        if args.dump_config:
            print(json.dumps(cfg, indent=2, sort_keys=True))
            return EXIT_OK
        threads = args.threads if args.threads else (os.cpu_count() or 1)
        rc = validate_config(cfg, threads=threads, timestamp=not args.no_timestamp)
        os.makedirs(rc.out_dir, exist_ok=True)
        if args.command == "deterministic":
            return cmd_deterministic(rc)
        if args.command == "simulate":
            return cmd_simulate(rc, args.eps)
        if args.command == "mc":
            return cmd_mc(rc)
        if args.command == "kernel-check":
            return cmd_kernel_check(rc)
        if args.command == "rate":
            return cmd_rate(rc, args.target)
        return cmd_girsanov_check(rc)
    except ConfigError as exc:
        print(f"burgerslab: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InstabilityError, ContractionFailureError) as exc:
        print(f"burgerslab: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
