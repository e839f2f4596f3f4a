"""Scaling schedules, deviation fields, and Monte Carlo deviation statistics.

The MC engine steps paths in lockstep batches of a fixed chunk size, so a
run is reproducible bit-for-bit for a given master seed regardless of how
many worker threads execute the chunks: each chunk is a pure function of
(master_seed, path indices) and results are merged in chunk order.
"""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .grids import Control, DimensionError, Grid, SpaceField, SpaceTimeField
from .noise import SeedSpec, girsanov_log_density, sample_sheet
from .solvers import (
    DEFAULT_SOLVER,
    SUP_GUARD,
    SigmaSpec,
    SolverConfig,
    flux_divergence,
    heat_factor,
    heat_solve,
    solve_deterministic,
)

__all__ = [
    "ScalingSchedule",
    "McConfig",
    "EpsRecord",
    "DeviationStats",
    "TailReport",
    "wilson_interval",
    "deviation_field",
    "check_scaling",
    "mc_run",
    "tail_check",
]

# Chunking is part of the reproducibility contract: results are identical
# for any worker count because chunk boundaries never move.
CHUNK_SIZE = 64
MAX_FAILED_FRACTION = 0.01
MIN_IMPORTANCE_HITS = 10


@dataclass(frozen=True)
class ScalingSchedule:
    """Deviation scale a(eps) and its noise ratio h(eps) = a(eps)/sqrt(eps).

    Kinds: "clt" (a = sqrt(eps)), "moderate" (a = eps**theta, 0 < theta < 1/2),
    "ldp" (a = 1).  Only the moderate family has a -> 0 with h -> infinity.
    """

    kind: str
    theta: float | None = None

    def __post_init__(self):
        if self.kind not in ("clt", "moderate", "ldp"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.kind == "moderate":
            if self.theta is None or not (0.0 < self.theta < 0.5):
                raise ValueError(
                    f"moderate schedule needs theta in (0, 1/2), got {self.theta}"
                )
        elif self.theta is not None:
            raise ValueError(f"{self.kind} schedule takes no theta")

    @classmethod
    def clt(cls) -> "ScalingSchedule":
        return cls(kind="clt")

    @classmethod
    def moderate(cls, theta: float) -> "ScalingSchedule":
        return cls(kind="moderate", theta=float(theta))

    @classmethod
    def ldp(cls) -> "ScalingSchedule":
        return cls(kind="ldp")

    def a(self, eps: float) -> float:
        if eps <= 0:
            raise ValueError(f"eps must be positive, got {eps}")
        if self.kind == "clt":
            return math.sqrt(eps)
        if self.kind == "moderate":
            return eps**self.theta
        return 1.0

    def h(self, eps: float) -> float:
        return self.a(eps) / math.sqrt(eps)


def check_scaling(sched: ScalingSchedule) -> bool:
    """True iff a(eps) -> 0 and h(eps) -> infinity as eps -> 0.

    Decided symbolically: a = eps**theta vanishes iff theta > 0 and
    h = eps**(theta - 1/2) diverges iff theta < 1/2, so exactly the
    moderate family qualifies (clt has h == 1, ldp has a == 1).
    """
    return sched.kind == "moderate"


def deviation_field(
    u_eps: SpaceTimeField,
    u_det: SpaceTimeField,
    sched: ScalingSchedule,
    eps: float,
) -> SpaceTimeField:
    """Framewise (u_eps - u_det) / a(eps)."""
    if u_eps.grid != u_det.grid:
        raise DimensionError("fields live on different grids")
    scale = sched.a(eps)
    return SpaceTimeField((u_eps.frames - u_det.frames) / scale, u_eps.grid)


@dataclass(frozen=True)
class McConfig:
    eps_grid: tuple
    n_paths: int
    threshold: float
    moment_orders: tuple = (2,)
    master_seed: int = 0
    use_importance: bool = False
    # Multiplier on the auto-calibrated tilt (1.0 puts the mean response at
    # the threshold).  The default half-tilt trades some variance reduction
    # for robustness: stronger tilts make the weight spread exceed what
    # moderate path counts can average over sup-norm events.
    importance_scale: float = 0.5
    threads: int = 1

    def __post_init__(self):
        eps = tuple(float(e) for e in self.eps_grid)
        object.__setattr__(self, "eps_grid", eps)
        if not eps or any(e <= 0 or e > 1 for e in eps):
            raise ValueError("eps_grid entries must lie in (0, 1]")
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ValueError("eps_grid must be strictly decreasing")
        if self.n_paths < 1:
            raise ValueError("n_paths must be positive")
        if self.threshold <= 0:
            raise ValueError("threshold must be positive")
        orders = tuple(int(q) for q in self.moment_orders)
        object.__setattr__(self, "moment_orders", orders)
        if any(q < 2 for q in orders):
            raise ValueError("moment orders must be integers >= 2")
        if self.threads < 1:
            raise ValueError("threads must be positive")


@dataclass(frozen=True)
class EpsRecord:
    eps: float
    p_hat: float
    ci_low: float
    ci_high: float
    moments_u: tuple  # ((q, E sup_t ||u_eps||_2^q), ...)
    moments_dev: tuple  # ((q, E sup_t ||u_eps - u_det||_2^q / a^q), ...)
    neg_log_p_over_h2: float
    failed_fraction: float
    n_paths: int
    valid: bool
    method: str  # "plain" | "importance"

    def to_json_dict(self) -> dict:
        def _num(x):
            return None if (x is None or not np.isfinite(x)) else float(x)

        return {
            "eps": self.eps,
            "p_hat": self.p_hat,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "moments_u": {str(q): val for q, val in self.moments_u},
            "moments_dev": {str(q): val for q, val in self.moments_dev},
            "neg_log_p_over_h2": _num(self.neg_log_p_over_h2),
            "failed_fraction": self.failed_fraction,
            "n_paths": self.n_paths,
            "valid": self.valid,
            "method": self.method,
        }


@dataclass(frozen=True)
class DeviationStats:
    records: tuple
    threshold: float
    schedule: ScalingSchedule

    def to_json_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "schedule": {"kind": self.schedule.kind, "theta": self.schedule.theta},
            "records": [r.to_json_dict() for r in self.records],
        }

    def to_json(self, path: str) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=2)
            fh.write("\n")

    def to_csv(self, path: str) -> None:
        orders = [q for q, _ in self.records[0].moments_u] if self.records else []
        header = ["eps", "p_hat", "ci_low", "ci_high", "neg_log_p_over_h2"]
        header += [f"moment_u_q{q}" for q in orders]
        header += [f"moment_dev_q{q}" for q in orders]
        header += ["failed_fraction", "n_paths", "valid", "method"]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for r in self.records:
                row = [repr(r.eps), repr(r.p_hat), repr(r.ci_low), repr(r.ci_high)]
                row.append(repr(r.neg_log_p_over_h2))
                row += [repr(val) for _, val in r.moments_u]
                row += [repr(val) for _, val in r.moments_dev]
                row += [repr(r.failed_fraction), str(r.n_paths), str(r.valid), r.method]
                writer.writerow(row)


def wilson_interval(hits: int, n: int, z: float = 1.96) -> tuple:
    """Wilson 95% score interval; well behaved when p_hat is at or near 0."""
    if n == 0:
        return (0.0, 1.0)
    p = hits / n
    z2 = z * z
    denom = 1.0 + z2 / n
    center = (p + z2 / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z2 / (4 * n * n)) / denom
    # at the boundary the score equation has an exact root at the endpoint;
    # keep it free of roundoff so degenerate estimates stay degenerate
    lo = 0.0 if hits == 0 else max(0.0, center - half)
    hi = 1.0 if hits == n else min(1.0, center + half)
    return (lo, hi)


def _chunk_indices(n_paths: int) -> list:
    return [
        range(start, min(start + CHUNK_SIZE, n_paths))
        for start in range(0, n_paths, CHUNK_SIZE)
    ]


def _gather_sheets(g: Grid, master_seed: int, indices) -> np.ndarray:
    dWs = np.empty((len(indices), g.nt, g.nx - 1))
    for i, p in enumerate(indices):
        dWs[i] = sample_sheet(g, SeedSpec(master_seed, p)).dW
    return dWs


def _run_paths_chunk(
    u0_vals: np.ndarray,
    g: Grid,
    eps: float,
    sigma: SigmaSpec,
    dWs: np.ndarray,
    udet_frames: np.ndarray,
    factor,
) -> tuple:
    """Step a batch of paths in lockstep; per-path running sup statistics.

    Returns (sup_u, sup_diff, alive): per-path sup_t of the solution's
    L2 norm, sup_t of ||u - u_det||_2 (unscaled), and a stability mask.
    The arithmetic per path matches solve_spde exactly: the banded solve
    processes right-hand-side columns independently.
    """
    B = dWs.shape[0]
    w_space = g.space_weights()
    sqrt_eps = np.sqrt(eps)
    U = np.tile(u0_vals, (B, 1))
    alive = np.ones(B, dtype=bool)
    sup_u = np.sqrt((U**2) @ w_space)
    sup_diff = np.zeros(B)
    for k in range(g.nt):
        noise = sqrt_eps * sigma(U[:, 1:-1]) * dWs[:, k, :] / g.dx
        rhs = U[:, 1:-1] + g.dt * flux_divergence(U, g.dx) + noise
        sol = heat_solve(factor, rhs.T).T
        with np.errstate(invalid="ignore"):
            bad = ~np.isfinite(sol).all(axis=1) | (np.abs(sol).max(axis=1) > SUP_GUARD)
        if bad.any():
            alive &= ~bad
            sol[~alive] = 0.0
        U = np.zeros((B, g.nx + 1))
        U[:, 1:-1] = sol
        np.maximum(sup_u, np.sqrt((U**2) @ w_space), out=sup_u)
        diff = U - udet_frames[k + 1]
        np.maximum(sup_diff, np.sqrt((diff**2) @ w_space), out=sup_diff)
    return sup_u, sup_diff, alive


def _importance_pass(
    u0: SpaceField,
    g: Grid,
    eps: float,
    sigma: SigmaSpec,
    mc: McConfig,
    u_det: SpaceTimeField,
    factor,
    a_val: float,
    h_val: float,
) -> tuple:
    """Estimate the deviation probability under a Girsanov-shifted measure.

    Paths are driven by dW + h*v*dt*dx with h = h(eps), the change of
    measure under which the deviation field acquires the mean push given by
    the skeleton response to v.  The profile's strength is calibrated so
    that this response sits at the threshold (times mc.importance_scale):
    tilting past the threshold is the classical failure mode where rare
    large-weight crossings dominate the expectation, while tilting to it
    makes roughly half the paths cross with bounded weights.  Each path is
    reweighted by the exponential martingale evaluated on the unshifted
    sheet, which keeps the estimator unbiased.
    Returns (p_hat, ci_low, ci_high, n_used).
    """
    from .solvers import solve_skeleton  # local import; solvers has no mc deps

    profile = np.tile(np.sin(np.pi * g.x_interior()), (g.nt, 1))
    response = solve_skeleton(u0, g, Control(profile, g), sigma, u_det)
    unit_sup = float(
        np.max(np.sqrt((response.frames**2) @ g.space_weights()))
    )
    strength = mc.importance_scale * mc.threshold / unit_sup
    v_vals = strength * profile
    shift = h_val * v_vals * (g.dt * g.dx)
    ht2 = float(np.sum(v_vals**2) * g.dt * g.dx)
    weighted = []
    for indices in _chunk_indices(mc.n_paths):
        base = _gather_sheets(g, mc.master_seed, indices)
        logw = -h_val * np.einsum("bkj,kj->b", base, v_vals) - 0.5 * h_val**2 * ht2
        sup_u, sup_diff, alive = _run_paths_chunk(
            u0.values, g, eps, sigma, base + shift, u_det.frames, factor
        )
        hit = (sup_diff / a_val > mc.threshold) & alive
        weighted.append(np.where(alive, np.exp(logw) * hit, np.nan))
    w = np.concatenate(weighted)
    w = w[np.isfinite(w)]
    n = w.size
    if n == 0:
        return 0.0, 0.0, 1.0, 0
    p = float(np.mean(w))
    se = float(np.std(w, ddof=1) / np.sqrt(n)) if n > 1 else 1.0
    return p, max(0.0, p - 1.96 * se), min(1.0, p + 1.96 * se), n


def mc_run(
    u0: SpaceField,
    g: Grid,
    sigma: SigmaSpec,
    sched: ScalingSchedule,
    mc: McConfig,
    cfg: SolverConfig = DEFAULT_SOLVER,
) -> DeviationStats:
    """Monte Carlo deviation statistics across the epsilon grid.

    For each eps: n_paths independent paths (common random numbers across
    the grid, path_index = i), the fraction whose scaled deviation
    sup_t ||(u_eps - u_det)/a||_2 exceeds the threshold with a Wilson 95%
    interval, sample moments of sup_t ||u_eps||_2 and of the unscaled
    difference, and the speed probe -log(p_hat)/h(eps)^2.  Unstable paths
    are dropped; a record with more than 1% failures is marked invalid.
    """
    if u0.grid != g:
        raise DimensionError("initial condition lives on a different grid")
    u_det = solve_deterministic(u0, g, cfg)
    factor = heat_factor(g)
    chunks = _chunk_indices(mc.n_paths)

    def _work(indices):
        dWs = _gather_sheets(g, mc.master_seed, indices)
        return _run_paths_chunk(u0.values, g, eps, sigma, dWs, u_det.frames, factor)

    records = []
    for eps in mc.eps_grid:
        if mc.threads > 1:
            with ThreadPoolExecutor(max_workers=mc.threads) as pool:
                parts = list(pool.map(_work, chunks))
        else:
            parts = [_work(indices) for indices in chunks]
        sup_u = np.concatenate([p[0] for p in parts])
        sup_diff = np.concatenate([p[1] for p in parts])
        alive = np.concatenate([p[2] for p in parts])

        n_ok = int(alive.sum())
        failed_fraction = 1.0 - n_ok / mc.n_paths
        a_val = sched.a(eps)
        h_val = sched.h(eps)
        su = sup_u[alive]
        sd = sup_diff[alive]
        hits = int(np.sum(sd / a_val > mc.threshold)) if n_ok else 0
        p_hat = hits / n_ok if n_ok else 0.0
        ci_low, ci_high = wilson_interval(hits, n_ok)
        method = "plain"
        if mc.use_importance and hits < MIN_IMPORTANCE_HITS:
            p_hat, ci_low, ci_high, _ = _importance_pass(
                u0, g, eps, sigma, mc, u_det, factor, a_val, h_val
            )
            method = "importance"
        moments_u = tuple(
            (q, float(np.mean(su**q)) if n_ok else np.nan) for q in mc.moment_orders
        )
        moments_dev = tuple(
            (q, float(np.mean(sd**q)) if n_ok else np.nan) for q in mc.moment_orders
        )
        if 0.0 < p_hat < 1.0:
            speed = -math.log(p_hat) / h_val**2
        else:
            speed = math.nan
        records.append(
            EpsRecord(
                eps=eps,
                p_hat=p_hat,
                ci_low=ci_low,
                ci_high=ci_high,
                moments_u=moments_u,
                moments_dev=moments_dev,
                neg_log_p_over_h2=speed,
                failed_fraction=failed_fraction,
                n_paths=mc.n_paths,
                valid=failed_fraction <= MAX_FAILED_FRACTION,
                method=method,
            )
        )
    return DeviationStats(records=tuple(records), threshold=mc.threshold, schedule=sched)


# ------------------------------------------------------------- tail probe


@dataclass(frozen=True)
class TailReport:
    """Gaussian-tail diagnostic for the stochastic convolution."""

    thresholds: tuple
    p_hat: tuple
    slope: float  # fitted d log p / d M^2 (negative for Gaussian-type tails)
    intercept: float
    r_squared: float
    n_paths: int
    failed_fraction: float
    all_zero: bool

    def to_json_dict(self) -> dict:
        def _num(x):
            return None if not np.isfinite(x) else float(x)

        return {
            "thresholds": list(self.thresholds),
            "p_hat": list(self.p_hat),
            "slope": _num(self.slope),
            "intercept": _num(self.intercept),
            "r_squared": _num(self.r_squared),
            "n_paths": self.n_paths,
            "failed_fraction": self.failed_fraction,
            "all_zero": self.all_zero,
        }


def _convolution_sups_chunk(
    u0_vals: np.ndarray,
    g: Grid,
    sigma: SigmaSpec,
    dWs: np.ndarray,
    factor,
) -> tuple:
    """Per-path sup over the lattice of |stochastic convolution|.

    The convolution eta follows eta^{k+1} = M^{-1}(eta^k + sigma(u^k) dW/dx)
    alongside the eps = 1 solution path u feeding the coefficient.
    """
    B = dWs.shape[0]
    U = np.tile(u0_vals, (B, 1))
    eta = np.zeros((B, g.nx - 1))
    alive = np.ones(B, dtype=bool)
    sups = np.zeros(B)
    for k in range(g.nt):
        sig = sigma(U[:, 1:-1])
        noise = sig * dWs[:, k, :] / g.dx
        eta = heat_solve(factor, (eta + noise).T).T
        rhs = U[:, 1:-1] + g.dt * flux_divergence(U, g.dx) + noise
        sol = heat_solve(factor, rhs.T).T
        with np.errstate(invalid="ignore"):
            bad = ~np.isfinite(sol).all(axis=1) | (np.abs(sol).max(axis=1) > SUP_GUARD)
            bad |= ~np.isfinite(eta).all(axis=1)
        if bad.any():
            alive &= ~bad
            sol[~alive] = 0.0
            eta[~alive] = 0.0
        U = np.zeros((B, g.nx + 1))
        U[:, 1:-1] = sol
        np.maximum(sups, np.abs(eta).max(axis=1), out=sups)
    return sups, alive


def tail_check(
    u0: SpaceField,
    g: Grid,
    sigma: SigmaSpec,
    mc: McConfig,
    cfg: SolverConfig = DEFAULT_SOLVER,
) -> TailReport:
    """Estimate P(sup |convolution| >= M) on a quantile ladder and fit vs M^2.

    A linear fit of log p_hat against M^2 with negative slope is the
    Gaussian-tail signature; the fitted slope scales like 1/||sigma||_inf^2,
    so doubling a constant sigma divides the decay rate by about four.
    """
    if u0.grid != g:
        raise DimensionError("initial condition lives on a different grid")
    factor = heat_factor(g)
    sups_parts = []
    alive_parts = []
    for indices in _chunk_indices(mc.n_paths):
        dWs = _gather_sheets(g, mc.master_seed, indices)
        s, a = _convolution_sups_chunk(u0.values, g, sigma, dWs, factor)
        sups_parts.append(s)
        alive_parts.append(a)
    sups = np.concatenate(sups_parts)
    alive = np.concatenate(alive_parts)
    failed_fraction = 1.0 - float(alive.sum()) / mc.n_paths
    sups = sups[alive]
    n = sups.size

    if n == 0 or np.max(sups) == 0.0:
        return TailReport(
            thresholds=(),
            p_hat=(),
            slope=math.nan,
            intercept=math.nan,
            r_squared=math.nan,
            n_paths=mc.n_paths,
            failed_fraction=failed_fraction,
            all_zero=True,
        )

    target_probs = [0.4, 0.25, 0.15, 0.08, 0.04, 0.02, max(0.01, 20.0 / n)]
    target_probs = sorted({p for p in target_probs if 0 < p < 1}, reverse=True)
    ladder = np.quantile(sups, [1.0 - p for p in target_probs])
    thresholds = []
    p_hat = []
    for m in ladder:
        if thresholds and m <= thresholds[-1]:
            continue
        p = float(np.mean(sups >= m))
        if 0.0 < p < 1.0:
            thresholds.append(float(m))
            p_hat.append(p)
    if len(thresholds) < 3:
        return TailReport(
            thresholds=tuple(thresholds),
            p_hat=tuple(p_hat),
            slope=math.nan,
            intercept=math.nan,
            r_squared=math.nan,
            n_paths=mc.n_paths,
            failed_fraction=failed_fraction,
            all_zero=False,
        )
    x = np.asarray(thresholds) ** 2
    y = np.log(np.asarray(p_hat))
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else math.nan
    return TailReport(
        thresholds=tuple(thresholds),
        p_hat=tuple(p_hat),
        slope=float(slope),
        intercept=float(intercept),
        r_squared=r2,
        n_paths=mc.n_paths,
        failed_fraction=failed_fraction,
        all_zero=False,
    )
