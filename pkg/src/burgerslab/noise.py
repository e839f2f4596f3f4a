"""Space-time white noise increments on the interior lattice.

A noise sheet holds the nt x (nx-1) matrix of independent N(0, dt*dx)
increments driving one solver path.  Streams are pure functions of
(master_seed, path_index), so Monte Carlo runs are reproducible no matter
how paths are scheduled across workers.

The Girsanov helpers implement the measure change of the controlled
dynamics: shifting the sheet by h*v*dt*dx and the log-density
-h*sum(v dW) - (h^2/2)*|v|_{H_T}^2 whose exponential has mean one.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .grids import Control, DimensionError, Grid, ht_norm

__all__ = [
    "SeedSpec",
    "NoiseSheet",
    "sample_sheet",
    "girsanov_shift",
    "girsanov_log_density",
    "sheet_to_csv",
    "sheet_from_csv",
]

_UINT64_MASK = (1 << 64) - 1


@dataclass(frozen=True)
class SeedSpec:
    """Master seed plus path index; every path gets its own derived stream."""

    master_seed: int
    path_index: int = 0

    def __post_init__(self):
        if not (0 <= int(self.master_seed) <= _UINT64_MASK):
            raise ValueError("master_seed must fit in 64 bits")
        if int(self.path_index) < 0:
            raise ValueError("path_index must be nonnegative")
        object.__setattr__(self, "master_seed", int(self.master_seed))
        object.__setattr__(self, "path_index", int(self.path_index))

    def stream_key(self) -> int:
        """64-bit stream key, a pure function of (master_seed, path_index)."""
        ss = np.random.SeedSequence(
            entropy=self.master_seed, spawn_key=(self.path_index,)
        )
        return int(ss.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class NoiseSheet:
    """One path's noise increments; seed records the generating stream key."""

    dW: np.ndarray
    seed: int
    grid: Grid

    def __post_init__(self):
        arr = np.asarray(self.dW, dtype=float)
        if arr.shape != (self.grid.nt, self.grid.nx - 1):
            raise DimensionError(
                f"NoiseSheet needs shape {(self.grid.nt, self.grid.nx - 1)},"
                f" got {arr.shape}"
            )
        if not np.all(np.isfinite(arr)):
            raise ValueError("NoiseSheet increments must be finite")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "dW", arr)
        object.__setattr__(self, "seed", int(self.seed))


def sample_sheet(g: Grid, s: SeedSpec) -> NoiseSheet:
    """Draw the i.i.d. N(0, dt*dx) increment matrix for one path."""
    key = s.stream_key()
    rng = np.random.default_rng(key)
    scale = np.sqrt(g.dt * g.dx)
    dW = scale * rng.standard_normal((g.nt, g.nx - 1))
    return NoiseSheet(dW=dW, seed=key, grid=g)


def _require_same_grid(w: NoiseSheet, v: Control) -> None:
    if w.grid != v.grid:
        raise DimensionError("noise sheet and control live on different grids")


def girsanov_shift(w: NoiseSheet, v: Control, h: float) -> NoiseSheet:
    """Sheet of the drift-shifted field: dW~ = dW + h*v*dt*dx.

    The returned sheet keeps the base sheet's stream key: it is derived
    data, not a fresh draw.
    """
    _require_same_grid(w, v)
    g = w.grid
    return NoiseSheet(w.dW + h * v.values * (g.dt * g.dx), seed=w.seed, grid=g)


def girsanov_log_density(w: NoiseSheet, v: Control, h: float) -> float:
    """log dQ/dP for the shift by h*v: -h*sum(v dW) - (h^2/2)*|v|_{H_T}^2."""
    _require_same_grid(w, v)
    stoch = float(np.sum(v.values * w.dW))
    return -h * stoch - 0.5 * h * h * ht_norm(v, w.grid) ** 2


def sheet_to_csv(w: NoiseSheet, path) -> None:
    """Debug dump for regression pinning: header carries seed and grid."""
    g = w.grid
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["seed", w.seed, "nx", g.nx, "nt", g.nt, "T", repr(g.T)])
        for row in w.dW:
            writer.writerow([repr(float(x)) for x in row])


def sheet_from_csv(path) -> NoiseSheet:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    head = rows[0]
    seed = int(head[1])
    g = Grid(nx=int(head[3]), nt=int(head[5]), T=float(head[7]))
    dW = np.array([[float(x) for x in r] for r in rows[1:]])
    return NoiseSheet(dW=dW, seed=seed, grid=g)
