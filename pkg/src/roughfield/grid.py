"""
Time grids, paths sampled on them and two-parameter processes, with the
increment, Hoelder and two-parameter seminorm helpers used by the lifts.
"""
from __future__ import annotations
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union
import json
import warnings

import numpy as np

from .errors import GridMismatchError, ShapeError

# Schema version for the JSON headers written next to CSV tables
_SCHEMA_VERSION = 1

PathLike = Union[str, Path]


def _check_version(data: Dict[str, Any], what: str) -> None:
    version = data.get("version", 1)
    if version > _SCHEMA_VERSION:
        warnings.warn(
            f"{what} schema version {version} is newer than supported version {_SCHEMA_VERSION}. "
            "Some fields may not load correctly.",
            UserWarning
        )


def _require(data: Dict[str, Any], required: list, what: str) -> None:
    missing = [k for k in required if k not in data]
    if missing:
        raise ValueError(f"{what} missing required fields: {missing}")


@dataclass(frozen=True)
class TimeGrid:
    """
    Uniform time mesh t_k = t0 + k*(T - t0)/n_steps, k = 0..n_steps.

    All operations index by node, never by raw time.
    """
    T: float
    n_steps: int
    t0: float = 0.0

    def __post_init__(self):
        if int(self.n_steps) != self.n_steps or self.n_steps < 2:
            raise ValueError(f"TimeGrid needs an integer n_steps >= 2, got {self.n_steps}")
        if not self.T > self.t0:
            raise ValueError(f"TimeGrid needs T > t0, got T={self.T}, t0={self.t0}")
        object.__setattr__(self, "n_steps", int(self.n_steps))
        object.__setattr__(self, "T", float(self.T))
        object.__setattr__(self, "t0", float(self.t0))

    @property
    def dt(self) -> float:
        return (self.T - self.t0) / self.n_steps

    @cached_property
    def times(self) -> np.ndarray:
        t = self.t0 + self.dt * np.arange(self.n_steps + 1)
        t[-1] = self.T
        return t

    def check_index(self, k: int) -> int:
        if not 0 <= k <= self.n_steps:
            raise IndexError(f"grid index {k} outside [0, {self.n_steps}]")
        return int(k)

    def refine(self, factor: int) -> "TimeGrid":
        """Grid with `factor` times as many steps over the same interval."""
        if factor < 1:
            raise ValueError(f"refine factor must be >= 1, got {factor}")
        return TimeGrid(T=self.T, n_steps=self.n_steps * factor, t0=self.t0)

    def coarsen(self, factor: int) -> "TimeGrid":
        if factor < 1 or self.n_steps % factor:
            raise ValueError(f"cannot coarsen {self.n_steps} steps by factor {factor}")
        return TimeGrid(T=self.T, n_steps=self.n_steps // factor, t0=self.t0)

    def to_dict(self) -> Dict[str, Any]:
        return {"t0": self.t0, "T": self.T, "n_steps": self.n_steps}

    @staticmethod
    def from_dict(data: Dict[str, Any]) -> "TimeGrid":
        """Create TimeGrid from dictionary. Validates required fields."""
        _require(data, ["T", "n_steps"], "TimeGrid")
        return TimeGrid(T=data["T"], n_steps=data["n_steps"], t0=data.get("t0", 0.0))


def dyadic_grid(level: int, T: float = 1.0) -> TimeGrid:
    """Grid with 2**level steps on [0, T]."""
    return TimeGrid(T=T, n_steps=2 ** level)


def check_same_grid(*objects) -> TimeGrid:
    """Return the common grid of the given objects, raising on mismatch."""
    grids = [o if isinstance(o, TimeGrid) else o.grid for o in objects if o is not None]
    first = grids[0]
    for g in grids[1:]:
        if g != first:
            raise GridMismatchError(f"grid mismatch: {first} vs {g}")
    return first


@dataclass(frozen=True, eq=False)
class GridPath:
    """
    A tensor-valued path sampled at every node of a TimeGrid.

    Attributes:
        grid: The time grid.
        values: Array of shape (n_steps + 1, *shape), read-only after construction.
    """
    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64)
        if vals.ndim == 1:
            vals = vals[:, None]
        if vals.shape[0] != self.grid.n_steps + 1:
            raise ShapeError(
                f"GridPath needs {self.grid.n_steps + 1} values, got {vals.shape[0]}"
            )
        if not np.all(np.isfinite(vals)):
            bad = int(np.argmax(~np.isfinite(vals.reshape(vals.shape[0], -1)).any(axis=1)))
            raise ValueError(f"GridPath has non-finite values at node {bad}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.values.shape[1:]

    @property
    def n_steps(self) -> int:
        return self.grid.n_steps

    def __getitem__(self, k: int) -> np.ndarray:
        return self.values[k]

    def __len__(self) -> int:
        return self.values.shape[0]

    @cached_property
    def increments(self) -> np.ndarray:
        """Consecutive increments, shape (n_steps, *shape)."""
        return np.diff(self.values, axis=0)

    def increment(self, i: int, j: int) -> np.ndarray:
        return increment(self, i, j)

    def pair(self, i: int, j: int) -> np.ndarray:
        """Two-parameter view used by scaling diagnostics: the increment."""
        return increment(self, i, j)

    def subsample(self, factor: int) -> "GridPath":
        """Keep every factor-th node."""
        return GridPath(self.grid.coarsen(factor), self.values[::factor])

    def stopped(self, stop_idx: int) -> "GridPath":
        """Path frozen at its value at stop_idx from that node on."""
        k = self.grid.check_index(stop_idx)
        vals = self.values.copy()
        vals[k:] = vals[k]
        return GridPath(self.grid, vals)

    def map(self, fn) -> "GridPath":
        return GridPath(self.grid, fn(self.values))

    def __add__(self, other: "GridPath") -> "GridPath":
        check_same_grid(self, other)
        return GridPath(self.grid, self.values + other.values)

    def __sub__(self, other: "GridPath") -> "GridPath":
        check_same_grid(self, other)
        return GridPath(self.grid, self.values - other.values)

    def __neg__(self) -> "GridPath":
        return GridPath(self.grid, -self.values)

    @staticmethod
    def zeros(grid: TimeGrid, shape: Tuple[int, ...]) -> "GridPath":
        return GridPath(grid, np.zeros((grid.n_steps + 1,) + tuple(shape)))

    @staticmethod
    def from_increments(grid: TimeGrid, increments: np.ndarray, start=None) -> "GridPath":
        """Cumulative left-to-right sum of consecutive increments."""
        inc = np.asarray(increments, dtype=np.float64)
        vals = np.zeros((grid.n_steps + 1,) + inc.shape[1:])
        vals[1:] = np.cumsum(inc, axis=0)
        if start is not None:
            vals += np.asarray(start, dtype=np.float64)
        return GridPath(grid, vals)

    def header(self) -> Dict[str, Any]:
        return {"version": _SCHEMA_VERSION, "kind": "grid_path",
                "grid": self.grid.to_dict(), "shape": list(self.shape)}

    def save(self, stem: PathLike) -> None:
        """Write `stem.csv` (one row per node, row-major entries) and `stem.json`."""
        stem = Path(stem)
        table = np.column_stack([self.grid.times, self.values.reshape(len(self), -1)])
        cols = ["t"] + [f"v{i}" for i in range(table.shape[1] - 1)]
        np.savetxt(stem.with_suffix(".csv"), table, delimiter=",", header=",".join(cols),
                   comments="", fmt="%.17g")
        with open(stem.with_suffix(".json"), "w") as f:
            json.dump(self.header(), f, indent=2)

    @staticmethod
    def load(stem: PathLike) -> "GridPath":
        stem = Path(stem)
        with open(stem.with_suffix(".json"), "r") as f:
            header = json.load(f)
        _require(header, ["grid", "shape"], "GridPath header")
        _check_version(header, "GridPath")
        grid = TimeGrid.from_dict(header["grid"])
        table = np.loadtxt(stem.with_suffix(".csv"), delimiter=",", skiprows=1, ndmin=2)
        values = table[:, 1:].reshape((table.shape[0],) + tuple(header["shape"]))
        return GridPath(grid, values)


@dataclass(frozen=True, eq=False)
class TwoParamGrid:
    """
    Two-parameter object A_{s,t} stored by its consecutive blocks.

    General pairs are reconstructed by the declared rule: additive
    (A_{s,t} = sum of blocks) or chen(left, right), where
    A_{s,t} - A_{s,u} - A_{u,t} = (L_u - L_s) (x) (R_t - R_u).

    Attributes:
        grid: The time grid.
        consecutive: Blocks A_{t_k, t_{k+1}}, shape (n_steps, *shape).
        left: Left path of the Chen rule, None for additive objects.
        right: Right path of the Chen rule, None for additive objects.
    """
    grid: TimeGrid
    consecutive: np.ndarray
    left: Optional[GridPath] = None
    right: Optional[GridPath] = None

    def __post_init__(self):
        blocks = np.array(self.consecutive, dtype=np.float64)
        if blocks.shape[0] != self.grid.n_steps:
            raise ShapeError(f"TwoParamGrid needs {self.grid.n_steps} blocks, got {blocks.shape[0]}")
        if (self.left is None) != (self.right is None):
            raise ValueError("chen rule needs both left and right paths")
        if self.left is not None:
            check_same_grid(self.grid, self.left, self.right)
            expected = self.left.shape + self.right.shape
            if blocks.shape[1:] != expected:
                raise ShapeError(f"chen blocks must have shape {expected}, got {blocks.shape[1:]}")
        if not np.all(np.isfinite(blocks)):
            raise ValueError("TwoParamGrid has non-finite blocks")
        blocks.setflags(write=False)
        object.__setattr__(self, "consecutive", blocks)

    @property
    def rule(self) -> str:
        return "additive" if self.left is None else "chen"

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.consecutive.shape[1:]

    @cached_property
    def _prefix(self) -> np.ndarray:
        # S_j = sum_{k<j} (a_k + L_k (x) dR_k); A_{i,j} = S_j - S_i - L_i (x) (R_j - R_i)
        terms = self.consecutive
        if self.left is not None:
            terms = terms + _outer(self.left.values[:-1], self.right.increments)
        prefix = np.zeros((self.grid.n_steps + 1,) + self.shape)
        prefix[1:] = np.cumsum(terms, axis=0)
        return prefix

    def value(self, i: int, j: int) -> np.ndarray:
        """A_{t_i, t_j} for i <= j."""
        self.grid.check_index(i)
        self.grid.check_index(j)
        if i > j:
            raise ValueError(f"TwoParamGrid.value needs i <= j, got ({i}, {j})")
        if j == i + 1:
            return self.consecutive[i].copy()
        out = self._prefix[j] - self._prefix[i]
        if self.left is not None:
            out = out - np.multiply.outer(self.left.values[i], self.right.values[j] - self.right.values[i])
        return out

    def pair(self, i: int, j: int) -> np.ndarray:
        return self.value(i, j)

    def values_from(self, i: int) -> np.ndarray:
        """A_{t_i, t_j} for all j >= i, shape (n_steps + 1 - i, *shape)."""
        out = self._prefix[i:] - self._prefix[i]
        if self.left is not None:
            out = out - _outer(np.broadcast_to(self.left.values[i], (out.shape[0],) + self.left.shape),
                               self.right.values[i:] - self.right.values[i])
        return out

    def gap_values(self, gap: int) -> np.ndarray:
        """A_{t_i, t_{i+gap}} for every admissible i."""
        out = self._prefix[gap:] - self._prefix[:-gap]
        if self.left is not None:
            out = out - _outer(self.left.values[:-gap], self.right.values[gap:] - self.right.values[:-gap])
        return out

    def coarsen(self, factor: int) -> "TwoParamGrid":
        """Aggregate blocks of `factor` consecutive intervals by the declared rule."""
        grid = self.grid.coarsen(factor)
        blocks = self.gap_values(factor)[::factor]
        if self.left is None:
            return TwoParamGrid(grid, blocks)
        return TwoParamGrid(grid, blocks, self.left.subsample(factor), self.right.subsample(factor))

    def stopped(self, stop_idx: int) -> "TwoParamGrid":
        """Blocks after stop_idx set to zero; Chen paths frozen."""
        k = self.grid.check_index(stop_idx)
        blocks = self.consecutive.copy()
        blocks[k:] = 0.0
        if self.left is None:
            return TwoParamGrid(self.grid, blocks)
        return TwoParamGrid(self.grid, blocks, self.left.stopped(k), self.right.stopped(k))

    def header(self) -> Dict[str, Any]:
        return {"version": _SCHEMA_VERSION, "kind": "two_param_grid", "rule": self.rule,
                "grid": self.grid.to_dict(), "shape": list(self.shape)}

    def save(self, stem: PathLike) -> None:
        """Write `stem.csv` (one row per consecutive interval) and `stem.json`; Chen paths alongside."""
        stem = Path(stem)
        t = self.grid.times
        table = np.column_stack([t[:-1], t[1:], self.consecutive.reshape(self.grid.n_steps, -1)])
        cols = ["t_start", "t_end"] + [f"a{i}" for i in range(table.shape[1] - 2)]
        np.savetxt(stem.with_suffix(".csv"), table, delimiter=",", header=",".join(cols),
                   comments="", fmt="%.17g")
        header = self.header()
        if self.left is not None:
            left_stem = stem.with_name(stem.name + "_left")
            right_stem = stem.with_name(stem.name + "_right")
            self.left.save(left_stem)
            self.right.save(right_stem)
            header["left"] = left_stem.name
            header["right"] = right_stem.name
        with open(stem.with_suffix(".json"), "w") as f:
            json.dump(header, f, indent=2)

    @staticmethod
    def load(stem: PathLike) -> "TwoParamGrid":
        stem = Path(stem)
        with open(stem.with_suffix(".json"), "r") as f:
            header = json.load(f)
        _require(header, ["grid", "shape", "rule"], "TwoParamGrid header")
        _check_version(header, "TwoParamGrid")
        grid = TimeGrid.from_dict(header["grid"])
        table = np.loadtxt(stem.with_suffix(".csv"), delimiter=",", skiprows=1, ndmin=2)
        blocks = table[:, 2:].reshape((table.shape[0],) + tuple(header["shape"]))
        if header["rule"] == "additive":
            return TwoParamGrid(grid, blocks)
        left = GridPath.load(stem.with_name(header["left"]))
        right = GridPath.load(stem.with_name(header["right"]))
        return TwoParamGrid(grid, blocks, left, right)


def _outer(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Tensor product taken row by row over the shared leading axis."""
    lead = a.shape[0]
    return (a.reshape(lead, -1, 1) * b.reshape(lead, 1, -1)).reshape((lead,) + a.shape[1:] + b.shape[1:])


def increment(p: GridPath, i: int, j: int) -> np.ndarray:
    """
    delta p_{i,j} = p_j - p_i.

    Args:
        p: The path.
        i: Start node.
        j: End node, j > i.
    """
    p.grid.check_index(i)
    p.grid.check_index(j)
    if i >= j:
        raise ValueError(f"increment needs i < j, got ({i}, {j})")
    return p.values[j] - p.values[i]


def second_delta(A: TwoParamGrid, i: int, k: int, j: int) -> np.ndarray:
    """delta A_{i,k,j} = A_{i,j} - A_{i,k} - A_{k,j} for i < k < j."""
    if not i < k < j:
        raise ValueError(f"second_delta needs i < k < j, got ({i}, {k}, {j})")
    return A.value(i, j) - A.value(i, k) - A.value(k, j)


def _frobenius(block: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(block.reshape(block.shape[0], -1) ** 2, axis=1))


def holder_seminorm(p: GridPath, alpha: float, min_gap: int = 1) -> float:
    """
    Grid estimate of the alpha-Hoelder seminorm: sup over pairs with
    j - i >= min_gap of |delta p_{i,j}| / (t_j - t_i)^alpha (Frobenius norm).

    A lower bound of the continuum seminorm.
    """
    if min_gap < 1:
        raise ValueError(f"min_gap must be >= 1, got {min_gap}")
    vals = p.values
    best = 0.0
    for gap in range(min_gap, p.n_steps + 1):
        norms = _frobenius(vals[gap:] - vals[:-gap])
        best = max(best, float(norms.max()) / (gap * p.grid.dt) ** alpha)
    return best


def two_param_seminorm(A: TwoParamGrid, beta: float, min_gap: int = 1) -> float:
    """Grid estimate of sup |A_{s,t}| / |t - s|^beta over pairs with j - i >= min_gap."""
    if min_gap < 1:
        raise ValueError(f"min_gap must be >= 1, got {min_gap}")
    best = 0.0
    for gap in range(min_gap, A.grid.n_steps + 1):
        norms = _frobenius(A.gap_values(gap))
        best = max(best, float(norms.max()) / (gap * A.grid.dt) ** beta)
    return best


def anisotropic_distance(dt: float, dx: float, alpha: float) -> float:
    """|t; x|_s = max(dt^alpha, dx)."""
    if dt < 0 or dx < 0:
        raise ValueError(f"anisotropic_distance needs dt, dx >= 0, got ({dt}, {dx})")
    return max(dt ** alpha, dx)
