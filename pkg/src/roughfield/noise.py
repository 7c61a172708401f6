"""
Brownian sampling with reproducible per-replica streams and coupled dyadic
meshes built by Brownian-bridge midpoint refinement.
"""
from __future__ import annotations
from dataclasses import dataclass, field
from typing import Union
import logging

import numpy as np

from .grid import GridPath, TimeGrid, dyadic_grid

logger = logging.getLogger(__name__)

SeedLike = Union[int, np.random.Generator, None]


def replica_rng(seed: int, replica: int, stream: int = 0) -> np.random.Generator:
    """
    Generator for (master seed, replica index, stream id).

    The stream id separates independent noise sources inside one replica.
    """
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(int(replica), int(stream))))


def as_generator(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def sample_brownian(grid: TimeGrid, dim: int, seed: SeedLike = None) -> GridPath:
    """
    Brownian path on the grid: W_0 = 0, increments i.i.d. N(0, dt*Id).

    Args:
        grid: Time grid.
        dim: Number of independent components.
        seed: Integer seed or an existing Generator.
    """
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    rng = as_generator(seed)
    inc = rng.standard_normal((grid.n_steps, dim)) * np.sqrt(grid.dt)
    return GridPath.from_increments(grid, inc)


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def bridge_midpoints(values: np.ndarray, dt: float, rng: np.random.Generator) -> np.ndarray:
    """
    Insert Brownian-bridge midpoints between consecutive nodes.

    Args:
        values: Node values, shape (n + 1, d).
        dt: Current step size.
        rng: Noise source for the midpoints.

    Returns:
        Values on the halved grid, shape (2n + 1, d).
    """
    n = values.shape[0] - 1
    out = np.empty((2 * n + 1,) + values.shape[1:])
    out[::2] = values
    mean = 0.5 * (values[:-1] + values[1:])
    out[1::2] = mean + np.sqrt(dt / 4.0) * rng.standard_normal(mean.shape)
    return out


def refine_path(W: GridPath, factor: int, seed: SeedLike = None) -> GridPath:
    """
    Refine a Brownian path by `factor` (a power of two) with bridge midpoints.

    Nodes of W are kept exactly; only new nodes are sampled.
    """
    if not _is_power_of_two(factor):
        raise ValueError(f"refine factor must be a power of two, got {factor}")
    if factor == 1:
        return W
    rng = as_generator(seed)
    values = W.values
    dt = W.grid.dt
    while values.shape[0] - 1 < W.n_steps * factor:
        values = bridge_midpoints(values, dt, rng)
        dt /= 2.0
    return GridPath(W.grid.refine(factor), values)


@dataclass
class CoupledBrownian:
    """
    One Brownian sample shared by every dyadic level up to `finest_level`.

    The path is drawn on 2**coarse_level steps and refined by midpoint
    bridges, `refine` extra factor included, so that coarser levels are
    exact subsamples of finer ones.

    Attributes:
        dim: Number of components.
        finest_level: Finest working level (2**finest_level steps).
        rng: Noise source, consumed at construction.
        T: Horizon.
        refine: Internal refinement factor below the finest level (power of two).
        coarse_level: Level at which the path is first sampled.
    """
    dim: int
    finest_level: int
    rng: np.random.Generator
    T: float = 1.0
    refine: int = 16
    coarse_level: int = 1
    fine: GridPath = field(init=False)
    _lifts: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        if not _is_power_of_two(self.refine):
            raise ValueError(f"refine factor must be a power of two, got {self.refine}")
        if self.coarse_level > self.finest_level:
            self.coarse_level = self.finest_level
        coarse = sample_brownian(dyadic_grid(self.coarse_level, self.T), self.dim, self.rng)
        factor = 2 ** (self.finest_level - self.coarse_level) * self.refine
        self.fine = refine_path(coarse, factor, self.rng)
        logger.debug("coupled Brownian: %d fine steps, dim %d", self.fine.n_steps, self.dim)

    def _factor(self, level: int) -> int:
        if level > self.finest_level:
            raise ValueError(f"level {level} finer than finest level {self.finest_level}")
        return 2 ** (self.finest_level - level) * self.refine

    def path(self, level: int) -> GridPath:
        """Working-grid path at the given dyadic level."""
        return self.fine.subsample(self._factor(level))

    def lift(self, level: int, kind: str = "ito", alpha: float = 0.4):
        """Ito or Stratonovich lift at the given level, areas from the internal refinement."""
        from .lift import lift_from_fine
        key = (kind, alpha)
        if key not in self._lifts:
            self._lifts[key] = lift_from_fine(self.fine, kind, alpha)
        return self._lifts[key].coarsen(self._factor(level))
