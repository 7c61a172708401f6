"""
Rate fitting and moment-scaling diagnostics.

`kolmogorov_scaling_fit` estimates how the L^(q/level) norm of a
one- or two-parameter object scales over dyadic pairs; it is a scaling
diagnostic, not a proof of continuity of a modification.
"""
from __future__ import annotations
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union
import json
import logging
import subprocess

import numpy as np
from scipy.stats import linregress

from .errors import InsufficientDataError
from .grid import GridPath, TimeGrid, TwoParamGrid, dyadic_grid
from .noise import SeedLike, as_generator, sample_brownian

logger = logging.getLogger(__name__)

# Minimum number of samples for a scaling fit
MIN_SAMPLES = 100


@dataclass(frozen=True)
class RateFit:
    """
    Least-squares fit log(residual) = intercept + slope * log(mesh).

    Attributes:
        slope: Fitted order.
        intercept: Log of the fitted constant.
        r_squared: Coefficient of determination.
        n_used: Points entering the fit.
        excluded_zeros: True when zero residuals were dropped.
    """
    slope: float
    intercept: float
    r_squared: float
    n_used: int
    excluded_zeros: bool = False

    def to_dict(self) -> Dict[str, Any]:
        return {"slope": self.slope, "intercept": self.intercept, "r_squared": self.r_squared,
                "n_used": self.n_used, "excluded_zeros": self.excluded_zeros}


def convergence_rate(meshes: Sequence[float], residuals: Sequence[float], min_points: int = 3) -> RateFit:
    """
    Ordinary least squares of log residual against log mesh.

    Zero residuals are excluded and flagged.

    Raises:
        InsufficientDataError: fewer than `min_points` usable points, or all meshes equal.
    """
    h = np.asarray(meshes, dtype=np.float64)
    r = np.asarray(residuals, dtype=np.float64)
    if h.shape != r.shape:
        raise ValueError(f"meshes and residuals differ in length: {h.shape} vs {r.shape}")
    if np.any(h <= 0) or np.any(r < 0) or not np.all(np.isfinite(r)):
        raise InsufficientDataError("meshes must be positive and residuals finite and nonnegative")
    keep = r > 0
    excluded = bool(np.any(~keep))
    if excluded:
        logger.warning("convergence_rate: excluding %d zero residuals", int(np.sum(~keep)))
    if int(np.sum(keep)) < min_points:
        raise InsufficientDataError(f"need at least {min_points} positive residuals, got {int(np.sum(keep))}")
    x, y = np.log(h[keep]), np.log(r[keep])
    if np.ptp(x) == 0.0:
        raise InsufficientDataError("all meshes are equal")
    fit = linregress(x, y)
    return RateFit(float(fit.slope), float(fit.intercept), float(fit.rvalue ** 2), int(np.sum(keep)), excluded)


def _dyadic_blocks(sample: Any, step: int) -> np.ndarray:
    """Values of the object on consecutive pairs (j*step, (j+1)*step)."""
    if isinstance(sample, GridPath):
        v = sample.values[::step]
        return v[1:] - v[:-1]
    if hasattr(sample, "gap_values"):
        return sample.gap_values(step)[::step]
    n = sample.grid.n_steps
    return np.stack([sample.pair(i, i + step) for i in range(0, n - step + 1, step)])


def kolmogorov_scaling_fit(samples: Sequence[Any], level: int, q: float,
                           min_samples: int = MIN_SAMPLES, coarsest: int = 1,
                           finest: Optional[int] = None) -> RateFit:
    """
    Scaling exponent of an object sampled on a common dyadic grid.

    For each dyadic scale 2^-m the empirical norm
    (mean |A_{s,t}|^(q/level))^(level/q) is taken over all samples and all
    non-overlapping pairs at that scale; the slope of log norm against
    log(t - s) estimates level * beta.

    Args:
        samples: GridPath, TwoParamGrid, or any object with `grid` and
            `pair(i, j)` (and optionally vectorized `gap_values`).
        level: 1, 2 or 3.
        q: Moment order; q >= level.
        min_samples: Fewer samples raise InsufficientDataError.
        coarsest, finest: Range of scales m used in the fit. For levels 2 and 3
            the one-step scale is left out by default: a remainder or Ito
            area vanishes on a single step, so only roundoff is left there.
    """
    if level not in (1, 2, 3):
        raise ValueError(f"level must be 1, 2 or 3, got {level}")
    if q < level:
        raise ValueError(f"moment order q must be >= level, got q={q}, level={level}")
    if len(samples) < min_samples:
        raise InsufficientDataError(f"scaling fit needs at least {min_samples} samples, got {len(samples)}")
    grid: TimeGrid = samples[0].grid
    n = grid.n_steps
    top = int(np.log2(n))
    if 2 ** top != n:
        raise ValueError(f"scaling fit needs a dyadic grid, got {n} steps")
    finest = (top if level == 1 else top - 1) if finest is None else min(finest, top)
    if finest - coarsest < 2:
        raise InsufficientDataError(f"scales {coarsest}..{finest} leave fewer than three points for the fit")
    scales, norms = [], []
    p = q / level
    for m in range(coarsest, finest + 1):
        step = n // 2 ** m
        moments = []
        for sample in samples:
            blocks = _dyadic_blocks(sample, step)
            moments.append(np.sqrt(np.sum(blocks.reshape(blocks.shape[0], -1) ** 2, axis=1)) ** p)
        norms.append(float(np.mean(np.concatenate(moments))) ** (1.0 / p))
        scales.append(step * grid.dt)
        logger.debug("scale %.4g: norm %.4g", scales[-1], norms[-1])
    return convergence_rate(scales, norms)


@dataclass(frozen=True, eq=False)
class RemainderIntegral:
    """
    Pi(R; M)_{s,t} = sum_{s <= r < t} R_{s,r} dM_r with the scalar remainder
    R_{s,r} = Y_r - Y_s - Y'_s (X_r - X_s).
    """
    grid: TimeGrid
    Y: np.ndarray
    Yp: np.ndarray
    X: np.ndarray
    M: np.ndarray

    def _prefix(self, a: np.ndarray) -> np.ndarray:
        out = np.zeros_like(self.M)
        out[1:] = np.cumsum(a[:-1] * np.diff(self.M))
        return out

    def gap_values(self, gap: int) -> np.ndarray:
        S1, S2 = self._prefix(self.Y), self._prefix(self.X)
        i = np.arange(self.grid.n_steps + 1 - gap)
        j = i + gap
        dM = self.M[j] - self.M[i]
        return (S1[j] - S1[i] - self.Y[i] * dM - self.Yp[i] * (S2[j] - S2[i] - self.X[i] * dM))[:, None]

    def pair(self, i: int, j: int) -> np.ndarray:
        if not 0 <= i < j <= self.grid.n_steps:
            raise ValueError(f"pair needs 0 <= i < j <= n_steps, got ({i}, {j})")
        return self.gap_values(j - i)[i]


def iterated_remainder_samples(n_samples: int, level: int = 10, seed: SeedLike = None,
                               T: float = 1.0) -> List[RemainderIntegral]:
    """
    Samples of Pi(R; M) for Y = sin X, Y' = cos X, X and M independent
    one-dimensional Brownian motions on 2**level steps.
    """
    rng = as_generator(seed)
    grid = dyadic_grid(level, T)
    out = []
    for _ in range(n_samples):
        X = sample_brownian(grid, 1, rng).values[:, 0]
        M = sample_brownian(grid, 1, rng).values[:, 0]
        out.append(RemainderIntegral(grid, np.sin(X), np.cos(X), X, M))
    return out


def load_samples(directory: Union[str, Path]) -> List[Union[GridPath, TwoParamGrid]]:
    """Load every saved GridPath / TwoParamGrid in a directory, skipping Chen companion paths."""
    directory = Path(directory)
    headers = {}
    for path in sorted(directory.glob("*.json")):
        with open(path, "r") as f:
            headers[path.stem] = json.load(f)
    companions = {h[k] for h in headers.values() for k in ("left", "right") if k in h}
    samples: List[Union[GridPath, TwoParamGrid]] = []
    for stem, header in headers.items():
        if stem in companions:
            continue
        if header.get("kind") == "grid_path":
            samples.append(GridPath.load(directory / stem))
        elif header.get("kind") == "two_param_grid":
            samples.append(TwoParamGrid.load(directory / stem))
    return samples


def git_describe() -> str:
    """`git describe --always --dirty` of the source tree, or "unknown"."""
    try:
        result = subprocess.run(["git", "describe", "--always", "--dirty"], cwd=Path(__file__).resolve().parent,
                                capture_output=True, text=True, timeout=10, check=False)
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return result.stdout.strip() if result.returncode == 0 and result.stdout.strip() else "unknown"
