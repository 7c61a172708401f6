"""
Rough path lifts over a time grid: Ito and Stratonovich lifts of Brownian
paths, canonical lifts of smooth paths, brackets, and the joint lift of a
rough path with a martingale.
"""
from __future__ import annotations
from dataclasses import dataclass
from typing import Any, Callable, Dict, Literal, Optional, Sequence
import logging

import numpy as np

from .errors import ShapeError
from .grid import GridPath, TimeGrid, TwoParamGrid, check_same_grid, second_delta
from .noise import SeedLike, refine_path

logger = logging.getLogger(__name__)

# Default Hoelder exponent, interior of (1/3, 1/2)
DEFAULT_ALPHA = 0.4

# Default internal refinement for Levy areas
DEFAULT_REFINE = 16

# Version of the area index convention: area[i, j] ~ int dX^i dX^j
_CONVENTION_VERSION = 1

LiftKind = Literal["ito", "stratonovich", "canonical", "joint", "custom"]


@dataclass(frozen=True, eq=False)
class RoughPath:
    """
    A path X with second-level blocks area_k ~ int_{t_k}^{t_{k+1}} dX (x) dX.

    Attributes:
        base: The path X, vector valued.
        area: Second level, a TwoParamGrid with Chen rule chen(X, X).
        alpha: Hoelder exponent in (1/3, 1/2].
        kind: How the lift was built; stratonovich and canonical lifts are geometric.
    """
    base: GridPath
    area: TwoParamGrid
    alpha: float = DEFAULT_ALPHA
    kind: str = "custom"

    def __post_init__(self):
        if not 1.0 / 3.0 < self.alpha <= 0.5:
            raise ValueError(f"alpha must lie in (1/3, 1/2], got {self.alpha}")
        check_same_grid(self.base, self.area)
        if len(self.base.shape) != 1:
            raise ShapeError(f"rough path base must be vector valued, got shape {self.base.shape}")
        d = self.base.shape[0]
        if self.area.shape != (d, d):
            raise ShapeError(f"area blocks must have shape {(d, d)}, got {self.area.shape}")

    @property
    def grid(self) -> TimeGrid:
        return self.base.grid

    @property
    def dim(self) -> int:
        return self.base.shape[0]

    @property
    def increments(self) -> np.ndarray:
        return self.base.increments

    @property
    def blocks(self) -> np.ndarray:
        return self.area.consecutive

    @property
    def geometric(self) -> bool:
        return self.kind in ("stratonovich", "canonical")

    def coarsen(self, factor: int) -> "RoughPath":
        if factor == 1:
            return self
        return RoughPath(self.base.subsample(factor), self.area.coarsen(factor), self.alpha, self.kind)

    def stopped(self, stop_idx: int) -> "RoughPath":
        """Rough path frozen at stop_idx."""
        return RoughPath(self.base.stopped(stop_idx), self.area.stopped(stop_idx), self.alpha, self.kind)

    def with_alpha(self, alpha: float) -> "RoughPath":
        return RoughPath(self.base, self.area, alpha, self.kind)


@dataclass(frozen=True, eq=False)
class BracketPath:
    """
    A symmetric (d, d)-valued path starting at zero: [X] or <M>.

    Attributes:
        path: Node values.
        lipschitz: True when the bracket is known to be Lipschitz (analytic
            brackets); realized brackets are estimates and carry False.
    """
    path: GridPath
    lipschitz: bool = False

    def __post_init__(self):
        vals = self.path.values
        if vals.ndim != 3 or vals.shape[1] != vals.shape[2]:
            raise ShapeError(f"bracket must be (d, d)-valued, got shape {self.path.shape}")
        if np.max(np.abs(vals[0])) > 0.0:
            raise ValueError("bracket must start at zero")
        scale = max(1.0, float(np.max(np.abs(vals))))
        if np.max(np.abs(vals - np.swapaxes(vals, 1, 2))) > 1e-12 * scale:
            raise ValueError("bracket must be symmetric at every node")

    @property
    def grid(self) -> TimeGrid:
        return self.path.grid

    @property
    def values(self) -> np.ndarray:
        return self.path.values

    @property
    def increments(self) -> np.ndarray:
        return self.path.increments

    def rate(self) -> GridPath:
        """Forward difference quotients; the last node repeats the last interval."""
        q = self.path.increments / self.grid.dt
        return GridPath(self.grid, np.concatenate([q, q[-1:]], axis=0))

    @property
    def lipschitz_constant(self) -> float:
        norms = np.sqrt(np.sum(self.rate().values.reshape(len(self.path), -1) ** 2, axis=1))
        return float(norms.max())

    @staticmethod
    def zeros(grid: TimeGrid, dim: int) -> "BracketPath":
        return BracketPath(GridPath.zeros(grid, (dim, dim)), lipschitz=True)

    @staticmethod
    def from_increments(grid: TimeGrid, increments: np.ndarray, lipschitz: bool = False) -> "BracketPath":
        inc = 0.5 * (increments + np.swapaxes(increments, 1, 2))
        return BracketPath(GridPath.from_increments(grid, inc), lipschitz=lipschitz)


@dataclass(frozen=True, eq=False)
class MartingaleSample:
    """
    A sampled martingale with its bracket.

    Attributes:
        path: M on the grid; any tensor shape, the bracket refers to the flattened entries.
        bracket: <M>, analytic when available, realized covariation otherwise.
    """
    path: GridPath
    bracket: BracketPath

    def __post_init__(self):
        check_same_grid(self.path, self.bracket)
        k = int(np.prod(self.path.shape))
        if self.bracket.values.shape[1:] != (k, k):
            raise ShapeError(f"bracket of a {self.path.shape} martingale must be ({k}, {k})")

    @property
    def grid(self) -> TimeGrid:
        return self.path.grid

    @property
    def shape(self):
        return self.path.shape

    @property
    def values(self) -> np.ndarray:
        return self.path.values

    def stopped(self, stop_idx: int) -> "MartingaleSample":
        return MartingaleSample(self.path.stopped(stop_idx),
                                BracketPath(self.bracket.path.stopped(stop_idx), self.bracket.lipschitz))

    @staticmethod
    def zeros(grid: TimeGrid, shape) -> "MartingaleSample":
        path = GridPath.zeros(grid, tuple(shape))
        return MartingaleSample(path, BracketPath.zeros(grid, int(np.prod(shape))))


def _flat(values: np.ndarray) -> np.ndarray:
    return values.reshape(values.shape[0], -1)


def realized_bracket(path: GridPath) -> BracketPath:
    """Realized covariation sum of dM (x) dM of the flattened entries."""
    inc = _flat(path.increments)
    return BracketPath.from_increments(path.grid, inc[:, :, None] * inc[:, None, :])


def realized_martingale(path: GridPath) -> MartingaleSample:
    return MartingaleSample(path, realized_bracket(path))


def _fine_blocks(fine: GridPath, kind: str) -> np.ndarray:
    inc = fine.increments
    if kind == "ito":
        return np.zeros(inc.shape + inc.shape[1:])
    if kind in ("stratonovich", "canonical"):
        return 0.5 * inc[:, :, None] * inc[:, None, :]
    raise ValueError(f"unknown lift kind '{kind}'")


def lift_from_fine(fine: GridPath, kind: str, alpha: float = DEFAULT_ALPHA) -> RoughPath:
    """
    Lift a finely sampled path: per fine step the Ito area is zero (left
    point) and the Stratonovich/canonical area is half the squared
    increment (trapezoid). Coarsen the result to the working grid.
    """
    area = TwoParamGrid(fine.grid, _fine_blocks(fine, kind), fine, fine)
    return RoughPath(fine, area, alpha, kind)


def ito_lift(W: GridPath, refine: int = DEFAULT_REFINE, seed: SeedLike = None,
             alpha: float = DEFAULT_ALPHA) -> RoughPath:
    """
    Ito lift of a Brownian path.

    Args:
        W: Brownian path on the working grid.
        refine: Internal refinement (power of two); the refinement is drawn
            by bridge midpoints, so W's nodes are kept.
        seed: Noise for the bridge points.
        alpha: Hoelder exponent carried by the lift.
    """
    fine = refine_path(W, refine, seed)
    return lift_from_fine(fine, "ito", alpha).coarsen(refine)


def stratonovich_lift(W: GridPath, refine: int = DEFAULT_REFINE, seed: SeedLike = None,
                      alpha: float = DEFAULT_ALPHA) -> RoughPath:
    """Stratonovich lift; in one dimension the area is exactly dW**2 / 2."""
    fine = refine_path(W, refine, seed)
    return lift_from_fine(fine, "stratonovich", alpha).coarsen(refine)


def canonical_lift(path_fn: Callable[[np.ndarray], np.ndarray], grid: TimeGrid,
                   refine: int = DEFAULT_REFINE, alpha: float = DEFAULT_ALPHA) -> RoughPath:
    """
    Canonical lift of a smooth path given as a function of time.

    Args:
        path_fn: Maps an array of times (n,) to values (n, d).
        grid: Working grid.
        refine: Quadrature refinement of the iterated integrals.
    """
    fine_grid = grid.refine(refine)
    values = np.asarray(path_fn(fine_grid.times), dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    fine = GridPath(fine_grid, values)
    return lift_from_fine(fine, "canonical", alpha).coarsen(refine)


def smooth_driver(amplitudes: Sequence[float], frequencies: Sequence[float],
                  phases: Optional[Sequence[float]] = None) -> Callable[[np.ndarray], np.ndarray]:
    """
    Deterministic driver X^i(t) = a_i (sin(w_i t + p_i) - sin(p_i)).

    Returns:
        A function of an array of times, for canonical_lift.
    """
    a = np.asarray(amplitudes, dtype=np.float64)
    w = np.asarray(frequencies, dtype=np.float64)
    p = np.zeros_like(a) if phases is None else np.asarray(phases, dtype=np.float64)
    if not a.shape == w.shape == p.shape:
        raise ShapeError("amplitudes, frequencies and phases must have equal length")

    def path_fn(t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)[:, None]
        return a * (np.sin(w * t + p) - np.sin(p))

    return path_fn


def bracket(r: RoughPath) -> BracketPath:
    """[X]_{0,t} = sum over intervals of dX (x) dX - 2 Sym(area)."""
    inc = r.increments
    blocks = r.blocks
    per_step = inc[:, :, None] * inc[:, None, :] - (blocks + np.swapaxes(blocks, 1, 2))
    return BracketPath.from_increments(r.grid, per_step, lipschitz=(r.kind in ("stratonovich", "canonical")))


def ito_integral(phi: GridPath, M: GridPath) -> GridPath:
    """
    Left-point sums I_k = sum_{m<k} phi_m . dM_m.

    Args:
        phi: Operator-valued integrand, shape (*out, dM).
        M: Integrator, shape (dM,) (tensor shapes are flattened).
    """
    check_same_grid(phi, M)
    dM = _flat(M.increments)
    if phi.shape[-1] != dM.shape[1]:
        raise ShapeError(f"integrand shape {phi.shape} does not act on integrator of size {dM.shape[1]}")
    steps = np.einsum("n...m,nm->n...", phi.values[:-1], dM)
    return GridPath.from_increments(phi.grid, steps)


def _swap_factors(blocks: np.ndarray, first: tuple, second: tuple) -> np.ndarray:
    """(a (x) b)^T = b (x) a for blocks of shape (n, *first, *second)."""
    n = blocks.shape[0]
    flat = blocks.reshape(n, int(np.prod(first)), int(np.prod(second)))
    return np.swapaxes(flat, 1, 2).reshape((n,) + tuple(second) + tuple(first))


def ibp_integrals(M: GridPath, X: GridPath):
    """
    The pair (Pi(M;X), Pi(X;M)).

    Pi(X;M) = int dX_{s,r} (x) dM_r is an Ito integral, zero on each
    consecutive block of the working grid; Pi(M;X) := dM (x) dX - Pi(X;M)^T.
    """
    check_same_grid(M, X)
    dM = M.increments.reshape(M.n_steps, -1)
    dX = X.increments.reshape(X.n_steps, -1)
    pi_xm_blocks = np.zeros((X.n_steps,) + X.shape + M.shape)
    outer = (dM[:, :, None] * dX[:, None, :]).reshape((M.n_steps,) + M.shape + X.shape)
    pi_mx_blocks = outer - _swap_factors(pi_xm_blocks, X.shape, M.shape)
    pi_mx = TwoParamGrid(M.grid, pi_mx_blocks, M, X)
    pi_xm = TwoParamGrid(X.grid, pi_xm_blocks, X, M)
    return pi_mx, pi_xm


def ibp_integral(M: GridPath, X: GridPath) -> TwoParamGrid:
    """Pi(M;X)_{s,t} := dM_{s,t} (x) dX_{s,t} - Pi(X;M)_{s,t}^T."""
    return ibp_integrals(M, X)[0]


def joint_lift(rX: RoughPath, M: MartingaleSample) -> RoughPath:
    """
    Rough path over the direct sum (X; M) with blocks
    [[area_X, Pi(X;M)], [Pi(M;X), area_M]].

    The martingale's entries are flattened; area_M is its Ito area.
    """
    check_same_grid(rX, M)
    Mv = GridPath(M.grid, _flat(M.values))
    d, m = rX.dim, Mv.shape[0]
    pi_mx, pi_xm = ibp_integrals(Mv, rX.base)
    area_m = np.zeros((Mv.n_steps, m, m))
    blocks = np.zeros((rX.grid.n_steps, d + m, d + m))
    blocks[:, :d, :d] = rX.blocks
    blocks[:, :d, d:] = pi_xm.consecutive
    blocks[:, d:, :d] = pi_mx.consecutive
    blocks[:, d:, d:] = area_m
    base = GridPath(rX.grid, np.concatenate([rX.base.values, Mv.values], axis=1))
    return RoughPath(base, TwoParamGrid(rX.grid, blocks, base, base), rX.alpha, "joint")


def stack_martingales(Ms: Sequence[MartingaleSample]) -> MartingaleSample:
    """Stack flattened martingales into one; the joint bracket is realized."""
    grid = check_same_grid(*Ms)
    values = np.concatenate([_flat(m.values) for m in Ms], axis=1)
    return realized_martingale(GridPath(grid, values))


def multi_joint_lift(rX: RoughPath, Ms: Sequence[MartingaleSample]) -> RoughPath:
    """(X; M; N; ...) as the joint lift with the stacked martingale."""
    if not Ms:
        return rX
    if len(Ms) == 1:
        return joint_lift(rX, Ms[0])
    return joint_lift(rX, stack_martingales(Ms))


def chen_defect(r: RoughPath, subsample: int = 9) -> float:
    """
    max over evenly spaced triples s < u < t of
    |A_{s,t} - A_{s,u} - A_{u,t} - dX_{s,u} (x) dX_{u,t}|,
    using whatever reconstruction rule the stored area declares.
    """
    if subsample < 3:
        raise ValueError(f"chen_defect needs at least 3 nodes, got {subsample}")
    nodes = np.unique(np.linspace(0, r.grid.n_steps, min(subsample, r.grid.n_steps + 1)).round().astype(int))
    X = r.base.values
    worst = 0.0
    for a, s in enumerate(nodes):
        for b in range(a + 1, len(nodes)):
            u = nodes[b]
            for t in nodes[b + 1:]:
                expected = np.multiply.outer(X[u] - X[s], X[t] - X[u])
                err = second_delta(r.area, int(s), int(u), int(t)) - expected
                worst = max(worst, float(np.sqrt(np.sum(err ** 2))))
    return worst


def lift_manifest(r: RoughPath, seed: Optional[int] = None, refine: int = DEFAULT_REFINE) -> Dict[str, Any]:
    """JSON-serializable record of how a lift was produced."""
    return {
        "kind": r.kind,
        "seed": seed,
        "refine": refine,
        "alpha": r.alpha,
        "dim": r.dim,
        "grid": r.grid.to_dict(),
        "convention": {"version": _CONVENTION_VERSION, "area_index": "area[i, j] ~ int dX^i dX^j"},
    }
