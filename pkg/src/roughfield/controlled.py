"""
Controlled and strongly controlled paths, seven-component field jets and
their composition algebra.

Tensor layout: a field with values in U, spatial argument in W and driver in
V has components

    F     (U,)          F'     (U, V)        dF     (U, W)
    F''   (U, V, V)     dF'    (U, W, V)     d2F    (U, W, W), symmetric
    Fdot  (U,)

with F''(a (x) b) stored at [:, a, b] and dF'(w (x) v) at [:, w, v].
Batched jets carry one extra leading axis.
"""
from __future__ import annotations
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, NamedTuple, Optional, Sequence, Tuple, Union
import logging

import numpy as np

from .errors import ShapeError
from .grid import GridPath, TimeGrid, check_same_grid
from .lift import RoughPath

logger = logging.getLogger(__name__)

# Default lattice points per axis for criterion sampling
DEFAULT_RESOLUTION = 21

# Residuals are grouped by the power of the scale they are divided by
_ORDER = {"F": 3, "Fp": 2, "dF": 2, "Fpp": 1, "dFp": 1, "d2F": 1, "Fdot": 1}

Box = Tuple[np.ndarray, np.ndarray]


class Jet(NamedTuple):
    """The seven components of a controlled field at one or many points."""
    F: np.ndarray
    Fp: np.ndarray
    dF: np.ndarray
    Fpp: np.ndarray
    dFp: np.ndarray
    d2F: np.ndarray
    Fdot: np.ndarray

    def at(self, i) -> "Jet":
        """Select entries of a batched jet."""
        return Jet(*(c[i] for c in self))


def _norms(a: np.ndarray) -> np.ndarray:
    """Frobenius norm of each entry along the leading axis."""
    return np.sqrt(np.sum(a.reshape(a.shape[0], -1) ** 2, axis=1))


def _swap(a: np.ndarray) -> np.ndarray:
    return np.swapaxes(a, -1, -2)


def _as_xs(xs: np.ndarray, dim: int) -> np.ndarray:
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim == 1:
        xs = xs[None, :]
    if xs.ndim != 2 or xs.shape[1] != dim:
        raise ShapeError(f"points must have shape (B, {dim}), got {xs.shape}")
    return xs


# ---------------------------------------------------------------------------
# Paths
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ControlledPath:
    """
    A path Y with Gubinelli derivative Y'.

    Attributes:
        Y: Values in W, any tensor shape.
        Yp: Values in L(V; W), shape Y.shape + (dV,).
        ref: Reference rough path; when given, the remainder seminorm is
            logged at construction.
    """
    Y: GridPath
    Yp: GridPath
    ref: Optional[RoughPath] = None

    def __post_init__(self):
        check_same_grid(self.Y, self.Yp)
        if self.Yp.shape[:-1] != self.Y.shape:
            raise ShapeError(f"Yp shape {self.Yp.shape} does not map into Y shape {self.Y.shape}")
        if self.ref is not None:
            if self.ref.dim != self.dim_driver:
                raise ShapeError(f"Yp acts on {self.dim_driver} driver components, "
                                 f"reference has {self.ref.dim}")
            logger.debug("controlled path: remainder_2 = %.4g", remainder_2(self, self.ref))

    @property
    def grid(self) -> TimeGrid:
        return self.Y.grid

    @property
    def dim_driver(self) -> int:
        return self.Yp.shape[-1]


@dataclass(frozen=True, eq=False)
class StronglyControlledPath:
    """
    A path with a third-order jet: Y, Y', Y'' in L(V (x) V; W) and the
    Lebesgue derivative Ydot.
    """
    Y: GridPath
    Yp: GridPath
    Ypp: GridPath
    Ydot: GridPath
    ref: Optional[RoughPath] = None

    def __post_init__(self):
        check_same_grid(self.Y, self.Yp, self.Ypp, self.Ydot)
        v = self.Yp.shape[-1]
        if self.Yp.shape != self.Y.shape + (v,):
            raise ShapeError(f"Yp shape {self.Yp.shape} does not match Y shape {self.Y.shape}")
        if self.Ypp.shape != self.Y.shape + (v, v):
            raise ShapeError(f"Ypp must have shape {self.Y.shape + (v, v)}, got {self.Ypp.shape}")
        if self.Ydot.shape != self.Y.shape:
            raise ShapeError(f"Ydot must have shape {self.Y.shape}, got {self.Ydot.shape}")
        if self.ref is not None:
            logger.debug("strongly controlled path: remainder_3 = %.4g", remainder_3(self, self.ref))

    @property
    def grid(self) -> TimeGrid:
        return self.Y.grid

    @property
    def dim_driver(self) -> int:
        return self.Yp.shape[-1]

    def controlled(self) -> ControlledPath:
        """(Y, Y') as a controlled path."""
        return ControlledPath(self.Y, self.Yp)

    def derivative_path(self) -> ControlledPath:
        """(Y', Y'') as a controlled path, Y''(a (x) b) read as (Y'' a)(b)."""
        return ControlledPath(self.Yp, self.Ypp.map(_swap))

    @staticmethod
    def zeros(grid: TimeGrid, dim: int, dim_driver: int) -> "StronglyControlledPath":
        return StronglyControlledPath(GridPath.zeros(grid, (dim,)),
                                      GridPath.zeros(grid, (dim, dim_driver)),
                                      GridPath.zeros(grid, (dim, dim_driver, dim_driver)),
                                      GridPath.zeros(grid, (dim,)))


def _driver(X: Union[RoughPath, GridPath]) -> GridPath:
    return X.base if isinstance(X, RoughPath) else X


def remainder_2(cp: ControlledPath, X: Union[RoughPath, GridPath], min_gap: int = 1,
                alpha: Optional[float] = None) -> float:
    """
    sup over node pairs with j - i >= min_gap of
    |dY_{i,j} - Y'_i dX_{i,j}| / (t_j - t_i)^(2 alpha).

    Args:
        cp: The controlled path.
        X: Rough path (its base is used) or plain driver path.
        min_gap: Smallest pair gap, in grid steps.
        alpha: Hoelder exponent; defaults to the rough path's.
    """
    base = _driver(X)
    if alpha is None:
        if not isinstance(X, RoughPath):
            raise ValueError("alpha is required when X is a plain path")
        alpha = X.alpha
    check_same_grid(cp.Y, base)
    if cp.Yp.shape[-1] != base.shape[0]:
        raise ShapeError(f"Yp acts on {cp.Yp.shape[-1]} components, driver has {base.shape[0]}")
    if min_gap < 1:
        raise ValueError(f"min_gap must be >= 1, got {min_gap}")
    Y, Yp, Xv = cp.Y.values, cp.Yp.values, base.values
    dt = cp.grid.dt
    best = 0.0
    for gap in range(min_gap, cp.grid.n_steps + 1):
        R = Y[gap:] - Y[:-gap] - np.einsum("n...v,nv->n...", Yp[:-gap], Xv[gap:] - Xv[:-gap])
        best = max(best, float(_norms(R).max()) / (gap * dt) ** (2 * alpha))
    return best


def remainder_3(scp: StronglyControlledPath, rX: RoughPath, min_gap: int = 1) -> float:
    """
    sup of |dY - Y' dX - Y'' XX - Ydot (t_j - t_i)| / (t_j - t_i)^(3 alpha).
    """
    check_same_grid(scp.Y, rX)
    if scp.dim_driver != rX.dim:
        raise ShapeError(f"jet acts on {scp.dim_driver} driver components, rough path has {rX.dim}")
    if min_gap < 1:
        raise ValueError(f"min_gap must be >= 1, got {min_gap}")
    Y, Yp, Ypp, Yd = scp.Y.values, scp.Yp.values, scp.Ypp.values, scp.Ydot.values
    X = rX.base.values
    dt = scp.grid.dt
    best = 0.0
    for gap in range(min_gap, scp.grid.n_steps + 1):
        h = gap * dt
        R = (Y[gap:] - Y[:-gap]
             - np.einsum("n...v,nv->n...", Yp[:-gap], X[gap:] - X[:-gap])
             - np.einsum("n...ab,nab->n...", Ypp[:-gap], rX.area.gap_values(gap))
             - Yd[:-gap] * h)
        best = max(best, float(_norms(R).max()) / h ** (3 * rX.alpha))
    return best


def reverse_orientation(scp: StronglyControlledPath, geometric: bool = True) -> StronglyControlledPath:
    """
    Right-point expansion to left-point form: (Y, -Y', Y''^T, -Ydot).

    Only meaningful for weakly geometric drivers; the caller asserts it.
    """
    if not geometric:
        raise ValueError("reverse_orientation requires a weakly geometric driver")
    return StronglyControlledPath(scp.Y, -scp.Yp, scp.Ypp.map(_swap), -scp.Ydot)


# ---------------------------------------------------------------------------
# Fields
# ---------------------------------------------------------------------------

BatchEvaluator = Callable[[np.ndarray, np.ndarray], Jet]


@dataclass(eq=False)
class JetField:
    """
    A strongly controlled field, given by an evaluator.

    The evaluator maps grid indices ks (B,) and points xs (B, dim_in) to a
    batched Jet. It must be pure; single evaluations are cached.

    Attributes:
        grid: Time grid of the driver.
        dim_in: Dimension of the spatial argument (W).
        dim_out: Dimension of the values (U).
        dim_driver: Dimension of the driver (V).
        evaluator: The batched evaluator.
        box: (lower, upper) corners of the sampling box for criterion checks.
        resolution: Lattice points per axis on the box.
        name: Label used in logs and reports.
    """
    grid: TimeGrid
    dim_in: int
    dim_out: int
    dim_driver: int
    evaluator: BatchEvaluator
    box: Optional[Box] = None
    resolution: int = DEFAULT_RESOLUTION
    name: str = "field"
    _cache: Dict[Tuple[int, bytes], Jet] = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        for attr in ("dim_in", "dim_out", "dim_driver"):
            if getattr(self, attr) < 1:
                raise ValueError(f"{attr} must be >= 1, got {getattr(self, attr)}")
        if self.box is None:
            self.box = (-np.ones(self.dim_in), np.ones(self.dim_in))
        lower, upper = (np.asarray(c, dtype=np.float64).reshape(-1) for c in self.box)
        if lower.shape != (self.dim_in,) or upper.shape != (self.dim_in,):
            raise ShapeError(f"box corners must have shape ({self.dim_in},)")
        if np.any(upper <= lower):
            raise ValueError("box upper corner must exceed the lower corner in every axis")
        self.box = (lower, upper)
        if self.resolution < 2:
            raise ValueError(f"resolution must be >= 2, got {self.resolution}")

    def component_shapes(self) -> Jet:
        U, W, V = self.dim_out, self.dim_in, self.dim_driver
        return Jet((U,), (U, V), (U, W), (U, V, V), (U, W, V), (U, W, W), (U,))

    def evaluate_batch(self, ks, xs) -> Jet:
        """Jets at (ks[b], xs[b]) for every b."""
        xs = _as_xs(xs, self.dim_in)
        ks = np.broadcast_to(np.asarray(ks, dtype=np.int64), (xs.shape[0],))
        if ks.size and (ks.min() < 0 or ks.max() > self.grid.n_steps):
            raise IndexError(f"grid index out of range [0, {self.grid.n_steps}] for field '{self.name}'")
        jet = self.evaluator(ks, xs)
        for name, comp, shape in zip(Jet._fields, jet, self.component_shapes()):
            if comp.shape != (xs.shape[0],) + shape:
                raise ShapeError(f"field '{self.name}' component {name} has shape {comp.shape[1:]}, "
                                 f"expected {shape}")
        return jet._replace(d2F=0.5 * (jet.d2F + _swap(jet.d2F)))

    def evaluate(self, k: int, x) -> Jet:
        """Jet at grid index k and point x."""
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        key = (int(k), x.tobytes())
        hit = self._cache.get(key)
        if hit is None:
            hit = self.evaluate_batch(np.array([k]), x[None, :]).at(0)
            self._cache[key] = hit
        return hit

    def along(self, path: GridPath) -> Jet:
        """Jets at (k, path[k]) for every node k."""
        check_same_grid(self.grid, path)
        return self.evaluate_batch(np.arange(self.grid.n_steps + 1), path.values.reshape(len(path), -1))

    def lattice(self, resolution: Optional[int] = None) -> np.ndarray:
        """Regular lattice on the box, shape (resolution**dim_in, dim_in)."""
        r = self.resolution if resolution is None else resolution
        axes = [np.linspace(lo, hi, r) for lo, hi in zip(*self.box)]
        return np.stack([g.reshape(-1) for g in np.meshgrid(*axes, indexing="ij")], axis=1)

    def clear_cache(self) -> None:
        logger.debug("field '%s': dropping %d cached jets", self.name, len(self._cache))
        self._cache.clear()


def _zeros_jet(B: int, U: int, W: int, V: int) -> Jet:
    return Jet(np.zeros((B, U)), np.zeros((B, U, V)), np.zeros((B, U, W)), np.zeros((B, U, V, V)),
               np.zeros((B, U, W, V)), np.zeros((B, U, W, W)), np.zeros((B, U)))


def constant_field(grid: TimeGrid, value, dim_in: int, dim_driver: int) -> JetField:
    """F = c, every other component zero."""
    c = np.asarray(value, dtype=np.float64).reshape(-1)

    def evaluator(ks, xs):
        jet = _zeros_jet(xs.shape[0], c.size, dim_in, dim_driver)
        return jet._replace(F=np.broadcast_to(c, jet.F.shape).copy())

    return JetField(grid, dim_in, c.size, dim_driver, evaluator, name="constant")


def identity_field(grid: TimeGrid, dim: int, dim_driver: int) -> JetField:
    """(x, 0, Id, 0, 0, 0, 0), the neutral element of compose_fields."""
    eye = np.eye(dim)

    def evaluator(ks, xs):
        jet = _zeros_jet(xs.shape[0], dim, dim, dim_driver)
        return jet._replace(F=xs.copy(), dF=np.broadcast_to(eye, jet.dF.shape).copy())

    return JetField(grid, dim, dim, dim_driver, evaluator, name="identity")


def static_field(f, grid: TimeGrid, dim_driver: int, box: Optional[Box] = None,
                 name: str = "static") -> JetField:
    """
    Time-independent field F = f(x) with dF = Df, d2F = D^2 f.

    Args:
        f: Vector-valued map with a `derivative(x, order)` method
            returning batched derivatives, e.g. a library RidgeField.
    """
    if len(f.out_shape) != 1:
        raise ShapeError(f"static fields must be vector valued, got shape {f.out_shape}")
    U, W = f.out_shape[0], f.dim

    def evaluator(ks, xs):
        jet = _zeros_jet(xs.shape[0], U, W, dim_driver)
        return jet._replace(F=f.derivative(xs, 0), dF=f.derivative(xs, 1), d2F=f.derivative(xs, 2))

    return JetField(grid, W, U, dim_driver, evaluator, box=box, name=name)


def path_jet(scp: StronglyControlledPath, ks, dim_in: Optional[int] = None) -> Jet:
    """Batched jet (Y, Y', 0, Y'', 0, 0, Ydot) of a path at nodes ks."""
    ks = np.asarray(ks, dtype=np.int64)
    U, V = scp.Y.shape[0], scp.dim_driver
    jet = _zeros_jet(ks.shape[0], U, U if dim_in is None else dim_in, V)
    return jet._replace(F=scp.Y.values[ks], Fp=scp.Yp.values[ks],
                        Fpp=scp.Ypp.values[ks], Fdot=scp.Ydot.values[ks])


def path_as_field(scp: StronglyControlledPath, dim_in: Optional[int] = None) -> JetField:
    """
    The x-independent field (Y, Y', 0, Y'', 0, 0, Ydot).

    Composing a field with it reproduces the jet of F_t(Y_t).
    """
    if len(scp.Y.shape) != 1:
        raise ShapeError(f"path_as_field needs a vector path, got shape {scp.Y.shape}")
    U, V = scp.Y.shape[0], scp.dim_driver
    W = U if dim_in is None else dim_in

    def evaluator(ks, xs):
        return path_jet(scp, ks, W)

    return JetField(scp.grid, W, U, V, evaluator, name="path")


def _rate_values(bracket_rate: Optional[GridPath], grid: TimeGrid, V: int) -> np.ndarray:
    if bracket_rate is None:
        return np.zeros((grid.n_steps + 1, V, V))
    check_same_grid(grid, bracket_rate)
    if bracket_rate.shape != (V, V):
        raise ShapeError(f"bracket rate must be ({V}, {V})-valued, got {bracket_rate.shape}")
    return bracket_rate.values


def _cross_terms(J2: Jet, J1: Jet) -> Tuple[np.ndarray, np.ndarray]:
    # (dF2' F1')(a (x) b) = dF2'((F1' a) (x) b)
    P = np.einsum("nuwb,nwa->nuab", J2.dFp, J1.Fp)
    Q = np.einsum("nuij,nia,njb->nuab", J2.d2F, J1.Fp, J1.Fp)
    return P, Q


def bracket_integrand(J2: Jet, J1: Jet) -> np.ndarray:
    """dF2' F1' + 1/2 d2F2(F1', F1'), the coefficient of d[X] in the composed time slot."""
    P, Q = _cross_terms(J2, J1)
    return P + 0.5 * Q


def compose_jets(J2: Jet, J1: Jet, rate: Optional[np.ndarray] = None) -> Jet:
    """
    Composition rule on batched jets, J2 evaluated at J1.F.

    Args:
        rate: Bracket rate per batch entry, shape (B, V, V); None for zero.
    """
    P, Q = _cross_terms(J2, J1)
    Fp = J2.Fp + np.einsum("nuw,nwv->nuv", J2.dF, J1.Fp)
    dF = np.einsum("nuw,nwx->nux", J2.dF, J1.dF)
    Fpp = J2.Fpp + P + _swap(P) + Q + np.einsum("nuw,nwab->nuab", J2.dF, J1.Fpp)
    dFp = (np.einsum("nuwv,nwx->nuxv", J2.dFp, J1.dF)
           + np.einsum("nuij,nix,njv->nuxv", J2.d2F, J1.dF, J1.Fp)
           + np.einsum("nuw,nwxv->nuxv", J2.dF, J1.dFp))
    d2F = (np.einsum("nuij,nix,njy->nuxy", J2.d2F, J1.dF, J1.dF)
           + np.einsum("nuw,nwxy->nuxy", J2.dF, J1.d2F))
    Fdot = J2.Fdot + np.einsum("nuw,nw->nu", J2.dF, J1.Fdot)
    if rate is not None:
        Fdot = Fdot + np.einsum("nuab,nab->nu", 0.5 * Q + P, rate)
    return Jet(J2.F, Fp, dF, Fpp, dFp, d2F, Fdot)


def compose_fields(F2: JetField, F1: JetField, bracket_rate: Optional[GridPath] = None) -> JetField:
    """
    The composition product F2 o F1 of two controlled fields.

    Args:
        F2: Outer field, spatial argument in F1's codomain.
        F1: Inner field.
        bracket_rate: Difference quotients of [X]; None for geometric drivers.

    Returns:
        A lazily evaluated JetField on F1's domain.
    """
    check_same_grid(F2.grid, F1.grid)
    if F2.dim_in != F1.dim_out:
        raise ShapeError(f"cannot compose: '{F2.name}' takes {F2.dim_in} inputs, "
                         f"'{F1.name}' returns {F1.dim_out}")
    if F2.dim_driver != F1.dim_driver:
        raise ShapeError("composed fields must share the driver dimension")
    rate = _rate_values(bracket_rate, F1.grid, F1.dim_driver)

    def evaluator(ks, xs):
        J1 = F1.evaluate_batch(ks, xs)
        return compose_jets(F2.evaluate_batch(ks, J1.F), J1, rate[ks])

    return JetField(F1.grid, F1.dim_in, F2.dim_out, F1.dim_driver, evaluator,
                    box=F1.box, resolution=F1.resolution, name=f"{F2.name}o{F1.name}")


def compose_field_path(F: JetField, scp: StronglyControlledPath,
                       bracket_rate: Optional[GridPath] = None) -> StronglyControlledPath:
    """
    Jet of Z_t = F_t(Y_t): the rough Ito-Wentzell jet (Z, Z', Z'', Zdot).
    """
    if scp.Y.shape != (F.dim_in,):
        raise ShapeError(f"field '{F.name}' takes {F.dim_in} inputs, path has shape {scp.Y.shape}")
    composed = compose_fields(F, path_as_field(scp), bracket_rate)
    jet = composed.along(scp.Y)
    grid = scp.grid
    return StronglyControlledPath(GridPath(grid, jet.F), GridPath(grid, jet.Fp),
                                  GridPath(grid, jet.Fpp), GridPath(grid, jet.Fdot))


# ---------------------------------------------------------------------------
# Criterion and derivative checks
# ---------------------------------------------------------------------------

@dataclass
class JetSeminorms:
    """
    Sampled seminorms of a controlled field.

    Attributes:
        x_part: Spatial residuals at frozen times.
        t_part: Temporal residuals at frozen points.
        mixed: Full space-time cascade residual, for audit.
        table: Per-component sups, keyed by part then component.
    """
    x_part: float
    t_part: float
    mixed: float
    table: Dict[str, Dict[str, float]]

    @property
    def total(self) -> float:
        return self.x_part + self.t_part

    def to_dict(self) -> Dict[str, Any]:
        return {"x_part": self.x_part, "t_part": self.t_part, "mixed": self.mixed,
                "total": self.total, "table": self.table}


def _cascade_residuals(J0: Jet, J1: Jet, h: np.ndarray, dX: np.ndarray, XX: np.ndarray,
                       dt: np.ndarray) -> Dict[str, np.ndarray]:
    """Unscaled norms of the third-order space-time cascade from (t0, x0) to (t1, x1)."""
    half_h2 = 0.5 * np.einsum("nuij,ni,nj->nu", J0.d2F, h, h)
    R = {
        "F": (J1.F - J0.F - np.einsum("nuv,nv->nu", J0.Fp, dX) - np.einsum("nuw,nw->nu", J0.dF, h)
              - np.einsum("nuab,nab->nu", J0.Fpp, XX) - np.einsum("nuwv,nw,nv->nu", J0.dFp, h, dX)
              - half_h2 - J0.Fdot * dt[:, None]),
        "Fp": (J1.Fp - J0.Fp - np.einsum("nuab,na->nub", J0.Fpp, dX)
               - np.einsum("nuwv,nw->nuv", J0.dFp, h)),
        "dF": (J1.dF - J0.dF - np.einsum("nuwv,nv->nuw", J0.dFp, dX)
               - np.einsum("nuwv,nv->nuw", J0.d2F, h)),
    }
    for name in ("Fpp", "dFp", "d2F", "Fdot"):
        R[name] = getattr(J1, name) - getattr(J0, name)
    return {name: _norms(r) for name, r in R.items()}


def _scaled_sups(res: Dict[str, np.ndarray], scale: np.ndarray) -> Dict[str, float]:
    return {name: float(np.max(r / scale ** _ORDER[name], initial=0.0)) for name, r in res.items()}


def _merge(table: Dict[str, float], new: Dict[str, float]) -> None:
    for name, v in new.items():
        table[name] = max(table.get(name, 0.0), v)


def _group_sum(table: Dict[str, float], groups: Sequence[Sequence[str]]) -> float:
    return float(sum(max(table[n] for n in g) for g in groups))


def _ordered_pairs(P: int) -> Tuple[np.ndarray, np.ndarray]:
    I, J = np.nonzero(~np.eye(P, dtype=bool))
    return I, J


def _time_samples(grid: TimeGrid, count: int) -> np.ndarray:
    return np.unique(np.linspace(0, grid.n_steps, min(count, grid.n_steps + 1)).round().astype(int))


def field_criterion(F: JetField, rX: RoughPath, box: Optional[Box] = None,
                    resolution: Optional[int] = None, min_gap: int = 1, time_samples: int = 9,
                    mixed_resolution: int = 5) -> JetSeminorms:
    """
    Sampled jet criterion of a controlled field.

    The spatial part takes sups of the Lip^3 residuals of (F, dF, d2F), the
    Lip^2 residuals of (F', dF') and the Lip^1 residuals of (F'', Fdot) over
    ordered lattice pairs at `time_samples` frozen times. The temporal part
    takes the controlled-path remainders of (F, F', F'', Fdot), (dF, dF')
    and d2F over all node pairs at every lattice point. The mixed audit runs
    the full cascade over a coarser lattice and the sampled times.

    A finite result falsifies nothing beyond the lattice: it is a sound
    lower bound of the continuum seminorms.
    """
    check_same_grid(F.grid, rX)
    if rX.dim != F.dim_driver:
        raise ShapeError(f"field '{F.name}' expects a {F.dim_driver}-dimensional driver, got {rX.dim}")
    if box is not None:
        F = JetField(F.grid, F.dim_in, F.dim_out, F.dim_driver, F.evaluator, box=box,
                     resolution=F.resolution, name=F.name)
    points = F.lattice(resolution)
    P, n = points.shape[0], F.grid.n_steps
    U, W, V = F.dim_out, F.dim_in, F.dim_driver
    times = _time_samples(F.grid, time_samples)
    alpha, dt = rX.alpha, F.grid.dt
    X = rX.base.values

    # spatial part
    x_table: Dict[str, float] = {}
    x_part = 0.0
    I, J = _ordered_pairs(P)
    for k in times:
        jets = F.evaluate_batch(np.full(P, k), points)
        h = points[J] - points[I]
        zeros = np.zeros(len(I))
        res = _cascade_residuals(jets.at(I), jets.at(J), h, np.zeros((len(I), V)),
                                 np.zeros((len(I), V, V)), zeros)
        sups = _scaled_sups(res, np.sqrt(np.sum(h ** 2, axis=1)))
        _merge(x_table, sups)
        x_part = max(x_part, _group_sum(sups, [("F", "dF", "d2F"), ("Fp", "dFp"), ("Fpp", "Fdot")]))

    # temporal part
    t_table: Dict[str, float] = {}
    t_part = 0.0
    ks = np.arange(n + 1)
    for p in range(P):
        jets = F.evaluate_batch(ks, np.broadcast_to(points[p], (n + 1, W)))
        sups: Dict[str, float] = {}
        for gap in range(min_gap, n + 1):
            m = n + 1 - gap
            res = _cascade_residuals(jets.at(slice(0, m)), jets.at(slice(gap, None)), np.zeros((m, W)),
                                     X[gap:] - X[:-gap], rX.area.gap_values(gap), np.full(m, gap * dt))
            _merge(sups, _scaled_sups(res, np.full(m, (gap * dt) ** alpha)))
        _merge(t_table, sups)
        t_part = max(t_part, _group_sum(sups, [("F", "Fp", "Fpp", "Fdot"), ("dF", "dFp"), ("d2F",)]))

    # mixed audit
    coarse = F.lattice(mixed_resolution)
    Pc = coarse.shape[0]
    m_table: Dict[str, float] = {}
    for a, k0 in enumerate(times):
        J0 = F.evaluate_batch(np.full(Pc, k0), coarse)
        for k1 in times[a + 1:]:
            if k1 - k0 < min_gap:
                continue
            J1 = F.evaluate_batch(np.full(Pc, k1), coarse)
            I0, I1 = np.meshgrid(np.arange(Pc), np.arange(Pc), indexing="ij")
            I0, I1 = I0.reshape(-1), I1.reshape(-1)
            h = coarse[I1] - coarse[I0]
            tau = (k1 - k0) * dt
            count = len(I0)
            res = _cascade_residuals(J0.at(I0), J1.at(I1), h,
                                     np.broadcast_to(X[k1] - X[k0], (count, V)),
                                     np.broadcast_to(rX.area.value(int(k0), int(k1)), (count, V, V)),
                                     np.full(count, tau))
            scale = np.maximum(tau ** alpha, np.sqrt(np.sum(h ** 2, axis=1)))
            _merge(m_table, _scaled_sups(res, scale))
    mixed = _group_sum(m_table, [("F",), ("Fp", "dF"), ("Fpp", "dFp", "d2F", "Fdot")]) if m_table else 0.0

    logger.debug("criterion '%s': x_part %.4g, t_part %.4g, mixed %.4g", F.name, x_part, t_part, mixed)
    return JetSeminorms(x_part, t_part, mixed, {"x": x_table, "t": t_table, "mixed": m_table})


@dataclass
class FDReport:
    """Deviations of a jet's spatial derivatives from central differences."""
    h: float
    dF: float
    d2F: float
    dFp: float
    symmetry: float
    commute: Optional[float] = None

    def worst(self) -> float:
        return max(self.dF, self.d2F, self.dFp, self.symmetry, self.commute or 0.0)

    def to_dict(self) -> Dict[str, Any]:
        return {"h": self.h, "dF": self.dF, "d2F": self.d2F, "dFp": self.dFp,
                "symmetry": self.symmetry, "commute": self.commute}


def fd_jet_check(F: JetField, box: Optional[Box] = None, h: float = 1e-4, resolution: int = 5,
                 times: Optional[Sequence[int]] = None, rX: Optional[RoughPath] = None) -> FDReport:
    """
    Compare dF with central differences of F, dF' with those of F' and
    d2F with those of dF on a lattice; report the symmetry defect of the raw
    d2F and, given a rough path, the defect of (dF)' = (dF')^T over
    consecutive steps, divided by dt^(2 alpha).
    """
    if h <= 0:
        raise ValueError(f"h must be positive, got {h}")
    if box is not None:
        F = JetField(F.grid, F.dim_in, F.dim_out, F.dim_driver, F.evaluator, box=box,
                     resolution=F.resolution, name=F.name)
    points = F.lattice(resolution)
    P, W = points.shape
    ks_all = _time_samples(F.grid, 3) if times is None else np.asarray(times, dtype=int)
    dev = {"dF": 0.0, "d2F": 0.0, "dFp": 0.0, "symmetry": 0.0}
    for k in ks_all:
        ks = np.full(P, k)
        raw = F.evaluator(ks, points)
        dev["symmetry"] = max(dev["symmetry"], float(np.max(np.abs(raw.d2F - _swap(raw.d2F)))))
        base = F.evaluate_batch(ks, points)
        for w in range(W):
            e = np.zeros(W)
            e[w] = h
            plus = F.evaluate_batch(ks, points + e)
            minus = F.evaluate_batch(ks, points - e)
            dev["dF"] = max(dev["dF"], float(np.max(np.abs((plus.F - minus.F) / (2 * h) - base.dF[:, :, w]))))
            dev["d2F"] = max(dev["d2F"], float(np.max(np.abs((plus.dF - minus.dF) / (2 * h) - base.d2F[:, :, :, w]))))
            dev["dFp"] = max(dev["dFp"], float(np.max(np.abs((plus.Fp - minus.Fp) / (2 * h) - base.dFp[:, :, w, :]))))
    commute = None
    if rX is not None:
        check_same_grid(F.grid, rX)
        n = F.grid.n_steps
        dX = rX.increments
        commute = 0.0
        for x in points:
            jets = F.evaluate_batch(np.arange(n + 1), np.broadcast_to(x, (n + 1, W)))
            R = jets.dF[1:] - jets.dF[:-1] - np.einsum("nuwv,nv->nuw", jets.dFp[:-1], dX)
            commute = max(commute, float(_norms(R).max()) / F.grid.dt ** (2 * rX.alpha))
    report = FDReport(h, dev["dF"], dev["d2F"], dev["dFp"], dev["symmetry"], commute)
    logger.debug("fd check '%s': %s", F.name, report)
    return report
