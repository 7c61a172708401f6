"""
Strongly controlled rough semimartingales and the rough stochastic
Ito-Wentzell identities.

An scRSM is a tuple (Y, dXY, dXXY, Ydot; M, N) with

    Y_t = Y_0 + int_0^t Ydot ds + M_t + int (dXY, dXXY) dX,

the last integral a rough stochastic integral whose martingale part N is
the martingale part of dXY. Fields are composed with it in three ways:
controlled fields (F), martingale fields G_t(x) = int beta(x) dW, and their
sum.
"""
from __future__ import annotations
from dataclasses import dataclass
from typing import Any, Dict, Optional, Sequence, Tuple
import logging

import numpy as np

from .controlled import ControlledPath, JetField, bracket_integrand, compose_jets, path_jet
from .errors import ShapeError
from .grid import GridPath, check_same_grid
from .integration import rough_integral_path, rough_stochastic_integral, rs_integral
from .library import RidgeField
from .lift import BracketPath, MartingaleSample, RoughPath, bracket, ito_integral
from .reports import ConvergenceReport, report_from_records

logger = logging.getLogger(__name__)

# Relative tolerance of the construction identity of an ScRSM
DECOMPOSITION_TOLERANCE = 1e-9

RSIW_TERMS = ("martingale_bracket",)
MARTINGALE_TERMS = ("covariation", "martingale_bracket")


def _norms(a: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(a.reshape(a.shape[0], -1) ** 2, axis=1))


def _check_drop(drop: Sequence[str], allowed: Sequence[str]) -> None:
    unknown = [d for d in drop if d not in allowed]
    if unknown:
        raise ValueError(f"cannot drop {unknown}; droppable terms are {list(allowed)}")


@dataclass(frozen=True, eq=False)
class ScRSM:
    """
    A strongly controlled rough semimartingale on a grid.

    Attributes:
        Y: Values, shape (d,).
        dXY: Derivative in the rough direction, shape (d, V).
        dXXY: Second derivative, shape (d, V, V); dXXY[:, b, a] is the
            derivative of dXY[:, a] in direction b.
        Ydot: Lebesgue derivative, shape (d,).
        M: Martingale part of Y.
        N: Martingale part of dXY.
        ref: The rough path X.
    """
    Y: GridPath
    dXY: GridPath
    dXXY: GridPath
    Ydot: GridPath
    M: MartingaleSample
    N: MartingaleSample
    ref: RoughPath

    def __post_init__(self):
        check_same_grid(self.Y, self.dXY, self.dXXY, self.Ydot, self.M, self.N, self.ref)
        if len(self.Y.shape) != 1:
            raise ShapeError(f"scRSM values must be vectors, got shape {self.Y.shape}")
        d, V = self.Y.shape[0], self.ref.dim
        expected = {"dXY": (d, V), "dXXY": (d, V, V), "Ydot": (d,)}
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ShapeError(f"{name} must have shape {shape}, got {getattr(self, name).shape}")
        if self.M.shape != (d,):
            raise ShapeError(f"M must have shape {(d,)}, got {self.M.shape}")
        if self.N.shape != (d, V):
            raise ShapeError(f"N must have shape {(d, V)}, got {self.N.shape}")
        defect = self.decomposition_defect()
        scale = max(1.0, float(np.max(np.abs(self.Y.values))))
        if defect > DECOMPOSITION_TOLERANCE * scale:
            raise ValueError(f"scRSM decomposition fails by {defect:.3g}")

    @property
    def grid(self):
        return self.Y.grid

    @property
    def dim(self) -> int:
        return self.Y.shape[0]

    def lebesgue(self) -> GridPath:
        return GridPath.from_increments(self.grid, self.Ydot.values[:-1] * self.grid.dt)

    def rough_part(self) -> GridPath:
        return rough_stochastic_integral(self.dXY, self.dXXY, self.N, self.ref)

    def decomposition_defect(self) -> float:
        """max over nodes of |Y - Y_0 - V - (M - M_0) - RSI(dXY, dXXY; N)|."""
        rhs = self.lebesgue().values + (self.M.values - self.M.values[0]) + self.rough_part().values
        return float(np.max(_norms(self.Y.values - self.Y.values[0] - rhs)))

    # aliases read by path_jet
    @property
    def Yp(self) -> GridPath:
        return self.dXY

    @property
    def Ypp(self) -> GridPath:
        return self.dXXY

    @property
    def dim_driver(self) -> int:
        return self.ref.dim


def martingale_from_integrand(phi: GridPath, W: GridPath) -> MartingaleSample:
    """
    M = int phi dW for a standard Brownian W, with the analytic bracket
    sum of phi phi^T dt over the flattened entries.
    """
    check_same_grid(phi, W)
    path = ito_integral(phi, W)
    m = W.shape[0]
    flat = phi.values[:-1].reshape(phi.n_steps, -1, m)
    inc = np.einsum("nim,njm->nij", flat, flat) * phi.grid.dt
    return MartingaleSample(path, BracketPath.from_increments(phi.grid, inc, lipschitz=True))


def build_scrsm(rX: RoughPath, Y0, Ydot: Optional[GridPath] = None, dXY: Optional[GridPath] = None,
                dXXY: Optional[GridPath] = None, M: Optional[MartingaleSample] = None,
                N: Optional[MartingaleSample] = None) -> ScRSM:
    """
    Assemble Y = Y_0 + int Ydot + M + int (dXY, dXXY) dX from its components.

    Missing components are zero. The decomposition holds on the grid by
    construction.
    """
    grid = rX.grid
    y0 = np.atleast_1d(np.asarray(Y0, dtype=np.float64))
    d, V = y0.shape[0], rX.dim
    Ydot = GridPath.zeros(grid, (d,)) if Ydot is None else Ydot
    dXY = GridPath.zeros(grid, (d, V)) if dXY is None else dXY
    dXXY = GridPath.zeros(grid, (d, V, V)) if dXXY is None else dXXY
    M = MartingaleSample.zeros(grid, (d,)) if M is None else M
    N = MartingaleSample.zeros(grid, (d, V)) if N is None else N
    check_same_grid(rX, Ydot, dXY, dXXY, M, N)
    lebesgue = GridPath.from_increments(grid, Ydot.values[:-1] * grid.dt)
    rough = rough_stochastic_integral(dXY, dXXY, N, rX)
    Y = GridPath(grid, y0 + lebesgue.values + (M.values - M.values[0]) + rough.values)
    return ScRSM(Y, dXY, dXXY, Ydot, M, N, rX)


# ---------------------------------------------------------------------------
# Controlled fields
# ---------------------------------------------------------------------------

def _rsiw_sides(F: JetField, y: ScRSM, drop: Sequence[str] = (),
                bracket_path: Optional[BracketPath] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Running lhs F_t(Y_t) - F_0(Y_0) and rhs

        RSI((Z', Z''); N~) + int dF(Y) dM + int (dF(Y) Ydot + Fdot(Y)) dt
        + int (dF' dXY + 1/2 d2F(dXY, dXY)) d[X] + 1/2 int d2F(Y) d<M>

    with N~ = int dF(Y) dN + int dF'(Y) dM + int d2F(Y)(Id, dXY) dM.
    """
    _check_drop(drop, RSIW_TERMS)
    if F.dim_in != y.dim or F.dim_driver != y.ref.dim:
        raise ShapeError(f"field '{F.name}' does not act on a {y.dim}-dimensional scRSM over {y.ref.dim} drivers")
    rX = y.ref
    grid = rX.grid
    bracket_path = bracket(rX) if bracket_path is None else bracket_path
    ks = np.arange(grid.n_steps + 1)
    J = F.along(y.Y)
    Jy = path_jet(y, ks, F.dim_in)
    Jz = compose_jets(J, Jy)

    dM = y.M.path.increments
    dN = y.N.path.increments
    dNt = (np.einsum("nuw,nwv->nuv", J.dF[:-1], dN)
           + np.einsum("nuwv,nw->nuv", J.dFp[:-1], dM)
           + np.einsum("nuwz,nzv,nw->nuv", J.d2F[:-1], y.dXY.values[:-1], dM))
    Nt = GridPath.from_increments(grid, dNt)
    rough = rough_stochastic_integral(GridPath(grid, Jz.Fp), GridPath(grid, Jz.Fpp), Nt, rX).values
    martingale = ito_integral(GridPath(grid, J.dF), y.M.path).values
    lebesgue = GridPath.from_increments(grid, Jz.Fdot[:-1] * grid.dt).values
    rough_bracket = rs_integral(GridPath(grid, bracket_integrand(J, Jy)), bracket_path.path).values
    rhs = rough + martingale + lebesgue + rough_bracket
    if "martingale_bracket" not in drop:
        rhs = rhs + 0.5 * rs_integral(GridPath(grid, J.d2F), y.M.bracket.path).values
    return J.F - J.F[0], rhs


def rsiw_residual(F: JetField, y: ScRSM, drop: Sequence[str] = (),
                  bracket_path: Optional[BracketPath] = None) -> Dict[str, Any]:
    """
    Pathwise defect of the rough stochastic Ito-Wentzell identity for a
    controlled field evaluated along an scRSM.

    Args:
        F: Adapted controlled field over the scRSM's rough path.
        y: The scRSM.
        drop: Right-hand side terms to omit ("martingale_bracket").
        bracket_path: [X]; computed from the rough path when omitted.
    """
    lhs, rhs = _rsiw_sides(F, y, drop, bracket_path)
    defect = float(np.max(_norms(lhs - rhs)))
    logger.debug("rsiw residual at dt=%.4g: %.4g", y.grid.dt, defect)
    return {"mesh": y.grid.dt, "defect": defect}


def verify_rsiw(cases_by_mesh: Sequence[Sequence[Tuple[JetField, ScRSM]]], drop: Sequence[str] = (),
                min_order: Optional[float] = None, max_order: Optional[float] = None,
                max_final: Optional[float] = None) -> ConvergenceReport:
    """rsIW defects over a refinement family; per mesh a list of (F, y) replicas."""
    records = [[rsiw_residual(F, y, drop) for F, y in cases] for cases in cases_by_mesh]
    name = "rsiw" + "".join(f"-no-{d}" for d in drop)
    return report_from_records(name, records, min_order=min_order, max_order=max_order, max_final=max_final)


# ---------------------------------------------------------------------------
# Martingale fields
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class MartingaleField:
    """
    G_t(x) = sum_{j<t} beta(x) theta_j dW_j with derivatives taken under the sum.

    Attributes:
        beta: Map R^d -> (H, m) matrices with analytic derivatives.
        W: Brownian path, shape (m,).
        theta: Optional scalar weight path theta_t (adapted); one when omitted.
    """
    beta: RidgeField
    W: GridPath
    theta: Optional[GridPath] = None

    def __post_init__(self):
        if len(self.beta.out_shape) != 2 or self.beta.out_shape[1] != self.W.shape[0]:
            raise ShapeError(f"beta must map into (H, {self.W.shape[0]}) matrices, got {self.beta.out_shape}")
        if self.theta is not None:
            check_same_grid(self.W, self.theta)
            if self.theta.shape != (1,):
                raise ShapeError(f"theta must be scalar valued, got shape {self.theta.shape}")

    @property
    def grid(self):
        return self.W.grid

    @property
    def dim(self) -> int:
        return self.beta.dim

    @property
    def dim_out(self) -> int:
        return self.beta.out_shape[0]

    def weighted_increments(self) -> np.ndarray:
        """theta_j dW_j, shape (n_steps, m)."""
        dW = self.W.increments
        return dW if self.theta is None else self.theta.values[:-1] * dW

    def integrator(self) -> np.ndarray:
        """S_k = sum_{j<k} theta_j dW_j, shape (n_steps + 1, m)."""
        return GridPath.from_increments(self.grid, self.weighted_increments()).values

    def derivative(self, ks, xs, order: int) -> np.ndarray:
        """D^order G at (ks[b], xs[b]); shape (B, H) + (d,) * order."""
        xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
        ks = np.broadcast_to(np.asarray(ks, dtype=np.int64), (xs.shape[0],))
        S = self.integrator()[ks]
        b = self.beta.derivative(xs, order)
        return np.einsum("nhm...,nm->nh...", b, S)

    def value(self, k: int, x) -> np.ndarray:
        return self.derivative(np.array([k]), np.asarray(x, dtype=np.float64)[None, :], 0)[0]


def martingale_field(beta: RidgeField, W: GridPath, theta: Optional[GridPath] = None) -> MartingaleField:
    return MartingaleField(beta, W, theta)


def _martingale_sides(G: MartingaleField, y: ScRSM, drop: Sequence[str] = (),
                      bracket_path: Optional[BracketPath] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Running lhs G_t(Y_t) - G_0(Y_0) and rhs

        int beta(Y) dW + int DG(Y) Ydot dt + int DG(Y) dM + int (Z, Z') dX
        + <int D beta(Y) dW, M> + 1/2 int D2G(Y) d<M> + 1/2 int D2G(Y)(dXY, dXY) d[X]

    with Z = DG(Y) dXY, Z' = D2G(Y)(dXY, dXY) + DG(Y) dXXY, the dX integral
    taken as compensated Riemann sums.
    """
    _check_drop(drop, MARTINGALE_TERMS)
    check_same_grid(G.W, y.Y)
    if G.dim != y.dim:
        raise ShapeError(f"martingale field acts on R^{G.dim}, scRSM has dimension {y.dim}")
    rX = y.ref
    grid = rX.grid
    bracket_path = bracket(rX) if bracket_path is None else bracket_path
    n, dt = grid.n_steps, grid.dt
    ks = np.arange(n + 1)
    Y, dXY, dXXY = y.Y.values, y.dXY.values, y.dXXY.values
    G0 = G.derivative(ks, Y, 0)
    DG = G.derivative(ks, Y, 1)
    D2G = G.derivative(ks, Y, 2)
    b0 = G.beta.derivative(Y[:-1], 0)
    b1 = G.beta.derivative(Y[:-1], 1)
    dS = G.weighted_increments()
    dM = y.M.path.increments

    steps = (np.einsum("nhm,nm->nh", b0, dS)
             + np.einsum("nhw,nw->nh", DG[:-1], y.Ydot.values[:-1]) * dt
             + np.einsum("nhw,nw->nh", DG[:-1], dM)
             + 0.5 * np.einsum("nhwz,nwa,nzb,nab->nh", D2G[:-1], dXY[:-1], dXY[:-1], bracket_path.increments))
    if "covariation" not in drop:
        steps = steps + np.einsum("nhmw,nm,nw->nh", b1, dS, dM)
    if "martingale_bracket" not in drop:
        steps = steps + 0.5 * np.einsum("nhwz,nwz->nh", D2G[:-1], y.M.bracket.increments)
    Z = np.einsum("nhw,nwa->nha", DG, dXY)
    Zp = np.einsum("nhwz,nwa,nzb->nhab", D2G, dXY, dXY) + np.einsum("nhw,nwab->nhab", DG, dXXY)
    rough = rough_integral_path(ControlledPath(GridPath(grid, Z), GridPath(grid, Zp)), rX).values
    rhs = GridPath.from_increments(grid, steps).values + rough
    return G0 - G0[0], rhs


def rsiw_martingale_residual(G: MartingaleField, y: ScRSM, drop: Sequence[str] = (),
                             bracket_path: Optional[BracketPath] = None) -> Dict[str, Any]:
    """
    Pathwise defect of the Ito-Wentzell identity for a martingale field.

    Args:
        drop: Right-hand side terms to omit ("covariation", "martingale_bracket").
    """
    lhs, rhs = _martingale_sides(G, y, drop, bracket_path)
    defect = float(np.max(_norms(lhs - rhs)))
    logger.debug("martingale field residual at dt=%.4g: %.4g", y.grid.dt, defect)
    return {"mesh": y.grid.dt, "defect": defect}


def verify_rsiw_martingale(cases_by_mesh: Sequence[Sequence[Tuple[MartingaleField, ScRSM]]],
                           drop: Sequence[str] = (), min_order: Optional[float] = None,
                           max_order: Optional[float] = None,
                           max_final: Optional[float] = None) -> ConvergenceReport:
    records = [[rsiw_martingale_residual(G, y, drop) for G, y in cases] for cases in cases_by_mesh]
    name = "rsiw_martingale" + "".join(f"-no-{d}" for d in drop)
    return report_from_records(name, records, min_order=min_order, max_order=max_order, max_final=max_final)


def total_rsiw_residual(F: JetField, G: MartingaleField, y: ScRSM,
                        bracket_path: Optional[BracketPath] = None) -> Dict[str, Any]:
    """Defect of the identity for H = F + G along y."""
    if F.dim_out != G.dim_out:
        raise ShapeError(f"F returns {F.dim_out} components, G returns {G.dim_out}")
    bracket_path = bracket(y.ref) if bracket_path is None else bracket_path
    lhs_f, rhs_f = _rsiw_sides(F, y, (), bracket_path)
    lhs_g, rhs_g = _martingale_sides(G, y, (), bracket_path)
    defect = float(np.max(_norms(lhs_f + lhs_g - rhs_f - rhs_g)))
    return {"mesh": y.grid.dt, "defect": defect}


def verify_total_rsiw(cases_by_mesh: Sequence[Sequence[Tuple[JetField, MartingaleField, ScRSM]]],
                      min_order: Optional[float] = None,
                      max_final: Optional[float] = None) -> ConvergenceReport:
    records = [[total_rsiw_residual(F, G, y) for F, G, y in cases] for cases in cases_by_mesh]
    return report_from_records("total_rsiw", records, min_order=min_order, max_final=max_final)
