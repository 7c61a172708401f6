"""
Verifiers for the deterministic composition identities: the rough
Ito-Wentzell formula, rough transport and the rough Alekseev-Groebner
expansion.

Each identity has a single-mesh residual function returning a plain record
(a dict with at least "mesh" and "defect") and a `verify_*` function taking
one list of cases per mesh, coarse to fine.
"""
from __future__ import annotations
from typing import Any, Dict, NamedTuple, Optional, Sequence
import logging

import numpy as np

from .controlled import (ControlledPath, JetField, StronglyControlledPath, bracket_integrand, compose_jets,
                         path_jet)
from .errors import ShapeError
from .flows import backward_flow_jet, flow_table, flow_to, solution_jet
from .grid import GridPath, check_same_grid
from .integration import rough_integral_path, rs_integral
from .library import RidgeField, VectorFieldPair
from .lift import BracketPath, RoughPath, bracket
from .reports import ConvergenceReport, report_from_records

logger = logging.getLogger(__name__)


def _norms(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    return np.sqrt(np.sum(a.reshape(a.shape[0], -1) ** 2, axis=1))


def _max_norm(a: np.ndarray) -> float:
    return float(_norms(a).max(initial=0.0))


def _require_geometric(rZ: RoughPath, what: str) -> None:
    if not rZ.geometric:
        raise ValueError(f"{what} needs a geometric driver, got a '{rZ.kind}' lift")


# ---------------------------------------------------------------------------
# Rough Ito-Wentzell
# ---------------------------------------------------------------------------

class RIWCase(NamedTuple):
    F: JetField
    scp: StronglyControlledPath
    rX: RoughPath
    bracket: Optional[BracketPath] = None


def riw_residual(F: JetField, scp: StronglyControlledPath, rX: RoughPath,
                 bracket_path: Optional[BracketPath] = None) -> Dict[str, Any]:
    """
    Defect of Z_t = F_t(Y_t) against the integrated rough Ito-Wentzell form

        Z_t - Z_0 = int (Z', Z'') dX + sum Fdot(Y) dt + sum dF(Y) dV
                    + sum (dF' Y' + 1/2 d2F(Y', Y')) d[X],

    with V = int Ydot dt and left-point sums against d[X] and dV. When the
    bracket is Lipschitz the form with the bracket rate folded into Zdot is
    reported as "rate_defect".

    Returns:
        Record with the maximum over nodes of both defects and the largest
        |Z'| and |Z''|.
    """
    check_same_grid(scp.Y, rX)
    if scp.dim_driver != rX.dim:
        raise ShapeError(f"jet acts on {scp.dim_driver} driver components, rough path has {rX.dim}")
    if bracket_path is None:
        bracket_path = bracket(rX)
    check_same_grid(rX, bracket_path)
    grid = rX.grid
    ks = np.arange(grid.n_steps + 1)
    J = F.along(scp.Y)
    Jy = path_jet(scp, ks, F.dim_in)
    Jz = compose_jets(J, Jy)
    Z, Zp, Zpp = (GridPath(grid, a) for a in (Jz.F, Jz.Fp, Jz.Fpp))

    lhs = Z.values - Z.values[0]
    rough = rough_integral_path(ControlledPath(Zp, Zpp), rX).values
    V = GridPath.from_increments(grid, scp.Ydot.values[:-1] * grid.dt)
    lebesgue = GridPath.from_increments(grid, J.Fdot[:-1] * grid.dt).values
    drift = rs_integral(GridPath(grid, J.dF), V).values
    brk = rs_integral(GridPath(grid, bracket_integrand(J, Jy)), bracket_path.path).values
    defect = _max_norm(lhs - rough - lebesgue - drift - brk)

    record = {"mesh": grid.dt, "defect": defect, "max_Zp": _max_norm(Zp.values), "max_Zpp": _max_norm(Zpp.values)}
    if bracket_path.lipschitz:
        rate = bracket_path.rate().values
        Zdot = compose_jets(J, Jy, rate).Fdot
        folded = GridPath.from_increments(grid, Zdot[:-1] * grid.dt).values
        record["rate_defect"] = _max_norm(lhs - rough - folded)
    logger.debug("riw residual at dt=%.4g: %.4g", grid.dt, defect)
    return record


def verify_riw(cases_by_mesh: Sequence[Sequence[RIWCase]], min_order: Optional[float] = None,
               max_final: Optional[float] = None) -> ConvergenceReport:
    """Rough Ito-Wentzell defects over a refinement family."""
    records = [[riw_residual(*case) for case in cases] for cases in cases_by_mesh]
    info = ["max_Zp", "max_Zpp"] + (["rate_defect"] if all("rate_defect" in r for recs in records for r in recs)
                                    else [])
    return report_from_records("rough_ito_wentzell", records, min_order=min_order, max_final=max_final,
                               info_keys=info)


# ---------------------------------------------------------------------------
# Rough transport
# ---------------------------------------------------------------------------

def transport_residual(vf: VectorFieldPair, g: RidgeField, rZ: RoughPath, points, s: int = 0) -> Dict[str, Any]:
    """
    Checks of u_t(x) = g(phi(t, T; x)) as the solution of the rough
    transport equation, at the given lattice points:

        drift     max over t >= s and x of |u_t(phi(s, t; x)) - u_s(x)|
        terminal  max |u_T - g| over the value and the first two derivatives
        jet       max of |(u o phi)'|, |(u o phi)''|, |(u o phi)^.| along each solution
        residual  max over x of |u_T(x) - u_s(x) - sum (u' dZ + u'' ZZ + udot dt)|

    The residual is the defect: u solves the transport equation when its
    compensated sums reproduce the increments. The first three hold to
    roundoff for the discrete flow and are kept as "consistency".
    """
    _require_geometric(rZ, "transport")
    grid = rZ.grid
    s = grid.check_index(s)
    n = grid.n_steps
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    P = pts.shape[0]
    u = backward_flow_jet(vf, rZ, g)

    forward = flow_table(vf, rZ, s, pts)
    states = forward.states[s:].reshape(-1, vf.dim)
    starts = np.repeat(np.arange(s, n + 1), P)
    ends, _, _ = flow_to(vf, rZ, starts, states, n)
    values = g.derivative(ends, 0).reshape(n + 1 - s, P, -1)
    drift = float(np.max(np.sqrt(np.sum((values - values[0]) ** 2, axis=-1))))

    top = u.evaluate_batch(np.full(P, n), pts)
    terminal = max(_max_norm(top.F - g.derivative(pts, 0)), _max_norm(top.dF - g.derivative(pts, 1)),
                   _max_norm(top.d2F - g.derivative(pts, 2)))

    jet = 0.0
    residual = 0.0
    ks = np.arange(s, n + 1)
    for x in pts:
        scp = solution_jet(vf, rZ, s, x)
        J = u.evaluate_batch(ks, scp.Y.values[s:])
        Jz = compose_jets(J, path_jet(scp, ks, vf.dim))
        jet = max(jet, _max_norm(Jz.Fp), _max_norm(Jz.Fpp), _max_norm(Jz.Fdot))

        Jx = u.evaluate_batch(ks, np.broadcast_to(x, (ks.size, vf.dim)))
        expansion = (np.einsum("nuv,nv->nu", Jx.Fp[:-1], rZ.increments[s:])
                     + np.einsum("nuab,nab->nu", Jx.Fpp[:-1], rZ.blocks[s:])
                     + Jx.Fdot[:-1] * grid.dt)
        residual = max(residual, float(np.linalg.norm(Jx.F[-1] - Jx.F[0] - expansion.sum(axis=0))))

    logger.debug("transport at dt=%.4g: drift %.3g, terminal %.3g, jet %.3g, residual %.3g",
                 grid.dt, drift, terminal, jet, residual)
    return {"mesh": grid.dt, "defect": residual, "consistency": max(drift, terminal, jet), "drift": drift,
            "terminal": terminal, "jet": jet, "residual": residual}


def verify_transport(vf: VectorFieldPair, g: RidgeField, drivers_by_mesh: Sequence[Sequence[RoughPath]],
                     points, s: int = 0, min_order: Optional[float] = None,
                     max_final: Optional[float] = None) -> ConvergenceReport:
    """Transport checks over a refinement family of geometric drivers."""
    records = [[transport_residual(vf, g, rZ, points, s) for rZ in drivers] for drivers in drivers_by_mesh]
    return report_from_records("rough_transport", records, min_order=min_order, max_final=max_final,
                               info_keys=("consistency", "drift", "terminal", "jet"))


# ---------------------------------------------------------------------------
# Rough Alekseev-Groebner
# ---------------------------------------------------------------------------

def rag_terms(vf: VectorFieldPair, scpY: StronglyControlledPath, g: RidgeField, rZ: RoughPath,
              start: int = 0, terminal: Optional[int] = None) -> Dict[str, np.ndarray]:
    """
    Running sides of the rough Alekseev-Groebner expansion on [start, terminal]
    for F_t = g o phi(t, terminal; .):

        F_t(Y_t) - F_s(Y_s) = sum dF(Y)(Ydot - mu(Y)) dt + int (I, I') dZ,

    where I = dF(Y) D with D = Y' - sigma(Y) and
    I'(a (x) b) = dF'(D_b (x) a) + d2F(D_b, Y'_a) + dF(Y''(a (x) b) - D sigma_b Y'_a).

    Returns:
        Arrays over the nodes start..terminal: "lhs", "lebesgue", "rough".
    """
    _require_geometric(rZ, "the Alekseev-Groebner expansion")
    check_same_grid(scpY.Y, rZ)
    grid = rZ.grid
    end = grid.n_steps if terminal is None else grid.check_index(terminal)
    start = grid.check_index(start)
    if start >= end:
        raise ValueError(f"need start < terminal, got ({start}, {end})")
    if scpY.Y.shape != (vf.dim,) or scpY.dim_driver != vf.noise_dim:
        raise ShapeError(f"path jet {scpY.Yp.shape} does not match the vector fields")
    F = backward_flow_jet(vf, rZ, g, end)
    ks = np.arange(start, end + 1)
    Y = scpY.Y.values[ks]
    Yp, Ypp, Ydot = scpY.Yp.values[ks], scpY.Ypp.values[ks], scpY.Ydot.values[ks]
    J = F.evaluate_batch(ks, Y)
    s0 = vf.sigma.derivative(Y, 0)
    s1 = vf.sigma.derivative(Y, 1)
    D = Yp - s0
    I = np.einsum("nuw,nwb->nub", J.dF, D)
    Ip = (np.einsum("nuwa,nwb->nuab", J.dFp, D)
          + np.einsum("nuvw,nvb,nwa->nuab", J.d2F, D, Yp)
          + np.einsum("nuw,nwab->nuab", J.dF, Ypp - np.einsum("nwbj,nja->nwab", s1, Yp)))
    leb_steps = np.einsum("nuw,nw->nu", J.dF[:-1], Ydot[:-1] - vf.mu.derivative(Y[:-1], 0)) * grid.dt
    rough_steps = (np.einsum("nub,nb->nu", I[:-1], rZ.increments[start:end])
                   + np.einsum("nuab,nab->nu", Ip[:-1], rZ.blocks[start:end]))
    zero = np.zeros((1, I.shape[1]))
    return {"lhs": J.F - J.F[0],
            "lebesgue": np.concatenate([zero, np.cumsum(leb_steps, axis=0)]),
            "rough": np.concatenate([zero, np.cumsum(rough_steps, axis=0)])}


def rag_residual(vf: VectorFieldPair, scpY: StronglyControlledPath, g: RidgeField, rZ: RoughPath,
                 start: int = 0, terminal: Optional[int] = None) -> Dict[str, Any]:
    """Max over nodes of |lhs - lebesgue - rough| with the size of each side."""
    terms = rag_terms(vf, scpY, g, rZ, start, terminal)
    defect = _max_norm(terms["lhs"] - terms["lebesgue"] - terms["rough"])
    return {"mesh": rZ.grid.dt, "defect": defect, "lhs": _max_norm(terms["lhs"]),
            "lebesgue": _max_norm(terms["lebesgue"]), "rough": _max_norm(terms["rough"])}


def verify_rag(vf: VectorFieldPair, g: RidgeField, cases_by_mesh: Sequence[Sequence[tuple]],
               min_order: Optional[float] = None, max_final: Optional[float] = None) -> ConvergenceReport:
    """
    Alekseev-Groebner defects over a refinement family.

    Args:
        cases_by_mesh: Per mesh, (scpY, rZ) pairs.
    """
    records = [[rag_residual(vf, scpY, g, rZ) for scpY, rZ in cases] for cases in cases_by_mesh]
    return report_from_records("rough_alekseev_groebner", records, min_order=min_order, max_final=max_final,
                               info_keys=("lhs", "lebesgue", "rough"))
