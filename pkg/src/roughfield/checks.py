"""
Self-checks of the building blocks on random Brownian cases: the algebraic
identities that hold exactly on the grid, the brackets of the Brownian
lifts, and the scheme against linear equations with closed-form solutions.

Per-case functions return plain records (dicts with "mesh" and the checked
quantities); the `*_report` functions summarize one list of records per
mesh, coarse to fine.
"""
from __future__ import annotations
from typing import Any, Dict, Sequence
import logging

import numpy as np
from scipy.linalg import expm

from .controlled import ControlledPath
from .errors import InsufficientDataError, ShapeError
from .flows import rde_jacobian, rde_solve
from .grid import GridPath, check_same_grid, increment
from .integration import rough_integral, stopped_consistency_check
from .library import constant, driftless, linear
from .lift import RoughPath, bracket, chen_defect, ibp_integrals, joint_lift, realized_martingale
from .reports import ConvergenceReport, report_from_records

logger = logging.getLogger(__name__)

# Largest admissible defect of an identity that holds exactly on the grid
ALGEBRAIC_TOLERANCE = 1e-10

ALGEBRAIC_KEYS = ("ibp", "joint_blocks", "joint_bracket", "chen", "stopped_rsi", "additivity")


def _max_abs(a) -> float:
    return float(np.max(np.abs(a), initial=0.0))


# ---------------------------------------------------------------------------
# Algebraic identities
# ---------------------------------------------------------------------------

def _three_nodes(n_steps: int, rng: np.random.Generator) -> np.ndarray:
    if n_steps < 2:
        raise ValueError(f"three distinct nodes need at least 2 steps, got {n_steps}")
    return np.sort(rng.choice(n_steps + 1, size=3, replace=False))


def algebraic_defects(rX: RoughPath, B: GridPath, rng: np.random.Generator) -> Dict[str, Any]:
    """
    Defects of the identities that hold exactly for compensated sums, on one
    random case built from the driver X and an independent Brownian B:

        ibp            Pi(M;X) + Pi(X;M)^T - dM (x) dX over a random [s, t]
        joint_blocks   blocks of the joint lift (X; M) against area_X, 0 and dM (x) dX
        joint_bracket  off-diagonal block of the joint lift's bracket
        chen           Chen defects of the lift and of the joint lift
        stopped_rsi    rough stochastic integral frozen at a random node against
                       the integral of the frozen inputs
        additivity     rough integral over [s, u] + [u, t] against [s, t]

    The integrand is Y = c cos(X) + M with dY = -c diag(sin X) and
    M = theta B, c and theta drawn from `rng`, as are the nodes.
    """
    check_same_grid(rX, B)
    V = rX.dim
    if B.shape != (V,):
        raise ShapeError(f"the martingale must have the driver's shape ({V},), got {B.shape}")
    grid = rX.grid
    n = grid.n_steps
    c = rng.uniform(0.5, 1.5, size=V)
    theta = rng.uniform(0.1, 1.0, size=V)
    M = realized_martingale(GridPath(grid, theta * B.values))
    X = rX.base.values

    s, u, t = _three_nodes(n, rng)
    pi_mx, pi_xm = ibp_integrals(M.path, rX.base)
    outer = np.multiply.outer(increment(M.path, s, t), increment(rX.base, s, t))
    ibp = _max_abs(pi_mx.value(s, t) + pi_xm.value(s, t).T - outer)

    joint = joint_lift(rX, M)
    dX, dM = rX.increments, M.path.increments
    blocks = joint.blocks
    joint_blocks = max(_max_abs(blocks[:, :V, :V] - rX.blocks), _max_abs(blocks[:, :V, V:]),
                       _max_abs(blocks[:, V:, :V] - dM[:, :, None] * dX[:, None, :]))
    joint_bracket = _max_abs(bracket(joint).values[:, :V, V:])
    chen = max(chen_defect(rX), chen_defect(joint))

    Y = GridPath(grid, c * np.cos(X) + M.values)
    dY = GridPath(grid, np.einsum("na,ab->nab", -c * np.sin(X), np.eye(V)))
    stop = int(rng.integers(0, n + 1))
    stopped = stopped_consistency_check(Y, dY, M, rX, stop)

    cp = ControlledPath(Y - M.path, dY)
    additivity = _max_abs(rough_integral(cp, rX, s, t) - rough_integral(cp, rX, s, u) - rough_integral(cp, rX, u, t))

    record = {"mesh": grid.dt, "ibp": ibp, "joint_blocks": joint_blocks, "joint_bracket": joint_bracket,
              "chen": chen, "stopped_rsi": stopped, "additivity": additivity}
    record["defect"] = max(record[k] for k in ALGEBRAIC_KEYS)
    logger.debug("algebraic defects at dt=%.4g: %s", grid.dt, {k: f"{record[k]:.2e}" for k in ALGEBRAIC_KEYS})
    return record


def exactness_report(records_by_mesh: Sequence[Sequence[Dict[str, Any]]],
                     tolerance: float = ALGEBRAIC_TOLERANCE) -> ConvergenceReport:
    """Passes when every defect of every case stays within `tolerance`."""
    report = report_from_records("algebraic_exactness", records_by_mesh, info_keys=ALGEBRAIC_KEYS)
    worst = max(float(r["defect"]) for recs in records_by_mesh for r in recs)
    report.extras["worst"] = worst
    report.extras["tolerance"] = tolerance
    report.passed = worst <= tolerance
    logger.info("algebraic_exactness: worst defect %.3e against %.1e", worst, tolerance)
    return report


# ---------------------------------------------------------------------------
# Brackets of the Brownian lifts
# ---------------------------------------------------------------------------

def bracket_record(ito: RoughPath, stratonovich: RoughPath) -> Dict[str, Any]:
    """Terminal brackets [W]_T of an Ito and a Stratonovich lift of the same path."""
    check_same_grid(ito, stratonovich)
    if ito.geometric or not stratonovich.geometric:
        raise ValueError(f"expected an Ito and a geometric lift, got {ito.kind} and {stratonovich.kind}")
    return {"mesh": ito.grid.dt, "ito": bracket(ito).values[-1].tolist(),
            "stratonovich": bracket(stratonovich).values[-1].tolist()}


def bracket_report(records_by_mesh: Sequence[Sequence[Dict[str, Any]]], horizon: float,
                   tolerance: float = 0.05) -> ConvergenceReport:
    """
    Replica means of the Ito bracket against horizon * Id.

    The residual of a mesh is max |mean [W]_T - T Id| / T over the entries;
    the report passes when every mesh stays within `tolerance` and every
    Stratonovich bracket within tolerance * T of zero.
    """
    if not records_by_mesh or any(len(recs) < 2 for recs in records_by_mesh):
        raise InsufficientDataError("bracket_statistics: every mesh needs at least two replicas")
    meshes, residuals, means, strato = [], [], [], []
    for recs in records_by_mesh:
        ito = np.array([r["ito"] for r in recs], dtype=np.float64)
        mean = ito.mean(axis=0)
        meshes.append(float(recs[0]["mesh"]))
        residuals.append([_max_abs(mean - horizon * np.eye(mean.shape[0])) / horizon])
        means.append(mean.tolist())
        strato.append(max(_max_abs(r["stratonovich"]) for r in recs) / horizon)
    extras = {"replicas": len(records_by_mesh[0]), "ito_mean": means, "stratonovich_max": strato,
              "tolerance": tolerance}
    report = ConvergenceReport.from_residuals("bracket_statistics", meshes, residuals, extras=extras)
    report.passed = max(r[0] for r in residuals) <= tolerance and max(strato) <= tolerance
    logger.info("bracket_statistics: largest relative deviation %.3e", max(r[0] for r in residuals))
    return report


# ---------------------------------------------------------------------------
# Linear equations with closed-form solutions
# ---------------------------------------------------------------------------

def geometric_error(rW: RoughPath, x0: float = 1.0, drift: float = 0.0, volatility: float = 1.0) -> Dict[str, Any]:
    """
    |Y_T - x0 exp(drift T + volatility W_T)| for dY = drift Y dt + volatility Y dW
    driven by a scalar geometric lift.
    """
    if rW.dim != 1:
        raise ShapeError(f"the geometric Brownian motion is driven by one component, got {rW.dim}")
    if not rW.geometric:
        raise ValueError(f"the exponential solution needs a geometric lift, got {rW.kind}")
    vf = driftless(linear([[[volatility]]]), linear([[drift]]))
    Y = rde_solve(vf, rW, 0, [x0])
    T = float(rW.grid.times[-1])
    exact = x0 * np.exp(drift * T + volatility * (rW.base.values[-1, 0] - rW.base.values[0, 0]))
    return {"mesh": rW.grid.dt, "defect": abs(float(Y.values[-1, 0]) - exact), "exact": float(exact)}


def linear_jacobian_error(rW: RoughPath, A, noise) -> Dict[str, Any]:
    """
    max |D_x phi(0, T) - expm(A T)| for dY = A Y dt + noise dW; the Jacobian
    of the flow does not depend on the additive noise.
    """
    A = np.asarray(A, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    d = A.shape[0]
    if A.shape != (d, d) or noise.shape != (d, rW.dim):
        raise ShapeError(f"drift matrix {A.shape} and noise {noise.shape} do not fit a {rW.dim}-dimensional driver")
    vf = driftless(constant(noise, d), linear(A))
    J = rde_jacobian(vf, rW, 0, np.zeros(d)).values[-1]
    T = float(rW.grid.times[-1])
    return {"mesh": rW.grid.dt, "defect": _max_abs(J - expm(A * T))}


def verify_rde_oracle(drivers_by_mesh: Sequence[Sequence[RoughPath]], x0: float = 1.0, drift: float = 0.0,
                      volatility: float = 1.0, A=((-0.5, 1.0), (-1.0, -0.5)), noise=((0.3,), (0.1,)),
                      min_order: float = 0.9, tolerance: float = 1e-3) -> Sequence[ConvergenceReport]:
    """Strong error against the exponential solution and the linear-drift Jacobian against expm."""
    gbm = [[geometric_error(rW, x0, drift, volatility) for rW in drivers] for drivers in drivers_by_mesh]
    jac = [[linear_jacobian_error(rW, A, noise) for rW in drivers] for drivers in drivers_by_mesh]
    return [report_from_records("geometric_strong_error", gbm, min_order=min_order),
            report_from_records("linear_jacobian", jac, max_final=tolerance)]
