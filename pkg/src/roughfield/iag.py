"""
Ito-Alekseev-Groebner checks on Brownian replicas.

The flow field F_t = f o phi(t, T; .) is re-solved per replica against the
realized lift of that replica's Brownian path. On top of it this module
builds the partition decomposition and its weak form, the forward-backward
interpolation formula, Stratonovich limits along piecewise-linear
approximations, and the linear equations behind the Malliavin derivative
of a scalar flow.

Per-replica functions return plain records (dicts with "mesh" and the
checked quantities); the `*_report` functions summarize one list of
records per mesh, coarse to fine.
"""
from __future__ import annotations
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union
import logging

import numpy as np
from scipy.stats import norm

from .controlled import ControlledPath, JetField
from .errors import InsufficientDataError, ShapeError
from .flows import backward_flow_jet, check_divergence, flow_to, rde_solve, solution_jet, step
from .formulas import rag_terms
from .grid import GridPath
from .integration import rough_integral
from .library import RidgeField, VectorFieldPair, identity
from .library import constant as constant_coefficient
from .lift import DEFAULT_REFINE, RoughPath, bracket, ito_lift, stratonovich_lift
from .noise import SeedLike
from .reports import EXACT_TOLERANCE, ConvergenceReport, report_from_records

logger = logging.getLogger(__name__)

PROCESS_KINDS = ("constant", "flow", "functional")

# Number of partition intervals used when none is given
DEFAULT_PARTITION = 4

_LIFT_KINDS = {"ito": "ito", "strato": "stratonovich", "stratonovich": "stratonovich"}


# ---------------------------------------------------------------------------
# Processes and realized fields
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ItoProcessSpec:
    """
    Coefficients (b, beta) of the Ito process Y compared against the flow.

    Attributes:
        kind: "constant" for fixed (b, beta), "flow" for (b, beta) = (mu, sigma)(Y)
            stepped exactly like the flow, "functional" for registry fields of Y.
        drift: b, a field R^d -> R^d; unused for kind "flow".
        diffusion: beta, a field R^d -> (d, m) matrices; unused for kind "flow".
    """
    kind: str
    drift: Optional[RidgeField] = None
    diffusion: Optional[RidgeField] = None

    def __post_init__(self):
        if self.kind not in PROCESS_KINDS:
            raise ValueError(f"unknown process kind {self.kind!r}, expected one of {PROCESS_KINDS}")
        if self.kind == "flow":
            return
        if self.drift is None or self.diffusion is None:
            raise ValueError(f"process kind '{self.kind}' needs both drift and diffusion")
        if self.kind == "constant" and (self.drift.terms or self.diffusion.terms):
            raise ValueError("constant process coefficients must not depend on the state")

    @classmethod
    def constant(cls, b, beta) -> "ItoProcessSpec":
        b = np.atleast_1d(np.asarray(b, dtype=np.float64))
        beta = np.asarray(beta, dtype=np.float64).reshape(b.size, -1)
        return cls("constant", constant_coefficient(b, b.size), constant_coefficient(beta, b.size))

    def coefficients(self, vf: VectorFieldPair) -> VectorFieldPair:
        """(b, beta) as a vector-field pair shaped like vf."""
        if self.kind == "flow":
            return vf
        pair = VectorFieldPair(self.drift, self.diffusion)
        if pair.dim != vf.dim or pair.noise_dim != vf.noise_dim:
            raise ShapeError(f"process coefficients act on R^{pair.dim} with {pair.noise_dim} noises, "
                             f"the flow on R^{vf.dim} with {vf.noise_dim}")
        return pair


def realized_lift(W: Union[GridPath, RoughPath], lift_kind: str = "ito", refine: int = DEFAULT_REFINE,
                  seed: SeedLike = None) -> RoughPath:
    """The requested lift of a Brownian path; a rough path of that kind passes through."""
    if lift_kind not in _LIFT_KINDS:
        raise ValueError(f"unknown lift kind {lift_kind!r}, expected 'ito' or 'strato'")
    kind = _LIFT_KINDS[lift_kind]
    if isinstance(W, RoughPath):
        if W.kind != kind:
            raise ValueError(f"driver is a '{W.kind}' lift, expected '{kind}'")
        return W
    lift = ito_lift if kind == "ito" else stratonovich_lift
    return lift(W, refine, seed)


def terminal_field_realized(vf: VectorFieldPair, f: RidgeField, W: Union[GridPath, RoughPath],
                            lift_kind: str = "ito", refine: int = DEFAULT_REFINE, seed: SeedLike = None,
                            terminal: Optional[int] = None) -> JetField:
    """
    F_t(x) = f(phi(t, T; x)) with the flow driven by the chosen lift of one
    realized Brownian path.
    """
    return backward_flow_jet(vf, realized_lift(W, lift_kind, refine, seed), f, terminal)


# ---------------------------------------------------------------------------
# Monte Carlo helpers
# ---------------------------------------------------------------------------

def mean_zero_test(samples, sigmas: float = 3.0, slack: float = 0.0) -> Dict[str, Any]:
    """
    Two-sided test of a zero mean, per component.

    Passes when |mean| <= sigmas * SE + slack in every component. Samples are
    reduced in replica order.

    Args:
        samples: Shape (replicas, ...).
    """
    x = np.asarray(samples, dtype=np.float64)
    x = x.reshape(x.shape[0], -1)
    if x.shape[0] < 2:
        raise InsufficientDataError(f"a mean test needs at least 2 samples, got {x.shape[0]}")
    mean = x.mean(axis=0)
    se = x.std(axis=0, ddof=1) / np.sqrt(x.shape[0])
    z = np.divide(np.abs(mean), se, out=np.zeros_like(mean), where=se > 0)
    passed = bool(np.all(np.abs(mean) <= sigmas * se + slack + EXACT_TOLERANCE))
    return {"mean": mean.tolist(), "se": se.tolist(), "z": z.tolist(),
            "p_value": float(np.min(2.0 * norm.sf(z))), "passed": passed}


def weak_report(name: str, records_by_mesh: Sequence[Sequence[Dict[str, Any]]], C: float = 1.0,
                sigmas: float = 3.0) -> ConvergenceReport:
    """
    Monte Carlo comparison of E[lhs] and E[rhs] per mesh.

    The residual of a mesh is |mean(lhs - rhs)|; the report passes when every
    mesh satisfies |mean| <= sigmas * SE + C * sqrt(dt) componentwise.
    """
    if not records_by_mesh or any(len(recs) < 2 for recs in records_by_mesh):
        raise InsufficientDataError(f"{name}: every mesh needs at least two replicas")
    meshes, residuals, tests = [], [], []
    lhs_means, rhs_means = [], []
    for recs in records_by_mesh:
        h = float(recs[0]["mesh"])
        lhs = np.array([np.atleast_1d(r["lhs"]) for r in recs], dtype=np.float64)
        rhs = np.array([np.atleast_1d(r["rhs"]) for r in recs], dtype=np.float64)
        test = mean_zero_test(lhs - rhs, sigmas, C * np.sqrt(h))
        meshes.append(h)
        residuals.append([float(np.linalg.norm(test["mean"]))])
        tests.append(test)
        lhs_means.append(lhs.mean(axis=0).tolist())
        rhs_means.append(rhs.mean(axis=0).tolist())
    extras = {"replicas": len(records_by_mesh[0]), "tests": tests, "lhs_mean": lhs_means, "rhs_mean": rhs_means,
              "C": C, "sigmas": sigmas}
    report = ConvergenceReport.from_residuals(name, meshes, residuals, extras=extras)
    report.passed = all(t["passed"] for t in tests)
    logger.info("%s: weak test %s", name, "passed" if report.passed else "failed")
    return report


def _generator(DF: np.ndarray, D2F: np.ndarray, drift: np.ndarray, diffusion: np.ndarray,
               rate: np.ndarray) -> np.ndarray:
    """DF b + 1/2 D2F(beta_a, beta_b) rate[a, b], batched."""
    return (np.einsum("nuw,nw->nu", DF, drift)
            + 0.5 * np.einsum("nuvw,nva,nwb,nab->nu", D2F, diffusion, diffusion, rate))


# ---------------------------------------------------------------------------
# Partition decomposition
# ---------------------------------------------------------------------------

def uniform_partition(n_steps: int, size: int = DEFAULT_PARTITION) -> np.ndarray:
    """Nodes 0 = p_0 < ... < p_size = n_steps, equally spaced."""
    if size < 1 or n_steps % size:
        raise ValueError(f"partition size {size} must divide the {n_steps} grid steps")
    return np.arange(0, n_steps + 1, n_steps // size)


def _check_partition(partition, n_steps: int) -> np.ndarray:
    p = np.asarray(partition, dtype=np.int64).reshape(-1)
    if p.size < 2 or p[0] != 0 or p[-1] != n_steps or np.any(np.diff(p) <= 0):
        raise ValueError(f"partition must increase strictly from 0 to {n_steps}, got {p.tolist()}")
    return p


def _restarted_flow(vf: VectorFieldPair, rW: RoughPath, Y: np.ndarray, nodes: np.ndarray) -> np.ndarray:
    """Flow states at nodes 0..n-1, restarted from Y at every partition node."""
    n = rW.grid.n_steps
    out = np.empty((n, vf.dim))
    restart = set(nodes.tolist())
    x = Y[:1].copy()
    for k in range(n):
        if k in restart:
            x = Y[k:k + 1].copy()
        out[k] = x[0]
        x, _, _ = step(vf, x, None, None, rW.increments[k], rW.blocks[k], rW.grid.dt)
        check_divergence(k + 1, x)
    return out


def iag_partition_sum(vf: VectorFieldPair, f: RidgeField, process: ItoProcessSpec, rW: RoughPath, y0,
                      partition=None) -> Dict[str, Any]:
    """
    Partition decomposition of F_T(Y_T) - F_0(Y_0), F_t = f o phi(t, T; .),
    for one Brownian path given by its Ito lift:

        lhs = L + S + (scheme defects),
        S = sum_i sum_r [DF_{p_{i+1}}(Y_r) beta_r - DF_{p_{i+1}}(Xt_r) sigma(Xt_r)] dW_r,
        L = sum_i sum_r [L^{beta,b} F_{p_{i+1}}(Y_r) - L^{sigma,mu} F_{p_{i+1}}(Xt_r)] dt,

    with r running over [p_i, p_{i+1}), Xt the flow restarted from Y at each
    partition node and L^{beta,b} = DF b + 1/2 D2F(beta, beta) : [W]-rate.

    Args:
        process: Coefficients of Y; Y is stepped by the flow's scheme on rW.
        partition: Node indices from 0 to n; DEFAULT_PARTITION equal intervals when omitted.

    Returns:
        Record with "lhs", "L_pi", "S_pi" as lists and "defect" = |lhs - L - S|.
    """
    if rW.kind != "ito":
        raise ValueError(f"the partition sum needs the Ito lift of the Brownian path, got '{rW.kind}'")
    grid = rW.grid
    n = grid.n_steps
    p = _check_partition(uniform_partition(n) if partition is None else partition, n)
    coeffs = process.coefficients(vf)
    Y = rde_solve(coeffs, rW, 0, y0).values
    Xt = _restarted_flow(vf, rW, Y, p[:-1])

    F = backward_flow_jet(vf, rW, f)
    upcoming = p[np.searchsorted(p, np.arange(n), side="right")]
    J = F.evaluate_batch(np.concatenate([upcoming, upcoming]), np.concatenate([Y[:-1], Xt]))
    DFy, DFx = J.dF[:n], J.dF[n:]
    D2Fy, D2Fx = J.d2F[:n], J.d2F[n:]

    dW = rW.increments
    rate = bracket(rW).rate().values[:-1]
    b, beta = coeffs.mu.derivative(Y[:-1], 0), coeffs.sigma.derivative(Y[:-1], 0)
    mu, sig = vf.mu.derivative(Xt, 0), vf.sigma.derivative(Xt, 0)
    S = (np.einsum("nuw,nwa,na->u", DFy, beta, dW) - np.einsum("nuw,nwa,na->u", DFx, sig, dW))
    L = (_generator(DFy, D2Fy, b, beta, rate) - _generator(DFx, D2Fx, mu, sig, rate)).sum(axis=0) * grid.dt
    lhs = f.derivative(Y[-1], 0) - F.evaluate(0, Y[0]).F
    defect = float(np.linalg.norm(lhs - L - S))
    logger.debug("iag partition sum at dt=%.4g over %d intervals: defect %.3g", grid.dt, p.size - 1, defect)
    return {"mesh": grid.dt, "defect": defect, "lhs": lhs.tolist(), "L_pi": L.tolist(), "S_pi": S.tolist(),
            "intervals": int(p.size - 1)}


def iag_report(records_by_mesh: Sequence[Sequence[Dict[str, Any]]], min_order: Optional[float] = None,
               max_final: Optional[float] = None, sigmas: float = 3.0) -> ConvergenceReport:
    """
    Summarize partition sums: fitted order of the per-path defect, a zero-mean
    test of S on the finest mesh, and the Cauchy differences of S between
    consecutive meshes (records of one replica share its Brownian path).
    """
    report = report_from_records("iag_partition", records_by_mesh, min_order=min_order, max_final=max_final)
    finest = np.array([r["S_pi"] for r in records_by_mesh[-1]])
    centering = mean_zero_test(finest, sigmas)
    cauchy = []
    for coarse, fine in zip(records_by_mesh, records_by_mesh[1:]):
        gaps = [np.linalg.norm(np.subtract(a["S_pi"], b["S_pi"])) for a, b in zip(coarse, fine)]
        cauchy.append(float(np.median(gaps)))
    report.extras.update({"centering": centering, "S_pi_cauchy": cauchy})
    report.passed = report.passed and centering["passed"]
    return report


def verify_iag(vf: VectorFieldPair, f: RidgeField, process: ItoProcessSpec,
               drivers_by_mesh: Sequence[Sequence[RoughPath]], y0, partition_size: int = DEFAULT_PARTITION,
               min_order: Optional[float] = None, max_final: Optional[float] = None,
               sigmas: float = 3.0) -> ConvergenceReport:
    """Partition sums over a refinement family of Ito lifts."""
    records = [[iag_partition_sum(vf, f, process, rW, y0, uniform_partition(rW.grid.n_steps, partition_size))
                for rW in drivers] for drivers in drivers_by_mesh]
    return iag_report(records, min_order, max_final, sigmas)


def iag_weak_sample(vf: VectorFieldPair, f: RidgeField, process: ItoProcessSpec, rW: RoughPath, y0
                    ) -> Dict[str, Any]:
    """
    One replica of the weak identity

        E[F_T(Y_T) - F_0(Y_0)] = E sum_r [DF_r(Y_r)(b - mu)(Y_r)
                                         + 1/2 D2F_r(Y_r)((beta, beta) - (sigma, sigma))] dt,

    with F_r evaluated at the node of Y_r.
    """
    if rW.kind != "ito":
        raise ValueError(f"the weak identity needs the Ito lift of the Brownian path, got '{rW.kind}'")
    grid = rW.grid
    n = grid.n_steps
    coeffs = process.coefficients(vf)
    Y = rde_solve(coeffs, rW, 0, y0).values
    F = backward_flow_jet(vf, rW, f)
    J = F.evaluate_batch(np.arange(n), Y[:-1])
    eye = np.broadcast_to(np.eye(vf.noise_dim), (n, vf.noise_dim, vf.noise_dim))
    own = _generator(J.dF, J.d2F, coeffs.mu.derivative(Y[:-1], 0), coeffs.sigma.derivative(Y[:-1], 0), eye)
    flow = _generator(J.dF, J.d2F, vf.mu.derivative(Y[:-1], 0), vf.sigma.derivative(Y[:-1], 0), eye)
    rhs = (own - flow).sum(axis=0) * grid.dt
    lhs = f.derivative(Y[-1], 0) - J.F[0]
    return {"mesh": grid.dt, "lhs": lhs.tolist(), "rhs": rhs.tolist()}


def verify_iag_weak(vf: VectorFieldPair, f: RidgeField, process: ItoProcessSpec,
                    drivers_by_mesh: Sequence[Sequence[RoughPath]], y0, C: float = 1.0,
                    sigmas: float = 3.0) -> ConvergenceReport:
    """Weak form of the Ito-Alekseev-Groebner formula over a refinement family."""
    records = [[iag_weak_sample(vf, f, process, rW, y0) for rW in drivers] for drivers in drivers_by_mesh]
    return weak_report("iag_weak", records, C, sigmas)


# ---------------------------------------------------------------------------
# Forward-backward interpolation
# ---------------------------------------------------------------------------

def _check_pairs(vf: VectorFieldPair, vf_hat: VectorFieldPair) -> None:
    if vf.dim != vf_hat.dim or vf.noise_dim != vf_hat.noise_dim:
        raise ShapeError(f"vector-field pairs differ in shape: R^{vf.dim} x {vf.noise_dim} "
                         f"against R^{vf_hat.dim} x {vf_hat.noise_dim}")


def interpolation_formula(vf: VectorFieldPair, vf_hat: VectorFieldPair, rZ: RoughPath, x, s: int = 0,
                          t: Optional[int] = None) -> Dict[str, Any]:
    """
    Forward-backward interpolation between the flows of vf_hat and vf:

        Xh(s, t; x) - X(s, t; x) = sum DX(u, t; Xh_u)(mu_hat - mu)(Xh_u) du
                                   + int DX(u, t; Xh_u)(sigma_hat - sigma)(Xh_u) dZ,

    the rough integral compensated with the derivative of its integrand.

    Returns:
        Record with the defect (max over nodes in [s, t] of the running
        identity), |Xh - X| at t and the size of both right-hand terms.
    """
    _check_pairs(vf, vf_hat)
    end = rZ.grid.n_steps if t is None else rZ.grid.check_index(t)
    terms = rag_terms(vf, solution_jet(vf_hat, rZ, s, x), identity(vf.dim), rZ, s, end)
    gap = terms["lhs"] - terms["lebesgue"] - terms["rough"]
    return {"mesh": rZ.grid.dt, "defect": float(np.max(np.linalg.norm(gap, axis=1))),
            "difference": float(np.linalg.norm(terms["lhs"][-1])),
            "lebesgue": float(np.linalg.norm(terms["lebesgue"][-1])),
            "rough": float(np.linalg.norm(terms["rough"][-1]))}


def verify_interpolation(vf: VectorFieldPair, vf_hat: VectorFieldPair,
                         drivers_by_mesh: Sequence[Sequence[RoughPath]], x, s_frac: float = 0.0,
                         t_frac: float = 1.0, min_order: Optional[float] = None,
                         max_final: Optional[float] = None) -> ConvergenceReport:
    """
    Interpolation defects over a refinement family; s and t are given as
    fractions of the horizon so that they sit on every mesh.
    """
    if not 0.0 <= s_frac < t_frac <= 1.0:
        raise ValueError(f"need 0 <= s_frac < t_frac <= 1, got ({s_frac}, {t_frac})")
    records = []
    for drivers in drivers_by_mesh:
        recs = []
        for rZ in drivers:
            n = rZ.grid.n_steps
            recs.append(interpolation_formula(vf, vf_hat, rZ, x, int(round(s_frac * n)), int(round(t_frac * n))))
        records.append(recs)
    return report_from_records("interpolation", records, min_order=min_order, max_final=max_final,
                               info_keys=("difference", "lebesgue", "rough"))


def interpolation_weak_sample(vf: VectorFieldPair, vf_hat: VectorFieldPair, rZ: RoughPath, x) -> Dict[str, Any]:
    """
    One replica of the Stratonovich interpolation formula in expectation:

        E[Xh_T - X_T] = E sum_u [A_u (mu_hat - mu) + 1/2 H_u : (sigma_hat sigma_hat^T - sigma sigma^T)
                                 + 1/2 A_u ((D sigma_hat) sigma_hat - (D sigma) sigma)](Xh_u) du,

    with A_u, H_u the first and second derivatives of the flow of vf from u to T.
    """
    _check_pairs(vf, vf_hat)
    if not rZ.geometric:
        raise ValueError(f"the interpolation check needs a geometric driver, got a '{rZ.kind}' lift")
    grid = rZ.grid
    n = grid.n_steps
    Xh = rde_solve(vf_hat, rZ, 0, x).values
    X_T = rde_solve(vf, rZ, 0, x).values[-1]
    pts = Xh[:-1]
    _, A, H = flow_to(vf, rZ, np.arange(n), pts, n, order=2)

    def pieces(pair):
        s0 = pair.sigma.derivative(pts, 0)
        s1 = pair.sigma.derivative(pts, 1)
        return (pair.mu.derivative(pts, 0), np.einsum("nia,nja->nij", s0, s0),
                np.einsum("niaj,nja->ni", s1, s0))

    mu_h, cov_h, corr_h = pieces(vf_hat)
    mu_0, cov_0, corr_0 = pieces(vf)
    integrand = (np.einsum("nki,ni->nk", A, mu_h - mu_0 + 0.5 * (corr_h - corr_0))
                 + 0.5 * np.einsum("nkij,nij->nk", H, cov_h - cov_0))
    return {"mesh": grid.dt, "lhs": (Xh[-1] - X_T).tolist(), "rhs": (integrand.sum(axis=0) * grid.dt).tolist()}


def verify_interpolation_weak(vf: VectorFieldPair, vf_hat: VectorFieldPair,
                              drivers_by_mesh: Sequence[Sequence[RoughPath]], x, C: float = 1.0,
                              sigmas: float = 3.0) -> ConvergenceReport:
    """Weak interpolation formula over a refinement family of Stratonovich lifts."""
    records = [[interpolation_weak_sample(vf, vf_hat, rZ, x) for rZ in drivers] for drivers in drivers_by_mesh]
    return weak_report("interpolation_weak", records, C, sigmas)


# ---------------------------------------------------------------------------
# Good approximations
# ---------------------------------------------------------------------------

def good_approximation_residuals(phi: ControlledPath, rZ: RoughPath, levels: Sequence[int]
                                 ) -> List[Dict[str, Any]]:
    """
    |classical integral - rough integral| per skeleton level for one replica.

    On the skeleton with 2**level intervals of length h the piecewise-linear
    approximation of W has slope dW_j / h on interval j, so the classical
    integral is sum_j (int_{I_j} phi du) dW_j / h, the inner integral by the
    trapezoid rule on the working grid.

    Returns:
        One record per level, coarse to fine.
    """
    if not rZ.geometric:
        raise ValueError(f"good approximations converge to the Stratonovich integral, got a '{rZ.kind}' lift")
    grid = rZ.grid
    n = grid.n_steps
    levels = sorted(set(int(lv) for lv in levels))
    rough = rough_integral(phi, rZ, 0, n)
    vals = phi.Y.values
    cumulative = np.concatenate([np.zeros_like(vals[:1]),
                                 np.cumsum(0.5 * (vals[1:] + vals[:-1]) * grid.dt, axis=0)])
    W = rZ.base.values
    records = []
    for level in levels:
        cells = 2 ** level
        if cells > n or n % cells:
            raise ValueError(f"skeleton with {cells} intervals does not fit {n} grid steps")
        idx = np.arange(0, n + 1, n // cells)
        h = grid.dt * (n // cells)
        classical = np.einsum("n...v,nv->...", np.diff(cumulative[idx], axis=0), np.diff(W[idx], axis=0)) / h
        records.append({"mesh": h, "defect": float(np.linalg.norm(classical - rough)), "level": level})
    return records


def good_approximation_check(cases: Sequence[Tuple[ControlledPath, RoughPath]], levels: Sequence[int],
                             min_order: Optional[float] = None,
                             max_final: Optional[float] = None) -> ConvergenceReport:
    """
    Classical integrals along piecewise-linear approximations against the
    rough integral, per skeleton level (the report's meshes are the skeleton
    spacings).

    Args:
        cases: Per replica, the integrand as a controlled path and the
            Stratonovich lift of W on the working grid.
        levels: Skeleton levels; 2**level must divide the working grid.
    """
    per_replica = [good_approximation_residuals(phi, rZ, levels) for phi, rZ in cases]
    records = [list(recs) for recs in zip(*per_replica)]
    return report_from_records("good_approximation", records, min_order=min_order, max_final=max_final)


# ---------------------------------------------------------------------------
# Malliavin derivative of a scalar flow
# ---------------------------------------------------------------------------

def _scalar_jet(field: RidgeField, x: float, top: int) -> np.ndarray:
    pt = np.array([[x]])
    return np.array([field.derivative(pt, k).reshape(-1)[0] for k in range(top + 1)])


def verify_dminus_identity(mu: RidgeField, sigma: RidgeField, x: float, rW: RoughPath, u: int = 0) -> Dict[str, Any]:
    """
    Steps (X, A, B, C) jointly from node u, where

        dA = mu'(X) A dt + sigma'(X) A dW,
        dB = (mu''(X) A^2 + mu'(X) B) dt + (sigma''(X) A^2 + sigma'(X) B) dW,
        dC = (s mu''(X) A^2 + mu'(X) C) dt + (s sigma''(X) A^2 + sigma'(X) C) dW,

    s = sigma(x), from A = 1, B = 0, C = sigma'(x), all with the
    area-including scheme of the augmented system. Returns the largest
    |C - sigma'(x) A - sigma(x) B| along the path.

    C - sigma'(x) A - sigma(x) B solves the same linear equation as A, B
    and C, and the scheme is linear in the augmented state, so the residual
    stays at roundoff on every mesh rather than shrinking with it. Reports
    built from it are exact and carry no order threshold.
    """
    if mu.dim != 1 or sigma.out_shape != (1, 1) or rW.dim != 1:
        raise ShapeError("the Malliavin derivative identity is stepped for scalar equations only")
    grid = rW.grid
    u = grid.check_index(u)
    x = float(np.asarray(x, dtype=np.float64).reshape(-1)[0])
    c0, c1 = _scalar_jet(sigma, x, 1)
    z = np.array([x, 1.0, 0.0, c1])
    dW, area = rW.increments[:, 0], rW.blocks[:, 0, 0]
    worst, largest = 0.0, 0.0
    for k in range(u, grid.n_steps):
        X, A, B, Cc = z
        m0, m1, m2 = _scalar_jet(mu, X, 2)
        q0, q1, q2, q3 = _scalar_jet(sigma, X, 3)
        drift = np.array([m0, m1 * A, m2 * A * A + m1 * B, c0 * m2 * A * A + m1 * Cc])
        diffusion = np.array([q0, q1 * A, q2 * A * A + q1 * B, c0 * q2 * A * A + q1 * Cc])
        jacobian = np.array([[q1, 0.0, 0.0, 0.0],
                             [q2 * A, q1, 0.0, 0.0],
                             [q3 * A * A + q2 * B, 2.0 * q2 * A, q1, 0.0],
                             [c0 * q3 * A * A + q2 * Cc, 2.0 * c0 * q2 * A, 0.0, q1]])
        z = z + drift * grid.dt + diffusion * dW[k] + (jacobian @ diffusion) * area[k]
        check_divergence(k + 1, z)
        worst = max(worst, abs(z[3] - c1 * z[1] - c0 * z[2]))
        largest = max(largest, abs(z[1]), abs(z[2]))
    return {"mesh": grid.dt, "defect": float(worst), "max_AB": float(largest)}


def verify_dminus(mu: RidgeField, sigma: RidgeField, x: float, drivers_by_mesh: Sequence[Sequence[RoughPath]],
                  u_frac: float = 0.0, min_order: Optional[float] = None,
                  max_final: Optional[float] = None) -> ConvergenceReport:
    """Malliavin derivative identity over a refinement family; u as a fraction of the horizon."""
    if not 0.0 <= u_frac < 1.0:
        raise ValueError(f"u_frac must lie in [0, 1), got {u_frac}")
    records = [[verify_dminus_identity(mu, sigma, x, rW, int(round(u_frac * rW.grid.n_steps))) for rW in drivers]
               for drivers in drivers_by_mesh]
    return report_from_records("dminus_identity", records, min_order=min_order, max_final=max_final,
                               info_keys=("max_AB",))


