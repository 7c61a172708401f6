"""
Rough differential equations dX = mu(X) dt + sigma(X) dZ stepped by the
area-including scheme

    x <- x + mu(x) dt + sigma(x) dZ + (Gamma sigma)(x) : ZZ,

together with the exact first and second derivatives of the discrete flow
in the initial point, and the forward and backward flow jets.
"""
from __future__ import annotations
from dataclasses import dataclass
from typing import Dict, Optional, Tuple
import logging

import numpy as np

from .controlled import Box, Jet, JetField, StronglyControlledPath
from .errors import DivergenceError, ShapeError
from .grid import GridPath, TimeGrid
from .library import RidgeField, VectorFieldPair
from .lift import RoughPath, bracket

logger = logging.getLogger(__name__)

# States with a norm above this are treated as exploded
EXPLOSION_THRESHOLD = 1e8

State = Tuple[np.ndarray, Optional[np.ndarray], Optional[np.ndarray]]


def _check_driver(vf: VectorFieldPair, rZ: RoughPath) -> None:
    if rZ.dim != vf.noise_dim:
        raise ShapeError(f"sigma takes {vf.noise_dim} driver components, rough path has {rZ.dim}")


def _coefficients(vf: VectorFieldPair, x: np.ndarray, order: int) -> Dict[str, np.ndarray]:
    c = {"mu0": vf.mu.derivative(x, 0), "s0": vf.sigma.derivative(x, 0), "s1": vf.sigma.derivative(x, 1)}
    if order >= 1:
        c["mu1"] = vf.mu.derivative(x, 1)
        c["s2"] = vf.sigma.derivative(x, 2)
    if order >= 2:
        c["mu2"] = vf.mu.derivative(x, 2)
        c["s3"] = vf.sigma.derivative(x, 3)
    return c


def check_divergence(node: int, *arrays: Optional[np.ndarray]) -> None:
    """Raise DivergenceError when any array is non-finite or above EXPLOSION_THRESHOLD."""
    for a in arrays:
        if a is None:
            continue
        if not np.all(np.isfinite(a)) or np.max(np.abs(a), initial=0.0) > EXPLOSION_THRESHOLD:
            raise DivergenceError(f"flow state left the admissible range at node {node}", node=node)


def step(vf: VectorFieldPair, x: np.ndarray, A: Optional[np.ndarray], H: Optional[np.ndarray],
         dz: np.ndarray, zz: np.ndarray, dt: float, order: int = 0) -> State:
    """
    One scheme step for a batch of states, with the step map's derivatives.

    Args:
        vf: Vector fields.
        x: States, shape (B, d).
        A: Jacobians in the initial point, shape (B, d, d), for order >= 1.
        H: Hessians, shape (B, d, d, d), for order >= 2.
        dz: Driver increment, shape (m,).
        zz: Area block, shape (m, m).
        dt: Step size.
        order: 0 for states only, 1 with Jacobians, 2 with Hessians.
    """
    c = _coefficients(vf, x, order)
    s0, s1 = c["s0"], c["s1"]
    x_new = (x + c["mu0"] * dt + np.einsum("nia,a->ni", s0, dz)
             + np.einsum("nibj,nja,ab->ni", s1, s0, zz))
    if order == 0:
        return x_new, A, H
    s2 = c["s2"]
    D1 = (c["mu1"] * dt + np.einsum("niak,a->nik", s1, dz)
          + np.einsum("nibjk,nja,ab->nik", s2, s0, zz)
          + np.einsum("nibj,njak,ab->nik", s1, s1, zz))
    A_new = A + np.einsum("nik,nkp->nip", D1, A)
    if order == 1:
        return x_new, A_new, H
    s3 = c["s3"]
    T = np.einsum("nibjk,njal,ab->nikl", s2, s1, zz)
    D2 = (c["mu2"] * dt + np.einsum("niakl,a->nikl", s2, dz)
          + np.einsum("nibjkl,nja,ab->nikl", s3, s0, zz)
          + T + np.swapaxes(T, -1, -2)
          + np.einsum("nibj,njakl,ab->nikl", s1, s2, zz))
    H_new = H + np.einsum("nik,nkpq->nipq", D1, H) + np.einsum("nikl,nkp,nlq->nipq", D2, A, A)
    H_new = 0.5 * (H_new + np.swapaxes(H_new, -1, -2))
    return x_new, A_new, H_new


def _initial(points: np.ndarray, order: int) -> State:
    B, d = points.shape
    A = np.broadcast_to(np.eye(d), (B, d, d)).copy() if order >= 1 else None
    H = np.zeros((B, d, d, d)) if order >= 2 else None
    return points.copy(), A, H


def _points(vf: VectorFieldPair, points) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if pts.shape[1] != vf.dim:
        raise ShapeError(f"initial points must have dimension {vf.dim}, got {pts.shape}")
    return pts


@dataclass(frozen=True, eq=False)
class FlowTable:
    """
    Flow phi(s, t; x) from one start index over a set of initial points.

    Nodes before `start` hold the initial data (x, Id, 0).

    Attributes:
        grid: Time grid.
        start: Start index s.
        points: Initial points, shape (B, d).
        states: phi(s, t_k; x_b), shape (n_steps + 1, B, d).
        jacobians: D phi, shape (n_steps + 1, B, d, d), or None.
        hessians: D^2 phi, shape (n_steps + 1, B, d, d, d), or None.
    """
    grid: TimeGrid
    start: int
    points: np.ndarray
    states: np.ndarray
    jacobians: Optional[np.ndarray] = None
    hessians: Optional[np.ndarray] = None

    def path(self, b: int = 0) -> GridPath:
        return GridPath(self.grid, self.states[:, b])

    def jacobian_path(self, b: int = 0) -> GridPath:
        if self.jacobians is None:
            raise ValueError("flow table was computed without Jacobians")
        return GridPath(self.grid, self.jacobians[:, b])

    def hessian_path(self, b: int = 0) -> GridPath:
        if self.hessians is None:
            raise ValueError("flow table was computed without Hessians")
        return GridPath(self.grid, self.hessians[:, b])


def flow_table(vf: VectorFieldPair, rZ: RoughPath, s: int, points, order: int = 0,
               stop: Optional[int] = None) -> FlowTable:
    """
    Step every initial point from node s, recording all nodes up to `stop`
    (default the last node); later nodes repeat the value at `stop`.
    """
    _check_driver(vf, rZ)
    grid = rZ.grid
    s = grid.check_index(s)
    stop = grid.n_steps if stop is None else grid.check_index(stop)
    pts = _points(vf, points)
    x, A, H = _initial(pts, order)
    n, B, d = grid.n_steps, pts.shape[0], vf.dim
    states = np.empty((n + 1, B, d))
    jacs = np.empty((n + 1, B, d, d)) if order >= 1 else None
    hess = np.empty((n + 1, B, d, d, d)) if order >= 2 else None

    def record(k):
        states[k] = x
        if jacs is not None:
            jacs[k] = A
        if hess is not None:
            hess[k] = H

    for k in range(s + 1):
        record(k)
    dZ, blocks, dt = rZ.increments, rZ.blocks, grid.dt
    for k in range(s, max(stop, s)):
        x, A, H = step(vf, x, A, H, dZ[k], blocks[k], dt, order)
        check_divergence(k + 1, x, A, H)
        record(k + 1)
    for k in range(max(stop, s) + 1, n + 1):
        record(k)
    return FlowTable(grid, s, pts, states, jacs, hess)


def flow_to(vf: VectorFieldPair, rZ: RoughPath, starts, points, end: int, order: int = 0) -> State:
    """
    phi(t_{starts[b]}, t_end; points[b]) for a batch with individual start nodes.

    All trajectories share the driver steps; trajectory b joins the sweep at
    its start node. Returns states and, as requested, Jacobians and Hessians
    at `end`.
    """
    _check_driver(vf, rZ)
    end = rZ.grid.check_index(end)
    pts = _points(vf, points)
    starts = np.broadcast_to(np.asarray(starts, dtype=np.int64), (pts.shape[0],))
    if starts.size and (starts.min() < 0 or starts.max() > end):
        raise IndexError(f"start nodes must lie in [0, {end}]")
    x, A, H = _initial(pts, order)
    if not starts.size:
        return x, A, H
    dZ, blocks, dt = rZ.increments, rZ.blocks, rZ.grid.dt
    for k in range(int(starts.min()), end):
        active = starts <= k
        if active.all():
            x, A, H = step(vf, x, A, H, dZ[k], blocks[k], dt, order)
            check_divergence(k + 1, x, A, H)
            continue
        idx = np.nonzero(active)[0]
        xs, As, Hs = step(vf, x[idx], None if A is None else A[idx], None if H is None else H[idx],
                          dZ[k], blocks[k], dt, order)
        check_divergence(k + 1, xs, As, Hs)
        x[idx] = xs
        if A is not None:
            A[idx] = As
        if H is not None:
            H[idx] = Hs
    return x, A, H


def rde_solve(vf: VectorFieldPair, rZ: RoughPath, s: int, x0) -> GridPath:
    """
    Solution started at x0 at node s; nodes before s hold x0.

    Raises:
        DivergenceError: at the first node where the state explodes.
    """
    return flow_table(vf, rZ, s, x0).path(0)


def rde_jacobian(vf: VectorFieldPair, rZ: RoughPath, s: int, x0) -> GridPath:
    """D_x phi(s, t; x0), stepped jointly with the state; Id up to node s."""
    return flow_table(vf, rZ, s, x0, order=1).jacobian_path(0)


def rde_hessian(vf: VectorFieldPair, rZ: RoughPath, s: int, x0) -> GridPath:
    """D_x^2 phi(s, t; x0), symmetric at every node; zero up to node s."""
    return flow_table(vf, rZ, s, x0, order=2).hessian_path(0)


def forward_flow_jet(vf: VectorFieldPair, rZ: RoughPath, s: int, box: Optional[Box] = None,
                     resolution: int = 21) -> JetField:
    """
    The field (phi, sigma(phi), D phi, (Gamma sigma)(phi), D(sigma o phi), D^2 phi, mu(phi))
    with phi = phi(s, t; x), defined for t >= s.
    """
    _check_driver(vf, rZ)
    s = rZ.grid.check_index(s)
    d, m = vf.dim, vf.noise_dim

    def evaluator(ks, xs):
        if ks.size and ks.min() < s:
            raise IndexError(f"forward flow jet from node {s} evaluated at node {int(ks.min())}")
        unique, inverse = np.unique(xs, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        table = flow_table(vf, rZ, s, unique, order=2, stop=int(ks.max()) if ks.size else s)
        phi = table.states[ks, inverse]
        A = table.jacobians[ks, inverse]
        H = table.hessians[ks, inverse]
        s0 = vf.sigma.derivative(phi, 0)
        s1 = vf.sigma.derivative(phi, 1)
        return Jet(phi, s0, A,
                   np.einsum("nibj,nja->niab", s1, s0),
                   np.einsum("niaj,njw->niwa", s1, A),
                   H,
                   vf.mu.derivative(phi, 0))

    return JetField(rZ.grid, d, d, m, evaluator, box=box, resolution=resolution, name=f"forward[{s}]")


def backward_flow_jet(vf: VectorFieldPair, rZ: RoughPath, g: RidgeField, terminal: Optional[int] = None,
                      box: Optional[Box] = None, resolution: int = 21) -> JetField:
    """
    The field F_t(x) = g(phi(t, t_terminal; x)) for t <= t_terminal.

    With dF, d2F from the chain rule through the flow, the remaining slots are

        F'        = -dF sigma
        F''(a,b)  = d2F(sigma_a, sigma_b) + dF D sigma_a sigma_b
        dF'(w, a) = -(d2F(w, sigma_a) + dF D sigma_a w)
        Fdot      = -dF mu + (1/2 d2F(sigma, sigma) + dF Gamma sigma) : [Z]-rate

    all evaluated at x; the bracket rate is zero for geometric drivers.

    Args:
        g: Terminal function, vector valued on R^d.
        terminal: Terminal node; the last node when omitted.
    """
    _check_driver(vf, rZ)
    if g.dim != vf.dim or len(g.out_shape) != 1:
        raise ShapeError(f"terminal function must map R^{vf.dim} to vectors, got {g.out_shape} on R^{g.dim}")
    grid = rZ.grid
    end = grid.n_steps if terminal is None else grid.check_index(terminal)
    rate = np.zeros((grid.n_steps + 1, vf.noise_dim, vf.noise_dim)) if rZ.geometric else bracket(rZ).rate().values
    d, m, U = vf.dim, vf.noise_dim, g.out_shape[0]

    def evaluator(ks, xs):
        if ks.size and ks.max() > end:
            raise IndexError(f"backward flow jet to node {end} evaluated at node {int(ks.max())}")
        phi, A, H = flow_to(vf, rZ, ks, xs, end, order=2)
        g1 = g.derivative(phi, 1)
        g2 = g.derivative(phi, 2)
        dF = np.einsum("nuj,njw->nuw", g1, A)
        d2F = np.einsum("nujk,njw,nkv->nuwv", g2, A, A) + np.einsum("nuj,njwv->nuwv", g1, H)
        s0 = vf.sigma.derivative(xs, 0)
        s1 = vf.sigma.derivative(xs, 1)
        Fp = -np.einsum("nuw,nwa->nua", dF, s0)
        # (D sigma_a sigma_b)_j = sum_k s1[j, a, k] s0[k, b]
        ds = np.einsum("njak,nkb->njab", s1, s0)
        Fpp = np.einsum("nuvw,nva,nwb->nuab", d2F, s0, s0) + np.einsum("nuj,njab->nuab", dF, ds)
        dFp = -(np.einsum("nuwv,nva->nuwa", d2F, s0) + np.einsum("nuj,njaw->nuwa", dF, s1))
        correction = 0.5 * np.einsum("nuvw,nva,nwb->nuab", d2F, s0, s0) + np.einsum("nuj,njba->nuab", dF, ds)
        Fdot = (-np.einsum("nuw,nw->nu", dF, vf.mu.derivative(xs, 0))
                + np.einsum("nuab,nab->nu", correction, rate[ks]))
        return Jet(g.derivative(phi, 0), Fp, dF, Fpp, dFp, d2F, Fdot)

    return JetField(grid, d, U, m, evaluator, box=box, resolution=resolution, name=f"backward[{end}]")


def solution_jet(vf: VectorFieldPair, rZ: RoughPath, s: int, x0) -> StronglyControlledPath:
    """
    The solution started at (s, x0) with its jet (sigma(Y), (Gamma sigma)(Y), mu(Y)).

    Nodes before s hold x0 with a zero jet.
    """
    Y = rde_solve(vf, rZ, s, x0)
    s = rZ.grid.check_index(s)
    Yp = vf.sigma.derivative(Y.values, 0)
    Ypp = vf.gamma(Y.values)
    Ydot = vf.mu.derivative(Y.values, 0)
    for a in (Yp, Ypp, Ydot):
        a[:s] = 0.0
    grid = rZ.grid
    return StronglyControlledPath(Y, GridPath(grid, Yp), GridPath(grid, Ypp), GridPath(grid, Ydot))
