"""
Compensated Riemann sums: rough integrals, Riemann-Stieltjes sums and the
rough stochastic integral of a path split as (Y - M) + M.
"""
from __future__ import annotations
from typing import Union
import logging

import numpy as np

from .controlled import ControlledPath, remainder_2
from .errors import ShapeError
from .grid import GridPath, check_same_grid
from .lift import MartingaleSample, RoughPath

logger = logging.getLogger(__name__)


def _rough_steps(Y: np.ndarray, Yp: np.ndarray, dX: np.ndarray, blocks: np.ndarray) -> np.ndarray:
    """Per-interval compensated terms Y_k dX_k + Y'_k XX_k."""
    return np.einsum("n...v,nv->n...", Y, dX) + np.einsum("n...ab,nab->n...", Yp, blocks)


def _check_integrand(cp: ControlledPath, rX: RoughPath) -> None:
    check_same_grid(cp.Y, rX)
    V = rX.dim
    if cp.Y.shape[-1:] != (V,) or cp.Yp.shape[-2:] != (V, V):
        raise ShapeError(f"integrand Y {cp.Y.shape} with Y' {cp.Yp.shape} does not act on a {V}-dimensional driver")


def rough_integral_path(cp: ControlledPath, rX: RoughPath) -> GridPath:
    """
    Running compensated sums I_k = sum_{m<k} (Y_m dX_m + Y'_m XX_m).

    Args:
        cp: Integrand Y with values in L(V; W), Y' in L(V (x) V; W) with
            Y'(a (x) b) at [..., a, b].
        rX: Rough path over V.
    """
    _check_integrand(cp, rX)
    steps = _rough_steps(cp.Y.values[:-1], cp.Yp.values[:-1], rX.increments, rX.blocks)
    return GridPath.from_increments(rX.grid, steps)


def rough_integral(cp: ControlledPath, rX: RoughPath, i: int, j: int) -> np.ndarray:
    """
    sum over consecutive intervals in [t_i, t_j] of Y_u dX_{u,v} + Y'_u XX_{u,v}.

    Additive over concatenation and linear in (Y, Y').
    """
    rX.grid.check_index(i)
    rX.grid.check_index(j)
    if i >= j:
        raise ValueError(f"rough_integral needs i < j, got ({i}, {j})")
    _check_integrand(cp, rX)
    steps = _rough_steps(cp.Y.values[i:j], cp.Yp.values[i:j], rX.increments[i:j], rX.blocks[i:j])
    return steps.sum(axis=0)


def rs_integral(phi: GridPath, driver: GridPath) -> GridPath:
    """
    Left-point Riemann-Stieltjes sums sum_{m<k} phi_m . d(driver)_m.

    The trailing axes of phi must match the driver's shape; they are contracted.
    """
    check_same_grid(phi, driver)
    dshape = driver.shape
    if phi.shape[len(phi.shape) - len(dshape):] != dshape:
        raise ShapeError(f"integrand shape {phi.shape} does not end with driver shape {dshape}")
    size = int(np.prod(dshape))
    out = phi.shape[:len(phi.shape) - len(dshape)]
    P = phi.values[:-1].reshape((phi.n_steps,) + out + (size,))
    dD = driver.increments.reshape(driver.n_steps, size)
    steps = np.einsum("n...d,nd->n...", P, dD)
    if not out:
        steps = steps[:, None]
    return GridPath.from_increments(phi.grid, steps)


def _martingale_path(M: Union[MartingaleSample, GridPath]) -> GridPath:
    return M.path if isinstance(M, MartingaleSample) else M


def rough_stochastic_integral(Y: GridPath, dY: GridPath, M: Union[MartingaleSample, GridPath],
                              rX: RoughPath) -> GridPath:
    """
    Running rough stochastic integral of (Y, dY) with the martingale part M split off:

        int (Y, dY) dX := int (Y - M, dY) dX + int M dX,

    the first a compensated rough integral, the second the integration-by-parts
    integral whose one-step value on the grid is M_{k+1} dX_k.

    Args:
        Y: Integrand with values in L(V; W).
        dY: Its derivative in the rough direction, values in L(V (x) V; W).
        M: Martingale part, same shape as Y.
        rX: Rough path over V.
    """
    Mp = _martingale_path(M)
    check_same_grid(Y, dY, Mp, rX)
    if Mp.shape != Y.shape:
        raise ShapeError(f"martingale shape {Mp.shape} differs from integrand shape {Y.shape}")
    cp = ControlledPath(Y - Mp, dY)
    if logger.isEnabledFor(logging.DEBUG):
        logger.debug("rough stochastic integral: remainder of (Y - M, dY) = %.4g", remainder_2(cp, rX))
    steps = (_rough_steps(cp.Y.values[:-1], dY.values[:-1], rX.increments, rX.blocks)
             + np.einsum("n...v,nv->n...", Mp.values[1:], rX.increments))
    return GridPath.from_increments(rX.grid, steps)


def stop_path(p: GridPath, stop_idx: int) -> GridPath:
    return p.stopped(stop_idx)


def stop_rough_path(r: RoughPath, stop_idx: int) -> RoughPath:
    return r.stopped(stop_idx)


def stopped_consistency_check(Y: GridPath, dY: GridPath, M: Union[MartingaleSample, GridPath],
                              rX: RoughPath, stop_idx: int) -> float:
    """
    max over nodes of |RSI(Y, dY; M, X) frozen at stop_idx - RSI of the frozen inputs|.
    """
    k = rX.grid.check_index(stop_idx)
    Mp = _martingale_path(M)
    frozen_output = rough_stochastic_integral(Y, dY, Mp, rX).stopped(k)
    of_frozen = rough_stochastic_integral(stop_path(Y, k), stop_path(dY, k), stop_path(Mp, k),
                                          stop_rough_path(rX, k))
    return float(np.max(np.abs(frozen_output.values - of_frozen.values)))
