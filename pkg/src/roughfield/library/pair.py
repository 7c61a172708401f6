from __future__ import annotations
from dataclasses import dataclass
from typing import Optional
import logging

import numpy as np

from ..errors import ShapeError
from .linear import zero
from .ridge import RidgeField, derivative_defect

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class VectorFieldPair:
    """
    Drift mu: R^d -> R^d and diffusion sigma: R^d -> L(R^m; R^d), stored (d, m).
    """
    mu: RidgeField
    sigma: RidgeField

    def __post_init__(self):
        d = self.mu.dim
        if self.mu.out_shape != (d,):
            raise ShapeError(f"mu must map R^{d} to R^{d}, got out shape {self.mu.out_shape}")
        if self.sigma.dim != d or len(self.sigma.out_shape) != 2 or self.sigma.out_shape[0] != d:
            raise ShapeError(f"sigma must map R^{d} to (d, m) matrices, got {self.sigma.out_shape}")

    @property
    def dim(self) -> int:
        return self.mu.dim

    @property
    def noise_dim(self) -> int:
        return self.sigma.out_shape[1]

    def gamma(self, x) -> np.ndarray:
        """(Gamma sigma)(a (x) b) = D sigma_b . sigma_a, shape [B,] (d, m, m)."""
        s0 = self.sigma.derivative(x, 0)
        s1 = self.sigma.derivative(x, 1)
        return np.einsum("...ibj,...ja->...iab", s1, s0)

    def check_derivatives(self, points, h: float = 1e-5, tolerance: float = 1e-6) -> float:
        """Finite-difference audit of mu and sigma up to third order; raises on failure."""
        worst = max(derivative_defect(self.mu, points, h), derivative_defect(self.sigma, points, h))
        logger.debug("vector field derivative defect %.3g", worst)
        if worst > tolerance:
            raise ValueError(f"vector field derivatives disagree with finite differences by {worst:.3g}")
        return worst


def driftless(sigma: RidgeField, mu: Optional[RidgeField] = None) -> VectorFieldPair:
    """Pair (mu, sigma) with zero drift unless mu is given."""
    return VectorFieldPair(zero((sigma.dim,), sigma.dim) if mu is None else mu, sigma)
