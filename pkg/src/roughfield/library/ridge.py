from __future__ import annotations
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple
import math

import numpy as np

from ..errors import ShapeError
from .profiles import get_profile


@dataclass(frozen=True, eq=False)
class RidgeTerm:
    """
    One ridge term A * h(w . x + b), entrywise over the output shape.

    Attributes:
        profile: Name of the scalar profile h.
        amplitude: A, shape out_shape.
        weights: w, shape out_shape + (dim,).
        shift: b, shape out_shape.
    """
    profile: str
    amplitude: np.ndarray
    weights: np.ndarray
    shift: np.ndarray

    def __post_init__(self):
        get_profile(self.profile)
        amp = np.asarray(self.amplitude, dtype=np.float64)
        w = np.asarray(self.weights, dtype=np.float64)
        b = np.broadcast_to(np.asarray(self.shift, dtype=np.float64), amp.shape).copy()
        if w.shape[:-1] != amp.shape:
            raise ShapeError(f"ridge weights must have shape {amp.shape} + (dim,), got {w.shape}")
        object.__setattr__(self, "amplitude", amp)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "shift", b)


@dataclass(frozen=True, eq=False)
class RidgeField:
    """
    Smooth tensor field x -> C + sum_k A_k h_k(w_k . x + b_k) on R^dim.

    Every derivative is analytic:
        D^n f(x)[..., j_1..j_n] = sum_k A_k h_k^(n)(w_k . x + b_k) w_k[j_1] ... w_k[j_n].

    Attributes:
        dim: Dimension of the argument.
        out_shape: Shape of the values.
        terms: Ridge terms.
        offset: Constant part C, shape out_shape.
        name: Label for logs and reports.
    """
    dim: int
    out_shape: Tuple[int, ...]
    terms: Tuple[RidgeTerm, ...] = ()
    offset: Optional[np.ndarray] = None
    name: str = "ridge"

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError(f"dim must be >= 1, got {self.dim}")
        out = tuple(int(s) for s in self.out_shape)
        object.__setattr__(self, "out_shape", out)
        object.__setattr__(self, "terms", tuple(self.terms))
        for term in self.terms:
            if term.amplitude.shape != out or term.weights.shape[-1] != self.dim:
                raise ShapeError(f"ridge term shapes {term.amplitude.shape}/{term.weights.shape} "
                                 f"do not fit field {out} on R^{self.dim}")
        offset = np.zeros(out) if self.offset is None else np.asarray(self.offset, dtype=np.float64)
        if offset.shape != out:
            raise ShapeError(f"offset must have shape {out}, got {offset.shape}")
        object.__setattr__(self, "offset", offset)

    @property
    def size(self) -> int:
        return math.prod(self.out_shape)

    def derivative(self, x, order: int) -> np.ndarray:
        """
        n-th derivative at x.

        Args:
            x: Point of shape (dim,) or batch of shape (B, dim).
            order: Derivative order, 0 for the value.

        Returns:
            Array of shape [B,] + out_shape + (dim,) * order.
        """
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        xb = x[None, :] if single else x
        if xb.ndim != 2 or xb.shape[1] != self.dim:
            raise ShapeError(f"field '{self.name}' takes points of dimension {self.dim}, got {x.shape}")
        B, P, d = xb.shape[0], self.size, self.dim
        out = np.zeros((B, P) + (d,) * order)
        if order == 0:
            out += self.offset.reshape(P)
        for term in self.terms:
            w = term.weights.reshape(P, d)
            z = xb @ w.T + term.shift.reshape(P)
            coeff = term.amplitude.reshape(P) * get_profile(term.profile)(z, order)
            power = np.ones(P)
            for i in range(order):
                power = power[..., None] * w.reshape((P,) + (1,) * i + (d,))
            out += coeff.reshape((B, P) + (1,) * order) * power[None]
        out = out.reshape((B,) + self.out_shape + (d,) * order)
        return out[0] if single else out

    def value(self, x) -> np.ndarray:
        return self.derivative(x, 0)

    def jacobian(self, x) -> np.ndarray:
        return self.derivative(x, 1)

    def hessian(self, x) -> np.ndarray:
        return self.derivative(x, 2)

    def __add__(self, other: "RidgeField") -> "RidgeField":
        if other.dim != self.dim or other.out_shape != self.out_shape:
            raise ShapeError(f"cannot add fields '{self.name}' and '{other.name}' of different shapes")
        return RidgeField(self.dim, self.out_shape, self.terms + other.terms,
                          self.offset + other.offset, name=f"{self.name}+{other.name}")


def ridge(profile: str, amplitude, weights, shift=0.0, offset=None, dim: Optional[int] = None) -> RidgeField:
    """
    Single-profile ridge field.

    Args:
        profile: Scalar profile name (identity, square, cube, sin, cos, tanh, exp).
        amplitude: Output-shaped amplitudes (a scalar gives a scalar-shaped field of shape (1,)).
        weights: Shape out_shape + (dim,), or (dim,) to share the direction across entries.
        shift: Scalar or output-shaped shifts.
        offset: Constant part.
        dim: Argument dimension, inferred from weights when omitted.
    """
    amp = np.atleast_1d(np.asarray(amplitude, dtype=np.float64))
    w = np.asarray(weights, dtype=np.float64)
    d = w.shape[-1] if dim is None else dim
    if w.shape == (d,):
        w = np.broadcast_to(w, amp.shape + (d,)).copy()
    term = RidgeTerm(profile, amp, w, shift)
    return RidgeField(d, amp.shape, (term,), offset, name=profile)


def sum_fields(fields: Sequence[RidgeField]) -> RidgeField:
    if not fields:
        raise ValueError("sum_fields needs at least one field")
    total = fields[0]
    for f in fields[1:]:
        total = total + f
    return total


def derivative_defect(f: RidgeField, points: np.ndarray, h: float = 1e-5, max_order: int = 3) -> float:
    """
    Largest deviation of D^n f from central differences of D^(n-1) f,
    n = 1..max_order, over the given points.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    worst = 0.0
    for order in range(1, max_order + 1):
        exact = f.derivative(points, order)
        for j in range(f.dim):
            e = np.zeros(f.dim)
            e[j] = h
            fd = (f.derivative(points + e, order - 1) - f.derivative(points - e, order - 1)) / (2 * h)
            worst = max(worst, float(np.max(np.abs(fd - exact[..., j]))))
    return worst
