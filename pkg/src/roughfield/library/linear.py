from typing import Sequence

import numpy as np

from .ridge import RidgeField, RidgeTerm


def zero(shape: Sequence[int], dim: int) -> RidgeField:
    return RidgeField(dim, tuple(shape), name="zero")


def constant(value, dim: int) -> RidgeField:
    """Field with constant value (any tensor shape)."""
    c = np.atleast_1d(np.asarray(value, dtype=np.float64))
    return RidgeField(dim, c.shape, offset=c, name="constant")


def linear(coefficients, offset=None) -> RidgeField:
    """
    Affine field x -> coefficients . x + offset.

    Args:
        coefficients: Shape out_shape + (dim,).
        offset: Shape out_shape, zero when omitted.
    """
    A = np.asarray(coefficients, dtype=np.float64)
    if A.ndim < 2:
        raise ValueError(f"linear coefficients need shape out_shape + (dim,), got {A.shape}")
    out = A.shape[:-1]
    term = RidgeTerm("identity", np.ones(out), A, np.zeros(out))
    return RidgeField(A.shape[-1], out, (term,), offset, name="linear")


def identity(dim: int) -> RidgeField:
    """x -> x on R^dim."""
    f = linear(np.eye(dim))
    return RidgeField(f.dim, f.out_shape, f.terms, f.offset, name="identity")
