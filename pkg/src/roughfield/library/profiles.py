"""Scalar profiles h with derivatives h^(n), n = 0..MAX_ORDER, elementwise on arrays."""
from typing import Callable, Dict

import numpy as np

MAX_ORDER = 4

Profile = Callable[[np.ndarray, int], np.ndarray]


def _check(order: int) -> None:
    if not 0 <= order <= MAX_ORDER:
        raise ValueError(f"profile derivative order must lie in [0, {MAX_ORDER}], got {order}")


def identity(z: np.ndarray, order: int) -> np.ndarray:
    _check(order)
    if order == 0:
        return z.copy()
    if order == 1:
        return np.ones_like(z)
    return np.zeros_like(z)


def square(z: np.ndarray, order: int) -> np.ndarray:
    _check(order)
    return [z ** 2, 2.0 * z, np.full_like(z, 2.0), np.zeros_like(z), np.zeros_like(z)][order]


def cube(z: np.ndarray, order: int) -> np.ndarray:
    _check(order)
    return [z ** 3, 3.0 * z ** 2, 6.0 * z, np.full_like(z, 6.0), np.zeros_like(z)][order]


def sin(z: np.ndarray, order: int) -> np.ndarray:
    _check(order)
    s, c = np.sin(z), np.cos(z)
    return [s, c, -s, -c, s][order]


def cos(z: np.ndarray, order: int) -> np.ndarray:
    _check(order)
    s, c = np.sin(z), np.cos(z)
    return [c, -s, -c, s, c][order]


def tanh(z: np.ndarray, order: int) -> np.ndarray:
    _check(order)
    t = np.tanh(z)
    s = 1.0 - t ** 2
    if order == 0:
        return t
    if order == 1:
        return s
    if order == 2:
        return -2.0 * t * s
    if order == 3:
        return (6.0 * t ** 2 - 2.0) * s
    return (16.0 * t - 24.0 * t ** 3) * s


def exp(z: np.ndarray, order: int) -> np.ndarray:
    _check(order)
    return np.exp(z)


def zero(z: np.ndarray, order: int) -> np.ndarray:
    _check(order)
    return np.zeros_like(z)


PROFILES: Dict[str, Profile] = {
    "identity": identity,
    "square": square,
    "cube": cube,
    "sin": sin,
    "cos": cos,
    "tanh": tanh,
    "exp": exp,
    "zero": zero,
}


def get_profile(name: str) -> Profile:
    try:
        return PROFILES[name]
    except KeyError:
        raise ValueError(f"unknown profile '{name}', expected one of {sorted(PROFILES)}") from None
