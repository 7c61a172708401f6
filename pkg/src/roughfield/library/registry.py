"""Field construction from scenario configuration entries."""
from typing import Any, Dict, Optional

import numpy as np

from ..errors import ConfigError
from .linear import constant, identity, linear, zero
from .profiles import PROFILES
from .ridge import RidgeField, ridge, sum_fields

_FAMILY_KEYS = {
    "zero": ({"family", "shape"}, {"family", "shape"}),
    "constant": ({"family", "value"}, {"family", "value"}),
    "identity": ({"family"}, {"family"}),
    "linear": ({"family", "coefficients"}, {"family", "coefficients", "offset"}),
    "ridge": ({"family", "profile", "amplitude", "weights"},
              {"family", "profile", "amplitude", "weights", "shift", "offset"}),
    "sum": ({"family", "terms"}, {"family", "terms"}),
}


def _array(entry: Dict[str, Any], key: str, where: str) -> np.ndarray:
    try:
        return np.asarray(entry[key], dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}.{key}: not a numeric array ({exc})", key=f"{where}.{key}") from None


def field_from_dict(entry: Dict[str, Any], dim: int, where: str = "fields") -> RidgeField:
    """
    Build a field on R^dim from a registry entry {"family": ..., ...}.

    Raises:
        ConfigError: unknown family, missing or unknown key, or shapes that do not fit.
    """
    if not isinstance(entry, dict):
        raise ConfigError(f"{where}: field entry must be an object", key=where)
    family = entry.get("family")
    if family not in _FAMILY_KEYS:
        raise ConfigError(f"{where}.family: unknown family {family!r}, expected one of {sorted(_FAMILY_KEYS)}",
                          key=f"{where}.family")
    required, allowed = _FAMILY_KEYS[family]
    for key in sorted(set(entry) - allowed):
        raise ConfigError(f"{where}.{key}: unknown key for family '{family}'", key=f"{where}.{key}")
    for key in sorted(required - set(entry)):
        raise ConfigError(f"{where}.{key}: missing key for family '{family}'", key=f"{where}.{key}")
    try:
        if family == "zero":
            return zero(tuple(int(s) for s in entry["shape"]), dim)
        if family == "constant":
            return constant(_array(entry, "value", where), dim)
        if family == "identity":
            return identity(dim)
        if family == "linear":
            f = linear(_array(entry, "coefficients", where),
                       _array(entry, "offset", where) if "offset" in entry else None)
        elif family == "ridge":
            if entry["profile"] not in PROFILES:
                raise ConfigError(f"{where}.profile: unknown profile {entry['profile']!r}",
                                  key=f"{where}.profile")
            f = ridge(entry["profile"], _array(entry, "amplitude", where), _array(entry, "weights", where),
                      _array(entry, "shift", where) if "shift" in entry else 0.0,
                      _array(entry, "offset", where) if "offset" in entry else None, dim=dim)
        else:
            terms = entry["terms"]
            if not isinstance(terms, list) or not terms:
                raise ConfigError(f"{where}.terms: must be a non-empty list", key=f"{where}.terms")
            f = sum_fields([field_from_dict(t, dim, f"{where}.terms[{i}]") for i, t in enumerate(terms)])
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}", key=where) from None
    if f.dim != dim:
        raise ConfigError(f"{where}: field acts on R^{f.dim}, expected R^{dim}", key=where)
    return f


def fields_from_dict(entries: Dict[str, Any], dim: int, required=(), optional=()) -> Dict[str, Optional[RidgeField]]:
    """Build the named fields of a configuration's `fields` object."""
    if not isinstance(entries, dict):
        raise ConfigError("fields: must be an object", key="fields")
    allowed = set(required) | set(optional)
    for key in sorted(set(entries) - allowed):
        raise ConfigError(f"fields.{key}: unknown field name", key=f"fields.{key}")
    for key in sorted(set(required) - set(entries)):
        raise ConfigError(f"fields.{key}: missing field", key=f"fields.{key}")
    return {key: (field_from_dict(entries[key], dim, f"fields.{key}") if key in entries else None)
            for key in sorted(allowed)}
