from .profiles import PROFILES, get_profile
from .ridge import RidgeField, RidgeTerm, ridge, sum_fields, derivative_defect
from .linear import zero, constant, linear, identity
from .pair import VectorFieldPair, driftless
from .registry import field_from_dict, fields_from_dict

__all__ = [
    "PROFILES", "get_profile",
    "RidgeField", "RidgeTerm", "ridge", "sum_fields", "derivative_defect",
    "zero", "constant", "linear", "identity",
    "VectorFieldPair", "driftless",
    "field_from_dict", "fields_from_dict",
]
