from .errors import ConfigError, DivergenceError, GridMismatchError, InsufficientDataError, RoughFieldError, ShapeError
from .grid import GridPath, TimeGrid, TwoParamGrid, dyadic_grid
from .noise import CoupledBrownian, replica_rng, sample_brownian
from .lift import (BracketPath, MartingaleSample, RoughPath, bracket, canonical_lift, ito_lift, joint_lift,
                   stratonovich_lift)
from .controlled import ControlledPath, Jet, JetField, StronglyControlledPath, compose_fields
from .integration import rough_integral, rough_stochastic_integral
from .flows import backward_flow_jet, forward_flow_jet, rde_solve
from .reports import ConvergenceReport
from .formulas import verify_rag, verify_riw, verify_transport
from .stochastic import ScRSM, build_scrsm, verify_rsiw, verify_rsiw_martingale, verify_total_rsiw
from .iag import ItoProcessSpec, good_approximation_check, verify_dminus_identity, verify_iag, verify_iag_weak
from .scenarios import SCENARIOS, run_scenario

__all__ = [
    "RoughFieldError", "ShapeError", "GridMismatchError", "ConfigError", "InsufficientDataError", "DivergenceError",
    "TimeGrid", "GridPath", "TwoParamGrid", "dyadic_grid",
    "CoupledBrownian", "replica_rng", "sample_brownian",
    "RoughPath", "BracketPath", "MartingaleSample", "bracket", "ito_lift", "stratonovich_lift", "canonical_lift",
    "joint_lift",
    "ControlledPath", "StronglyControlledPath", "Jet", "JetField", "compose_fields",
    "rough_integral", "rough_stochastic_integral",
    "rde_solve", "forward_flow_jet", "backward_flow_jet",
    "ConvergenceReport",
    "verify_transport", "verify_riw", "verify_rag",
    "ScRSM", "build_scrsm", "verify_rsiw", "verify_rsiw_martingale", "verify_total_rsiw",
    "ItoProcessSpec", "verify_iag", "verify_iag_weak", "good_approximation_check", "verify_dminus_identity",
    "SCENARIOS", "run_scenario",
]
