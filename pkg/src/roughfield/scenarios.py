"""
Scenario configurations and the runner behind `roughfield run`.

A scenario file is strict JSON:

    {
      "schema_version": 1,
      "scenario": "transport",
      "seed": 20240611,
      "replicas": 20,
      "levels": [5, 6, 7, 8],
      "horizon": 1.0,
      "driver": {"kind": "brownian", "dim": 1, "lift": "stratonovich", "refine": 16},
      "fields": {"mu": {...}, "sigma": {...}, "g": {...}},
      "thresholds": {"min_order": 0.8, "max_final": 1e-3},
      "options": {"resolution": 21},
      "alpha": 0.4
    }

`levels` are dyadic levels of the working grid, coarse to fine. Fields are
registry entries on R^state_dim (`options.state_dim`, default 1). Unknown
keys at any level raise ConfigError naming the key.

Every replica draws its noise from (seed, replica, stream) and evaluates all
levels on one coupled path; replicas run in a process pool and their records
are reduced in replica order.
"""
from __future__ import annotations
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple, Union
import copy
import json
import logging
import warnings

import numpy as np

from .controlled import ControlledPath
from .checks import (algebraic_defects, bracket_record, bracket_report, exactness_report, geometric_error,
                     linear_jacobian_error)
from .diagnostics import git_describe
from .errors import ConfigError, DivergenceError, ShapeError
from .flows import backward_flow_jet, rde_solve, solution_jet
from .formulas import rag_residual, riw_residual, transport_residual
from .grid import GridPath, dyadic_grid
from .iag import (ItoProcessSpec, good_approximation_residuals, iag_partition_sum, iag_report, iag_weak_sample,
                  interpolation_formula, interpolation_weak_sample, uniform_partition, verify_dminus_identity,
                  weak_report)
from .library import RidgeField, VectorFieldPair, driftless, fields_from_dict
from .lift import DEFAULT_ALPHA, DEFAULT_REFINE, RoughPath, canonical_lift, smooth_driver
from .noise import CoupledBrownian, replica_rng
from .reports import ConvergenceReport, report_from_records
from .stochastic import (MARTINGALE_TERMS, RSIW_TERMS, ScRSM, build_scrsm, martingale_field,
                         martingale_from_integrand, rsiw_martingale_residual, rsiw_residual, total_rsiw_residual)

logger = logging.getLogger(__name__)

CONFIG_SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2
EXIT_DIVERGENCE = 3

_TOP_REQUIRED = ("schema_version", "scenario", "seed", "replicas", "levels", "driver", "fields")
_TOP_OPTIONAL = ("horizon", "thresholds", "options", "alpha")
_DRIVER_KEYS = {
    "brownian": ({"kind", "dim", "lift"}, {"kind", "dim", "lift", "refine"}),
    "smooth": ({"kind", "dim", "lift", "amplitudes", "frequencies"},
               {"kind", "dim", "lift", "refine", "amplitudes", "frequencies", "phases"}),
}
_THRESHOLD_KEYS = ("min_order", "max_order", "max_final", "tolerance", "sigmas")

Records = Dict[str, List[Dict[str, Any]]]


@dataclass(frozen=True)
class ScenarioConfig:
    """
    A validated scenario configuration.

    Attributes:
        scenario: Registered scenario name.
        seed: Master seed.
        replicas: Number of Monte Carlo replicas.
        levels: Dyadic levels, strictly increasing.
        horizon: T.
        driver: Driver entry, defaults filled in.
        fields: Registry fields by name; absent optional fields are None.
        thresholds: Pass thresholds.
        options: Scenario options, defaults filled in.
        alpha: Hoelder exponent carried by the lifts.
        raw: The configuration as read, echoed into the reports.
    """
    scenario: str
    seed: int
    replicas: int
    levels: Tuple[int, ...]
    horizon: float
    driver: Dict[str, Any]
    fields: Dict[str, Optional[RidgeField]]
    thresholds: Dict[str, float]
    options: Dict[str, Any]
    alpha: float
    raw: Dict[str, Any] = field(default_factory=dict)

    @property
    def state_dim(self) -> int:
        return int(self.options["state_dim"])

    @property
    def driver_dim(self) -> int:
        return int(self.driver["dim"])


@dataclass(frozen=True)
class Scenario:
    """
    A registered scenario.

    Attributes:
        description: One line for `list-scenarios`.
        replica: (config, replica index) -> records per report name, one per level.
        summarize: (config, records per report name and level) -> reports.
        required_fields: Field names that must be configured.
        optional_fields: Field names that may be configured.
        defaults: Allowed option keys with their documented defaults.
        drivers: Allowed driver kinds.
        lifts: Allowed lift kinds.
    """
    description: str
    replica: Callable[[ScenarioConfig, int], Records]
    summarize: Callable[[ScenarioConfig, Dict[str, List[List[Dict[str, Any]]]]], List[ConvergenceReport]]
    required_fields: Tuple[str, ...] = ()
    optional_fields: Tuple[str, ...] = ()
    defaults: Dict[str, Any] = field(default_factory=dict)
    drivers: Tuple[str, ...] = ("brownian", "smooth")
    lifts: Tuple[str, ...] = ("ito", "stratonovich", "canonical")


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

def _check_keys(entry: Dict[str, Any], required, allowed, where: str) -> None:
    if not isinstance(entry, dict):
        raise ConfigError(f"{where}: must be an object", key=where)
    prefix = f"{where}." if where else ""
    for key in sorted(set(entry) - set(allowed)):
        raise ConfigError(f"{prefix}{key}: unknown key", key=f"{prefix}{key}")
    for key in sorted(set(required) - set(entry)):
        raise ConfigError(f"{prefix}{key}: missing key", key=f"{prefix}{key}")


def _integer(value: Any, key: str, minimum: int) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
        raise ConfigError(f"{key}: expected an integer >= {minimum}, got {value!r}", key=key)
    return value


def _number(value: Any, key: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{key}: expected a number, got {value!r}", key=key)
    return float(value)


def _driver(entry: Dict[str, Any], scenario: Scenario) -> Dict[str, Any]:
    if not isinstance(entry, dict):
        raise ConfigError("driver: must be an object", key="driver")
    kind = entry.get("kind")
    if kind not in _DRIVER_KEYS or kind not in scenario.drivers:
        raise ConfigError(f"driver.kind: {kind!r} is not one of {list(scenario.drivers)}", key="driver.kind")
    _check_keys(entry, *_DRIVER_KEYS[kind], "driver")
    driver = dict(entry)
    driver["dim"] = _integer(entry["dim"], "driver.dim", 1)
    if entry["lift"] not in scenario.lifts:
        raise ConfigError(f"driver.lift: {entry['lift']!r} is not one of {list(scenario.lifts)}", key="driver.lift")
    if (kind == "smooth") != (entry["lift"] == "canonical"):
        raise ConfigError("driver.lift: smooth drivers take the canonical lift, Brownian drivers an Ito or "
                          "Stratonovich lift", key="driver.lift")
    refine = _integer(entry.get("refine", DEFAULT_REFINE), "driver.refine", 1)
    if refine & (refine - 1):
        raise ConfigError(f"driver.refine: must be a power of two, got {refine}", key="driver.refine")
    driver["refine"] = refine
    if kind == "smooth":
        for key in ("amplitudes", "frequencies", "phases"):
            if key in entry and (not isinstance(entry[key], list) or len(entry[key]) != driver["dim"]):
                raise ConfigError(f"driver.{key}: expected a list of {driver['dim']} numbers", key=f"driver.{key}")
    return driver


def config_from_dict(data: Dict[str, Any], seed: Optional[int] = None) -> ScenarioConfig:
    """
    Validate a configuration dictionary.

    Args:
        seed: Overrides the configured master seed.

    Raises:
        ConfigError: naming the first offending key.
    """
    _check_keys(data, _TOP_REQUIRED, _TOP_REQUIRED + _TOP_OPTIONAL, "")
    version = _integer(data["schema_version"], "schema_version", 1)
    if version > CONFIG_SCHEMA_VERSION:
        warnings.warn(
            f"Scenario schema version {version} is newer than supported version {CONFIG_SCHEMA_VERSION}. "
            "Some keys may not be understood.",
            UserWarning
        )
    name = data["scenario"]
    if name not in SCENARIOS:
        raise ConfigError(f"scenario: unknown scenario {name!r}, expected one of {sorted(SCENARIOS)}",
                          key="scenario")
    scenario = SCENARIOS[name]
    raw = copy.deepcopy(data)
    if seed is not None:
        raw["seed"] = seed
    master = _integer(raw["seed"], "seed", 0)
    replicas = _integer(data["replicas"], "replicas", 1)
    levels = data["levels"]
    if not isinstance(levels, list) or not levels:
        raise ConfigError("levels: expected a non-empty list of dyadic levels", key="levels")
    levels = tuple(_integer(lv, "levels", 1) for lv in levels)
    if any(b <= a for a, b in zip(levels, levels[1:])):
        raise ConfigError(f"levels: must increase strictly, got {list(levels)}", key="levels")
    horizon = _number(data.get("horizon", 1.0), "horizon")
    if horizon <= 0:
        raise ConfigError(f"horizon: must be positive, got {horizon}", key="horizon")
    alpha = _number(data.get("alpha", DEFAULT_ALPHA), "alpha")
    if not 1.0 / 3.0 < alpha <= 0.5:
        raise ConfigError(f"alpha: must lie in (1/3, 1/2], got {alpha}", key="alpha")
    driver = _driver(data["driver"], scenario)

    thresholds = data.get("thresholds", {})
    _check_keys(thresholds, (), _THRESHOLD_KEYS, "thresholds")
    thresholds = {k: _number(v, f"thresholds.{k}") for k, v in thresholds.items()}

    options = data.get("options", {})
    _check_keys(options, (), tuple(scenario.defaults), "options")
    options = {**scenario.defaults, **options}
    options["state_dim"] = _integer(options.get("state_dim", 1), "options.state_dim", 1)

    fields = fields_from_dict(data["fields"], options["state_dim"], scenario.required_fields,
                              scenario.optional_fields)
    config = ScenarioConfig(name, master, replicas, levels, horizon, driver, fields, thresholds, options,
                            alpha, raw)
    _check_field_shapes(config)
    logger.debug("scenario '%s': %d replicas on levels %s", name, replicas, list(levels))
    return config


def _check_field_shapes(cfg: ScenarioConfig) -> None:
    d, V = cfg.state_dim, cfg.driver_dim
    expected = {"mu": (d,), "mu_hat": (d,), "sigma": (d, V), "sigma_hat": (d, V)}
    for name, f in cfg.fields.items():
        if f is None:
            continue
        if name in expected and f.out_shape != expected[name]:
            raise ConfigError(f"fields.{name}: expected values of shape {expected[name]}, got {f.out_shape}",
                              key=f"fields.{name}")
        if name in ("g", "f") and len(f.out_shape) != 1:
            raise ConfigError(f"fields.{name}: must be vector valued, got shape {f.out_shape}", key=f"fields.{name}")


def load_config(path: Union[str, Path], seed: Optional[int] = None) -> ScenarioConfig:
    """Read and validate a scenario file."""
    try:
        with open(path, "r") as f:
            data = json.load(f)
    except OSError as exc:
        raise ConfigError(f"cannot read configuration {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"configuration {path} is not valid JSON: {exc}") from None
    return config_from_dict(data, seed)


# ---------------------------------------------------------------------------
# Per-replica building blocks
# ---------------------------------------------------------------------------

def _option_array(cfg: ScenarioConfig, key: str, shape: Tuple[int, ...], default: float = 0.0) -> np.ndarray:
    value = cfg.options.get(key)
    if value is None:
        return np.full(shape, default)
    try:
        arr = np.asarray(value, dtype=np.float64)
    except (TypeError, ValueError):
        raise ConfigError(f"options.{key}: not a numeric array", key=f"options.{key}") from None
    if arr.size != int(np.prod(shape)):
        raise ConfigError(f"options.{key}: expected shape {shape}, got {arr.shape}", key=f"options.{key}")
    return arr.reshape(shape)


def _fraction(cfg: ScenarioConfig, key: str, n_steps: int) -> int:
    return int(round(float(cfg.options[key]) * n_steps))


def coupled_source(cfg: ScenarioConfig, replica: int, stream: int = 0, dim: Optional[int] = None,
                   finest: Optional[int] = None) -> CoupledBrownian:
    """The replica's Brownian sample for one noise stream, shared by every level."""
    return CoupledBrownian(cfg.driver_dim if dim is None else dim, max(cfg.levels) if finest is None else finest,
                           replica_rng(cfg.seed, replica, stream), cfg.horizon, cfg.driver["refine"],
                           coarse_level=min(cfg.levels))


def replica_drivers(cfg: ScenarioConfig, replica: int) -> List[RoughPath]:
    """The configured rough driver at every level, coarse to fine."""
    if cfg.driver["kind"] == "smooth":
        path_fn = smooth_driver(cfg.driver["amplitudes"], cfg.driver["frequencies"], cfg.driver.get("phases"))
        return [canonical_lift(path_fn, dyadic_grid(lv, cfg.horizon), cfg.driver["refine"], cfg.alpha)
                for lv in cfg.levels]
    source = coupled_source(cfg, replica)
    return [source.lift(lv, cfg.driver["lift"], cfg.alpha) for lv in cfg.levels]


def _pair(cfg: ScenarioConfig, hat: bool = False) -> VectorFieldPair:
    f = cfg.fields
    if hat:
        mu = f.get("mu_hat") or f.get("mu")
        sigma = f.get("sigma_hat") or f["sigma"]
        return driftless(sigma, mu)
    return driftless(f["sigma"], f.get("mu"))


def _lattice(cfg: ScenarioConfig) -> np.ndarray:
    d = cfg.state_dim
    if cfg.options.get("points") is not None:
        pts = np.asarray(cfg.options["points"], dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != d:
            raise ConfigError(f"options.points: expected a list of {d}-dimensional points", key="options.points")
        return pts
    r = _option_integer(cfg, "resolution", 2)
    axes = [np.linspace(-1.0, 1.0, r)] * d
    return np.stack([g.reshape(-1) for g in np.meshgrid(*axes, indexing="ij")], axis=1)


def _option_integer(cfg: ScenarioConfig, key: str, minimum: int) -> int:
    return _integer(cfg.options[key], f"options.{key}", minimum)


def _single(name: str, info_keys: Tuple[str, ...] = ()):
    """Summarizer for a scenario with one report built from its records."""

    def summarize(cfg, records):
        t = cfg.thresholds
        return [report_from_records(name, records[name], min_order=t.get("min_order"), max_order=t.get("max_order"),
                                    max_final=t.get("max_final"), info_keys=info_keys)]

    return summarize


# ---------------------------------------------------------------------------
# Deterministic composition identities
# ---------------------------------------------------------------------------

def _transport_replica(cfg: ScenarioConfig, replica: int) -> Records:
    vf, g, pts = _pair(cfg), cfg.fields["g"], _lattice(cfg)
    return {"rough_transport": [transport_residual(vf, g, rZ, pts, _fraction(cfg, "s_frac", rZ.grid.n_steps))
                                for rZ in replica_drivers(cfg, replica)]}


def _riw_replica(cfg: ScenarioConfig, replica: int) -> Records:
    vf, vf_field, g = _pair(cfg), _pair(cfg, hat=True), cfg.fields["g"]
    y0 = _option_array(cfg, "y0", (cfg.state_dim,))
    out = []
    for rX in replica_drivers(cfg, replica):
        F = backward_flow_jet(vf_field, rX, g)
        out.append(riw_residual(F, solution_jet(vf, rX, 0, y0), rX))
    return {"rough_ito_wentzell": out}


def _rag_replica(cfg: ScenarioConfig, replica: int) -> Records:
    vf, vf_hat, g = _pair(cfg), _pair(cfg, hat=True), cfg.fields["g"]
    y0 = _option_array(cfg, "y0", (cfg.state_dim,))
    return {"rough_alekseev_groebner": [rag_residual(vf, solution_jet(vf_hat, rZ, 0, y0), g, rZ)
                                        for rZ in replica_drivers(cfg, replica)]}


def _interpolation_replica(cfg: ScenarioConfig, replica: int) -> Records:
    vf, vf_hat = _pair(cfg), _pair(cfg, hat=True)
    x = _option_array(cfg, "x", (cfg.state_dim,))
    drivers = replica_drivers(cfg, replica)
    out = {"interpolation": [interpolation_formula(vf, vf_hat, rZ, x, _fraction(cfg, "s_frac", rZ.grid.n_steps),
                                                   _fraction(cfg, "t_frac", rZ.grid.n_steps))
                             for rZ in drivers]}
    if cfg.options["weak"]:
        out["interpolation_weak"] = [interpolation_weak_sample(vf, vf_hat, rZ, x) for rZ in drivers]
    return out


def _interpolation_summary(cfg, records):
    reports = _single("interpolation", ("difference", "lebesgue", "rough"))(cfg, records)
    if "interpolation_weak" in records:
        reports.append(weak_report("interpolation_weak", records["interpolation_weak"],
                                   cfg.thresholds.get("tolerance", 1.0), cfg.thresholds.get("sigmas", 3.0)))
    return reports


# ---------------------------------------------------------------------------
# Rough stochastic Ito-Wentzell family
# ---------------------------------------------------------------------------

def _scrsm(cfg: ScenarioConfig, rX: RoughPath, B: GridPath) -> ScRSM:
    """
    Y = y0 + ydot t + int theta dB + RSI(dxy + N, 0; N) with N = int psi dB,
    the martingales driven by B independent of the rough driver.
    """
    d, V, m = cfg.state_dim, rX.dim, B.shape[0]
    grid = rX.grid
    nodes = grid.n_steps + 1
    theta = _option_array(cfg, "martingale", (d, m))
    psi = _option_array(cfg, "dxy_martingale", (d, V, m))
    M = martingale_from_integrand(GridPath(grid, np.broadcast_to(theta, (nodes, d, m)).copy()), B)
    N = martingale_from_integrand(GridPath(grid, np.broadcast_to(psi, (nodes, d, V, m)).copy()), B)
    dXY = GridPath(grid, _option_array(cfg, "dxy", (d, V)) + N.values)
    Ydot = GridPath(grid, np.broadcast_to(_option_array(cfg, "ydot", (d,)), (nodes, d)).copy())
    return build_scrsm(rX, _option_array(cfg, "y0", (d,)), Ydot=Ydot, dXY=dXY, M=M, N=N)


def _semimartingales(cfg: ScenarioConfig, replica: int) -> List[Tuple[RoughPath, GridPath, ScRSM]]:
    noise = coupled_source(cfg, replica, stream=1, dim=_option_integer(cfg, "noise_dim", 1))
    out = []
    for lv, rX in zip(cfg.levels, replica_drivers(cfg, replica)):
        B = noise.path(lv)
        out.append((rX, B, _scrsm(cfg, rX, B)))
    return out


def _drop(cfg: ScenarioConfig, allowed: Tuple[str, ...]) -> Tuple[str, ...]:
    drop = cfg.options.get("drop", [])
    if not isinstance(drop, list) or any(d not in allowed for d in drop):
        raise ConfigError(f"options.drop: expected a list drawn from {list(allowed)}, got {drop!r}",
                          key="options.drop")
    return tuple(drop)


def _rsiw_name(base: str, drop: Tuple[str, ...]) -> str:
    return base + "".join(f"-no-{d}" for d in drop)


def _rsiw_replica(cfg: ScenarioConfig, replica: int) -> Records:
    drop = _drop(cfg, RSIW_TERMS)
    vf, g = _pair(cfg), cfg.fields["g"]
    return {_rsiw_name("rsiw", drop): [rsiw_residual(backward_flow_jet(vf, rX, g), y, drop)
                                       for rX, _, y in _semimartingales(cfg, replica)]}


def _rsiw_martingale_replica(cfg: ScenarioConfig, replica: int) -> Records:
    drop = _drop(cfg, MARTINGALE_TERMS)
    beta = cfg.fields["beta"]
    return {_rsiw_name("rsiw_martingale", drop): [rsiw_martingale_residual(martingale_field(beta, B), y, drop)
                                                  for _, B, y in _semimartingales(cfg, replica)]}


def _total_rsiw_replica(cfg: ScenarioConfig, replica: int) -> Records:
    vf, g, beta = _pair(cfg), cfg.fields["g"], cfg.fields["beta"]
    return {"total_rsiw": [total_rsiw_residual(backward_flow_jet(vf, rX, g), martingale_field(beta, B), y)
                           for rX, B, y in _semimartingales(cfg, replica)]}


def _rsiw_summary(base: str, allowed: Tuple[str, ...]):
    def summarize(cfg, records):
        return _single(_rsiw_name(base, _drop(cfg, allowed)))(cfg, records)

    return summarize


# ---------------------------------------------------------------------------
# Ito-Alekseev-Groebner family
# ---------------------------------------------------------------------------

def _process(cfg: ScenarioConfig) -> ItoProcessSpec:
    kind = cfg.options["process"]
    d, m = cfg.state_dim, cfg.driver_dim
    if kind == "flow":
        return ItoProcessSpec("flow")
    if kind == "constant":
        return ItoProcessSpec.constant(_option_array(cfg, "b", (d,)), _option_array(cfg, "beta", (d, m)))
    if kind == "functional":
        b, beta = cfg.fields.get("b"), cfg.fields.get("beta")
        if b is None or beta is None:
            raise ConfigError("fields.b: functional processes need fields 'b' and 'beta'", key="fields.b")
        return ItoProcessSpec("functional", b, beta)
    raise ConfigError(f"options.process: unknown process kind {kind!r}", key="options.process")


def _iag_replica(cfg: ScenarioConfig, replica: int) -> Records:
    vf, f, process = _pair(cfg), cfg.fields["f"], _process(cfg)
    y0 = _option_array(cfg, "y0", (cfg.state_dim,))
    size = _option_integer(cfg, "partition_size", 1)
    drivers = replica_drivers(cfg, replica)
    out = {"iag_partition": [iag_partition_sum(vf, f, process, rW, y0, uniform_partition(rW.grid.n_steps, size))
                             for rW in drivers]}
    if cfg.options["weak"]:
        out["iag_weak"] = [iag_weak_sample(vf, f, process, rW, y0) for rW in drivers]
    return out


def _iag_summary(cfg, records):
    t = cfg.thresholds
    sigmas = t.get("sigmas", 3.0)
    reports = [iag_report(records["iag_partition"], t.get("min_order"), t.get("max_final"), sigmas)]
    if "iag_weak" in records:
        reports.append(weak_report("iag_weak", records["iag_weak"], t.get("tolerance", 1.0), sigmas))
    return reports


def _good_approximation_replica(cfg: ScenarioConfig, replica: int) -> Records:
    working = cfg.options["working_level"]
    working = max(cfg.levels) + 4 if working is None else _option_integer(cfg, "working_level", max(cfg.levels))
    rZ = coupled_source(cfg, replica, finest=working).lift(working, "stratonovich", cfg.alpha)
    grid, V = rZ.grid, rZ.dim
    if cfg.options["integrand"] == "driver":
        phi = ControlledPath(rZ.base, GridPath(grid, np.broadcast_to(np.eye(V), (grid.n_steps + 1, V, V)).copy()))
    elif cfg.options["integrand"] == "field":
        g = cfg.fields.get("g")
        if g is None or g.out_shape != (V,):
            raise ConfigError(f"fields.g: the field integrand needs g with values in R^{V}", key="fields.g")
        vf = _pair(cfg)
        Y = rde_solve(vf, rZ, 0, _option_array(cfg, "y0", (cfg.state_dim,))).values
        Yp = np.einsum("nvj,nja->nva", g.derivative(Y, 1), vf.sigma.derivative(Y, 0))
        phi = ControlledPath(GridPath(grid, g.derivative(Y, 0)), GridPath(grid, Yp))
    else:
        raise ConfigError(f"options.integrand: expected 'driver' or 'field', got {cfg.options['integrand']!r}",
                          key="options.integrand")
    return {"good_approximation": good_approximation_residuals(phi, rZ, cfg.levels)}


def _dminus_replica(cfg: ScenarioConfig, replica: int) -> Records:
    mu, sigma = cfg.fields["mu"], cfg.fields["sigma"]
    x = float(cfg.options["x"])
    return {"dminus_identity": [verify_dminus_identity(mu, sigma, x, rW, _fraction(cfg, "u_frac", rW.grid.n_steps))
                                for rW in replica_drivers(cfg, replica)]}


# ---------------------------------------------------------------------------
# Self-checks of lifts, integrals and the scheme
# ---------------------------------------------------------------------------

def _exactness_replica(cfg: ScenarioConfig, replica: int) -> Records:
    noise = coupled_source(cfg, replica, stream=1)
    rng = replica_rng(cfg.seed, replica, 2)
    return {"algebraic_exactness": [algebraic_defects(rX, noise.path(lv), rng)
                                    for lv, rX in zip(cfg.levels, replica_drivers(cfg, replica))]}


def _exactness_summary(cfg, records):
    return [exactness_report(records["algebraic_exactness"], cfg.thresholds.get("tolerance", 1e-10))]


def _bracket_replica(cfg: ScenarioConfig, replica: int) -> Records:
    source = coupled_source(cfg, replica)
    return {"bracket_statistics": [bracket_record(source.lift(lv, "ito", cfg.alpha),
                                                  source.lift(lv, "stratonovich", cfg.alpha))
                                   for lv in cfg.levels]}


def _bracket_summary(cfg, records):
    return [bracket_report(records["bracket_statistics"], cfg.horizon, cfg.thresholds.get("tolerance", 0.05))]


def _rde_oracle_replica(cfg: ScenarioConfig, replica: int) -> Records:
    if cfg.driver_dim != 1:
        raise ConfigError(f"driver.dim: the closed-form solutions take one driver component, got {cfg.driver_dim}",
                          key="driver.dim")
    A = np.asarray(cfg.options["drift_matrix"], dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ConfigError(f"options.drift_matrix: expected a square matrix, got shape {A.shape}",
                          key="options.drift_matrix")
    noise = _option_array(cfg, "noise", (A.shape[0], 1))
    x0, drift, volatility = (_number(cfg.options[k], f"options.{k}") for k in ("x0", "drift", "volatility"))
    drivers = replica_drivers(cfg, replica)
    return {"geometric_strong_error": [geometric_error(rW, x0, drift, volatility) for rW in drivers],
            "linear_jacobian": [linear_jacobian_error(rW, A, noise) for rW in drivers]}


def _rde_oracle_summary(cfg, records):
    t = cfg.thresholds
    return [report_from_records("geometric_strong_error", records["geometric_strong_error"],
                                min_order=t.get("min_order"), max_final=t.get("max_final")),
            report_from_records("linear_jacobian", records["linear_jacobian"], max_final=t.get("tolerance", 1e-3))]


_SEMIMARTINGALE_OPTIONS = {"state_dim": 1, "y0": None, "ydot": None, "dxy": None, "martingale": None,
                           "dxy_martingale": None, "noise_dim": 1}

SCENARIOS: Dict[str, Scenario] = {
    "transport": Scenario(
        "rough transport: constancy along flows, terminal jet and integrated residual",
        _transport_replica, _single("rough_transport", ("consistency", "drift", "terminal", "jet")),
        ("sigma", "g"), ("mu",), {"state_dim": 1, "points": None, "resolution": 21, "s_frac": 0.0},
        lifts=("stratonovich", "canonical")),
    "riw": Scenario(
        "rough Ito-Wentzell: flow field of (mu_hat, sigma_hat) along the solution of (mu, sigma)",
        _riw_replica, _single("rough_ito_wentzell", ("max_Zp", "max_Zpp")),
        ("sigma", "g"), ("mu", "mu_hat", "sigma_hat"), {"state_dim": 1, "y0": None}),
    "rag": Scenario(
        "rough Alekseev-Groebner: flow of (mu, sigma) against the solution of (mu_hat, sigma_hat)",
        _rag_replica, _single("rough_alekseev_groebner", ("lhs", "lebesgue", "rough")),
        ("sigma", "g"), ("mu", "mu_hat", "sigma_hat"), {"state_dim": 1, "y0": None},
        lifts=("stratonovich", "canonical")),
    "interpolation": Scenario(
        "forward-backward interpolation between two flows, pathwise and in expectation",
        _interpolation_replica, _interpolation_summary,
        ("sigma",), ("mu", "mu_hat", "sigma_hat"),
        {"state_dim": 1, "x": None, "s_frac": 0.0, "t_frac": 1.0, "weak": False},
        lifts=("stratonovich", "canonical")),
    "rsiw": Scenario(
        "rough stochastic Ito-Wentzell for a flow field along a strongly controlled rough semimartingale",
        _rsiw_replica, _rsiw_summary("rsiw", RSIW_TERMS),
        ("sigma", "g"), ("mu",), {**_SEMIMARTINGALE_OPTIONS, "drop": []}),
    "rsiw_martingale": Scenario(
        "rough stochastic Ito-Wentzell for a martingale field sharing the semimartingale's noise",
        _rsiw_martingale_replica, _rsiw_summary("rsiw_martingale", MARTINGALE_TERMS),
        ("beta",), (), {**_SEMIMARTINGALE_OPTIONS, "drop": []}),
    "total_rsiw": Scenario(
        "rough stochastic Ito-Wentzell for the sum of a flow field and a martingale field",
        _total_rsiw_replica, _single("total_rsiw"),
        ("sigma", "g", "beta"), ("mu",), dict(_SEMIMARTINGALE_OPTIONS)),
    "iag": Scenario(
        "Ito-Alekseev-Groebner partition sums, centering of S and the weak identity",
        _iag_replica, _iag_summary,
        ("sigma", "f"), ("mu", "b", "beta"),
        {"state_dim": 1, "y0": None, "process": "flow", "b": None, "beta": None, "partition_size": 4,
         "weak": True},
        drivers=("brownian",), lifts=("ito",)),
    "good_approx": Scenario(
        "classical integrals along piecewise-linear skeletons against the Stratonovich rough integral",
        _good_approximation_replica, _single("good_approximation"),
        (), ("mu", "sigma", "g"), {"state_dim": 1, "y0": None, "integrand": "driver", "working_level": None},
        drivers=("brownian",), lifts=("stratonovich",)),
    "dminus": Scenario(
        "linear equations behind the Malliavin derivative of a scalar flow",
        _dminus_replica, _single("dminus_identity", ("max_AB",)),
        ("mu", "sigma"), (), {"state_dim": 1, "x": 0.5, "u_frac": 0.0},
        drivers=("brownian",), lifts=("stratonovich",)),
    "exactness": Scenario(
        "identities that hold exactly on the grid: integration by parts, joint-lift blocks, Chen, stopping, additivity",
        _exactness_replica, _exactness_summary,
        (), (), {"state_dim": 1},
        drivers=("brownian",), lifts=("ito", "stratonovich")),
    "brackets": Scenario(
        "replica means of the Ito bracket against T Id and the vanishing Stratonovich bracket",
        _bracket_replica, _bracket_summary,
        (), (), {"state_dim": 1},
        drivers=("brownian",), lifts=("ito", "stratonovich")),
    "rde_oracle": Scenario(
        "the scheme against geometric Brownian motion and the Jacobian of a linear drift against expm",
        _rde_oracle_replica, _rde_oracle_summary,
        (), (), {"state_dim": 1, "x0": 1.0, "drift": 0.0, "volatility": 1.0,
                 "drift_matrix": [[-0.5, 1.0], [-1.0, -0.5]], "noise": [[0.3], [0.1]]},
        drivers=("brownian",), lifts=("stratonovich",)),
}


# ---------------------------------------------------------------------------
# Runner
# ---------------------------------------------------------------------------

def _replica_job(job: Tuple[ScenarioConfig, int]) -> Records:
    cfg, replica = job
    try:
        records = SCENARIOS[cfg.scenario].replica(cfg, replica)
    except DivergenceError as exc:
        raise exc.with_replica(replica) from None
    logger.debug("scenario '%s': replica %d done", cfg.scenario, replica)
    return records


def execute(cfg: ScenarioConfig, workers: int = 1) -> List[ConvergenceReport]:
    """
    Run every replica and summarize; records are reduced in replica order.

    Raises:
        DivergenceError: carrying the replica and node of the first explosion.
    """
    jobs = [(cfg, r) for r in range(cfg.replicas)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_replica_job, jobs))
    else:
        results = [_replica_job(job) for job in jobs]
    records = {name: [[res[name][i] for res in results] for i in range(len(per_level))]
               for name, per_level in results[0].items()}
    return SCENARIOS[cfg.scenario].summarize(cfg, records)


def write_reports(reports: List[ConvergenceReport], cfg: ScenarioConfig, out_dir: Union[str, Path]) -> List[Path]:
    """One CSV table and one JSON report (config echo and build) per report."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    build = git_describe()
    written = []
    for report in reports:
        csv_path = out / f"{report.name}.csv"
        json_path = out / f"{report.name}.json"
        report.to_csv(csv_path)
        payload = {"config": cfg.raw, "git_describe": build, "report": report.to_dict()}
        with open(json_path, "w") as f:
            json.dump(payload, f, indent=2, sort_keys=True)
        written += [csv_path, json_path]
    return written


def run_scenario(config_path: Union[str, Path], out_dir: Union[str, Path] = "reports",
                 seed: Optional[int] = None, workers: int = 1) -> int:
    """
    Validate, run and report one scenario file.

    Returns:
        EXIT_OK when every report passes, EXIT_FAIL when one fails,
        EXIT_CONFIG on configuration errors, EXIT_DIVERGENCE when a replica explodes.
    """
    try:
        cfg = load_config(config_path, seed)
        if workers < 1:
            raise ConfigError(f"workers must be >= 1, got {workers}", key="workers")
        reports = execute(cfg, workers)
    except ConfigError as exc:
        logger.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except ShapeError as exc:
        logger.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except DivergenceError as exc:
        logger.error("divergence: %s", exc)
        return EXIT_DIVERGENCE
    write_reports(reports, cfg, out_dir)
    for report in reports:
        print(report.summary())
    return EXIT_OK if all(r.passed for r in reports) else EXIT_FAIL
