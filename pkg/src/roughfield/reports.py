"""
Convergence reports: per-mesh residual summaries of one identity across a
refinement family, with a fitted order and a pass or fail outcome against
declared thresholds. Reports serialize to JSON and to a CSV residual table.
"""
from __future__ import annotations
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union
import json
import logging

import numpy as np

from .diagnostics import convergence_rate
from .errors import InsufficientDataError

logger = logging.getLogger(__name__)

# Residuals below this are treated as exact identities
EXACT_TOLERANCE = 1e-12

_SCHEMA_VERSION = 1


def _slope(meshes: Sequence[float], values: Sequence[float], min_points: int) -> Optional[float]:
    try:
        return convergence_rate(meshes, values, min_points=min_points).slope
    except InsufficientDataError:
        return None


@dataclass
class ConvergenceReport:
    """
    Residuals of one identity across a refinement family.

    Attributes:
        name: Identity checked.
        meshes: Step sizes, strictly decreasing.
        medians: Per-mesh median residual over replicas.
        p90s: Per-mesh 90% quantile.
        fitted_order: Slope of log median against log mesh; None when exact or not fittable.
        passed: Outcome against the declared thresholds.
        exact: True when every residual is below EXACT_TOLERANCE.
        min_order: Required order (convergence checks).
        max_order: Largest admissible order (negative controls).
        max_final: Bound on the finest-mesh median.
        extras: Additional per-verifier numbers.
    """
    name: str
    meshes: List[float]
    medians: List[float]
    p90s: List[float]
    fitted_order: Optional[float] = None
    passed: bool = False
    exact: bool = False
    min_order: Optional[float] = None
    max_order: Optional[float] = None
    max_final: Optional[float] = None
    extras: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not (len(self.meshes) == len(self.medians) == len(self.p90s)):
            raise ValueError("meshes, medians and p90s must have equal length")
        if any(b >= a for a, b in zip(self.meshes, self.meshes[1:])):
            raise ValueError(f"meshes must be strictly decreasing, got {self.meshes}")
        if any(v < 0 for v in self.medians + self.p90s):
            raise ValueError("residuals must be nonnegative")

    @classmethod
    def from_residuals(cls, name: str, meshes: Sequence[float], residuals: Sequence[Sequence[float]],
                       min_order: Optional[float] = None, max_order: Optional[float] = None,
                       max_final: Optional[float] = None, extras: Optional[Dict[str, Any]] = None
                       ) -> "ConvergenceReport":
        """
        Summarize per-mesh residual samples (one entry per replica).

        Passes when all residuals are exact (unless a negative control is
        declared), or when the fitted order lies in [min_order, max_order]
        and the finest median is within max_final.
        """
        arrays = [np.asarray(r, dtype=np.float64).reshape(-1) for r in residuals]
        if len(arrays) != len(meshes) or any(a.size == 0 for a in arrays):
            raise InsufficientDataError("every mesh needs at least one residual")
        medians = [float(np.median(a)) for a in arrays]
        p90s = [float(np.quantile(a, 0.9)) for a in arrays]
        exact = all(float(a.max()) < EXACT_TOLERANCE for a in arrays)
        order = None if exact else _slope(meshes, medians, 3 if len(meshes) >= 3 else 2)
        if exact:
            passed = max_order is None
        else:
            passed = True
            if min_order is not None:
                passed = passed and order is not None and order >= min_order
            if max_order is not None:
                passed = passed and (order is None or order <= max_order)
            if max_final is not None:
                passed = passed and medians[-1] <= max_final
        report = cls(name, [float(h) for h in meshes], medians, p90s, order, passed, exact,
                     min_order, max_order, max_final, dict(extras or {}))
        logger.info("%s", report.summary())
        return report

    def summary(self) -> str:
        order = "exact" if self.exact else ("n/a" if self.fitted_order is None else f"{self.fitted_order:.3f}")
        status = "PASS" if self.passed else "FAIL"
        return f"{self.name}: order {order}, finest median {self.medians[-1]:.3e} [{status}]"

    def orders_so_far(self) -> List[Optional[float]]:
        return [None] + [_slope(self.meshes[:k + 1], self.medians[:k + 1], 2)
                         for k in range(1, len(self.meshes))]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "version": _SCHEMA_VERSION,
            "name": self.name,
            "meshes": self.meshes,
            "medians": self.medians,
            "p90s": self.p90s,
            "fitted_order": self.fitted_order,
            "passed": self.passed,
            "exact": self.exact,
            "min_order": self.min_order,
            "max_order": self.max_order,
            "max_final": self.max_final,
            "extras": self.extras,
        }

    @staticmethod
    def from_dict(data: Dict[str, Any]) -> "ConvergenceReport":
        missing = [k for k in ("name", "meshes", "medians", "p90s") if k not in data]
        if missing:
            raise ValueError(f"ConvergenceReport missing required fields: {missing}")
        return ConvergenceReport(data["name"], list(data["meshes"]), list(data["medians"]), list(data["p90s"]),
                                 data.get("fitted_order"), bool(data.get("passed", False)),
                                 bool(data.get("exact", False)), data.get("min_order"), data.get("max_order"),
                                 data.get("max_final"), dict(data.get("extras", {})))

    def to_csv(self, path: Union[str, Path]) -> None:
        """Residual table with header mesh,median,p90,order_so_far."""
        lines = ["mesh,median,p90,order_so_far"]
        for h, med, p90, order in zip(self.meshes, self.medians, self.p90s, self.orders_so_far()):
            lines.append(f"{h!r},{med!r},{p90!r},{'' if order is None else repr(order)}")
        Path(path).write_text("\n".join(lines) + "\n")

    def to_json(self, path: Union[str, Path]) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)


def read_rate_table(path: Union[str, Path]):
    """Read (mesh, residual) pairs from a CSV with a header row; uses the first two columns."""
    table = np.loadtxt(path, delimiter=",", skiprows=1, usecols=(0, 1), ndmin=2)
    return table[:, 0], table[:, 1]


def report_from_records(name: str, records_by_mesh: Sequence[Sequence[Dict[str, Any]]], key: str = "defect",
                        min_order: Optional[float] = None, max_order: Optional[float] = None,
                        max_final: Optional[float] = None, info_keys: Sequence[str] = ()) -> ConvergenceReport:
    """
    Build a report from per-replica residual records.

    Args:
        records_by_mesh: Outer list over meshes (coarse to fine), inner over
            replicas; every record carries "mesh" and `key`.
        info_keys: Further record entries summarized in the extras as
            per-mesh medians, with their fitted order.
    """
    if not records_by_mesh or any(not recs for recs in records_by_mesh):
        raise InsufficientDataError(f"{name}: every mesh needs at least one record")
    meshes = [float(recs[0]["mesh"]) for recs in records_by_mesh]
    residuals = [[float(r[key]) for r in recs] for recs in records_by_mesh]
    extras: Dict[str, Any] = {"replicas": len(records_by_mesh[0])}
    for k in info_keys:
        medians = [float(np.median([r[k] for r in recs])) for recs in records_by_mesh]
        extras[k] = medians
        extras[f"{k}_order"] = _slope(meshes, medians, 2) if max(medians) >= EXACT_TOLERANCE else None
    return ConvergenceReport.from_residuals(name, meshes, residuals, min_order, max_order, max_final, extras)
