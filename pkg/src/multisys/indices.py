"""Threshold-based system indices and the multi-system target.

Four organ systems (kidney, lipid, inflammation, metabolic) each carry a
small set of clinical threshold rules.  A system's grade counts how many of
its rules fire; its flag is grade >= 1; the burden score sums the four
grades; the binary target is concurrent abnormality in two or more systems.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ingest import FeatureMatrix

SYSTEM_NAMES = ("kidney", "lipid", "inflamm", "metabolic")


class MissingAnalyteError(Exception):
    """Raised when a rule references a column absent from the matrix."""


@dataclass(frozen=True)
class ThresholdRule:
    analyte: str
    direction: str  # "above" | "below" | "at-or-above"
    cutoff: float

    def __post_init__(self):
        if self.direction not in ("above", "below", "at-or-above"):
            raise ValueError(f"unknown direction {self.direction!r}")
        if not np.isfinite(self.cutoff):
            raise ValueError("cutoff must be finite")


@dataclass(frozen=True)
class SystemDefinition:
    name: str
    rules: tuple[ThresholdRule, ...]

    def __post_init__(self):
        if len(self.rules) not in (2, 3):
            raise ValueError(f"system {self.name}: expected 2 or 3 rules, got {len(self.rules)}")


def default_systems() -> list[SystemDefinition]:
    """Standard clinical reference thresholds for the four systems.

    Upper-bound comparisons are strict (">"); urinalysis comparisons are
    inclusive (">= 1+"), so a trace result (0.5) does not fire the rule.
    """
    r = ThresholdRule
    return [
        SystemDefinition("kidney", (
            r("Cr", "above", 110.0),
            r("BUN", "above", 8.2),
            r("PRO", "at-or-above", 1.0),
        )),
        SystemDefinition("lipid", (
            r("TG", "above", 1.70),
            r("LDL-c", "above", 3.37),
            r("HDL-c", "below", 1.04),
        )),
        SystemDefinition("inflamm", (
            r("WBC", "above", 10.0),
            r("LEU", "at-or-above", 1.0),
            r("NIT", "at-or-above", 1.0),
        )),
        SystemDefinition("metabolic", (
            r("GLU", "above", 7.0),
            r("KET", "at-or-above", 1.0),
        )),
    ]


def systems_from_json(path: str) -> list[SystemDefinition]:
    import json
    with open(path, encoding="utf-8") as fh:
        cfg = json.load(fh)
    systems = []
    for entry in cfg["systems"]:
        rules = tuple(
            ThresholdRule(rule["analyte"], rule["direction"], float(rule["cutoff"]))
            for rule in entry["rules"]
        )
        systems.append(SystemDefinition(entry["name"], rules))
    return systems


@dataclass
class SystemIndices:
    """Per-patient flags, grades, burden score and binary target."""

    systems: list[str]
    flags: dict[str, np.ndarray]  # name -> (n,) bool
    grades: dict[str, np.ndarray]  # name -> (n,) int
    burden_score: np.ndarray  # (n,) int
    affected_systems: np.ndarray  # (n,) int
    target_multi: np.ndarray  # (n,) bool

    def __len__(self) -> int:
        return len(self.burden_score)


def evaluate_rule(value: float | np.ndarray, rule: ThresholdRule) -> bool | np.ndarray:
    """Apply one threshold rule; works elementwise on arrays."""
    if rule.direction == "above":
        return value > rule.cutoff
    if rule.direction == "below":
        return value < rule.cutoff
    return value >= rule.cutoff


def compute_indices(matrix: FeatureMatrix,
                    systems: list[SystemDefinition] | None = None) -> SystemIndices:
    if systems is None:
        systems = default_systems()
    names = set(matrix.names)
    n = matrix.values.shape[0]
    flags: dict[str, np.ndarray] = {}
    grades: dict[str, np.ndarray] = {}
    burden = np.zeros(n, dtype=int)
    affected = np.zeros(n, dtype=int)
    for system in systems:
        grade = np.zeros(n, dtype=int)
        for rule in system.rules:
            if rule.analyte not in names:
                raise MissingAnalyteError(
                    f"system {system.name}: column {rule.analyte!r} not in matrix"
                )
            grade += evaluate_rule(matrix.column(rule.analyte), rule).astype(int)
        flags[system.name] = grade >= 1
        grades[system.name] = grade
        burden += grade
        affected += (grade >= 1).astype(int)
    return SystemIndices(
        systems=[s.name for s in systems],
        flags=flags,
        grades=grades,
        burden_score=burden,
        affected_systems=affected,
        target_multi=affected >= 2,
    )


def prevalence_summary(indices: SystemIndices,
                       systems: list[SystemDefinition] | None = None,
                       matrix: FeatureMatrix | None = None) -> dict:
    """Cohort-level prevalences plus burden statistics.

    When the matrix and definitions are supplied, the summary also breaks
    each system's prevalence down per rule, so the relative contribution of
    e.g. the glucose tail versus urine ketones is visible from data.
    """
    n = len(indices)
    if n == 0:
        raise ValueError("empty cohort")
    summary: dict = {
        "n": n,
        "target_prevalence": float(np.mean(indices.target_multi)),
        "target_count": int(np.sum(indices.target_multi)),
        "systems": {},
        "burden_mean": float(np.mean(indices.burden_score)),
        "burden_sd": float(np.std(indices.burden_score, ddof=1)) if n > 1 else 0.0,
    }
    for name in indices.systems:
        summary["systems"][name] = {
            "prevalence": float(np.mean(indices.flags[name])),
            "mean_grade": float(np.mean(indices.grades[name])),
        }
    if systems is not None and matrix is not None:
        for system in systems:
            per_rule = {}
            for rule in system.rules:
                fired = evaluate_rule(matrix.column(rule.analyte), rule)
                key = f"{rule.analyte} {rule.direction} {rule.cutoff:g}"
                per_rule[key] = float(np.mean(fired))
            summary["systems"][system.name]["per_rule"] = per_rule
    return summary
