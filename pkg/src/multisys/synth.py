"""Deterministic synthetic cohort generation.

Emits string-valued lab records with embedded unit text so the full parsing
path is exercised end-to-end.  Default marginals are calibrated so that the
cohort's descriptive statistics and the downstream multi-system target
prevalence land near the reference registry values (target prevalence around
0.17 for the default spec).

Analytes are drawn independently except for documented latent factors that
correlate markers sharing a physiological determinant: one per organ system
(kidney, lipid, inflammation, metabolic) plus a haematology factor for
Hb/RBC/HCT.  Ordinal urinalysis levels are drawn through a Gaussian-copula
threshold model so their marginal probabilities are exact while still
loading on their system's factor.  The loadings are configuration values,
not clinical claims.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from statistics import NormalDist

from .rng import SplitMix64


class SynthError(Exception):
    pass


ORDINAL_TOKENS = {0.0: "negative", 0.5: "±", 1.0: "1+", 2.0: "2+", 3.0: "3+"}


@dataclass(frozen=True)
class AnalyteSpec:
    name: str
    dist: str  # "lognormal" | "normal" | "categorical"
    mu: float = 0.0  # log-median for lognormal, mean for normal
    sigma: float = 1.0
    probs: tuple[float, ...] = ()  # over ordinal levels 0/0.5/1/2/3
    lower: float | None = None
    upper: float | None = None
    unit: str = ""
    decimals: int = 2
    factor: str | None = None  # latent factor name, or None
    loading: float = 0.0  # correlation loading in [-1, 1]

    def __post_init__(self):
        if self.dist not in ("lognormal", "normal", "categorical"):
            raise SynthError(f"{self.name}: unknown distribution {self.dist!r}")
        if self.sigma <= 0 and self.dist != "categorical":
            raise SynthError(f"{self.name}: sigma must be positive")
        if self.dist == "categorical":
            if len(self.probs) != 5:
                raise SynthError(f"{self.name}: need 5 level probabilities")
            if abs(sum(self.probs) - 1.0) > 1e-9:
                raise SynthError(f"{self.name}: probabilities must sum to 1")
        if self.lower is not None and self.upper is not None and self.lower >= self.upper:
            raise SynthError(f"{self.name}: truncation bounds out of order")
        if abs(self.loading) > 1.0:
            raise SynthError(f"{self.name}: loading must be in [-1, 1]")

    def analytic_median(self) -> float:
        if self.dist == "lognormal":
            return math.exp(self.mu)
        if self.dist == "normal":
            return self.mu
        raise SynthError("median undefined for categorical analytes")


@dataclass
class GeneratorSpec:
    n: int
    seed: int
    analytes: list[AnalyteSpec] = field(default_factory=list)

    def __post_init__(self):
        if self.n < 1:
            raise SynthError("n must be >= 1")
        if not self.analytes:
            self.analytes = default_analytes()


def _lognormal(name, median, sigma, lower, upper, unit, **kw) -> AnalyteSpec:
    return AnalyteSpec(name, "lognormal", mu=math.log(median), sigma=sigma,
                       lower=lower, upper=upper, unit=unit, **kw)


def _normal(name, mean, sigma, lower, upper, unit, **kw) -> AnalyteSpec:
    return AnalyteSpec(name, "normal", mu=mean, sigma=sigma,
                       lower=lower, upper=upper, unit=unit, **kw)


def _ordinal(name, probs, **kw) -> AnalyteSpec:
    return AnalyteSpec(name, "categorical", probs=probs, **kw)


def default_analytes() -> list[AnalyteSpec]:
    """Marginals targeting the reference cohort's descriptive statistics.

    Markers of one organ system share a latent factor, so e.g. a patient
    with leucocyturia usually also shows an elevated white cell count.
    """
    return [
        _lognormal("Cr", 62.0, 0.30, 15, 1900, "μmol/L", decimals=1,
                   factor="kidney", loading=0.65),
        _lognormal("UA", 326.5, 0.27, 60, 1900, "μmol/L", decimals=1,
                   factor="kidney", loading=0.35),
        _normal("ALB", 40.2, 2.7, 18, 55, "g/L", decimals=1),
        _lognormal("HDL-c", 1.13, 0.216, 0.2, 5.5, "mmol/L",
                   factor="lipid", loading=-0.45),
        _normal("LDL-c", 2.80, 0.85, 0.2, 9, "mmol/L",
                factor="lipid", loading=0.30),
        _lognormal("TG", 1.43, 0.595, 0.1, 30, "mmol/L",
                   factor="lipid", loading=0.55),
        _lognormal("TC", 4.76, 0.228, 1.0, 20, "mmol/L",
                   factor="lipid", loading=0.40),
        _lognormal("GLU", 4.00, 0.52, 1.0, 40, "mmol/L",
                   factor="metabolic", loading=0.65),
        _lognormal("WBC", 6.50, 0.24, 1.5, 60, "×10⁹ /L",
                   factor="inflamm", loading=0.70),
        _normal("Hb", 137.8, 17.8, 40, 230, "g/L", decimals=0,
                factor="heme", loading=0.85),
        _lognormal("PLT", 222.5, 0.24, 30, 1200, "×10⁹ /L", decimals=0),
        _normal("HCT", 0.41, 0.044, 0.12, 0.70, "",
                factor="heme", loading=0.80),
        _normal("RBC", 4.60, 0.55, 1.5, 8, "×10¹²/L",
                factor="heme", loading=0.75),
        _normal("MCV", 90.0, 6.0, 55, 140, "fL", decimals=1),
        _normal("MCH", 30.0, 2.5, 15, 50, "pg", decimals=1),
        _lognormal("MPV", 10.5, 0.12, 5, 20, "fL", decimals=1),
        _lognormal("GGT", 25.0, 0.80, 2, 1900, "U/L", decimals=1),
        _normal("BUN", 5.5, 1.5, 1, 40, "mmol/L",
                factor="kidney", loading=0.55),
        _lognormal("AST", 20.0, 0.40, 2, 900, "U/L", decimals=1),
        _lognormal("ALT", 22.0, 0.50, 2, 900, "U/L", decimals=1),
        _ordinal("PRO", (0.945, 0.020, 0.018, 0.011, 0.006),
                 factor="kidney", loading=0.75),
        _ordinal("LEU", (0.955, 0.020, 0.012, 0.008, 0.005),
                 factor="inflamm", loading=0.75),
        _ordinal("NIT", (0.980, 0.010, 0.006, 0.002, 0.002),
                 factor="inflamm", loading=0.65),
        _ordinal("KET", (0.965, 0.010, 0.012, 0.008, 0.005),
                 factor="metabolic", loading=0.70),
        _ordinal("ERY", (0.930, 0.030, 0.020, 0.012, 0.008),
                 factor="kidney", loading=0.45),
    ]


def spec_from_json(path: str) -> GeneratorSpec:
    """Load a generator spec from its JSON config representation."""
    with open(path, encoding="utf-8") as fh:
        cfg = json.load(fh)
    analytes = []
    for entry in cfg.get("analytes", []):
        analytes.append(AnalyteSpec(
            name=entry["name"],
            dist=entry["dist"],
            mu=entry.get("mu", 0.0),
            sigma=entry.get("sigma", 1.0),
            probs=tuple(entry.get("probs", ())),
            lower=entry.get("lower"),
            upper=entry.get("upper"),
            unit=entry.get("unit", ""),
            decimals=entry.get("decimals", 2),
            factor=entry.get("factor"),
            loading=entry.get("loading", 0.0),
        ))
    return GeneratorSpec(n=cfg["n"], seed=cfg["seed"], analytes=analytes)


def _draw_continuous(spec: AnalyteSpec, rng: SplitMix64, latent: dict[str, float]) -> float:
    load = spec.loading if spec.factor is not None else 0.0
    z = rng.normal()
    if load != 0.0:
        z = load * latent[spec.factor] + math.sqrt(1.0 - load * load) * z
    if spec.dist == "lognormal":
        value = math.exp(spec.mu + spec.sigma * z)
    else:
        value = spec.mu + spec.sigma * z
    if spec.lower is not None:
        value = max(value, spec.lower)
    if spec.upper is not None:
        value = min(value, spec.upper)
    return value


_STD_NORMAL = NormalDist()


def _draw_ordinal(spec: AnalyteSpec, rng: SplitMix64, latent: dict[str, float]) -> float:
    """Threshold a latent normal at the cumulative-probability cutpoints.

    The marginal level probabilities are exact regardless of the loading;
    the factor only shifts *which* rows land in the upper levels.
    """
    load = spec.loading if spec.factor is not None else 0.0
    z = rng.normal()
    if load != 0.0:
        z = load * latent[spec.factor] + math.sqrt(1.0 - load * load) * z
    levels = (0.0, 0.5, 1.0, 2.0, 3.0)
    acc = 0.0
    for level, prob in zip(levels[:-1], spec.probs[:-1]):
        acc += prob
        if acc >= 1.0:
            return level
        if acc > 0.0 and z <= _STD_NORMAL.inv_cdf(acc):
            return level
    return levels[-1]


def _format_cell(spec: AnalyteSpec, value: float) -> str:
    if spec.dist == "categorical":
        return ORDINAL_TOKENS[value]
    text = f"{value:.{spec.decimals}f}"
    return f"{text} {spec.unit}" if spec.unit else text


def generate(spec: GeneratorSpec) -> tuple[list[str], list[list[str]]]:
    """Generate (header, rows) of string cells; byte-deterministic per seed."""
    rng = SplitMix64(spec.seed)
    factors = sorted({a.factor for a in spec.analytes if a.factor is not None})
    header = [a.name for a in spec.analytes]
    rows = []
    for _ in range(spec.n):
        latent = {name: rng.normal() for name in factors}
        cells = []
        for analyte in spec.analytes:
            if analyte.dist == "categorical":
                value = _draw_ordinal(analyte, rng, latent)
            else:
                value = _draw_continuous(analyte, rng, latent)
            cells.append(_format_cell(analyte, value))
        rows.append(cells)
    return header, rows


def write_cohort_csv(spec: GeneratorSpec, path: str) -> None:
    header, rows = generate(spec)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
