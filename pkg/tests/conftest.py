"""Shared fixtures: tiny schemas, raw CSV factories and a fast run config."""

import csv
import json

import numpy as np
import pytest

from multisys.ingest import ColumnSchema, FeatureMatrix


@pytest.fixture
def tiny_schemas():
    return [
        ColumnSchema("Cr", "continuous", "μmol/L", 10, 2000),
        ColumnSchema("GLU", "continuous", "mmol/L", 0.5, 60),
        ColumnSchema("PRO", "semiquant", "", fill_policy="mode"),
    ]


@pytest.fixture
def write_csv(tmp_path):
    """Write (header, rows) to a temp CSV and return its path."""

    def _write(header, rows, name="data.csv"):
        path = tmp_path / name
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            writer.writerows(rows)
        return str(path)

    return _write


def make_matrix(values, schemas) -> FeatureMatrix:
    """FeatureMatrix around plain numeric values, fully observed."""
    values = np.asarray(values, dtype=float)
    return FeatureMatrix(
        columns=list(schemas),
        values=values,
        missing_mask=np.zeros_like(values, dtype=bool),
        provenance=np.zeros_like(values, dtype=np.int8),
    )


@pytest.fixture
def fast_config(tmp_path):
    """A small-but-complete run config for pipeline tests (seconds, not minutes)."""
    cfg = {
        "synth": {"n": 160, "seed": 7},
        "split": {"ratios": [0.70, 0.15, 0.15], "seed": 7},
        "cv_folds": 3,
        "models": {
            "random_forest": {"n_estimators": 12, "max_depth": 5,
                              "min_samples_leaf": 5, "seed": 7},
            "gradient_boosting": {"n_estimators": 15, "learning_rate": 0.1,
                                  "max_depth": 3, "min_samples_leaf": 5},
        },
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return str(path)
