"""Parsing, plausibility, imputation and cohort-loading behavior."""

import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from multisys.ingest import (
    IMPLAUSIBLE, OBSERVED, UNPARSED,
    ColumnSchema, ImputationError, IngestError,
    apply_plausibility, clean_cohort, default_schema, impute, load_cohort,
    parse_quantity, parse_semiquant, read_matrix_csv, schema_from_json,
    write_matrix_csv,
)


# ---------------------------------------------------------------------------
# quantity parsing

@pytest.mark.parametrize("raw,expected", [
    ("77 μmol/L", 77.0),
    ("4.20 ×10⁹ /L", 4.20),
    ("0.41", 0.41),
    ("  137 g/L ", 137.0),
    ("-3.5 units", -3.5),
    ("+12", 12.0),
    (".5 mmol/L", 0.5),
    ("1816 μmol/L", 1816.0),
])
def test_parse_quantity_golden(raw, expected):
    assert parse_quantity(raw) == expected


@pytest.mark.parametrize("raw", ["", "   ", "N/A", "pending", "---", "μmol/L", None])
def test_parse_quantity_missing(raw):
    assert parse_quantity(raw) is None


@given(st.floats(min_value=-1e6, max_value=1e6, allow_nan=False))
def test_parse_quantity_roundtrips_formatted_numbers(x):
    text = f"{x:.4f}"
    assert parse_quantity(text + " mmol/L") == float(text)


def test_parse_quantity_takes_first_number():
    # The magnitude precedes the unit; exponent digits in the unit are ignored.
    assert parse_quantity("2.5 ×10⁹/L") == 2.5


# ---------------------------------------------------------------------------
# semiquantitative parsing

@pytest.mark.parametrize("raw,expected", [
    ("negative", 0.0), ("NEG", 0.0), ("-", 0.0), ("阴性", 0.0),
    ("trace", 0.5), ("±", 0.5), ("+-", 0.5), ("弱阳性", 0.5),
    ("1+", 1.0), ("+", 1.0), ("阳性", 1.0),
    ("2+", 2.0), ("++", 2.0),
    ("3+", 3.0), ("+++", 3.0),
    (" 2 + ", 2.0),  # whitespace-tolerant
    ("Negative", 0.0),  # case-insensitive
])
def test_parse_semiquant_map(raw, expected):
    assert parse_semiquant(raw) == expected


@pytest.mark.parametrize("raw", ["", "  ", "4+", "unknown", "++++", None])
def test_parse_semiquant_missing(raw):
    assert parse_semiquant(raw) is None


def test_parse_semiquant_custom_tokens():
    assert parse_semiquant("mild", {"mild": 1.0}) == 1.0
    assert parse_semiquant("negative", {"mild": 1.0}) is None


# ---------------------------------------------------------------------------
# plausibility and schema validation

def test_plausibility_bounds_inclusive():
    schema = ColumnSchema("Cr", "continuous", lower=10, upper=2000)
    assert apply_plausibility(10.0, schema) == 10.0
    assert apply_plausibility(2000.0, schema) == 2000.0
    assert apply_plausibility(9.99, schema) is None
    assert apply_plausibility(2000.01, schema) is None


def test_schema_rejects_bad_kind_and_policy():
    with pytest.raises(IngestError):
        ColumnSchema("X", "ordinal")
    with pytest.raises(IngestError):
        ColumnSchema("X", "continuous", fill_policy="mode")
    with pytest.raises(IngestError):
        ColumnSchema("X", "semiquant", fill_policy="median")
    with pytest.raises(IngestError):
        ColumnSchema("X", "continuous", lower=5, upper=5)


def test_zero_policy_allowed_for_both_kinds():
    ColumnSchema("X", "continuous", fill_policy="zero")
    ColumnSchema("Y", "semiquant", fill_policy="zero")


def test_schema_from_json(tmp_path):
    cfg = {
        "columns": [
            {"name": "Cr", "source": "肌酐", "kind": "continuous",
             "unit": "μmol/L", "lower": 10, "upper": 2000},
            {"name": "PRO", "kind": "semiquant"},
        ],
        "semiquant_tokens": {"Faint": 0.5},
    }
    path = tmp_path / "schema.json"
    path.write_text(json.dumps(cfg))
    schemas, tokens = schema_from_json(str(path))
    assert schemas[0].source_header == "肌酐"
    assert schemas[1].fill_policy == "mode"
    assert tokens["faint"] == 0.5
    assert tokens["negative"] == 0.0  # defaults preserved


def test_schema_from_json_rejects_bad_token_level(tmp_path):
    path = tmp_path / "schema.json"
    path.write_text(json.dumps({"columns": [], "semiquant_tokens": {"x": 1.7}}))
    with pytest.raises(IngestError):
        schema_from_json(str(path))


# ---------------------------------------------------------------------------
# cohort loading

def test_load_cohort_renames_and_drops(write_csv, tiny_schemas):
    path = write_csv(["Cr", "GLU", "PRO", "extra"],
                     [["77 μmol/L", "5.0", "1+", "x"]])
    cohort = load_cohort(path, tiny_schemas)
    assert cohort.columns == ["Cr", "GLU", "PRO"]
    assert cohort.rows[0]["Cr"] == "77 μmol/L"


def test_load_cohort_missing_source_header_errors(write_csv, tiny_schemas):
    path = write_csv(["Cr", "GLU"], [["77", "5.0"]])
    with pytest.raises(IngestError, match="PRO"):
        load_cohort(path, tiny_schemas)


def test_load_cohort_ragged_row_errors(write_csv, tiny_schemas):
    path = write_csv(["Cr", "GLU", "PRO"], [["77", "5.0"]])
    with pytest.raises(IngestError, match="cells"):
        load_cohort(path, tiny_schemas)


def test_load_cohort_empty_file_errors(tmp_path, tiny_schemas):
    path = tmp_path / "empty.csv"
    path.write_text("")
    with pytest.raises(IngestError, match="empty"):
        load_cohort(str(path), tiny_schemas)


def test_load_cohort_missing_file_errors(tiny_schemas):
    with pytest.raises(IngestError):
        load_cohort("/nonexistent/file.csv", tiny_schemas)


# ---------------------------------------------------------------------------
# imputation

def test_median_imputation_brute_force_oracle():
    schemas = [ColumnSchema("A", "continuous")]
    values = np.array([[1.0], [5.0], [2.0], [np.nan], [9.0]])
    prov = np.zeros((5, 1), dtype=np.int8)
    prov[3, 0] = UNPARSED
    matrix = impute(values, prov, schemas)
    observed = sorted([1.0, 5.0, 2.0, 9.0])
    oracle = (observed[1] + observed[2]) / 2  # even count: mean of middle two
    assert matrix.values[3, 0] == oracle == 3.5
    assert matrix.fills["A"] == 3.5
    assert matrix.missing_mask[3, 0]


def test_mode_imputation_tie_takes_lowest():
    schemas = [ColumnSchema("P", "semiquant", fill_policy="mode")]
    values = np.array([[0.0], [2.0], [2.0], [0.0], [np.nan]])
    prov = np.zeros((5, 1), dtype=np.int8)
    matrix = impute(values, prov, schemas)
    assert matrix.values[4, 0] == 0.0  # tie between 0 and 2 resolves low


def test_zero_policy_forces_whole_column():
    schemas = [ColumnSchema("B", "continuous", fill_policy="zero")]
    values = np.array([[4.2], [np.nan]])
    prov = np.zeros((2, 1), dtype=np.int8)
    matrix = impute(values, prov, schemas)
    assert np.all(matrix.values[:, 0] == 0.0)
    assert "B" in matrix.zero_filled


def test_all_missing_without_zero_policy_errors():
    schemas = [ColumnSchema("A", "continuous")]
    values = np.full((3, 1), np.nan)
    prov = np.full((3, 1), UNPARSED, dtype=np.int8)
    with pytest.raises(ImputationError, match="A"):
        impute(values, prov, schemas)


# ---------------------------------------------------------------------------
# end-to-end cleaning

def test_clean_cohort_audit_counts(write_csv, tiny_schemas):
    path = write_csv(
        ["Cr", "GLU", "PRO"],
        [
            ["77 μmol/L", "5.0 mmol/L", "negative"],
            ["9999 μmol/L", "", "2+"],       # Cr implausible, GLU unparsed
            ["88 μmol/L", "6.1 mmol/L", "??"],  # PRO unparsed
        ])
    cohort = load_cohort(path, tiny_schemas)
    matrix, audit = clean_cohort(cohort, tiny_schemas)
    cr = audit["columns"]["Cr"]
    assert (cr["parsed"], cr["unparsed"], cr["implausible"]) == (2, 0, 1)
    assert cr["imputed"] == 1
    assert matrix.values[1, 0] == np.median([77.0, 88.0])  # implausible -> imputed
    assert audit["columns"]["GLU"]["unparsed"] == 1
    assert audit["columns"]["PRO"]["unparsed"] == 1
    assert matrix.provenance[1, 0] == IMPLAUSIBLE
    assert matrix.provenance[0, 0] == OBSERVED


def test_clean_cohort_requires_columns(tiny_schemas):
    from multisys.ingest import RawCohort
    cohort = RawCohort(columns=["Cr"], rows=[{"Cr": "77"}])
    with pytest.raises(IngestError, match="GLU"):
        clean_cohort(cohort, tiny_schemas)


def test_default_schema_is_valid_and_covers_systems():
    schemas = default_schema()
    names = {s.name for s in schemas}
    for required in ("Cr", "BUN", "PRO", "TG", "LDL-c", "HDL-c",
                     "WBC", "LEU", "NIT", "GLU", "KET"):
        assert required in names
    assert all(s.fill_policy in ("median", "mode", "zero") for s in schemas)


def test_matrix_csv_roundtrip(tmp_path, tiny_schemas):
    from conftest import make_matrix
    values = [[77.123456789, 5.5, 1.0], [88.0, 6.25, 0.0]]
    matrix = make_matrix(values, tiny_schemas)
    path = str(tmp_path / "matrix.csv")
    write_matrix_csv(matrix, path)
    loaded = read_matrix_csv(path, tiny_schemas)
    np.testing.assert_array_equal(loaded.values, matrix.values)  # exact, via repr
    assert loaded.names == matrix.names
