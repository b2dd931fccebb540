"""Loader for a local copy of the UCI Adult files (``adult.data``, ``adult.test``).

Raw format: no header, 15 comma-separated fields, ``?`` for missing values;
``adult.test`` starts with a ``|1x3 Cross validator`` line and its labels end
with a period. Column mapping into ``ADULT_SCHEMA``:

    age, education-num, capital-gain, capital-loss, hours-per-week   numeric
    workclass, marital-status, occupation, relationship, race, sex   categorical
    fnlwgt (sampling weight), education (duplicates education-num),
    native-country (41 levels, mostly one value)                     dropped
    income: ">50K" -> 1, "<=50K" -> 0                                label

Rows with a missing value in any column are dropped, as is usual for this
data. The published files have 32561 / 16281 rows, leaving 30162 / 15060.
Sensitive features: sex, relationship, marital-status.
"""

from __future__ import annotations

from pathlib import Path

from .errors import ParseError, ValidationError
from .tabular import CATEGORICAL, NUMERIC, Dataset, FeatureSchema, FeatureSpec, Instance

RAW_COLUMNS = ("age", "workclass", "fnlwgt", "education", "education-num", "marital-status",
               "occupation", "relationship", "race", "sex", "capital-gain", "capital-loss",
               "hours-per-week", "native-country", "income")
UCI_ROWS = {"adult.data": 32561, "adult.test": 16281}
UCI_COMPLETE_ROWS = {"adult.data": 30162, "adult.test": 15060}

ADULT_SCHEMA = FeatureSchema((
    FeatureSpec("age", NUMERIC, (17.0, 90.0)),
    FeatureSpec("workclass", CATEGORICAL, None, (
        "Private", "Self-emp-not-inc", "Self-emp-inc", "Federal-gov", "Local-gov", "State-gov",
        "Without-pay", "Never-worked")),
    FeatureSpec("education-num", NUMERIC, (1.0, 16.0)),
    FeatureSpec("marital-status", CATEGORICAL, None, (
        "Married-civ-spouse", "Divorced", "Never-married", "Separated", "Widowed",
        "Married-spouse-absent", "Married-AF-spouse"), sensitive=True),
    FeatureSpec("occupation", CATEGORICAL, None, (
        "Tech-support", "Craft-repair", "Other-service", "Sales", "Exec-managerial",
        "Prof-specialty", "Handlers-cleaners", "Machine-op-inspct", "Adm-clerical",
        "Farming-fishing", "Transport-moving", "Priv-house-serv", "Protective-serv",
        "Armed-Forces")),
    FeatureSpec("relationship", CATEGORICAL, None, (
        "Wife", "Own-child", "Husband", "Not-in-family", "Other-relative", "Unmarried"),
        sensitive=True),
    FeatureSpec("race", CATEGORICAL, None, (
        "White", "Asian-Pac-Islander", "Amer-Indian-Eskimo", "Other", "Black")),
    FeatureSpec("sex", CATEGORICAL, None, ("Female", "Male"), sensitive=True),
    FeatureSpec("capital-gain", NUMERIC, (0.0, 99999.0)),
    FeatureSpec("capital-loss", NUMERIC, (0.0, 4356.0)),
    FeatureSpec("hours-per-week", NUMERIC, (1.0, 99.0)),
))


def parse_adult(text: str, source: str = "<string>") -> tuple[Dataset, int]:
    """Parse raw UCI Adult text. Returns the dataset and the number of rows
    dropped for missing values."""
    kept = [RAW_COLUMNS.index(n) for n in ADULT_SCHEMA.names]
    label_col = RAW_COLUMNS.index("income")
    rows, dropped = [], 0
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("|"):
            continue
        cells = [c.strip() for c in line.split(",")]
        if len(cells) != len(RAW_COLUMNS):
            raise ParseError(f"{source}:{lineno}: expected {len(RAW_COLUMNS)} fields, got {len(cells)}")
        if "?" in cells:
            dropped += 1
            continue
        label_text = cells[label_col].rstrip(".")
        if label_text not in (">50K", "<=50K"):
            raise ValidationError(f"{source}:{lineno}: bad income {cells[label_col]!r}",
                                  lineno, "income")
        values = []
        for f, j in zip(ADULT_SCHEMA.features, kept):
            if f.is_numeric:
                try:
                    values.append(float(cells[j]))
                except ValueError:
                    raise ValidationError(f"{source}:{lineno}: {f.name} = {cells[j]!r} is not a number",
                                          lineno, f.name) from None
            else:
                if cells[j] not in f.categories:
                    raise ValidationError(f"{source}:{lineno}: {f.name} = {cells[j]!r} not in schema",
                                          lineno, f.name)
                values.append(cells[j])
        rows.append(Instance(tuple(values), int(label_text == ">50K")))
    return Dataset(ADULT_SCHEMA, tuple(rows), {"source": "uci-adult", "file": source,
                                               "dropped_missing": dropped}), dropped


def load_adult(path: str | Path) -> Dataset:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from None
    return parse_adult(text, path.name)[0]
