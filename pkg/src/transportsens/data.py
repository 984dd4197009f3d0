"""Pooled multi-study data model, CSV ingestion, and balance summaries.

A pooled dataset stacks a target sample (study id 0, covariates only) with
m >= 1 study samples (covariates, binary treatment, outcome). Categorical
covariates are expanded to reference-coded indicator columns at load time so
that weight estimation is reproducible across runs.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from transportsens.errors import (
    PositivityError,
    SchemaError,
    ValidationError,
)


@dataclass(frozen=True)
class UnitRecord:
    """One unit: study membership, optional treatment/outcome, covariates."""

    study_id: int
    treatment: int | None
    outcome: float | None
    covariates: dict[str, float]

    @property
    def in_studies(self) -> bool:
        """R indicator: 1 iff the unit belongs to one of the studies."""
        return self.study_id != 0


@dataclass(frozen=True)
class ArmCounts:
    """Treated/control counts, in total and per study."""

    n_treated: int
    n_control: int
    per_study: dict[int, tuple[int, int]]

    def __post_init__(self) -> None:
        total = sum(t + c for t, c in self.per_study.values())
        if self.n_treated + self.n_control != total:
            raise ValidationError("arm totals do not match per-study sums")


@dataclass(frozen=True)
class ColumnSchema:
    """Column roles for CSV ingestion.

    `modifiers` and `adjusters` refer to original column names (before any
    indicator expansion); modifiers must be a subset of adjusters.
    """

    modifiers: tuple[str, ...]
    adjusters: tuple[str, ...]
    study: str = "study"
    treatment: str = "treatment"
    outcome: str = "outcome"

    @classmethod
    def from_json(cls, path: str | Path) -> "ColumnSchema":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        try:
            return cls(
                modifiers=tuple(raw["modifiers"]),
                adjusters=tuple(raw["adjusters"]),
                study=raw.get("study", "study"),
                treatment=raw.get("treatment", "treatment"),
                outcome=raw.get("outcome", "outcome"),
            )
        except KeyError as exc:
            raise SchemaError(f"schema file {path} is missing key {exc}") from exc


@dataclass(frozen=True)
class PooledDataset:
    """Immutable columnar view of the pooled target + study samples.

    `covariates` holds the (already numeric) encoded matrix; `column_groups`
    maps each original covariate name to the encoded columns it produced
    (identity for numeric columns), so that categorical modifiers can be
    dropped as a block.
    """

    study: np.ndarray
    treatment: np.ndarray
    outcome: np.ndarray
    covariates: np.ndarray
    covariate_names: tuple[str, ...]
    modifier_names: tuple[str, ...]
    adjustment_names: tuple[str, ...]
    column_groups: dict[str, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        study = np.ascontiguousarray(self.study, dtype=np.int64)
        treatment = np.ascontiguousarray(self.treatment, dtype=np.float64)
        outcome = np.ascontiguousarray(self.outcome, dtype=np.float64)
        covariates = np.ascontiguousarray(self.covariates, dtype=np.float64)
        object.__setattr__(self, "study", study)
        object.__setattr__(self, "treatment", treatment)
        object.__setattr__(self, "outcome", outcome)
        object.__setattr__(self, "covariates", covariates)
        if not self.column_groups:
            object.__setattr__(
                self,
                "column_groups",
                {name: (name,) for name in self.covariate_names},
            )
        self._validate()
        for arr in (study, treatment, outcome, covariates):
            arr.setflags(write=False)

    def _validate(self) -> None:
        n = self.study.shape[0]
        if self.treatment.shape != (n,) or self.outcome.shape != (n,):
            raise ValidationError("treatment/outcome must align with study ids")
        if self.covariates.shape != (n, len(self.covariate_names)):
            raise ValidationError("covariate matrix does not match names")
        if np.isnan(self.covariates).any():
            bad = int(np.flatnonzero(np.isnan(self.covariates).any(axis=1))[0])
            raise ValidationError(f"missing covariate value at unit {bad}")
        if (self.study < 0).any():
            raise ValidationError("study ids must be nonnegative")

        known = set()
        for name, cols in self.column_groups.items():
            for col in cols:
                if col not in self.covariate_names:
                    raise SchemaError(f"group {name!r} names unknown column {col!r}")
                known.add(col)
        if known != set(self.covariate_names):
            raise SchemaError("column_groups must cover every covariate column")
        for role, names in (("modifier", self.modifier_names),
                            ("adjustment", self.adjustment_names)):
            for name in names:
                if name not in self.column_groups:
                    raise SchemaError(f"unknown {role} covariate {name!r}")
        if not set(self.modifier_names) <= set(self.adjustment_names):
            raise ValidationError("modifiers must be a subset of the adjustment set")
        if not self.modifier_names:
            raise ValidationError("at least one effect modifier is required")

        target = self.study == 0
        if not target.any():
            raise ValidationError("dataset has no target sample (study id 0)")
        if target.all():
            raise ValidationError("dataset has no study samples")
        t_nan = np.isnan(self.treatment)
        y_nan = np.isnan(self.outcome)
        if not (t_nan[target].all() and y_nan[target].all()):
            bad = int(np.flatnonzero(target & ~(t_nan & y_nan))[0])
            raise ValidationError(
                f"target unit {bad} carries treatment or outcome data"
            )
        if t_nan[~target].any() or y_nan[~target].any():
            bad = int(np.flatnonzero(~target & (t_nan | y_nan))[0])
            raise ValidationError(f"study unit {bad} lacks treatment or outcome")
        a = self.treatment[~target]
        if not np.isin(a, (0.0, 1.0)).all():
            raise ValidationError("treatment must be binary (0/1)")
        for s in self.study_ids:
            arm = self.treatment[self.study == s]
            if not (arm == 1).any() or not (arm == 0).any():
                raise PositivityError(f"study {s} has an empty treatment arm")

    # -- basic structure -------------------------------------------------

    @property
    def n_units(self) -> int:
        return int(self.study.shape[0])

    @property
    def in_studies(self) -> np.ndarray:
        return self.study != 0

    @property
    def study_index(self) -> np.ndarray:
        """Row indices of study units, in original order."""
        return np.flatnonzero(self.study != 0)

    @property
    def target_index(self) -> np.ndarray:
        return np.flatnonzero(self.study == 0)

    @property
    def study_ids(self) -> tuple[int, ...]:
        return tuple(int(s) for s in np.unique(self.study) if s != 0)

    @property
    def n_studies(self) -> int:
        return len(self.study_ids)

    @property
    def study_sizes(self) -> dict[int, int]:
        ids, counts = np.unique(self.study, return_counts=True)
        return {int(s): int(c) for s, c in zip(ids, counts)}

    @property
    def units(self) -> list[UnitRecord]:
        out = []
        for i in range(self.n_units):
            s = int(self.study[i])
            a = self.treatment[i]
            y = self.outcome[i]
            out.append(
                UnitRecord(
                    study_id=s,
                    treatment=None if math.isnan(a) else int(a),
                    outcome=None if math.isnan(y) else float(y),
                    covariates={
                        name: float(self.covariates[i, j])
                        for j, name in enumerate(self.covariate_names)
                    },
                )
            )
        return out

    def arm_counts(self) -> ArmCounts:
        per_study = {}
        for s in self.study_ids:
            arm = self.treatment[self.study == s]
            per_study[s] = (int((arm == 1).sum()), int((arm == 0).sum()))
        return ArmCounts(
            n_treated=sum(t for t, _ in per_study.values()),
            n_control=sum(c for _, c in per_study.values()),
            per_study=per_study,
        )

    # -- column access ---------------------------------------------------

    def columns_for(self, names: Sequence[str], exclude: str | None = None) -> list[str]:
        """Encoded column names for the given original names.

        When `exclude` refers to a categorical covariate, all of its indicator
        columns are dropped together.
        """
        if exclude is not None and exclude not in self.column_groups:
            raise KeyError(exclude)
        cols: list[str] = []
        for name in names:
            if name == exclude:
                continue
            cols.extend(self.column_groups[name])
        return cols

    def matrix(self, columns: Sequence[str]) -> np.ndarray:
        idx = [self.covariate_names.index(c) for c in columns]
        return self.covariates[:, idx]

    def modifier_matrix(self, exclude: str | None = None) -> np.ndarray:
        return self.matrix(self.columns_for(self.modifier_names, exclude))

    def adjustment_matrix(self) -> np.ndarray:
        return self.matrix(self.columns_for(self.adjustment_names))


# -- ingestion -----------------------------------------------------------


def _parse_float(cell: str) -> float | None:
    try:
        return float(cell)
    except ValueError:
        return None


def load_csv(path: str | Path, schema: ColumnSchema) -> PooledDataset:
    """Read a pooled dataset from CSV and validate it.

    Required columns: an integer study column, a 0/1/blank treatment column
    and a decimal/blank outcome column (blank exactly for target rows). Every
    other column is a covariate; non-numeric covariates are expanded into
    reference-coded indicators with lexicographically ordered levels (first
    level dropped).
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise SchemaError(f"{path} has no header row")
        header = list(reader.fieldnames)
        for col in (schema.study, schema.treatment, schema.outcome):
            if col not in header:
                raise SchemaError(f"required column {col!r} not in {path.name}")
        rows = list(reader)
    if not rows:
        raise ValidationError(f"{path.name} contains no data rows")

    cov_cols = [
        c for c in header if c not in (schema.study, schema.treatment, schema.outcome)
    ]
    for role, names in (("modifier", schema.modifiers), ("adjuster", schema.adjusters)):
        for name in names:
            if name not in cov_cols:
                raise SchemaError(f"{role} column {name!r} not in {path.name}")

    n = len(rows)
    study = np.empty(n, dtype=np.int64)
    treatment = np.full(n, np.nan)
    outcome = np.full(n, np.nan)
    raw_cov: dict[str, list[str]] = {c: [] for c in cov_cols}
    for i, row in enumerate(rows):
        rownum = i + 2  # 1-based, counting the header
        s_cell = (row[schema.study] or "").strip()
        try:
            study[i] = int(s_cell)
        except ValueError:
            raise ValidationError(f"row {rownum}: study id {s_cell!r} is not an integer")
        a_cell = (row[schema.treatment] or "").strip()
        y_cell = (row[schema.outcome] or "").strip()
        if study[i] == 0:
            if a_cell or y_cell:
                raise ValidationError(
                    f"row {rownum}: target rows must leave treatment and outcome blank"
                )
        else:
            if a_cell not in ("0", "1"):
                raise ValidationError(f"row {rownum}: treatment must be 0 or 1")
            y_val = _parse_float(y_cell) if y_cell else None
            if y_val is None:
                raise ValidationError(f"row {rownum}: outcome is missing or not numeric")
            treatment[i] = float(a_cell)
            outcome[i] = y_val
        for c in cov_cols:
            cell = (row.get(c) or "").strip()
            if not cell:
                raise ValidationError(f"row {rownum}: missing value for covariate {c!r}")
            raw_cov[c].append(cell)

    matrices: list[np.ndarray] = []
    encoded_names: list[str] = []
    groups: dict[str, tuple[str, ...]] = {}
    for c in cov_cols:
        cells = raw_cov[c]
        values = [_parse_float(x) for x in cells]
        if all(v is not None for v in values):
            matrices.append(np.asarray(values, dtype=np.float64)[:, None])
            encoded_names.append(c)
            groups[c] = (c,)
        else:
            levels = sorted(set(cells))
            kept = levels[1:]  # reference coding, first level dropped
            block = np.zeros((n, len(kept)))
            for j, level in enumerate(kept):
                block[:, j] = [1.0 if x == level else 0.0 for x in cells]
            matrices.append(block)
            names = tuple(f"{c}={level}" for level in kept)
            encoded_names.extend(names)
            groups[c] = names

    covariates = np.hstack(matrices) if matrices else np.empty((n, 0))
    return PooledDataset(
        study=study,
        treatment=treatment,
        outcome=outcome,
        covariates=covariates,
        covariate_names=tuple(encoded_names),
        modifier_names=tuple(schema.modifiers),
        adjustment_names=tuple(schema.adjusters),
        column_groups=groups,
    )


def write_csv(data: PooledDataset, path: str | Path, schema: ColumnSchema | None = None) -> None:
    """Write the (encoded) dataset back to CSV; inverse of `load_csv`."""
    schema = schema or ColumnSchema(
        modifiers=data.modifier_names, adjusters=data.adjustment_names
    )
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [schema.study, schema.treatment, schema.outcome, *data.covariate_names]
        )
        for i in range(data.n_units):
            a = data.treatment[i]
            y = data.outcome[i]
            writer.writerow(
                [
                    int(data.study[i]),
                    "" if math.isnan(a) else int(a),
                    "" if math.isnan(y) else repr(float(y)),
                    *[repr(float(v)) for v in data.covariates[i]],
                ]
            )


# -- balance summaries ----------------------------------------------------


def summarize_smd(data: PooledDataset) -> dict[int, dict[str, float]]:
    """Standardized mean difference of every covariate, study vs. target.

    SMD = (study mean - target mean) / sqrt((study var + target var) / 2).
    A zero pooled SD yields 0 when the means agree and +/-inf otherwise.
    """
    target = data.covariates[data.target_index]
    t_mean = target.mean(axis=0)
    t_var = target.var(axis=0, ddof=1) if target.shape[0] > 1 else np.zeros(target.shape[1])
    out: dict[int, dict[str, float]] = {}
    for s in data.study_ids:
        block = data.covariates[data.study == s]
        s_mean = block.mean(axis=0)
        s_var = block.var(axis=0, ddof=1) if block.shape[0] > 1 else np.zeros(block.shape[1])
        pooled = np.sqrt((s_var + t_var) / 2.0)
        row = {}
        for j, name in enumerate(data.covariate_names):
            diff = s_mean[j] - t_mean[j]
            if pooled[j] == 0.0:
                row[name] = 0.0 if diff == 0.0 else math.copysign(math.inf, diff)
            else:
                row[name] = float(diff / pooled[j])
        out[s] = row
    return out


def max_abs_smd(data: PooledDataset) -> dict[int, float]:
    """Largest |SMD| per study; used for eligibility screens."""
    table = summarize_smd(data)
    return {s: max(abs(v) for v in row.values()) for s, row in table.items()}
