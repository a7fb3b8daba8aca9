"""Cohort schema, CSV ingest, synthetic cohorts, and leakage-safe splits.

The cohort is a small table of subjects: one categorical condition column
(Sham / CS), a block of nonnegative biomarker columns, and two measured
outcome columns (muscle weight in mg, specific force in mN).  A third outcome,
quality = force / weight, is derived at construction time.  Missing biomarker
cells are first-class and carried as NaN; targets used in a benchmark run must
be complete.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DomainError, ParseError, SchemaError, SplitError
from .util import index_hash, seeded_rng, sorted_tuple

CONDITION_COLUMN = "condition"
SHAM, CS = 0, 1
CONDITION_LABELS = {"Sham": SHAM, "CS": CS, "0": SHAM, "1": CS}
CONDITION_NAMES = {SHAM: "Sham", CS: "CS"}

BIOMARKER_COLUMNS = (
    "balf_total",
    "balf_macrophages",
    "balf_neutrophils",
    "balf_lymphocytes",
    "crp",
    "ox_stress",
    "tnfa_mrna",
    "vo2",
    "activity",
)
MEASURED_TARGETS = ("weight_mg", "force_mN")
QUALITY_TARGET = "quality"
TARGET_COLUMNS = MEASURED_TARGETS + (QUALITY_TARGET,)

_DEFAULT_UNITS = {
    "condition": "Sham=0,CS=1",
    "balf_total": "10^3 cells/mL",
    "balf_macrophages": "10^3 cells/mL",
    "balf_neutrophils": "10^3 cells/mL",
    "balf_lymphocytes": "10^3 cells/mL",
    "crp": "mg/L",
    "ox_stress": "a.u.",
    "tnfa_mrna": "fold change",
    "vo2": "mL/kg/h",
    "activity": "counts/h",
    "weight_mg": "mg",
    "force_mN": "mN",
    "quality": "mN/mg",
}


@dataclass(frozen=True)
class ColumnSpec:
    """Declares one column: its role in the protocol and its unit label."""

    name: str
    role: str  # condition | feature | target
    unit: str = ""

    def __post_init__(self):
        if self.role not in ("condition", "feature", "target"):
            raise SchemaError(f"column {self.name!r}: unknown role {self.role!r}")


@dataclass(frozen=True)
class CohortSchema:
    columns: tuple[ColumnSpec, ...]

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate column name in schema")
        if CONDITION_COLUMN not in names:
            raise SchemaError("schema must declare a condition column")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.columns)

    @property
    def feature_names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.columns if c.role == "feature")

    @property
    def target_names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.columns if c.role == "target")

    def spec(self, name: str) -> ColumnSpec:
        for col in self.columns:
            if col.name == name:
                return col
        raise SchemaError(f"unknown column {name!r}")

    def to_text(self) -> str:
        lines = ["# cohort schema descriptor", "version = 1"]
        for col in self.columns:
            lines.append(f"{col.name} = {col.role} | {col.unit}")
        return "\n".join(lines) + "\n"

    @staticmethod
    def from_text(text: str) -> "CohortSchema":
        cols = []
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ParseError(f"schema descriptor line {lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            if key == "version":
                continue
            role, _, unit = (part.strip() for part in value.partition("|"))
            cols.append(ColumnSpec(key, role, unit))
        return CohortSchema(tuple(cols))


def default_schema() -> CohortSchema:
    cols = [ColumnSpec(CONDITION_COLUMN, "condition", _DEFAULT_UNITS[CONDITION_COLUMN])]
    for name in BIOMARKER_COLUMNS:
        cols.append(ColumnSpec(name, "feature", _DEFAULT_UNITS[name]))
    for name in MEASURED_TARGETS:
        cols.append(ColumnSpec(name, "target", _DEFAULT_UNITS[name]))
    return CohortSchema(tuple(cols))


DEFAULT_SCHEMA = default_schema()


@dataclass(frozen=True)
class SubjectRecord:
    """One subject: condition code plus feature/target values (NaN = missing)."""

    condition: int
    features: dict
    weight_mg: float = math.nan
    force_mN: float = math.nan

    @property
    def quality(self) -> float:
        if math.isnan(self.weight_mg) or math.isnan(self.force_mN):
            return math.nan
        return self.force_mN / self.weight_mg


class Cohort:
    """Immutable-by-convention container of subject records.

    All column reads go through :meth:`columns` / :meth:`target` /
    :meth:`condition_values`; audits that need to verify which columns a
    model touched can subclass and override these funnels.
    """

    def __init__(self, records, schema: CohortSchema | None = None):
        self.schema = schema or DEFAULT_SCHEMA
        self.records = tuple(records)
        if len(self.records) == 0:
            raise SchemaError("cohort has no subjects")
        cond = np.array([r.condition for r in self.records], dtype=int)
        if np.any((cond != SHAM) & (cond != CS)):
            raise SchemaError("condition codes must be 0 (Sham) or 1 (CS)")
        # benchmark-level preconditions (n >= 4, both conditions, >= 2 per
        # stratum) are enforced by the split routines, not here, so that
        # tiny files remain loadable for inspection
        self._condition = cond
        self.feature_names = tuple(
            name for name in self.schema.feature_names
            if any(name in r.features for r in self.records)
        )
        self._columns = {}
        for name in self.feature_names:
            self._columns[name] = np.array(
                [r.features.get(name, math.nan) for r in self.records], dtype=float
            )
        weight = np.array([r.weight_mg for r in self.records], dtype=float)
        force = np.array([r.force_mN for r in self.records], dtype=float)
        if np.any(weight[~np.isnan(weight)] <= 0):
            raise DomainError("muscle weight must be positive; zero/negative weight found")
        with np.errstate(invalid="ignore", divide="ignore"):
            quality = force / weight
        self._targets = {"weight_mg": weight, "force_mN": force, "quality": quality}

    def __len__(self) -> int:
        return len(self.records)

    @property
    def n(self) -> int:
        return len(self.records)

    def condition_values(self, idx=None) -> np.ndarray:
        if idx is None:
            return self._condition.copy()
        return self._condition[np.asarray(idx, dtype=int)]

    def columns(self, names, idx=None) -> np.ndarray:
        """Feature matrix for the named columns (rows = subjects or `idx`)."""
        names = tuple(names)
        for name in names:
            if name in TARGET_COLUMNS:
                raise SchemaError(f"target column {name!r} cannot be used as a feature")
            if name == CONDITION_COLUMN:
                raise SchemaError("read the condition through condition_values()")
            if name not in self._columns:
                raise SchemaError(f"unknown feature column {name!r}")
        if len(names) == 0:
            rows = self.n if idx is None else len(np.asarray(idx))
            return np.empty((rows, 0), dtype=float)
        mat = np.column_stack([self._columns[name] for name in names])
        if idx is not None:
            mat = mat[np.asarray(idx, dtype=int)]
        return mat

    def target(self, name: str, idx=None) -> np.ndarray:
        if name not in self._targets:
            raise SchemaError(
                f"unknown target {name!r}; expected one of {sorted(self._targets)}"
            )
        values = self._targets[name]
        if idx is None:
            return values.copy()
        return values[np.asarray(idx, dtype=int)]

    def counts(self) -> dict:
        return {
            "n": self.n,
            "sham": int(np.sum(self._condition == SHAM)),
            "cs": int(np.sum(self._condition == CS)),
        }


def _parse_cell(text: str, column: str, lineno: int) -> float:
    text = text.strip()
    if text == "":
        return math.nan
    try:
        return float(text)
    except ValueError:
        raise ParseError(
            f"line {lineno}: column {column!r} has non-numeric value {text!r}"
        ) from None


def load_cohort(path, schema: CohortSchema | None = None) -> Cohort:
    """Read a cohort CSV.  Empty cells are missing; condition accepts Sham/CS or 0/1."""
    path = Path(path)
    if schema is None:
        descriptor = path.with_suffix(".schema")
        schema = (
            CohortSchema.from_text(descriptor.read_text())
            if descriptor.exists()
            else DEFAULT_SCHEMA
        )
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if len(set(header)) != len(header):
            dupes = sorted({h for h in header if header.count(h) > 1})
            raise SchemaError(f"duplicate column(s) in header: {dupes}")
        known = set(schema.names) | {QUALITY_TARGET}
        unknown = [h for h in header if h not in known]
        if unknown:
            raise SchemaError(f"unknown column(s) in header: {unknown}")
        if CONDITION_COLUMN not in header:
            raise SchemaError("header must contain the condition column")
        if not any(t in header for t in TARGET_COLUMNS):
            raise SchemaError("header must contain at least one target column")
        col_of = {name: header.index(name) for name in header}
        records = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) == 0:
                continue
            if len(row) != len(header):
                raise ParseError(
                    f"line {lineno}: expected {len(header)} cells, got {len(row)}"
                )
            raw_cond = row[col_of[CONDITION_COLUMN]].strip()
            if raw_cond not in CONDITION_LABELS:
                raise SchemaError(
                    f"line {lineno}: unknown condition label {raw_cond!r}; "
                    f"expected one of {sorted(set(CONDITION_LABELS))}"
                )
            features = {}
            for name in schema.feature_names:
                if name in col_of:
                    features[name] = _parse_cell(row[col_of[name]], name, lineno)
            weight = (
                _parse_cell(row[col_of["weight_mg"]], "weight_mg", lineno)
                if "weight_mg" in col_of
                else math.nan
            )
            force = (
                _parse_cell(row[col_of["force_mN"]], "force_mN", lineno)
                if "force_mN" in col_of
                else math.nan
            )
            if QUALITY_TARGET in col_of:
                quality = _parse_cell(row[col_of[QUALITY_TARGET]], QUALITY_TARGET, lineno)
                if not math.isnan(quality) and not math.isnan(weight) and not math.isnan(force):
                    if weight == 0:
                        raise DomainError(f"line {lineno}: zero weight with quality column")
                    expected = force / weight
                    scale = max(abs(expected), 1e-300)
                    if abs(quality - expected) > 1e-9 * scale:
                        raise SchemaError(
                            f"line {lineno}: quality={quality!r} is not force/weight={expected!r}"
                        )
            records.append(
                SubjectRecord(
                    condition=CONDITION_LABELS[raw_cond],
                    features=features,
                    weight_mg=weight,
                    force_mN=force,
                )
            )
    return Cohort(records, schema)


def save_cohort(cohort: Cohort, path) -> None:
    """Write the cohort CSV plus its companion schema descriptor."""
    path = Path(path)
    names = [CONDITION_COLUMN] + list(cohort.feature_names) + list(MEASURED_TARGETS)

    def cell(value: float) -> str:
        return "" if math.isnan(value) else repr(float(value))

    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(names)
        for rec in cohort.records:
            row = [CONDITION_NAMES[rec.condition]]
            row += [cell(rec.features.get(name, math.nan)) for name in cohort.feature_names]
            row += [cell(rec.weight_mg), cell(rec.force_mN)]
            writer.writerow(row)
    path.with_suffix(".schema").write_text(cohort.schema.to_text())


# ---------------------------------------------------------------------------
# synthetic cohorts


@dataclass(frozen=True)
class ColumnProfile:
    """Generator settings for one column.

    family "lognormal": value = mean * exp(noise * z - noise^2 / 2), z ~ N(0,1),
    so the expectation equals `mean` exactly and values stay positive.
    family "normal": value = mean + noise * z.
    """

    sham_mean: float
    cs_mean: float
    noise: float
    family: str = "lognormal"

    def __post_init__(self):
        if self.noise < 0:
            raise ConfigError(f"noise scale must be >= 0, got {self.noise}")
        if self.family not in ("lognormal", "normal"):
            raise ConfigError(f"unknown noise family {self.family!r}")
        if self.family == "lognormal" and (self.sham_mean <= 0 or self.cs_mean <= 0):
            raise ConfigError("lognormal columns need positive means")

    def mean(self, condition: int) -> float:
        return self.cs_mean if condition == CS else self.sham_mean


def _default_column_profiles() -> dict:
    return {
        "balf_total": ColumnProfile(120.0, 300.0, 0.40),
        "balf_macrophages": ColumnProfile(100.0, 180.0, 0.40),
        "balf_neutrophils": ColumnProfile(5.0, 15.0, 0.60),
        "balf_lymphocytes": ColumnProfile(8.0, 14.0, 0.50),
        "crp": ColumnProfile(4.0, 9.0, 0.50),
        "ox_stress": ColumnProfile(1.0, 2.2, 0.50),
        "tnfa_mrna": ColumnProfile(1.0, 2.5, 0.50),
        "vo2": ColumnProfile(3000.0, 2600.0, 0.15),
        "activity": ColumnProfile(250.0, 180.0, 0.30),
        "weight_mg": ColumnProfile(47.0, 41.0, 4.0, family="normal"),
        "force_mN": ColumnProfile(11500.0, 9000.0, 1500.0, family="normal"),
    }


@dataclass(frozen=True)
class GenProfile:
    """Effect profile of the synthetic cohort generator.

    The CS group gets higher inflammatory markers and lower weight/force than
    Sham through the per-column means; on top of that, muscle weight is pulled
    down in proportion to the subject's CRP x neutrophil product (relative to
    the Sham reference product), planting a biomarker interaction that models
    can pick up beyond the group shift.
    """

    columns: dict = field(default_factory=_default_column_profiles)
    cs_fraction: float = 0.5
    interaction_coef: float = 0.5
    missing_rate: float = 0.0

    def __post_init__(self):
        if not 0 < self.cs_fraction < 1:
            raise ConfigError("cs_fraction must lie strictly between 0 and 1")
        if not 0 <= self.missing_rate < 1:
            raise ConfigError("missing_rate must lie in [0, 1)")
        for name in BIOMARKER_COLUMNS + MEASURED_TARGETS:
            if name not in self.columns:
                raise ConfigError(f"profile is missing column {name!r}")


def generate_synthetic_cohort(
    n: int, seed: int, profile: GenProfile | None = None
) -> Cohort:
    """Deterministic synthetic cohort; same (n, seed, profile) gives identical data."""
    if n < 4:
        raise ConfigError(f"need n >= 4 subjects, got {n}")
    profile = profile or GenProfile()
    rng = seeded_rng(seed)
    n_cs = int(math.floor(n * profile.cs_fraction + 0.5))
    n_cs = min(max(n_cs, 1), n - 1)
    condition = np.concatenate([np.zeros(n - n_cs, dtype=int), np.ones(n_cs, dtype=int)])

    values = {}
    # one vectorized draw per column, in schema order, to pin the RNG stream
    for name in BIOMARKER_COLUMNS + MEASURED_TARGETS:
        col = profile.columns[name]
        means = np.where(condition == CS, col.mean(CS), col.mean(SHAM)).astype(float)
        z = rng.standard_normal(n)
        if col.family == "lognormal":
            values[name] = means * np.exp(col.noise * z - 0.5 * col.noise**2)
        else:
            values[name] = means + col.noise * z

    crp_sham = profile.columns["crp"].sham_mean
    neut_sham = profile.columns["balf_neutrophils"].sham_mean
    reference = crp_sham * neut_sham
    excess = (values["crp"] * values["balf_neutrophils"] - reference) / reference
    values["weight_mg"] = values["weight_mg"] - profile.interaction_coef * excess
    values["weight_mg"] = np.maximum(values["weight_mg"], 1e-3)
    values["force_mN"] = np.maximum(values["force_mN"], 1e-3)

    missing = {}
    if profile.missing_rate > 0:
        for name in BIOMARKER_COLUMNS:
            missing[name] = rng.random(n) < profile.missing_rate

    records = []
    for i in range(n):
        features = {}
        for name in BIOMARKER_COLUMNS:
            if profile.missing_rate > 0 and missing[name][i]:
                features[name] = math.nan
            else:
                features[name] = float(values[name][i])
        records.append(
            SubjectRecord(
                condition=int(condition[i]),
                features=features,
                weight_mg=float(values["weight_mg"][i]),
                force_mN=float(values["force_mN"][i]),
            )
        )
    return Cohort(records)


# ---------------------------------------------------------------------------
# splits


@dataclass(frozen=True)
class SplitPlan:
    """Frozen row-index bookkeeping for one benchmark run.

    folds holds (fit_idx, val_idx) pairs over the training half; the test
    half never appears in any fold.
    """

    train_idx: tuple[int, ...]
    test_idx: tuple[int, ...]
    folds: tuple[tuple[tuple[int, ...], tuple[int, ...]], ...]
    seed: int
    cv_seed: int | None = None

    @property
    def train_hash(self) -> str:
        return index_hash(self.train_idx)


def _stratum_indices(condition: np.ndarray) -> list[np.ndarray]:
    return [np.flatnonzero(condition == level) for level in (SHAM, CS)]


def stratified_split(cohort: Cohort, test_fraction: float, seed: int) -> SplitPlan:
    """Stratified train/test split with largest-remainder test allocation.

    The total test count is round(n * test_fraction) (half-up); each stratum
    contributes floor(n_s * test_fraction) subjects, and the remaining slots
    go to the strata with the largest fractional remainders (ties broken by
    condition code, Sham first).
    """
    if not 0 < test_fraction < 1:
        raise SplitError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    condition = cohort.condition_values()
    strata = _stratum_indices(condition)
    for level, members in zip((SHAM, CS), strata):
        if len(members) < 2:
            raise SplitError(
                f"stratum {CONDITION_NAMES[level]} has {len(members)} subject(s); need >= 2"
            )
    n = len(condition)
    total_test = int(math.floor(n * test_fraction + 0.5))
    quotas = [len(m) * test_fraction for m in strata]
    base = [int(math.floor(q)) for q in quotas]
    leftover = total_test - sum(base)
    order = sorted(range(len(strata)), key=lambda s: (-(quotas[s] - base[s]), s))
    counts = list(base)
    for s in order[:leftover]:
        counts[s] += 1
    rng = seeded_rng(seed)
    test_parts, train_parts = [], []
    for members, take in zip(strata, counts):
        if take > len(members) - 1:
            raise SplitError(
                f"allocation of {take} test subjects from a stratum of {len(members)} "
                "leaves no training subjects"
            )
        perm = members[rng.permutation(len(members))]
        test_parts.append(perm[:take])
        train_parts.append(perm[take:])
    test_idx = sorted_tuple(np.concatenate(test_parts))
    train_idx = sorted_tuple(np.concatenate(train_parts))
    return SplitPlan(train_idx=train_idx, test_idx=test_idx, folds=(), seed=seed)


def kfold_indices(
    indices, condition: np.ndarray, n_folds: int, seed: int
) -> tuple[tuple[tuple[int, ...], tuple[int, ...]], ...]:
    """Stratified K-fold over `indices`; per-stratum fold sizes differ by <= 1.

    Returns (fit_idx, val_idx) per fold; validation sets partition `indices`.
    """
    indices = np.asarray(sorted(int(i) for i in indices), dtype=int)
    condition = np.asarray(condition, dtype=int)
    if n_folds < 2:
        raise SplitError(f"need at least 2 folds, got {n_folds}")
    cond_of = condition[indices]
    rng = seeded_rng(seed)
    assignment = np.empty(len(indices), dtype=int)
    for level in (SHAM, CS):
        members = np.flatnonzero(cond_of == level)
        if len(members) < n_folds:
            raise SplitError(
                f"stratum {CONDITION_NAMES[level]} has {len(members)} training subjects; "
                f"cannot fill {n_folds} folds"
            )
        perm = members[rng.permutation(len(members))]
        for pos, member in enumerate(perm):
            assignment[member] = pos % n_folds
    folds = []
    for k in range(n_folds):
        val = indices[assignment == k]
        fit = indices[assignment != k]
        folds.append((sorted_tuple(fit), sorted_tuple(val)))
    return tuple(folds)


def make_split_plan(
    cohort: Cohort,
    test_fraction: float,
    n_folds: int,
    seed: int,
    cv_seed: int,
) -> SplitPlan:
    """Stratified split plus stratified K-fold CV folds over the training half."""
    plan = stratified_split(cohort, test_fraction, seed)
    folds = kfold_indices(plan.train_idx, cohort.condition_values(), n_folds, cv_seed)
    return SplitPlan(
        train_idx=plan.train_idx,
        test_idx=plan.test_idx,
        folds=folds,
        seed=seed,
        cv_seed=cv_seed,
    )
