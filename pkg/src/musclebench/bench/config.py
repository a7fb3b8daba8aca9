"""Run configuration: the dataclass plus INI-style config file loading.

A config file has a [run] section for protocol knobs, [screening] for the
threshold rule, [compact] for the compact biomarker budget, and optional
[grid.<family>] sections overriding one grid dimension per key, e.g.

    [grid.ridge_raw]
    alpha = 0.001, 0.1, 10.0
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields

from ..data import BIOMARKER_COLUMNS, TARGET_COLUMNS
from ..errors import ConfigError
from ..evaluation import ScreeningSpec
from .families import FAMILY_ORDER

BUDGETS = ("full", "engineered", "compact-3+condition", "compact-3")
TARGETS = TARGET_COLUMNS


@dataclass
class RunConfig:
    """Everything one benchmark run depends on.

    `budget` is "per_family" by default: each family keeps the budget its
    report section declares. Setting one of the four budget names forces it
    on every enabled family instead.
    """

    source: str = "synthetic"
    n_subjects: int = 213
    cohort_seed: int = 7
    target: str = "weight_mg"
    budget: str = "per_family"
    families: tuple = FAMILY_ORDER
    kappa: float = 0.8
    statistic: str = "mean"
    positive_class: str = "low"
    test_fraction: float = 0.2
    split_seed: int = 1
    cv_seed: int = 2
    cv_folds: int = 5
    base_seed: int = 0
    jobs: int = 1
    outdir: str = "results"
    compact_columns: tuple = ("crp", "balf_neutrophils", "balf_total")
    auto_rank_compact: bool = False
    grid_overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.target not in TARGETS:
            raise ConfigError(f"target must be one of {TARGETS}, got {self.target!r}")
        if self.budget not in BUDGETS + ("per_family",):
            raise ConfigError(
                f"budget must be per_family or one of {BUDGETS}, got {self.budget!r}"
            )
        self.families = tuple(self.families)
        unknown = [f for f in self.families if f not in FAMILY_ORDER]
        if unknown:
            raise ConfigError(f"unknown model families: {unknown}")
        if not self.families:
            raise ConfigError("at least one model family must be enabled")
        # report rows keep a fixed order regardless of how families were listed
        enabled = set(self.families)
        self.families = tuple(name for name in FAMILY_ORDER if name in enabled)
        self.compact_columns = tuple(self.compact_columns)
        if len(self.compact_columns) != 3:
            raise ConfigError(
                f"compact budgets name exactly three biomarkers, got {len(self.compact_columns)}"
            )
        bad = [c for c in self.compact_columns if c not in BIOMARKER_COLUMNS]
        if bad:
            raise ConfigError(f"compact columns are not biomarkers: {bad}")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError(f"test_fraction must lie in (0, 1), got {self.test_fraction}")
        if self.cv_folds < 2:
            raise ConfigError(f"cv_folds must be >= 2, got {self.cv_folds}")
        if self.jobs < 1:
            raise ConfigError(f"jobs must be >= 1, got {self.jobs}")
        if self.n_subjects < 10 and self.source == "synthetic":
            raise ConfigError(f"synthetic cohorts need n >= 10, got {self.n_subjects}")
        # constructing a spec validates kappa/statistic/positive_class in one place
        self.screening_spec()

    def screening_spec(self) -> ScreeningSpec:
        """Fresh unfitted spec; tau is fitted per split, never shared."""
        return ScreeningSpec(self.kappa, self.statistic, self.positive_class)


def _parse_scalar(text: str):
    text = text.strip()
    lowered = text.lower()
    if lowered in ("true", "yes", "on"):
        return True
    if lowered in ("false", "no", "off"):
        return False
    if lowered in ("none", "null"):
        return None
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text


def _parse_list(text: str) -> tuple:
    return tuple(_parse_scalar(part) for part in text.split(",") if part.strip())


_RUN_KEYS = {
    "source": str,
    "n_subjects": int,
    "cohort_seed": int,
    "target": str,
    "budget": str,
    "families": "list",
    "test_fraction": float,
    "split_seed": int,
    "cv_seed": int,
    "cv_folds": int,
    "base_seed": int,
    "jobs": int,
    "outdir": str,
}
_SCREENING_KEYS = {"kappa": float, "statistic": str, "positive_class": str}
_COMPACT_KEYS = {"columns": "list", "auto_rank": bool}


def load_run_config(path) -> RunConfig:
    """Parse an INI config file; unknown sections or keys are errors."""
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"config file not found: {path}")
    kwargs = {}
    overrides = {}
    for section in parser.sections():
        items = parser[section]
        if section == "run":
            for key, value in items.items():
                if key not in _RUN_KEYS:
                    raise ConfigError(f"unknown key {key!r} in [run]")
                kind = _RUN_KEYS[key]
                kwargs[key] = _parse_list(value) if kind == "list" else kind(value)
        elif section == "screening":
            for key, value in items.items():
                if key not in _SCREENING_KEYS:
                    raise ConfigError(f"unknown key {key!r} in [screening]")
                kwargs[key] = _SCREENING_KEYS[key](value)
        elif section == "compact":
            for key, value in items.items():
                if key == "columns":
                    kwargs["compact_columns"] = _parse_list(value)
                elif key == "auto_rank":
                    kwargs["auto_rank_compact"] = bool(_parse_scalar(value))
                else:
                    raise ConfigError(f"unknown key {key!r} in [compact]")
        elif section.startswith("grid."):
            family = section[len("grid.") :]
            if family not in FAMILY_ORDER:
                raise ConfigError(f"grid override for unknown family {family!r}")
            overrides[family] = {k: _parse_list(v) for k, v in items.items()}
        else:
            raise ConfigError(f"unknown config section [{section}]")
    if overrides:
        kwargs["grid_overrides"] = overrides
    return RunConfig(**kwargs)


def config_summary(config: RunConfig) -> dict:
    """Flat dict of the protocol knobs, for report headers."""
    out = {}
    for f in fields(config):
        if f.name == "grid_overrides":
            continue
        value = getattr(config, f.name)
        out[f.name] = list(value) if isinstance(value, tuple) else value
    return out
