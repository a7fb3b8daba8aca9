"""musclebench: leakage-safe benchmarking of biomarker-to-outcome regressors.

Three model families share one train/test protocol on small cohorts:
tuned classical baselines, SPD-matrix distance features under the Stein
divergence, and simulated quantum fidelity-kernel regressors.
"""
from __future__ import annotations

__version__ = "0.1.0"

from . import bench, data, errors, evaluation, linmodels, preprocess, qkernel, spd, trees  # noqa: F401
from .errors import MuscleBenchError  # noqa: F401
