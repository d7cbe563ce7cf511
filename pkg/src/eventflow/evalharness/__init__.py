"""Metrics, slice reports, reference baselines, shipped published figures and experiment drivers."""

from eventflow.evalharness.baselines import BASELINES, BaselinePrediction, baseline_predict, baseline_predictor
from eventflow.evalharness.fixture import PaperFixture
from eventflow.evalharness.metrics import mae, percent_reduction, pooled, rmse
from eventflow.evalharness.report import FULL_GRID, EvalReport, slice_name, slice_report, write_report
from eventflow.evalharness.studies import (
    CONTRIBUTION_ROWS,
    TimingStats,
    category_contribution,
    keep_categories,
    prepare_slices,
    run_variants,
    timing,
    timing_window,
)

__all__ = [
    "BASELINES",
    "CONTRIBUTION_ROWS",
    "FULL_GRID",
    "BaselinePrediction",
    "EvalReport",
    "PaperFixture",
    "TimingStats",
    "baseline_predict",
    "baseline_predictor",
    "category_contribution",
    "keep_categories",
    "mae",
    "percent_reduction",
    "pooled",
    "prepare_slices",
    "rmse",
    "run_variants",
    "slice_name",
    "slice_report",
    "timing",
    "timing_window",
    "write_report",
]
