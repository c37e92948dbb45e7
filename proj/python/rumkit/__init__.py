"""Python access to the rumkit unlearning toolkit."""

import json
import os

from . import _core
from ._core import (
    DegenerateError,
    InvalidArgument,
    RumkitError,
    centroid_distance_ranking,
    entanglement_score,
    even_offsets,
    list_scenarios,
    mean_ci,
    median_heuristic_bandwidth,
    metric_names,
    mia_gap,
    mmd_rbf,
    rum_step_partitions,
    spearman,
    t_critical_95,
    tow,
    tow_mia,
)

__all__ = [
    "DegenerateError",
    "InvalidArgument",
    "RumkitError",
    "aggregate",
    "centroid_distance_ranking",
    "effective_config",
    "entanglement_score",
    "even_offsets",
    "list_scenarios",
    "mean_ci",
    "median_heuristic_bandwidth",
    "metric_names",
    "mia_gap",
    "mmd_rbf",
    "rum_step_partitions",
    "run_scenario",
    "spearman",
    "t_critical_95",
    "tow",
    "tow_mia",
]


def effective_config(path):
    return json.loads(_core.effective_config(os.fspath(path)))


def run_scenario(path, seeds=None, variants=None, cache_dir=None):
    """Run records (list of dicts) for a scenario file, optionally restricted."""
    text = _core.run_scenario(os.fspath(path), seeds, variants, os.fspath(cache_dir) if cache_dir else "")
    return json.loads(text)


def aggregate(records, metrics=("tow",)):
    """Mean and 95% half-width per (partition, variant, metric)."""
    return json.loads(_core.aggregate(json.dumps(records), list(metrics)))
