"""Grid search over config knobs, selected per cell on validation MAE.

A ``tuning`` block in the experiment config looks like::

    tuning:
      grid:
        predictor.lr: [0.001, 0.003]
        cwgan.eta_sup: [0.5, 1.0]
      metric: mae

Every grid point is a full :func:`run_pipeline` run. For each
(strategy, N, L) cell the point with the lowest mean validation metric is
kept, and that point's test metrics are reported.
"""
from __future__ import annotations

import copy
import itertools
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

from genf.errors import ConfigError
from genf.harness.config import ExperimentConfig, validate_config
from genf.harness.pipeline import run_pipeline
from genf.metrics import METRICS
from genf.strategies import ExperimentReport

log = logging.getLogger(__name__)


@dataclass
class TuningResult:
    points: list[dict]
    reports: list[ExperimentReport]
    chosen: dict[tuple, int] = field(default_factory=dict)  # cell key -> point index
    metric: str = "mae"

    def selected_report(self) -> ExperimentReport:
        out = ExperimentReport(config_hash=self.reports[0].config_hash if self.reports else "")
        for key, i in self.chosen.items():
            for r in self.reports[i].replicates(*key):
                out.add(r)
        return out

    def rows(self) -> list[dict]:
        return [{"strategy": k[0], "N": k[1], "L": k[2], "point": self.points[i]} for k, i in self.chosen.items()]


def grid_points(grid: dict) -> list[dict]:
    if not isinstance(grid, dict) or not grid:
        raise ConfigError("tuning.grid must be a non-empty mapping of dotted keys to value lists")
    keys = sorted(grid)
    for k in keys:
        if not isinstance(grid[k], list) or not grid[k]:
            raise ConfigError(f"tuning.grid.{k} must be a non-empty list")
    return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]


def _apply(raw: dict, point: dict) -> dict:
    out = copy.deepcopy(raw)
    out.pop("tuning", None)
    out["output_dir"] = None
    for dotted, value in point.items():
        node = out
        *path, last = dotted.split(".")
        for p in path:
            if not isinstance(node.get(p), dict):
                raise ConfigError(f"tuning key {dotted!r} does not name a config field")
            node = node[p]
        if last not in node:
            raise ConfigError(f"tuning key {dotted!r} does not name a config field")
        node[last] = value
    return out


def _val_score(report: ExperimentReport, key, metric: str) -> float:
    vals = [r.val_metrics.get(metric) for r in report.replicates(*key) if r.status == "ok"]
    vals = [v for v in vals if v is not None and math.isfinite(v)]
    return math.fsum(vals) / len(vals) if vals else math.inf


def tune(config, factory=None, out_root=None) -> TuningResult:
    """Run every grid point and pick, per cell, the best on validation data."""
    cfg = config if isinstance(config, ExperimentConfig) else validate_config(config)
    spec = cfg.raw.get("tuning") or {}
    metric = spec.get("metric", "mae")
    if metric not in METRICS:
        raise ConfigError(f"tuning.metric must be one of {sorted(METRICS)}")
    unknown = set(spec) - {"grid", "metric"}
    if unknown:
        raise ConfigError(f"unknown tuning keys: {', '.join(sorted(unknown))}")
    points = grid_points(spec.get("grid"))
    root = Path(out_root) if out_root is not None else cfg.output_dir / "tuning"
    reports = []
    for i, point in enumerate(points):
        sub = validate_config(_apply(cfg.raw, point))
        log.info("grid point %d/%d: %s", i + 1, len(points), point)
        reports.append(run_pipeline(sub, factory, out_dir=root / f"point{i:03d}"))
    result = TuningResult(points, reports, metric=metric)
    for key in reports[0].cell_keys():
        scores = [_val_score(rep, key, metric) for rep in reports]
        result.chosen[key] = min(range(len(points)), key=lambda j: (scores[j], j))
    return result
