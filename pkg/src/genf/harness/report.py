"""Report files: replicate CSV, long-format CSV and aggregated JSON.

CSV rows are written as each replicate finishes, so a crash later in a sweep
leaves every earlier row intact. The CSVs carry no timestamps and are
byte-identical across reruns of the same config; the JSON holds the
wall-clock provenance.
"""
from __future__ import annotations

import csv
import json
import platform
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import torch

import genf
from genf.metrics import METRICS
from genf.strategies import LABELS, ExperimentReport, ReplicateRecord

SCHEMA_VERSION = "1"
REPLICATE_COLUMNS = ["schema_version", "config_hash", "versions", "strategy", "label", "N", "L", "seed",
                     "status", *METRICS, *(f"val_{m}" for m in METRICS), "n_test", "error"]
LONG_COLUMNS = ["schema_version", "config_hash", "versions", "strategy", "N", "L", "seed", "metric", "value"]


def versions() -> dict[str, str]:
    return {"genf": genf.__version__, "numpy": np.__version__, "torch": torch.__version__,
            "python": platform.python_version()}


def _versions_str() -> str:
    return ";".join(f"{k}={v}" for k, v in versions().items())


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _label(rec: ReplicateRecord) -> str:
    return f"GenF-{rec.L}" if rec.strategy == "genf" else LABELS[rec.strategy]


class ReportWriter:
    """Appends replicate rows to the two CSVs as records arrive."""

    def __init__(self, out_dir, config_hash: str):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.config_hash = config_hash
        self.replicate_path = self.out_dir / "report.csv"
        self.long_path = self.out_dir / "report_long.csv"
        self._versions = _versions_str()
        for p, cols in ((self.replicate_path, REPLICATE_COLUMNS), (self.long_path, LONG_COLUMNS)):
            with open(p, "w", newline="") as f:
                csv.writer(f, lineterminator="\n").writerow(cols)

    def __call__(self, rec: ReplicateRecord):
        row = {
            "schema_version": SCHEMA_VERSION, "config_hash": self.config_hash, "versions": self._versions,
            "strategy": rec.strategy, "label": _label(rec), "N": rec.N, "L": rec.L, "seed": rec.seed,
            "status": rec.status, "n_test": rec.n_test, "error": rec.error,
        }
        for m in METRICS:
            row[m] = rec.metrics.get(m)
            row[f"val_{m}"] = rec.val_metrics.get(m)
        with open(self.replicate_path, "a", newline="") as f:
            csv.writer(f, lineterminator="\n").writerow([_fmt(row[c]) for c in REPLICATE_COLUMNS])
        if rec.status == "ok":
            with open(self.long_path, "a", newline="") as f:
                w = csv.writer(f, lineterminator="\n")
                for m in METRICS:
                    vals = (SCHEMA_VERSION, self.config_hash, self._versions, rec.strategy, rec.N, rec.L, rec.seed, m,
                            rec.metrics[m])
                    w.writerow([_fmt(v) for v in vals])


def aggregate_json(report: ExperimentReport) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "config_hash": report.config_hash,
        "versions": versions(),
        "provenance": report.provenance,
        "cells": report.summary(),
        "failed_replicates": [
            {"strategy": r.strategy, "N": r.N, "L": r.L, "seed": r.seed, "error": r.error}
            for r in report.records if r.status != "ok"
        ],
    }


def emit_report(report: ExperimentReport, out_dir, formats=("csv", "json", "long"),
                json_path=None) -> dict[str, Path]:
    """Write the requested report files for a finished report; returns their paths."""
    out_dir = Path(out_dir)
    paths = {}
    if "csv" in formats or "long" in formats:
        writer = ReportWriter(out_dir, report.config_hash)
        for rec in report.records:
            writer(rec)
        if "csv" in formats:
            paths["csv"] = writer.replicate_path
        if "long" in formats:
            paths["long"] = writer.long_path
        else:
            writer.long_path.unlink()
        if "csv" not in formats:
            writer.replicate_path.unlink()
    if "json" in formats:
        p = Path(json_path) if json_path else out_dir / "report.json"
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(json.dumps(aggregate_json(report), indent=2, sort_keys=True) + "\n")
        paths["json"] = p
    return paths


def now_utc() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")
