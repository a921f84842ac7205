"""Experiment configuration: YAML in, validated and fully defaulted config out."""
from __future__ import annotations

import copy
import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

from genf.cwgan import CwganHyper
from genf.errors import ConfigError, ContractError
from genf.itc import ItcConfig
from genf.predictor import AttentionConfig, PredictorHyper
from genf.strategies import ComparisonConfig

log = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "GENF_OUTPUT_ROOT"

DATASET_DEFAULTS = {
    "source": None,  # csv file/dir, saved .npz dataset, or "synthetic"
    "schema": "uci_air_quality",
    "process": "ar1:phi=0.9,sigma=1",
    "units": 50,
    "length": 400,
    "seed": 0,
    "impute": True,
    "select_units": None,
}

TOP_DEFAULTS = {
    "M": 24,
    "horizons": [8],
    "target": 0,
    "strategies": {"direct": True, "iterative": True, "genf": [2, 4, 6]},
    "iterative_model": "transformer",
    "seeds": [0],
    "split": {"mode": "unit-random", "ratios": [0.6, 0.2, 0.2]},
    "metric_space": "original",
    "output_dir": None,
    "workers": 1,  # seed-level processes; not part of the config hash
    "tuning": None,
}


def _dataclass_defaults(cls) -> dict:
    return asdict(cls())


def default_config() -> dict:
    """The complete default config tree (what an almost-empty file expands to)."""
    pred = _dataclass_defaults(PredictorHyper)
    return {
        "dataset": dict(DATASET_DEFAULTS),
        **copy.deepcopy(TOP_DEFAULTS),
        "itc": {**_dataclass_defaults(ItcConfig), "enabled": True},
        "cwgan": _dataclass_defaults(CwganHyper),
        "predictor": pred,
    }


def _merge(defaults: dict, given: dict, path: str, unknown: list[str], open_keys=("tuning",)):
    out = copy.deepcopy(defaults)
    for k, v in given.items():
        where = f"{path}.{k}" if path else k
        if k not in defaults:
            unknown.append(where)
            continue
        if isinstance(defaults[k], dict) and k not in open_keys and k != "strategies":
            if not isinstance(v, dict):
                raise ConfigError(f"{where} must be a mapping")
            out[k] = _merge(defaults[k], v, where, unknown)
        else:
            out[k] = v
    return out


@dataclass
class ExperimentConfig:
    raw: dict
    comparison: ComparisonConfig
    output_dir: Path
    source_path: Path | None = None
    warnings: list[str] = field(default_factory=list)

    @property
    def dataset(self) -> dict:
        return self.raw["dataset"]

    @property
    def config_hash(self) -> str:
        return config_hash(self.raw)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.raw, sort_keys=True)


def config_hash(raw: dict) -> str:
    """Short sha256 of the canonical config, ignoring where outputs go."""
    body = {k: v for k, v in raw.items() if k not in ("output_dir", "workers")}
    blob = json.dumps(body, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _strategies(spec) -> dict[str, list[int]]:
    if not isinstance(spec, dict):
        raise ConfigError("strategies must be a mapping")
    out = {}
    for k, v in spec.items():
        if k not in ("direct", "iterative", "genf"):
            raise ConfigError(f"unknown strategy {k!r} (choose direct, iterative, genf)")
        if k == "genf":
            if v in (None, False):
                continue
            Ls = [v] if isinstance(v, int) else list(v)
            if not Ls or any(not isinstance(L, int) or L < 1 for L in Ls):
                raise ConfigError(f"genf L values must be positive integers, got {v!r}")
            out[k] = sorted(set(Ls))
        elif v:
            out[k] = []
    if not out:
        raise ConfigError("no strategies enabled")
    return out


def validate_config(source, base_dir: Path | None = None) -> ExperimentConfig:
    """Parse, default-fill and check an experiment config (path, YAML text or dict)."""
    path = None
    if isinstance(source, dict):
        given = copy.deepcopy(source)
    else:
        path = Path(source)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        try:
            given = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        base_dir = base_dir or path.parent
    if not isinstance(given, dict):
        raise ConfigError("config must be a mapping")
    if isinstance(given.get("dataset"), str):
        given["dataset"] = {"source": given["dataset"]}

    unknown: list[str] = []
    raw = _merge(default_config(), given, "", unknown)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    warnings = []

    ds = raw["dataset"]
    if ds["source"] is None:
        raise ConfigError("dataset.source is required")
    if ds["source"] != "synthetic":
        src = Path(ds["source"])
        if not src.is_absolute() and base_dir is not None:
            src = base_dir / src
        if not src.exists():
            raise ConfigError(f"dataset source {src} does not exist")
        ds["source"] = str(src)
        schema = ds["schema"]
        if isinstance(schema, str) and (schema.endswith(".yaml") or schema.endswith(".yml")):
            sp = Path(schema)
            if not sp.is_absolute() and base_dir is not None:
                sp = base_dir / sp
            if not sp.exists():
                raise ConfigError(f"schema file {sp} does not exist")
            ds["schema"] = str(sp)

    M, horizons = raw["M"], raw["horizons"]
    if isinstance(horizons, int):
        horizons = raw["horizons"] = [horizons]
    if not isinstance(M, int) or M < 1:
        raise ConfigError(f"M must be a positive integer, got {M!r}")
    if not horizons or any(not isinstance(h, int) or h < 1 for h in horizons):
        raise ConfigError(f"horizons must be positive integers, got {horizons!r}")
    raw["horizons"] = sorted(set(horizons))

    strategies = _strategies(raw["strategies"])
    Ls = strategies.get("genf", [])
    for L in Ls:
        if L >= max(raw["horizons"]):
            raise ConfigError(f"synthetic length L={L} must be below the horizon N={max(raw['horizons'])}")
        if L >= min(raw["horizons"]):
            warnings.append(f"L={L} is skipped for horizons <= {L}")
    raw["strategies"] = {k: (v if k == "genf" else True) for k, v in strategies.items()}

    seeds = raw["seeds"]
    if isinstance(seeds, int):
        seeds = [seeds]
    if not seeds or any(not isinstance(s, int) for s in seeds):
        raise ConfigError(f"seeds must be integers, got {seeds!r}")
    dedup = list(dict.fromkeys(seeds))
    if len(dedup) != len(seeds):
        warnings.append(f"duplicate seeds removed: {seeds} -> {dedup}")
    raw["seeds"] = dedup

    split = raw["split"]
    if split["mode"] not in ("unit-random", "chronological"):
        raise ConfigError(f"split.mode must be unit-random or chronological, got {split['mode']!r}")
    if len(split["ratios"]) != 3 or abs(sum(split["ratios"]) - 1) > 1e-9 or min(split["ratios"]) < 0:
        raise ConfigError(f"split.ratios must be three nonnegative numbers summing to 1, got {split['ratios']}")
    if not isinstance(raw["workers"], int) or raw["workers"] < 1:
        raise ConfigError(f"workers must be a positive integer, got {raw['workers']!r}")
    if raw["iterative_model"] not in ("transformer", "generator"):
        raise ConfigError("iterative_model must be transformer or generator")
    if raw["metric_space"] not in ("original", "scaled"):
        raise ConfigError("metric_space must be original or scaled")

    try:
        itc_raw = dict(raw["itc"])
        use_itc = bool(itc_raw.pop("enabled"))
        itc = ItcConfig(**itc_raw)
        cwgan = CwganHyper(**raw["cwgan"])
        pred_raw = dict(raw["predictor"])
        pred_raw["attention"] = AttentionConfig(**pred_raw["attention"])
        predictor = PredictorHyper(**pred_raw)
    except (ContractError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc

    target = raw["target"]
    comparison = ComparisonConfig(
        M=M, horizons=raw["horizons"], strategies=strategies, seeds=dedup,
        target=target if isinstance(target, int) else 0,
        split=split["mode"], split_ratios=tuple(split["ratios"]), itc=itc, use_itc=use_itc,
        cwgan=cwgan, predictor=predictor, iterative_model=raw["iterative_model"],
        metric_space=raw["metric_space"],
    )
    out = raw["output_dir"] or os.environ.get(OUTPUT_ROOT_ENV) or "genf-runs"
    for w in warnings:
        log.warning("%s", w)
    cfg = ExperimentConfig(raw, comparison, Path(out), path, warnings)
    if raw["output_dir"] is None:
        cfg.output_dir = Path(out) / cfg.config_hash
    return cfg

