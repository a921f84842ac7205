"""Saving and loading trained models together with their scaling and settings."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import torch

from genf.cwgan import Critic, CwganHyper, FittedGenerator, Generator
from genf.data import ScalingParams
from genf.errors import ConfigError
from genf.predictor import AttentionConfig, FittedPredictor, LstmBaseline, TransformerPredictor

FORMAT = "genf-bundle"
VERSION = 1


@dataclass
class GenfModelBundle:
    """Everything needed to reuse a trained model.

    ``kind`` is ``generator`` (generator + critic) or ``predictor``; both
    carry the scaling fitted on the training split and the producing config.
    """

    kind: str
    arch: dict
    state: dict  # name -> state_dict
    scaling: ScalingParams | None = None
    config: dict = field(default_factory=dict)
    seed: int = 0

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save({
            "format": FORMAT,
            "version": VERSION,
            "kind": self.kind,
            "arch": self.arch,
            "state": self.state,
            "scaling": self.scaling.to_dict() if self.scaling is not None else None,
            "config": self.config,
            "seed": self.seed,
        }, path)
        return path

    @classmethod
    def load(cls, path) -> "GenfModelBundle":
        try:
            raw = torch.load(Path(path), weights_only=True)
        except FileNotFoundError:
            raise
        except Exception as exc:
            raise ConfigError(f"{path} is not a readable model bundle: {exc}") from exc
        if not isinstance(raw, dict) or raw.get("format") != FORMAT:
            raise ConfigError(f"{path} is not a model bundle")
        if raw.get("version") != VERSION:
            raise ConfigError(f"unsupported bundle version {raw.get('version')}")
        scaling = ScalingParams.from_dict(raw["scaling"]) if raw["scaling"] else None
        return cls(raw["kind"], raw["arch"], raw["state"], scaling, raw["config"], raw["seed"])

    # ------------------------------------------------------------- generator

    @classmethod
    def from_generator(cls, gen: Generator, critic: Critic | None, M: int, scaling=None,
                       hyper: CwganHyper | None = None, config: dict | None = None) -> "GenfModelBundle":
        state = {"generator": gen.state_dict()}
        if critic is not None:
            state["critic"] = critic.state_dict()
        arch = {"K": gen.K, "M": M, "hidden": gen.rnn.hidden_size, "dense": gen.fc1.out_features}
        cfg = dict(config or {})
        if hyper is not None:
            cfg["cwgan"] = asdict(hyper)
        return cls("generator", arch, state, scaling, cfg, hyper.seed if hyper else 0)

    def generator(self) -> FittedGenerator:
        self._expect("generator")
        a = self.arch
        gen = Generator(a["K"], a["hidden"], a["dense"])
        gen.load_state_dict(self.state["generator"])
        return FittedGenerator(gen, a["M"])

    def critic(self) -> Critic:
        self._expect("generator")
        a = self.arch
        critic = Critic(a["K"], a["hidden"], a["dense"])
        critic.load_state_dict(self.state["critic"])
        return critic.eval()

    # ------------------------------------------------------------- predictor

    @classmethod
    def from_predictor(cls, fitted: FittedPredictor, scaling=None, config: dict | None = None,
                       seed: int = 0) -> "GenfModelBundle":
        m = fitted.module
        arch = {
            "type": "lstm" if isinstance(m, LstmBaseline) else "transformer",
            "K": m.K,
            "M": m.M,
            "out_dim": m.out_dim,
            "horizon": fitted.horizon,
            "target": fitted.target,
            "synthetic_length": fitted.synthetic_length,
        }
        if isinstance(m, TransformerPredictor):
            arch["attention"] = asdict(m.config)
        return cls("predictor", arch, {"predictor": m.state_dict()}, scaling, dict(config or {}), seed)

    def predictor(self) -> FittedPredictor:
        self._expect("predictor")
        a = self.arch
        if a["type"] == "lstm":
            m = LstmBaseline(a["K"], a["M"], out_dim=a["out_dim"])
        else:
            m = TransformerPredictor(a["K"], a["M"], AttentionConfig(**a["attention"]), a["out_dim"])
        m.load_state_dict(self.state["predictor"])
        return FittedPredictor(m, a["horizon"], a["target"], a["synthetic_length"])

    def _expect(self, kind: str):
        if self.kind != kind:
            raise ConfigError(f"bundle holds a {self.kind}, not a {kind}")


def save_bundle(path, bundle: GenfModelBundle) -> Path:
    return bundle.save(path)


def load_bundle(path) -> GenfModelBundle:
    return GenfModelBundle.load(path)
