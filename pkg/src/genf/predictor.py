"""Shallow transformer predictor for the direct hop, plus the LSTM baseline."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
import torch
from torch import Tensor, nn

from genf.data import WindowedDataset
from genf.errors import ContractError, TrainingError


def causal_mask(n: int) -> Tensor:
    """Boolean (n, n) mask, True where attention is allowed (j <= i)."""
    return torch.ones(n, n, dtype=torch.bool).tril()


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor, mask: Tensor | None = None,
                         dropout: nn.Module | None = None) -> tuple[Tensor, Tensor]:
    """softmax(q k^T / sqrt(d_k) + additive mask) v over the last two dims.

    ``mask`` is boolean, True where allowed; blocked entries get -inf before
    the softmax. Returns ``(output, weights)``.
    """
    d_k = q.shape[-1]
    logits = q @ k.transpose(-2, -1) / math.sqrt(d_k)
    if mask is not None:
        if not bool(mask.any(dim=-1).all()):
            raise ContractError("attention mask blocks every position of some query row")
        logits = logits.masked_fill(~mask, float("-inf"))
    weights = torch.softmax(logits, dim=-1)
    if dropout is not None:
        weights = dropout(weights)
    return weights @ v, weights


def attention_head(Y: Tensor, W_q: Tensor, W_k: Tensor, W_v: Tensor, mask: Tensor | None = None,
                   memory: Tensor | None = None) -> Tensor:
    """One head: queries from ``Y``, keys/values from ``memory`` (default ``Y``)."""
    mem = Y if memory is None else memory
    if mask is not None and mask.shape[-2:] != (Y.shape[-2], mem.shape[-2]):
        raise ContractError(f"mask {tuple(mask.shape)} does not match {Y.shape[-2]} x {mem.shape[-2]}")
    out, _ = scaled_dot_attention(Y @ W_q, mem @ W_k, mem @ W_v, mask)
    return out


class MultiHeadAttention(nn.Module):
    def __init__(self, d_model: int, heads: int, d_k: int | None = None, dropout: float = 0.0):
        super().__init__()
        d_k = d_k or d_model // heads
        if heads * d_k != d_model:
            raise ContractError(f"heads * d_k must equal d_model ({heads} * {d_k} != {d_model})")
        self.heads, self.d_k = heads, d_k
        self.q = nn.Linear(d_model, heads * d_k)
        self.k = nn.Linear(d_model, heads * d_k)
        self.v = nn.Linear(d_model, heads * d_k)
        self.o = nn.Linear(heads * d_k, d_model)
        self.drop = nn.Dropout(dropout)

    def _split(self, x: Tensor) -> Tensor:
        S, n, _ = x.shape
        return x.view(S, n, self.heads, self.d_k).transpose(1, 2)

    def forward(self, x: Tensor, memory: Tensor | None = None, mask: Tensor | None = None) -> Tensor:
        mem = x if memory is None else memory
        q, k, v = self._split(self.q(x)), self._split(self.k(mem)), self._split(self.v(mem))
        out, _ = scaled_dot_attention(q, k, v, mask, self.drop if self.training else None)
        S, _, n, _ = out.shape
        return self.o(out.transpose(1, 2).reshape(S, n, self.heads * self.d_k))


class FeedForward(nn.Sequential):
    def __init__(self, d_model: int, d_ff: int, dropout: float):
        super().__init__(nn.Linear(d_model, d_ff), nn.ReLU(), nn.Dropout(dropout), nn.Linear(d_ff, d_model))


class EncoderLayer(nn.Module):
    def __init__(self, d_model, heads, d_ff, dropout):
        super().__init__()
        self.attn = MultiHeadAttention(d_model, heads, dropout=dropout)
        self.ff = FeedForward(d_model, d_ff, dropout)
        self.norm1, self.norm2 = nn.LayerNorm(d_model), nn.LayerNorm(d_model)
        self.drop = nn.Dropout(dropout)

    def forward(self, x, mask=None):
        x = self.norm1(x + self.drop(self.attn(x, mask=mask)))
        return self.norm2(x + self.drop(self.ff(x)))


class DecoderLayer(nn.Module):
    def __init__(self, d_model, heads, d_ff, dropout):
        super().__init__()
        self.self_attn = MultiHeadAttention(d_model, heads, dropout=dropout)
        self.cross_attn = MultiHeadAttention(d_model, heads, dropout=dropout)
        self.ff = FeedForward(d_model, d_ff, dropout)
        self.norm1, self.norm2, self.norm3 = nn.LayerNorm(d_model), nn.LayerNorm(d_model), nn.LayerNorm(d_model)
        self.drop = nn.Dropout(dropout)

    def forward(self, q, memory):
        q = self.norm1(q + self.drop(self.self_attn(q)))
        q = self.norm2(q + self.drop(self.cross_attn(q, memory)))
        return self.norm3(q + self.drop(self.ff(q)))


def sinusoidal_encoding(n: int, d: int) -> Tensor:
    pos = torch.arange(n, dtype=torch.float64)[:, None]
    i = torch.arange(0, d, 2, dtype=torch.float64)
    angle = pos / torch.pow(10000.0, i / d)
    pe = torch.zeros(n, d, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(angle)
    pe[:, 1::2] = torch.cos(angle[:, : d // 2])
    return pe.float()


@dataclass
class AttentionConfig:
    d_model: int = 12
    heads: int = 3
    d_ff: int = 32
    encoder_layers: int = 2
    decoder_layers: int = 2
    mask: str = "causal"  # causal | none
    dropout: float = 0.1
    positional: bool = True

    def __post_init__(self):
        if self.d_model % self.heads:
            raise ContractError(f"d_model={self.d_model} not divisible by heads={self.heads}")
        if self.encoder_layers < 1 or self.decoder_layers < 1:
            raise ContractError("need at least one encoder and one decoder layer")
        if self.mask not in ("causal", "none"):
            raise ContractError(f"mask must be 'causal' or 'none', got {self.mask!r}")

    @property
    def d_k(self) -> int:
        return self.d_model // self.heads


class TransformerPredictor(nn.Module):
    """Window (S, M, K) -> (S, out_dim).

    Input projection plus fixed sinusoidal positions feed the encoder stack;
    the decoder stack starts from one learned query token that attends to the
    encoder output; a linear head maps it to the prediction.
    """

    def __init__(self, K: int, M: int, config: AttentionConfig | None = None, out_dim: int = 1):
        super().__init__()
        cfg = config or AttentionConfig()
        self.K, self.M, self.out_dim, self.config = K, M, out_dim, cfg
        self.embed = nn.Linear(K, cfg.d_model)
        self.register_buffer("pe", sinusoidal_encoding(M, cfg.d_model), persistent=False)
        self.register_buffer("mask", causal_mask(M) if cfg.mask == "causal" else torch.ones(M, M, dtype=torch.bool),
                             persistent=False)
        self.encoder = nn.ModuleList(EncoderLayer(cfg.d_model, cfg.heads, cfg.d_ff, cfg.dropout)
                                     for _ in range(cfg.encoder_layers))
        self.decoder = nn.ModuleList(DecoderLayer(cfg.d_model, cfg.heads, cfg.d_ff, cfg.dropout)
                                     for _ in range(cfg.decoder_layers))
        self.query = nn.Parameter(torch.randn(1, 1, cfg.d_model) * 0.1)
        self.head = nn.Linear(cfg.d_model, out_dim)

    def encode(self, x: Tensor) -> Tensor:
        if x.dim() != 3 or x.shape[1:] != (self.M, self.K):
            raise ContractError(f"window must be (S, {self.M}, {self.K}), got {tuple(x.shape)}")
        h = self.embed(x)
        if self.config.positional:
            h = h + self.pe.to(h.dtype)
        for layer in self.encoder:
            h = layer(h, self.mask)
        return h

    def forward(self, x: Tensor) -> Tensor:
        memory = self.encode(x)
        q = self.query.expand(x.shape[0], -1, -1)
        for layer in self.decoder:
            q = layer(q, memory)
        return self.head(q[:, 0])


class LstmBaseline(nn.Module):
    """Two stacked LSTM(10) layers, Linear(10), Linear(out_dim)."""

    def __init__(self, K: int, M: int | None = None, hidden: int = 10, layers: int = 2, dense: int = 10,
                 out_dim: int = 1):
        super().__init__()
        self.K, self.M, self.out_dim = K, M, out_dim
        self.rnn = nn.LSTM(K, hidden, num_layers=layers, batch_first=True)
        self.fc1 = nn.Linear(hidden, dense)
        self.fc2 = nn.Linear(dense, out_dim)

    def forward(self, x: Tensor) -> Tensor:
        if x.dim() != 3 or x.shape[2] != self.K:
            raise ContractError(f"window must be (S, M, {self.K}), got {tuple(x.shape)}")
        out, _ = self.rnn(x)
        return self.fc2(torch.relu(self.fc1(out[:, -1])))


@dataclass
class PredictorHyper:
    arch: str = "transformer"  # transformer | lstm
    lr: float = 1e-3
    batch_size: int = 64
    epochs: int = 1000
    seed: int = 0
    max_steps: int | None = None
    attention: AttentionConfig = field(default_factory=AttentionConfig)

    def __post_init__(self):
        if isinstance(self.attention, dict):
            self.attention = AttentionConfig(**self.attention)
        if self.arch not in ("transformer", "lstm"):
            raise ContractError(f"unknown predictor arch {self.arch!r}")


def build_model(K: int, M: int, hyper: PredictorHyper, out_dim: int = 1) -> nn.Module:
    if hyper.arch == "lstm":
        return LstmBaseline(K, M, out_dim=out_dim)
    return TransformerPredictor(K, M, hyper.attention, out_dim)


@dataclass
class FitTrace:
    loss: list[float] = field(default_factory=list)


def fit_regression(model: nn.Module, X: np.ndarray, y: np.ndarray, hyper: PredictorHyper,
                   progress: Callable[[int, float], None] | None = None) -> FitTrace:
    """Minibatch Adam on mean squared error; deterministic for a fixed seed."""
    Xt = torch.as_tensor(np.asarray(X), dtype=torch.float32)
    yt = torch.as_tensor(np.asarray(y), dtype=torch.float32).reshape(len(Xt), -1)
    opt = torch.optim.Adam(model.parameters(), lr=hyper.lr, foreach=True)
    rng = np.random.default_rng(hyper.seed)
    trace = FitTrace()
    S = len(Xt)
    steps = 0
    model.train()
    for epoch in range(hyper.epochs):
        order = rng.permutation(S)
        total = 0.0
        for lo in range(0, S, hyper.batch_size):
            idx = torch.as_tensor(order[lo:lo + hyper.batch_size])
            loss = torch.mean((model(Xt[idx]) - yt[idx]) ** 2)
            if not torch.isfinite(loss):
                raise TrainingError(f"predictor loss became non-finite at epoch {epoch}", trace)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
            steps += 1
            if hyper.max_steps is not None and steps >= hyper.max_steps:
                break
        trace.loss.append(total / S)
        if progress is not None:
            progress(epoch, trace.loss[-1])
        if hyper.max_steps is not None and steps >= hyper.max_steps:
            break
    model.eval()
    return trace


class FittedPredictor:
    """Trained window-to-value model with its forecasting metadata.

    ``target`` is the predicted feature index, or None when the model emits
    every feature (the one-step model of iterative forecasting).
    """

    def __init__(self, module: nn.Module, horizon: int, target: int | None = 0, synthetic_length: int = 0,
                 trace: FitTrace | None = None):
        self.module = module.eval()
        self.horizon = horizon
        self.target = target
        self.synthetic_length = synthetic_length
        self.trace = trace

    @property
    def out_dim(self) -> int:
        return self.module.out_dim

    @torch.no_grad()
    def __call__(self, windows: np.ndarray) -> np.ndarray:
        w = np.asarray(windows, dtype=float)
        single = w.ndim == 2
        x = torch.as_tensor(w[None] if single else w, dtype=next(self.module.parameters()).dtype)
        out = self.module(x).double().numpy()
        if self.target is not None:
            out = out[:, 0]
        return out[0] if single else out


def predictor_forward(model: nn.Module, window) -> np.ndarray:
    """Evaluation-mode forward of a raw module on one (M, K) window or a batch."""
    fitted = model if isinstance(model, FittedPredictor) else FittedPredictor(model, horizon=0, target=None)
    out = fitted(window)
    return out


def train_predictor(data: WindowedDataset, horizon: int, hyper: PredictorHyper | None = None, target: int = 0,
                    synthetic_length: int = 0, progress=None) -> FittedPredictor:
    """Regress feature ``target`` at ``horizon`` on the (possibly rewritten) windows."""
    hyper = hyper or PredictorHyper()
    if horizon not in data.targets:
        raise ContractError(f"no targets at horizon {horizon}; have {sorted(data.targets)}")
    if len(data) == 0:
        raise ContractError("predictor training set is empty")
    torch.manual_seed(hyper.seed)
    model = build_model(data.K, data.M, hyper, out_dim=1)
    trace = fit_regression(model, data.windows, data.targets[horizon][:, target], hyper, progress)
    return FittedPredictor(model, horizon, target, synthetic_length, trace)


def train_one_step(data: WindowedDataset, hyper: PredictorHyper | None = None, progress=None) -> FittedPredictor:
    """Full-K next-step model used for iterative forecasting."""
    hyper = hyper or PredictorHyper()
    if 1 not in data.targets:
        raise ContractError("one-step model needs horizon-1 targets")
    torch.manual_seed(hyper.seed)
    model = build_model(data.K, data.M, hyper, out_dim=data.K)
    trace = fit_regression(model, data.windows, data.targets[1], hyper, progress)
    return FittedPredictor(model, 1, None, 0, trace)


def train_lstm_baseline(data: WindowedDataset, horizon: int, hyper: PredictorHyper | None = None,
                        target: int = 0) -> FittedPredictor:
    hyper = PredictorHyper(**{**asdict(hyper or PredictorHyper()), "arch": "lstm"})
    return train_predictor(data, horizon, hyper, target)


def lstm_baseline_forward(model: nn.Module, window) -> np.ndarray:
    return predictor_forward(model, window)


def n_params(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
