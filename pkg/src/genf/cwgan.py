"""CWGAN-TS: conditional Wasserstein GAN with gradient penalty and a
supervised term, used to generate one step ahead of a window.

The generator sees the M-step condition with a standard-normal noise row
appended as step M+1; the critic sees the condition with the candidate step
appended. Generation beyond one step is recursive.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
import torch
from torch import Tensor, nn

from genf.data import WindowedDataset
from genf.errors import ContractError, TrainingError

log = logging.getLogger(__name__)


class Generator(nn.Module):
    def __init__(self, K: int, hidden: int = 5, dense: int = 12):
        super().__init__()
        self.K = K
        self.rnn = nn.LSTM(K, hidden, batch_first=True)
        self.fc1 = nn.Linear(hidden, dense)
        self.fc2 = nn.Linear(dense, K)

    def forward(self, condition: Tensor, noise: Tensor) -> Tensor:
        x = torch.cat([condition, noise.unsqueeze(1)], dim=1)  # (S, M+1, K)
        out, _ = self.rnn(x)
        h = torch.relu(self.fc1(out[:, -1]))
        return self.fc2(h).unsqueeze(1)  # (S, 1, K)


class Critic(nn.Module):
    """Wasserstein critic D(candidate | condition), unbounded real output.

    The recurrent pass over the condition is split from the final step that
    consumes the candidate, so real, fake and interpolated candidates of one
    batch share a single encoding and the double backward of the gradient
    penalty only unrolls one cell.
    """

    def __init__(self, K: int, hidden: int = 5, dense: int = 12, dense2: int = 4):
        super().__init__()
        self.K = K
        self.rnn = nn.LSTM(K, hidden, batch_first=True)
        self.fc1 = nn.Linear(hidden, dense)
        self.fc2 = nn.Linear(dense, dense2)
        self.fc3 = nn.Linear(dense2, 1)

    def encode(self, condition: Tensor) -> tuple[Tensor, Tensor]:
        _, (h, c) = self.rnn(condition)
        return h[0], c[0]

    def score(self, state: tuple[Tensor, Tensor], candidate: Tensor) -> Tensor:
        if candidate.dim() == 3:
            candidate = candidate[:, 0]
        h, c = state
        r = self.rnn
        gates = candidate @ r.weight_ih_l0.T + r.bias_ih_l0 + h @ r.weight_hh_l0.T + r.bias_hh_l0
        i, f, g, o = gates.chunk(4, dim=1)
        c = torch.sigmoid(f) * c + torch.sigmoid(i) * torch.tanh(g)
        h = torch.sigmoid(o) * torch.tanh(c)
        z = nn.functional.leaky_relu(self.fc1(h), 0.2)
        z = nn.functional.leaky_relu(self.fc2(z), 0.2)
        return self.fc3(z).squeeze(-1)  # (S,)

    def forward(self, condition: Tensor, candidate: Tensor) -> Tensor:
        return self.score(self.encode(condition), candidate)


def n_params(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def _as_tensor(x, like: nn.Module | None = None) -> Tensor:
    dtype = next(like.parameters()).dtype if like is not None else torch.float32
    if isinstance(x, Tensor):
        return x.to(dtype)
    return torch.as_tensor(np.asarray(x), dtype=dtype)


def _check_shapes(module: nn.Module, condition: Tensor, step: Tensor, what: str):
    if condition.dim() != 3 or condition.shape[2] != module.K:
        raise ContractError(f"condition must be (S, M, {module.K}), got {tuple(condition.shape)}")
    if step.shape[0] != condition.shape[0] or step.shape[-1] != module.K:
        raise ContractError(f"{what} must be (S, {module.K}) matching the condition, got {tuple(step.shape)}")


def generator_forward(gen: Generator, condition, noise) -> Tensor:
    """Next step given condition (M, K) or (S, M, K) and noise (K,) or (S, K).

    Returns (1, K) for a single condition, (S, 1, K) for a batch.
    """
    c = _as_tensor(condition, gen)
    z = _as_tensor(noise, gen)
    single = c.dim() == 2
    if single:
        c, z = c.unsqueeze(0), z.reshape(1, -1)
    _check_shapes(gen, c, z, "noise")
    out = gen(c, z)
    return out[0] if single else out


def critic_forward(critic: Critic, condition, candidate) -> Tensor:
    c = _as_tensor(condition, critic)
    x = _as_tensor(candidate, critic)
    single = c.dim() == 2
    if single:
        c, x = c.unsqueeze(0), x.reshape(1, -1)
    x = x.reshape(x.shape[0], -1)
    _check_shapes(critic, c, x, "candidate")
    out = critic(c, x)
    return out[0] if single else out


def gradient_penalty(critic: Callable[[Tensor, Tensor], Tensor], condition: Tensor, real: Tensor, fake: Tensor,
                     epsilon: Tensor) -> Tensor:
    """Per-sample (||grad_x D(x | Y)||_2 - 1)^2 at x = eps * fake + (1 - eps) * real.

    The gradient is taken with respect to the interpolated candidate only;
    the graph is kept so the penalty can be differentiated again.
    """
    if real.shape != fake.shape:
        raise ContractError(f"real {tuple(real.shape)} and fake {tuple(fake.shape)} differ")
    eps = epsilon.reshape(-1, *([1] * (real.dim() - 1)))
    x_hat = (eps * fake + (1.0 - eps) * real).detach().requires_grad_(True)
    score = critic(condition, x_hat)
    grad = None
    if score.requires_grad:
        (grad,) = torch.autograd.grad(score.sum(), x_hat, create_graph=True, allow_unused=True)
    if grad is None:  # critic ignores the candidate
        grad = torch.zeros_like(x_hat)
    norm = grad.reshape(grad.shape[0], -1).norm(dim=1)
    return (norm - 1.0) ** 2


@dataclass
class CwganHyper:
    lambda_gp: float = 5.0
    eta_sup: float = 1.0
    critic_steps: int = 5
    lr: float = 1e-3
    batch_size: int = 64
    epochs: int = 1000
    seed: int = 0
    hidden: int = 5
    dense: int = 12
    max_steps: int | None = None  # caps critic updates; None trains full epochs
    betas: tuple[float, float] = (0.5, 0.9)  # first-moment decay lowered for adversarial stability

    def __post_init__(self):
        if self.lambda_gp < 0 or self.eta_sup < 0:
            raise ContractError("lambda_gp and eta_sup must be nonnegative")
        if self.critic_steps < 1 or self.batch_size < 1 or self.epochs < 1 or self.lr <= 0:
            raise ContractError("critic_steps, batch_size, epochs and lr must be positive")


@dataclass
class CwganLosses:
    critic: Tensor
    generator: Tensor
    wasserstein: Tensor
    penalty: Tensor
    supervised: Tensor


def critic_objective(critic: Critic, condition: Tensor, real: Tensor, fake: Tensor, epsilon: Tensor,
                     lambda_gp: float) -> tuple[Tensor, Tensor, Tensor]:
    """(loss, wasserstein gap, mean penalty); ``fake`` is treated as a constant."""
    fake = fake.detach()
    state = critic.encode(condition)
    gap = critic.score(state, fake).mean() - critic.score(state, real).mean()
    gp = gradient_penalty(lambda _, x: critic.score(state, x), condition, real, fake, epsilon).mean()
    return gap + lambda_gp * gp, gap, gp


def generator_objective(critic: Critic, condition: Tensor, real: Tensor, fake: Tensor,
                        eta_sup: float) -> tuple[Tensor, Tensor]:
    """(loss, supervised term) with loss = -mean D(fake|Y) + eta * mean ||real - fake||_2."""
    sup = (real - fake).norm(dim=1).mean()
    return -critic(condition, fake).mean() + eta_sup * sup, sup


def cwgan_losses(condition: Tensor, real: Tensor, gen: Generator, critic: Critic, hyper: CwganHyper,
                 noise: Tensor, epsilon: Tensor) -> CwganLosses:
    """Critic and generator objectives for one batch.

    critic    = mean D(fake|Y) - mean D(real|Y) + lambda * mean penalty
    generator = -mean D(fake|Y) + eta * mean ||real - fake||_2

    One generator forward per sample feeds both objectives.
    """
    if condition.shape[0] == 0:
        raise ContractError("empty batch")
    fake = gen(condition, noise)[:, 0]
    c_loss, gap, gp = critic_objective(critic, condition, real, fake, epsilon, hyper.lambda_gp)
    g_loss, sup = generator_objective(critic, condition, real, fake, hyper.eta_sup)
    return CwganLosses(c_loss, g_loss, gap.detach(), gp.detach(), sup.detach())


@dataclass
class TrainingTrace:
    epochs: list[dict] = field(default_factory=list)

    def column(self, key: str) -> np.ndarray:
        return np.array([e[key] for e in self.epochs])


class FittedGenerator:
    """Numpy-facing wrapper around a trained :class:`Generator`."""

    def __init__(self, module: Generator, M: int | None = None):
        self.module = module.eval()
        self.K = module.K
        self.M = M

    @torch.no_grad()
    def __call__(self, condition: np.ndarray, noise: np.ndarray) -> np.ndarray:
        c = np.asarray(condition, dtype=float)
        out = generator_forward(self.module, c, noise).numpy().astype(float)
        return out.reshape(-1) if c.ndim == 2 else out.reshape(c.shape[0], -1)


def train_cwgan(data: WindowedDataset, hyper: CwganHyper | None = None,
                progress: Callable[[int, dict], None] | None = None):
    """Fit generator and critic on (window, next step) pairs.

    Each shuffled batch drives one critic update; every ``critic_steps``-th
    batch additionally drives one generator update. Deterministic for a
    fixed ``hyper.seed``. Returns ``(generator, critic, trace)``.
    """
    hyper = hyper or CwganHyper()
    if len(data) == 0:
        raise ContractError("generator training set is empty")
    if 1 not in data.targets:
        raise ContractError("generator training needs horizon-1 targets")
    torch.manual_seed(hyper.seed)
    K = data.K
    gen = Generator(K, hyper.hidden, hyper.dense)
    critic = Critic(K, hyper.hidden, hyper.dense)
    opt_g = torch.optim.Adam(gen.parameters(), lr=hyper.lr, betas=tuple(hyper.betas))
    opt_d = torch.optim.Adam(critic.parameters(), lr=hyper.lr, betas=tuple(hyper.betas))
    X = torch.as_tensor(data.windows, dtype=torch.float32)
    Y = torch.as_tensor(data.targets[1], dtype=torch.float32)
    rng = np.random.default_rng(hyper.seed)
    tgen = torch.Generator().manual_seed(hyper.seed)
    trace = TrainingTrace()
    steps = 0
    S = len(data)
    for epoch in range(hyper.epochs):
        order = rng.permutation(S)
        sums = {"critic": 0.0, "generator": 0.0, "wasserstein": 0.0, "penalty": 0.0, "supervised": 0.0}
        n_c = n_g = 0
        for b, lo in enumerate(range(0, S, hyper.batch_size)):
            idx = torch.as_tensor(order[lo:lo + hyper.batch_size])
            cond, real = X[idx], Y[idx]
            noise = torch.randn(len(idx), K, generator=tgen)
            eps = torch.rand(len(idx), generator=tgen)
            with torch.no_grad():
                fake = gen(cond, noise)[:, 0]
            c_loss, gap, gp = critic_objective(critic, cond, real, fake, eps, hyper.lambda_gp)
            opt_d.zero_grad()
            c_loss.backward()
            opt_d.step()
            sums["critic"] += c_loss.item()
            sums["wasserstein"] += gap.item()
            sums["penalty"] += gp.item()
            n_c += 1
            if b % hyper.critic_steps == hyper.critic_steps - 1:
                noise = torch.randn(len(idx), K, generator=tgen)
                fake = gen(cond, noise)[:, 0]
                g_loss, sup = generator_objective(critic, cond, real, fake, hyper.eta_sup)
                opt_g.zero_grad()
                g_loss.backward(inputs=list(gen.parameters()))
                opt_g.step()
                sums["generator"] += g_loss.item()
                sums["supervised"] += sup.item()
                n_g += 1
            steps += 1
            if not math.isfinite(sums["critic"]) or not math.isfinite(sums["generator"]):
                trace.epochs.append({"epoch": epoch, **sums})
                raise TrainingError(f"CWGAN loss became non-finite at epoch {epoch}", trace)
            if hyper.max_steps is not None and steps >= hyper.max_steps:
                break
        rec = {
            "epoch": epoch,
            "critic": sums["critic"] / max(n_c, 1),
            "wasserstein": sums["wasserstein"] / max(n_c, 1),
            "penalty": sums["penalty"] / max(n_c, 1),
            "generator": sums["generator"] / max(n_g, 1) if n_g else math.nan,
            "supervised": sums["supervised"] / max(n_g, 1) if n_g else math.nan,
        }
        trace.epochs.append(rec)
        if progress is not None:
            progress(epoch, rec)
        if hyper.max_steps is not None and steps >= hyper.max_steps:
            break
    return gen.eval(), critic.eval(), trace


def generate_recursive(generator, window, L: int, seed: int | None = None, noise: np.ndarray | None = None,
                       return_window: bool = False):
    """Roll the one-step generator forward ``L`` times.

    ``generator`` is any callable ``(condition (S, M, K), noise (S, K)) -> (S, K)``.
    Each step draws one noise vector per sample, drops the oldest row of the
    window and appends the generated row. Returns the L generated rows
    ((L, K) or (S, L, K)); with ``return_window`` also the final window.
    """
    if L < 1:
        raise ContractError(f"L must be >= 1, got {L}")
    w = np.array(window, dtype=float)
    single = w.ndim == 2
    if single:
        w = w[None]
    S, M, K = w.shape
    if noise is None:
        noise = np.random.default_rng(seed).standard_normal((S, L, K))
    else:
        noise = np.asarray(noise, dtype=float).reshape(S, L, K)
    out = np.empty((S, L, K))
    for j in range(L):
        step = np.asarray(generator(w, noise[:, j]), dtype=float).reshape(S, K)
        out[:, j] = step
        w = np.concatenate([w[:, 1:], step[:, None]], axis=1)
    if single:
        out, w = out[0], w[0]
    return (out, w) if return_window else out


def extend_windows(generator, windows: np.ndarray, L: int, seed: int | None = None,
                   noise: np.ndarray | None = None) -> np.ndarray:
    """Effective GenF input (X_{L+1..M}, synthetic M+1..M+L) for each window."""
    if L == 0:
        return np.array(windows, dtype=float)
    _, w = generate_recursive(generator, windows, L, seed=seed, noise=noise, return_window=True)
    return w


def architecture(gen: Generator) -> dict:
    return {"K": gen.K, "hidden": gen.rnn.hidden_size, "dense": gen.fc1.out_features}


def hyper_dict(hyper: CwganHyper) -> dict:
    return asdict(hyper)
