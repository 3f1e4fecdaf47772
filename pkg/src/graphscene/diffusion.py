"""Categorical diffusion over class-index grids, dimension agnostic.

Forward corruption multiplies one-hot states by row-stochastic transition
matrices Q_t; the reverse chain predicts a distribution over the clean state
and pushes it through the exact one-step posterior. The same functions drive
the 2D map stage and the 3D scene stage — a grid is just a bag of cells here.

Timesteps are 1-based: t ranges over [1, T], with Q[t-1] holding Q_t.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

LOG_EPS = 1e-12


@dataclass
class DiffusionSchedule:
    """Per-step transition matrices and their cumulative products (float64)."""

    T: int
    num_classes: int
    kind: str
    betas: torch.Tensor  # [T]
    Q: torch.Tensor      # [T, c, c] row-stochastic
    Qbar: torch.Tensor   # [T, c, c] cumulative products Qbar_t = Qbar_{t-1} Q_t

    def q_mat(self, t: int, dtype: torch.dtype) -> torch.Tensor:
        self._check_t(t)
        return self.Q[t - 1].to(dtype)

    def qbar_mat(self, t: int, dtype: torch.dtype) -> torch.Tensor:
        self._check_t(t)
        return self.Qbar[t - 1].to(dtype)

    def _check_t(self, t: int) -> None:
        if not (1 <= t <= self.T):
            raise ValueError(f"timestep {t} outside [1, {self.T}]")


def build_schedule(T: int, num_classes: int, kind: str = "uniform") -> DiffusionSchedule:
    """Uniform-kernel schedule: Q_t = (1-beta_t) I + beta_t/c, beta linear 0.02 -> 1.

    beta_T = 1 makes Q_T exactly uniform, so the chain's terminal marginal is
    the uniform prior that ``p_sample_loop`` starts from.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    if num_classes < 2:
        raise ValueError("need at least 2 classes")
    if kind != "uniform":
        raise ValueError(f"unsupported kernel {kind!r}")
    c = num_classes
    betas = np.linspace(0.02, 1.0, T) if T > 1 else np.array([1.0])
    eye = np.eye(c)
    ones = np.full((c, c), 1.0 / c)
    Q = np.stack([(1.0 - b) * eye + b * ones for b in betas])
    Qbar = np.empty_like(Q)
    Qbar[0] = Q[0]
    for t in range(1, T):
        Qbar[t] = Qbar[t - 1] @ Q[t]
    return DiffusionSchedule(
        T=T, num_classes=c, kind=kind,
        betas=torch.from_numpy(betas),
        Q=torch.from_numpy(Q),
        Qbar=torch.from_numpy(Qbar),
    )


def sample_categorical(probs: torch.Tensor, rng: torch.Generator) -> torch.Tensor:
    """Draw one class index per row of ``probs`` ([..., c]); inverse-CDF sampling."""
    flat = probs.reshape(-1, probs.shape[-1])
    cdf = flat.cumsum(-1)
    u = torch.rand(flat.shape[0], 1, generator=rng, dtype=flat.dtype)
    idx = (u > cdf).sum(-1).clamp_max(probs.shape[-1] - 1)
    return idx.reshape(probs.shape[:-1])


def q_sample(x0: torch.Tensor, t: int, sched: DiffusionSchedule,
             rng: torch.Generator) -> torch.Tensor:
    """Corrupt a clean index grid to step t: each cell ~ Cat(Qbar_t[x0])."""
    qbar = sched.qbar_mat(t, torch.float64)
    return sample_categorical(qbar[x0.long()], rng)


def posterior(x_t: torch.Tensor, x0_probs: torch.Tensor, t: int,
              sched: DiffusionSchedule) -> torch.Tensor:
    """Per-cell distribution over x_{t-1} given x_t and a belief over x_0.

    q(x_{t-1} | x_t, x0_probs) ∝ (x0_probs @ Qbar_{t-1}) * Q_t[:, x_t], with a
    single normalization — exact Bayes when x0_probs is a prior over x_0. At
    t=1 the "previous state" is x_0 itself and the belief is returned as is.
    """
    sched._check_t(t)
    if x0_probs.shape[:-1] != x_t.shape:
        raise ValueError(f"shape mismatch: x_t {tuple(x_t.shape)} vs x0_probs {tuple(x0_probs.shape)}")
    if t == 1:
        return x0_probs.clone()
    dtype = x0_probs.dtype
    q_t = sched.q_mat(t, dtype)
    qbar_prev = sched.qbar_mat(t - 1, dtype)
    fact1 = q_t.T[x_t.long()]            # [..., c], entry j = Q_t[j, x_t]
    fact2 = x0_probs @ qbar_prev         # [..., c], mixture marginal over x_{t-1}
    post = fact1 * fact2
    return post / post.sum(-1, keepdim=True).clamp_min(LOG_EPS)


def one_hot(x: torch.Tensor, num_classes: int, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    return torch.nn.functional.one_hot(x.long(), num_classes).to(dtype)


def _kl(q: torch.Tensor, p: torch.Tensor) -> torch.Tensor:
    """Elementwise-summed KL(q || p) over the class axis; q may contain zeros."""
    return (q * (torch.log(q.clamp_min(LOG_EPS)) - torch.log(p.clamp_min(LOG_EPS)))).sum(-1)


def diffusion_loss(x0: torch.Tensor, x_t: torch.Tensor, t: int,
                   model_x0_logits: torch.Tensor, sched: DiffusionSchedule,
                   lam: float = 1e-3) -> torch.Tensor:
    """Hybrid loss for one grid: posterior KL summed over cells + lam * CE(x0).

    Both distributions inside the KL come from :func:`posterior` — the true
    one from the one-hot x_0, the model one from softmax(model_x0_logits).
    Reduction is a sum over cells; batch averaging is the caller's job.
    """
    dtype = model_x0_logits.dtype
    x0_probs_model = torch.softmax(model_x0_logits, dim=-1)
    q_true = posterior(x_t, one_hot(x0, sched.num_classes, dtype), t, sched)
    p_model = posterior(x_t, x0_probs_model, t, sched)
    kl = _kl(q_true, p_model).sum()
    logp = torch.log_softmax(model_x0_logits, dim=-1)
    ce = -logp.gather(-1, x0.long().unsqueeze(-1)).sum()
    return kl + lam * ce


def batched_diffusion_loss(x0: torch.Tensor, x_t: torch.Tensor, ts: torch.Tensor,
                           model_x0_logits: torch.Tensor, sched: DiffusionSchedule,
                           lam: float = 1e-3) -> torch.Tensor:
    """Vectorized hybrid loss over a batch with per-item timesteps.

    Same math as :func:`diffusion_loss` (sum over cells per item), reduced by
    a mean over the batch; used by the training loops where the per-item
    python loop would dominate step time.
    """
    b = x0.shape[0]
    c = sched.num_classes
    dtype = model_x0_logits.dtype
    x0f = x0.reshape(b, -1).long()
    xtf = x_t.reshape(b, -1).long()
    logits = model_x0_logits.reshape(b, -1, c)

    q_t = sched.Q.to(dtype)[ts - 1]                       # [B, c, c]
    qbar_prev = sched.Qbar.to(dtype)[(ts - 2).clamp_min(0)]

    def post(x0_probs: torch.Tensor) -> torch.Tensor:
        fact1 = torch.gather(
            q_t.transpose(1, 2), 1,
            xtf.unsqueeze(-1).expand(-1, -1, c))          # [B, N, c], Q_t[j, x_t]
        fact2 = torch.bmm(x0_probs, qbar_prev)
        p = fact1 * fact2
        p = p / p.sum(-1, keepdim=True).clamp_min(LOG_EPS)
        at_t1 = (ts == 1).view(b, 1, 1)
        return torch.where(at_t1, x0_probs, p)

    q_true = post(one_hot(x0f, c, dtype))
    p_model = post(torch.softmax(logits, dim=-1))
    kl = _kl(q_true, p_model).sum(-1)                     # [B]
    ce = -torch.log_softmax(logits, dim=-1).gather(
        -1, x0f.unsqueeze(-1)).squeeze(-1).sum(-1)        # [B]
    return (kl + lam * ce).mean()


def p_sample_loop(denoiser, condition, shape: tuple[int, ...],
                  sched: DiffusionSchedule, rng: torch.Generator) -> torch.Tensor:
    """Ancestral sampling: start uniform at t=T, walk the reverse chain to x_0.

    ``denoiser(x_t, t, condition)`` must return x_0 logits of shape
    ``shape + (c,)`` for an index grid of ``shape`` (leading batch dims fine).
    """
    c = sched.num_classes
    x = torch.randint(0, c, shape, generator=rng)
    for t in range(sched.T, 0, -1):
        logits = denoiser(x, t, condition)
        probs = posterior(x, torch.softmax(logits.to(torch.float64), dim=-1), t, sched)
        x = sample_categorical(probs, rng)
    return x
