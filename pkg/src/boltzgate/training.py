"""Joint task + energy training with the soft-to-hard curriculum."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .attention import NoiseSource
from .data import EncodedBatch, SequenceRecord, encode_batch, split_records
from .energy import total_energy
from .meanfield import update_r
from .model import BMClassifier, save_checkpoint
from .numerics import DTYPE
from .sampler import GumbelConfig, NegativeSamplerConfig, anneal_negative, perturb_negative

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 1e-4
    lr_min: float = 1e-6
    epochs: int = 10
    batch_size: int = 64
    clip_norm: float = 1.0
    margin: float = 1.0
    lambda_max: float = 0.1
    warmup_epochs: int = 3
    tau_start: float = 1.0
    tau_end: float = 0.5
    hard_after_epoch: int = 3
    neg_mode: str = "perturb"
    rho: float = 0.1
    val_fraction: float = 0.1
    energy_branch: bool = True
    seed: int = 0

    def __post_init__(self):
        for name in ("lr", "lr_min", "epochs", "batch_size", "clip_norm", "margin"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.lambda_max < 0:
            raise ValueError("lambda_max must be non-negative")
        NegativeSamplerConfig(self.rho, self.neg_mode)  # validates

    @property
    def negative_sampler(self) -> NegativeSamplerConfig:
        return NegativeSamplerConfig(flip_fraction=self.rho, mode=self.neg_mode)


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float
    mean_pos_energy: float
    mean_neg_energy: float
    lam: float
    tau: float
    lr: float

    def to_json(self) -> str:
        return json.dumps(asdict(self))

    @classmethod
    def from_json(cls, line: str) -> "EpochMetrics":
        return cls(**json.loads(line))


# -- losses -----------------------------------------------------------------

def bce_loss(logit, y):
    """Binary cross-entropy on logits: ``max(ŷ,0) - ŷy + log(1 + e^{-|ŷ|})``."""
    logit = torch.as_tensor(logit, dtype=DTYPE)
    y = torch.as_tensor(y, dtype=DTYPE)
    return logit.clamp(min=0) - logit * y + torch.log1p(torch.exp(-logit.abs()))


def energy_margin_loss(e_pos, e_neg, margin: float):
    if margin <= 0:
        raise ValueError("margin must be positive")
    return torch.relu(torch.as_tensor(e_pos, dtype=DTYPE) - e_neg + margin)


def total_loss(task, energy, lam: float):
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    return task + lam * energy


def structure_energy(h, J, params, s, query_mask=None):
    """Energy of a (soft) structure with the latent units at their conditional means.

    Rows of padded queries are zeroed so they contribute nothing.
    """
    r = update_r(s, params)
    if query_mask is not None:
        q = torch.as_tensor(query_mask, dtype=DTYPE)[..., None, :, None]
        s, r = s * q, r * q
    return total_energy(h, J, params, s, r)


# -- schedules --------------------------------------------------------------

def lambda_schedule(epoch: int, cfg: TrainConfig) -> float:
    """0 through the warm-up epochs, then linear up to ``lambda_max`` at the last epoch."""
    if epoch <= cfg.warmup_epochs:
        return 0.0
    span = cfg.epochs - cfg.warmup_epochs
    return cfg.lambda_max * min(1.0, (epoch - cfg.warmup_epochs) / span)


def tau_schedule(epoch: int, cfg: TrainConfig) -> tuple[float, bool]:
    """Linear temperature from ``tau_start`` (epoch 1) to ``tau_end`` (last epoch), plus the hard flag."""
    hard = epoch > cfg.hard_after_epoch
    if cfg.epochs <= 1:
        return cfg.tau_start, hard
    frac = min(1.0, (epoch - 1) / (cfg.epochs - 1))
    return cfg.tau_start - (cfg.tau_start - cfg.tau_end) * frac, hard


def cosine_lr(step: int, total_steps: int, cfg: TrainConfig) -> float:
    c = 0.5 * (1.0 + math.cos(math.pi * min(step, total_steps) / total_steps))
    # written as a convex combination so both endpoints are exact
    return cfg.lr * c + cfg.lr_min * (1.0 - c)


# -- optimizer --------------------------------------------------------------

def clip_gradients(grads, max_norm: float = 1.0):
    total = math.sqrt(sum(float((g * g).sum()) for g in grads))
    if total <= max_norm or total == 0.0:
        return list(grads)
    scale = max_norm / total
    return [g * scale for g in grads]


@dataclass
class AdamState:
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    t: int = 0
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8


def adam_step(params, grads, state: AdamState, lr: float):
    """One bias-corrected Adam update; returns new parameter tensors."""
    if len(params) != len(grads):
        raise ValueError("parameter and gradient lists differ in length")
    if not state.m:
        state.m = [torch.zeros_like(p) for p in params]
        state.v = [torch.zeros_like(p) for p in params]
    b1, b2 = state.betas
    state.t += 1
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise ValueError(f"shape mismatch for parameter {i}: {tuple(p.shape)} vs {tuple(g.shape)}")
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g
        out.append(p - lr * (state.m[i] / c1) / (torch.sqrt(state.v[i] / c2) + state.eps))
    return out


# -- loss on a batch --------------------------------------------------------

@dataclass
class BatchLoss:
    loss: torch.Tensor
    task: torch.Tensor
    energy: torch.Tensor | None
    logits: torch.Tensor
    e_pos: float = float("nan")
    e_neg: float = float("nan")


def batch_loss(model: BMClassifier, batch: EncodedBatch, cfg: TrainConfig, lam: float,
               gumbel: GumbelConfig | None = None, noise: NoiseSource | None = None,
               mode: str | None = None) -> BatchLoss:
    mode = mode or model.cfg.mode
    noise = noise or NoiseSource()
    logits, states, diags = model(batch.tokens, batch.mask, mode=mode, gumbel=gumbel, noise=noise)
    task = bce_loss(logits, batch.labels).mean()
    if mode == "softmax" or not cfg.energy_branch:
        return BatchLoss(task, task, None, logits)

    qmask = diags["coarse_mask"]
    neg_cfg = cfg.negative_sampler
    hinge = torch.zeros(len(batch), dtype=DTYPE)
    e_pos_sum = torch.zeros(len(batch), dtype=DTYPE)
    e_neg_sum = torch.zeros(len(batch), dtype=DTYPE)
    for i, (state, diag, block) in enumerate(zip(states, diags["layers"], model.blocks)):
        params = block.attn.energy
        h, J = diag["h"], diag["J"]

        def make_negative(rng, state=state, h=h, J=J, params=params):
            if neg_cfg.mode == "anneal":
                return anneal_negative(h, J, params, neg_cfg, rng, qmask)
            return perturb_negative(state, neg_cfg, rng, qmask, query_mask=qmask)

        s_neg = noise.cached(("negative", i), make_negative).s
        e_pos = structure_energy(h, J, params, state.s, qmask)
        e_neg = structure_energy(h, J, params, s_neg, qmask)
        hinge = hinge + energy_margin_loss(e_pos, e_neg, cfg.margin)
        e_pos_sum = e_pos_sum + e_pos.detach()
        e_neg_sum = e_neg_sum + e_neg.detach()
    energy = hinge.mean()
    # λ = 0 leaves the task loss untouched rather than adding 0·energy
    loss = total_loss(task, energy, lam) if lam > 0 else task
    return BatchLoss(loss, task, energy, logits, float(e_pos_sum.mean()), float(e_neg_sum.mean()))


# -- epoch loop -------------------------------------------------------------

def set_seed(seed: int) -> None:
    torch.manual_seed(seed)
    np.random.seed(seed % 2**32)


class Trainer:
    """Owns the optimizer state, the random streams and the epoch loop."""

    def __init__(self, model: BMClassifier, cfg: TrainConfig,
                 train: list[SequenceRecord], val: list[SequenceRecord] | None = None,
                 max_len: int | None = None):
        self.model = model
        self.cfg = cfg
        if val is None:
            train, val = split_records(train, cfg.val_fraction, cfg.seed)
        if not train:
            raise ValueError("empty training set")
        self.max_len = max_len or model.cfg.max_len
        self.train_data = encode_batch(train, self.max_len)
        self.val_data = encode_batch(val, self.max_len) if val else None
        shuffle_ss, neg_ss, gumbel_ss = np.random.SeedSequence(cfg.seed).spawn(3)
        self.shuffle_rng = np.random.default_rng(shuffle_ss)
        self.neg_rng = np.random.default_rng(neg_ss)
        self.gumbel_gen = torch.Generator().manual_seed(int(gumbel_ss.generate_state(1)[0]))
        self.adam = AdamState()
        self.step = 0
        n_batches = math.ceil(len(self.train_data) / cfg.batch_size)
        self.total_steps = n_batches * cfg.epochs
        self.best_val_acc = -1.0
        self.history: list[EpochMetrics] = []

    def _batches(self, data: EncodedBatch, shuffle: bool):
        n = len(data)
        order = self.shuffle_rng.permutation(n) if shuffle else np.arange(n)
        for start in range(0, n, self.cfg.batch_size):
            idx = order[start:start + self.cfg.batch_size]
            yield EncodedBatch(data.tokens[idx], data.mask[idx], data.labels[idx])

    def train_epoch(self, epoch: int) -> EpochMetrics:
        cfg, model = self.cfg, self.model
        lam = lambda_schedule(epoch, cfg)
        tau, hard = tau_schedule(epoch, cfg)
        gumbel = GumbelConfig(tau, hard) if model.cfg.mode == "bm_hard" else None
        params = [p for p in model.parameters()]
        model.train()
        tot_loss = tot_correct = tot_n = 0.0
        e_pos, e_neg = [], []
        lr = cfg.lr
        for b, batch in enumerate(self._batches(self.train_data, shuffle=True)):
            noise = NoiseSource(self.gumbel_gen, self.neg_rng)
            out = batch_loss(model, batch, cfg, lam, gumbel, noise)
            if not torch.isfinite(out.loss):
                raise FloatingPointError(f"non-finite loss at epoch {epoch}, batch {b}")
            grads = torch.autograd.grad(out.loss, params, allow_unused=True)
            grads = [torch.zeros_like(p) if g is None else g for p, g in zip(params, grads)]
            grads = clip_gradients(grads, cfg.clip_norm)
            lr = cosine_lr(self.step, self.total_steps, cfg)
            new = adam_step([p.detach() for p in params], grads, self.adam, lr)
            with torch.no_grad():
                for p, q in zip(params, new):
                    p.copy_(q)
            self.step += 1
            n = len(batch)
            tot_loss += float(out.task.detach()) * n
            pred = (torch.sigmoid(out.logits.detach()) > 0.5).numpy()
            tot_correct += float((pred == (batch.labels > 0.5)).sum())
            tot_n += n
            e_pos.append(out.e_pos)
            e_neg.append(out.e_neg)
        val_loss, val_acc = self.evaluate(self.val_data) if self.val_data is not None else (float("nan"),) * 2
        metrics = EpochMetrics(
            epoch=epoch, train_loss=tot_loss / tot_n, train_acc=tot_correct / tot_n,
            val_loss=val_loss, val_acc=val_acc,
            mean_pos_energy=float(np.mean(e_pos)), mean_neg_energy=float(np.mean(e_neg)),
            lam=lam, tau=tau, lr=lr,
        )
        self.history.append(metrics)
        return metrics

    @torch.no_grad()
    def evaluate(self, data: EncodedBatch | list[SequenceRecord]) -> tuple[float, float]:
        return evaluate(self.model, data, self.cfg.batch_size, self.max_len)

    def fit(self, epochs: int | None = None, out_dir=None) -> list[EpochMetrics]:
        epochs = epochs or self.cfg.epochs
        out = Path(out_dir) if out_dir else None
        if out:
            out.mkdir(parents=True, exist_ok=True)
            (out / "metrics.jsonl").write_text("")
        for epoch in range(1, epochs + 1):
            m = self.train_epoch(epoch)
            log.info("epoch %d: loss %.4f acc %.4f val_acc %.4f", epoch, m.train_loss,
                     m.train_acc, m.val_acc)
            if out:
                with open(out / "metrics.jsonl", "a") as fh:
                    fh.write(m.to_json() + "\n")
                # without validation the latest epoch counts as best
                if m.val_acc > self.best_val_acc or math.isnan(m.val_acc):
                    save_checkpoint(out / "best.npz", self.model, {"epoch": epoch, "val_acc": m.val_acc})
                save_checkpoint(out / "last.npz", self.model, {"epoch": epoch, "val_acc": m.val_acc})
            self.best_val_acc = max(self.best_val_acc, m.val_acc)
        return self.history


@torch.no_grad()
def predict_logits(model: BMClassifier, data: EncodedBatch, batch_size: int = 64) -> np.ndarray:
    """Deterministic logits: dropout off, soft mean-field gates, no sampling noise."""
    was_training = model.training
    model.eval()
    out = []
    try:
        for start in range(0, len(data), batch_size):
            sl = slice(start, start + batch_size)
            logits, _, _ = model(data.tokens[sl], data.mask[sl], gumbel=None)
            out.append(logits.numpy())
    finally:
        model.train(was_training)
    return np.concatenate(out)


def evaluate(model: BMClassifier, data, batch_size: int = 64, max_len: int | None = None):
    """Mean BCE and accuracy at threshold σ(ŷ) > 0.5."""
    if not isinstance(data, EncodedBatch):
        data = encode_batch(data, max_len or model.cfg.max_len)
    if len(data) == 0:
        raise ValueError("empty dataset")
    logits = predict_logits(model, data, batch_size)
    loss = float(bce_loss(torch.as_tensor(logits), torch.as_tensor(data.labels)).mean())
    acc = float(((1.0 / (1.0 + np.exp(-logits)) > 0.5) == (data.labels > 0.5)).mean())
    return loss, acc
