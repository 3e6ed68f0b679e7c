"""Multi-head attention with softmax or Boltzmann-gated aggregation."""
from __future__ import annotations

import math
from typing import Literal

import numpy as np
import torch
from torch import nn

from .energy import EnergyParams, compute_bias_field, compute_pair_coupling
from .meanfield import SolverConfig, solve
from .numerics import DTYPE
from .sampler import GumbelConfig, gumbel_gates, sample_gumbel

AttentionMode = Literal["softmax", "bm_soft", "bm_hard"]
MODES = ("softmax", "bm_soft", "bm_hard")


class NoiseSource:
    """Random draws for one forward pass, cached by key.

    Re-running a forward pass with the same source replays identical Gumbel
    noise and negative structures, which is what gradient checks need.
    """

    def __init__(self, generator: torch.Generator | None = None,
                 rng: np.random.Generator | None = None):
        self.generator = generator
        self.rng = rng if rng is not None else np.random.default_rng()
        self._cache: dict = {}

    def gumbel(self, key, shape) -> tuple[torch.Tensor, torch.Tensor]:
        k = ("gumbel", key)
        if k not in self._cache or self._cache[k][0].shape != torch.Size(shape):
            self._cache[k] = (sample_gumbel(shape, self.generator),
                              sample_gumbel(shape, self.generator))
        return self._cache[k]

    def cached(self, key, make):
        k = ("other", key)
        if k not in self._cache:
            self._cache[k] = make(self.rng)
        return self._cache[k]


class AttentionLayer(nn.Module):
    def __init__(self, d_model: int, num_heads: int, max_positions: int, num_latent: int,
                 c_lat: float = 0.5, eps: float = 1e-6):
        super().__init__()
        if d_model % num_heads:
            raise ValueError(f"d_model={d_model} is not divisible by {num_heads} heads")
        self.d_model = d_model
        self.num_heads = num_heads
        self.head_dim = d_model // num_heads
        self.eps = eps
        self.q_proj = nn.Linear(d_model, d_model, dtype=DTYPE)
        self.k_proj = nn.Linear(d_model, d_model, dtype=DTYPE)
        self.v_proj = nn.Linear(d_model, d_model, dtype=DTYPE)
        self.out_proj = nn.Linear(d_model, d_model, dtype=DTYPE)
        self.energy = EnergyParams(num_heads, self.head_dim, max_positions, num_latent, c_lat)
        std = 1.0 / math.sqrt(d_model)
        for lin in (self.q_proj, self.k_proj, self.v_proj, self.out_proj):
            nn.init.normal_(lin.weight, 0.0, std)
            nn.init.zeros_(lin.bias)

    def forward(self, X, mask=None, mode: AttentionMode = "softmax",
                solver: SolverConfig | None = None, gumbel: GumbelConfig | None = None,
                noise: NoiseSource | None = None, layer_key=0):
        if mode == "softmax":
            Q, K, V = project_qkv(X, self)
            out = merge_heads(softmax_attention(Q, K, V, mask))
            return self.out_proj(out), None, {}
        return bm_gated_forward(X, self, mode, solver, gumbel, mask, noise, layer_key)


def split_heads(x: torch.Tensor, num_heads: int) -> torch.Tensor:
    *lead, T, d = x.shape
    return x.reshape(*lead, T, num_heads, d // num_heads).transpose(-3, -2)


def merge_heads(x: torch.Tensor) -> torch.Tensor:
    *lead, H, T, dh = x.shape
    return x.transpose(-3, -2).reshape(*lead, T, H * dh)


def project_qkv(X: torch.Tensor, layer: AttentionLayer):
    if X.shape[-1] != layer.d_model:
        raise ValueError(f"expected model width {layer.d_model}, got {X.shape[-1]}")
    H = layer.num_heads
    return (split_heads(layer.q_proj(X), H), split_heads(layer.k_proj(X), H),
            split_heads(layer.v_proj(X), H))


def softmax_attention(Q, K, V, mask=None) -> torch.Tensor:
    if mask is not None:
        m = torch.as_tensor(mask, dtype=torch.bool)
        if not bool(m.any(dim=-1).all()):
            raise ValueError("all keys are masked")
    scores = compute_bias_field(Q, K, mask)
    return torch.softmax(scores, dim=-1) @ V


def gated_aggregate(gates, V, eps: float = 1e-6, mask=None) -> torch.Tensor:
    """``o_t = Σ_s g_ts v_s / (Σ_s g_ts + ε)``; rows are not renormalized to a simplex."""
    if mask is not None:
        m = torch.as_tensor(mask, dtype=torch.bool)
        gates = gates.masked_fill(~m[..., None, None, :], 0.0)
    return (gates @ V) / (gates.sum(dim=-1, keepdim=True) + eps)


def bm_gated_forward(X, layer: AttentionLayer, mode: AttentionMode,
                     solver: SolverConfig | None = None, gumbel: GumbelConfig | None = None,
                     mask=None, noise: NoiseSource | None = None, layer_key=0):
    """Gated attention: bias field and couplings, mean-field solve, optional Gumbel gates.

    Returns the projected output, the positive-phase ``StructureState`` and a
    diagnostics dict holding ``h``, ``J``, ``gates`` and the solver trace. In
    ``bm_hard`` mode a ``None`` Gumbel config falls back to the soft mean-field
    gates (used at evaluation time).
    """
    if mode not in ("bm_soft", "bm_hard"):
        raise ValueError(f"mode {mode!r} is not a gated mode")
    Q, K, V = project_qkv(X, layer)
    h = compute_bias_field(Q, K, mask)
    J = compute_pair_coupling(K, layer.energy.w_diag, mask)
    state, trace = solve(h, J, layer.energy, solver or SolverConfig(record_trace=False), mask)
    gates = state.s
    if mode == "bm_hard" and gumbel is not None:
        if noise is None:
            noise = NoiseSource()
        g0, g1 = noise.gumbel(layer_key, gates.shape)
        gates = gumbel_gates(gates, gumbel, g0, g1, mask)
    out = layer.out_proj(merge_heads(gated_aggregate(gates, V, layer.eps, mask)))
    return out, state, {"h": h, "J": J, "gates": gates, "trace": trace}

