"""Gumbel-Softmax gates and negative-phase structure generators."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np
import torch

from .energy import EnergyParams, StructureState
from .numerics import DTYPE, EPS_PROB


@dataclass
class GumbelConfig:
    tau: float = 1.0
    hard: bool = False

    def __post_init__(self):
        if not 0.0 < self.tau <= 10.0:
            raise ValueError(f"tau must lie in (0, 10], got {self.tau}")


@dataclass
class NegativeSamplerConfig:
    flip_fraction: float = 0.1
    mode: Literal["perturb", "anneal"] = "perturb"
    anneal_sweeps: int = 20
    t_start: float = 2.0
    t_end: float = 0.02

    def __post_init__(self):
        if not 0.0 < self.flip_fraction <= 1.0:
            raise ValueError("flip_fraction must lie in (0, 1]")
        if self.mode not in ("perturb", "anneal"):
            raise ValueError(f"unknown negative sampler {self.mode!r}")


def _key_mask(mask, like):
    if mask is None:
        return None
    return torch.as_tensor(mask, dtype=torch.bool, device=like.device)


def _zero_masked(x: torch.Tensor, mask) -> torch.Tensor:
    m = _key_mask(mask, x)
    if m is None:
        return x
    return x.masked_fill(~m[..., None, None, :], 0.0)


def gate_logits(s: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    s = s.clamp(EPS_PROB, 1.0 - EPS_PROB)
    return torch.log1p(-s), torch.log(s)


def sample_gumbel(shape, generator: torch.Generator | None = None) -> torch.Tensor:
    u = torch.rand(shape, generator=generator, dtype=DTYPE)
    u = u.clamp(torch.finfo(DTYPE).tiny, 1.0 - torch.finfo(DTYPE).eps)
    return -torch.log(-torch.log(u))


def gumbel_soft_sample(s, tau: float, g0, g1, mask=None) -> torch.Tensor:
    """Class-1 component of the two-class Gumbel-Softmax."""
    if tau <= 0:
        raise ValueError("temperature must be positive")
    a0, a1 = gate_logits(s)
    # two-way softmax == sigmoid of the logit difference
    z = torch.sigmoid(((a1 + g1) - (a0 + g0)) / tau)
    return _zero_masked(z, mask)


def gumbel_hard_sample(s, tau: float, g0, g1, mask=None) -> torch.Tensor:
    """Forward value is the argmax gate (ties go to 1); gradient is the soft one."""
    soft = gumbel_soft_sample(s, tau, g0, g1, mask)
    a0, a1 = gate_logits(s.detach())
    hard = ((a1 + g1) >= (a0 + g0)).to(soft.dtype)
    hard = _zero_masked(hard, mask)
    return hard + (soft - soft.detach())


def gumbel_gates(s, cfg: GumbelConfig, g0, g1, mask=None) -> torch.Tensor:
    if cfg.hard:
        return gumbel_hard_sample(s, cfg.tau, g0, g1, mask)
    return gumbel_soft_sample(s, cfg.tau, g0, g1, mask)


def flip_count(rho: float, num_edges: int) -> int:
    # rounding guards 0.1 * 30 -> 3.0000000000000004 -> 4
    return max(1, math.ceil(round(rho * num_edges, 9)))


def _valid_edges(shape, mask=None, query_mask=None) -> np.ndarray:
    """Boolean [..., H, T, S] array marking unmasked edges."""
    valid = np.ones(shape, dtype=bool)
    if mask is not None:
        valid = valid & np.asarray(mask, dtype=bool)[..., None, None, :]
    if query_mask is not None:
        valid = valid & np.asarray(query_mask, dtype=bool)[..., None, :, None]
    return valid


def perturb_negative(s_pos: StructureState, cfg: NegativeSamplerConfig,
                     rng: np.random.Generator, mask=None, query_mask=None) -> StructureState:
    """Binarize at 0.5 and flip ``ceil(ρ·E)`` distinct unmasked edges per sample.

    ``E`` counts the edges whose key (and, if given, query) is unmasked.
    """
    s = s_pos.s.detach().cpu().numpy()
    z = (s >= 0.5).astype(np.float64)
    valid = _valid_edges(s.shape, mask, query_mask)
    lead = s.shape[:-3]
    n_samples = int(np.prod(lead)) if lead else 1
    per_sample = s.shape[-3] * s.shape[-2] * s.shape[-1]
    z_flat = z.reshape(n_samples, per_sample)
    v_flat = np.ascontiguousarray(valid).reshape(n_samples, per_sample)
    for i in range(n_samples):
        idx = np.flatnonzero(v_flat[i])
        if idx.size == 0:
            raise ValueError("no unmasked edges to perturb")
        k = flip_count(cfg.flip_fraction, idx.size)
        chosen = rng.choice(idx, size=k, replace=False)
        z_flat[i, chosen] = 1.0 - z_flat[i, chosen]
    z = z_flat.reshape(s.shape)
    s_neg = np.where(z > 0, 1.0 - EPS_PROB, EPS_PROB)
    s_neg = np.where(valid, s_neg, 0.0)
    return StructureState(torch.as_tensor(s_neg, dtype=s_pos.s.dtype), s_pos.r.detach())


def anneal_negative(h: torch.Tensor, J: torch.Tensor, params: EnergyParams,
                    cfg: NegativeSamplerConfig, rng: np.random.Generator, mask=None
                    ) -> StructureState:
    """Simulated annealing on binary ``(z, u)``; returns the lowest-energy state visited.

    Every (sample, head, query) row is an independent Ising problem. Each step
    proposes one single-edge flip per row (Metropolis) and then resamples the
    latent units from their conditionals at the current temperature.
    """
    with torch.no_grad():
        hn = h.detach().cpu().numpy()
        Jn = J.detach().cpu().numpy()
        S = hn.shape[-1]
        Wn = params.latent_weights(S).detach().cpu().numpy()        # [H, S, M]
        bn = params.b_lat.detach().cpu().numpy()                     # [H, M]
        c = float(params.c_lat)
    lead = hn.shape[:-3]
    H, T = hn.shape[-3], hn.shape[-2]
    B = int(np.prod(lead)) if lead else 1
    M = bn.shape[-1]
    hn = hn.reshape(B, H, T, S)
    Jn = Jn.reshape(B, H, S, S)
    if mask is None:
        valid = np.ones((B, S), dtype=bool)
    else:
        valid = np.broadcast_to(np.asarray(mask, dtype=bool), lead + (S,)).reshape(B, S)
    n_valid = valid.sum(axis=1)
    if np.any(n_valid == 0):
        raise ValueError("no unmasked edges to anneal")
    order = np.argsort(~valid, axis=1, kind="stable")                # valid positions first

    bi = np.arange(B)[:, None, None]
    hi = np.arange(H)[None, :, None]
    z = np.zeros((B, H, T, S))
    u = np.zeros((B, H, T, M))
    energy = np.zeros((B, H, T))
    best_e = energy.copy()
    best_z, best_u = z.copy(), u.copy()

    n_steps = max(1, cfg.anneal_sweeps * S)
    temps = np.geomspace(cfg.t_start, cfg.t_end, n_steps)
    for T_k in temps:
        pick = np.floor(rng.random((B, H, T)) * n_valid[:, None, None]).astype(np.int64)
        k = order[np.arange(B)[:, None, None], pick]                # [B, H, T]
        J_row = Jn[bi, hi, k]                                        # [B, H, T, S]
        W_row = Wn[np.arange(H)[None, :, None], k]                   # [B, H, T, M]
        z_k = np.take_along_axis(z, k[..., None], axis=-1)[..., 0]
        h_k = np.take_along_axis(hn, k[..., None], axis=-1)[..., 0]
        phi = h_k + (J_row * z).sum(-1) + c * (W_row * u).sum(-1)
        delta = 1.0 - 2.0 * z_k
        dE = -delta * phi
        accept = (dE <= 0) | (rng.random(dE.shape) < np.exp(-np.clip(dE, 0, None) / T_k))
        new_zk = np.where(accept, 1.0 - z_k, z_k)
        np.put_along_axis(z, k[..., None], new_zk[..., None], axis=-1)
        energy = energy + np.where(accept, dE, 0.0)

        lat = c * (bn[None, :, None, :] + np.einsum("bhts,hsm->bhtm", z, Wn))
        p_u = 1.0 / (1.0 + np.exp(-np.clip(lat / T_k, -700, 700)))
        u_new = (rng.random(u.shape) < p_u).astype(np.float64)
        energy = energy - ((u_new - u) * lat).sum(-1)
        u = u_new

        better = energy < best_e
        best_e = np.where(better, energy, best_e)
        best_z = np.where(better[..., None], z, best_z)
        best_u = np.where(better[..., None], u, best_u)

    s_neg = np.where(best_z > 0, 1.0 - EPS_PROB, EPS_PROB)
    s_neg = np.where(valid[:, None, None, :], s_neg, 0.0)
    r_neg = np.where(best_u > 0, 1.0 - EPS_PROB, EPS_PROB)
    shape_s = lead + (H, T, S)
    shape_r = lead + (H, T, M)
    return StructureState(torch.as_tensor(s_neg.reshape(shape_s), dtype=h.dtype),
                          torch.as_tensor(r_neg.reshape(shape_r), dtype=h.dtype))
