"""Energy of a gating graph and its mean-field free energy.

Shapes follow ``[..., H, T, S]`` for edge quantities (heads, queries, keys)
and ``[..., H, T, M]`` for latent units; any leading batch dimensions are
carried through and the energies are summed over the trailing
head/query/key axes only.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from .numerics import DTYPE, NEG_MASK


class EnergyParams(nn.Module):
    """Per-head learnable quantities of the gating energy.

    ``w_diag`` is the diagonal of the symmetric key-key bilinear form,
    ``W_lat[h, s, m]`` couples absolute key position ``s`` with latent unit
    ``m``, ``b_lat`` are latent biases, ``c_lat`` scales the whole latent term.
    """

    def __init__(self, num_heads: int, head_dim: int, max_positions: int,
                 num_latent: int, c_lat: float = 0.5):
        super().__init__()
        self.w_diag = nn.Parameter(torch.zeros(num_heads, head_dim, dtype=DTYPE))
        self.W_lat = nn.Parameter(torch.zeros(num_heads, max_positions, num_latent, dtype=DTYPE))
        self.b_lat = nn.Parameter(torch.zeros(num_heads, num_latent, dtype=DTYPE))
        self.c_lat = nn.Parameter(torch.tensor(float(c_lat), dtype=DTYPE))

    @classmethod
    def from_tensors(cls, w_diag, W_lat, b_lat, c_lat=0.5) -> "EnergyParams":
        w_diag = torch.as_tensor(w_diag, dtype=DTYPE)
        W_lat = torch.as_tensor(W_lat, dtype=DTYPE)
        b_lat = torch.as_tensor(b_lat, dtype=DTYPE)
        H, S, M = W_lat.shape
        p = cls(H, w_diag.shape[-1], S, M, float(c_lat))
        with torch.no_grad():
            p.w_diag.copy_(w_diag)
            p.W_lat.copy_(W_lat)
            p.b_lat.copy_(b_lat)
        return p

    @property
    def num_latent(self) -> int:
        return self.b_lat.shape[-1]

    def latent_weights(self, num_keys: int) -> torch.Tensor:
        if num_keys > self.W_lat.shape[1]:
            raise ValueError(f"{num_keys} keys exceed the {self.W_lat.shape[1]} latent positions")
        return self.W_lat[:, :num_keys, :]


@dataclass
class StructureState:
    """Mean-field edge probabilities ``s`` and latent-unit probabilities ``r``."""

    s: torch.Tensor
    r: torch.Tensor

    def detach(self) -> "StructureState":
        return StructureState(self.s.detach(), self.r.detach())


def _key_mask(mask, like: torch.Tensor) -> torch.Tensor | None:
    if mask is None:
        return None
    return torch.as_tensor(mask, dtype=torch.bool, device=like.device)


def compute_bias_field(Q: torch.Tensor, K: torch.Tensor, mask=None) -> torch.Tensor:
    """Scaled query-key similarity ``q·k/√d_h``; masked keys get ``NEG_MASK``."""
    if Q.shape[-1] != K.shape[-1] or Q.shape[:-2] != K.shape[:-2]:
        raise ValueError(f"shape mismatch: Q {tuple(Q.shape)} vs K {tuple(K.shape)}")
    d_h = Q.shape[-1]
    if d_h < 1:
        raise ValueError("head dimension must be positive")
    h = Q @ K.transpose(-1, -2) / math.sqrt(d_h)
    m = _key_mask(mask, h)
    if m is not None:
        if m.shape[-1] != K.shape[-2]:
            raise ValueError(f"mask length {m.shape[-1]} != number of keys {K.shape[-2]}")
        # [..., S] -> [..., 1, 1, S] to broadcast over heads and queries
        h = h.masked_fill(~m[..., None, None, :], NEG_MASK)
    return h


def compute_pair_coupling(K: torch.Tensor, w_diag: torch.Tensor, mask=None) -> torch.Tensor:
    """Key-induced couplings ``J[s,s'] = Σ_d w[d] k_s[d] k_s'[d] / d_h`` with zero diagonal."""
    if w_diag.shape != K.shape[-3:-2] + K.shape[-1:]:
        raise ValueError(f"shape mismatch: K {tuple(K.shape)} vs w_diag {tuple(w_diag.shape)}")
    d_h = K.shape[-1]
    J = (K * w_diag[:, None, :]) @ K.transpose(-1, -2) / d_h
    # exact symmetry; matmul rounding may otherwise differ between (s,s') and (s',s)
    J = 0.5 * (J + J.transpose(-1, -2))
    S = K.shape[-2]
    keep = ~torch.eye(S, dtype=torch.bool, device=K.device)
    m = _key_mask(mask, K)
    if m is not None:
        if m.shape[-1] != S:
            raise ValueError(f"mask length {m.shape[-1]} != number of keys {S}")
        keep = keep & m[..., None, None, :] & m[..., None, :, None]
    return J.masked_fill(~keep, 0.0)


def energy_bias(h: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
    # masked keys carry NEG_MASK in h but z is 0 there
    return -(h * z).sum(dim=(-3, -2, -1))


def energy_pair(J: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
    if not torch.equal(J, J.transpose(-1, -2)):
        raise ValueError("coupling must be symmetric")
    # zero diagonal makes z^T J z the sum over s != s'
    return -0.5 * ((z @ J) * z).sum(dim=(-3, -2, -1))


def energy_latent(params: EnergyParams, z: torch.Tensor, u: torch.Tensor) -> torch.Tensor:
    W = params.latent_weights(z.shape[-1])
    zW = torch.einsum("...hts,hsm->...htm", z, W)
    inner = (params.b_lat[:, None, :] * u).sum(dim=(-3, -2, -1)) + (zW * u).sum(dim=(-3, -2, -1))
    return -params.c_lat * inner


def total_energy(h, J, params: EnergyParams, z, u) -> torch.Tensor:
    return energy_bias(h, z) + energy_pair(J, z) + energy_latent(params, z, u)


def expected_energy(h, J, params: EnergyParams, q: StructureState) -> torch.Tensor:
    """Energy under the factorized distribution.

    Each term is multilinear with no self-products (J has a zero diagonal), so
    substituting the probabilities for the binary variables is exact.
    """
    return total_energy(h, J, params, q.s, q.r)


def bernoulli_entropy(p: torch.Tensor) -> torch.Tensor:
    # 0·log 0 = 0 via xlogy
    return -(torch.special.xlogy(p, p) + torch.special.xlogy(1.0 - p, 1.0 - p))


def entropy(q: StructureState, mask=None) -> torch.Tensor:
    """Sum of Bernoulli entropies over unmasked edges and all latent units."""
    m = _key_mask(mask, q.s)
    if m is None:
        hs = bernoulli_entropy(q.s)
    else:
        keep = m[..., None, None, :].expand_as(q.s)
        # substitute a harmless value so the discarded branch has a finite gradient
        hs = torch.where(keep, bernoulli_entropy(torch.where(keep, q.s, 0.5)), 0.0)
    return hs.sum(dim=(-3, -2, -1)) + bernoulli_entropy(q.r).sum(dim=(-3, -2, -1))


def free_energy(h, J, params: EnergyParams, q: StructureState, mask=None) -> torch.Tensor:
    return expected_energy(h, J, params, q) - entropy(q, mask)
