"""Damped fixed-point iteration for the mean-field edge and latent probabilities."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Literal

import torch

from .energy import EnergyParams, StructureState, free_energy
from .numerics import EPS_PROB


@dataclass
class SolverConfig:
    iterations: int = 3
    damping: float = 0.5
    tolerance: float = 1e-8
    update_mode: Literal["parallel", "sequential"] = "parallel"
    # diagnostic mode iterates until the residual drops below `tolerance`
    diagnostic: bool = False
    max_iterations: int = 10_000
    record_trace: bool = True

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not 0.0 <= self.damping <= 1.0:
            raise ValueError("damping must lie in [0, 1]")
        if self.update_mode not in ("parallel", "sequential"):
            raise ValueError(f"unknown update mode {self.update_mode!r}")


@dataclass
class SolveTrace:
    residual: float = 0.0
    free_energy_per_sweep: list[float] = field(default_factory=list)
    sweeps: int = 0
    converged: bool = False


def _clamp(p: torch.Tensor) -> torch.Tensor:
    return p.clamp(EPS_PROB, 1.0 - EPS_PROB)


def _apply_mask(s: torch.Tensor, mask) -> torch.Tensor:
    if mask is None:
        return s
    m = torch.as_tensor(mask, dtype=torch.bool, device=s.device)
    return s.masked_fill(~m[..., None, None, :], 0.0)


def init_s(h: torch.Tensor, mask=None) -> torch.Tensor:
    return _apply_mask(_clamp(torch.sigmoid(h)), mask)


def latent_field(s: torch.Tensor, params: EnergyParams) -> torch.Tensor:
    W = params.latent_weights(s.shape[-1])
    return params.c_lat * (params.b_lat[:, None, :] + torch.einsum("...hts,hsm->...htm", s, W))


def update_r(s: torch.Tensor, params: EnergyParams) -> torch.Tensor:
    """Latent probabilities given edge probabilities (exact conditional minimizer of F)."""
    return _clamp(torch.sigmoid(latent_field(s, params)))


def edge_field(s: torch.Tensor, r: torch.Tensor, h: torch.Tensor, J: torch.Tensor,
               params: EnergyParams) -> torch.Tensor:
    W = params.latent_weights(s.shape[-1])
    # J is symmetric with zero diagonal, so s @ J gives Σ_{s'≠s} J[s,s'] s[s']
    return h + s @ J + params.c_lat * torch.einsum("...htm,hsm->...hts", r, W)


def update_s(s_prev, r, h, J, params: EnergyParams, cfg: SolverConfig, mask=None,
             on_coordinate: Callable[[torch.Tensor], None] | None = None) -> torch.Tensor:
    if cfg.update_mode == "parallel":
        cand = _clamp(torch.sigmoid(edge_field(s_prev, r, h, J, params)))
        s_next = cfg.damping * s_prev + (1.0 - cfg.damping) * cand if cfg.damping else cand
        return _apply_mask(s_next, mask)

    # sequential: one coordinate at a time, always reading the freshest values
    S = s_prev.shape[-1]
    W = params.latent_weights(S)
    lat = params.c_lat * torch.einsum("...htm,hsm->...hts", r, W)
    keep = None
    if mask is not None:
        keep = torch.as_tensor(mask, dtype=torch.bool, device=s_prev.device)
    cols = list(s_prev.unbind(-1))
    for k in range(S):
        s_cur = torch.stack(cols, dim=-1)
        phi = h[..., k] + (s_cur @ J[..., :, k : k + 1])[..., 0] + lat[..., k]
        new = _clamp(torch.sigmoid(phi))
        if keep is not None:
            new = new.masked_fill(~keep[..., k, None, None], 0.0)
        cols[k] = new
        if on_coordinate is not None:
            on_coordinate(torch.stack(cols, dim=-1))
    return torch.stack(cols, dim=-1)


def solve(h, J, params: EnergyParams, cfg: SolverConfig | None = None, mask=None,
          on_step: Callable[[StructureState], None] | None = None
          ) -> tuple[StructureState, SolveTrace]:
    """Alternate latent and edge updates starting from ``σ(h)``.

    Each sweep maps ``(s_k, r_k)`` to ``s_{k+1}`` using ``r_k`` and then
    recomputes ``r_{k+1}`` from ``s_{k+1}``. ``on_step`` (sequential mode)
    sees the state after every single coordinate update.
    """
    cfg = cfg or SolverConfig()
    trace = SolveTrace()
    s = init_s(h, mask)
    r = update_r(s, params)

    def record():
        if cfg.record_trace:
            with torch.no_grad():
                trace.free_energy_per_sweep.append(
                    float(free_energy(h, J, params, StructureState(s, r), mask).sum()))

    record()
    if on_step is not None:
        on_step(StructureState(s, r))
    n_sweeps = cfg.max_iterations if cfg.diagnostic else cfg.iterations
    for _ in range(n_sweeps):
        hook = None
        if on_step is not None:
            r_fixed = r
            hook = lambda s_cur: on_step(StructureState(s_cur, r_fixed))  # noqa: E731
        s_new = update_s(s, r, h, J, params, cfg, mask, on_coordinate=hook)
        step = float((s_new - s).detach().abs().max()) if s.numel() else 0.0
        # report the undamped fixed-point residual |σ(φ) - s|
        damp = cfg.damping if cfg.update_mode == "parallel" else 0.0
        residual = step / (1.0 - damp) if damp < 1.0 else step
        s = s_new
        r = update_r(s, params)
        if on_step is not None:
            on_step(StructureState(s, r))
        trace.sweeps += 1
        trace.residual = residual
        record()
        if cfg.diagnostic and residual <= cfg.tolerance:
            trace.converged = True
            break
    if not cfg.diagnostic:
        trace.converged = trace.residual <= cfg.tolerance
    return StructureState(s, r), trace
