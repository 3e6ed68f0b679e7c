"""Self-checks shared by the test suite and the command line.

``gradient_check`` compares the tape gradient of the full training loss on a
tiny model with central differences. ``oracle_suite`` runs the mean-field
solver against exact enumeration on seeded tiny instances.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .attention import NoiseSource
from .data import EncodedBatch, SequenceRecord, SynthSpec, encode_batch, synth_generate
from .energy import EnergyParams, free_energy
from .meanfield import SolverConfig, solve, update_s
from .model import BMClassifier, ModelConfig
from .numerics import finite_diff_gradient, relative_error
from .oracle import TinyInstance, enumerate_states
from .sampler import GumbelConfig
from .training import TrainConfig, batch_loss

GRAD_TOLERANCE = 1e-4


def tiny_model_config(**overrides) -> ModelConfig:
    cfg = dict(max_len=20, d_model=8, num_heads=2, num_layers=1, ffn_dim=16, num_latent=2,
               dropout=0.0, mode="bm_hard", solver=SolverConfig(iterations=2, record_trace=False))
    cfg.update(overrides)
    return ModelConfig(**cfg)


def tiny_batch(seed: int = 0, n: int = 4, length: int = 20) -> EncodedBatch:
    """Short synthetic sequences; the last one is shortened so padding is exercised."""
    spec = SynthSpec(length=length, motif_a="TATA", motif_b="CACG", motif_c="GGGC", seed=seed)
    recs = synth_generate(spec, n)
    recs[-1] = SequenceRecord(recs[-1].seq[: length - 7], recs[-1].label)
    return encode_batch(recs, length)


@dataclass
class GradCheckReport:
    errors: dict[str, float]
    tolerance: float = GRAD_TOLERANCE
    # batch-mean hinge; positive means the energy branch is active
    energy: float = 0.0

    @property
    def max_error(self) -> float:
        return max(self.errors.values())

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tolerance


def gradient_check(seed: int = 0, lam: float = 0.1, margin: float = 1.0, step: float = 1e-5,
                   corrupt: bool = False) -> GradCheckReport:
    """Tape vs central-difference gradient of the total loss, per parameter tensor.

    Gumbel noise and negative structures are drawn once and replayed for
    every evaluation, so the loss is a deterministic function of the
    parameters. Soft Gumbel gates keep it differentiable. ``corrupt`` perturbs
    the tape gradient as a negative control.
    """
    torch.manual_seed(seed)
    model = BMClassifier(tiny_model_config())
    # non-zero energy parameters so every branch carries gradient
    with torch.no_grad():
        for block in model.blocks:
            block.attn.energy.w_diag.normal_(0.0, 0.5)
            block.attn.energy.W_lat.normal_(0.0, 0.5)
            block.attn.energy.b_lat.normal_(0.0, 0.5)
    model.eval()
    batch = tiny_batch(seed)
    cfg = TrainConfig(margin=margin, lambda_max=lam)
    gumbel = GumbelConfig(tau=0.7, hard=False)
    noise = NoiseSource(torch.Generator().manual_seed(seed), np.random.default_rng(seed))
    params = list(model.named_parameters())
    theta0 = [p.detach().clone() for _, p in params]

    def loss() -> torch.Tensor:
        return batch_loss(model, batch, cfg, lam, gumbel, noise, "bm_hard").loss

    out = batch_loss(model, batch, cfg, lam, gumbel, noise, "bm_hard")
    tape = torch.autograd.grad(out.loss, [p for _, p in params])
    errors = {}
    with torch.no_grad():
        for (name, p), g, p0 in zip(params, tape, theta0):

            def f(flat, p=p, p0=p0):
                p.copy_(torch.as_tensor(flat).reshape(p0.shape))
                return float(loss())

            try:
                fd = finite_diff_gradient(f, p0.reshape(-1).numpy(), step)
            finally:
                p.copy_(p0)
            g = g.detach().reshape(-1).numpy()
            if corrupt:
                g = g * 1.01 + 1e-3
            errors[name] = relative_error(g, fd)
    return GradCheckReport(errors, energy=float(out.energy.detach()))


# -- oracle suite -----------------------------------------------------------

@dataclass
class OracleCheck:
    name: str
    passed: bool
    detail: str
    values: list[float] = field(default_factory=list)


def _tensors(inst: TinyInstance):
    S, M = inst.num_edges, inst.num_latent
    h = torch.as_tensor(inst.h).reshape(1, 1, S)
    J = torch.as_tensor(inst.J).reshape(1, S, S)
    p = EnergyParams.from_tensors(torch.zeros(1, 1, dtype=torch.float64),
                                  torch.as_tensor(inst.W).reshape(1, S, M),
                                  torch.as_tensor(inst.b).reshape(1, M), inst.c_lat)
    return h, J, p


@torch.no_grad()
def check_bound(n: int = 200, seed: int = 0, inject_violation: bool = False) -> OracleCheck:
    """Mean-field free energy never falls below ``-log Z``."""
    rng = np.random.default_rng(seed)
    gaps = []
    for _ in range(n):
        inst = TinyInstance.random(rng, int(rng.integers(1, 7)), int(rng.integers(0, 4)))
        h, J, p = _tensors(inst)
        state, _ = solve(h, J, p, SolverConfig(diagnostic=True, record_trace=False))
        F = float(free_energy(h, J, p, state))
        if inject_violation:
            F -= 1.0
        gaps.append(F + enumerate_states(inst).log_partition)
    worst = min(gaps)
    return OracleCheck("free-energy bound", worst >= -1e-9, f"min(F + log Z) = {worst:.3e}", gaps)


@torch.no_grad()
def check_marginals(n: int = 100, seed: int = 1) -> OracleCheck:
    """Weak couplings: converged s within 0.05 of the exact marginals."""
    rng = np.random.default_rng(seed)
    errs = []
    for _ in range(n):
        inst = TinyInstance.random(rng, int(rng.integers(1, 7)), int(rng.integers(0, 4)),
                                   scale=1.0, coupling_scale=0.1)
        h, J, p = _tensors(inst)
        state, _ = solve(h, J, p, SolverConfig(diagnostic=True, record_trace=False))
        exact = enumerate_states(inst).marginals_z
        errs.append(float(np.max(np.abs(state.s.numpy().ravel() - exact))))
    worst = max(errs)
    return OracleCheck("weak-coupling marginals", worst <= 0.05, f"max |s - p| = {worst:.3e}", errs)


@torch.no_grad()
def check_decoupled(n: int = 100, seed: int = 2) -> OracleCheck:
    """No couplings: one sweep is exact."""
    rng = np.random.default_rng(seed)
    errs = []
    for _ in range(n):
        S, M = int(rng.integers(1, 7)), int(rng.integers(0, 4))
        inst = TinyInstance(rng.uniform(-1, 1, S), np.zeros((S, S)), np.zeros((S, M)),
                            rng.uniform(-1, 1, M))
        h, J, p = _tensors(inst)
        state, _ = solve(h, J, p, SolverConfig(iterations=1, record_trace=False))
        exact = enumerate_states(inst).marginals_z
        errs.append(float(np.max(np.abs(state.s.numpy().ravel() - exact))))
    worst = max(errs)
    return OracleCheck("decoupled exactness", worst <= 1e-12, f"max |s - p| = {worst:.3e}", errs)


@torch.no_grad()
def check_monotone(n: int = 100, seed: int = 3, sweeps: int = 5) -> OracleCheck:
    """Sequential mode: free energy never rises across a coordinate update."""
    rng = np.random.default_rng(seed)
    rises = []
    for _ in range(n):
        inst = TinyInstance.random(rng, int(rng.integers(2, 7)), int(rng.integers(0, 4)), scale=2.0)
        h, J, p = _tensors(inst)
        values: list[float] = []
        solve(h, J, p, SolverConfig(iterations=sweeps, update_mode="sequential", record_trace=False),
              on_step=lambda q: values.append(float(free_energy(h, J, p, q))))
        rises.append(float(np.max(np.diff(values))))
    worst = max(rises)
    return OracleCheck("sequential monotonicity", worst <= 1e-10, f"max rise = {worst:.3e}", rises)


@torch.no_grad()
def check_fixed_point(n: int = 50, seed: int = 4) -> OracleCheck:
    """After diagnostic convergence one more undamped sweep moves s by at most the tolerance."""
    rng = np.random.default_rng(seed)
    moves = []
    for _ in range(n):
        inst = TinyInstance.random(rng, int(rng.integers(1, 7)), int(rng.integers(0, 4)))
        h, J, p = _tensors(inst)
        cfg = SolverConfig(diagnostic=True, tolerance=1e-8, record_trace=False)
        state, trace = solve(h, J, p, cfg)
        if not trace.converged:
            moves.append(float("inf"))
            continue
        s_next = update_s(state.s, state.r, h, J, p, SolverConfig(damping=0.0))
        moves.append(float((s_next - state.s).abs().max()))
    worst = max(moves)
    return OracleCheck("fixed-point self-consistency", worst <= 1e-8, f"max move = {worst:.3e}", moves)


def oracle_suite(seed: int = 0, inject_violation: bool = False) -> list[OracleCheck]:
    return [
        check_bound(seed=seed, inject_violation=inject_violation),
        check_marginals(seed=seed + 1),
        check_decoupled(seed=seed + 2),
        check_monotone(seed=seed + 3),
        check_fixed_point(seed=seed + 4),
    ]
