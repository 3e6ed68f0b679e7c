"""Brute-force inference for a single head and a single query.

Every binary configuration of ``S`` edges and ``M`` latent units is visited,
so the results are exact and serve as ground truth for the mean-field solver
and the free-energy bound. The implementation is plain numpy and shares no
code with :mod:`boltzgate.energy`.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import logsumexp

MAX_VARIABLES = 20


@dataclass
class TinyInstance:
    h: np.ndarray
    J: np.ndarray
    W: np.ndarray
    b: np.ndarray
    c_lat: float = 0.5

    def __post_init__(self):
        self.h = np.asarray(self.h, dtype=np.float64).reshape(-1)
        S = self.h.size
        self.J = np.asarray(self.J, dtype=np.float64).reshape(S, S)
        self.b = np.asarray(self.b, dtype=np.float64).reshape(-1)
        self.W = np.asarray(self.W, dtype=np.float64).reshape(S, self.b.size)
        self.c_lat = float(self.c_lat)
        if not np.array_equal(self.J, self.J.T):
            raise ValueError("coupling must be symmetric")
        if np.any(np.diag(self.J) != 0):
            raise ValueError("coupling must have a zero diagonal")

    @property
    def num_edges(self) -> int:
        return self.h.size

    @property
    def num_latent(self) -> int:
        return self.b.size

    @classmethod
    def random(cls, rng: np.random.Generator, S: int, M: int, scale: float = 1.0,
               coupling_scale: float | None = None, c_lat: float = 0.5) -> "TinyInstance":
        """Parameters uniform in ``[-scale, scale]``; couplings optionally narrower."""
        cs = scale if coupling_scale is None else coupling_scale
        h = rng.uniform(-scale, scale, S)
        J = np.triu(rng.uniform(-cs, cs, (S, S)), 1)
        J = J + J.T
        W = rng.uniform(-cs, cs, (S, M))
        b = rng.uniform(-scale, scale, M)
        return cls(h, J, W, b, c_lat)


@dataclass
class ExactPosterior:
    log_partition: float
    probabilities: np.ndarray
    marginals_z: np.ndarray
    marginals_u: np.ndarray
    energies: np.ndarray = field(repr=False)
    states: np.ndarray = field(repr=False)


def all_states(S: int, M: int) -> np.ndarray:
    """Rows are configurations: z bits little-endian, then u bits."""
    n = S + M
    idx = np.arange(2**n, dtype=np.int64)
    return ((idx[:, None] >> np.arange(n)) & 1).astype(np.float64)


def state_energy(inst: TinyInstance, z: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Energy of one or many configurations (rows of ``z`` and ``u``)."""
    z = np.atleast_2d(z)
    u = np.atleast_2d(u)
    e_bias = -z @ inst.h
    e_pair = -0.5 * np.einsum("ns,st,nt->n", z, inst.J, z)
    e_lat = -inst.c_lat * (u @ inst.b + np.einsum("ns,sm,nm->n", z, inst.W, u))
    return e_bias + e_pair + e_lat


def enumerate_states(inst: TinyInstance) -> ExactPosterior:
    S, M = inst.num_edges, inst.num_latent
    if S + M > MAX_VARIABLES:
        raise ValueError("instance too large to enumerate")
    states = all_states(S, M)
    z, u = states[:, :S], states[:, S:]
    E = state_energy(inst, z, u)
    log_z = logsumexp(-E)
    p = np.exp(-E - log_z)
    return ExactPosterior(
        log_partition=log_z,
        probabilities=p,
        marginals_z=p @ z,
        marginals_u=p @ u,
        energies=E,
        states=states,
    )


def exact_min_free_energy(inst: TinyInstance) -> float:
    """``-log Z``: the minimum of the free energy over all distributions."""
    return -enumerate_states(inst).log_partition


def exact_gate_probability(inst: TinyInstance, edge: int) -> float:
    if not 0 <= edge < inst.num_edges:
        raise IndexError(f"edge index {edge} out of range for {inst.num_edges} edges")
    return float(enumerate_states(inst).marginals_z[edge])


def ground_state_energy(inst: TinyInstance) -> float:
    return float(enumerate_states(inst).energies.min())


def factorized_expectation(inst: TinyInstance, s: np.ndarray, r: np.ndarray):
    """Weighted enumeration of energy and entropy under a factorized Bernoulli ``q``.

    Returns ``(E_q[E], H(q))`` computed by summing over every configuration,
    which checks the closed-form expectations independently.
    """
    S, M = inst.num_edges, inst.num_latent
    if S + M > MAX_VARIABLES:
        raise ValueError("instance too large to enumerate")
    states = all_states(S, M)
    probs = np.concatenate([np.asarray(s, float).ravel(), np.asarray(r, float).ravel()])
    # q(state) = Π p^x (1-p)^(1-x)
    logq = np.where(states == 1, np.log(np.where(probs > 0, probs, 1.0)),
                    np.log(np.where(probs < 1, 1.0 - probs, 1.0)))
    impossible = ((states == 1) & (probs == 0)) | ((states == 0) & (probs == 1))
    logq = np.where(impossible, -np.inf, logq).sum(axis=1)
    q = np.exp(logq)
    E = state_energy(inst, states[:, :S], states[:, S:])
    expected = float(q @ E)
    ent = float(-(q[q > 0] @ logq[q > 0]))
    return expected, ent
