import math

import numpy as np
import pytest
import torch

from boltzgate.energy import EnergyParams
from boltzgate.oracle import TinyInstance


def instance_tensors(inst: TinyInstance):
    """Single-head, single-query tensors ``(h, J, params)`` for a tiny instance."""
    S, M = inst.num_edges, inst.num_latent
    h = torch.as_tensor(inst.h).reshape(1, 1, S)
    J = torch.as_tensor(inst.J).reshape(1, S, S)
    params = EnergyParams.from_tensors(torch.zeros(1, 1), torch.as_tensor(inst.W).reshape(1, S, M),
                                       torch.as_tensor(inst.b).reshape(1, M), inst.c_lat)
    return h, J, params


def direct_softmax_attention(Q, K, V, mask=None):
    """Row-by-row softmax attention in numpy."""
    Qn, Kn, Vn = (t.detach().numpy() for t in (Q, K, V))
    d_h = Qn.shape[-1]
    out = np.zeros(Qn.shape[:-1] + (Vn.shape[-1],))
    for idx in np.ndindex(*Qn.shape[:-1]):
        lead, t = idx[:-1], idx[-1]
        scores = np.array([Qn[idx] @ Kn[lead + (s,)] / math.sqrt(d_h)
                           for s in range(Kn.shape[-2])])
        if mask is not None:
            m = np.asarray(mask, dtype=bool)
            m = m[lead[:-1]] if m.ndim > 1 else m
            scores = np.where(m, scores, -1e4)
        w = np.exp(scores - scores.max())
        w /= w.sum()
        out[idx] = w @ Vn[lead]
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# -- acceptance reporting ---------------------------------------------------

_ACCEPTANCE: dict[int, str] = {}


def record_acceptance(n: int, name: str, passed, detail: str) -> None:
    """Store and print one acceptance line; ``passed=None`` marks an informational skip."""
    status = {True: "PASS", False: "FAIL", None: "SKIP"}[passed]
    line = f"ACCEPTANCE {n:2d} {status}  {name}: {detail}"
    _ACCEPTANCE[n] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[n])
