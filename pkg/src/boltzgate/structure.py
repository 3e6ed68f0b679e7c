"""Structural summaries of a trained model: latent usage, couplings and hyperedges.

All quantities are averaged over heads and layers. Dataset averages only
count valid (non-padding) frames.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .data import EncodedBatch
from .model import BMClassifier

DEFAULT_TOP_FRACTION = 0.005


@dataclass
class StructureExport:
    latent_usage: np.ndarray      # [M]
    pair_matrix: np.ndarray       # [S, S]
    module_position: np.ndarray   # [M, S], signed
    pair_edges: list[tuple[int, int, float]]
    hyperedges: list[tuple[int, int, float]]
    top_fraction: float = DEFAULT_TOP_FRACTION

    def manifest(self) -> dict:
        return {
            "latent_usage": {"file": "latent_usage.csv", "shape": list(self.latent_usage.shape)},
            "pair_matrix": {"file": "pair_matrix.csv", "shape": list(self.pair_matrix.shape)},
            "module_position": {"file": "module_position.csv", "shape": list(self.module_position.shape)},
            "module_position_abs": {"file": "module_position_abs.csv",
                                    "shape": list(self.module_position.shape)},
            "pair_edges": {"file": "pair_edges.csv", "count": len(self.pair_edges)},
            "hyperedges": {"file": "hyperedges.csv", "count": len(self.hyperedges)},
            "top_fraction": self.top_fraction,
        }

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        np.savetxt(out / "latent_usage.csv", self.latent_usage[None], delimiter=",")
        np.savetxt(out / "pair_matrix.csv", self.pair_matrix, delimiter=",")
        np.savetxt(out / "module_position.csv", self.module_position, delimiter=",")
        np.savetxt(out / "module_position_abs.csv", np.abs(self.module_position), delimiter=",")
        _write_edges(out / "pair_edges.csv", ("row", "col", "weight"), self.pair_edges)
        _write_edges(out / "hyperedges.csv", ("module", "position", "weight"), self.hyperedges)
        path = out / "manifest.json"
        path.write_text(json.dumps(self.manifest(), indent=2) + "\n")
        return path


def _write_edges(path, header, edges) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for a, b, w in edges:
            fh.write(f"{a},{b},{w:.17g}\n")


def top_count(n: int, fraction: float) -> int:
    """Number of entries kept at a given fraction: ``ceil(fraction·n)``, at least one."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must lie in (0, 1]")
    return max(1, math.ceil(fraction * n)) if n else 0


def strongest_pair_edges(pair: np.ndarray, fraction: float = DEFAULT_TOP_FRACTION):
    """Strongest positive and strongest negative upper-triangle entries.

    ``top_count`` edges are kept from each sign, fewer when a sign has fewer
    non-zero entries.
    """
    iu = np.triu_indices(pair.shape[0], k=1)
    vals = pair[iu]
    k = top_count(vals.size, fraction)
    edges = []
    for sign in (1.0, -1.0):
        idx = np.flatnonzero(sign * vals > 0)
        idx = idx[np.argsort(-sign * vals[idx], kind="stable")][:k]
        edges += [(int(iu[0][i]), int(iu[1][i]), float(vals[i])) for i in idx]
    return edges


def strongest_hyperedges(module_position: np.ndarray, fraction: float = DEFAULT_TOP_FRACTION):
    """Module-position links with the largest absolute weight."""
    flat = module_position.ravel()
    k = top_count(flat.size, fraction)
    idx = np.argsort(-np.abs(flat), kind="stable")[:k]
    M, S = module_position.shape
    return [(int(i // S), int(i % S), float(flat[i])) for i in idx if flat[i] != 0.0]


@torch.no_grad()
def export_structure(model: BMClassifier, data: EncodedBatch, batch_size: int = 64,
                     fraction: float = DEFAULT_TOP_FRACTION) -> StructureExport:
    """Run the gated encoder over ``data`` and collect the structural summaries.

    The model is run in ``bm_soft`` mode whatever its training mode, so the
    export is deterministic.
    """
    if len(data) == 0:
        raise ValueError("empty dataset")
    model.eval()
    S = model.cfg.num_frames
    M = model.cfg.num_latent
    usage_sum, usage_n = np.zeros(M), 0.0
    pair_sum, pair_n = np.zeros((S, S)), np.zeros((S, S))
    for start in range(0, len(data), batch_size):
        sl = slice(start, start + batch_size)
        _, states, diag = model(data.tokens[sl], data.mask[sl], mode="bm_soft")
        q = diag["coarse_mask"].to(torch.float64)                    # [B, n]
        n = q.shape[-1]
        pair_w = (q[:, :, None] * q[:, None, :]).numpy()            # [B, n, n]
        for state, d in zip(states, diag["layers"]):
            r = state.r                                              # [B, H, n, M]
            w = q[:, None, :, None]
            usage_sum += (r * w).sum(dim=(0, 1, 2)).numpy()
            usage_n += float(w.sum()) * r.shape[1]
            J = d["J"].mean(dim=1).numpy()                           # [B, n, n]
            pair_sum[:n, :n] += (J * pair_w).sum(axis=0)
            pair_n[:n, :n] += pair_w.sum(axis=0)
    usage = usage_sum / max(usage_n, 1.0)
    pair = np.divide(pair_sum, pair_n, out=np.zeros_like(pair_sum), where=pair_n > 0)
    W = torch.stack([b.attn.energy.W_lat for b in model.blocks])     # [layers, H, S, M]
    module_position = W.mean(dim=(0, 1)).T.numpy().copy()
    return StructureExport(usage, pair, module_position, strongest_pair_edges(pair, fraction),
                           strongest_hyperedges(module_position, fraction), fraction)
