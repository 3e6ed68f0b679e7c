"""Convolutional front end, encoder stack and pooled MLP head."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .attention import MODES, AttentionLayer, NoiseSource
from .data import VOCAB_SIZE
from .meanfield import SolverConfig
from .numerics import DTYPE
from .sampler import GumbelConfig

CHECKPOINT_FORMAT = 1


@dataclass
class ModelConfig:
    vocab_size: int = VOCAB_SIZE
    max_len: int = 500
    d_model: int = 128
    num_layers: int = 3
    ffn_dim: int = 512
    dropout: float = 0.1
    num_latent: int = 16
    num_heads: int = 4
    kernel: int = 9
    stride: int = 5
    c_lat: float = 0.5
    mode: str = "bm_soft"
    solver: SolverConfig = field(default_factory=lambda: SolverConfig(record_trace=False))

    def __post_init__(self):
        if isinstance(self.solver, dict):
            self.solver = SolverConfig(**self.solver)
        if self.max_len % self.stride:
            raise ValueError(f"max_len={self.max_len} is not divisible by stride={self.stride}")
        if self.d_model % self.num_heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by {self.num_heads} heads")
        if self.mode not in MODES:
            raise ValueError(f"unknown attention mode {self.mode!r}")
        if self.kernel < 1 or self.stride < 1:
            raise ValueError("kernel and stride must be positive")

    @property
    def num_frames(self) -> int:
        return self.max_len // self.stride

    def to_dict(self) -> dict:
        return asdict(self)


class EncoderBlock(nn.Module):
    """Pre-norm block: attention and a GELU feed-forward, each with a residual.

    Dropout acts on the feed-forward path only; the attention output is added
    unchanged.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.norm1 = nn.LayerNorm(cfg.d_model, dtype=DTYPE)
        self.attn = AttentionLayer(cfg.d_model, cfg.num_heads, cfg.num_frames,
                                   cfg.num_latent, cfg.c_lat)
        self.norm2 = nn.LayerNorm(cfg.d_model, dtype=DTYPE)
        self.ff1 = nn.Linear(cfg.d_model, cfg.ffn_dim, dtype=DTYPE)
        self.ff2 = nn.Linear(cfg.ffn_dim, cfg.d_model, dtype=DTYPE)
        self.drop = nn.Dropout(cfg.dropout)
        _init_linear(self.ff1)
        _init_linear(self.ff2)

    def forward(self, x, mask, mode, solver, gumbel, noise, key):
        a, state, diag = self.attn(self.norm1(x), mask, mode, solver, gumbel, noise, key)
        x = x + a
        x = x + self.drop(self.ff2(self.drop(F.gelu(self.ff1(self.norm2(x))))))
        return x, state, diag


def _init_linear(lin: nn.Linear) -> None:
    nn.init.normal_(lin.weight, 0.0, 1.0 / math.sqrt(lin.in_features))
    nn.init.zeros_(lin.bias)


class BMClassifier(nn.Module):
    def __init__(self, cfg: ModelConfig | None = None):
        super().__init__()
        cfg = cfg or ModelConfig()
        self.cfg = cfg
        d = cfg.d_model
        self.embedding = nn.Embedding(cfg.vocab_size, d, dtype=DTYPE)
        nn.init.normal_(self.embedding.weight, 0.0, 1.0 / math.sqrt(d))
        self.conv = nn.Conv1d(d, d, cfg.kernel, stride=cfg.stride,
                              padding=max(0, math.ceil((cfg.kernel - cfg.stride) / 2)), dtype=DTYPE)
        nn.init.normal_(self.conv.weight, 0.0, 1.0 / math.sqrt(d * cfg.kernel))
        nn.init.zeros_(self.conv.bias)
        self.pos = nn.Parameter(torch.randn(cfg.num_frames, d, dtype=DTYPE) / math.sqrt(d))
        self.drop = nn.Dropout(cfg.dropout)
        self.blocks = nn.ModuleList(EncoderBlock(cfg) for _ in range(cfg.num_layers))
        self.head_norm = nn.LayerNorm(d, dtype=DTYPE)
        self.head1 = nn.Linear(d, d // 2, dtype=DTYPE)
        self.head2 = nn.Linear(d // 2, 1, dtype=DTYPE)
        _init_linear(self.head1)
        _init_linear(self.head2)

    # -- stages ---------------------------------------------------------
    def embed_and_conv(self, tokens, mask):
        tokens = torch.as_tensor(np.asarray(tokens), dtype=torch.long)
        mask = torch.as_tensor(np.asarray(mask), dtype=torch.bool)
        if tokens.numel() and (int(tokens.max()) >= self.cfg.vocab_size or int(tokens.min()) < 0):
            raise ValueError("invalid token")
        L = tokens.shape[-1]
        if L % self.cfg.stride:
            raise ValueError(f"sequence length {L} is not divisible by stride {self.cfg.stride}")
        x = self.embedding(tokens) * mask[..., None].to(DTYPE)
        x = F.gelu(self.conv(x.transpose(-1, -2))).transpose(-1, -2)
        n = L // self.cfg.stride
        coarse = mask.reshape(*mask.shape[:-1], n, self.cfg.stride).any(dim=-1)
        x = x[..., :n, :] * coarse[..., None].to(DTYPE)
        return x, coarse

    def encoder_forward(self, features, coarse_mask, mode=None, gumbel=None, noise=None):
        mode = mode or self.cfg.mode
        n = features.shape[-2]
        x = self.drop(features + self.pos[:n])
        states, diags = [], []
        for i, block in enumerate(self.blocks):
            x, state, diag = block(x, coarse_mask, mode, self.cfg.solver, gumbel, noise, i)
            states.append(state)
            diags.append(diag)
        return x, states, diags

    def pool_and_classify(self, hidden, coarse_mask):
        m = torch.as_tensor(coarse_mask, dtype=torch.bool)
        counts = m.sum(dim=-1, keepdim=True)
        if bool((counts == 0).any()):
            raise ValueError("cannot pool a sequence with no valid frames")
        pooled = (hidden * m[..., None].to(DTYPE)).sum(dim=-2) / counts.to(DTYPE)
        return self.head2(F.gelu(self.head1(self.head_norm(pooled))))[..., 0]

    def _trim(self, tokens, mask):
        mask = np.asarray(mask, dtype=bool)
        cols = np.flatnonzero(mask.reshape(-1, mask.shape[-1]).any(axis=0))
        if cols.size == 0:
            return tokens, mask
        st = self.cfg.stride
        end = (int(cols[-1]) // st + 1) * st
        return np.asarray(tokens)[..., :end], mask[..., :end]

    def forward(self, tokens, mask, mode=None, gumbel: GumbelConfig | None = None,
                noise: NoiseSource | None = None, trim: bool = True):
        """Logit per sequence plus per-layer structures and diagnostics.

        With ``trim`` the trailing frames that are padding for every sequence in
        the batch are dropped before the encoder; masking makes this exact.
        """
        if trim:
            tokens, mask = self._trim(tokens, mask)
        feats, coarse = self.embed_and_conv(tokens, mask)
        hidden, states, diags = self.encoder_forward(feats, coarse, mode, gumbel, noise)
        logit = self.pool_and_classify(hidden, coarse)
        return logit, states, {"layers": diags, "coarse_mask": coarse}


def save_checkpoint(path, model: BMClassifier, extra: dict | None = None) -> None:
    """``.npz`` file: one array per parameter plus a JSON header with the format version."""
    header = {"format_version": CHECKPOINT_FORMAT, "model_config": model.cfg.to_dict(),
              "extra": extra or {}}
    arrays = {name: p.detach().cpu().numpy() for name, p in model.state_dict().items()}
    arrays["__header__"] = np.frombuffer(json.dumps(header).encode("utf-8"), dtype=np.uint8)
    path = Path(path)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> tuple[BMClassifier, dict]:
    with np.load(path) as data:
        header = json.loads(bytes(data["__header__"]).decode("utf-8"))
        if header.get("format_version") != CHECKPOINT_FORMAT:
            raise ValueError(f"unsupported checkpoint format {header.get('format_version')!r}")
        model = BMClassifier(ModelConfig(**header["model_config"]))
        state = {k: torch.as_tensor(data[k]) for k in data.files if k != "__header__"}
    missing = set(model.state_dict()) - set(state)
    if missing:
        raise ValueError(f"checkpoint is missing parameters: {sorted(missing)}")
    model.load_state_dict(state)
    return model, header.get("extra", {})

