"""DNA sequence encoding, TSV loading and a planted-motif synthetic task."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ALPHABET = "ACGTN"
PAD_ID = 5
VOCAB_SIZE = 6
MAX_LEN = 500

_LOOKUP = np.full(256, 4, dtype=np.int64)
for _i, _c in enumerate(ALPHABET):
    _LOOKUP[ord(_c)] = _i
    _LOOKUP[ord(_c.lower())] = _i


@dataclass(frozen=True)
class SequenceRecord:
    seq: str
    label: int

    def __post_init__(self):
        if not self.seq:
            raise ValueError("empty sequence")
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label!r}")


@dataclass
class EncodedBatch:
    tokens: np.ndarray   # [B, L] int64, PAD_ID beyond each sequence
    mask: np.ndarray     # [B, L] bool, True on real tokens
    labels: np.ndarray   # [B] float64

    def __len__(self):
        return self.tokens.shape[0]


def encode(seq: str) -> np.ndarray:
    """A/C/G/T/N -> 0..4, case-insensitive; anything else is read as N."""
    if not seq:
        raise ValueError("cannot encode an empty sequence")
    raw = np.frombuffer(seq.encode("utf-8", errors="replace"), dtype=np.uint8)
    if raw.size != len(seq):
        # multibyte characters: fall back to per-character lookup
        return np.array([_LOOKUP[ord(c)] if ord(c) < 256 else 4 for c in seq], dtype=np.int64)
    return _LOOKUP[raw]


def decode(tokens) -> str:
    return "".join(ALPHABET[int(t)] for t in tokens if int(t) != PAD_ID)


def pad_or_truncate(tokens, target: int = MAX_LEN) -> tuple[np.ndarray, np.ndarray]:
    tokens = np.asarray(tokens, dtype=np.int64)[:target]
    out = np.full(target, PAD_ID, dtype=np.int64)
    out[: tokens.size] = tokens
    mask = np.zeros(target, dtype=bool)
    mask[: tokens.size] = True
    return out, mask


def encode_batch(records, target: int = MAX_LEN) -> EncodedBatch:
    records = list(records)
    if not records:
        raise ValueError("empty dataset")
    toks = np.empty((len(records), target), dtype=np.int64)
    mask = np.empty((len(records), target), dtype=bool)
    for i, rec in enumerate(records):
        toks[i], mask[i] = pad_or_truncate(encode(rec.seq), target)
    labels = np.array([rec.label for rec in records], dtype=np.float64)
    return EncodedBatch(toks, mask, labels)


def load_tsv(path) -> list[SequenceRecord]:
    """Read ``SEQ<TAB>LABEL`` lines; blank lines are skipped."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"dataset not found: {path}")
    records = []
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected 'SEQ<TAB>LABEL'")
            seq, label = parts[0].strip(), parts[1].strip()
            if label not in ("0", "1"):
                raise ValueError(f"{path}:{lineno}: label must be 0 or 1, got {label!r}")
            if not seq:
                raise ValueError(f"{path}:{lineno}: empty sequence")
            records.append(SequenceRecord(seq, int(label)))
    return records


def write_tsv(records, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(f"{rec.seq}\t{rec.label}\n")


@dataclass
class SynthSpec:
    """Planted-motif task with label ``(A and B) or C``.

    A latent coin picks the class first. Positives carry either both A and B
    or C alone; negatives carry nothing, A alone, or B alone. The label is then
    recomputed from the sequence itself, so background hits count, and flipped
    with probability ``noise``.
    """

    length: int = 100
    motif_a: str = "TATAAA"
    motif_b: str = "CACGTG"
    motif_c: str = "GGGCGG"
    background: tuple[float, float, float, float] = (0.25, 0.25, 0.25, 0.25)
    noise: float = 0.0
    seed: int = 0
    motifs: tuple[str, ...] = field(init=False, repr=False)

    def __post_init__(self):
        self.motifs = (self.motif_a, self.motif_b, self.motif_c)
        for m in self.motifs:
            if len(m) >= self.length:
                raise ValueError(f"motif {m!r} is not shorter than the sequence length {self.length}")
        if not 0.0 <= self.noise <= 1.0:
            raise ValueError("noise must lie in [0, 1]")


def motif_presence(seq: str, spec: SynthSpec) -> tuple[bool, bool, bool]:
    s = seq.upper()
    return tuple(m in s for m in spec.motifs)  # type: ignore[return-value]


def rule_label(seq: str, spec: SynthSpec) -> int:
    a, b, c = motif_presence(seq, spec)
    return int((a and b) or c)


def _plant(arr: np.ndarray, motif: str, rng: np.random.Generator, taken: list) -> None:
    L, k = arr.size, len(motif)
    for _ in range(100):
        start = int(rng.integers(0, L - k + 1))
        if all(start + k <= a or b <= start for a, b in taken):
            break
    arr[start:start + k] = [ALPHABET.index(c) for c in motif]
    taken.append((start, start + k))


def synth_generate(spec: SynthSpec, n: int) -> list[SequenceRecord]:
    rng = np.random.default_rng(spec.seed)
    records = []
    for _ in range(n):
        arr = rng.choice(4, size=spec.length, p=np.asarray(spec.background, dtype=float))
        taken: list = []
        if rng.random() < 0.5:
            planted = (0, 1) if rng.random() < 0.5 else (2,)
        else:
            planted = ((), (0,), (1,))[int(rng.integers(0, 3))]
        for j in planted:
            _plant(arr, spec.motifs[j], rng, taken)
        seq = "".join(ALPHABET[i] for i in arr)
        label = rule_label(seq, spec)
        if rng.random() < spec.noise:
            label = 1 - label
        records.append(SequenceRecord(seq, label))
    return records


def split_records(records, fraction: float, seed: int):
    """Seeded split; returns ``(rest, held_out)`` with ``round(fraction·n)`` held out."""
    records = list(records)
    idx = np.random.default_rng(seed).permutation(len(records))
    k = int(round(fraction * len(records)))
    held = [records[i] for i in idx[:k]]
    rest = [records[i] for i in idx[k:]]
    return rest, held
