"""Command-line entry point: train, eval, gradcheck, oracle-verify, inspect."""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import torch

from .data import SynthSpec, encode_batch, load_tsv, synth_generate
from .meanfield import SolverConfig
from .model import BMClassifier, ModelConfig, load_checkpoint
from .structure import DEFAULT_TOP_FRACTION, export_structure
from .training import TrainConfig, Trainer, evaluate, set_seed
from .verify import gradient_check, oracle_suite

SEED_ENV = "BOLTZGATE_SEED"
_MODEL_KEYS = {f.name for f in dataclasses.fields(ModelConfig)} - {"solver", "vocab_size"}
_TRAIN_KEYS = {f.name for f in dataclasses.fields(TrainConfig)}


@dataclass
class RunConfig:
    """Flat view of model, training and data settings.

    ``max_len`` left unset means 500 for TSV data and the synthetic length for
    ``data = "synth"``; the short synthetic sequences also default to stride 1.
    Validation falls back to a seeded split of the training data at
    ``val_fraction``; a fraction of 0 disables validation.
    """

    data: str | None = None
    val: str | None = None
    out: str = "runs/latest"
    threads: int | None = None
    max_len: int | None = None
    mf_iters: int = 3
    mf_damping: float = 0.5
    # synthetic planted-motif task
    synth_train: int = 2000
    synth_test: int = 500
    synth_length: int = 25
    synth_motifs: list = field(default_factory=lambda: ["TATAAAAG", "CACGTGAC", "GGGCGGCC"])
    synth_noise: float = 0.05
    synth_seed: int = 0
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        own = {f.name for f in dataclasses.fields(cls)} - {"model", "train"}
        kw, model, train = {}, {}, {}
        for key, value in raw.items():
            if key in own:
                kw[key] = value
            elif key in _MODEL_KEYS:
                model[key] = value
            elif key in _TRAIN_KEYS:
                train[key] = value
            else:
                raise ValueError(f"unknown config key {key!r}")
        cfg = cls(**kw, model=model, train=train)
        cfg.model_config()
        cfg.train_config()
        cfg.synth_spec()
        return cfg

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)
               if f.name not in ("model", "train")}
        out.update(self.model)
        out.update(self.train)
        return out

    @property
    def is_synth(self) -> bool:
        return self.data == "synth"

    def model_config(self) -> ModelConfig:
        max_len = self.max_len or (self.synth_length if self.is_synth else 500)
        solver = SolverConfig(iterations=self.mf_iters, damping=self.mf_damping, record_trace=False)
        kw = dict(self.model)
        if self.is_synth and self.max_len is None and "stride" not in kw:
            kw["stride"] = 1
        return ModelConfig(max_len=max_len, solver=solver, **kw)

    def train_config(self) -> TrainConfig:
        return TrainConfig(**self.train)

    def synth_spec(self) -> SynthSpec:
        if len(self.synth_motifs) != 3:
            raise ValueError("synth_motifs needs exactly three motifs")
        a, b, c = self.synth_motifs
        return SynthSpec(length=self.synth_length, motif_a=a, motif_b=b, motif_c=c,
                         noise=self.synth_noise, seed=self.synth_seed)

    def synth_split(self):
        recs = synth_generate(self.synth_spec(), self.synth_train + self.synth_test)
        return recs[: self.synth_train], recs[self.synth_train:]


# -- argument handling ------------------------------------------------------

_FLAG_KEYS = {
    "data": "data", "val": "val", "out": "out", "threads": "threads", "mode": "mode",
    "epochs": "epochs", "batch": "batch_size", "lr": "lr", "seed": "seed",
    "margin": "margin", "lambda_max": "lambda_max", "kernel": "kernel", "stride": "stride",
    "mf_iters": "mf_iters", "neg": "neg_mode", "rho": "rho",
}


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--data", help="TSV dataset path, or 'synth' for the planted-motif task")
    p.add_argument("--val", help="validation TSV (default: split from the training data)")
    p.add_argument("--mode", choices=["softmax", "bm_soft", "bm_hard"])
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int, help=f"global seed (fallback: ${SEED_ENV}, then 0)")
    p.add_argument("--threads", type=int)
    p.add_argument("--out")
    p.add_argument("--margin", type=float)
    p.add_argument("--lambda-max", dest="lambda_max", type=float)
    p.add_argument("--kernel", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--mf-iters", dest="mf_iters", type=int)
    p.add_argument("--neg", choices=["perturb", "anneal"])
    p.add_argument("--rho", type=float)


def resolve_config(args: argparse.Namespace) -> RunConfig:
    raw: dict = {}
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as fh:
            raw = json.load(fh)
        if not isinstance(raw, dict):
            raise ValueError("config file must hold a JSON object")
    if "seed" not in raw and os.environ.get(SEED_ENV):
        raw["seed"] = int(os.environ[SEED_ENV])
    for flag, key in _FLAG_KEYS.items():
        value = getattr(args, flag, None)
        if value is not None:
            raw[key] = value
    return RunConfig.from_dict(raw)


def _load(path: str | None, cfg: RunConfig, flag: str):
    if path is None:
        raise ValueError(f"missing dataset: pass --{flag} PATH or --{flag} synth")
    if path == "synth":
        return cfg.synth_split()
    return load_tsv(path), None


def _setup(cfg: RunConfig) -> None:
    if cfg.threads:
        torch.set_num_threads(cfg.threads)
    set_seed(cfg.train_config().seed)


# -- commands ---------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = resolve_config(args)
    _setup(cfg)
    train, test = _load(cfg.data, cfg, "data")
    val = load_tsv(cfg.val) if cfg.val else None
    tcfg = cfg.train_config()
    if val is None and tcfg.val_fraction == 0:
        val = []
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")
    model = BMClassifier(cfg.model_config())
    trainer = Trainer(model, tcfg, train, val)
    history = trainer.fit(out_dir=out)
    summary = {"epochs": len(history), "train_acc": history[-1].train_acc,
               "val_acc": history[-1].val_acc}
    if test:
        summary["test_loss"], summary["test_acc"] = evaluate(model, test, tcfg.batch_size)
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(json.dumps(summary))
    return 0


def cmd_eval(args) -> int:
    cfg = resolve_config(args)
    _setup(cfg)
    model, _ = load_checkpoint(args.checkpoint)
    data, test = _load(cfg.data, cfg, "data")
    if test is not None:
        data = test
    batch = encode_batch(data, model.cfg.max_len)
    loss, acc = evaluate(model, batch)
    result = {"loss": loss, "accuracy": acc, "n": len(batch)}
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "eval.json").write_text(json.dumps(result) + "\n")
    print(json.dumps(result))
    return 0


def cmd_gradcheck(args) -> int:
    report = gradient_check(seed=args.seed, corrupt=args.corrupt)
    for name, err in report.errors.items():
        status = "ok" if err <= report.tolerance else "FAIL"
        print(f"{name:40s} {err:.3e}  {status}")
    print(f"max relative error {report.max_error:.3e} (tolerance {report.tolerance:.0e}); "
          f"energy hinge {report.energy:.4f}")
    print("PASS" if report.passed else "FAIL")
    return 0 if report.passed else 1


def cmd_oracle_verify(args) -> int:
    checks = oracle_suite(seed=args.seed, inject_violation=args.inject_violation)
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name}: {c.detail} ({len(c.values)} instances)")
        if args.verbose:
            for i, v in enumerate(c.values):
                print(f"    {i:4d} {v:.3e}")
    ok = all(c.passed for c in checks)
    print("PASS" if ok else "FAIL")
    return 0 if ok else 1


def cmd_inspect(args) -> int:
    cfg = resolve_config(args)
    _setup(cfg)
    model, _ = load_checkpoint(args.checkpoint)
    data, _ = _load(cfg.data, cfg, "data")
    export = export_structure(model, encode_batch(data, model.cfg.max_len),
                              fraction=args.top_fraction)
    path = export.write(cfg.out)
    print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="boltzgate", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a classifier")
    _add_run_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="accuracy and loss of a checkpoint")
    p.add_argument("checkpoint")
    _add_run_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="tape vs finite-difference gradients on a tiny model")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--corrupt", action="store_true", help="perturb the tape gradient (negative control)")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("oracle-verify", help="mean-field solver against exact enumeration")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--inject-violation", action="store_true",
                   help="lower the free energy by 1 (negative control)")
    p.set_defaults(func=cmd_oracle_verify)

    p = sub.add_parser("inspect", help="export latent usage, couplings and hyperedges")
    p.add_argument("checkpoint")
    p.add_argument("--top-fraction", type=float, default=DEFAULT_TOP_FRACTION)
    _add_run_flags(p)
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.command in ("gradcheck", "oracle-verify") and args.seed is None:
        args.seed = int(os.environ.get(SEED_ENV, 0))
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"boltzgate {args.command}: error: {exc}", file=sys.stderr)
        return 2
