import json

import numpy as np
import pytest

from boltzgate.cli import RunConfig, main
from boltzgate.data import SynthSpec, synth_generate, write_tsv
from boltzgate.model import BMClassifier, ModelConfig, save_checkpoint
from boltzgate.structure import strongest_hyperedges, strongest_pair_edges, top_count

TINY = {"d_model": 8, "num_heads": 2, "num_layers": 1, "ffn_dim": 16, "num_latent": 2,
        "synth_train": 48, "synth_test": 16, "synth_length": 20,
        "synth_motifs": ["TATA", "CACG", "GGGC"], "batch_size": 16, "epochs": 1, "mf_iters": 2}


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(TINY))
    return str(path)


def run(*argv):
    return main([str(a) for a in argv])


def test_config_round_trip():
    cfg = RunConfig.from_dict(dict(TINY, mode="softmax", lr=1e-3))
    assert cfg.to_dict() == RunConfig.from_dict(cfg.to_dict()).to_dict()
    assert cfg.model_config().mode == "softmax" and cfg.train_config().lr == 1e-3


def test_unknown_key_rejected(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"learning_rate": 0.1}))
    assert run("train", "--config", path, "--data", "synth") != 0
    assert "learning_rate" in capsys.readouterr().err


def test_missing_data_names_flag(capsys, config, tmp_path):
    assert run("train", "--config", config, "--out", tmp_path / "r") != 0
    assert "--data" in capsys.readouterr().err
    assert run("train", "--config", config, "--data", tmp_path / "none.tsv") != 0


def test_flags_override_config(config, monkeypatch):
    from boltzgate.cli import build_parser, resolve_config
    args = build_parser().parse_args(["train", "--config", config, "--epochs", "3", "--lambda-max", "0.2",
                                      "--neg", "anneal", "--mf-iters", "5"])
    cfg = resolve_config(args)
    assert cfg.train_config().epochs == 3 and cfg.train_config().lambda_max == 0.2
    assert cfg.train_config().neg_mode == "anneal" and cfg.model_config().solver.iterations == 5


def test_seed_fallback(config, monkeypatch):
    from boltzgate.cli import build_parser, resolve_config
    monkeypatch.setenv("BOLTZGATE_SEED", "17")
    parse = build_parser().parse_args
    assert resolve_config(parse(["train", "--config", config])).train_config().seed == 17
    assert resolve_config(parse(["train", "--config", config, "--seed", "3"])).train_config().seed == 3


def test_train_eval_inspect(tmp_path, config, capsys):
    out = tmp_path / "run"
    assert run("train", "--config", config, "--data", "synth", "--mode", "bm_soft", "--out", out) == 0
    lines = (out / "metrics.jsonl").read_text().splitlines()
    assert len(lines) == 1 and json.loads(lines[0])["epoch"] == 1
    assert (out / "best.npz").exists() and json.loads((out / "config.json").read_text())["epochs"] == 1
    capsys.readouterr()

    results = []
    for _ in range(2):
        assert run("eval", out / "best.npz", "--config", config, "--data", "synth") == 0
        results.append(json.loads(capsys.readouterr().out))
    assert results[0] == results[1] and results[0]["n"] == 16

    exp = tmp_path / "exp"
    assert run("inspect", out / "best.npz", "--config", config, "--data", "synth", "--out", exp) == 0
    manifest = json.loads((exp / "manifest.json").read_text())
    usage = np.loadtxt(exp / "latent_usage.csv", delimiter=",", ndmin=1)
    assert usage.shape == (2,) and np.isfinite(usage).all()
    assert np.loadtxt(exp / "pair_matrix.csv", delimiter=",").shape == (20, 20)
    assert np.loadtxt(exp / "module_position.csv", delimiter=",").shape == (2, 20)
    assert manifest["pair_matrix"]["shape"] == [20, 20]


def test_train_softmax_on_tsv(tmp_path, config):
    recs = synth_generate(SynthSpec(length=20, motif_a="TATA", motif_b="CACG", motif_c="GGGC"), 40)
    write_tsv(recs[:30], tmp_path / "train.tsv")
    write_tsv(recs[30:], tmp_path / "val.tsv")
    out = tmp_path / "run"
    code = run("train", "--config", config, "--data", tmp_path / "train.tsv", "--val", tmp_path / "val.tsv",
               "--mode", "softmax", "--out", out)
    assert code == 0
    assert not np.isnan(json.loads((out / "metrics.jsonl").read_text())["val_acc"])


def test_eval_perfect_and_empty(tmp_path, capsys):
    model = BMClassifier(ModelConfig(max_len=20, d_model=8, num_heads=2, num_layers=1, ffn_dim=8,
                                     num_latent=2, mode="softmax"))
    import torch
    with torch.no_grad():
        model.head2.weight.zero_()
        model.head2.bias.fill_(3.0)
    save_checkpoint(tmp_path / "m.npz", model)
    (tmp_path / "ones.tsv").write_text("ACGTACGT\t1\nTTTT\t1\n")
    assert run("eval", tmp_path / "m.npz", "--data", tmp_path / "ones.tsv") == 0
    assert json.loads(capsys.readouterr().out)["accuracy"] == 1.0
    (tmp_path / "empty.tsv").write_text("\n")
    assert run("eval", tmp_path / "m.npz", "--data", tmp_path / "empty.tsv") != 0
    assert "empty" in capsys.readouterr().err


def test_oracle_verify_and_negative_control(capsys):
    assert run("oracle-verify") == 0
    assert run("oracle-verify", "--inject-violation") == 1
    assert "FAIL  free-energy bound" in capsys.readouterr().out


def test_gradcheck_command(capsys):
    assert run("gradcheck") == 0
    assert capsys.readouterr().out.strip().endswith("PASS")


def test_untrained_export_is_zero():
    from boltzgate.data import encode_batch
    from boltzgate.structure import export_structure
    model = BMClassifier(ModelConfig(max_len=20, d_model=8, num_heads=2, num_layers=2, ffn_dim=8,
                                     num_latent=16, stride=1))
    recs = synth_generate(SynthSpec(length=20, motif_a="TATA", motif_b="CACG", motif_c="GGGC"), 8)
    exp = export_structure(model, encode_batch(recs, 20))
    assert exp.latent_usage.shape == (16,)
    assert np.abs(exp.pair_matrix).max() <= 1e-12
    assert np.all(exp.module_position == 0)
    assert exp.hyperedges == []


def test_edge_threshold_counts(rng):
    pair = rng.normal(size=(30, 30))
    pair = (pair + pair.T) / 2
    edges = strongest_pair_edges(pair, 0.005)
    k = top_count(30 * 29 // 2, 0.005)
    assert k == 3
    assert sum(w > 0 for _, _, w in edges) == k and sum(w < 0 for _, _, w in edges) == k
    iu = np.triu_indices(30, 1)
    assert max(w for *_, w in edges) == pair[iu].max()
    mp = rng.normal(size=(16, 100))
    hyper = strongest_hyperedges(mp, 0.005)
    assert len(hyper) == 8
    assert abs(hyper[0][2]) == np.abs(mp).max()
    with pytest.raises(ValueError):
        top_count(10, 0.0)
