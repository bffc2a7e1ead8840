import json

import pytest

from bigge.cli import main
from bigge.config import ConfigError, RunConfig, load_config, parse_config
from bigge.graph import read_graphs

CONFIG = """
seed = 4
model = "bigg-e"

[dataset]
kind = "lobster"
count = 20
[dataset.params]
backbone_range = [3, 6]

[cells]
hidden = 8
wt_hidden = 4

[optimizer]
plateau_epoch_wt = 1

[train]
epochs = 2
batch_size = 8

[eval]
count = 4
structure = "lobster"

[gradcheck]
n = 4
hidden = 3
wt_hidden = 2
coords = 4

[bench]
bigg_sizes = [16, 32]
adj_sizes = [8, 16]
repeats = 1
rounds = 1
hidden = 4
wt_hidden = 2
adj_hidden = 4
"""


@pytest.fixture
def cfg(tmp_path):
    p = tmp_path / "run.toml"
    p.write_text(CONFIG)
    return p


def run(capsys, *args):
    code = main([str(a) for a in args])
    out, err = capsys.readouterr()
    return code, out, err


def test_defaults_mirror_training_hyperparameters():
    c = RunConfig()
    assert c.optimizer.lr == 1e-3 and c.optimizer.lr_plateau == 1e-5
    assert (c.optimizer.weight_decay_topo, c.optimizer.weight_decay_wt) == (1e-4, 1e-3)
    assert (c.optimizer.lam_w, c.optimizer.lam_w_plateau) == (0.1, 0.01)
    assert load_config(None) == c


def test_config_parsing(cfg):
    c = load_config(cfg)
    assert c.seed == 4 and c.cells == {"hidden": 8, "wt_hidden": 4}
    assert c.optimizer.epochs == 2 and c.optimizer.plateau_epoch_wt == 1
    assert c.bench.bigg_sizes == (16, 32)


@pytest.mark.parametrize(
    "doc",
    [
        {"colour": 1},
        {"model": "gan"},
        {"precision": 16},
        {"seed": -1},
        {"dataset": {"kind": "grid"}},
        {"dataset": {"sizes": 3}},
        {"optimizer": {"epochs": 3}},
        {"eval": {"kinds": ["orbits"]}},
        {"train": {"lr": 1.0}},
    ],
)
def test_config_errors(doc):
    with pytest.raises(ConfigError):
        parse_config(doc)


def test_pipeline(tmp_path, cfg, capsys):
    data, r1, r2 = tmp_path / "data", tmp_path / "r1", tmp_path / "r2"
    assert run(capsys, "generate", "--config", cfg, "--out", data)[0] == 0
    train, test = read_graphs(data / "train.jsonl"), read_graphs(data / "test.jsonl")
    assert (len(train), len(test)) == (16, 4)
    assert not set(train) & set(test)

    assert run(capsys, "train", "--config", cfg, "--out", r1)[0] == 0
    assert run(capsys, "train", "--config", cfg, "--out", r2)[0] == 0
    assert (r1 / "metrics.jsonl").read_bytes() == (r2 / "metrics.jsonl").read_bytes()
    assert (r1 / "training.png").stat().st_size > 0

    code, out, _ = run(capsys, "sample", "--config", cfg, "--out", r1, "--checkpoint", r1 / "model.ckpt")
    assert code == 0 and json.loads(out)["count"] == 4
    assert len(read_graphs(r1 / "samples.jsonl")) == 4
    run(capsys, "sample", "--config", cfg, "--out", r2, "--checkpoint", r1 / "model.ckpt")
    assert (r1 / "samples.jsonl").read_bytes() == (r2 / "samples.jsonl").read_bytes()

    code, out, _ = run(capsys, "eval", "--config", cfg, "--out", r1, "--generated", data / "test.jsonl",
                       "--test", data / "test.jsonl")
    assert code == 0
    report = json.loads((r1 / "report.json").read_text())
    assert all(v == 0.0 for k, v in report["mmd"].items() if k != "orbit")
    assert (r1 / "report.csv").read_text().startswith("dataset,model,metric,value,n_generated,n_test")
    assert (r1 / "eval.png").exists()


def test_resume_via_cli(tmp_path, cfg, capsys):
    five = cfg.read_text().replace("epochs = 2", "epochs = 4")
    (tmp_path / "four.toml").write_text(five)
    assert run(capsys, "train", "--config", tmp_path / "four.toml", "--out", tmp_path / "full")[0] == 0
    assert run(capsys, "train", "--config", cfg, "--out", tmp_path / "part")[0] == 0
    code, out, _ = run(capsys, "train", "--config", tmp_path / "four.toml", "--out", tmp_path / "part",
                       "--checkpoint", tmp_path / "part" / "model.ckpt")
    assert code == 0
    a = (tmp_path / "full" / "metrics.jsonl").read_bytes()
    b = (tmp_path / "part" / "metrics.jsonl").read_bytes()
    assert a == b


def test_baseline_train_and_sample(tmp_path, cfg, capsys):
    text = cfg.read_text().replace('model = "bigg-e"', 'model = "er-baseline"')
    (tmp_path / "er.toml").write_text(text)
    assert run(capsys, "train", "--config", tmp_path / "er.toml", "--out", tmp_path)[0] == 0
    code, _, _ = run(capsys, "sample", "--config", tmp_path / "er.toml", "--out", tmp_path,
                     "--checkpoint", tmp_path / "model.ckpt", "--count", 7)
    assert code == 0 and len(read_graphs(tmp_path / "samples.jsonl")) == 7


def test_gradcheck_command(tmp_path, cfg, capsys):
    code, out, _ = run(capsys, "gradcheck", "--config", cfg, "--out", tmp_path)
    assert code == 0 and json.loads(out)["passed"]


def test_gradcheck_failure_exit_code(tmp_path, cfg, capsys):
    strict = cfg.read_text().replace("coords = 4", "coords = 4\ntolerance = 0.0")
    (tmp_path / "strict.toml").write_text(strict)
    code, _, err = run(capsys, "gradcheck", "--config", tmp_path / "strict.toml", "--out", tmp_path)
    assert code == 3 and json.loads(err)["error"] == "numerical"


def test_bench_command(tmp_path, cfg, capsys):
    code, out, _ = run(capsys, "bench", "--config", cfg, "--out", tmp_path, "--precision", "32")
    assert code == 0
    result = json.loads(out)
    assert {r["model"] for r in result["rows"]} == {"bigg-e", "adj-lstm"}
    assert all(r["peak_rss_mb"] > 0 for r in result["rows"])
    assert (tmp_path / "bench.csv").exists() and (tmp_path / "bench.png").exists()


def test_error_codes(tmp_path, cfg, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("model = 'gan'\n")
    code, _, err = run(capsys, "train", "--config", bad)
    assert code == 2 and json.loads(err) == {"error": "config", "message": json.loads(err)["message"], "exit_code": 2}
    bad.write_text("this is [ not toml")
    assert run(capsys, "train", "--config", bad)[0] == 2
    assert run(capsys, "train", "--config", tmp_path / "missing.toml")[0] == 4
    junk = tmp_path / "junk.ckpt"
    junk.write_bytes(b"nope")
    assert run(capsys, "sample", "--config", cfg, "--checkpoint", junk, "--out", tmp_path)[0] == 4
    assert run(capsys, "sample", "--config", cfg, "--out", tmp_path)[0] == 2
    assert run(capsys, "eval", "--config", cfg, "--out", tmp_path, "--generated", tmp_path / "x.jsonl",
               "--test", tmp_path / "y.jsonl")[0] == 4
    paths = cfg.read_text() + '\n[paths]\ntrain = "' + str(tmp_path / "nothing.jsonl") + '"\n'
    (tmp_path / "paths.toml").write_text(paths)
    assert run(capsys, "train", "--config", tmp_path / "paths.toml", "--out", tmp_path)[0] == 4


def test_bench_keeps_best_time_per_cell(monkeypatch):
    import bigge.bench as bench

    times = iter([2.0, 1.0, 1.5, 4.0, 3.0, 9.0])

    def fake_cell(kind, n, dims, repeats, seed, precision, train=True):
        return {"model": kind, "n": n, "sample_s": next(times), "train_step_s": 1.0, "peak_rss_mb": float(n)}

    monkeypatch.setattr(bench, "run_cell", fake_cell)
    res = bench.run_bench([8], [4, 16], {}, {}, rounds=2)
    # round one visits (bigg 8, adj 4, adj 16), round two repeats the order
    assert [r["sample_s"] for r in res["rows"]] == [2.0, 1.0, 1.5]
    assert res["ratios"]["adj-lstm"]["sample_time_ratio"] == 1.5
    assert "bigg-e" not in res["ratios"]
