import json
import subprocess
import sys

import numpy as np
import pytest

from simgat import io
from simgat.cli import main
from simgat.synthcity import desk_scenario

DESK = desk_scenario(7).to_json()


@pytest.fixture(scope="module")
def world(tmp_path_factory):
    """Desk scenario written by ``synth`` plus a short trained model."""
    d = tmp_path_factory.mktemp("world")
    io.write_json(d / "spec.json", DESK)
    io.write_json(d / "cfg.json", {"seed": 0, "epochs": 8, "hidden_dim": 4, "lstm_window": 3})
    assert main(["synth", "--spec", str(d / "spec.json"), "--out", str(d / "syn")]) == 0
    assert main(["train", "--city", str(d / "syn/city.json"), "--flows", str(d / "syn/flows.csv"),
                 "--config", str(d / "cfg.json"), "--out", str(d / "model.json"),
                 "--metrics", str(d / "metrics.json")]) == 0
    return d


def _tree(path):
    return sorted(str(p.relative_to(path)) for p in path.rglob("*"))


def test_gradcheck_subprocess_prints_a_passing_report():
    res = subprocess.run([sys.executable, "-m", "simgat", "gradcheck", "--seed", "1"],
                         capture_output=True, text=True, timeout=300)
    assert res.returncode == 0, res.stderr
    rep = json.loads(res.stdout)
    assert rep["passed"] and rep["max_rel_err"] < 1e-4


def test_unknown_flag_is_a_usage_error(capsys):
    assert main(["train", "--bogus"]) == 2
    assert "usage:" in capsys.readouterr().err
    assert main([]) == 2


def test_synth_writes_declared_files_and_manifest(world):
    assert _tree(world / "syn") == sorted([
        "attributes.csv", "city.json", "edges.csv", "env.csv", "flows.csv", "manifest.json",
        "neighborhoods.csv", "nodes.csv", "truth.json"])
    man = io.read_json(world / "syn/manifest.json")
    assert man["command"] == "synth" and man["seed"] == 7
    assert str(world / "spec.json") in man["inputs"]
    assert set(man["versions"]) == {"simgat", "python", "numpy"}


def test_train_metrics_and_eval_agree(world):
    m = io.read_json(world / "metrics.json")
    assert m["val_loss"] < m["baselines"]["intercept"]["val_loss"]
    assert (world / "model.manifest.json").exists()
    out = world / "eval.json"
    assert main(["eval", "--model", str(world / "model.json"), "--city", str(world / "syn/city.json"),
                 "--flows", str(world / "syn/flows.csv"), "--out", str(out)]) == 0
    assert io.read_json(out)["val_loss"] == pytest.approx(m["val_loss"], rel=1e-12)


def test_seed_is_required(world, capsys):
    io.write_json(world / "noseed.json", {"epochs": 1})
    code = main(["train", "--city", str(world / "syn/city.json"), "--flows", str(world / "syn/flows.csv"),
                 "--config", str(world / "noseed.json"), "--out", str(world / "x.json")])
    assert code == 1 and "no seed" in capsys.readouterr().err
    assert not (world / "x.json").exists()


def test_missing_input_exits_one_with_itemized_problem(tmp_path, capsys):
    code = main(["fit-huff", "--flows", str(tmp_path / "nope.csv"), "--city", str(tmp_path / "c.json"),
                 "--out", str(tmp_path / "h.json")])
    err = capsys.readouterr().err
    assert code == 1 and "  - input file not found" in err
    assert _tree(tmp_path) == []


def test_attribute_writes_only_into_its_output_dir(world):
    before = _tree(world)
    code = main(["attribute", "--model", str(world / "model.json"), "--city", str(world / "syn/city.json"),
                 "--dates", "normal=2019-01-05,storm=2019-01-06", "--group-by", "per_capita_income",
                 "--attributes", str(world / "syn/attributes.csv"), "--k", "2", "--out", str(world / "attr")])
    assert code == 0
    new = set(_tree(world)) - set(before)
    assert new == {"attr", "attr/attributions.csv", "attr/summaries.json", "attr/manifest.json"}
    s = io.read_json(world / "attr/summaries.json")
    assert set(s["scenarios"]) == {"normal", "storm"} and s["max_residual"] < 1e-9
    assert s["groups"]["storm"]["attribute"] == "per_capita_income"


def test_fit_gravity_and_huff(world):
    args = ["--city", str(world / "syn/city.json"), "--flows", str(world / "syn/flows.csv")]
    assert main(["fit-gravity", *args, "--out", str(world / "g.json")]) == 0
    g = io.read_json(world / "g.json")
    assert g["params"]["gamma"] > 0
    assert main(["fit-gravity", *args, "--fix", "alpha=1", "--out", str(world / "g2.json")]) == 0
    assert io.read_json(world / "g2.json")["params"]["alpha"] == 1.0
    assert main(["fit-gravity", *args, "--fix", "delta=1", "--out", str(world / "g3.json")]) == 1
    assert main(["fit-huff", *args, "--out", str(world / "h.json")]) == 0


def test_describe_stdout_only_writes_nothing(tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    assert main(["describe", "--h", "8", "--l", "10", "--k", "21", "--s", "12", "--modes", "2"]) == 0
    d = json.loads(capsys.readouterr().out)
    assert d["consistent"] and _tree(tmp_path) == []


def test_cluster_network_assemble_pipeline(world, tmp_path):
    rng = np.random.default_rng(0)
    codes = ["445110", "722511", "722513", "448140"]
    rows = []
    for c, (cx, cy) in enumerate([(600, 600), (2200, 700), (1500, 2300)]):
        for k in range(15):
            rows.append([f"p{c}-{k}", cx + rng.normal(0, 40), cy + rng.normal(0, 40), codes[(c + k) % 4], k % 3 == 0])
    io.write_csv(tmp_path / "pois.csv", ["id", "x", "y", "naics", "is_chain"], rows)
    io.write_json(tmp_path / "ctx.json", {"1": {"morphology": "mall", "bus_stop_count": 2}})
    assert main(["cluster", "--pois", str(tmp_path / "pois.csv"), "--eps", "200", "--min-pts", "5",
                 "--context", str(tmp_path / "ctx.json"), "--out", str(tmp_path / "clusters.json")]) == 0
    clusters = io.read_json(tmp_path / "clusters.json")["clusters"]
    assert len(clusters) == 3 and clusters[1]["morphology"] == "mall"
    syn = world / "syn"
    assert main(["network", "--nodes", str(syn / "nodes.csv"), "--edges", str(syn / "edges.csv"),
                 "--neighborhoods", str(syn / "neighborhoods.csv"), "--clusters", str(tmp_path / "clusters.json"),
                 "--out", str(tmp_path / "costs.json")]) == 0
    assert main(["assemble", "--clusters", str(tmp_path / "clusters.json"), "--neighborhoods", str(syn / "neighborhoods.csv"),
                 "--env", str(syn / "env.csv"), "--costs", str(tmp_path / "costs.json"), "--flows", str(syn / "flows.csv"),
                 "--out", str(tmp_path / "city.json")]) == 0
    city = io.read_city(tmp_path / "city.json")
    assert (city.n, city.m) == (3, 6) and len(city.dates) == 14
    for name in ("clusters", "costs", "city"):
        assert (tmp_path / f"{name}.manifest.json").exists()
