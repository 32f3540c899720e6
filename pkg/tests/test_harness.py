import filecmp
import json
import math
from pathlib import Path

import numpy as np
import pytest

from bbmdiff import cli, harness
from bbmdiff.config import ConfigError, ExperimentConfig
from bbmdiff.io import read_table, write_columns, write_json, write_table
from bbmdiff.parallel import pmap

from conftest import CONFIGS


def data_files(d: Path):
    return sorted(p.name for p in d.iterdir() if p.is_file() and p.name not in ("manifest.json", "config.json"))


def test_sigma_rejection_names_precondition():
    cfg = ExperimentConfig(kind="simulate-bbm", t=2.0, sigma=1.5)
    with pytest.raises(ConfigError, match=r"sigma outside \(0,1\)"):
        cfg.validate()


@pytest.mark.parametrize("kwargs,field", [
    (dict(kind="nope"), "kind"),
    (dict(kind="simulate-tree", t=-1.0), "t"),
    (dict(kind="simulate-tree", t=1.0, law={"2": 0.5, "3": 0.5}), "law"),
    (dict(kind="extremes", t=8.0, N=100), "N"),
    (dict(kind="converge", ladder=[[2, 7], [3, 10]]), "ladder"),
    (dict(kind="converge", ladder=[[2, 6], [3, 10], [4, 13]]), "ladder"),
    (dict(kind="sample-path", t=10.0, r=3, lattice=True, walk_r=64), "walk_r"),
    (dict(kind="build-measure", t=4.0, r=5.0), "r"),
    (dict(kind="revuz"), "atoms"),
    (dict(kind="simulate-tree", t=1.0, x0=0.3), "x0"),
])
def test_invalid_configs(kwargs, field):
    probs = ExperimentConfig(**kwargs).problems()
    assert field in [k for k, _ in probs]


def test_config_roundtrip_and_hash(tmp_path):
    cfg = ExperimentConfig.load(CONFIGS / "converge.json")
    back = ExperimentConfig.from_json(cfg.to_json())
    assert back == cfg
    moved = ExperimentConfig.from_dict({**cfg.to_dict(), "out": str(tmp_path), "threads": 3})
    assert moved.config_hash() == cfg.config_hash()
    reseeded = ExperimentConfig.from_dict({**cfg.to_dict(), "seed": 2})
    assert reseeded.config_hash() != cfg.config_hash()
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"kind": "revuz", "colour": 1})


def test_shipped_configs_validate():
    for p in CONFIGS.glob("*.json"):
        ExperimentConfig.load(p).validate()


def test_table_roundtrip(tmp_path):
    x = np.array([0.1, 1 / 3, math.pi])
    write_columns(tmp_path / "a.csv", {"i": np.arange(3), "x": x}, seed=4, note="hello")
    meta, cols, rows = read_table(tmp_path / "a.csv")
    assert meta == {"note": "hello", "seed": "4"}
    assert cols == ["i", "x"]
    assert np.array_equal([float(r[1]) for r in rows], x)
    write_table(tmp_path / "b.csv", ["flag"], [(True,), (False,)])
    assert read_table(tmp_path / "b.csv")[2] == [["1"], ["0"]]


def test_json_is_strict(tmp_path):
    write_json(tmp_path / "a.json", {"a": float("nan"), "b": np.arange(2), "c": np.float64(1.5)})
    assert json.loads((tmp_path / "a.json").read_text()) == {"a": None, "b": [0, 1], "c": 1.5}


def _square(x):
    return x * x


def test_pmap_is_order_preserving():
    assert pmap(_square, range(7)) == [x * x for x in range(7)]
    assert pmap(_square, range(7), threads=2, chunksize=2) == [x * x for x in range(7)]


@pytest.mark.parametrize("kind,extra", [
    ("simulate-tree", {"t": 2.0, "N": 3}),
    ("simulate-bbm", {"t": 2.0, "N": 3}),
    ("build-measure", {"t": 3.0, "r": 1.0, "N": 3}),
    ("build-pcaf", {"t": 3.0, "r": 1.0, "N": 3, "walk_r": 16, "S": 1.0}),
    ("sample-path", {"t": 5.0, "r": 4, "lattice": True, "N": 3, "walk_r": 16, "S": 2.0}),
])
def test_runs_are_deterministic(tmp_path, kind, extra):
    outs = []
    for name in ("a", "b"):
        cfg = ExperimentConfig(kind=kind, seed=11, out=str(tmp_path / name), **extra)
        m = harness.run(cfg)
        assert m.passed
        outs.append(tmp_path / name)
    files = data_files(outs[0])
    assert files and files == data_files(outs[1])
    match, mismatch, errors = filecmp.cmpfiles(outs[0], outs[1], files, shallow=False)
    assert not mismatch and not errors
    manifest = json.loads((outs[0] / "manifest.json").read_text())
    assert manifest["seed"] == 11 and manifest["kind"] == kind
    assert not [p for p in outs[0].iterdir() if p.name.startswith(".staging-")]


def test_same_seed_shares_realizations(tmp_path):
    harness.run(ExperimentConfig(kind="simulate-tree", t=2.0, N=2, seed=5, out=str(tmp_path / "t")))
    harness.run(ExperimentConfig(kind="simulate-bbm", t=2.0, N=2, seed=5, out=str(tmp_path / "b")))
    trees = read_table(tmp_path / "t" / "trees.csv")[2]
    bbms = read_table(tmp_path / "b" / "bbm_summary.csv")[2]
    assert [r[2] for r in trees] == [r[1] for r in bbms]


def test_failed_run_leaves_no_outputs(tmp_path, monkeypatch):
    def boom(cfg, out):
        (out / "partial.csv").write_text("x\n")
        raise RuntimeError("disk full")
    monkeypatch.setitem(harness.RUNNERS, "simulate-tree", boom)
    with pytest.raises(RuntimeError):
        harness.run(ExperimentConfig(kind="simulate-tree", t=1.0, out=str(tmp_path)))
    assert list(tmp_path.iterdir()) == []


def test_revuz_run(tmp_path):
    cfg = ExperimentConfig.load(CONFIGS / "revuz.json")
    cfg.out, cfg.N, cfg.walk_r = str(tmp_path), 4000, 16
    m = harness.run(cfg)
    rep = json.loads((tmp_path / "revuz.json").read_text())
    assert rep["lhs"] == 3.0
    assert m.checks == {"revuz_3se": True}


def test_cli_exit_codes(tmp_path, capsys):
    assert cli.main(["simulate-bbm", "--set", "t=2", "--set", "sigma=1.5", "--out", str(tmp_path)]) == 2
    assert "sigma outside (0,1)" in capsys.readouterr().err
    assert cli.main(["simulate-tree", "--set", "t=1.5", "--set", "N=2", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "trees.csv").exists()
    assert cli.main(["revuz", "--config", str(CONFIGS / "converge.json")]) == 2


def test_cli_byte_identical_rerun(tmp_path):
    args = ["sample-path", "--config", str(CONFIGS / "sample-path.json"), "--set", "N=2", "--seed", "3"]
    assert cli.main(args + ["--out", str(tmp_path / "a")]) == 0
    assert cli.main(args + ["--out", str(tmp_path / "b")]) == 0
    files = data_files(tmp_path / "a")
    assert files == ["path_00000.csv", "path_00001.csv"]
    assert filecmp.cmpfiles(tmp_path / "a", tmp_path / "b", files, shallow=False)[1] == []


def test_extremes_run(tmp_path):
    m = harness.run(ExperimentConfig(kind="extremes", t=4.0, N=500, seed=2, out=str(tmp_path)))
    fit = json.loads((tmp_path / "fit.json").read_text())
    assert fit["C"] > 0 and 0 <= fit["ks"] < 1
    assert m.checks["ks"] == (fit["ks"] < 0.1)
    assert (tmp_path / "points.csv").exists()


def test_converge_run_reports(tmp_path):
    cfg = ExperimentConfig(kind="converge", ladder=[[1, 3.5], [1.5, 5], [2, 6.5]], walk_r=16, S=1.0,
                           N=4, seed=3, out=str(tmp_path))
    harness.run(cfg)
    rep = json.loads((tmp_path / "converge.json").read_text())
    assert rep["couplings"] + rep["skipped_nonpositive"] == 4
    _, cols, rows = read_table(tmp_path / "converge.csv")
    assert cols == ["coupling", "pair", "metric", "value"]
    assert len(rows) == 4 * rep["couplings"]
