from __future__ import annotations

import json
import subprocess
import sys

import numpy as np
import pytest

from skillscope.cli import main
from skillscope.features import FeatureDataset, read_dataset, write_dataset
from skillscope.trees import deserialize_model


@pytest.fixture(scope="module")
def features_dir(small_cohort_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("features")
    rc = main(["features", "--manifest", str(small_cohort_dir / "manifest.csv"),
               "--out-dir", str(out), "--width-s", "60", "--step-s", "60",
               "--quiet"])
    assert rc == 0
    return out


def test_synth_outputs_and_determinism(tmp_path, capsys):
    args = ["synth", "--counts", "1,1,0,1", "--duration-s", "300",
            "--seed", "5"]
    assert main(args + ["--out-dir", str(tmp_path / "a")]) == 0
    out = capsys.readouterr().out
    assert "wrote 3 sessions" in out
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert "manifest.csv" in names and "run_config.json" in names
    assert "pro_00_input.csv" in names and "newbie_00_gaze.csv" in names

    config = json.loads((tmp_path / "a" / "run_config.json").read_text())
    assert config["seed"] == 5
    assert config["counts"] == {"PRO": 1, "HIGH_AMATEUR": 1,
                                "LOW_AMATEUR": 0, "NEWBIE": 1}
    assert "version" in config and "func" not in config and "quiet" not in config

    assert main(args + ["--out-dir", str(tmp_path / "b"), "--quiet"]) == 0
    for name in names:
        if name == "run_config.json":
            continue
        assert ((tmp_path / "a" / name).read_bytes()
                == (tmp_path / "b" / name).read_bytes()), name


def test_usage_errors_exit_2(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["synth"])  # --out-dir is required
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["synth", "--out-dir", str(tmp_path), "--counts", "1,2"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["features", "--manifest", "m.csv", "--out-dir", str(tmp_path),
              "--resolution", "huge"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["heatmap", "--manifest", "m.csv", "--out-dir", str(tmp_path),
              "--levels", "0,0.5"])
    assert exc.value.code == 2


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert capsys.readouterr().out.strip()


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "skillscope", "--version"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert proc.stdout.strip()


def test_features_output(features_dir, small_cohort_dir, capsys, tmp_path):
    ds = read_dataset(features_dir / "features.csv")
    assert len(ds) == 80                      # 8 players x 10 windows of 60 s
    assert int(ds.is_pro().sum()) == 20
    starts = {r.window_start_s for r in ds.rows}
    assert starts == {float(s) for s in range(0, 600, 60)}
    config = json.loads((features_dir / "run_config.json").read_text())
    assert config["width_s"] == 60.0

    # console summary names the class split
    rc = main(["features", "--manifest", str(small_cohort_dir / "manifest.csv"),
               "--out-dir", str(tmp_path), "--width-s", "60", "--step-s", "60"])
    assert rc == 0
    assert "80 valid samples (20 PRO, 60 NONPRO)" in capsys.readouterr().out


def test_features_missing_manifest_exits_3(tmp_path, capsys):
    rc = main(["features", "--manifest", str(tmp_path / "nope.csv"),
               "--out-dir", str(tmp_path), "--quiet"])
    assert rc == 3
    assert "error:" in capsys.readouterr().err


def test_stats_significance(features_dir, tmp_path, capsys):
    out = tmp_path / "stats"
    rc = main(["stats", "--features", str(features_dir / "features.csv"),
               "--out-dir", str(out), "--width-s", "60"])
    assert rc == 0
    console = capsys.readouterr().out
    assert "alpha=0.01" in console
    lines = (out / "significance.csv").read_text().splitlines()
    assert lines[0].startswith("feature,u,p_value,p_raw,method")
    assert len(lines) == 10
    # 60 s non-overlapping windows of a 600 s session: all rows survive
    assert all(ln.endswith(("true", "false")) for ln in lines[1:])
    assert lines[1].split(",")[5:7] == ["20", "60"]


def test_stats_missing_class_exits_4(features_dir, tmp_path, capsys):
    ds = read_dataset(features_dir / "features.csv")
    pro_only = FeatureDataset([r for r in ds.rows if r.player_id.startswith("pro")],
                              ds.feature_names)
    write_dataset(pro_only, tmp_path / "pro_only.csv")
    rc = main(["stats", "--features", str(tmp_path / "pro_only.csv"),
               "--out-dir", str(tmp_path), "--quiet"])
    assert rc == 4
    assert "error:" in capsys.readouterr().err


@pytest.fixture(scope="module")
def cv_dir(features_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("cv")
    rc = main(["cv", "--features", str(features_dir / "features.csv"),
               "--out-dir", str(out), "--seed", "1", "--quiet"])
    assert rc == 0
    return out


def test_cv_outputs(cv_dir, features_dir):
    best = json.loads((cv_dir / "best_params.json").read_text())
    assert set(best) == {"n_trees", "max_depth", "bootstrap", "k_attributes",
                         "min_split", "seed", "oof_accuracy"}
    assert best["seed"] == 1
    assert 0.5 <= best["oof_accuracy"] <= 1.0

    grid_lines = (cv_dir / "grid_accuracy.csv").read_text().splitlines()
    assert grid_lines[0] == "n_trees,max_depth,bootstrap,k_attributes,accuracy"
    assert len(grid_lines) == 1 + 80
    best_acc = max(float(ln.split(",")[-1]) for ln in grid_lines[1:])
    assert best_acc == pytest.approx(best["oof_accuracy"])

    oof_lines = (cv_dir / "oof.csv").read_text().splitlines()
    assert oof_lines[0] == "player_id,window_start_s,label,probability"
    assert len(oof_lines) == 1 + 80
    probs = [float(ln.split(",")[-1]) for ln in oof_lines[1:]]
    assert all(0.0 <= p <= 1.0 for p in probs)

    model = deserialize_model((cv_dir / "model.json").read_text())
    assert model.params.n_trees == best["n_trees"]
    assert model.feature_names == tuple(read_dataset(
        features_dir / "features.csv").feature_names)

    report = (cv_dir / "report.csv").read_text()
    blocks = report.split("\n\n")
    assert len(blocks) == 3                   # metrics, confusion, importances
    assert blocks[2].splitlines()[0] == "feature,importance"


def test_train_and_eval(features_dir, cv_dir, tmp_path, capsys):
    train_out = tmp_path / "model"
    rc = main(["train", "--features", str(features_dir / "features.csv"),
               "--out-dir", str(train_out), "--n-trees", "50",
               "--max-depth", "3", "--no-bootstrap", "--seed", "2"])
    assert rc == 0
    assert "trained 50 trees" in capsys.readouterr().out
    model = deserialize_model((train_out / "model.json").read_text())
    assert model.params.max_depth == 3 and not model.params.bootstrap

    eval_out = tmp_path / "eval"
    rc = main(["eval", "--features", str(features_dir / "features.csv"),
               "--model", str(train_out / "model.json"),
               "--out-dir", str(eval_out), "--quiet"])
    assert rc == 0
    metrics = (eval_out / "report.csv").read_text().split("\n\n")[0].splitlines()
    assert metrics[0].split(",")[-1] == "accuracy"
    train_acc = float(metrics[1].split(",")[-1])
    oof_acc = json.loads((cv_dir / "best_params.json").read_text())["oof_accuracy"]
    # scoring the training rows cannot do worse than held-out players
    assert train_acc >= oof_acc - 1e-9
    # no importance block on a deserialized model
    assert len((eval_out / "report.csv").read_text().split("\n\n")) == 2


def test_eval_bad_model_exits_5(features_dir, tmp_path, capsys):
    model_path = tmp_path / "truncated.json"
    model_path.write_text('{"version": 1, "params": {')
    rc = main(["eval", "--features", str(features_dir / "features.csv"),
               "--model", str(model_path), "--out-dir", str(tmp_path),
               "--quiet"])
    assert rc == 5
    assert "error:" in capsys.readouterr().err


def test_heatmap_by_class(small_cohort_dir, tmp_path, capsys):
    out = tmp_path / "maps"
    rc = main(["heatmap", "--manifest", str(small_cohort_dir / "manifest.csv"),
               "--out-dir", str(out), "--bins", "32", "--levels", "0.5,0.9"])
    assert rc == 0
    console = capsys.readouterr().out
    assert "PRO" in console and "HDR cells" in console
    for name in ("PRO", "NONPRO"):
        image = (out / f"{name}.pgm").read_bytes()
        assert image.startswith(b"P5\n32 32\n255\n")
        csv_lines = (out / f"{name}_density.csv").read_text().splitlines()
        assert csv_lines[0] == "row,col,density"
        assert len(csv_lines) == 1 + 32 * 32
        total = sum(float(ln.split(",")[2]) for ln in csv_lines[1:])
        assert total == pytest.approx(1.0, abs=1e-6)


def test_heatmap_by_player(small_cohort_dir, tmp_path):
    out = tmp_path / "maps"
    rc = main(["heatmap", "--manifest", str(small_cohort_dir / "manifest.csv"),
               "--out-dir", str(out), "--by", "player", "--bins", "16",
               "--quiet"])
    assert rc == 0
    pgms = sorted(p.name for p in out.glob("*.pgm"))
    assert len(pgms) == 8
    assert "pro_01.pgm" in pgms and "newbie_00.pgm" in pgms
