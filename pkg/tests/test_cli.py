import hashlib
import json
import subprocess
import sys

import pytest

from mrgnet.cli import main, read_predictions, triplet_to_dict
from mrgnet.datagen import read_scenes, write_scenes
from mrgnet.pipeline import ground_truth_triplets


def digest_tree(root):
    return {p.relative_to(root).as_posix(): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["gen", "--seed", "7", "--train", "8", "--test", "4", "--d-in", "8", "--out", str(root / "data")]) == 0
    assert main(["train", "--data", str(root / "data"), "--epochs", "1", "--out", str(root / "m" / "model.json")]) == 0
    return root


def test_gen_outputs_and_determinism(workspace, tmp_path):
    data = workspace / "data"
    assert {p.name for p in data.iterdir()} == {"train.jsonl", "test.jsonl", "taxonomy.json", "manifest.json"}
    assert len(read_scenes(data / "train.jsonl")) == 8
    assert main(["gen", "--seed", "7", "--train", "8", "--test", "4", "--d-in", "8", "--out", str(tmp_path)]) == 0
    for name in ("train.jsonl", "test.jsonl", "taxonomy.json"):
        assert (tmp_path / name).read_bytes() == (data / name).read_bytes()
    manifest = json.loads((data / "manifest.json").read_text())
    assert manifest["command"] == "gen" and manifest["arguments"]["seed"] == 7
    assert manifest["dataset"]["n_train"] == 8 and "version" in manifest and "elapsed_seconds" in manifest


def test_gen_defaults(tmp_path):
    assert main(["gen", "--out", str(tmp_path)]) == 0
    assert len(read_scenes(tmp_path / "train.jsonl")) == 200
    assert len(read_scenes(tmp_path / "test.jsonl")) == 40


def test_usage_errors_exit_1(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["gen"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main(["eval", "--data", "x", "--out", "r.csv", "--k", "0"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 1
    assert main(["eval", "--data", "x", "--out", "r.csv"]) == 1


def test_train_outputs_and_reproducibility(workspace, tmp_path):
    m = workspace / "m"
    csv = (m / "model.loss.csv").read_text().splitlines()
    assert csv[0].startswith("epoch,mean_loss") and len(csv) == 2
    manifest = json.loads((m / "model.manifest.json").read_text())
    assert manifest["config"]["epochs"] == 1 and manifest["config"]["initial_lr"] == 0.001
    assert manifest["config"]["model"]["d_in"] == 8
    assert main(["train", "--data", str(workspace / "data"), "--epochs", "1", "--out", str(tmp_path / "again.json")]) == 0
    assert (tmp_path / "again.json").read_bytes() == (m / "model.json").read_bytes()


def test_train_defaults_mirror_config(workspace):
    from mrgnet.cli import build_parser
    from mrgnet.training import TrainConfig

    args = build_parser().parse_args(["train", "--data", "d", "--out", "m.json"])
    assert args.epochs is None and args.lr is None  # taken from TrainConfig
    cfg = json.loads((workspace / "m" / "model.config.json").read_text())
    defaults = json.loads(TrainConfig().to_json())
    for key in ("initial_lr", "lr_decay_factor", "lr_decay_every", "weight_decay", "beta1", "negative_ratio"):
        assert cfg[key] == defaults[key]


def test_infer_outputs(workspace, tmp_path):
    out = tmp_path / "g"
    assert main(["infer", "--model", str(workspace / "m" / "model.json"), "--scene",
                 str(workspace / "data" / "test.jsonl"), "--out", str(out), "--dot", "--min-score", "0"]) == 0
    ids = [s.scene_id for s in read_scenes(workspace / "data" / "test.jsonl")]
    for sid in ids:
        doc = json.loads((out / f"{sid}.json").read_text())
        dot = (out / f"{sid}.dot").read_text().splitlines()
        assert len(dot) == len(doc["nodes"]) + len(doc["edges"]) + 2
    again = tmp_path / "g2"
    main(["infer", "--model", str(workspace / "m" / "model.json"), "--scene",
          str(workspace / "data" / "test.jsonl"), "--out", str(again), "--dot", "--min-score", "0"])
    a, b = digest_tree(out), digest_tree(again)
    a.pop("manifest.json"), b.pop("manifest.json")
    assert a == b


def test_infer_min_score_above_one_and_single_object(workspace, tmp_path):
    model = str(workspace / "m" / "model.json")
    assert main(["infer", "--model", model, "--scene", str(workspace / "data"), "--out", str(tmp_path / "g"),
                 "--min-score", "1.1"]) == 0
    graphs = [json.loads(p.read_text()) for p in (tmp_path / "g").glob("*-*.json")]
    assert len(graphs) == 12 and all(g["edges"] == [] for g in graphs)
    scene = read_scenes(workspace / "data" / "test.jsonl")[0]
    scene.objects = scene.objects[:1]
    scene.gt_triplets = []
    write_scenes(tmp_path / "one.jsonl", [scene])
    assert main(["infer", "--model", model, "--scene", str(tmp_path / "one.jsonl"), "--out", str(tmp_path / "o")]) == 0
    doc = json.loads((tmp_path / "o" / f"{scene.scene_id}.json").read_text())
    assert len(doc["nodes"]) == 1 and doc["edges"] == []


def test_eval_rows_and_replay(workspace, tmp_path):
    report = tmp_path / "r" / "report.csv"
    assert main(["eval", "--model", str(workspace / "m" / "model.json"), "--data", str(workspace / "data"),
                 "--k", "1,5", "--mode", "both", "--out", str(report)]) == 0
    rows = report.read_text().splitlines()
    assert len(rows) == 2 + 4
    assert report.with_suffix(".txt").read_text().startswith("Recall (%) micro")
    replay = tmp_path / "replay.csv"
    assert main(["eval", "--predictions", str(report.with_suffix(".predictions.jsonl")),
                 "--data", str(workspace / "data"), "--out", str(replay)]) == 0
    assert replay.read_text() == report.read_text()


def test_eval_perfect_oracle(workspace, tmp_path):
    scenes = read_scenes(workspace / "data" / "test.jsonl")
    preds = tmp_path / "oracle.jsonl"
    preds.write_text("".join(
        json.dumps({"scene_id": s.scene_id, "triplets": [triplet_to_dict(t) for t in ground_truth_triplets(s)]}) + "\n"
        for s in scenes))
    assert set(read_predictions(preds)) == {s.scene_id for s in scenes}
    out = tmp_path / "perfect.csv"
    assert main(["eval", "--predictions", str(preds), "--data", str(workspace / "data"), "--k", "7,10",
                 "--out", str(out)]) == 0
    recalls = [line.split(",")[-1] for line in out.read_text().splitlines()[2:]]
    assert recalls == ["1.000000"] * 4


def test_data_errors_exit_2(workspace, tmp_path):
    bad = tmp_path / "bad.jsonl"
    bad.write_text("not json\n")
    model = str(workspace / "m" / "model.json")
    assert main(["infer", "--model", model, "--scene", str(bad), "--out", str(tmp_path / "g")]) == 2
    assert main(["infer", "--model", str(tmp_path / "missing.json"), "--scene", str(bad), "--out", str(tmp_path)]) == 2
    assert main(["train", "--data", str(bad), "--out", str(tmp_path / "m.json")]) == 2
    assert main(["eval", "--predictions", str(bad), "--data", str(workspace / "data"), "--out", str(tmp_path / "r.csv")]) == 2


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_exit_3(workspace, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"initial_lr": 1e300}))
    assert main(["train", "--data", str(workspace / "data"), "--config", str(cfg), "--epochs", "1",
                 "--out", str(tmp_path / "m.json")]) == 3
    assert not (tmp_path / "m.json").exists()


def test_commands_do_not_mutate_inputs(workspace, tmp_path):
    before = digest_tree(workspace / "data")
    model_before = digest_tree(workspace / "m")
    main(["train", "--data", str(workspace / "data"), "--epochs", "1", "--out", str(tmp_path / "x.json")])
    main(["eval", "--model", str(workspace / "m" / "model.json"), "--data", str(workspace / "data"),
          "--out", str(tmp_path / "r.csv")])
    assert digest_tree(workspace / "data") == before
    assert digest_tree(workspace / "m") == model_before


def test_module_entry_point(workspace, tmp_path):
    proc = subprocess.run([sys.executable, "-m", "mrgnet.cli", "eval", "--model",
                           str(workspace / "m" / "model.json"), "--data", str(workspace / "data"),
                           "--out", str(tmp_path / "r.csv")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert "RR@5" in proc.stdout
