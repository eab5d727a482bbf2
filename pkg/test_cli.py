"""End-to-end tests of the lstm_cctc command-line tool."""
import csv
import json

import numpy as np
import pytest

from lstm_cctc import main
from src.network.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from src.network.lstm import ScanModel
from src.utils.jsonl import read_jsonl, write_jsonl

TINY_SPEC = {"n": 4, "k": 3, "objectCountRange": [1, 2], "objectSideRange": [1, 2], "signalChannels": [0],
             "noiseSigma": 0.0, "seed": 5}


@pytest.fixture
def dataset(tmp_path):
    spec_path = tmp_path / "tiny_spec.json"
    spec_path.write_text(json.dumps(TINY_SPEC))
    assert main(["gen-data", "--spec", str(spec_path), "--train-size", "6", "--test-size", "3",
                 "--out", str(tmp_path / "data")]) == 0
    return tmp_path / "data"


@pytest.fixture
def zero_checkpoint(tmp_path):
    return save_checkpoint(tmp_path / "zero.json", Checkpoint(ScanModel.zeros(3, 2)))


def test_gen_data_is_reproducible(tmp_path, dataset, capsys):
    for name in ("spec.json", "train.jsonl", "test.jsonl", "manifest.json"):
        assert (dataset / name).exists()
    assert len(read_jsonl(dataset / "train.jsonl")) == 6
    assert len(read_jsonl(dataset / "test.jsonl")) == 3
    manifest = json.loads((dataset / "manifest.json").read_text())
    assert manifest["command"] == "gen-data"
    assert len(manifest["extra"]["specSha256"]) == 64

    assert main(["gen-data", "--spec", str(tmp_path / "tiny_spec.json"), "--train-size", "6", "--test-size", "3",
                 "--out", str(tmp_path / "again")]) == 0
    assert (tmp_path / "again" / "train.jsonl").read_bytes() == (dataset / "train.jsonl").read_bytes()
    assert "Dataset generated" in capsys.readouterr().out


def test_seed_flag_changes_the_data(tmp_path, dataset):
    assert main(["gen-data", "--spec", str(tmp_path / "tiny_spec.json"), "--train-size", "6", "--test-size", "3",
                 "--seed", "6", "--out", str(tmp_path / "other")]) == 0
    assert (tmp_path / "other" / "train.jsonl").read_bytes() != (dataset / "train.jsonl").read_bytes()
    assert json.loads((tmp_path / "other" / "spec.json").read_text())["seed"] == 6


def test_invalid_spec_exits_with_validation_code(tmp_path, capsys):
    spec_path = tmp_path / "bad.json"
    spec_path.write_text(json.dumps({**TINY_SPEC, "objectCountRange": [5, 3]}))
    assert main(["gen-data", "--spec", str(spec_path), "--out", str(tmp_path / "data")]) == 1
    err = capsys.readouterr().err
    assert err.startswith("error:")
    assert "objectCountRange" in err
    assert not (tmp_path / "data" / "train.jsonl").exists()


def test_zero_epochs_writes_the_initialization(tmp_path, dataset):
    out = tmp_path / "run"
    assert main(["train", "--data", str(dataset), "--epochs", "0", "--hidden-size", "4", "--seed", "7",
                 "--out", str(out)]) == 0
    ckpt = load_checkpoint(out / "checkpoint.json")
    assert ckpt.epoch == 0
    init = ScanModel.initialize(3, 4, seed=7)
    for name, arr in init.tensors().items():
        assert np.array_equal(ckpt.model.tensors()[name], arr)
    rows = list(csv.reader(open(out / "train_log.csv")))
    assert rows[0][:4] == ["epoch", "loss", "lr", "gradNorm"]
    assert len(rows) == 1
    assert json.loads((out / "manifest.json").read_text())["extra"]["epochsCompleted"] == 0


def test_train_exports_pretraining_proposals(tmp_path, dataset):
    out = tmp_path / "run"
    exported = tmp_path / "pretrain.jsonl"
    assert main(["train", "--data", str(dataset / "train.jsonl"), "--epochs", "2", "--pretrain-epochs", "1",
                 "--hidden-size", "3", "--proposals-out", str(exported), "--out", str(out)]) == 0
    assert load_checkpoint(out / "checkpoint.json").epoch == 2
    records = read_jsonl(exported)
    assert len(records) == 6
    assert all(record["scale"] == 1.0 for record in records)
    assert len(list(csv.reader(open(out / "train_log.csv")))) == 3


def test_config_file_overrides_flags(tmp_path, dataset):
    config = tmp_path / "train.json"
    config.write_text(json.dumps({"epochs": 1, "hidden-size": 2}))
    out = tmp_path / "run"
    assert main(["train", "--data", str(dataset), "--config", str(config), "--out", str(out)]) == 0
    ckpt = load_checkpoint(out / "checkpoint.json")
    assert ckpt.epoch == 1
    assert ckpt.model.hidden_size == 2


def test_config_file_rejects_unknown_keys(tmp_path, dataset, capsys):
    config = tmp_path / "train.json"
    config.write_text(json.dumps({"epochz": 1}))
    assert main(["train", "--data", str(dataset), "--config", str(config), "--out", str(tmp_path / "run")]) == 1
    assert "epochz" in capsys.readouterr().err


@pytest.mark.parametrize("overrides, field", [
    ({"epochs": "ten"}, "epochs"),
    ({"scan-orders": ["row-major"]}, "scan-orders"),
    ({"clip-norm": [1.0]}, "clip-norm"),
    ({"resume": "yes"}, "resume"),
    ({"batch-size": 2.5}, "batch-size"),
])
def test_config_file_values_are_type_checked(tmp_path, dataset, capsys, overrides, field):
    config = tmp_path / "train.json"
    config.write_text(json.dumps(overrides))
    assert main(["train", "--data", str(dataset), "--config", str(config), "--out", str(tmp_path / "run")]) == 1
    err = capsys.readouterr().err
    assert err.startswith("error:")
    assert field in err
    assert not (tmp_path / "run" / "checkpoint.json").exists()


def test_config_file_numbers_may_be_strings(tmp_path, dataset):
    config = tmp_path / "train.json"
    config.write_text(json.dumps({"epochs": "1", "hidden-size": 2, "learning-rate": 0.01}))
    assert main(["train", "--data", str(dataset), "--config", str(config), "--out", str(tmp_path / "run")]) == 0
    assert load_checkpoint(tmp_path / "run" / "checkpoint.json").epoch == 1


@pytest.mark.parametrize("argv", [
    ["train", "--data", "data", "--epochs", "abc"],
    ["train"],
    ["no-such-command"],
])
def test_usage_errors_exit_with_validation_code(argv, capsys):
    assert main(argv) == 1
    assert "error:" in capsys.readouterr().err


def test_untrained_model_proposes_nothing(tmp_path, dataset, zero_checkpoint):
    out = tmp_path / "run"
    alignments = tmp_path / "alignments.jsonl"
    assert main(["propose", "--checkpoint", str(zero_checkpoint), "--dataset", str(dataset / "test.jsonl"),
                 "--alignments", str(alignments), "--out", str(out)]) == 0
    records = read_jsonl(out / "proposals.jsonl")
    assert [r["image"] for r in records] == sorted(r["id"] for r in read_jsonl(dataset / "test.jsonl"))
    assert all(r["boxes"] == [] for r in records)
    assert all(len(r["alignments"]) == 4 for r in read_jsonl(alignments))


def test_empty_dataset_gives_empty_proposals(tmp_path, zero_checkpoint):
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    out = tmp_path / "run"
    assert main(["propose", "--checkpoint", str(zero_checkpoint), "--dataset", str(empty), "--out", str(out)]) == 0
    assert (out / "proposals.jsonl").read_text() == ""


def test_checkpoint_channel_mismatch_is_a_runtime_error(tmp_path, dataset, capsys):
    wrong = save_checkpoint(tmp_path / "wrong.json", Checkpoint(ScanModel.zeros(2, 2)))
    assert main(["propose", "--checkpoint", str(wrong), "--dataset", str(dataset / "test.jsonl"),
                 "--out", str(tmp_path / "run")]) == 2
    assert "error:" in capsys.readouterr().err


def test_missing_checkpoint(tmp_path, dataset):
    assert main(["propose", "--checkpoint", str(tmp_path / "absent.json"), "--dataset",
                 str(dataset / "test.jsonl"), "--out", str(tmp_path / "run")]) == 2


def write_ground_truth_proposals(path, dataset_file, drop=0):
    records = [{"image": r["id"], "boxes": [box + [1.0] for box in r["boxes"]]} for r in read_jsonl(dataset_file)]
    write_jsonl(path, records[drop:])


def test_eval_of_ground_truth_proposals(tmp_path, dataset):
    proposals = tmp_path / "proposals.jsonl"
    write_ground_truth_proposals(proposals, dataset / "test.jsonl")
    out = tmp_path / "eval"
    assert main(["eval", "--proposals", str(proposals), "--dataset", str(dataset / "test.jsonl"),
                 "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert set(report["recallAtIoU"].values()) == {1.0}
    assert report["corLoc"] == 1.0
    assert report["mAP"] == 1.0
    rows = list(csv.reader(open(out / "recall_curve.csv")))
    assert [float(r[1]) for r in rows[1:]] == [1.0] * 5


def test_eval_rejects_id_mismatch(tmp_path, dataset, capsys):
    proposals = tmp_path / "proposals.jsonl"
    write_ground_truth_proposals(proposals, dataset / "test.jsonl", drop=1)
    assert main(["eval", "--proposals", str(proposals), "--dataset", str(dataset / "test.jsonl"),
                 "--out", str(tmp_path / "eval")]) == 1
    assert "ids missing" in capsys.readouterr().err


def test_ablation_table(tmp_path, dataset, zero_checkpoint):
    out = tmp_path / "ablation"
    assert main(["ablate", "--checkpoint", str(zero_checkpoint), "--dataset", str(dataset / "test.jsonl"),
                 "--out", str(out)]) == 0
    rows = json.loads((out / "ablation.json").read_text())
    assert [row["preset"] for row in rows] == ["one", "two", "four"]
    assert all(row["countAccuracy"] == 0.0 for row in rows)
    table = list(csv.reader(open(out / "ablation.csv")))
    assert table[0][0] == "preset"
    assert len(table) == 4


def test_ablation_rejects_unknown_preset(tmp_path, dataset, zero_checkpoint):
    assert main(["ablate", "--checkpoint", str(zero_checkpoint), "--dataset", str(dataset / "test.jsonl"),
                 "--presets", "one,three", "--out", str(tmp_path / "ablation")]) == 1


def test_bad_environment_value(monkeypatch, tmp_path, dataset, capsys):
    monkeypatch.setenv("LSTM_CCTC_LOG_LEVEL", "LOUD")
    assert main(["train", "--data", str(dataset), "--epochs", "0", "--out", str(tmp_path / "run")]) == 1
    assert "LSTM_CCTC_LOG_LEVEL" in capsys.readouterr().err
