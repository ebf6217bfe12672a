"""End-to-end smoke tests of the command-line surface."""

import json

import numpy as np
import pytest

from t1qc.cli import load_dataset, main
from t1qc.model import Annotation, Grades, annotation_to_dict, read_jsonl, write_jsonl
from t1qc.nifti import read_nifti_file


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestSynthAndPreprocess:
    def test_synth_writes_dataset(self, tmp_path, capsys):
        out = tmp_path / "data"
        code, stdout, _ = run(
            capsys, "synth", "--n", "12", "--shape", "10,12,11", "--seed", "5", "--out", str(out)
        )
        assert code == 0
        assert json.loads(stdout)["written"] == 12
        samples = load_dataset(out)
        assert len(samples) == 12
        assert samples[0].volume.shape == (10, 12, 11)

    def test_synth_deterministic(self, tmp_path, capsys):
        a, b = tmp_path / "a", tmp_path / "b"
        run(capsys, "synth", "--n", "6", "--shape", "10,10,10", "--seed", "9", "--out", str(a))
        run(capsys, "synth", "--n", "6", "--shape", "10,10,10", "--seed", "9", "--out", str(b))
        assert (a / "labels.jsonl").read_text() == (b / "labels.jsonl").read_text()
        for nii in sorted(a.glob("*.nii")):
            assert nii.read_bytes() == (b / nii.name).read_bytes()

    def test_preprocess_directory(self, tmp_path, capsys):
        data = tmp_path / "data"
        run(capsys, "synth", "--n", "3", "--shape", "10,12,11", "--seed", "1", "--out", str(data))
        cfg = tmp_path / "pre.json"
        cfg.write_text(json.dumps({"target_shape": [12, 12, 12], "target_spacing": 1.0}))
        out = tmp_path / "pre"
        code, stdout, _ = run(
            capsys, "preprocess", "--input", str(data), "--config", str(cfg), "--out", str(out)
        )
        assert code == 0
        processed = read_nifti_file(out / "IMG00000.nii")
        assert processed.shape == (12, 12, 12)
        assert (out / "slices" / "IMG00000_axial.png").exists()


class TestSelectAndAudit:
    HEADER = (
        "image_id,patient_id,series_description,study_description,"
        "body_part_examined,n_slices,manufacturer,model_name,field_strength_tesla"
    )

    def write_catalog(self, path):
        rows = [
            "a,p1,3D T1 EG MPRAGE,IRM cranio,BRAIN,176,Siemens,Skyra,3.0",
            "b,p2,T2 FLAIR,other,BRAIN,120,GE,Optima,1.5",
            "c,p3,Brain T1W/FFEGADO,routine,BRAIN,30,GE,Optima,1.5",
        ]
        path.write_text("\n".join([self.HEADER] + rows) + "\n")

    def test_select(self, tmp_path, capsys):
        catalog = tmp_path / "catalog.csv"
        self.write_catalog(catalog)
        out = tmp_path / "selected.csv"
        code, stdout, _ = run(capsys, "select", "--catalog", str(catalog), "--out", str(out))
        assert code == 0
        report = json.loads(stdout)
        assert report["parsed"] == 3
        assert report["selected"] == 1  # "a": T1 pattern and >= 40 slices
        assert "image_id" in out.read_text()

    def test_audit_gado(self, tmp_path, capsys):
        catalog = tmp_path / "catalog.csv"
        self.write_catalog(catalog)
        labels = tmp_path / "labels.jsonl"
        labels.write_text(
            write_jsonl(
                [
                    {"image_id": "a", "straight_reject": False, "sr_adjudicated": False,
                     "gadolinium": False, "grades": {"motion": 0, "contrast": 0, "noise": 0}, "tier": 1},
                    {"image_id": "c", "straight_reject": False, "sr_adjudicated": False,
                     "gadolinium": True, "grades": {"motion": 0, "contrast": 0, "noise": 0}, "tier": 1},
                ]
            )
        )
        out = tmp_path / "audit.json"
        code, stdout, _ = run(
            capsys, "audit-gado", "--catalog", str(catalog), "--labels", str(labels), "--out", str(out)
        )
        assert code == 0
        table = json.loads(stdout)
        assert table["manual_yes_keyword_yes"] == 1  # FFEGADO
        assert table["manual_no_keyword_no"] == 1

    def test_missing_file_is_machine_readable_error(self, tmp_path, capsys):
        code, _, stderr = run(
            capsys, "select", "--catalog", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "x.csv")
        )
        assert code == 1
        err = json.loads(stderr)
        assert "error" in err and "message" in err


class TestConsensusAndKappa:
    def write_annotations(self, path):
        records = []
        for rater in ("r1", "r2"):
            records.append(annotation_to_dict(Annotation("i0", rater, True)))
        records.append(
            annotation_to_dict(Annotation("i1", "r1", False, gadolinium=False, grades=Grades(1, 0, 0)))
        )
        records.append(
            annotation_to_dict(Annotation("i1", "r2", False, gadolinium=True, grades=Grades(0, 0, 2)))
        )
        records.append(annotation_to_dict(Annotation("i2", "r1", True)))
        records.append(
            annotation_to_dict(Annotation("i2", "r2", False, gadolinium=False, grades=Grades(0, 0, 0)))
        )
        path.write_text(write_jsonl(records))

    def test_consensus_merge_and_pending(self, tmp_path, capsys):
        annotations = tmp_path / "annotations.jsonl"
        self.write_annotations(annotations)
        out = tmp_path / "consensus.jsonl"
        code, stdout, _ = run(capsys, "consensus", "--annotations", str(annotations), "--out", str(out))
        assert code == 0
        report = json.loads(stdout)
        assert report["pending_adjudication"] == ["i2"]
        lines = {l["image_id"]: l for l in read_jsonl(out.read_text())}
        assert lines["i0"]["straight_reject"] is True
        assert lines["i1"]["grades"] == {"motion": 1, "contrast": 0, "noise": 2}
        assert lines["i1"]["gadolinium"] is True
        assert lines["i2"]["pending_adjudication"] is True

    def test_consensus_with_resolution(self, tmp_path, capsys):
        annotations = tmp_path / "annotations.jsonl"
        self.write_annotations(annotations)
        resolutions = tmp_path / "resolutions.json"
        resolutions.write_text(json.dumps({"i2": True}))
        out = tmp_path / "consensus.jsonl"
        code, stdout, _ = run(
            capsys, "consensus", "--annotations", str(annotations),
            "--resolutions", str(resolutions), "--out", str(out),
        )
        assert code == 0
        lines = {l["image_id"]: l for l in read_jsonl(out.read_text())}
        assert lines["i2"]["straight_reject"] is True
        assert lines["i2"]["sr_adjudicated"] is True

    def test_kappa(self, tmp_path, capsys):
        annotations = tmp_path / "annotations.jsonl"
        self.write_annotations(annotations)
        code, stdout, _ = run(capsys, "kappa", "--annotations", str(annotations))
        assert code == 0
        payload = json.loads(stdout)
        assert payload["weighting"] == "linear"
        assert "sr" in payload["kappa"]
        assert payload["n_images"] == 3


class TestTrainEvaluate:
    def test_train_then_evaluate(self, tmp_path, capsys):
        data = tmp_path / "data"
        run(capsys, "synth", "--n", "30", "--shape", "12,12,12", "--seed", "3", "--out", str(data))
        cfg = tmp_path / "train.json"
        cfg.write_text(
            json.dumps(
                {
                    "network": {
                        "conv_channels": [2, 4], "fc_widths": [8], "n_classes": 2,
                        "dropout_rate": 0.1, "kernel": 3, "bn_momentum": 0.1, "bn_eps": 1e-5,
                    },
                    "train": {"learning_rate": 2e-3, "batch_size": 4, "max_epochs": 3,
                              "early_stop_patience": 3},
                    "n_test": 6,
                    "n_folds": 2,
                }
            )
        )
        model_path = tmp_path / "model.t1qc"
        code, stdout, _ = run(
            capsys, "train", "--data", str(data), "--task", "sr",
            "--config", str(cfg), "--seed", "2", "--out", str(model_path),
        )
        assert code == 0
        assert model_path.exists()
        info = json.loads(stdout)
        assert info["task"] == "sr"
        assert info["epochs_run"] >= 1

        code, stdout, _ = run(capsys, "evaluate", "--model", str(model_path), "--data", str(data))
        assert code == 0
        report = json.loads(stdout)
        assert report["task"] == "sr"
        assert report["n"] == 30

    def test_learning_curve(self, tmp_path, capsys):
        data = tmp_path / "data"
        run(capsys, "synth", "--n", "24", "--shape", "12,12,12", "--seed", "4", "--out", str(data))
        cfg = tmp_path / "lc.json"
        cfg.write_text(
            json.dumps(
                {
                    "network": {
                        "conv_channels": [2], "fc_widths": [4], "n_classes": 2,
                        "dropout_rate": 0.0, "kernel": 3, "bn_momentum": 0.1, "bn_eps": 1e-5,
                    },
                    "train": {"learning_rate": 2e-3, "batch_size": 4, "max_epochs": 2,
                              "early_stop_patience": 2},
                    "n_test": 5,
                    "n_folds": 2,
                }
            )
        )
        out = tmp_path / "curve.json"
        code, stdout, _ = run(
            capsys, "learning-curve", "--data", str(data), "--task", "sr",
            "--sizes", "8", "--config", str(cfg), "--seed", "5", "--out", str(out),
        )
        assert code == 0
        points = json.loads(stdout)
        assert [p["size"] for p in points] == [8]
        assert 0.0 <= points[0]["mean_ba"] <= 1.0
