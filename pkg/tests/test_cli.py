import csv
import json

import numpy as np
import pytest

from neoseize import io, metrics
from neoseize.cli import _model_config, build_parser, main
from neoseize.inference import PredictionTrace


def run(*argv):
    assert main([str(a) for a in argv]) == 0


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "cohort.json").write_text(json.dumps({"n_neonates": 2, "n_channels": 2, "duration_s": 480, "imbalance": 4}))
    (d / "train.json").write_text(json.dumps({"epochs": 1, "batch_size": 32, "seed": 3}))
    run("synth", "--config", d / "cohort.json", "--out", d / "raw", "--experts")
    run("preprocess", "--in", d / "raw", "--out", d / "proc")
    run("train", "--data", d / "proc", "--model", "nano", "--config", d / "train.json", "--out", d / "w.bin")
    run("predict", "--weights", d / "w.bin", "--in", d / "proc", "--out", d / "pred")
    return d


def test_pipeline_outputs(pipeline):
    d = pipeline
    assert sorted(p.name for p in (d / "pred").iterdir()) == [
        "neonate000.csv", "neonate000.events.csv", "neonate001.csv", "neonate001.events.csv"]
    log = rows(str(d / "w.bin") + ".log.csv")
    assert [r["epoch"] for r in log] == ["0"]
    names, probs, valid = io.read_prediction_csv(d / "pred" / "neonate000.csv")
    assert names == ["ch0", "ch1"] and probs.shape == (2, 480 * 4) and valid.all()
    arrays = io.read_segment_arrays(d / "proc" / "neonate000")
    assert arrays["samples"].shape[1] == 1024 and arrays["label"].any()


def test_predict_single_container_matches_directory(pipeline, tmp_path):
    d = pipeline
    run("predict", "--weights", d / "w.bin", "--in", d / "raw" / "neonate001", "--out", tmp_path / "one.csv")
    # raw 256 Hz input is preprocessed on the fly; the stored 64 Hz container is
    # float32, hence the tolerance
    a = io.read_prediction_csv(tmp_path / "one.csv")
    b = io.read_prediction_csv(d / "pred" / "neonate001.csv")
    assert a[0] == b[0] and (a[2] == b[2]).all()
    np.testing.assert_allclose(a[1], b[1], atol=1e-4)
    assert (tmp_path / "one.events.csv").exists()


def test_evaluate_report(pipeline, tmp_path):
    d = pipeline
    out = tmp_path / "report.csv"
    run("evaluate", "--pred", d / "pred", "--ref", d / "proc", "--annotators", "synthetic", "--out", out,
        "--plot", tmp_path / "trace.svg")
    table = rows(out)
    assert [r["recording_id"] for r in table] == ["neonate000", "neonate001", "cc"]
    assert table[-1]["n_seconds"] == "960"
    assert 0 <= float(table[-1]["auc"]) <= 1
    assert (tmp_path / "trace.svg").read_text().startswith("<?xml")


def test_evaluate_consensus_of_annotators(pipeline, tmp_path):
    d = pipeline
    out = tmp_path / "report.csv"
    run("evaluate", "--pred", d / "pred" / "neonate000.csv", "--ref", d / "proc" / "neonate000" / "annotations.csv",
        "--annotators", "expert1,expert2,expert3", "--out", out)
    sets = io.read_annotations(d / "proc" / "neonate000" / "annotations.csv")
    ref = metrics.reference_mask(sets, 480, ["expert1", "expert2", "expert3"])
    names, probs, valid = io.read_prediction_csv(d / "pred" / "neonate000.csv")
    trace = PredictionTrace("neonate000", names, probs, valid)
    direct = metrics.evaluate([metrics.RecordingResult("neonate000", trace.global_probability_1hz(),
                                                       trace.global_mask(), ref)])
    assert float(rows(out)[0]["auc"]) == pytest.approx(direct.auc, rel=1e-12)


def test_kappa_test_deterministic(pipeline, tmp_path):
    d = pipeline
    experts = [f"{d / 'proc'}:expert{k}" for k in (1, 2, 3)]
    for name in ("a.json", "b.json"):
        run("kappa-test", "--experts", *experts, "--ai", d / "pred", "--iterations", 40, "--seed", 7,
            "--out", tmp_path / name)
    a = (tmp_path / "a.json").read_text()
    assert a == (tmp_path / "b.json").read_text()
    res = json.loads(a)
    assert len(res["samples"]) == 40 and res["n_neonates"] == 2 and isinstance(res["equivalent"], bool)


def test_kappa_test_copy_of_expert_is_zero_for_that_expert(pipeline, tmp_path):
    # expert1 as the "AI": write its mask as a one-channel prediction trace
    d = pipeline
    pred = tmp_path / "pred"
    pred.mkdir()
    for rid in ("neonate000", "neonate001"):
        sets = io.read_annotations(d / "proc" / rid / "annotations.csv")
        mask = metrics.reference_mask(sets, 480, ["expert1"]).astype(float)
        trace = PredictionTrace(rid, ["g"], np.repeat(mask, 4)[None], np.ones((1, 480 * 4), bool))
        io.write_prediction_csv(trace, pred / f"{rid}.csv")
    experts = [f"{d / 'proc'}:expert{k}" for k in (1, 2, 3)]
    run("kappa-test", "--experts", *experts, "--ai", pred, "--iterations", 20, "--out", tmp_path / "k.json")
    assert json.loads((tmp_path / "k.json").read_text())["delta"][0] == 0.0


def test_montage_stress(pipeline, tmp_path):
    d = pipeline
    run("montage-stress", "--pred", d / "pred", "--ref", d / "proc", "--annotators", "synthetic",
        "--trials", 2, "--fractions", "0.5,1.0", "--out", tmp_path)
    table = rows(tmp_path / "montage_stress.csv")
    assert [(r["fraction"], r["affected_channels"]) for r in table] == [
        ("0.5", "0"), ("0.5", "1"), ("1.0", "0"), ("1.0", "1")]
    assert float(table[0]["auc_degradation_pct"]) == 0.0
    assert (tmp_path / "montage_stress.svg").exists()


def test_scaling_run_tiny(tmp_path):
    cfg = {"n_neonates": 2, "seizure_per_neonate": 8, "background_per_neonate": 24,
           "heldout_seizure": 8, "heldout_background": 24, "train": {"batch_size": 16}}
    (tmp_path / "setup.json").write_text(json.dumps(cfg))
    run("scaling-run", "--axis", "neonates", "--grid", "1,2", "--trials", 1, "--epochs", 1,
        "--config", tmp_path / "setup.json", "--out", tmp_path / "out")
    names = sorted(p.name for p in (tmp_path / "out").iterdir())
    assert names == ["scaling_neonates.csv", "scaling_neonates.svg", "scaling_neonates_fit.csv",
                     "scaling_neonates_flags.csv"]


def test_errors_exit_nonzero(tmp_path, capsys):
    (tmp_path / "bad.json").write_text(json.dumps({"n_neonates": 1, "colour": "red"}))
    assert main(["synth", "--config", str(tmp_path / "bad.json"), "--out", str(tmp_path / "x")]) == 2
    assert "colour" in capsys.readouterr().err
    assert main(["preprocess", "--in", str(tmp_path), "--out", str(tmp_path / "y")]) == 2
    (tmp_path / "seg").mkdir()
    assert main(["train", "--data", str(tmp_path), "--model", "custom", "2", "--out", str(tmp_path / "w")]) == 2


def test_parser_model_spec():
    args = build_parser().parse_args(["train", "--data", "d", "--model", "custom", "2", "3", "--out", "w"])
    cfg = _model_config(args.model)
    assert (cfg.depth, cfg.width) == (2, 3)
    assert _model_config(["Small"]).variant_name == "small"
