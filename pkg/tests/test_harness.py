import json

import numpy as np
import pytest

from segconsist.errors import IoFailure, SelfAttackFailed
from segconsist.harness import cli
from segconsist.harness.data import DatasetSpec, boundary_mask, build_dataset, generate_splits, load_dataset
from segconsist.harness.experiments import (CraftedExample, ExperimentConfig, emit_entropy_heatmap, ordered_map,
                                            run_detection_experiment)
from segconsist.harness.io import (load_model, load_perturbation, quantize, read_csv, read_pgm, read_ppm,
                                   save_model, save_perturbation, tree_digest, write_csv)
from segconsist.harness.svg import bar_chart, heatmap, line_chart
from segconsist.harness.transfer import TransferMatrix, segmentation_transfer, transfer_score
from segconsist.model import ToyConvModel
from segconsist.scenes import SceneSpec
from segconsist.seeding import substream


def tiny_spec(n_train=2, n_calibration=2, n_test=3, size=24):
    return DatasetSpec(n_train, n_calibration, n_test, SceneSpec(height=size, width=size))


def test_build_dataset_bookkeeping(tmp_path):
    spec = DatasetSpec(60, 15, 25, SceneSpec(height=16, width=16))
    m = build_dataset(spec, tmp_path, seed=3)
    assert len(list((tmp_path / "images").glob("*.ppm"))) == 100
    assert len(list((tmp_path / "labels").glob("*.pgm"))) == 100
    assert sum(len(v) for v in m["splits"].values()) == 100
    ids = [i for v in m["splits"].values() for i in v]
    assert len(ids) == len(set(ids))


def test_build_dataset_deterministic(tmp_path):
    build_dataset(tiny_spec(), tmp_path / "a", seed=1)
    build_dataset(tiny_spec(), tmp_path / "b", seed=1)
    build_dataset(tiny_spec(), tmp_path / "c", seed=2)
    assert tree_digest(tmp_path / "a") == tree_digest(tmp_path / "b")
    assert tree_digest(tmp_path / "a") != tree_digest(tmp_path / "c")


def test_load_dataset_roundtrip_and_digest(tmp_path):
    build_dataset(tiny_spec(), tmp_path, seed=0)
    splits, _ = load_dataset(tmp_path)
    mem = generate_splits(tiny_spec(), 0)
    for split in mem:
        for (i1, x1, y1), (i2, x2, y2) in zip(mem[split], splits[split]):
            assert i1 == i2
            np.testing.assert_array_equal(x1, x2)
            np.testing.assert_array_equal(y1, y2)
    victim = next((tmp_path / "images").glob("*.ppm"))
    victim.write_bytes(victim.read_bytes()[:-1] + b"\x00")
    with pytest.raises(IoFailure):
        load_dataset(tmp_path)


def test_splits_independent_of_sizes():
    a = generate_splits(tiny_spec(n_test=2), 0)
    b = generate_splits(tiny_spec(n_test=5), 0)
    np.testing.assert_array_equal(a["train"][0][1], b["train"][0][1])
    np.testing.assert_array_equal(a["test"][1][1], b["test"][1][1])


def test_netpbm_roundtrip(tmp_path):
    img = np.random.default_rng(0).random((5, 7, 3))
    write = tmp_path / "x.ppm"
    from segconsist.harness.io import write_pgm, write_ppm

    write_ppm(write, img)
    np.testing.assert_array_equal(read_ppm(write), quantize(img) / 255.0)
    labels = np.random.default_rng(1).integers(0, 5, (4, 6))
    write_pgm(tmp_path / "y.pgm", labels)
    np.testing.assert_array_equal(read_pgm(tmp_path / "y.pgm"), labels)
    with pytest.raises(IoFailure):
        read_pgm(write)
    with pytest.raises(IoFailure):
        read_ppm(tmp_path / "missing.ppm")


def test_model_and_perturbation_roundtrip(tmp_path):
    m = ToyConvModel(seed=9, activation="tanh", width1=4)
    save_model(tmp_path / "m.scm", m)
    m2 = load_model(tmp_path / "m.scm")
    assert m2.architecture == m.architecture
    img = np.random.default_rng(2).random((10, 10, 3))
    np.testing.assert_array_equal(m.logits(img), m2.logits(img))
    r = np.random.default_rng(3).normal(size=(4, 5, 3))
    save_perturbation(tmp_path / "r.adv", r, {"image_id": "test-0000"})
    r2, meta = load_perturbation(tmp_path / "r.adv")
    np.testing.assert_array_equal(r, r2)
    assert meta["image_id"] == "test-0000"
    with pytest.raises(IoFailure):
        load_model(tmp_path / "r.adv")


def test_csv_roundtrip_is_exact(tmp_path):
    rows = [{"seed": 0, "value": 0.1 + 0.2}, {"seed": 1, "value": 1e-300}]
    write_csv(tmp_path / "t.csv", rows, ["seed", "value"])
    back = read_csv(tmp_path / "t.csv")
    assert [float(r["value"]) for r in back] == [0.1 + 0.2, 1e-300]


def test_svg_markup():
    for svg in (bar_chart(["a", "b"], ["x"], [[0.5], [np.nan]]), heatmap(np.eye(2), ["r0", "r1"], ["c0", "c1"]),
                line_chart({"roc": ([0, 1], [0, 1])})):
        assert svg.startswith("<svg") and svg.rstrip().endswith("</svg>")


def test_boundary_mask():
    labels = np.zeros((7, 7), int)
    labels[:, 4:] = 1
    m1 = boundary_mask(labels, 1)
    assert m1[:, 3].all() and m1[:, 4].all() and not m1[:, 2].any()
    m2 = boundary_mask(labels, 2)
    assert m2[:, 2].all() and not m2[:, 1].any()


def test_config_roundtrip(tmp_path):
    cfg = ExperimentConfig(seed=4)
    d = cfg.to_dict()
    (tmp_path / "c.json").write_text(json.dumps(d))
    back = ExperimentConfig.from_json(tmp_path / "c.json")
    assert back.to_dict() == d
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"bogus": 1})
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"attacks": {"methods": ["fgsm"]}})


def test_ordered_map_preserves_order():
    assert ordered_map(abs, [-3, 1, -2]) == [3, 1, 2]
    assert ordered_map(abs, [-3, 1, -2], workers=2) == [3, 1, 2]


def test_stream_independence():
    a = substream(0, "attack", "dag", "test-0000").random(3)
    b = substream(0, "detect", "spatial", 5, "test-0000").random(3)
    assert not np.allclose(a, b)
    np.testing.assert_array_equal(a, substream(0, "attack", "dag", "test-0000").random(3))


def _fake_sets(cfg, test):
    sets = {}
    for cell in cfg.attacks.cells():
        sets[cell] = [CraftedExample(sid, *cell, np.clip(img + 0.1, 0, 1), 1.0, 0.05, 3, "done")
                      for sid, img, _ in test]
    return sets


def test_detection_grid_cardinality_and_determinism(tmp_path, constant_model):
    cfg = ExperimentConfig.from_dict({
        "dataset": {"n_train": 0, "n_calibration": 2, "n_test": 2, "scene": {"height": 90, "width": 90}},
        "attacks": {"methods": ["dag", "houdini"], "targets": ["overlay", "pure"], "adaptivity": ["none", "spatial"]},
        "detectors": {"spatial_k": [1, 5, 10, 50], "stds": []}})
    splits = generate_splits(cfg.dataset, cfg.seed)
    sets = _fake_sets(cfg, splits["test"])
    t1 = run_detection_experiment(cfg, constant_model, splits, tmp_path / "a", sets=sets)
    assert len(t1.summary) == 32
    for row in t1.scores + t1.summary:
        assert {"seed", "image_id", "attack", "detector", "parameter"} <= set(row)
    run_detection_experiment(cfg, constant_model, splits, tmp_path / "b", sets=sets)
    assert tree_digest(tmp_path / "a") == tree_digest(tmp_path / "b")
    assert len(read_csv(tmp_path / "a" / "detection.csv")) == 32


def test_detection_seed_does_not_touch_attacks(tmp_path, constant_model):
    base = {"dataset": {"n_train": 0, "n_calibration": 1, "n_test": 1, "scene": {"height": 90, "width": 90}},
            "attacks": {"methods": ["dag"], "adaptivity": ["spatial"], "iters": 3},
            "detectors": {"spatial_k": [2], "stds": [1.0]}}
    from segconsist.harness.experiments import craft_adversarial_sets

    model = ToyConvModel(seed=0)
    cfg1 = ExperimentConfig.from_dict({**base, "detect_seed": 1})
    cfg2 = ExperimentConfig.from_dict({**base, "detect_seed": 2})
    test = generate_splits(cfg1.dataset, 0)["test"]
    a = craft_adversarial_sets(cfg1, model, test)
    b = craft_adversarial_sets(cfg2, model, test)
    for k in a:
        np.testing.assert_array_equal(a[k][0].image, b[k][0].image)


def test_entropy_heatmap_constant_model(tmp_path, constant_model):
    img = np.random.default_rng(0).random((16, 16, 3))
    h = emit_entropy_heatmap(img, constant_model, K=3, s=8, out_prefix=tmp_path / "e", seed=0)
    assert np.all(h == 0)
    rows = read_csv(tmp_path / "e.csv")
    assert len(rows) == 16 and all(float(v) == 0.0 for r in rows for v in r.values())
    assert np.all(read_ppm(tmp_path / "e.ppm") == 0)


def test_transfer_matrix_shape():
    t = TransferMatrix(["a", "b"], [[1.0, 0.2], [0.1, 0.9]])
    np.testing.assert_array_equal(t.diagonal, [1.0, 0.9])
    assert t.off_diagonal_mean() == pytest.approx(0.15)
    with pytest.raises(ValueError):
        TransferMatrix(["a"], [[1.0, 0.0]])


def test_transfer_score_single_class_uses_pixel_success():
    gt = np.zeros((2, 4), int)
    tgt = gt.copy()
    tgt[:, :2] = 3
    pred = np.array([[3, 1, 0, 0], [3, 3, 0, 0]])
    assert transfer_score(pred, tgt, gt, 5) == pytest.approx(0.75)


def test_identical_models_transfer_like_themselves(small_model):
    cfg = ExperimentConfig.from_dict({"dataset": {"n_train": 0, "n_calibration": 0, "n_test": 2,
                                                  "scene": {"height": 64, "width": 64}},
                                      "transfer": {"gate": 0.0},
                                      "attacks": {"iters": 20}})
    items = generate_splits(cfg.dataset, 5)["test"]
    tm = segmentation_transfer(cfg, [small_model, small_model], items)
    assert np.all(tm.cells == tm.cells[0, 0])


def test_transfer_gate_raises(small_model):
    cfg = ExperimentConfig.from_dict({"dataset": {"n_train": 0, "n_calibration": 0, "n_test": 2,
                                                  "scene": {"height": 64, "width": 64}},
                                      "transfer": {"gate": 1.01}, "attacks": {"iters": 2}})
    items = generate_splits(cfg.dataset, 5)["test"]
    with pytest.raises(SelfAttackFailed):
        segmentation_transfer(cfg, [small_model, small_model], items)


# -- CLI ----------------------------------------------------------------------------

def _tiny_config(tmp_path):
    cfg = {"dataset": {"n_train": 6, "n_calibration": 2, "n_test": 2, "scene": {"height": 90, "width": 90}},
           "model": {"epochs": 1},
           "attacks": {"methods": ["dag"], "adaptivity": ["none"], "iters": 3},
           "detectors": {"spatial_k": [1], "stds": [3.0]},
           "entropy": {"n_images": 1, "K": 2, "s": 32}}
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(cfg))
    return str(p)


def test_cli_exit_codes(tmp_path):
    assert cli.main([]) == cli.EXIT_USAGE
    assert cli.main(["attack", "--method", "fgsm"]) == cli.EXIT_USAGE
    assert cli.main(["detect", "--calibration", "max", "--out", str(tmp_path)]) == cli.EXIT_USAGE
    assert cli.main(["detect", "--out", str(tmp_path / "nothing")]) == cli.EXIT_PRECONDITION
    cfg = _tiny_config(tmp_path)
    out = str(tmp_path / "run")
    assert cli.main(["synth", "--config", cfg, "--out", out]) == 0
    assert cli.main(["train", "--config", cfg, "--out", out]) == 0
    assert cli.main(["detect", "--config", cfg, "--out", out, "--patch-size", "8"]) == cli.EXIT_PRECONDITION


def test_cli_pipeline(tmp_path):
    cfg = _tiny_config(tmp_path)
    out = tmp_path / "run"
    assert cli.main(["synth", "--config", cfg, "--out", str(out), "--seed", "3"]) == 0
    assert cli.main(["train", "--config", cfg, "--out", str(out), "--seed", "3"]) == 0
    assert cli.main(["attack", "--config", cfg, "--out", str(out), "--iters", "3", "--gamma", "0.01"]) == 0
    adv = out / "adversarial" / "dag-overlay-none"
    assert len(list(adv.glob("*.adv"))) == 2
    assert cli.main(["detect", "--config", cfg, "--out", str(out), "--adv", str(adv), "--k", "2"]) == 0
    summary = json.loads((out / "detect" / "summary-spatial-2.json").read_text())
    assert 0.0 <= summary["auc"] <= 1.0
    assert cli.main(["entropy", "--config", cfg, "--out", str(out), "--k", "2", "--patch-size", "32"]) == 0
    assert (out / "entropy" / "test-0000_benign.ppm").exists()
    assert cli.main(["report", "--out", str(tmp_path / "empty")]) == cli.EXIT_PRECONDITION


def test_cli_eval_writes_report(tmp_path):
    cfg = _tiny_config(tmp_path)
    assert cli.main(["eval", "--config", cfg, "--out", str(tmp_path / "e")]) == 0
    for name in ("detection.csv", "scores.csv", "attacks.csv", "detection_auc.svg", "report.md",
                 "entropy/entropy.csv", "data/manifest.json", "model.scm"):
        assert (tmp_path / "e" / name).exists(), name
    assert "AUC" in (tmp_path / "e" / "report.md").read_text()
