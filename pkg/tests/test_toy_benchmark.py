"""Behaviour of trained toy models, attacks and detectors on the synthetic benchmark.

Slower than the unit tests: two models are trained once per module (a 64x64
one for the attack cases, the default 128x128 one for the detector cases).
"""
import numpy as np
import pytest

from segconsist.attacks import (AttackConfig, adaptive_scale_attack, dag_adaptive_spatial, dag_attack,
                                houdini_adaptive_spatial, houdini_attack)
from segconsist.detectors import SpatialDetectorConfig, scale_consistency_score, spatial_consistency_score
from segconsist.geometry import sample_patch
from segconsist.harness.data import boundary_mask, generate_splits
from segconsist.harness.experiments import ExperimentConfig, train_model
from segconsist.metrics import self_entropy_map
from segconsist.model import ToyConvModel, evaluate_segmentation, train_toy
from segconsist.scenes import SceneSpec, synth_dataset
from segconsist.targets import make_target

DAG = AttackConfig(gamma=0.01)
HOUDINI = AttackConfig(gamma=0.06)
N_IMAGES = 5


@pytest.fixture(scope="module")
def bench64():
    spec = SceneSpec(height=64, width=64)
    train = synth_dataset(spec, 200, 21)
    test = synth_dataset(spec, 20, 22)
    model = ToyConvModel(seed=0)
    _, report = train_toy(model, train, epochs=30, lr=0.02, rng=3, crop_range=(32, 64))
    return model, test, evaluate_segmentation(model, test)


def rectangle_target(gt, n_classes):
    """Relabel a central rectangle as background, the class the overlay experiments paint."""
    h, w = gt.shape
    rect = np.zeros_like(gt, dtype=bool)
    rect[h // 4:h // 2 + 4, w // 4:3 * w // 4] = True
    return make_target("overlay", gt, n_classes, cls=0, template=rect)


def test_trained_accuracy(bench64):
    assert bench64[2]["pixel_accuracy"] >= 0.90


def test_dag_reaches_rectangle_target(bench64):
    model, test, _ = bench64
    for img, gt in test[:N_IMAGES]:
        res = dag_attack(model, img, rectangle_target(gt, 5), DAG)
        assert res.l2 <= 0.06 + 1e-9
        assert res.success_rate >= 0.95


def test_houdini_reaches_rectangle_target_and_descends(bench64):
    model, test, _ = bench64
    for img, gt in test[:N_IMAGES]:
        res = houdini_attack(model, img, rectangle_target(gt, 5), HOUDINI)
        assert res.l2 <= 0.06 + 1e-9
        assert res.success_rate >= 0.95
        d = np.diff(res.trace_loss)
        if d.size:
            assert np.mean(d < 0) >= 0.90


@pytest.mark.parametrize("attack,cfg", [(dag_adaptive_spatial, DAG), (houdini_adaptive_spatial, HOUDINI)])
def test_adaptive_spatial_success(bench64, attack, cfg):
    model, test, _ = bench64
    rates = [attack(model, img, rectangle_target(gt, 5), 5, 32, cfg, rng=i).success_rate
             for i, (img, gt) in enumerate(test[:N_IMAGES])]
    assert np.mean(rates) >= 0.90


def _patch_success(model, adv, labels, mask, rng, n=10, s=32):
    hits, total = 0, 0
    for _ in range(n):
        u1, u2, u3, u4 = sample_patch(s, adv.shape[1], adv.shape[0], rng)
        m = mask[u1:u3, u2:u4]
        pred = model.predict_labels(adv[u1:u3, u2:u4])
        hits += int(np.sum(pred[m] == labels[u1:u3, u2:u4][m]))
        total += int(m.sum())
    return hits / max(total, 1)


def test_adaptive_spatial_fools_patches_better(bench64):
    model, test, _ = bench64
    cfg = AttackConfig(gamma=0.01, max_iters=30)
    plain, adaptive = [], []
    for i, (img, gt) in enumerate(test[:20]):
        tgt = rectangle_target(gt, 5)
        labels, mask = tgt.resolve(model.predict_labels(img), 5)
        a = dag_attack(model, img, tgt, cfg)
        b = dag_adaptive_spatial(model, img, tgt, 5, 32, cfg, rng=i)
        plain.append(_patch_success(model, a.adversarial(img), labels, mask, np.random.default_rng(1000 + i)))
        adaptive.append(_patch_success(model, b.adversarial(img), labels, mask, np.random.default_rng(1000 + i)))
    assert np.mean(adaptive) > np.mean(plain)


def test_scale_adaptive_survives_blur(bench64):
    model, test, _ = bench64
    through, joint_plain = [], []
    for img, gt in test[:N_IMAGES]:
        tgt = rectangle_target(gt, 5)
        labels, mask = tgt.resolve(model.predict_labels(img), 5)
        res = adaptive_scale_attack(model, img, tgt, 3.0, DAG)
        through.append(res.success_rate)
        joint = adaptive_scale_attack(model, img, tgt, 3.0, DAG, joint=True)
        pred = model.predict_labels(joint.adversarial(img))
        joint_plain.append(np.mean(pred[mask] == labels[mask]) if mask.any() else 1.0)
    assert np.mean(through) >= 0.85
    assert np.mean(joint_plain) >= 0.85


def test_near_identity_scale_attack_matches_plain(bench64):
    model, test, _ = bench64
    for img, gt in test[:N_IMAGES]:
        tgt = rectangle_target(gt, 5)
        a = dag_attack(model, img, tgt, DAG)
        b = adaptive_scale_attack(model, img, tgt, 0.1, DAG)
        assert abs(a.success_rate - b.success_rate) <= 0.05


# -- detectors on the default 128x128 regime ------------------------------------------

@pytest.fixture(scope="module")
def desk_model():
    cfg = ExperimentConfig()
    splits = generate_splits(cfg.dataset, cfg.seed)
    model, _ = train_model(cfg, splits["train"])
    return model, [(img, gt) for _, img, gt in splits["test"][:10]]


@pytest.fixture(scope="module")
def desk_adversarial(desk_model):
    model, items = desk_model
    return [dag_attack(model, img, make_target("overlay", gt, 5, cls=0), DAG).adversarial(img)
            for img, gt in items]


def test_benign_spatial_scores_high(desk_model):
    model, items = desk_model
    cfg = SpatialDetectorConfig(K=5, patch_size=64, bounds=(8, 16))
    scores = [spatial_consistency_score(img, model, cfg, i) for i, (img, _) in enumerate(items)]
    assert np.mean(scores) >= 0.85


def test_tiny_blur_is_consistent(desk_model):
    model, items = desk_model
    assert np.mean([scale_consistency_score(img, model, 0.1) for img, _ in items]) >= 0.95


def test_blur_separates_plain_dag(desk_model, desk_adversarial):
    model, items = desk_model
    benign = np.mean([scale_consistency_score(img, model, 3.0) for img, _ in items])
    adv = np.mean([scale_consistency_score(x, model, 3.0) for x in desk_adversarial])
    assert benign - adv >= 0.3


def test_entropy_concentrates_on_boundaries(desk_model, desk_adversarial):
    model, items = desk_model
    img, gt = items[0]
    ent = self_entropy_map(img, model, 50, 64, 0)
    edge = boundary_mask(gt, 2)
    assert ent[edge].mean() > ent[~edge].mean()
    assert self_entropy_map(desk_adversarial[0], model, 50, 64, 0).mean() > ent.mean()
