"""Experiment configuration and the detection / entropy pipelines.

Every random draw comes from :func:`~segconsist.seeding.substream` keyed by
what it is for (attack, detection, training, scene), so outputs do not depend
on task order or worker count, and attack and detection streams never meet.
"""
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from ..attacks import AttackConfig, run_attack
from ..detectors import SpatialDetectorConfig, report_from_scores, scale_consistency_score, spatial_consistency_score
from ..errors import EmptyDataset, IoFailure
from ..metrics import self_entropy_map
from ..model import ToyConvModel, train_toy
from ..seeding import substream
from ..targets import TARGET_KINDS, make_target
from .data import DatasetSpec, as_pairs, boundary_mask
from .io import write_csv, write_json, write_ppm
from .svg import bar_chart, colormap, write_svg

METHODS = ("dag", "houdini")
ADAPTIVITY = ("none", "spatial", "scale")


@dataclass
class ModelSpec:
    width1: int = 8
    width2: int = 8
    activation: str = "relu"
    context: str = "global"
    in_scale: float = 4.0
    init_seed: int = 0
    epochs: int = 12
    lr: float = 0.02
    batch_size: int = 8
    crop_range: Optional[tuple] = (48, 96)
    blur_stds: tuple = (0.5, 1.0)

    def build(self, n_classes, init_seed=None, backend=None):
        return ToyConvModel(n_classes=n_classes, width1=self.width1, width2=self.width2,
                            context=self.context, in_scale=self.in_scale, activation=self.activation,
                            seed=self.init_seed if init_seed is None else init_seed, backend=backend)


@dataclass
class AttackGrid:
    methods: tuple = METHODS
    targets: tuple = ("overlay",)
    adaptivity: tuple = ADAPTIVITY
    target_class: int = 0
    # per-method step size; the single-attack CLI default is AttackConfig.gamma
    gamma: dict = field(default_factory=lambda: {"dag": 0.01, "houdini": 0.06})
    l2_bound: float = 0.06
    iters: int = 300
    dag_score: str = "margin"
    attacker_k: int = 5  # patches per iteration for the spatial-adaptive attacker
    adaptive_std: float = 3.0
    n_images: Optional[int] = None  # test images attacked per (method, target, adaptivity); None = all
    n_adaptive_images: Optional[int] = None  # cap for adaptive cells, which cost more per image

    def __post_init__(self):
        for m in self.methods:
            if m not in METHODS:
                raise ValueError(f"unknown method {m!r}")
        for t in self.targets:
            if t not in TARGET_KINDS:
                raise ValueError(f"unknown target {t!r}")
        for a in self.adaptivity:
            if a not in ADAPTIVITY:
                raise ValueError(f"unknown adaptivity {a!r}")

    def attack_config(self, method, patch_size):
        return AttackConfig(l2_bound=self.l2_bound, max_iters=self.iters, gamma=self.gamma[method],
                            patch_size=patch_size, dag_score=self.dag_score)

    def cells(self):
        return [(m, t, a) for m in self.methods for t in self.targets for a in self.adaptivity]


@dataclass
class DetectorGrid:
    spatial_k: tuple = (1, 5, 10, 50)
    patch_size: int = 64
    bounds: tuple = (8, 16)
    stds: tuple = (0.5, 3.0, 5.0)
    calibration: str = "min"

    def detectors(self):
        """``[(detector, parameter), ...]`` in report order."""
        return [("spatial", k) for k in self.spatial_k] + [("scale", s) for s in self.stds]


@dataclass
class EntropySpec:
    n_images: int = 2
    K: int = 50
    s: int = 64


@dataclass
class TransferSpec:
    model_seeds: tuple = (0, 1, 2)
    method: str = "dag"
    target: str = "overlay"
    n_images: int = 10
    gate: float = 0.95
    k_exclude: int = 0
    # toy-classifier control
    classifier_epochs: int = 15
    classifier_train: int = 150
    classifier_test: int = 20


_SECTIONS = {"dataset": DatasetSpec, "model": ModelSpec, "attacks": AttackGrid,
             "detectors": DetectorGrid, "entropy": EntropySpec, "transfer": TransferSpec}


@dataclass
class ExperimentConfig:
    seed: int = 0
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    model: ModelSpec = field(default_factory=ModelSpec)
    attacks: AttackGrid = field(default_factory=AttackGrid)
    detectors: DetectorGrid = field(default_factory=DetectorGrid)
    entropy: EntropySpec = field(default_factory=EntropySpec)
    transfer: TransferSpec = field(default_factory=TransferSpec)
    # optional overrides so attack and detection seeds can be varied independently
    attack_seed: Optional[int] = None
    detect_seed: Optional[int] = None
    workers: int = 1
    record_runtime: bool = False  # wall-clock columns make reruns differ byte-wise

    def __post_init__(self):
        for name, cls in _SECTIONS.items():
            v = getattr(self, name)
            if isinstance(v, dict):
                setattr(self, name, cls.from_dict(v) if hasattr(cls, "from_dict") else cls(**v))

    @property
    def attack_stream_seed(self):
        return self.seed if self.attack_seed is None else self.attack_seed

    @property
    def detect_stream_seed(self):
        return self.seed if self.detect_seed is None else self.detect_seed

    def to_dict(self):
        d = {"seed": self.seed, "attack_seed": self.attack_seed, "detect_seed": self.detect_seed,
             "workers": self.workers, "record_runtime": self.record_runtime,
             "dataset": self.dataset.to_dict()}
        for name in ("model", "attacks", "detectors", "entropy", "transfer"):
            d[name] = _jsonable(asdict(getattr(self, name)))
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        unknown = set(d) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        for name, sub in _SECTIONS.items():
            if name in d and isinstance(d[name], dict) and sub is not DatasetSpec:
                d[name] = sub(**{k: tuple(v) if isinstance(v, list) else v for k, v in d[name].items()})
        return cls(**d)

    @classmethod
    def from_json(cls, path):
        try:
            with open(path, "r", encoding="utf-8") as fh:
                return cls.from_dict(json.load(fh))
        except OSError as exc:
            raise IoFailure(f"cannot read config {path}: {exc}") from exc


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def ordered_map(fn, tasks, workers=1):
    """``[fn(t) for t in tasks]``, optionally on a process pool; order is always preserved."""
    tasks = list(tasks)
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))


# -- training -------------------------------------------------------------------

def train_model(cfg, train_items, init_seed=None, log=None):
    """Build and fit the toy model described by ``cfg.model``; returns ``(model, report)``."""
    if not train_items:
        raise EmptyDataset("no training scenes")
    spec = cfg.model
    seed = spec.init_seed if init_seed is None else init_seed
    model = spec.build(cfg.dataset.scene.n_classes, seed)
    return train_toy(model, as_pairs(train_items), epochs=spec.epochs, lr=spec.lr,
                     rng=substream(cfg.seed, "train", seed), batch_size=spec.batch_size,
                     blur_stds=spec.blur_stds, crop_range=spec.crop_range, log=log)


# -- attacks --------------------------------------------------------------------

@dataclass
class CraftedExample:
    image_id: str
    method: str
    target: str
    adaptivity: str
    image: np.ndarray  # the adversarial image clip(x + r, 0, 1)
    success_rate: float
    l2: float
    iterations: int
    stop_reason: str
    runtime: float = 0.0


def _attack_task(args):
    model, grid, det, seed, method, target, adaptivity, sid, img, gt = args
    tgt = make_target(target, gt, model.n_classes, cls=grid.target_class)
    cfg = grid.attack_config(method, det.patch_size)
    rng = substream(seed, "attack", method, target, adaptivity, sid)
    t0 = time.perf_counter()
    res = run_attack(method, model, img, tgt, cfg, adaptive=adaptivity, k=grid.attacker_k,
                     std=grid.adaptive_std, rng=rng)
    return CraftedExample(sid, method, target, adaptivity, res.adversarial(img), res.success_rate,
                          res.l2, res.iterations, res.stop_reason, time.perf_counter() - t0)


def craft_adversarial_sets(cfg, model, test_items, log=None):
    """``{(method, target, adaptivity): [CraftedExample, ...]}`` over the attack grid."""
    grid = cfg.attacks
    tasks, keys = [], []
    for cell in grid.cells():
        n = grid.n_images
        if cell[2] != "none" and grid.n_adaptive_images is not None:
            n = grid.n_adaptive_images if n is None else min(n, grid.n_adaptive_images)
        for sid, img, gt in test_items[:n]:
            tasks.append((model, grid, cfg.detectors, cfg.attack_stream_seed, *cell, sid, img, gt))
            keys.append(cell)
    results = ordered_map(_attack_task, tasks, cfg.workers)
    sets = {cell: [] for cell in grid.cells()}
    for key, ex in zip(keys, results):
        sets[key].append(ex)
    if log:
        for cell, exs in sets.items():
            if exs:
                log(f"attack {'/'.join(cell)}: {len(exs)} images, "
                    f"mean success {np.mean([e.success_rate for e in exs]):.3f}")
    return sets


def attack_rows(cfg, sets):
    rows = []
    for (method, target, adaptivity), exs in sets.items():
        for e in exs:
            row = {"seed": cfg.seed, "image_id": e.image_id, "attack": method, "target": target,
                   "adaptivity": adaptivity, "success_rate": e.success_rate, "l2": e.l2,
                   "iterations": e.iterations, "stop_reason": e.stop_reason}
            if cfg.record_runtime:
                row["runtime_s"] = e.runtime
            rows.append(row)
    return rows


ATTACK_COLUMNS = ["seed", "image_id", "attack", "target", "adaptivity", "success_rate", "l2",
                  "iterations", "stop_reason"]


# -- detection ------------------------------------------------------------------

def _score_task(args):
    model, det, seed, set_key, sid, img = args
    out = []
    for detector, param in det.detectors():
        t0 = time.perf_counter()
        if detector == "spatial":
            sc = SpatialDetectorConfig(K=param, patch_size=det.patch_size, bounds=det.bounds)
            score = spatial_consistency_score(img, model, sc, substream(seed, "detect", "spatial", param,
                                                                        set_key, sid))
        else:
            score = scale_consistency_score(img, model, param)
        out.append((detector, param, score, time.perf_counter() - t0))
    return out


def score_images(cfg, model, named_images, set_key):
    """All detector scores for ``[(image_id, image), ...]``, as ``{(detector, param): [score, ...]}``."""
    tasks = [(model, cfg.detectors, cfg.detect_stream_seed, set_key, sid, img) for sid, img in named_images]
    per_image = ordered_map(_score_task, tasks, cfg.workers)
    table = {d: [] for d in cfg.detectors.detectors()}
    runtime = {d: 0.0 for d in table}
    for scores in per_image:
        for detector, param, score, dt in scores:
            table[(detector, param)].append(score)
            runtime[(detector, param)] += dt
    return table, runtime


@dataclass
class DetectionTables:
    scores: list  # per-image rows
    summary: list  # one row per (attack cell) x (detector, parameter)
    attacks: list  # per-image attack outcome rows

    def auc(self, attack, target, adaptivity, detector, parameter):
        for r in self.summary:
            if (r["attack"], r["target"], r["adaptivity"], r["detector"]) == (attack, target, adaptivity, detector) \
                    and float(r["parameter"]) == float(parameter):
                return r["auc"]
        raise KeyError((attack, target, adaptivity, detector, parameter))


SCORE_COLUMNS = ["seed", "image_id", "split", "attack", "target", "adaptivity", "detector", "parameter", "score"]
SUMMARY_COLUMNS = ["seed", "image_id", "attack", "target", "adaptivity", "detector", "parameter", "auc",
                   "detection_rate", "false_positive_rate", "threshold", "calibration", "n_benign",
                   "n_adversarial", "mean_attack_success"]


def run_detection_experiment(cfg, model, splits, out_dir=None, sets=None, log=None):
    """Score benign, calibration and adversarial images under every detector setting.

    ``sets`` may hold precomputed adversarial sets (as from
    :func:`craft_adversarial_sets`).  When ``out_dir`` is given, writes
    ``attacks.csv``, ``scores.csv``, ``detection.csv`` and ``detection_auc.svg``.
    """
    test, calib = splits["test"], splits["calibration"]
    if not test or not calib:
        raise EmptyDataset("detection needs non-empty test and calibration splits")
    if sets is None:
        sets = craft_adversarial_sets(cfg, model, test, log)
    seed = cfg.seed
    det_list = cfg.detectors.detectors()
    benign, rt_b = score_images(cfg, model, [(sid, img) for sid, img, _ in test], "benign")
    cal, _ = score_images(cfg, model, [(sid, img) for sid, img, _ in calib], "calibration")
    score_rows = []
    for split, items, table in (("test", test, benign), ("calibration", calib, cal)):
        for d in det_list:
            for (sid, _, _), s in zip(items, table[d]):
                score_rows.append({"seed": seed, "image_id": sid, "split": split, "attack": "none",
                                   "target": "none", "adaptivity": "none", "detector": d[0],
                                   "parameter": d[1], "score": s})
    summary = []
    for cell, exs in sets.items():
        if not exs:
            continue
        method, target, adaptivity = cell
        adv, rt_a = score_images(cfg, model, [(e.image_id, e.image) for e in exs], "/".join(cell))
        ids = {e.image_id for e in exs}
        for d in det_list:
            for e, s in zip(exs, adv[d]):
                score_rows.append({"seed": seed, "image_id": e.image_id, "split": "test", "attack": method,
                                   "target": target, "adaptivity": adaptivity, "detector": d[0],
                                   "parameter": d[1], "score": s})
            # benign side of the ROC uses the same test images that were attacked
            b = [s for (sid, _, _), s in zip(test, benign[d]) if sid in ids]
            rep = report_from_scores(b, adv[d], cal[d], cfg.detectors.calibration)
            row = {"seed": seed, "image_id": "all", "attack": method, "target": target,
                   "adaptivity": adaptivity, "detector": d[0], "parameter": d[1], "auc": rep.auc,
                   "detection_rate": rep.detection_rate, "false_positive_rate": rep.false_positive_rate,
                   "threshold": rep.threshold, "calibration": rep.calibration,
                   "n_benign": len(b), "n_adversarial": len(exs),
                   "mean_attack_success": float(np.mean([e.success_rate for e in exs]))}
            if cfg.record_runtime:
                row["runtime_s"] = rt_a[d] + rt_b[d]
            summary.append(row)
            if log:
                log(f"{method}/{target}/{adaptivity} {d[0]}={d[1]}: auc {rep.auc:.3f}")
    tables = DetectionTables(score_rows, summary, attack_rows(cfg, sets))
    if out_dir is not None:
        write_detection_outputs(cfg, tables, out_dir)
    return tables


def write_detection_outputs(cfg, tables, out_dir):
    out_dir = Path(out_dir)
    extra = ["runtime_s"] if cfg.record_runtime else []
    write_csv(out_dir / "attacks.csv", tables.attacks, ATTACK_COLUMNS + extra)
    write_csv(out_dir / "scores.csv", tables.scores, SCORE_COLUMNS)
    write_csv(out_dir / "detection.csv", tables.summary, SUMMARY_COLUMNS + extra)
    write_svg(out_dir / "detection_auc.svg", detection_chart(tables.summary))


def detection_chart(summary):
    groups = []
    series = []
    for r in summary:
        g = f"{r['attack']}/{r['target']}/{r['adaptivity']}"
        s = f"{r['detector']} {r['parameter']}"
        if g not in groups:
            groups.append(g)
        if s not in series:
            series.append(s)
    values = np.full((len(groups), len(series)), np.nan)
    for r in summary:
        values[groups.index(f"{r['attack']}/{r['target']}/{r['adaptivity']}"),
               series.index(f"{r['detector']} {r['parameter']}")] = float(r["auc"])
    return bar_chart(groups, series, values, title="Detection AUC", ymax=1.0)


# -- entropy heatmaps -----------------------------------------------------------

def emit_entropy_heatmap(img, model, K, s, out_prefix, seed=0):
    """Write the per-pixel self-entropy map as ``<prefix>.csv`` and a colour ``<prefix>.ppm``."""
    emap = self_entropy_map(img, model, K, s, seed)
    prefix = Path(out_prefix)
    rows = [{str(c): float(v) for c, v in enumerate(row)} for row in emap]
    write_csv(prefix.with_suffix(".csv"), rows, [str(c) for c in range(emap.shape[1])])
    write_ppm(prefix.with_suffix(".ppm"), colormap(emap, 0.0, np.log(model.n_classes)))
    return emap


ENTROPY_COLUMNS = ["seed", "image_id", "kind", "attack", "detector", "parameter", "mean_entropy",
                   "boundary_mean", "interior_mean"]


def entropy_study(cfg, model, test_items, sets, out_dir, method="dag", target=None):
    """Heatmaps for a few benign test images and their non-adaptive adversarial versions."""
    target = target or cfg.attacks.targets[0]
    spec = cfg.entropy
    adv = {e.image_id: e.image for e in sets.get((method, target, "none"), [])}
    rows = []
    for sid, img, gt in test_items[:spec.n_images]:
        edge = boundary_mask(gt, 2)
        versions = [("benign", img)] + ([("adversarial", adv[sid])] if sid in adv else [])
        for kind, x in versions:
            emap = emit_entropy_heatmap(x, model, spec.K, spec.s, Path(out_dir) / f"{sid}_{kind}",
                                        substream(cfg.detect_stream_seed, "entropy", kind, sid))
            rows.append({"seed": cfg.seed, "image_id": sid, "kind": kind,
                         "attack": method if kind == "adversarial" else "none",
                         "detector": "self-entropy", "parameter": spec.K,
                         "mean_entropy": float(emap.mean()),
                         "boundary_mean": float(emap[edge].mean()) if edge.any() else float("nan"),
                         "interior_mean": float(emap[~edge].mean()) if (~edge).any() else float("nan")})
    write_csv(Path(out_dir) / "entropy.csv", rows, ENTROPY_COLUMNS)
    return rows
