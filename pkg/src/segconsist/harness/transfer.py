"""Cross-model transfer of targeted attacks, for segmentation and for a toy classifier control."""
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..attacks import run_attack
from ..errors import NothingLeft, SelfAttackFailed
from ..model import Adam, _augment, softmax
from ..metrics import normalized_target_miou, pixel_success_rate
from ..scenes import SceneSpec, synth_scene
from ..seeding import substream
from ..targets import make_target
from ..tensor import apply_perturbation, global_l2, linf
from .experiments import train_model
from .io import write_csv
from .svg import heatmap, write_svg


@dataclass
class TransferMatrix:
    """``cells[i][j]``: examples crafted on model ``j`` evaluated on model ``i``."""

    models: list
    cells: np.ndarray
    metric: str = "normalized_target_miou"
    counts: list = field(default_factory=list)  # examples kept per source model

    def __post_init__(self):
        self.cells = np.asarray(self.cells, dtype=np.float64)
        n = len(self.models)
        if self.cells.shape != (n, n):
            raise ValueError(f"need a {n}x{n} matrix, got {self.cells.shape}")

    @property
    def diagonal(self):
        return np.diag(self.cells).copy()

    @property
    def off_diagonal(self):
        return self.cells[~np.eye(len(self.models), dtype=bool)]

    def off_diagonal_mean(self):
        off = self.off_diagonal
        return float(off.mean()) if off.size else float("nan")

    def rows(self, seed, kind):
        return [{"seed": seed, "kind": kind, "metric": self.metric, "eval_model": self.models[i],
                 "source_model": self.models[j], "value": float(self.cells[i, j])}
                for i in range(len(self.models)) for j in range(len(self.models))]


TRANSFER_COLUMNS = ["seed", "kind", "metric", "eval_model", "source_model", "value"]


def transfer_score(pred, target, gt, n_classes, k_exclude=0):
    """Normalized target mIoU, or pixel success where the evaluated target is one class.

    With a single target class left after dropping target == ground-truth pixels,
    the mIoU would be dragged down by every wrongly predicted class whatever the
    hit rate, so the pixel success rate is the meaningful figure there.
    """
    keep = target != gt
    if not keep.any():
        raise NothingLeft("target equals ground truth on every pixel")
    if np.unique(target[keep]).size == 1:
        return pixel_success_rate(pred, target, keep)
    return normalized_target_miou(pred, target, gt, k_exclude, n_classes)


def _craft_on(cfg, model, model_id, items):
    tspec, grid = cfg.transfer, cfg.attacks
    acfg = grid.attack_config(tspec.method, cfg.detectors.patch_size)
    out = []
    for sid, img, gt in items:
        tgt = make_target(tspec.target, gt, model.n_classes, cls=grid.target_class)
        res = run_attack(tspec.method, model, img, tgt, acfg,
                         rng=substream(cfg.attack_stream_seed, "transfer", model_id, sid))
        out.append((sid, res.adversarial(img), tgt.labels, gt, res.success_rate))
    return out


def segmentation_transfer(cfg, models, items, ids=None):
    """Craft on every model, keep examples meeting the self-success gate, cross-evaluate.

    Raises :class:`SelfAttackFailed` when fewer than half of a model's
    examples reach ``cfg.transfer.gate``.
    """
    ids = list(ids) if ids is not None else [f"m{i}" for i in range(len(models))]
    gate = cfg.transfer.gate
    n = len(models)
    cells = np.zeros((n, n))
    counts = []
    for j, src in enumerate(models):
        crafted = _craft_on(cfg, src, ids[j], items)
        kept = [c for c in crafted if c[4] >= gate]
        counts.append(len(kept))
        if 2 * len(kept) < len(crafted) or not kept:
            raise SelfAttackFailed(
                f"model {ids[j]}: only {len(kept)}/{len(crafted)} examples reach {gate:.0%} self success")
        for i, ev in enumerate(models):
            vals = [transfer_score(ev.predict_labels(x), tl, gt, ev.n_classes, cfg.transfer.k_exclude)
                    for _, x, tl, gt, _ in kept]
            cells[i, j] = float(np.mean(vals))
    return TransferMatrix(ids, cells, counts=counts)


# -- toy classifier control -------------------------------------------------------

class ToyClassifier:
    """Image classifier sharing the toy backbone, read out through global average pooling.

    It is the segmentation model with the per-pixel head pinned at zero, so
    every pixel carries the same pooled logits and pixel (0, 0) serves as the
    image-level output.
    """

    def __init__(self, backbone):
        self.net = backbone
        self.net.params["wc"][...] = 0.0
        self.n_classes = backbone.n_classes

    def logits(self, img):
        return self.net.logits(img)[0, 0]

    def predict(self, img):
        return int(np.argmax(self.logits(img)))

    def _lift(self, z, fn):
        value, dvec = fn(z[0, 0])
        dz = np.zeros_like(z)
        dz[0, 0] = dvec
        return value, dz

    def input_gradient(self, img, fn):
        return self.net.input_gradient(img, lambda z: self._lift(z, fn))

    def param_gradient(self, img, fn):
        value, g = self.net.param_gradient(img, lambda z: self._lift(z, fn))
        g["wc"] = np.zeros_like(g["wc"])
        return value, g


def _xent(label):
    def fn(z):
        p = softmax(z)
        d = p.copy()
        d[label] -= 1.0
        return float(-np.log(max(p[label], 1e-300))), d
    return fn


def classification_scenes(scene, n, rng_seed, key):
    """Scenes with exactly one foreground shape; the label is that shape's class."""
    spec = SceneSpec.from_dict({**scene.to_dict(), "shapes": (1, 1), "size_frac": (0.45, 0.8)})
    out = []
    for i in range(n):
        img, labels = synth_scene(spec, substream(rng_seed, key, i))
        fg = labels[labels > 0]
        if fg.size == 0:
            continue
        out.append((img, labels, int(np.bincount(fg).argmax())))
    return out


def train_classifier(cfg, init_seed, data, log=None):
    tspec, mspec = cfg.transfer, cfg.model
    clf = ToyClassifier(mspec.build(cfg.dataset.scene.n_classes, init_seed))
    rng = substream(cfg.seed, "classifier-train", init_seed)
    opt = Adam(clf.net.params, mspec.lr)
    for epoch in range(tspec.classifier_epochs):
        order = rng.permutation(len(data))
        for start in range(0, len(order), mspec.batch_size):
            batch = order[start:start + mspec.batch_size]
            acc = {k: np.zeros_like(v) for k, v in clf.net.params.items()}
            for idx in batch:
                img, labels, y = data[idx]
                img, _ = _augment(img, labels, rng, (), None)
                _, g = clf.param_gradient(img, _xent(y))
                for k in acc:
                    acc[k] += g[k] / len(batch)
            opt.step(clf.net.params, acc)
    return clf


def classifier_attack(clf, img, target, l2_bound=0.06, gamma=0.01, iters=300):
    """Iterative targeted attack: cross-entropy toward ``target``, L-inf normalized steps, RMS budget."""
    r = np.zeros_like(img)
    for _ in range(iters):
        x = apply_perturbation(img, r)
        if clf.predict(x) == target:
            break
        _, g = clf.input_gradient(x, _xent(target))
        step = -g * (gamma / max(linf(g), 1e-30))
        nr = r + step
        if global_l2(nr) > l2_bound:
            nr *= l2_bound / global_l2(nr)
            if np.allclose(nr, r):
                break
        r = nr
    return apply_perturbation(img, r)


def classifier_transfer(cfg, seeds, log=None):
    """Cross-model targeted success of the toy classifier family."""
    tspec, grid = cfg.transfer, cfg.attacks
    scene = cfg.dataset.scene
    train = classification_scenes(scene, tspec.classifier_train, cfg.seed, "clf-train")
    test = classification_scenes(scene, tspec.classifier_test, cfg.seed, "clf-test")
    models = [train_classifier(cfg, s, train, log) for s in seeds]
    n = len(models)
    cells = np.zeros((n, n))
    counts = []
    C = scene.n_classes
    for j, src in enumerate(models):
        crafted = []
        for i, (img, _, y) in enumerate(test):
            # foreground classes only, so the target is a plausible scene label
            t = 1 + (y % (C - 1))
            adv = classifier_attack(src, img, t, grid.l2_bound, grid.gamma.get("dag", 0.01), grid.iters)
            if src.predict(adv) == t:
                crafted.append((adv, t))
        counts.append(len(crafted))
        for i, ev in enumerate(models):
            cells[i, j] = float(np.mean([ev.predict(a) == t for a, t in crafted])) if crafted else float("nan")
        if log:
            log(f"classifier m{j}: {len(crafted)}/{len(test)} self successes")
    return TransferMatrix([f"m{s}" for s in seeds], cells, metric="targeted_success", counts=counts)


def run_transferability(cfg, splits, out_dir=None, log=None, with_control=True):
    """Train one segmentation model per seed, build both transfer matrices, write CSV + heatmaps."""
    seeds = list(cfg.transfer.model_seeds)
    if len(seeds) < 2:
        raise ValueError("transferability needs at least two model seeds")
    models = []
    for s in seeds:
        m, rep = train_model(cfg, splits["train"], init_seed=s)
        if log:
            log(f"model seed {s}: pixel accuracy {rep['pixel_accuracy']:.3f}")
        models.append(m)
    items = splits["test"][:cfg.transfer.n_images]
    seg = segmentation_transfer(cfg, models, items, [f"m{s}" for s in seeds])
    clf = classifier_transfer(cfg, seeds, log) if with_control else None
    if out_dir is not None:
        out_dir = Path(out_dir)
        rows = seg.rows(cfg.seed, "segmentation") + (clf.rows(cfg.seed, "classifier") if clf else [])
        write_csv(out_dir / "transfer.csv", rows, TRANSFER_COLUMNS)
        write_svg(out_dir / "transfer_segmentation.svg",
                  heatmap(seg.cells, seg.models, seg.models, "Segmentation transfer (rows: eval, cols: source)"))
        if clf:
            write_svg(out_dir / "transfer_classifier.svg",
                      heatmap(clf.cells, clf.models, clf.models, "Classifier transfer (rows: eval, cols: source)"))
    return seg, clf
