"""DAG and Houdini targeted attacks, their patch-adaptive variants, and the blur-adaptive attack.

Both attacks act on an unclamped perturbation ``r``; the model always sees
``clip(x + r, 0, 1)`` and gradients are taken with respect to that clipped
image.  Budgets use the RMS norm :func:`~segconsist.tensor.global_l2`.
"""
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy.special import ndtr

from .blur import BlurPrefixed
from .errors import ShapeMismatch, ZeroGradient
from .geometry import sample_patch
from .seeding import as_generator
from .tensor import apply_perturbation, as_image, global_l2, linf

SQRT2 = np.sqrt(2.0)
DAG_SCORES = ("logit", "prob", "logprob", "margin")
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


@dataclass
class AttackConfig:
    l2_bound: float = 0.06
    max_iters: int = 300
    gamma: float = 0.002
    adaptive_patches: int = 0
    patch_size: int = 64
    # weight on max(l2(r) - b, 0) in the Houdini objective, per perturbation entry
    l2_penalty: float = 1.0
    dag_score: str = "margin"

    def __post_init__(self):
        if not self.l2_bound > 0:
            raise ValueError("l2_bound must be > 0")
        if not self.gamma > 0:
            raise ValueError("gamma must be > 0")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.dag_score not in DAG_SCORES:
            raise ValueError(f"dag_score must be one of {DAG_SCORES}")
        if self.adaptive_patches < 0:
            raise ValueError("adaptive_patches must be >= 0")

    def to_dict(self):
        return asdict(self)


@dataclass
class AdvTarget:
    """Adversarial label map ``labels`` and the pixels ``pixels`` the attack must flip."""

    labels: np.ndarray
    pixels: Optional[np.ndarray] = None

    def resolve(self, benign_pred, n_classes):
        labels = np.asarray(self.labels)
        if labels.shape != benign_pred.shape:
            raise ShapeMismatch(f"target {labels.shape} != image {benign_pred.shape}")
        if labels.min() < 0 or labels.max() >= n_classes:
            raise ValueError("target label out of range")
        mask = labels != benign_pred if self.pixels is None else np.asarray(self.pixels, dtype=bool)
        if mask.shape != labels.shape:
            raise ShapeMismatch("target pixel mask has the wrong shape")
        return labels, mask


@dataclass
class AdvResult:
    perturbation: np.ndarray
    iterations: int
    success_rate: float
    l2: float
    trace_success: list = field(default_factory=list)
    trace_l2: list = field(default_factory=list)
    trace_loss: list = field(default_factory=list)
    target_pixels: Optional[np.ndarray] = None
    stop_reason: str = ""

    def adversarial(self, img):
        return apply_perturbation(img, self.perturbation)

    def stats(self):
        return {"iterations": self.iterations, "success_rate": self.success_rate,
                "l2": self.l2, "stop_reason": self.stop_reason}


class JointOracle:
    """Sum of several oracles' objectives; predictions come from the first member."""

    def __init__(self, members):
        self.members = list(members)
        self.n_classes = self.members[0].n_classes

    def predict_scores(self, img):
        return self.members[0].predict_scores(img)

    def predict_labels(self, img):
        return self.members[0].predict_labels(img)

    def input_gradient(self, img, objective):
        total, grad = 0.0, None
        for m in self.members:
            v, g = m.input_gradient(img, objective)
            total += v
            grad = g if grad is None else grad + g
        return total, grad


# -- objectives ---------------------------------------------------------------
# Each objective records the argmax it saw, so one forward pass per oracle call
# serves both the active-set bookkeeping and the gradient.

class DagObjective:
    """Sum of target-class scores over target pixels not yet predicted as the target.

    ``score="logit"`` uses raw logits, ``score="prob"`` softmax probabilities,
    ``score="logprob"`` log-softmax,
    which also pushes competing classes down; ``score="margin"`` uses the
    target logit minus the strongest other logit.
    """

    def __init__(self, labels, mask, score="logit"):
        if score not in DAG_SCORES:
            raise ValueError(f"unknown DAG score {score!r}; expected one of {DAG_SCORES}")
        self.labels = labels
        self.mask = mask
        self.score = score
        self.preds = []

    def __call__(self, logits):
        pred = np.argmax(logits, axis=-1)
        self.preds.append(pred)
        active = self.mask & (pred != self.labels)
        w = np.zeros_like(logits)
        r, c = np.nonzero(active)
        w[r, c, self.labels[r, c]] = 1.0
        if self.score == "logit":
            return float(np.sum(w * logits)), w
        if self.score == "margin":
            # on active pixels the prediction itself is the strongest rival
            w[r, c, pred[r, c]] -= 1.0
            return float(np.sum(w * logits)), w
        z = logits - logits.max(axis=-1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
        p = np.exp(logp)
        if self.score == "prob":
            pt = np.sum(w * p, axis=-1, keepdims=True)
            return float(pt.sum()), pt * (w - p * active[..., None])
        return float(np.sum(w * logp)), w - p * active[..., None]

    def all_fooled(self):
        return all(not np.any(self.mask & (p != self.labels)) for p in self.preds)


def houdini_terms(logits, labels, mask):
    """Per-pixel Houdini surrogate and its gradient w.r.t. the logits.

    ``Phi((g_pred - g_target) / sqrt(2)) * [pred != target]`` with ``Phi`` the
    standard normal CDF and ``g`` the logits.  Pixels outside ``mask`` or
    already at their target contribute nothing.
    """
    pred = np.argmax(logits, axis=-1)
    g_pred = np.take_along_axis(logits, pred[..., None], axis=-1)[..., 0]
    g_tgt = np.take_along_axis(logits, labels[..., None], axis=-1)[..., 0]
    task = (mask & (pred != labels)).astype(np.float64)
    z = (g_pred - g_tgt) / SQRT2
    loss = ndtr(z) * task
    dz = _INV_SQRT_2PI * np.exp(-0.5 * z * z) * task / SQRT2
    grad = np.zeros_like(logits)
    r, c = np.nonzero(task)
    grad[r, c, pred[r, c]] += dz[r, c]
    grad[r, c, labels[r, c]] -= dz[r, c]
    return loss, grad, pred


class HoudiniObjective:
    def __init__(self, labels, mask):
        self.labels = labels
        self.mask = mask
        self.preds = []

    def __call__(self, logits):
        loss, grad, pred = houdini_terms(logits, self.labels, self.mask)
        self.preds.append(pred)
        return float(loss.sum()), grad

    def all_fooled(self):
        return all(not np.any(self.mask & (p != self.labels)) for p in self.preds)


def houdini_loss(logits, labels, mask=None):
    labels = np.asarray(labels)
    mask = np.ones(labels.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    return float(houdini_terms(logits, labels, mask)[0].sum())


# -- attack loops -------------------------------------------------------------

def _predict(model, img):
    if hasattr(model, "predict_labels"):
        return model.predict_labels(img)
    return np.argmax(model.predict_scores(img), axis=-1)


def _prepare(model, img, target):
    img = as_image(img)
    labels, mask = target.resolve(_predict(model, img), model.n_classes)
    return img, labels, mask


def _success(pred, labels, mask):
    n = int(mask.sum())
    return 1.0 if n == 0 else float(np.mean(pred[mask] == labels[mask]))


def _patch_gradients(model, xm, labels, mask, K, s, rng, make_objective, grad):
    H, W = labels.shape
    for _ in range(K):
        u1, u2, u3, u4 = sample_patch(s, W, H, rng)
        obj = make_objective(labels[u1:u3, u2:u4], mask[u1:u3, u2:u4])
        _, g = model.input_gradient(xm[u1:u3, u2:u4], obj)
        grad[u1:u3, u2:u4] += g


def _clip_step_to_budget(r, step, b):
    """Largest ``a`` in [0, 1] with ``l2(r + a * step) <= b``."""
    n = r.size
    A = float(np.sum(step * step)) / n
    B = 2.0 * float(np.sum(r * step)) / n
    Cq = float(np.sum(r * r)) / n - b * b
    if A == 0:
        return 1.0
    disc = max(B * B - 4 * A * Cq, 0.0)
    return float(np.clip((-B + np.sqrt(disc)) / (2 * A), 0.0, 1.0))


def _dag(model, img, target, cfg, K, s, rng):
    img, labels, mask = _prepare(model, img, target)
    rng = as_generator(rng)
    r = np.zeros_like(img)
    res = AdvResult(r, 0, 0.0, 0.0, target_pixels=mask)
    m = 0
    while m < cfg.max_iters and global_l2(r) < cfg.l2_bound:
        xm = apply_perturbation(img, r)
        obj = DagObjective(labels, mask, cfg.dag_score)
        _, grad = model.input_gradient(xm, obj)
        res.trace_success.append(_success(obj.preds[0], labels, mask))
        res.trace_l2.append(global_l2(r))
        if obj.all_fooled():
            res.stop_reason = "all-fooled"
            break
        if K:
            _patch_gradients(model, xm, labels, mask, K, s, rng,
                             lambda lab, msk: DagObjective(lab, msk, cfg.dag_score), grad)
        norm = linf(grad)
        if norm == 0:
            res.perturbation = r
            _finish(model, img, labels, mask, res, m)
            raise ZeroGradient("DAG gradient vanished with target pixels remaining", res)
        step = (cfg.gamma / norm) * grad
        a = _clip_step_to_budget(r, step, cfg.l2_bound)
        r = r + a * step
        m += 1
        if a < 1.0:
            res.stop_reason = "l2-bound"
            break
    else:
        res.stop_reason = "max-iters" if m >= cfg.max_iters else "l2-bound"
    res.perturbation = r
    return _finish(model, img, labels, mask, res, m)


def _finish(model, img, labels, mask, res, m):
    res.iterations = m
    res.success_rate = _success(_predict(model, apply_perturbation(img, res.perturbation)), labels, mask)
    res.l2 = global_l2(res.perturbation)
    return res


def _houdini(model, img, target, cfg, K, s, rng):
    img, labels, mask = _prepare(model, img, target)
    rng = as_generator(rng)
    r = np.zeros_like(img)
    best_r, best_success = r, -1.0
    res = AdvResult(r, 0, 0.0, 0.0, target_pixels=mask)
    weight = cfg.l2_penalty * r.size
    m = 0
    while m < cfg.max_iters:
        xm = apply_perturbation(img, r)
        obj = HoudiniObjective(labels, mask)
        loss, grad = model.input_gradient(xm, obj)
        l2 = global_l2(r)
        success = _success(obj.preds[0], labels, mask)
        res.trace_success.append(success)
        res.trace_l2.append(l2)
        res.trace_loss.append(loss)
        if l2 <= cfg.l2_bound and success > best_success:
            best_r, best_success = r, success
        if obj.all_fooled() and l2 <= cfg.l2_bound:
            res.stop_reason = "all-fooled"
            break
        if l2 > cfg.l2_bound:
            # d/dr max(l2(r) - b, 0) = r / (n * l2(r))
            grad = grad + weight * r / (r.size * l2)
        if K:
            _patch_gradients(model, xm, labels, mask, K, s, rng, HoudiniObjective, grad)
        norm = linf(grad)
        if norm == 0:
            res.perturbation = best_r
            _finish(model, img, labels, mask, res, m)
            raise ZeroGradient("Houdini gradient vanished with target pixels remaining", res)
        r = r - (cfg.gamma / norm) * grad
        m += 1
    else:
        res.stop_reason = "max-iters"
        xm = apply_perturbation(img, r)
        if global_l2(r) <= cfg.l2_bound and _success(_predict(model, xm), labels, mask) > best_success:
            best_r = r
    # the soft penalty can leave r slightly outside the ball; report the best in-budget iterate
    res.perturbation = best_r
    return _finish(model, img, labels, mask, res, m)


def dag_attack(model, img, target, cfg=None):
    cfg = cfg or AttackConfig()
    return _dag(model, img, target, cfg, 0, cfg.patch_size, None)


def houdini_attack(model, img, target, cfg=None):
    cfg = cfg or AttackConfig()
    return _houdini(model, img, target, cfg, 0, cfg.patch_size, None)


def dag_adaptive_spatial(model, img, target, K, s, cfg=None, rng=None):
    """DAG that also attacks ``K`` fresh random ``s x s`` patches every iteration."""
    cfg = cfg or AttackConfig()
    return _dag(model, img, target, cfg, K, s, rng)


def houdini_adaptive_spatial(model, img, target, K, s, cfg=None, rng=None):
    cfg = cfg or AttackConfig()
    return _houdini(model, img, target, cfg, K, s, rng)


def adaptive_scale_attack(model, img, target, std, cfg=None, base="dag", joint=False):
    """Attack ``model(blur_std(x))`` so the target survives blurring.

    ``std`` may be a single value or a sequence; with several values, or with
    ``joint=True`` (which adds the unblurred model), the objectives are summed.
    """
    cfg = cfg or AttackConfig()
    stds = [std] if np.isscalar(std) else list(std)
    members = [BlurPrefixed(model, s) for s in stds]
    if joint:
        members.append(model)
    oracle = members[0] if len(members) == 1 else JointOracle(members)
    if base == "dag":
        return _dag(oracle, img, target, cfg, 0, cfg.patch_size, None)
    if base == "houdini":
        return _houdini(oracle, img, target, cfg, 0, cfg.patch_size, None)
    raise ValueError(f"unknown base attack {base!r}")


def run_attack(method, model, img, target, cfg=None, adaptive="none", k=0, std=3.0, rng=None):
    """Dispatch by name: ``method`` in {dag, houdini}, ``adaptive`` in {none, spatial, scale}."""
    cfg = cfg or AttackConfig()
    if method not in ("dag", "houdini"):
        raise ValueError(f"unknown attack method {method!r}")
    if adaptive == "none":
        return (dag_attack if method == "dag" else houdini_attack)(model, img, target, cfg)
    if adaptive == "spatial":
        fn = dag_adaptive_spatial if method == "dag" else houdini_adaptive_spatial
        return fn(model, img, target, k, cfg.patch_size, cfg, rng)
    if adaptive == "scale":
        return adaptive_scale_attack(model, img, target, std, cfg, base=method)
    raise ValueError(f"unknown adaptivity {adaptive!r}")
