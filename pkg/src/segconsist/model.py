"""Toy convolutional segmenter with an exact hand-written backward pass.

Architecture (channel-first internally)::

    x -> (x - in_mean) * in_scale -> reflect-pad -> conv5x5 -> act -> reflect-pad -> conv5x5 -> act = h
    logits[c, i, j] = wc[c] . h[:, i, j] + wg[c] . mean_ij(h) + bc[c]
    scores = softmax(logits) over classes

``act`` is ``relu`` (default) or ``tanh``.  The ``wg`` term feeds the pooled feature of the whole input back to every
pixel, so a prediction depends on the entire raster it is computed on, not
just its 9x9 convolutional window.  ``context="none"`` drops that term.

Any object with ``n_classes``, ``predict_scores(img)``, ``logits(img)`` and
``input_gradient(img, objective)`` can stand in for this model.  An objective
is a callable ``objective(logits) -> (value, dvalue_dlogits)`` on ``(H, W, C)``
logits; see :class:`ScoreObjective` and :func:`cross_entropy`.
"""
import copy
import math

import numpy as np

from .errors import EmptyDataset, ShapeMismatch
from .kernels import conv_input_grad, conv_valid, conv_weight_grad, reflect_pad, reflect_pad_grad
from .seeding import as_generator
from .tensor import as_image

KERNEL = 5
PAD = KERNEL // 2
ACTIVATIONS = ("tanh", "relu")


def _activate(a, kind):
    """Return ``(act(a), act'(a))``."""
    if kind == "tanh":
        h = np.tanh(a)
        return h, 1.0 - h * h
    return np.maximum(a, 0.0), (a > 0).astype(np.float64)


def softmax(z, axis=-1):
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


class ScoreObjective:
    """Weighted sum of per-pixel class scores.

    ``weights`` is ``(H, W, C)``.  ``kind="logit"`` uses pre-softmax scores,
    ``kind="prob"`` the normalized ones.
    """

    def __init__(self, weights, kind="logit"):
        if kind not in ("logit", "prob"):
            raise ValueError(f"unknown score kind {kind!r}")
        self.weights = np.asarray(weights, dtype=np.float64)
        self.kind = kind

    def __call__(self, logits):
        if logits.shape != self.weights.shape:
            raise ShapeMismatch(f"objective shape {self.weights.shape} != logits {logits.shape}")
        w = self.weights
        if self.kind == "logit":
            return float(np.sum(w * logits)), w
        p = softmax(logits)
        inner = np.sum(w * p, axis=-1, keepdims=True)
        return float(np.sum(w * p)), p * (w - inner)

    @classmethod
    def pixel_class(cls, shape, pixels, classes, kind="logit"):
        """Sum of the score of ``classes[n]`` at ``pixels[n]``."""
        w = np.zeros(shape)
        pixels = np.asarray(pixels, dtype=np.int64).reshape(-1, 2)
        np.add.at(w, (pixels[:, 0], pixels[:, 1], np.asarray(classes, dtype=np.int64)), 1.0)
        return cls(w, kind)

    def __add__(self, other):
        if not isinstance(other, ScoreObjective) or other.kind != self.kind:
            return NotImplemented
        return ScoreObjective(self.weights + other.weights, self.kind)

    def __mul__(self, a):
        return ScoreObjective(self.weights * a, self.kind)

    __rmul__ = __mul__


def cross_entropy(labels, mask=None):
    """Mean per-pixel cross-entropy against integer ``labels`` (optionally masked)."""
    labels = np.asarray(labels)

    def objective(logits):
        H, W, C = logits.shape
        m = np.ones((H, W), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
        n = max(int(m.sum()), 1)
        z = logits - logits.max(axis=-1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
        picked = np.take_along_axis(logp, labels[..., None], axis=-1)[..., 0]
        value = -float(picked[m].sum()) / n
        g = np.exp(logp)
        np.put_along_axis(g, labels[..., None],
                          np.take_along_axis(g, labels[..., None], axis=-1) - 1.0, axis=-1)
        g *= m[..., None] / n
        return value, g

    return objective


class ToyConvModel:
    def __init__(self, n_classes=5, in_channels=3, width1=8, width2=8, context="global",
                 in_mean=0.5, in_scale=4.0, seed=0, backend=None, activation="relu", init_gain=1.0):
        if context not in ("global", "none"):
            raise ValueError(f"unknown context mode {context!r}")
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.n_classes = n_classes
        self.in_channels = in_channels
        self.width1 = width1
        self.width2 = width2
        self.context = context
        self.in_mean = float(in_mean)
        self.in_scale = float(in_scale)
        self.seed = seed
        self.backend = backend
        self.activation = activation
        # scales the random init of both conv stages; training only reshapes
        # the directions the data exercises, so the rest keeps this gain
        self.init_gain = float(init_gain)
        self.params = self._init_params(as_generator(seed))

    def _init_params(self, rng):
        k2 = KERNEL * KERNEL
        f1, f2, c = self.width1, self.width2, self.n_classes
        g = self.init_gain
        p = {
            "w1": rng.normal(0.0, g / math.sqrt(self.in_channels * k2), (f1, self.in_channels, KERNEL, KERNEL)),
            "b1": np.zeros(f1),
            "w2": rng.normal(0.0, g / math.sqrt(f1 * k2), (f2, f1, KERNEL, KERNEL)),
            "b2": np.zeros(f2),
            "wc": rng.normal(0.0, 1.0 / math.sqrt(f2), (c, f2)),
            "bc": np.zeros(c),
        }
        if self.context == "global":
            p["wg"] = rng.normal(0.0, 1.0 / math.sqrt(f2), (c, f2))
        return p

    # -- bookkeeping ---------------------------------------------------------

    @property
    def architecture(self):
        return {"kind": "toy-conv", "n_classes": self.n_classes, "in_channels": self.in_channels,
                "width1": self.width1, "width2": self.width2, "kernel": KERNEL,
                "context": self.context, "in_mean": self.in_mean, "in_scale": self.in_scale,
                "activation": self.activation, "init_gain": self.init_gain}

    def n_params(self):
        return int(sum(v.size for v in self.params.values()))

    def copy(self):
        return copy.deepcopy(self)

    @classmethod
    def zeros_like(cls, other):
        m = other.copy()
        for v in m.params.values():
            v[...] = 0.0
        return m

    # -- forward / backward --------------------------------------------------

    def _check(self, img):
        img = as_image(img)
        if img.shape[2] != self.in_channels:
            raise ShapeMismatch(f"model expects {self.in_channels} channels, got {img.shape[2]}")
        if min(img.shape[:2]) <= PAD:
            raise ShapeMismatch(f"image {img.shape[:2]} too small for reflect padding")
        return img

    def _forward(self, img):
        p = self.params
        x = (np.ascontiguousarray(img.transpose(2, 0, 1)) - self.in_mean) * self.in_scale
        xp = reflect_pad(x, PAD)
        a1 = conv_valid(xp, p["w1"], self.backend) + p["b1"][:, None, None]
        h1, d1 = _activate(a1, self.activation)
        h1p = reflect_pad(h1, PAD)
        a2 = conv_valid(h1p, p["w2"], self.backend) + p["b2"][:, None, None]
        h2, d2 = _activate(a2, self.activation)
        f2, H, W = h2.shape
        z = np.tensordot(p["wc"], h2, axes=(1, 0)) + p["bc"][:, None, None]
        if self.context == "global":
            z = z + (p["wg"] @ h2.reshape(f2, -1).mean(axis=1))[:, None, None]
        cache = (xp, h1p, h2, d1, d2)
        return np.ascontiguousarray(z.transpose(1, 2, 0)), cache

    def _backward(self, dz_hwc, cache, need_params=False):
        p = self.params
        xp, h1p, h2, d1, d2 = cache
        f2, H, W = h2.shape
        dz = np.ascontiguousarray(dz_hwc.transpose(2, 0, 1))
        dz2 = dz.reshape(dz.shape[0], -1)
        grads = {}
        dh2 = (p["wc"].T @ dz2).reshape(f2, H, W)
        if need_params:
            grads["wc"] = dz2 @ h2.reshape(f2, -1).T
            grads["bc"] = dz2.sum(axis=1)
        if self.context == "global":
            dz_sum = dz2.sum(axis=1)
            dh2 += (p["wg"].T @ dz_sum)[:, None, None] / (H * W)
            if need_params:
                grads["wg"] = np.outer(dz_sum, h2.reshape(f2, -1).mean(axis=1))
        da2 = dh2 * d2
        dh1 = reflect_pad_grad(conv_input_grad(da2, p["w2"], self.backend), PAD)
        da1 = dh1 * d1
        if need_params:
            grads["w2"] = conv_weight_grad(h1p, da2, KERNEL, KERNEL, self.backend)
            grads["b2"] = da2.sum(axis=(1, 2))
            grads["w1"] = conv_weight_grad(xp, da1, KERNEL, KERNEL, self.backend)
            grads["b1"] = da1.sum(axis=(1, 2))
            return grads
        dx = reflect_pad_grad(conv_input_grad(da1, p["w1"], self.backend), PAD) * self.in_scale
        return np.ascontiguousarray(dx.transpose(1, 2, 0))

    def logits(self, img):
        return self._forward(self._check(img))[0]

    def predict_scores(self, img):
        return softmax(self.logits(img))

    forward = predict_scores

    def predict_labels(self, img):
        return np.argmax(self.logits(img), axis=-1)

    def input_gradient(self, img, objective):
        """``(value, d value / d img)`` for ``objective(logits)``."""
        img = self._check(img)
        z, cache = self._forward(img)
        value, dz = objective(z)
        dz = np.asarray(dz, dtype=np.float64)
        if dz.shape != z.shape:
            raise ShapeMismatch(f"objective gradient shape {dz.shape} != logits {z.shape}")
        return value, self._backward(dz, cache)

    def param_gradient(self, img, objective):
        img = self._check(img)
        z, cache = self._forward(img)
        value, dz = objective(z)
        return value, self._backward(np.asarray(dz, dtype=np.float64), cache, need_params=True)


def forward(model, img):
    return model.predict_scores(img)


def input_gradient(model, img, objective):
    return model.input_gradient(img, objective)[1]


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.b1, self.b2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        if self.lr == 0:
            return
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, g in grads.items():
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def _augment(img, labels, rng, blur_stds, crop_range):
    from .blur import blur

    if crop_range is not None:
        H, W = labels.shape
        lo, hi = crop_range
        s = int(rng.integers(min(lo, H, W), min(hi, H, W) + 1))
        r = int(rng.integers(0, H - s + 1))
        c = int(rng.integers(0, W - s + 1))
        img, labels = img[r:r + s, c:c + s], labels[r:r + s, c:c + s]
    if rng.random() < 0.5:
        img, labels = img[:, ::-1], labels[:, ::-1]
    if blur_stds:
        choice = int(rng.integers(0, len(blur_stds) + 1))
        if choice < len(blur_stds):
            img = blur(img, blur_stds[choice])
    return np.ascontiguousarray(img), np.ascontiguousarray(labels)


def evaluate_segmentation(model, dataset):
    """Pixel accuracy and mean IoU (against ground truth) over ``dataset``."""
    from .metrics import confusion_counts, miou

    cc = np.zeros((model.n_classes, model.n_classes), dtype=np.int64)
    for img, labels in dataset:
        cc += confusion_counts(model.predict_labels(img), labels, model.n_classes)
    return {"pixel_accuracy": float(np.trace(cc) / cc.sum()), "miou": miou(cc)}


def train_toy(model, dataset, epochs=30, lr=0.01, rng=0, batch_size=8, holdout=None,
              blur_stds=(0.5, 1.0), crop_range=None, log=None):
    """Fit ``model`` in place by mini-batch Adam on per-pixel cross-entropy.

    ``dataset`` is a list of ``(image, labels)``.  Each epoch visits it in a
    seeded order; every sample may be cropped (``crop_range``), flipped, and
    blurred with one of ``blur_stds``.  Returns ``(model, report)``; the report
    is computed on ``holdout`` when given, else on the training set.
    """
    dataset = list(dataset)
    if not dataset:
        raise EmptyDataset("training set is empty")
    rng = as_generator(rng)
    opt = Adam(model.params, lr)
    history = []
    for epoch in range(epochs):
        order = rng.permutation(len(dataset))
        total = 0.0
        for start in range(0, len(order), batch_size):
            batch = order[start:start + batch_size]
            acc = {k: np.zeros_like(v) for k, v in model.params.items()}
            for idx in batch:
                img, labels = _augment(*dataset[idx], rng, blur_stds, crop_range)
                loss, g = model.param_gradient(img, cross_entropy(labels))
                total += loss
                for k in acc:
                    acc[k] += g[k] / len(batch)
            opt.step(model.params, acc)
        history.append(total / len(dataset))
        if log is not None:
            log(f"epoch {epoch + 1}/{epochs} loss {history[-1]:.4f}")
    report = evaluate_segmentation(model, holdout if holdout else dataset)
    report["loss_history"] = history
    return model, report
