"""Procedural scenes: coloured rectangles and ellipses on a background class."""
from dataclasses import dataclass, field

import numpy as np

from .seeding import as_generator

# class 0 is the background
DEFAULT_COLORS = (
    (0.50, 0.50, 0.50),
    (0.85, 0.25, 0.20),
    (0.20, 0.70, 0.30),
    (0.25, 0.35, 0.85),
    (0.90, 0.80, 0.25),
    (0.70, 0.30, 0.75),
    (0.25, 0.80, 0.80),
    (0.95, 0.55, 0.15),
)


@dataclass
class SceneSpec:
    n_classes: int = 5
    height: int = 128
    width: int = 128
    shapes: tuple = (2, 5)  # inclusive range of foreground shapes per scene
    size_frac: tuple = (0.2, 0.55)  # shape extent as a fraction of the image side
    colors: tuple = field(default=None)
    contrast: float = 0.5  # palette is pulled toward mid-grey by this factor
    color_jitter: float = 0.03
    noise_std: float = 0.08

    def __post_init__(self):
        if self.n_classes < 2:
            raise ValueError("need at least a background and one foreground class")
        if self.colors is None:
            if self.n_classes <= len(DEFAULT_COLORS):
                self.colors = DEFAULT_COLORS[:self.n_classes]
            else:
                extra = np.random.default_rng(12345).uniform(0.1, 0.9, (self.n_classes - len(DEFAULT_COLORS), 3))
                self.colors = DEFAULT_COLORS + tuple(map(tuple, extra))
        if len(self.colors) != self.n_classes:
            raise ValueError("one colour per class required")

    def to_dict(self):
        return {"n_classes": self.n_classes, "height": self.height, "width": self.width,
                "shapes": list(self.shapes), "size_frac": list(self.size_frac),
                "colors": [list(c) for c in self.colors], "contrast": self.contrast,
                "color_jitter": self.color_jitter,
                "noise_std": self.noise_std}

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for k in ("shapes", "size_frac"):
            if k in d:
                d[k] = tuple(d[k])
        if d.get("colors") is not None:
            d["colors"] = tuple(tuple(c) for c in d["colors"])
        return cls(**d)


def _shape_mask(kind, H, W, r0, c0, hh, ww):
    rr, cc = np.ogrid[:H, :W]
    if kind == 0:
        return (rr >= r0) & (rr < r0 + hh) & (cc >= c0) & (cc < c0 + ww)
    cr, ccen = r0 + hh / 2.0, c0 + ww / 2.0
    return ((rr + 0.5 - cr) / (hh / 2.0)) ** 2 + ((cc + 0.5 - ccen) / (ww / 2.0)) ** 2 <= 1.0


def synth_scene(spec, rng):
    """Return ``(image, labels)``; labels are the exact generating geometry."""
    rng = as_generator(rng)
    H, W, C = spec.height, spec.width, spec.n_classes
    colors = 0.5 + spec.contrast * (np.asarray(spec.colors, dtype=np.float64) - 0.5)
    labels = np.zeros((H, W), dtype=np.int64)
    img = np.empty((H, W, 3))
    img[:] = np.clip(colors[0] + rng.normal(0, spec.color_jitter, 3), 0, 1)
    n = int(rng.integers(spec.shapes[0], spec.shapes[1] + 1))
    for _ in range(n):
        cls = int(rng.integers(1, C))
        hh = max(2, int(rng.uniform(*spec.size_frac) * H))
        ww = max(2, int(rng.uniform(*spec.size_frac) * W))
        r0 = int(rng.integers(-hh // 4, H - 3 * hh // 4 + 1))
        c0 = int(rng.integers(-ww // 4, W - 3 * ww // 4 + 1))
        mask = _shape_mask(int(rng.integers(0, 2)), H, W, r0, c0, hh, ww)
        labels[mask] = cls
        img[mask] = np.clip(colors[cls] + rng.normal(0, spec.color_jitter, 3), 0, 1)
    if spec.noise_std > 0:
        img = img + rng.normal(0, spec.noise_std, img.shape)
    return np.clip(img, 0.0, 1.0), labels


def synth_dataset(spec, n, rng):
    rng = as_generator(rng)
    return [synth_scene(spec, rng) for _ in range(n)]
