"""Synthetic dataset generation with a hashed manifest and train/calibration/test splits."""
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import EmptyDataset, IoFailure
from ..scenes import SceneSpec, synth_scene
from ..seeding import substream
from .io import quantize, read_json, read_pgm, read_ppm, sha256_file, write_json, write_pgm, write_ppm

SPLITS = ("train", "calibration", "test")
MANIFEST = "manifest.json"


@dataclass
class DatasetSpec:
    n_train: int = 200
    n_calibration: int = 20
    n_test: int = 40
    scene: SceneSpec = field(default_factory=SceneSpec)

    def __post_init__(self):
        if isinstance(self.scene, dict):
            self.scene = SceneSpec.from_dict(self.scene)
        if min(self.n_train, self.n_calibration, self.n_test) < 0:
            raise ValueError("split sizes must be non-negative")
        if self.total == 0:
            raise EmptyDataset("dataset spec asks for zero scenes")

    @property
    def total(self):
        return self.n_train + self.n_calibration + self.n_test

    def sizes(self):
        return {"train": self.n_train, "calibration": self.n_calibration, "test": self.n_test}

    def to_dict(self):
        return {"n_train": self.n_train, "n_calibration": self.n_calibration,
                "n_test": self.n_test, "scene": self.scene.to_dict()}

    @classmethod
    def from_dict(cls, d):
        return cls(**dict(d))


def scene_id(split, i):
    return f"{split}-{i:04d}"


def generate_splits(spec, seed):
    """``{split: [(id, image, labels), ...]}`` held in memory.

    Images are snapped to the 8-bit grid so in-memory runs see exactly what a
    PPM round trip would give.  Each scene has its own rng stream, so growing
    one split never changes another.
    """
    out = {}
    for split, n in spec.sizes().items():
        items = []
        for i in range(n):
            img, labels = synth_scene(spec.scene, substream(seed, "scene", split, i))
            items.append((scene_id(split, i), quantize(img) / 255.0, labels))
        out[split] = items
    return out


def build_dataset(spec, out_dir, seed):
    """Write every scene as PPM + PGM and a manifest with SHA-256 digests; return the manifest."""
    out_dir = Path(out_dir)
    splits = generate_splits(spec, seed)
    files = {}
    for split in SPLITS:
        for sid, img, labels in splits[split]:
            img_rel, lab_rel = f"images/{sid}.ppm", f"labels/{sid}.pgm"
            write_ppm(out_dir / img_rel, img)
            write_pgm(out_dir / lab_rel, labels)
            files[sid] = {"split": split, "image": img_rel, "labels": lab_rel,
                          "image_sha256": sha256_file(out_dir / img_rel),
                          "labels_sha256": sha256_file(out_dir / lab_rel)}
    manifest = {"seed": seed, "spec": spec.to_dict(),
                "splits": {s: [sid for sid, _, _ in splits[s]] for s in SPLITS},
                "files": files}
    write_json(out_dir / MANIFEST, manifest)
    return manifest


def load_dataset(root, verify=True):
    """Read a dataset written by :func:`build_dataset`; digests are checked when ``verify``."""
    root = Path(root)
    manifest = read_json(root / MANIFEST)
    out = {}
    for split in SPLITS:
        items = []
        for sid in manifest["splits"].get(split, []):
            entry = manifest["files"][sid]
            for key in ("image", "labels"):
                if verify and sha256_file(root / entry[key]) != entry[f"{key}_sha256"]:
                    raise IoFailure(f"{entry[key]}: digest mismatch")
            items.append((sid, read_ppm(root / entry["image"]), read_pgm(root / entry["labels"])))
        out[split] = items
    return out, manifest


def as_pairs(items):
    """Drop ids: ``[(image, labels), ...]`` as the trainer expects."""
    return [(img, labels) for _, img, labels in items]


def boundary_mask(labels, radius=2):
    """Pixels within ``radius`` (Chebyshev) of a label change."""
    labels = np.asarray(labels)
    edge = np.zeros(labels.shape, dtype=bool)
    dv = labels[1:] != labels[:-1]
    dh = labels[:, 1:] != labels[:, :-1]
    edge[1:] |= dv
    edge[:-1] |= dv
    edge[:, 1:] |= dh
    edge[:, :-1] |= dh
    if radius <= 1:
        return edge
    from scipy.ndimage import binary_dilation

    return binary_dilation(edge, structure=np.ones((3, 3), bool), iterations=radius - 1)
