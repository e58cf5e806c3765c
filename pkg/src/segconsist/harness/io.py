"""File formats: PPM/PGM rasters, model checkpoints, perturbations, manifests, CSV."""
import csv
import hashlib
import io
import json
import os
import struct
from pathlib import Path

import numpy as np

from ..errors import IoFailure
from ..model import ToyConvModel

MODEL_MAGIC = b"SCM1"
PERTURBATION_MAGIC = b"ADV1"
_LE_F64 = np.dtype("<f8")


def _ensure_parent(path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)


def _write_bytes(path, data):
    try:
        _ensure_parent(path)
        with open(path, "wb") as fh:
            fh.write(data)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def _read_bytes(path):
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc


# -- netpbm ---------------------------------------------------------------------

def quantize(img):
    """[0, 1] floats to uint8 with round-half-to-even."""
    return np.clip(np.rint(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def write_ppm(path, img):
    """Binary P6 with maxval 255."""
    q = quantize(img)
    if q.ndim != 3 or q.shape[2] != 3:
        raise ValueError("PPM needs an (H, W, 3) image")
    h, w = q.shape[:2]
    _write_bytes(path, f"P6\n{w} {h}\n255\n".encode("ascii") + q.tobytes())


def write_pgm(path, labels):
    """Binary P5; the grey value is the label."""
    labels = np.asarray(labels)
    if labels.ndim != 2 or labels.min(initial=0) < 0 or labels.max(initial=0) > 255:
        raise ValueError("PGM needs a 2-D map with values in [0, 255]")
    h, w = labels.shape
    _write_bytes(path, f"P5\n{w} {h}\n255\n".encode("ascii") + labels.astype(np.uint8).tobytes())


def _parse_netpbm(data, magic):
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise IoFailure("truncated netpbm header")
        tokens.append(data[start:pos])
    pos += 1  # single whitespace before the raster
    if tokens[0] != magic:
        raise IoFailure(f"expected {magic!r}, found {tokens[0]!r}")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise IoFailure("only maxval 255 is supported")
    return w, h, data[pos:]


def read_ppm(path):
    w, h, raster = _parse_netpbm(_read_bytes(path), b"P6")
    if len(raster) < w * h * 3:
        raise IoFailure(f"{path}: raster truncated")
    return np.frombuffer(raster[:w * h * 3], dtype=np.uint8).reshape(h, w, 3) / 255.0


def read_pgm(path):
    w, h, raster = _parse_netpbm(_read_bytes(path), b"P5")
    if len(raster) < w * h:
        raise IoFailure(f"{path}: raster truncated")
    return np.frombuffer(raster[:w * h], dtype=np.uint8).reshape(h, w).astype(np.int64)


# -- magic + JSON header + float64 block ------------------------------------------

def _pack(magic, header, arrays):
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    body = b"".join(np.ascontiguousarray(a, dtype=_LE_F64).tobytes() for a in arrays)
    return magic + struct.pack("<I", len(head)) + head + body


def _unpack(data, magic):
    if data[:4] != magic:
        raise IoFailure(f"bad magic {data[:4]!r}, expected {magic!r}")
    (n,) = struct.unpack("<I", data[4:8])
    header = json.loads(data[8:8 + n].decode("utf-8"))
    return header, data[8 + n:]


def save_model(path, model):
    names = sorted(model.params)
    header = {"architecture": model.architecture, "seed": model.seed,
              "shapes": {k: list(model.params[k].shape) for k in names}, "order": names}
    _write_bytes(path, _pack(MODEL_MAGIC, header, [model.params[k] for k in names]))


def load_model(path, backend=None):
    header, body = _unpack(_read_bytes(path), MODEL_MAGIC)
    arch = dict(header["architecture"])
    if arch.pop("kind", "toy-conv") != "toy-conv":
        raise IoFailure("unsupported architecture")
    arch.pop("kernel", None)
    model = ToyConvModel(seed=header["seed"], backend=backend, **arch)
    flat = np.frombuffer(body, dtype=_LE_F64)
    offset = 0
    for name in header["order"]:
        shape = tuple(header["shapes"][name])
        size = int(np.prod(shape))
        if offset + size > flat.size:
            raise IoFailure(f"{path}: weight block truncated")
        model.params[name] = flat[offset:offset + size].reshape(shape).astype(np.float64)
        offset += size
    if offset != flat.size:
        raise IoFailure(f"{path}: {flat.size - offset} trailing weights")
    return model


def save_perturbation(path, r, meta):
    r = np.asarray(r, dtype=np.float64)
    header = dict(meta)
    header["shape"] = list(r.shape)
    _write_bytes(path, _pack(PERTURBATION_MAGIC, header, [r]))


def load_perturbation(path):
    header, body = _unpack(_read_bytes(path), PERTURBATION_MAGIC)
    shape = tuple(header["shape"])
    r = np.frombuffer(body, dtype=_LE_F64)
    if r.size != int(np.prod(shape)):
        raise IoFailure(f"{path}: data block has {r.size} values, header says {shape}")
    return r.reshape(shape).astype(np.float64), header


# -- manifest / CSV / JSON ------------------------------------------------------------

def sha256_file(path):
    h = hashlib.sha256()
    h.update(_read_bytes(path))
    return h.hexdigest()


def write_json(path, obj):
    _write_bytes(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode("utf-8"))


def read_json(path):
    try:
        return json.loads(_read_bytes(path).decode("utf-8"))
    except ValueError as exc:
        raise IoFailure(f"{path}: invalid JSON ({exc})") from exc


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_csv(path, rows, columns):
    """Rows are dicts; floats use ``repr`` so the file round-trips exactly."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(row.get(c, "")) for c in columns])
    _write_bytes(path, buf.getvalue().encode("utf-8"))


def read_csv(path):
    text = _read_bytes(path).decode("utf-8")
    return list(csv.DictReader(io.StringIO(text)))


def tree_digest(root):
    """``{relative path: sha256}`` for every file under ``root``."""
    root = Path(root)
    out = {}
    for dirpath, _, files in os.walk(root):
        for name in files:
            p = Path(dirpath) / name
            out[p.relative_to(root).as_posix()] = sha256_file(p)
    return dict(sorted(out.items()))
