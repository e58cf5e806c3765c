"""Markdown summary of an output directory; the CSV files remain the source of truth."""
from pathlib import Path

import numpy as np

from ..errors import IoFailure
from .io import _write_bytes, read_csv


def _table(header, rows):
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    lines += ["| " + " | ".join(str(c) for c in r) + " |" for r in rows]
    return "\n".join(lines)


def _f(v, nd=3):
    try:
        x = float(v)
    except (TypeError, ValueError):
        return str(v)
    return "nan" if not np.isfinite(x) else f"{x:.{nd}f}"


def detection_section(rows):
    out = ["## Detection", "",
           "AUC is the headline column; detection rate and false-positive rate use the threshold "
           "calibrated on the calibration split.", ""]
    body = [(r["attack"], r["target"], r["adaptivity"], r["detector"], r["parameter"], _f(r["auc"]),
             _f(r["detection_rate"]), _f(r["false_positive_rate"]), _f(r["mean_attack_success"]))
            for r in rows]
    out.append(_table(["attack", "target", "adaptivity", "detector", "parameter", "AUC", "detection rate",
                       "FPR", "attack success"], body))
    return out


def attack_section(rows):
    cells = {}
    for r in rows:
        cells.setdefault((r["attack"], r["target"], r["adaptivity"]), []).append(r)
    body = []
    for (m, t, a), rs in cells.items():
        succ = np.array([float(r["success_rate"]) for r in rs])
        body.append((m, t, a, len(rs), _f(succ.mean()), _f(np.mean(succ >= 0.95)),
                     _f(max(float(r["l2"]) for r in rs), 4)))
    return ["## Attacks", "", _table(["attack", "target", "adaptivity", "images", "mean success",
                                      "frac >= 0.95", "max l2"], body)]


def entropy_section(rows):
    body = [(r["image_id"], r["kind"], _f(r["mean_entropy"], 4), _f(r["boundary_mean"], 4),
             _f(r["interior_mean"], 4)) for r in rows]
    return ["## Self-entropy", "", _table(["image", "kind", "mean", "near boundary", "elsewhere"], body)]


def transfer_section(rows):
    out = ["## Transferability", ""]
    for kind in sorted({r["kind"] for r in rows}):
        rs = [r for r in rows if r["kind"] == kind]
        models = sorted({r["eval_model"] for r in rs})
        m = {(r["eval_model"], r["source_model"]): r["value"] for r in rs}
        out += [f"{kind} ({rs[0]['metric']}; rows evaluate, columns craft)", "",
                _table(["eval \\ source"] + models, [[a] + [_f(m[(a, b)]) for b in models] for a in models]), ""]
    return out


def write_report(out_dir):
    """Collect whatever CSV outputs exist under ``out_dir`` into ``report.md``."""
    out_dir = Path(out_dir)
    if not out_dir.is_dir():
        raise IoFailure(f"{out_dir} is not a directory")
    parts = ["# Consistency detection report", ""]
    sources = [("attacks.csv", attack_section), ("detection.csv", detection_section),
               ("entropy/entropy.csv", entropy_section), ("transfer/transfer.csv", transfer_section)]
    found = False
    for rel, fn in sources:
        p = out_dir / rel
        if p.exists():
            parts += fn(read_csv(p)) + [""]
            found = True
    if not found:
        raise IoFailure(f"no result tables under {out_dir}")
    path = out_dir / "report.md"
    _write_bytes(path, "\n".join(parts).encode("utf-8"))
    return path
