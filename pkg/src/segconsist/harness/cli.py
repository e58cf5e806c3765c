"""``segconsist`` command line: synth, train, attack, detect, entropy, eval, transfer, report.

Exit codes: 0 success, 1 usage error, 2 precondition failure, 3 acceptance-gate failure.
"""
import argparse
import sys
from pathlib import Path

import numpy as np

from ..attacks import AttackConfig, run_attack
from ..detectors import SpatialDetectorConfig, report_from_scores, scale_consistency_score, spatial_consistency_score
from ..errors import IoFailure, PreconditionError, SelfAttackFailed
from ..seeding import substream
from ..targets import TARGET_KINDS, make_target
from .data import build_dataset, load_dataset
from .experiments import (ExperimentConfig, craft_adversarial_sets, emit_entropy_heatmap, entropy_study,
                          run_detection_experiment, train_model)
from .io import (load_model, load_perturbation, save_model, save_perturbation, write_csv,
                 write_json)
from .report import write_report
from .transfer import run_transferability

EXIT_OK, EXIT_USAGE, EXIT_PRECONDITION, EXIT_GATE = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _log(msg):
    print(msg, file=sys.stderr, flush=True)


def _config(args):
    cfg = ExperimentConfig.from_json(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _data_dir(args):
    return Path(args.data) if args.data else Path(args.out) / "data"


def _model_path(args):
    return Path(args.model) if args.model else Path(args.out) / "model.scm"


# -- subcommands ------------------------------------------------------------------

def cmd_synth(args):
    cfg = _config(args)
    manifest = build_dataset(cfg.dataset, _data_dir(args), cfg.seed)
    _log(f"wrote {len(manifest['files'])} scenes to {_data_dir(args)}")


def cmd_train(args):
    cfg = _config(args)
    splits, _ = load_dataset(_data_dir(args))
    model, rep = train_model(cfg, splits["train"], log=_log)
    save_model(_model_path(args), model)
    write_json(Path(args.out) / "train.json", {"pixel_accuracy": rep["pixel_accuracy"], "miou": rep["miou"],
                                              "loss_history": rep["loss_history"], "seed": cfg.seed})


def cmd_attack(args):
    cfg = _config(args)
    splits, _ = load_dataset(_data_dir(args))
    model = load_model(_model_path(args))
    acfg = AttackConfig(l2_bound=args.l2_bound, max_iters=args.iters, gamma=args.gamma,
                        patch_size=cfg.detectors.patch_size, dag_score=cfg.attacks.dag_score)
    items = splits[args.split][:args.limit]
    out = Path(args.out) / "adversarial" / f"{args.method}-{args.target}-{args.adaptive}"
    rows = []
    for sid, img, gt in items:
        tgt = make_target(args.target, gt, model.n_classes, cls=cfg.attacks.target_class)
        res = run_attack(args.method, model, img, tgt, acfg, adaptive=args.adaptive, k=args.k, std=args.std,
                         rng=substream(cfg.attack_stream_seed, "attack", args.method, args.target,
                                       args.adaptive, sid))
        save_perturbation(out / f"{sid}.adv", res.perturbation,
                          {"image_id": sid, "method": args.method, "target": args.target,
                           "adaptivity": args.adaptive, **res.stats()})
        rows.append({"seed": cfg.seed, "image_id": sid, "attack": args.method, "target": args.target,
                     "adaptivity": args.adaptive, "success_rate": res.success_rate, "l2": res.l2,
                     "iterations": res.iterations, "stop_reason": res.stop_reason})
        _log(f"{sid}: success {res.success_rate:.3f} l2 {res.l2:.4f} ({res.stop_reason})")
    write_csv(out / "attacks.csv", rows, list(rows[0]) if rows else ["image_id"])


def _scorer(args, model, cfg):
    if args.detector == "spatial":
        sc = SpatialDetectorConfig(K=args.k, patch_size=args.patch_size, bounds=(args.b_low, args.b_upper))
        return lambda img, key: spatial_consistency_score(
            img, model, sc, substream(cfg.detect_stream_seed, "detect", "spatial", args.k, key))
    return lambda img, key: scale_consistency_score(img, model, args.std)


def cmd_detect(args):
    cfg = _config(args)
    splits, _ = load_dataset(_data_dir(args))
    model = load_model(_model_path(args))
    score = _scorer(args, model, cfg)
    param = args.k if args.detector == "spatial" else args.std
    rows = []

    def add(split, sid, kind, img):
        s = score(img, f"{kind}/{sid}")
        rows.append({"seed": cfg.seed, "image_id": sid, "split": split, "kind": kind,
                     "detector": args.detector, "parameter": param, "score": s})
        return s

    cal = [add("calibration", sid, "benign", img) for sid, img, _ in splits["calibration"]]
    test = {sid: img for sid, img, _ in splits["test"]}
    benign = [add("test", sid, "benign", img) for sid, img in test.items()]
    adv = []
    if args.adv:
        for p in sorted(Path(args.adv).glob("*.adv")):
            r, meta = load_perturbation(p)
            sid = meta["image_id"]
            if sid not in test:
                raise PreconditionError(f"{p}: image {sid} is not in the test split")
            adv.append(add("test", sid, "adversarial", np.clip(test[sid] + r, 0.0, 1.0)))
    out = Path(args.out) / "detect"
    write_csv(out / f"scores-{args.detector}-{param}.csv", rows,
              ["seed", "image_id", "split", "kind", "detector", "parameter", "score"])
    if adv:
        rep = report_from_scores(benign, adv, cal, args.calibration)
        write_json(out / f"summary-{args.detector}-{param}.json", {**rep.summary(), "detector": args.detector,
                                                                   "parameter": param, "seed": cfg.seed})
        _log(f"AUC {rep.auc:.4f}  detection rate {rep.detection_rate:.3f}  threshold {rep.threshold:.4f}")


def cmd_entropy(args):
    cfg = _config(args)
    splits, _ = load_dataset(_data_dir(args))
    model = load_model(_model_path(args))
    items = {sid: img for sid, img, _ in splits["test"]}
    ids = [args.image] if args.image else list(items)[:1]
    for sid in ids:
        if sid not in items:
            raise PreconditionError(f"unknown test image {sid}")
        img = items[sid]
        kind = "benign"
        if args.adv:
            r, _ = load_perturbation(Path(args.adv) / f"{sid}.adv")
            img, kind = np.clip(img + r, 0.0, 1.0), "adversarial"
        emap = emit_entropy_heatmap(img, model, args.k, args.patch_size,
                                    Path(args.out) / "entropy" / f"{sid}_{kind}",
                                    substream(cfg.detect_stream_seed, "entropy", kind, sid))
        _log(f"{sid} ({kind}): mean self-entropy {emap.mean():.4f}")


def run_eval(cfg, out, log=_log):
    """Full pipeline into ``out``: data, model, attacks, detection tables, entropy maps, report."""
    out = Path(out)
    build_dataset(cfg.dataset, out / "data", cfg.seed)
    splits, _ = load_dataset(out / "data")
    model, rep = train_model(cfg, splits["train"], log=log)
    save_model(out / "model.scm", model)
    write_json(out / "config.json", cfg.to_dict())
    write_json(out / "train.json", {"pixel_accuracy": rep["pixel_accuracy"], "miou": rep["miou"],
                                    "loss_history": rep["loss_history"], "seed": cfg.seed})
    sets = craft_adversarial_sets(cfg, model, splits["test"], log)
    run_detection_experiment(cfg, model, splits, out, sets=sets, log=log)
    entropy_study(cfg, model, splits["test"], sets, out / "entropy")
    write_report(out)


def cmd_eval(args):
    run_eval(_config(args), args.out)


def cmd_transfer(args):
    cfg = _config(args)
    data = _data_dir(args)
    if (data / "manifest.json").exists():
        splits, _ = load_dataset(data)
    else:
        from .data import generate_splits
        splits = generate_splits(cfg.dataset, cfg.seed)
    seg, clf = run_transferability(cfg, splits, Path(args.out) / "transfer", log=_log,
                                   with_control=not args.no_control)
    _log(f"segmentation diagonal {np.round(seg.diagonal, 3).tolist()} off-diagonal mean {seg.off_diagonal_mean():.3f}")
    if clf is not None:
        _log(f"classifier off-diagonal mean {clf.off_diagonal_mean():.3f}")


def cmd_report(args):
    path = write_report(args.out)
    _log(f"wrote {path}")


# -- parser -----------------------------------------------------------------------

def build_parser():
    p = _Parser(prog="segconsist", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def shared(sp):
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--config", default=None, help="experiment config JSON")
        sp.add_argument("--out", default="out")
        sp.add_argument("--data", default=None, help="dataset directory (default <out>/data)")
        sp.add_argument("--model", default=None, help="model file (default <out>/model.scm)")
        return sp

    shared(sub.add_parser("synth", help="generate the synthetic dataset")).set_defaults(fn=cmd_synth)
    shared(sub.add_parser("train", help="train the toy segmentation model")).set_defaults(fn=cmd_train)

    a = shared(sub.add_parser("attack", help="craft adversarial perturbations"))
    a.add_argument("--method", choices=("dag", "houdini"), default="dag")
    a.add_argument("--target", choices=TARGET_KINDS, default="overlay")
    a.add_argument("--adaptive", choices=("spatial", "scale", "none"), default="none")
    a.add_argument("--k", type=int, default=5)
    a.add_argument("--std", type=float, default=3.0)
    a.add_argument("--l2-bound", type=float, default=0.06)
    a.add_argument("--iters", type=int, default=300)
    a.add_argument("--gamma", type=float, default=0.002)
    a.add_argument("--split", choices=("train", "calibration", "test"), default="test")
    a.add_argument("--limit", type=int, default=None)
    a.set_defaults(fn=cmd_attack)

    d = shared(sub.add_parser("detect", help="score images with a consistency detector"))
    d.add_argument("--detector", choices=("spatial", "scale"), default="spatial")
    d.add_argument("--k", type=int, default=5)
    d.add_argument("--patch-size", type=int, default=64)
    d.add_argument("--b-low", type=int, default=8)
    d.add_argument("--b-upper", type=int, default=16)
    d.add_argument("--std", type=float, default=3.0)
    d.add_argument("--calibration", default="min", help="min or quantile:<q>")
    d.add_argument("--adv", default=None, help="directory of .adv perturbations for the test split")
    d.set_defaults(fn=cmd_detect)

    e = shared(sub.add_parser("entropy", help="per-pixel self-entropy heatmaps"))
    e.add_argument("--k", type=int, default=50)
    e.add_argument("--patch-size", type=int, default=64)
    e.add_argument("--image", default=None, help="test image id (default: the first)")
    e.add_argument("--adv", default=None, help="directory of .adv perturbations")
    e.set_defaults(fn=cmd_entropy)

    shared(sub.add_parser("eval", help="run the full detection pipeline")).set_defaults(fn=cmd_eval)

    t = shared(sub.add_parser("transfer", help="cross-model transferability matrices"))
    t.add_argument("--no-control", action="store_true", help="skip the toy-classifier control")
    t.set_defaults(fn=cmd_transfer)

    shared(sub.add_parser("report", help="summarize an output directory")).set_defaults(fn=cmd_report)
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        if getattr(args, "calibration", None) is not None:
            from ..metrics import parse_calibration
            parse_calibration(args.calibration)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        args.fn(args)
    except SelfAttackFailed as exc:
        print(f"gate failed: {exc}", file=sys.stderr)
        return EXIT_GATE
    except (PreconditionError, IoFailure) as exc:
        print(f"precondition failed: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    except ValueError as exc:  # out-of-range flag or config values
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
