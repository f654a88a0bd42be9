"""Command line interface: ``gen``, ``train``, ``predict`` and ``eval``.

Exit status is 0 on success, 1 for usage errors and 2 for data or model errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .cascade import TrainConfig, predict_batch, train
from .errors import InvalidInputError, JointFaceError, UndefinedMetricError
from .features import DescriptorSpec
from .fileio import gen_config_from_dict, gen_config_to_dict, load_dataset, load_model, save_dataset, save_model
from .metrics import normalized_error, pixel_error, pose_metrics, recall_at_precision
from .synth import eye_indices, generate, make_shape_family

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2

REPORT_KEYS = (
    "mean_normalized_error", "mean_pixel_error", "occlusion_recall_at_p80", "pose_mae",
    "pose_classification_acc", "pose_classification_acc_all_axes", "n_samples", "per_stage_curves",
)
CURVE_COLUMNS = ("stage", "mean_landmark_error", "yaw_mae", "recall_at_p80")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}")
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _energy(text):
    v = float(text)
    if not 0.0 < v <= 1.0:
        raise argparse.ArgumentTypeError(f"must be in (0, 1], got {v}")
    return v


def _nonneg(text):
    v = float(text)
    if not v >= 0.0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {v}")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="jointface", description="Joint landmark, visibility and head-pose cascade.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate a synthetic dataset")
    g.add_argument("--config", required=True, help="JSON file of generator settings")
    g.add_argument("--out", required=True, help="output dataset directory")

    t = sub.add_parser("train", help="train a cascade on a dataset directory")
    t.add_argument("--data", required=True)
    t.add_argument("--stages", type=_positive_int, default=4)
    t.add_argument("--descriptor", choices=("grad-hist", "raw-patch"), default="grad-hist")
    t.add_argument("--energy", type=_energy, default=0.9)
    t.add_argument("--lambda", dest="lam", type=_nonneg, default=None,
                   help="ridge strength (default 1e-3 times the feature dimension)")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True, help="output model file (.cjm)")

    r = sub.add_parser("predict", help="run a trained model on a dataset")
    r.add_argument("--model", required=True)
    r.add_argument("--data", required=True)
    r.add_argument("--out", required=True, help="output CSV of predicted states")

    e = sub.add_parser("eval", help="evaluate a trained model against dataset ground truth")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--report", required=True, help="output JSON report")
    e.add_argument("--curves", required=True, help="output per-stage CSV")

    for sp in (g, t, r, e):
        sp.add_argument("-v", "--verbose", action="store_true")
    return p


def _fmt(v) -> str:
    return repr(float(v))


def cmd_gen(args) -> int:
    try:
        raw = json.loads(Path(args.config).read_text())
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"{args.config}: invalid JSON ({exc})") from exc
    cfg = gen_config_from_dict(raw)
    shapes, model = make_shape_family(cfg)
    samples = generate(cfg, model)
    try:
        eyes = list(eye_indices(cfg.n_points))
    except InvalidInputError:
        eyes = None
    save_dataset(args.out, samples, shapes, {"eye_indices": eyes, "gen_config": gen_config_to_dict(cfg)})
    return EXIT_OK


def cmd_train(args) -> int:
    ds = load_dataset(args.data)
    if ds.shapes3d is None:
        raise InvalidInputError(f"{args.data}: shapes3d.csv is required for training")
    cfg = TrainConfig(n_stages=args.stages, descriptor=DescriptorSpec(kind=args.descriptor), energy=args.energy,
                      lam=args.lam, seed=args.seed)
    model = train(ds.samples, cfg, shapes3d=ds.shapes3d)
    save_model(model, args.out)
    return EXIT_OK


def _run(args):
    model = load_model(args.model)
    ds = load_dataset(args.data)
    if not ds.samples:
        raise InvalidInputError(f"{args.data}: dataset has no samples")
    if ds.samples[0].x_true.shape[0] != model.n_points:
        raise InvalidInputError("model and dataset have different landmark counts")
    boxes = np.stack([s.face_box for s in ds.samples])
    states, history = predict_batch(model, boxes, [s.image for s in ds.samples], return_history=True)
    return model, ds, states, history


def cmd_predict(args) -> int:
    model, ds, states, _ = _run(args)
    D, K = model.n_points, model.deformable.n_modes
    header = ["id"]
    for k in range(D):
        header += [f"u_{k}", f"v_{k}", f"c_{k}"]
    header += ["pitch", "yaw", "roll"] + [f"alpha_{j}" for j in range(K)]
    with open(args.out, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for s, st in zip(ds.samples, states):
            row = [s.index]
            for k in range(D):
                row += [_fmt(st.x[k, 0]), _fmt(st.x[k, 1]), _fmt(st.c[k])]
            row += [_fmt(v) for v in np.rad2deg(st.h)] + [_fmt(a) for a in st.alpha]
            w.writerow(row)
    return EXIT_OK


def _finite_or_none(v):
    if v is None:
        return None
    v = float(v)
    return v if math.isfinite(v) else None


def _mean_or_none(values):
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


def evaluate_snapshot(x, c, h, samples, eyes):
    """Metrics for one set of stacked predictions; undefined quantities are ``None``."""
    norm_err, pix_err = [], []
    for i, s in enumerate(samples):
        try:
            pix_err.append(pixel_error(x[i], s.x_true, s.mask))
        except UndefinedMetricError:
            pass
        if eyes is not None:
            try:
                norm_err.append(normalized_error(x[i], s.x_true, s.mask, *eyes))
            except UndefinedMetricError:
                pass
    annotated = np.concatenate([s.mask for s in samples]) > 0
    occluded = np.concatenate([s.c_true for s in samples]) < 0.5
    try:
        recall = recall_at_precision(1.0 - c.ravel()[annotated], occluded[annotated], 0.8)
    except UndefinedMetricError:
        recall = None
    pose = None
    if all(s.h_true is not None for s in samples):
        pose = pose_metrics(h, np.stack([s.h_true for s in samples]))
    return {
        "mean_normalized_error": _mean_or_none(norm_err),
        "mean_pixel_error": _mean_or_none(pix_err),
        "occlusion_recall_at_p80": _finite_or_none(recall),
        "pose": pose,
    }


def cmd_eval(args) -> int:
    model, ds, states, history = _run(args)
    eyes = ds.meta.get("eye_indices")
    curves = []
    for t, snap in enumerate(history):
        m = evaluate_snapshot(snap["x"], snap["c"], snap["h"], ds.samples, eyes)
        curves.append({
            "stage": t,
            "mean_landmark_error": m["mean_normalized_error"],
            "yaw_mae": None if m["pose"] is None else _finite_or_none(m["pose"].mae_deg[1]),
            "recall_at_p80": m["occlusion_recall_at_p80"],
        })
    final = evaluate_snapshot(history[-1]["x"], history[-1]["c"], history[-1]["h"], ds.samples, eyes)
    pose = final["pose"]
    report = {
        "mean_normalized_error": final["mean_normalized_error"],
        "mean_pixel_error": final["mean_pixel_error"],
        "occlusion_recall_at_p80": final["occlusion_recall_at_p80"],
        "pose_mae": None if pose is None else dict(zip(("pitch", "yaw", "roll"),
                                                       (_finite_or_none(v) for v in pose.mae_deg))),
        "pose_classification_acc": None if pose is None else pose.accuracy_yaw,
        "pose_classification_acc_all_axes": None if pose is None else pose.accuracy_all,
        "n_samples": len(ds.samples),
        "per_stage_curves": curves,
    }
    with open(args.report, "w") as f:
        json.dump(report, f, sort_keys=True, indent=1)
        f.write("\n")
    with open(args.curves, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(CURVE_COLUMNS)
        for row in curves:
            w.writerow(["null" if row[k] is None else row[k] for k in CURVE_COLUMNS])
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "predict": cmd_predict, "eval": cmd_eval}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (JointFaceError, OSError, ValueError) as exc:
        print(f"jointface {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
