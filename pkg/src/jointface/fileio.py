"""On-disk formats: PGM rasters, dataset directories and ``.cjm`` model files.

Dataset directory layout::

    images/0000.pgm        binary P5, maxval 255
    annotations.csv        id, box_u, box_v, box_w, box_h, then u_k, v_k, visible_k, annotated_k
    truth_pose.csv         id, pitch, yaw, roll (degrees), then alpha_k
    shapes3d.csv           one training 3D shape per row (x_0, y_0, z_0, x_1, ...)
    meta.json              landmark count, mode count, eye indices, generator config

Floats are written with ``repr`` so they read back bit-identical.

A model file is a sorted-key JSON document.  Every numeric array is stored as
``{"dtype": "<f8", "shape": [...], "data": <base64 of little-endian bytes>}``.
"""

from __future__ import annotations

import base64
import binascii
import csv
import json
import os
from dataclasses import asdict, fields
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .cascade import FORMAT_VERSION, CascadeModel
from .deformable import DeformableModel
from .errors import InvalidInputError, ModelFormatError, UnsupportedVersionError
from .features import DescriptorSpec
from .posesolve import SolverConfig
from .regression import LandmarkRegressor, VisibilityRegressor
from .synth import GenConfig, TrainingSample

PGM_MAXVAL = 255


# ---------------------------------------------------------------- PGM

def write_pgm(path, img) -> None:
    """Write a [0, 1] float image as an 8-bit binary PGM."""
    img = np.asarray(img, dtype=float)
    if img.ndim != 2:
        raise InvalidInputError("PGM images must be 2D")
    data = np.round(np.clip(img, 0.0, 1.0) * PGM_MAXVAL).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n{PGM_MAXVAL}\n".encode("ascii"))
        f.write(data.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a binary (P5) PGM into floats in [0, 1].  Header comments are skipped."""
    raw = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        if pos >= len(raw):
            raise InvalidInputError(f"{path}: truncated PGM header")
        ch = raw[pos:pos + 1]
        if ch == b"#":
            end = raw.find(b"\n", pos)
            pos = len(raw) if end < 0 else end + 1
        elif ch.isspace():
            pos += 1
        else:
            start = pos
            while pos < len(raw) and not raw[pos:pos + 1].isspace() and raw[pos:pos + 1] != b"#":
                pos += 1
            tokens.append(raw[start:pos])
    pos += 1  # single whitespace byte after maxval
    if tokens[0] != b"P5":
        raise InvalidInputError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise InvalidInputError(f"{path}: malformed PGM header") from exc
    if w < 1 or h < 1 or not 0 < maxval < 65536:
        raise InvalidInputError(f"{path}: invalid PGM dimensions or maxval")
    dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
    count = w * h
    nbytes = count * np.dtype(dtype).itemsize
    if len(raw) - pos < nbytes:
        raise InvalidInputError(f"{path}: PGM pixel data is truncated")
    pix = np.frombuffer(raw, dtype=dtype, count=count, offset=pos).reshape(h, w)
    return pix.astype(float) / maxval


# ---------------------------------------------------------------- datasets

class Dataset(NamedTuple):
    samples: list
    shapes3d: np.ndarray | None
    meta: dict


def _fmt(v) -> str:
    return repr(float(v))


def gen_config_to_dict(cfg: GenConfig) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(cfg).items()}


def gen_config_from_dict(d: dict) -> GenConfig:
    known = {f.name for f in fields(GenConfig)}
    unknown = set(d) - known
    if unknown:
        raise InvalidInputError(f"unknown generator settings: {sorted(unknown)}")
    return GenConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def save_dataset(out_dir, samples, shapes3d=None, meta: dict | None = None) -> None:
    """Write samples (and optionally the 3D shape set) as a dataset directory."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    samples = list(samples)
    if not samples:
        raise InvalidInputError("no samples to write")
    D = samples[0].x_true.shape[0]
    K = samples[0].alpha_true.shape[0]

    header = ["id", "box_u", "box_v", "box_w", "box_h"]
    for k in range(D):
        header += [f"u_{k}", f"v_{k}", f"visible_{k}", f"annotated_{k}"]
    rows, pose_rows = [], []
    for s in samples:
        write_pgm(out / "images" / f"{s.index:04d}.pgm", s.image)
        row = [s.index] + [_fmt(v) for v in s.face_box]
        for k in range(D):
            row += [_fmt(s.x_true[k, 0]), _fmt(s.x_true[k, 1]), int(s.c_true[k] > 0.5), int(s.mask[k] > 0.5)]
        rows.append(row)
        pose_rows.append([s.index] + [_fmt(v) for v in np.rad2deg(s.h_true)] + [_fmt(a) for a in s.alpha_true])
    _write_csv(out / "annotations.csv", header, rows)
    _write_csv(out / "truth_pose.csv", ["id", "pitch", "yaw", "roll"] + [f"alpha_{j}" for j in range(K)], pose_rows)
    if shapes3d is not None:
        shapes3d = np.asarray(shapes3d, dtype=float).reshape(len(shapes3d), -1)
        cols = [f"{a}_{k}" for k in range(D) for a in "xyz"]
        _write_csv(out / "shapes3d.csv", cols, [[_fmt(v) for v in r] for r in shapes3d])
    meta = dict(meta or {})
    meta.setdefault("n_points", D)
    meta.setdefault("n_modes", K)
    with open(out / "meta.json", "w") as f:
        json.dump(meta, f, sort_keys=True, indent=1)
        f.write("\n")


def _read_csv(path):
    try:
        with open(path, newline="") as f:
            r = csv.reader(f)
            header = next(r)
            return header, [row for row in r if row]
    except FileNotFoundError:
        raise
    except (StopIteration, csv.Error) as exc:
        raise InvalidInputError(f"{path}: unreadable CSV") from exc


def load_dataset(data_dir) -> Dataset:
    """Read a dataset directory back into :class:`TrainingSample` objects.

    ``pose_true`` and ``noise`` are not stored and come back as ``None``;
    ``h_true`` is converted from degrees to radians.
    """
    d = Path(data_dir)
    if not d.is_dir():
        raise FileNotFoundError(f"dataset directory {d} does not exist")
    meta = {}
    if (d / "meta.json").exists():
        try:
            meta = json.loads((d / "meta.json").read_text())
        except json.JSONDecodeError as exc:
            raise InvalidInputError(f"{d / 'meta.json'}: invalid JSON") from exc
    header, rows = _read_csv(d / "annotations.csv")
    if (len(header) - 5) % 4 or len(header) <= 5:
        raise InvalidInputError("annotations.csv has an unexpected column count")
    D = (len(header) - 5) // 4
    truth = {}
    if (d / "truth_pose.csv").exists():
        _, prow = _read_csv(d / "truth_pose.csv")
        for r in prow:
            truth[int(r[0])] = np.array(r[1:], dtype=float)
    samples = []
    try:
        for r in rows:
            if len(r) != len(header):
                raise InvalidInputError(f"annotations.csv row {r[0]!r} has {len(r)} fields, expected {len(header)}")
            idx = int(r[0])
            vals = np.array(r[5:], dtype=float).reshape(D, 4)
            t = truth.get(idx)
            samples.append(TrainingSample(
                index=idx,
                image=read_pgm(d / "images" / f"{idx:04d}.pgm"),
                face_box=np.array(r[1:5], dtype=float),
                x_true=vals[:, :2].copy(),
                c_true=vals[:, 2].copy(),
                mask=vals[:, 3].copy(),
                h_true=None if t is None else np.deg2rad(t[:3]),
                alpha_true=None if t is None else t[3:].copy(),
            ))
    except ValueError as exc:
        raise InvalidInputError(f"annotations.csv: {exc}") from exc
    shapes3d = None
    if (d / "shapes3d.csv").exists():
        _, srows = _read_csv(d / "shapes3d.csv")
        shapes3d = np.array(srows, dtype=float).reshape(len(srows), -1, 3)
    return Dataset(samples, shapes3d, meta)


# ---------------------------------------------------------------- models

def _encode(a) -> dict:
    a = np.ascontiguousarray(np.asarray(a, dtype="<f8"))
    return {"dtype": "<f8", "shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _decode(doc: dict, name: str) -> np.ndarray:
    try:
        entry = doc["arrays"][name]
        if entry["dtype"] != "<f8":
            raise ModelFormatError(f"field {name!r}: unsupported dtype {entry['dtype']!r}")
        shape = tuple(int(s) for s in entry["shape"])
        buf = base64.b64decode(entry["data"], validate=True)
    except ModelFormatError:
        raise
    except (KeyError, TypeError, ValueError, binascii.Error) as exc:
        raise ModelFormatError(f"field {name!r}: missing or corrupt ({exc})") from exc
    if len(buf) != 8 * int(np.prod(shape)):
        raise ModelFormatError(f"field {name!r}: payload holds {len(buf)} bytes, shape {shape} needs {8 * int(np.prod(shape))}")
    return np.frombuffer(buf, dtype="<f8").reshape(shape).astype(float)


def model_to_document(model: CascadeModel) -> dict:
    arrays = {
        "deformable.mean_shape": _encode(model.deformable.mean_shape),
        "deformable.basis": _encode(model.deformable.basis),
        "deformable.variances": _encode(model.deformable.variances),
        "mean_face_2d": _encode(model.mean_face_2d),
        "train_errors": _encode(model.train_errors),
    }
    for i, (vis, lmk) in enumerate(model.stages):
        for name in ("T_a", "T_h"):
            arrays[f"stages.{i}.{name}"] = _encode(getattr(vis, name))
        for name in ("R_a", "R_h", "R_d"):
            arrays[f"stages.{i}.{name}"] = _encode(getattr(lmk, name))
    return {
        "format": "jointface-cascade",
        "version": model.version,
        "n_stages": model.n_stages,
        "n_train_states": int(model.n_train_states),
        "descriptor": asdict(model.descriptor),
        "solver": asdict(model.solver_cfg),
        "use_occlusion": bool(model.use_occlusion),
        "use_pose_deform": bool(model.use_pose_deform),
        "arrays": arrays,
    }


def model_from_document(doc: dict) -> CascadeModel:
    if not isinstance(doc, dict):
        raise ModelFormatError("model document must be a JSON object")
    version = doc.get("version")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"field 'version': unsupported model version {version!r}, expected {FORMAT_VERSION!r}")

    def need(key):
        if key not in doc:
            raise ModelFormatError(f"field {key!r}: missing")
        return doc[key]

    try:
        descriptor = DescriptorSpec(**need("descriptor"))
    except (TypeError, InvalidInputError) as exc:
        raise ModelFormatError(f"field 'descriptor': {exc}") from exc
    try:
        solver = SolverConfig(**need("solver"))
    except TypeError as exc:
        raise ModelFormatError(f"field 'solver': {exc}") from exc
    n_stages = need("n_stages")
    if not isinstance(n_stages, int) or n_stages < 0:
        raise ModelFormatError("field 'n_stages': must be a non-negative integer")
    stages = []
    for i in range(n_stages):
        vis = VisibilityRegressor(*(_decode(doc, f"stages.{i}.{n}") for n in ("T_a", "T_h")))
        lmk = LandmarkRegressor(*(_decode(doc, f"stages.{i}.{n}") for n in ("R_a", "R_h", "R_d")))
        stages.append((vis, lmk))
    deformable = DeformableModel(_decode(doc, "deformable.mean_shape"), _decode(doc, "deformable.basis"),
                                 _decode(doc, "deformable.variances"))
    return CascadeModel(stages=stages, deformable=deformable, mean_face_2d=_decode(doc, "mean_face_2d"),
                        descriptor=descriptor, solver_cfg=solver,
                        use_occlusion=bool(need("use_occlusion")), use_pose_deform=bool(need("use_pose_deform")),
                        train_errors=_decode(doc, "train_errors"), n_train_states=int(doc.get("n_train_states", 0)),
                        version=version)


def save_model(model: CascadeModel, path) -> None:
    """Write ``model`` as a versioned JSON document (atomic replace)."""
    text = json.dumps(model_to_document(model), sort_keys=True, indent=1) + "\n"
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def load_model(path) -> CascadeModel:
    """Read a model file; raises :class:`ModelFormatError` on any defect."""
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"field 'document': not valid JSON, possibly truncated ({exc})") from exc
    return model_from_document(doc)
