"""On-disk formats shared by the CLI stages.

* ``colon.json``: the rest-state colon model plus its markers.
* sequence JSONL: one header line, then one frame per line
  ``{"t", "scope": {"points", "dirs"}, "colon", "tip_s"}``.
* track JSONL: one header line, then ``{"t", "index", "pos", "dist"}`` per frame.

Every header carries the digest of the colon model it was produced against so
later stages can refuse mismatched inputs.
"""

from __future__ import annotations

import hashlib
import json
import os

import numpy as np

from colontrack.errors import ConfigurationError, InvalidInputError, StorageError
from colontrack.geometry import ColonoscopeShape, ColonShape
from colontrack.simulator import ColonModel, Frame, InsertionSequence, MarkerSet

FORMAT_VERSION = 1


def digest(obj):
    """sha256 of the canonical JSON encoding of ``obj``."""
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _write_text(path, text):
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise StorageError(f"cannot write {os.fspath(path)}: {exc.strerror}") from exc


def _read_text(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise StorageError(f"cannot read {os.fspath(path)}: {exc.strerror}") from exc


def _parse_json(text, where):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"{where}: malformed JSON ({exc.msg})") from exc


def write_json(path, obj):
    _write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path):
    return _parse_json(_read_text(path), os.fspath(path))


# ------------------------------------------------------------------------ colon


def colon_to_dict(model, markers):
    return {
        "kind": "colon",
        "version": FORMAT_VERSION,
        "seed": model.seed,
        "centerline": model.centerline.tolist(),
        "segments": [[name, start, end] for name, start, end in model.segments],
        "landmarks": {k: np.asarray(v).tolist() for k, v in sorted(model.landmarks.items())},
        "rest_shape": model.rest_shape.points.tolist(),
        "markers": {
            "labels": list(markers.labels),
            "points": markers.points.tolist(),
            "arclengths": markers.arclengths.tolist(),
            "segments": list(markers.segments),
        },
    }


def colon_from_dict(data):
    try:
        centerline = np.array(data["centerline"], dtype=float)
        centerline.setflags(write=False)
        model = ColonModel(
            centerline=centerline,
            segments=tuple((str(n), float(a), float(b)) for n, a, b in data["segments"]),
            landmarks={k: np.array(v, dtype=float) for k, v in data["landmarks"].items()},
            rest_shape=ColonShape(data["rest_shape"]),
            seed=int(data["seed"]),
        )
        raw = data["markers"]
        points = np.array(raw["points"], dtype=float)
        arcs = np.array(raw["arclengths"], dtype=float)
        points.setflags(write=False)
        arcs.setflags(write=False)
        markers = MarkerSet(
            labels=tuple(raw["labels"]),
            points=points,
            arclengths=arcs,
            segments=tuple(raw["segments"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidInputError(f"colon model file is incomplete: {exc}") from exc
    return model, markers


def save_colon(path, model, markers):
    data = colon_to_dict(model, markers)
    write_json(path, data)
    return digest(data)


def load_colon(path):
    """Returns (model, markers, digest)."""
    data = read_json(path)
    model, markers = colon_from_dict(data)
    return model, markers, digest(data)


# -------------------------------------------------------------------- sequences


def sequence_lines(sequence, header):
    head = dict(header)
    head.update({"kind": "sequence", "version": FORMAT_VERSION, "frames": len(sequence.frames)})
    lines = [json.dumps(head, sort_keys=True)]
    for f in sequence.frames:
        lines.append(
            json.dumps(
                {
                    "t": f.time_index,
                    "scope": {"points": f.scope.points.tolist(), "dirs": f.scope.directions.tolist()},
                    "colon": f.colon_truth.points.tolist(),
                    "tip_s": f.tip_arclength,
                },
                sort_keys=True,
            )
        )
    return "\n".join(lines) + "\n"


def write_sequence(path, sequence, header):
    _write_text(path, sequence_lines(sequence, header))


def read_sequence(path, markers=None):
    """Returns (header, InsertionSequence). Directions are re-validated on load."""
    text = _read_text(path)
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise InvalidInputError(f"{os.fspath(path)}: empty sequence file")
    header = _parse_json(lines[0], f"{os.fspath(path)}:1")
    if header.get("kind") != "sequence":
        raise InvalidInputError(f"{os.fspath(path)}: first line is not a sequence header")
    frames = []
    for k, line in enumerate(lines[1:], start=2):
        rec = _parse_json(line, f"{os.fspath(path)}:{k}")
        try:
            frames.append(
                Frame(
                    scope=ColonoscopeShape(rec["scope"]["points"], rec["scope"]["dirs"]),
                    colon_truth=ColonShape(rec["colon"]),
                    tip_arclength=float(rec["tip_s"]),
                    time_index=int(rec["t"]),
                )
            )
        except KeyError as exc:
            raise InvalidInputError(f"{os.fspath(path)}:{k}: missing field {exc}") from exc
    if int(header.get("frames", len(frames))) != len(frames):
        raise InvalidInputError(
            f"{os.fspath(path)}: header announces {header['frames']} frames, found {len(frames)}"
        )
    seq = InsertionSequence(frames=tuple(frames), markers=markers, meta=header)
    return header, seq


def check_digest(header, expected, what, path):
    found = header.get("colon_digest")
    if found != expected:
        raise ConfigurationError(
            f"{os.fspath(path)} was produced for colon model {str(found)[:12]}, "
            f"but {what} uses {expected[:12]}"
        )


# ------------------------------------------------------------------ estimates


def estimate_lines(estimates, header):
    head = dict(header)
    head.update({"kind": "track", "version": FORMAT_VERSION, "frames": len(estimates)})
    lines = [json.dumps(head, sort_keys=True)]
    for e in estimates:
        lines.append(
            json.dumps(
                {
                    "t": e.frame_index,
                    "index": e.colon_index,
                    "pos": np.asarray(e.position, dtype=float).tolist(),
                    "dist": e.distance_to_estimate,
                },
                sort_keys=True,
            )
        )
    return "\n".join(lines) + "\n"


def write_estimates(path, estimates, header):
    _write_text(path, estimate_lines(estimates, header))


def read_estimates(path):
    """Returns (header, list of {"t", "index", "pos", "dist"} dicts)."""
    lines = [ln for ln in _read_text(path).splitlines() if ln.strip()]
    if not lines:
        raise InvalidInputError(f"{os.fspath(path)}: empty track file")
    header = _parse_json(lines[0], f"{os.fspath(path)}:1")
    if header.get("kind") != "track":
        raise InvalidInputError(f"{os.fspath(path)}: first line is not a track header")
    rows = [_parse_json(ln, f"{os.fspath(path)}:{k}") for k, ln in enumerate(lines[1:], start=2)]
    return header, rows
