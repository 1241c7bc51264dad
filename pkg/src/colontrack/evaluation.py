"""Marker-based tracking error and multi-run aggregation."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass

import numpy as np

from colontrack.errors import InvalidInputError


@dataclass(frozen=True)
class MarkerError:
    marker_label: str
    error_mm: float
    frame_of_closest_approach: int
    segment: str = ""


@dataclass(frozen=True)
class MarkerStats:
    label: str
    segment: str
    avg_mm: float
    max_mm: float
    min_mm: float


@dataclass(frozen=True)
class TrackingReport:
    markers: tuple
    runs: int
    config_digest: str = ""

    def by_segment(self):
        groups = {}
        for row in self.markers:
            groups.setdefault(row.segment, []).append(row.label)
        return groups

    def mean_error(self, segments):
        vals = [row.avg_mm for row in self.markers if row.segment in segments]
        if not vals:
            raise InvalidInputError(f"no markers in segments {sorted(segments)}")
        return float(np.mean(vals))

    def as_dict(self):
        return {
            "markers": [
                {
                    "label": r.label,
                    "segment": r.segment,
                    "avg_mm": r.avg_mm,
                    "max_mm": r.max_mm,
                    "min_mm": r.min_mm,
                }
                for r in self.markers
            ],
            "runs": self.runs,
            "config_digest": self.config_digest,
        }

    def to_json(self):
        return json.dumps(self.as_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["label", "segment", "avg_mm", "max_mm", "min_mm"])
        for r in self.markers:
            writer.writerow([r.label, r.segment, f"{r.avg_mm:.3f}", f"{r.max_mm:.3f}", f"{r.min_mm:.3f}"])
        return buf.getvalue()

    def to_table(self):
        lines = [
            f"Tracking error per marker over {self.runs} run(s)",
            f"{'marker':<8}{'segment':<18}{'avg mm':>9}{'max mm':>9}{'min mm':>9}",
        ]
        for r in self.markers:
            lines.append(
                f"{r.label:<8}{r.segment:<18}{r.avg_mm:>9.1f}{r.max_mm:>9.1f}{r.min_mm:>9.1f}"
            )
        return "\n".join(lines) + "\n"

    @classmethod
    def from_dict(cls, data):
        rows = tuple(
            MarkerStats(
                label=r["label"],
                segment=r["segment"],
                avg_mm=float(r["avg_mm"]),
                max_mm=float(r["max_mm"]),
                min_mm=float(r["min_mm"]),
            )
            for r in data["markers"]
        )
        return cls(markers=rows, runs=int(data["runs"]), config_digest=data.get("config_digest", ""))


def closest_approach_frame(tip_centerline_s, marker_s):
    """First frame minimising |tip arclength - marker arclength|."""
    s = np.asarray(tip_centerline_s, dtype=float)
    if s.size == 0:
        raise InvalidInputError("no frames to search")
    return int(np.argmin(np.abs(s - marker_s)))


def marker_errors(estimates, truth_tip_arclengths, markers, model):
    """Distance from the reported tip to each marker when the true tip is closest to it.

    ``truth_tip_arclengths`` are insertion depths (from the anus); they are
    converted to centerline arclength with ``model.total_length``.
    """
    if len(estimates) != len(truth_tip_arclengths):
        raise InvalidInputError(
            f"{len(estimates)} estimates but {len(truth_tip_arclengths)} truth arclengths"
        )
    if len(markers) == 0:
        raise InvalidInputError("marker set is empty")
    tip_s = model.total_length - np.asarray(truth_tip_arclengths, dtype=float)
    out = []
    for label, point, s, seg in zip(markers.labels, markers.points, markers.arclengths, markers.segments):
        k = closest_approach_frame(tip_s, s)
        err = float(np.linalg.norm(np.asarray(estimates[k].position) - point))
        out.append(MarkerError(marker_label=label, error_mm=err, frame_of_closest_approach=k, segment=seg))
    return out


def aggregate(runs, config_digest=""):
    """Per-marker average, maximum and minimum over runs (marker order of the first run)."""
    if not runs:
        raise InvalidInputError("no runs to aggregate")
    labels = [e.marker_label for e in runs[0]]
    if len(set(labels)) != len(labels):
        raise InvalidInputError("duplicate marker labels")
    table = {label: [] for label in labels}
    segments = {e.marker_label: e.segment for e in runs[0]}
    for k, run in enumerate(runs):
        run_labels = {e.marker_label for e in run}
        if run_labels != set(labels) or len(run) != len(labels):
            raise InvalidInputError(f"run {k} covers a different marker set")
        for e in run:
            table[e.marker_label].append(e.error_mm)
    rows = []
    for label in labels:
        vals = np.array(table[label])
        avg = float(np.mean(vals))
        lo = float(np.min(vals))
        hi = float(np.max(vals))
        # guard the ordering against last-bit rounding of the mean
        avg = min(max(avg, lo), hi)
        rows.append(MarkerStats(label, segments[label], avg, hi, lo))
    return TrackingReport(markers=tuple(rows), runs=len(runs), config_digest=config_digest)
