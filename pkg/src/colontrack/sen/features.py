"""Per-frame network input built from one colonoscope shape."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from colontrack.errors import InvalidInputError

POSITION_DIRECTION_COLUMNS = 6


@dataclass(frozen=True, eq=False)
class SenFeature:
    """A: (N, 6) normalised positions then directions; P, D: (N, N) correlations."""

    A: np.ndarray
    P: np.ndarray
    D: np.ndarray

    @property
    def n(self):
        return self.A.shape[0]


def plane_width(n):
    return max(n, POSITION_DIRECTION_COLUMNS)


def build_feature(shape, norm_center, norm_scale):
    """Position/direction table plus centred position and direction Gram matrices.

    ``P[i, j] = (p_i - mean(p)) . (p_j - mean(p)) / scale**2`` and
    ``D[i, j] = d_i . d_j``.
    """
    if not norm_scale > 0:
        raise InvalidInputError("normalisation scale must be positive")
    center = np.asarray(norm_center, dtype=float).reshape(3)
    pts = shape.points
    dirs = shape.directions
    a = np.hstack([(pts - center) / norm_scale, dirs])
    centered = (pts - pts.mean(axis=0)) / norm_scale
    p = centered @ centered.T
    d = dirs @ dirs.T
    # symmetrise away the last-bit asymmetry of the matrix products
    p = 0.5 * (p + p.T)
    d = 0.5 * (d + d.T)
    return SenFeature(A=a, P=p, D=d)


def feature_planes(feature):
    """Stack A, P and D as three zero-padded (N, max(N, 6)) channels."""
    n = feature.n
    width = plane_width(n)
    planes = np.zeros((3, n, width))
    planes[0, :, :POSITION_DIRECTION_COLUMNS] = feature.A
    planes[1, :, :n] = feature.P
    planes[2, :, :n] = feature.D
    return planes


def shape_planes(shape, norm_center, norm_scale):
    return feature_planes(build_feature(shape, norm_center, norm_scale))
