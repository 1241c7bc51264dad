"""3-D point and polyline primitives.

All coordinates are millimeters. Point sets are ``(K, 3)`` float arrays;
shape containers freeze their arrays so they can be shared between threads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from colontrack.errors import InvalidInputError

UNIT_TOL = 1e-9
ORTHO_TOL = 1e-9


def as_points(values, name="points", min_count=0):
    """Coerce ``values`` to a finite ``(K, 3)`` float array."""
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 1 and arr.size == 3:
        arr = arr.reshape(1, 3)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise InvalidInputError(f"{name} must have shape (K, 3), got {arr.shape}")
    if arr.shape[0] < min_count:
        raise InvalidInputError(f"{name} needs at least {min_count} points, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite values")
    return arr


def _frozen(arr):
    out = np.array(arr, dtype=float, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class ColonoscopeShape:
    """Scope points and unit directions, ordered tip first (index 0 is the tip)."""

    points: np.ndarray
    directions: np.ndarray

    def __post_init__(self):
        pts = as_points(self.points, "scope points", min_count=2)
        dirs = as_points(self.directions, "scope directions")
        if dirs.shape != pts.shape:
            raise InvalidInputError(
                f"directions shape {dirs.shape} does not match points shape {pts.shape}"
            )
        norms = np.linalg.norm(dirs, axis=1)
        if np.any(np.abs(norms - 1.0) > UNIT_TOL):
            raise InvalidInputError("scope directions must be unit vectors")
        object.__setattr__(self, "points", _frozen(pts))
        object.__setattr__(self, "directions", _frozen(dirs))

    @property
    def n(self):
        return self.points.shape[0]

    @property
    def tip(self):
        return self.points[0]

    @classmethod
    def from_unnormalized(cls, points, directions):
        dirs = as_points(directions, "scope directions")
        norms = np.linalg.norm(dirs, axis=1, keepdims=True)
        if np.any(norms == 0):
            raise InvalidInputError("zero-length scope direction")
        return cls(points, dirs / norms)


@dataclass(frozen=True, eq=False)
class ColonShape:
    """Ordered colon centerline points, cecum first, anus last."""

    points: np.ndarray

    def __post_init__(self):
        pts = as_points(self.points, "colon points", min_count=2)
        if np.any(np.linalg.norm(np.diff(pts, axis=0), axis=1) == 0):
            raise InvalidInputError("consecutive colon points must be distinct")
        object.__setattr__(self, "points", _frozen(pts))

    @property
    def m(self):
        return self.points.shape[0]


@dataclass(frozen=True, eq=False)
class EstimatedColonShape:
    """Network estimate of the deformed colon; index m pairs with rest point m."""

    points: np.ndarray

    def __post_init__(self):
        pts = as_points(self.points, "estimated points", min_count=1)
        object.__setattr__(self, "points", _frozen(pts))

    @property
    def m(self):
        return self.points.shape[0]


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """``p -> rotation @ p + translation`` with a proper rotation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=float)
        trans = np.asarray(self.translation, dtype=float).reshape(-1)
        if rot.shape != (3, 3) or trans.shape != (3,):
            raise InvalidInputError("rotation must be 3x3 and translation a 3-vector")
        if not (np.all(np.isfinite(rot)) and np.all(np.isfinite(trans))):
            raise InvalidInputError("transform contains non-finite values")
        if np.max(np.abs(rot.T @ rot - np.eye(3))) > ORTHO_TOL:
            raise InvalidInputError("rotation is not orthogonal")
        if abs(np.linalg.det(rot) - 1.0) > ORTHO_TOL:
            raise InvalidInputError("rotation determinant is not +1")
        object.__setattr__(self, "rotation", _frozen(rot))
        object.__setattr__(self, "translation", _frozen(trans))

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    def apply_points(self, points):
        pts = np.asarray(points, dtype=float)
        return pts @ self.rotation.T + self.translation

    def apply_directions(self, directions):
        return np.asarray(directions, dtype=float) @ self.rotation.T

    def compose(self, other):
        """Return ``self ∘ other`` (apply ``other`` first)."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self):
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def as_matrix(self):
        mat = np.eye(4)
        mat[:3, :3] = self.rotation
        mat[:3, 3] = self.translation
        return mat


def rotation_about_axis(axis, angle):
    """Rodrigues rotation matrix for ``angle`` radians about ``axis``."""
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    k = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * (k @ k)


def rotation_angle(rotation):
    """Angle in radians of a rotation matrix."""
    r = np.asarray(rotation, dtype=float)
    # atan2 form stays accurate near 0, where arccos of the trace loses half the digits
    sin = 0.5 * np.linalg.norm([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    cos = (np.trace(r) - 1.0) / 2.0
    return float(np.arctan2(sin, cos))


def transform_error(estimate, truth):
    """(rotation error in rad, translation error in mm) between two transforms."""
    rot_err = rotation_angle(estimate.rotation.T @ truth.rotation)
    return rot_err, float(np.linalg.norm(estimate.translation - truth.translation))


def cumulative_arclength(polyline):
    pts = as_points(polyline, "polyline", min_count=2)
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(seg)])


def arclength(polyline):
    """Total length of a polyline in mm."""
    return float(cumulative_arclength(polyline)[-1])


def interpolate_at(polyline, s):
    """Points at arclength(s) ``s`` along ``polyline``, clamped to its ends."""
    pts = as_points(polyline, "polyline", min_count=2)
    cum = cumulative_arclength(pts)
    s = np.clip(np.asarray(s, dtype=float), 0.0, cum[-1])
    return np.stack([np.interp(s, cum, pts[:, k]) for k in range(3)], axis=-1)


def resample_uniform(polyline, count):
    """Resample to ``count`` points at equal arclength spacing (linear interpolation)."""
    if int(count) != count or count < 2:
        raise InvalidInputError(f"count must be an integer >= 2, got {count}")
    pts = as_points(polyline, "polyline", min_count=2)
    cum = cumulative_arclength(pts)
    if cum[-1] <= 0:
        raise InvalidInputError("cannot resample a zero-length polyline")
    targets = np.linspace(0.0, cum[-1], int(count))
    out = np.stack([np.interp(targets, cum, pts[:, k]) for k in range(3)], axis=-1)
    out[0] = pts[0]
    out[-1] = pts[-1]
    return out


def polyline_tangents(polyline):
    """Unit tangents by central differences (one-sided at the ends)."""
    pts = as_points(polyline, "polyline", min_count=2)
    tan = np.gradient(pts, axis=0)
    norms = np.linalg.norm(tan, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise InvalidInputError("polyline has a stationary point; tangent undefined")
    return tan / norms


def nearest_index(query, points):
    """Index of and distance to the closest of ``points``; ties go to the lowest index."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise InvalidInputError("nearest_index needs a non-empty point list")
    q = np.asarray(query, dtype=float).reshape(3)
    d2 = np.sum((pts - q) ** 2, axis=1)
    idx = int(np.argmin(d2))
    return idx, float(np.sqrt(d2[idx]))


def nearest_indices(queries, points):
    """Vectorised :func:`nearest_index` for a batch of queries."""
    q = np.asarray(queries, dtype=float)
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise InvalidInputError("nearest_indices needs a non-empty point list")
    idx = np.empty(q.shape[0], dtype=int)
    # exact differences keep tie-breaking identical to nearest_index
    for start in range(0, q.shape[0], 256):
        block = q[start:start + 256]
        d2 = np.sum((block[:, None, :] - pts[None, :, :]) ** 2, axis=2)
        idx[start:start + 256] = np.argmin(d2, axis=1)
    dist = np.linalg.norm(q - pts[idx], axis=1)
    return idx, dist


def apply_transform(transform, shape):
    """Map a shape rigidly. Directions are rotated, never translated."""
    if isinstance(shape, ColonoscopeShape):
        # a proper rotation keeps unit norms to ~1e-16, far inside UNIT_TOL
        dirs = transform.apply_directions(shape.directions)
        return ColonoscopeShape(transform.apply_points(shape.points), dirs)
    if isinstance(shape, ColonShape):
        return ColonShape(transform.apply_points(shape.points))
    if isinstance(shape, EstimatedColonShape):
        return EstimatedColonShape(transform.apply_points(shape.points))
    raise InvalidInputError(f"cannot transform object of type {type(shape).__name__}")
