"""Synthetic colon phantom, deformation model and retraction simulator.

Conventions
-----------
* Centerline arclength ``s`` runs from the cecum (``s = 0``) to the anus
  (``s = total_length``).
* ``tip_arclength`` is the insertion depth of the scope tip measured from the
  anus along the centerline: ``total_length`` with the tip at the cecum, ``0``
  at the anus. The tip therefore sits at centerline arclength
  ``total_length - tip_arclength``.

The deformation is a parametric displacement field, not mechanics. Every
deformable segment contributes ``A_k * w_k(s) * g_k(tip) * e_k(s, t)`` where
``w_k`` is a sin^2 bump supported on the segment, ``g_k`` is 1 while the scope
still reaches into the segment and relaxes over ``release_length`` mm after
the tip has left it, and ``e_k`` is a direction of norm at most one. Part of
the sigmoid and rectum displacement is a seeded drift that is not a function
of the scope state.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.interpolate import CubicSpline

from colontrack.errors import InvalidInputError
from colontrack.geometry import (
    ColonoscopeShape,
    ColonShape,
    RigidTransform,
    as_points,
    cumulative_arclength,
    interpolate_at,
    polyline_tangents,
    resample_uniform,
    rotation_about_axis,
)

SEGMENT_NAMES = (
    "cecum",
    "ascending",
    "hepatic_flexure",
    "transverse",
    "splenic_flexure",
    "descending",
    "sigmoid",
    "rectum",
)

# segment end points as fractions of the total centerline length
SEGMENT_FRACTIONS = (0.04, 0.205, 0.25, 0.50, 0.54, 0.66, 0.90, 1.0)

REST_POINT_COUNT = 12
MARKER_COUNT = 12
MARKER_OFFSET_MM = 10.0
SCOPE_STATIONS_MM = (0.0, 60.0, 120.0, 180.0, 240.0, 300.0)
CENTERLINE_STEP_MM = 1.0
DEFAULT_NOISE_MM = 1.0
# angular sensor noise per mm of positional noise (rad / mm)
DIRECTION_NOISE_PER_MM = 0.02

# Template centerline control points (mm): x to the patient's left, y anterior,
# z superior. Each row is tagged with the segment it belongs to.
_TEMPLATE = (
    ("cecum", (-80.0, 30.0, 0.0)),
    ("cecum", (-95.0, 15.0, 25.0)),
    ("ascending", (-105.0, 0.0, 80.0)),
    ("ascending", (-110.0, -15.0, 150.0)),
    ("ascending", (-105.0, -20.0, 210.0)),
    ("hepatic_flexure", (-90.0, -10.0, 245.0)),
    ("hepatic_flexure", (-60.0, 15.0, 255.0)),
    ("transverse", (-25.0, 60.0, 215.0)),
    ("transverse", (15.0, 85.0, 175.0)),
    ("transverse", (55.0, 60.0, 215.0)),
    ("transverse", (85.0, 15.0, 260.0)),
    ("splenic_flexure", (110.0, -20.0, 270.0)),
    ("splenic_flexure", (125.0, -35.0, 235.0)),
    ("descending", (125.0, -35.0, 170.0)),
    ("descending", (120.0, -25.0, 100.0)),
    ("descending", (110.0, -10.0, 40.0)),
    ("sigmoid", (95.0, 15.0, 5.0)),
    ("sigmoid", (60.0, 45.0, -20.0)),
    ("sigmoid", (20.0, 50.0, -40.0)),
    ("sigmoid", (0.0, 25.0, -15.0)),
    ("sigmoid", (25.0, 5.0, 5.0)),
    ("sigmoid", (55.0, 15.0, -20.0)),
    ("rectum", (35.0, -15.0, -65.0)),
    ("rectum", (10.0, -45.0, -110.0)),
    ("rectum", (0.0, -45.0, -160.0)),
)


@dataclass(frozen=True, eq=False)
class ColonModel:
    """Rest-state phantom in CT coordinates."""

    centerline: np.ndarray
    segments: tuple  # ((name, start_mm, end_mm), ...)
    landmarks: dict
    rest_shape: ColonShape
    seed: int

    @property
    def total_length(self):
        return self.segments[-1][2]

    @property
    def rest_arclengths(self):
        return np.linspace(0.0, self.total_length, self.rest_shape.m)

    def segment_of(self, s):
        """Name of the segment containing centerline arclength ``s``."""
        if s < 0 or s > self.total_length:
            raise InvalidInputError(f"arclength {s} outside [0, {self.total_length}]")
        for name, start, end in self.segments:
            if start <= s < end:
                return name
        return self.segments[-1][0]

    def segment_bounds(self, name):
        for seg_name, start, end in self.segments:
            if seg_name == name:
                return start, end
        raise InvalidInputError(f"unknown segment {name!r}")

    def tip_to_centerline(self, tip_arclength):
        return self.total_length - tip_arclength


@dataclass(frozen=True)
class DeformationParams:
    """Per-segment mobility (mm) and the coupling between scope depth and displacement."""

    amplitudes: dict = field(
        default_factory=lambda: {
            "cecum": 0.0,
            "ascending": 15.0,
            "hepatic_flexure": 0.0,
            "transverse": 105.0,
            "splenic_flexure": 0.0,
            "descending": 15.0,
            "sigmoid": 200.0,
            "rectum": 60.0,
        }
    )
    # share of each segment's amplitude driven by seeded drift
    stochastic_share: dict = field(default_factory=lambda: {"sigmoid": 0.85, "rectum": 0.4})
    # distance past a segment's anal end over which it relaxes once the tip leaves
    release_length: float = 150.0
    noise_seed: int = 0

    def __post_init__(self):
        for name, amp in self.amplitudes.items():
            if name not in SEGMENT_NAMES:
                raise InvalidInputError(f"unknown segment {name!r} in amplitudes")
            if not amp >= 0:
                raise InvalidInputError(f"amplitude for {name} must be >= 0")
        for name, share in self.stochastic_share.items():
            if name not in SEGMENT_NAMES or not 0.0 <= share <= 1.0:
                raise InvalidInputError(f"bad stochastic share for {name!r}")
        if not self.release_length > 0:
            raise InvalidInputError("release_length must be > 0")

    def amplitude(self, name):
        return float(self.amplitudes.get(name, 0.0))

    def with_seed(self, noise_seed):
        return replace(self, noise_seed=int(noise_seed))

    @classmethod
    def zero(cls, noise_seed=0):
        return cls(amplitudes={name: 0.0 for name in SEGMENT_NAMES}, noise_seed=noise_seed)

    def lipschitz_bound(self):
        """Bound L with |u(tip1) - u(tip2)| <= L |tip1 - tip2| at a fixed time index."""
        # max slope of the smoothstep release ramp is 1.5 / release_length
        return max(self.amplitudes.values(), default=0.0) * 1.5 / self.release_length


@dataclass(frozen=True, eq=False)
class Frame:
    scope: ColonoscopeShape
    colon_truth: ColonShape
    tip_arclength: float
    time_index: int


@dataclass(frozen=True, eq=False)
class MarkerSet:
    labels: tuple
    points: np.ndarray
    arclengths: np.ndarray
    segments: tuple

    def __len__(self):
        return len(self.labels)


@dataclass(frozen=True, eq=False)
class InsertionSequence:
    frames: tuple
    markers: MarkerSet
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.frames)

    @property
    def tip_arclengths(self):
        return np.array([f.tip_arclength for f in self.frames])


# --------------------------------------------------------------------------- colon


def _smooth_curve(control, samples=6000):
    chord = np.linalg.norm(np.diff(control, axis=0), axis=1)
    knots = np.concatenate([[0.0], np.cumsum(chord)])
    spline = CubicSpline(knots, control, axis=0, bc_type="natural")
    return spline(np.linspace(0.0, knots[-1], samples))


def generate_colon(seed=0):
    """Deterministic synthetic colon for ``seed`` (total length 1350-1650 mm)."""
    rng = np.random.default_rng([int(seed), 0xC010])
    control = np.array([p for _, p in _TEMPLATE], dtype=float)
    control = control + rng.normal(0.0, 6.0, size=control.shape)
    curve = _smooth_curve(control)
    target_length = rng.uniform(1350.0, 1650.0)
    length = cumulative_arclength(curve)[-1]
    curve = curve[0] + (curve - curve[0]) * (target_length / length)
    total = cumulative_arclength(curve)[-1]
    count = int(round(total / CENTERLINE_STEP_MM)) + 1
    centerline = resample_uniform(curve, count)
    total = float(cumulative_arclength(centerline)[-1])

    bounds = [0.0] + [f * total for f in SEGMENT_FRACTIONS]
    bounds[-1] = total
    segments = tuple(
        (name, float(bounds[i]), float(bounds[i + 1])) for i, name in enumerate(SEGMENT_NAMES)
    )
    landmark_s = {
        "cecum_apex": 0.0,
        "hepatic_flexure": 0.5 * (bounds[2] + bounds[3]),
        "splenic_flexure": 0.5 * (bounds[4] + bounds[5]),
        "descending_sigmoid_junction": bounds[6],
        "anus": total,
    }
    landmarks = {k: interpolate_at(centerline, v) for k, v in landmark_s.items()}
    rest = ColonShape(resample_uniform(centerline, REST_POINT_COUNT))
    centerline.setflags(write=False)
    return ColonModel(
        centerline=centerline,
        segments=segments,
        landmarks=landmarks,
        rest_shape=rest,
        seed=int(seed),
    )


# --------------------------------------------------------------------- deformation


def _bump(s, start, end):
    x = (np.asarray(s, dtype=float) - start) / (end - start)
    inside = (x > 0.0) & (x < 1.0)
    return np.where(inside, np.sin(np.pi * np.clip(x, 0.0, 1.0)) ** 2, 0.0)


def _flat_top(s, start, end, taper):
    """Tukey window on the segment: cosine ramps over ``taper`` of its length at each end."""
    if taper >= 0.5:
        return _bump(s, start, end)
    x = (np.asarray(s, dtype=float) - start) / (end - start)
    ramp = np.minimum(x, 1.0 - x) / taper
    w = np.where(ramp >= 1.0, 1.0, np.sin(0.5 * np.pi * np.clip(ramp, 0.0, 1.0)) ** 2)
    return np.where((x > 0.0) & (x < 1.0), w, 0.0)


def _smoothstep(x):
    x = np.clip(x, 0.0, 1.0)
    return x * x * (3.0 - 2.0 * x)


def _release(s_tip, end, release_length):
    # 1 while the tip is at or proximal to the segment's anal end, 0 once it is
    # release_length past it
    return float(_smoothstep((end + release_length - s_tip) / release_length))


def _unit(v):
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    return v / np.where(n == 0, 1.0, n)


# deterministic displacement per segment: (slide share, sag, anterior, medial).
# The slide share moves material along the rest centerline; the remaining
# (1 - slide) share goes along the unit vector built from the other weights.
_DIRECTION_MIX = {
    "ascending": (0.3, 0.0, 0.8, 0.5),
    "transverse": (0.85, 1.0, 0.0, 0.0),
    "descending": (0.3, 0.0, 0.8, -0.5),
    "sigmoid": (0.3, 0.5, 0.7, 0.0),
    "rectum": (0.4, 0.0, -1.0, 0.0),
}

# Seeded drift. A per-run telescoping slide along the centerline (the colon
# pleating over the scope, invisible to a shape sensor) takes DRIFT_SLIDE of
# the stochastic share; the rest goes to the normal part of a random unit
# vector with a slowly wandering level.
DRIFT_SLIDE = {"sigmoid": 0.6, "rectum": 0.25}

# Ramp fraction of the window used for the non-slide part. Slides always use
# the full sin^2 bump so the material map s -> s + slide stays monotone.
VECTOR_TAPER = {"sigmoid": 0.2, "rectum": 0.3}

# slides are capped at FOLD_MARGIN * length / pi so that 1 + d(slide)/ds > 0
FOLD_MARGIN = 0.9


def _drift(noise_seed, name, time_index):
    """Seeded drift for one segment: (random unit vector, slide level, vector level).

    The slide level is fixed for the run with magnitude in [0.7, 1]; the vector
    level wanders in [-1, 1] with ``time_index``.
    """
    rng = np.random.default_rng([int(noise_seed), SEGMENT_NAMES.index(name), 0xD21F])
    direction = _unit(rng.normal(size=3))
    slide = rng.uniform(0.7, 1.0) * rng.choice([-1.0, 1.0])
    level = rng.uniform(0.5, 1.0) * rng.choice([-1.0, 1.0])
    amps = rng.dirichlet(np.ones(3))
    freqs = rng.uniform(2 * np.pi / 200.0, 2 * np.pi / 40.0, size=3)
    phases = rng.uniform(0.0, 2 * np.pi, size=3)
    wobble = float(np.sum(amps * np.sin(freqs * time_index + phases)))
    return direction, float(slide), float(np.clip(0.6 * level + 0.4 * wobble, -1.0, 1.0))


def displacement_field(model, s, tip_arclength, params, time_index):
    """Displacement (mm) of the material centerline points at arclengths ``s``.

    ``|u(s)| <= amplitude`` of the segment containing ``s``: the slide part is
    a chord of the rest centerline no longer than the slide length, and the
    slide and vector shares of each segment sum to at most one.
    """
    total = model.total_length
    if not -1e-9 <= tip_arclength <= total + 1e-9:
        raise InvalidInputError(f"tip_arclength {tip_arclength} outside [0, {total}]")
    s = np.atleast_1d(np.asarray(s, dtype=float))
    s_tip = total - float(tip_arclength)
    cl = model.centerline
    cum = np.linspace(0.0, total, cl.shape[0])
    tangents = polyline_tangents(cl)
    tan = _unit(np.stack([np.interp(s, cum, tangents[:, k]) for k in range(3)], axis=-1))
    sag = np.array([0.0, 0.0, -1.0])
    anterior = np.array([0.0, 1.0, 0.0])
    medial_sign = -np.sign(np.interp(s, cum, cl[:, 0]) - cl[:, 0].mean())
    medial = medial_sign[:, None] * np.array([1.0, 0.0, 0.0])

    slide = np.zeros(s.shape[0])
    vector = np.zeros((s.shape[0], 3))
    for name, start, end in model.segments:
        amp = params.amplitude(name)
        if amp == 0.0:
            continue
        gain = _release(s_tip, end, params.release_length)
        if gain == 0.0:
            continue
        scale = amp * gain * _bump(s, start, end)
        vscale = amp * gain * _flat_top(s, start, end, VECTOR_TAPER.get(name, 0.5))
        c_slide, ws, wa, wm = _DIRECTION_MIX.get(name, (0.0, 0.0, 1.0, 0.0))
        det_vec = _unit(ws * sag + wa * anterior + wm * medial)
        share = float(params.stochastic_share.get(name, 0.0))
        seg_slide = (1.0 - share) * c_slide
        seg_vec = (1.0 - share) * (1.0 - c_slide) * det_vec
        if share > 0.0:
            raw, slide_level, level = _drift(params.noise_seed, name, time_index)
            normal_part = raw - (tan @ raw)[:, None] * tan
            drift_slide = DRIFT_SLIDE.get(name, 0.0)
            seg_slide = seg_slide + share * drift_slide * slide_level
            seg_vec = seg_vec + share * level * (1.0 - drift_slide) * normal_part
        peak = amp * gain * abs(seg_slide)
        cap = FOLD_MARGIN * (end - start) / np.pi
        if peak > cap:
            seg_slide = seg_slide * cap / peak
        slide += scale * seg_slide
        vector += vscale[:, None] * seg_vec
    moved = np.clip(s + slide, 0.0, total)
    along = np.stack([np.interp(moved, cum, cl[:, k]) for k in range(3)], axis=-1)
    base = np.stack([np.interp(s, cum, cl[:, k]) for k in range(3)], axis=-1)
    return along - base + vector


def deform_colon(model, tip_arclength, params, time_index=0):
    """Deformed 12-point colon shape for a given scope depth and time."""
    s = model.rest_arclengths
    disp = displacement_field(model, s, tip_arclength, params, time_index)
    return ColonShape(model.rest_shape.points + disp)


def deformed_centerline(model, tip_arclength, params, time_index=0):
    s = np.linspace(0.0, model.total_length, model.centerline.shape[0])
    return model.centerline + displacement_field(model, s, tip_arclength, params, time_index)


# ----------------------------------------------------------------------- sequences


def place_markers(model):
    """Twelve markers at the rest-point arclengths, 10 mm off the centerline."""
    s = np.linspace(0.0, model.total_length, MARKER_COUNT)
    on_line = interpolate_at(model.centerline, s)
    cum = np.linspace(0.0, model.total_length, model.centerline.shape[0])
    tangents = polyline_tangents(model.centerline)
    tan = _unit(np.stack([np.interp(s, cum, tangents[:, k]) for k in range(3)], axis=-1))
    # radial direction: horizontal normal, falling back to y when the tangent is vertical
    radial = np.cross(tan, np.array([0.0, 0.0, 1.0]))
    small = np.linalg.norm(radial, axis=1) < 1e-6
    radial[small] = np.cross(tan[small], np.array([0.0, 1.0, 0.0]))
    points = on_line + MARKER_OFFSET_MM * _unit(radial)
    labels = tuple(f"M{i + 1:02d}" for i in range(MARKER_COUNT))
    segments = tuple(model.segment_of(float(v)) for v in s)
    points.setflags(write=False)
    s.setflags(write=False)
    return MarkerSet(labels=labels, points=points, arclengths=s, segments=segments)


def retraction_schedule(total, frame_count, rng):
    """Tip depths from ``total`` down to 0 with jittered but positive steps."""
    steps = rng.uniform(0.5, 1.5, size=frame_count - 1)
    steps = steps / steps.sum() * total
    depth = total - np.concatenate([[0.0], np.cumsum(steps)])
    depth[0] = total
    depth[-1] = 0.0
    return np.maximum(depth, 0.0)


def scope_shape_on(curve, tip_s_deformed, stations=SCOPE_STATIONS_MM):
    """Sample scope stations behind the tip along ``curve`` (deformed arclength).

    Stations past the anal end continue straight along the last tangent.
    Directions point forward, toward the tip.
    """
    cum = cumulative_arclength(curve)
    tangents = polyline_tangents(curve)
    c = tip_s_deformed + np.asarray(stations, dtype=float)
    inside = np.minimum(c, cum[-1])
    pts = np.stack([np.interp(inside, cum, curve[:, k]) for k in range(3)], axis=-1)
    tan = _unit(np.stack([np.interp(inside, cum, tangents[:, k]) for k in range(3)], axis=-1))
    beyond = c - inside
    pts = pts + beyond[:, None] * tangents[-1]
    return pts, -tan


def _perturb_directions(dirs, sigma, rng):
    if sigma <= 0:
        return dirs
    return _unit(dirs + rng.normal(0.0, sigma, size=dirs.shape))


def random_sensor_pose(rng, max_angle_deg=3.0, max_offset_mm=10.0):
    """Small random rigid offset between the CT frame and the sensor frame."""
    axis = _unit(rng.normal(size=3))
    angle = np.deg2rad(rng.uniform(0.0, max_angle_deg))
    offset = _unit(rng.normal(size=3)) * rng.uniform(0.0, max_offset_mm)
    return RigidTransform(rotation_about_axis(axis, angle), offset)


def simulate_retraction(
    model,
    params,
    frame_count,
    noise_mm=DEFAULT_NOISE_MM,
    seed=0,
    sensor_pose=None,
    window=20,
):
    """Simulate a cecum-to-anus retraction.

    ``sensor_pose`` maps CT coordinates into the scope sensor frame; scope
    shapes are reported in that frame. Colon truth stays in CT coordinates.
    """
    if frame_count < window:
        raise InvalidInputError(f"frame_count {frame_count} is shorter than the window {window}")
    if noise_mm < 0:
        raise InvalidInputError("noise_mm must be >= 0")
    rng = np.random.default_rng([int(seed), 0x5E0])
    total = model.total_length
    depths = retraction_schedule(total, frame_count, rng)
    s_grid = np.linspace(0.0, total, model.centerline.shape[0])
    dir_sigma = DIRECTION_NOISE_PER_MM * noise_mm
    rest_s = model.rest_arclengths
    frames = []
    for t, depth in enumerate(depths):
        disp = displacement_field(model, s_grid, depth, params, t)
        curve = model.centerline + disp
        s_tip = total - depth
        tip_c = float(np.interp(s_tip, s_grid, cumulative_arclength(curve)))
        pts, dirs = scope_shape_on(curve, tip_c)
        if noise_mm > 0:
            pts = pts + rng.normal(0.0, noise_mm, size=pts.shape)
        dirs = _perturb_directions(dirs, dir_sigma, rng)
        if sensor_pose is not None:
            pts = sensor_pose.apply_points(pts)
            dirs = _unit(sensor_pose.apply_directions(dirs))
        colon = model.rest_shape.points + displacement_field(model, rest_s, depth, params, t)
        frames.append(
            Frame(
                scope=ColonoscopeShape(pts, dirs),
                colon_truth=ColonShape(colon),
                tip_arclength=float(depth),
                time_index=t,
            )
        )
    meta = {
        "seed": int(seed),
        "noise_seed": int(params.noise_seed),
        "noise_mm": float(noise_mm),
        "frame_count": int(frame_count),
        "colon_seed": int(model.seed),
        "total_length": float(total),
    }
    if sensor_pose is not None:
        meta["sensor_pose"] = {
            "rotation": sensor_pose.rotation.tolist(),
            "translation": sensor_pose.translation.tolist(),
        }
    return InsertionSequence(frames=tuple(frames), markers=place_markers(model), meta=meta)


def icp_target(model, step_mm=5.0):
    """Dense uniform resampling of the rest centerline used as the ICP target."""
    count = int(np.ceil(model.total_length / step_mm)) + 1
    return resample_uniform(model.centerline, count)


def as_colon_points(values):
    return as_points(values, "colon points", min_count=2)
