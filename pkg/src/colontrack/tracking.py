"""Online tip tracking: register, window, estimate the deformed colon, map the tip.

The tip is mapped in two steps: the estimated colon point closest to the
registered tip gives an index ``a``; the answer is rest colon point ``a``.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from colontrack.errors import (
    ColonTrackError,
    ConfigurationError,
    DegenerateRegistrationError,
    InvalidInputError,
)
from colontrack.geometry import (
    ColonShape,
    EstimatedColonShape,
    RigidTransform,
    apply_transform,
    nearest_index,
)
from colontrack.registration import IcpParams, icp
from colontrack.sen import model as sen_model


class SenEstimator:
    """Runs the trained network on the current window."""

    def __init__(self, model):
        self.model = model

    @property
    def m(self):
        return self.model.meta.m

    @property
    def window(self):
        return self.model.meta.window

    def estimate(self, window, frame_index):
        return sen_model.forward(self.model, window)


class RestShapeEstimator:
    """Rigid baseline: the colon is assumed never to deform."""

    def __init__(self, rest_colon, window=20):
        self.rest = EstimatedColonShape(rest_colon.points)
        self.window = window

    @property
    def m(self):
        return self.rest.m

    def estimate(self, window, frame_index):
        return self.rest


class OracleEstimator:
    """Returns the ground-truth deformed colon of each frame (mapping-only checks)."""

    def __init__(self, sequence, window=20):
        self.truth = [f.colon_truth for f in sequence.frames]
        self.window = window

    @property
    def m(self):
        return self.truth[0].m

    def estimate(self, window, frame_index):
        return EstimatedColonShape(self.truth[frame_index].points)


@dataclass(frozen=True, eq=False)
class TipEstimate:
    position: np.ndarray
    colon_index: int
    estimated_shape: EstimatedColonShape
    distance_to_estimate: float
    frame_index: int = 0
    # extension: linear interpolation between neighbouring rest arclengths
    interpolated_arclength: float | None = None


@dataclass(eq=False)
class TrackerState:
    estimator: object
    rest_colon: ColonShape
    registration: RigidTransform
    window_length: int
    window: deque = field(default_factory=deque)
    frame_counter: int = 0
    n: int | None = None
    rest_arclengths: np.ndarray | None = None
    # when set, every frame is re-registered by ICP against these CT points,
    # starting from the previous registration (off by default)
    reregister_target: np.ndarray | None = None
    icp_params: IcpParams | None = None

    @property
    def model(self):
        return getattr(self.estimator, "model", None)


def tracker_init(
    model,
    rest_colon,
    registration=None,
    estimator=None,
    n=None,
    reregister_target=None,
    icp_params=None,
):
    """Create a tracker. ``model`` may be a SenModel or ``None`` when ``estimator`` is given."""
    registration = registration or RigidTransform.identity()
    if estimator is None:
        if model is None:
            raise ConfigurationError("either a model or an estimator is required")
        estimator = SenEstimator(model)
    if estimator.m != rest_colon.m:
        raise ConfigurationError(
            f"estimator produces {estimator.m} colon points but the rest colon has {rest_colon.m}"
        )
    if model is not None:
        n = model.meta.n
    cum = np.concatenate(
        [[0.0], np.cumsum(np.linalg.norm(np.diff(rest_colon.points, axis=0), axis=1))]
    )
    return TrackerState(
        estimator=estimator,
        rest_colon=rest_colon,
        registration=registration,
        window_length=int(estimator.window),
        window=deque(maxlen=int(estimator.window)),
        n=n,
        rest_arclengths=cum,
        reregister_target=None if reregister_target is None else np.asarray(reregister_target, float),
        icp_params=icp_params,
    )


def _padded_window(state):
    items = list(state.window)
    missing = state.window_length - len(items)
    return [items[0]] * missing + items


def push_frame(state, scope):
    """Register ``scope``, update the window, estimate and map the tip."""
    if state.n is not None and scope.n != state.n:
        raise InvalidInputError(f"scope shape has {scope.n} points, expected {state.n}")
    if state.n is None:
        state.n = scope.n
    if state.reregister_target is not None:
        # a failed re-registration (e.g. most stations outside the body) keeps
        # the previous transform
        try:
            fit = icp(scope.points, state.reregister_target, state.icp_params, initial=state.registration)
            state.registration = fit.transform
        except DegenerateRegistrationError:
            pass
    registered = apply_transform(state.registration, scope)
    state.window.append(registered)
    estimate = state.estimator.estimate(_padded_window(state), state.frame_counter)
    tip = registered.points[0]
    index, dist = nearest_index(tip, estimate.points)
    position = state.rest_colon.points[index]
    result = TipEstimate(
        position=position,
        colon_index=index,
        estimated_shape=estimate,
        distance_to_estimate=dist,
        frame_index=state.frame_counter,
        interpolated_arclength=_interpolated_arclength(state, estimate.points, tip, index),
    )
    state.frame_counter += 1
    return result


def _interpolated_arclength(state, est, tip, index):
    """Extension beyond the index map: project the tip onto the estimated polyline
    segments adjacent to ``index`` and carry the fraction over to rest arclength."""
    best = None
    for j in (index - 1, index):
        if j < 0 or j + 1 >= est.shape[0]:
            continue
        seg = est[j + 1] - est[j]
        denom = float(seg @ seg)
        u = 0.0 if denom == 0 else float(np.clip((tip - est[j]) @ seg / denom, 0.0, 1.0))
        d = float(np.linalg.norm(est[j] + u * seg - tip))
        if best is None or d < best[0]:
            best = (d, j, u)
    if best is None:
        return float(state.rest_arclengths[index])
    _, j, u = best
    s = state.rest_arclengths
    return float(s[j] + u * (s[j + 1] - s[j]))


def run_sequence(state, sequence):
    """Push every frame of ``sequence`` in order; one TipEstimate per frame."""
    out = []
    for k, frame in enumerate(sequence.frames):
        try:
            out.append(push_frame(state, frame.scope))
        except ColonTrackError as exc:
            raise type(exc)(f"frame {k}: {exc}") from exc
    return out


def register_first_frame(sequence, target_points, params=None):
    """ICP of the first scope shape against the dense centerline (scope -> CT)."""
    if len(sequence.frames) == 0:
        return RigidTransform.identity()
    result = icp(sequence.frames[0].scope.points, target_points, params or IcpParams())
    return result.transform


def registered_sequence(sequence, transform):
    """Copy of ``sequence`` with every scope shape mapped by ``transform``."""
    frames = tuple(
        replace(f, scope=apply_transform(transform, f.scope)) for f in sequence.frames
    )
    return replace(sequence, frames=frames)
