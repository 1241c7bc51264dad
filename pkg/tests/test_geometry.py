import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from colontrack.errors import InvalidInputError
from colontrack.geometry import (
    ColonoscopeShape,
    ColonShape,
    EstimatedColonShape,
    RigidTransform,
    apply_transform,
    arclength,
    interpolate_at,
    nearest_index,
    nearest_indices,
    resample_uniform,
    rotation_about_axis,
    transform_error,
)

from conftest import random_rotation

coords = st.floats(-500, 500, allow_nan=False, allow_infinity=False)


def polylines(min_size=2, max_size=30):
    return arrays(np.float64, st.tuples(st.integers(min_size, max_size), st.just(3)), elements=coords)


def distance_matrix(p):
    return np.linalg.norm(p[:, None, :] - p[None, :, :], axis=-1)


# ------------------------------------------------------------------ arclength


def test_arclength_single_segment():
    assert arclength([(0, 0, 0), (10, 0, 0)]) == 10.0


def test_arclength_right_angle():
    assert arclength([(0, 0, 0), (3, 0, 0), (3, 4, 0)]) == 7.0


def test_arclength_matches_resummation(rng):
    pts = rng.normal(0, 20, (50, 3))
    total = 0.0
    for i in range(49):
        total += np.sqrt(sum((pts[i + 1, k] - pts[i, k]) ** 2 for k in range(3)))
    assert arclength(pts) == pytest.approx(total, abs=1e-12)


def test_arclength_needs_two_points():
    with pytest.raises(InvalidInputError):
        arclength([(1, 2, 3)])


def test_arclength_rejects_nan():
    with pytest.raises(InvalidInputError):
        arclength([(0, 0, 0), (np.nan, 0, 0)])


# ------------------------------------------------------------------- resample


def test_resample_straight_line():
    out = resample_uniform([(0, 0, 0), (10, 0, 0)], 3)
    np.testing.assert_allclose(out, [(0, 0, 0), (5, 0, 0), (10, 0, 0)], atol=1e-12)


def test_resample_uniform_input_is_identity():
    pts = np.column_stack([np.linspace(0, 90, 10), np.zeros(10), np.zeros(10)])
    np.testing.assert_allclose(resample_uniform(pts, 10), pts, atol=1e-9)


def test_resample_helix_spacing():
    # constant curvature: equal arclength steps give equal chords
    t = np.linspace(0, 4 * np.pi, 1000)
    helix = np.column_stack([30 * np.cos(t), 30 * np.sin(t), 10 * t])
    out = resample_uniform(helix, 12)
    chords = np.linalg.norm(np.diff(out, axis=0), axis=1)
    assert np.var(chords) < 1e-6 * chords.mean()


def test_resample_endpoints_exact(rng):
    pts = rng.normal(0, 50, (20, 3))
    out = resample_uniform(pts, 7)
    np.testing.assert_allclose(out[0], pts[0], atol=1e-9)
    np.testing.assert_allclose(out[-1], pts[-1], atol=1e-9)


def test_resample_rejects_zero_length():
    with pytest.raises(InvalidInputError):
        resample_uniform([(1, 1, 1), (1, 1, 1)], 4)


def test_resample_rejects_small_count():
    with pytest.raises(InvalidInputError):
        resample_uniform([(0, 0, 0), (1, 0, 0)], 1)


def test_interpolate_clamps():
    line = [(0, 0, 0), (10, 0, 0)]
    np.testing.assert_allclose(interpolate_at(line, [-5.0, 4.0, 50.0]), [(0, 0, 0), (4, 0, 0), (10, 0, 0)])


# -------------------------------------------------------------- nearest index


def test_nearest_exact_hit(rng):
    pts = rng.normal(size=(10, 3))
    assert nearest_index(pts[4], pts) == (4, 0.0)


def test_nearest_tie_goes_to_lower_index():
    pts = [(0, 0, 0), (5, 0, 0), (0, 1, 0), (2, 1, 0), (5, 5, 5)]
    idx, dist = nearest_index((1, 1, 0), pts)
    assert idx == 2
    assert dist == 1.0


def test_nearest_matches_exhaustive_scan(rng):
    pts = rng.normal(0, 100, (1000, 3))
    for q in rng.normal(0, 100, (50, 3)):
        best, best_d = 0, np.inf
        for i, p in enumerate(pts):
            d = np.sqrt(np.sum((p - q) ** 2))
            if d < best_d:
                best, best_d = i, d
        idx, dist = nearest_index(q, pts)
        assert idx == best
        assert dist == pytest.approx(best_d, abs=1e-9)


def test_nearest_indices_agrees_with_scalar(rng):
    pts = rng.integers(-3, 3, (40, 3)).astype(float)  # many ties
    queries = rng.integers(-3, 3, (600, 3)).astype(float)
    idx, dist = nearest_indices(queries, pts)
    for q, i, d in zip(queries, idx, dist):
        assert (i, pytest.approx(d)) == nearest_index(q, pts)


def test_nearest_empty_raises():
    with pytest.raises(InvalidInputError):
        nearest_index((0, 0, 0), np.zeros((0, 3)))


# ---------------------------------------------------------------- transforms


def _scope(rng, n=6):
    return ColonoscopeShape.from_unnormalized(rng.normal(0, 30, (n, 3)), rng.normal(size=(n, 3)))


def test_identity_transform_keeps_shape(rng):
    scope = _scope(rng)
    out = apply_transform(RigidTransform.identity(), scope)
    np.testing.assert_array_equal(out.points, scope.points)
    np.testing.assert_array_equal(out.directions, scope.directions)


def test_translation_moves_points_only(rng):
    scope = _scope(rng)
    out = apply_transform(RigidTransform(np.eye(3), [1, 2, 3]), scope)
    np.testing.assert_allclose(out.points, scope.points + [1, 2, 3])
    np.testing.assert_allclose(out.directions, scope.directions)


def test_rotation_preserves_distances(rng):
    colon = ColonShape(rng.normal(0, 100, (12, 3)))
    t = RigidTransform(random_rotation(rng), rng.normal(0, 50, 3))
    out = apply_transform(t, colon)
    np.testing.assert_allclose(distance_matrix(out.points), distance_matrix(colon.points), atol=1e-9)


def test_apply_transform_keeps_type(rng):
    t = RigidTransform(random_rotation(rng), [0, 0, 1])
    assert isinstance(apply_transform(t, EstimatedColonShape(np.zeros((3, 3)))), EstimatedColonShape)
    with pytest.raises(InvalidInputError):
        apply_transform(t, np.zeros((3, 3)))


def test_reflection_rejected():
    with pytest.raises(InvalidInputError):
        RigidTransform(np.diag([1.0, 1.0, -1.0]), np.zeros(3))


def test_non_orthogonal_rejected():
    with pytest.raises(InvalidInputError):
        RigidTransform(np.diag([1.0, 1.0, 1.0 + 1e-6]), np.zeros(3))


def test_compose_and_inverse(rng):
    a = RigidTransform(random_rotation(rng), rng.normal(size=3))
    b = RigidTransform(random_rotation(rng), rng.normal(size=3))
    p = rng.normal(size=(5, 3))
    np.testing.assert_allclose(a.compose(b).apply_points(p), a.apply_points(b.apply_points(p)))
    rot_err, trans_err = transform_error(a.compose(a.inverse()), RigidTransform.identity())
    assert rot_err < 1e-7 and trans_err < 1e-12
    np.testing.assert_allclose(a.as_matrix() @ b.as_matrix(), a.compose(b).as_matrix(), atol=1e-12)


def test_rotation_about_axis_angle():
    r = rotation_about_axis([0, 0, 2], np.pi / 2)
    np.testing.assert_allclose(r @ [1, 0, 0], [0, 1, 0], atol=1e-15)


# ------------------------------------------------------------- shape types


def test_scope_requires_unit_directions():
    with pytest.raises(InvalidInputError):
        ColonoscopeShape(np.zeros((3, 3)), np.ones((3, 3)))


def test_scope_needs_two_points():
    with pytest.raises(InvalidInputError):
        ColonoscopeShape([(0, 0, 0)], [(1, 0, 0)])


def test_colon_rejects_repeated_points():
    with pytest.raises(InvalidInputError):
        ColonShape([(0, 0, 0), (0, 0, 0), (1, 0, 0)])


def test_shapes_are_read_only(rng):
    scope = _scope(rng)
    with pytest.raises(ValueError):
        scope.points[0, 0] = 1.0
    assert scope.tip is not None and scope.n == 6


# ------------------------------------------------------------- properties


def _walk(poly, s):
    """Point at arclength s found by walking segment by segment."""
    for a, b in zip(poly[:-1], poly[1:]):
        length = np.sqrt(np.sum((b - a) ** 2))
        if s <= length:
            return a + (b - a) * (s / length)
        s -= length
    return poly[-1]


@pytest.mark.invariant
@given(polylines(min_size=3), st.integers(2, 40))
def test_resample_matches_walk_oracle(poly, count):
    seg = np.linalg.norm(np.diff(poly, axis=0), axis=1)
    if np.any(seg < 1e-3):
        return
    out = resample_uniform(poly, count)
    assert out.shape == (count, 3)
    np.testing.assert_allclose(out[[0, -1]], poly[[0, -1]], atol=1e-9)
    step = seg.sum() / (count - 1)
    for k, p in enumerate(out):
        np.testing.assert_allclose(p, _walk(poly, k * step), atol=1e-6)


@pytest.mark.invariant
@given(polylines(), st.integers(0, 2**32 - 1))
def test_rigidity_property(poly, seed):
    rng = np.random.default_rng(seed)
    t = RigidTransform(random_rotation(rng), rng.normal(0, 100, 3))
    moved = t.apply_points(poly)
    np.testing.assert_allclose(distance_matrix(moved), distance_matrix(poly), atol=1e-9)
    assert arclength(moved) == pytest.approx(arclength(poly), abs=1e-9)


@pytest.mark.invariant
@given(polylines(1, 50), arrays(np.float64, 3, elements=coords))
def test_nearest_index_property(pts, q):
    d = np.linalg.norm(pts - q, axis=1)
    idx, dist = nearest_index(q, pts)
    assert d[idx] == pytest.approx(d.min(), abs=1e-9)
    assert not np.any(d[:idx] < dist - 1e-9)
    assert dist == pytest.approx(d.min(), abs=1e-9)


@pytest.mark.invariant
@given(st.integers(0, 2**32 - 1), st.integers(2, 12))
def test_directions_stay_unit(seed, n):
    rng = np.random.default_rng(seed)
    raw = rng.normal(size=(n, 3)) * rng.uniform(1e-3, 1e3, (n, 1))
    shape = ColonoscopeShape.from_unnormalized(rng.normal(0, 100, (n, 3)), raw)
    moved = apply_transform(RigidTransform(random_rotation(rng), rng.normal(0, 100, 3)), shape)
    for dirs in (shape.directions, moved.directions):
        np.testing.assert_allclose(np.linalg.norm(dirs, axis=1), 1.0, atol=1e-9)
