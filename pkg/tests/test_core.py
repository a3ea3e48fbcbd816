import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from coopsim.core import (
    GridSpec,
    Pose,
    cell_to_center,
    compose,
    ego_grid,
    invert,
    relative_pose,
    rotate_pairs,
    transform_point,
    world_to_cell,
    wrap_angle,
)

angles = st.floats(-10.0, 10.0, allow_nan=False)
coords = st.floats(-100.0, 100.0, allow_nan=False)


def random_pose(rng) -> Pose:
    """Full 3-D rotation from a random unit quaternion."""
    q = rng.normal(size=4)
    w, x, y, z = q / np.linalg.norm(q)
    r = np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])
    return Pose(r, rng.uniform(-50, 50, 3))


@st.composite
def poses(draw):
    return Pose.from_yaw(draw(angles), (draw(coords), draw(coords), draw(coords)))


def test_compose_with_inverse_is_identity():
    p = Pose.from_yaw(0.7, (3.0, -2.0, 1.0))
    assert compose(p, invert(p)).almost_equal(Pose.identity())


def test_quarter_turns_compose_to_half_turn():
    q = Pose.from_yaw(math.pi / 2)
    half = compose(q, q)
    assert np.allclose(half.rotation, [[-1, 0, 0], [0, -1, 0], [0, 0, 1]], atol=1e-12)


def test_invert_examples():
    assert invert(Pose.identity()) == Pose.identity()
    t = invert(Pose.from_yaw(0.0, (1.0, 2.0, 0.0)))
    assert np.allclose(t.translation, [-1, -2, 0])
    p = invert(Pose.from_yaw(math.pi / 2, (1.0, 0.0, 0.0)))
    assert math.isclose(p.yaw, -math.pi / 2)
    assert np.allclose(p.translation, [0, 1, 0], atol=1e-12)


def test_transform_point_examples():
    assert np.array_equal(transform_point(Pose.identity(), (3, 4, 0)), [3, 4, 0])
    p = Pose.from_yaw(math.pi / 2, (1.0, 0.0, 0.0))
    assert np.allclose(transform_point(p, (1, 0, 0)), [1, 1, 0], atol=1e-12)
    up = Pose.from_yaw(0.0, (0.0, 0.0, 5.0))
    assert np.array_equal(transform_point(up, (0, 0, 0)), [0, 0, 5])


def test_relative_pose_examples():
    a = Pose.from_yaw(0.3, (1.0, 2.0, 0.0))
    assert relative_pose(a, a).almost_equal(Pose.identity())
    b = Pose.from_yaw(0.0, (10.0, 0.0, 0.0))
    assert relative_pose(Pose.identity(), b).almost_equal(b)
    r = relative_pose(Pose.from_yaw(math.pi / 2), Pose.from_yaw(0.0, (1.0, 0.0, 0.0)))
    assert math.isclose(r.yaw, -math.pi / 2)
    assert np.allclose(r.translation, [0, -1, 0], atol=1e-12)


def test_world_to_cell_examples():
    g = ego_grid()
    assert world_to_cell(g, (-50.0, -50.0)) == (0, 0)
    assert world_to_cell(g, (0.0, 0.0)) == (100, 100)
    assert world_to_cell(g, (60.0, 0.0)) is None


def test_pose_rejects_bad_shapes():
    with pytest.raises(ValueError):
        Pose(np.eye(2), np.zeros(3))


@given(poses(), poses(), poses())
def test_compose_is_associative(p, q, r):
    assert compose(compose(p, q), r).almost_equal(compose(p, compose(q, r)))


def test_transform_composition_on_seeded_3d_poses():
    rng = np.random.default_rng(42)
    for _ in range(1000):
        p, q = random_pose(rng), random_pose(rng)
        x = rng.uniform(-100, 100, 3)
        lhs = transform_point(compose(p, q), x)
        rhs = transform_point(p, transform_point(q, x))
        assert np.allclose(lhs, rhs, rtol=0, atol=1e-9)
        assert compose(p, q).is_valid()


@given(st.integers(1, 40), st.integers(1, 40), st.sampled_from([0.25, 0.5, 1.0]),
       st.floats(-60, 60), st.floats(-60, 60), st.data())
def test_cell_center_round_trip(w, h, res, x0, y0, data):
    g = GridSpec(w, h, res, x0, y0)
    row = data.draw(st.integers(0, h - 1))
    col = data.draw(st.integers(0, w - 1))
    assert world_to_cell(g, cell_to_center(g, row, col)) == (row, col)


@given(angles)
def test_wrap_angle_range(a):
    w = wrap_angle(a)
    assert -math.pi < w <= math.pi
    assert math.isclose(math.cos(w), math.cos(a), abs_tol=1e-9)
    assert math.isclose(math.sin(w), math.sin(a), abs_tol=1e-9)


@given(angles, angles)
def test_rotate_pairs_is_a_group_action(a, b):
    v = np.random.default_rng(3).normal(size=16)
    once = rotate_pairs(rotate_pairs(v, a), b)
    assert np.allclose(once, rotate_pairs(v, a + b), atol=1e-9)
    assert math.isclose(np.linalg.norm(once), np.linalg.norm(v), rel_tol=1e-12)
