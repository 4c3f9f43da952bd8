import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gpsfuse.geom import (Pose3, Rot3, exp_batch, exp_matrix, exp_so3, log_batch, log_so3,
                          quat_to_matrix_batch, right_jacobian, right_jacobian_batch,
                          right_jacobian_inv, right_jacobian_inv_batch, skew, skew_batch,
                          yaw_rotation)

from conftest import random_rotation

vec3 = st.lists(st.floats(-10, 10, allow_nan=False), min_size=3, max_size=3).map(np.array)


def test_exp_identity():
    assert np.array_equal(exp_so3(np.zeros(3)).q, [1.0, 0.0, 0.0, 0.0])


def test_exp_quarter_turn_about_z():
    R = exp_so3([0.0, 0.0, np.pi / 2])
    assert np.allclose(R.rotate([1.0, 0.0, 0.0]), [0.0, 1.0, 0.0], atol=1e-12)


def test_log_identity_and_small_rotation():
    assert np.array_equal(log_so3(Rot3()), np.zeros(3))
    assert np.allclose(log_so3(exp_so3([0.3, 0.0, 0.0])), [0.3, 0.0, 0.0], atol=1e-9)


def test_log_at_pi_tie_break():
    for axis in ([0, 0, 1], [0, 0, -1]):
        R = exp_so3(np.pi * np.array(axis, dtype=float))
        assert np.allclose(log_so3(R), [0.0, 0.0, np.pi], atol=1e-9)
    R = exp_so3([0.0, -np.pi, 0.0])
    assert np.allclose(log_so3(R), [0.0, np.pi, 0.0], atol=1e-9)
    R = exp_so3([-np.pi, 0.0, 0.0])
    assert np.allclose(log_so3(R), [np.pi, 0.0, 0.0], atol=1e-9)


def test_skew_examples(rng):
    assert np.array_equal(skew(np.zeros(3)), np.zeros((3, 3)))
    assert np.allclose(skew([1.0, 0.0, 0.0]) @ [0.0, 1.0, 0.0], [0.0, 0.0, 1.0])
    for _ in range(100):
        v, w = rng.normal(size=(2, 3))
        assert np.allclose(skew(v) @ w, np.cross(v, w), atol=1e-14)


def test_yaw_rotation():
    assert np.allclose(yaw_rotation(0.0).matrix(), np.eye(3))
    assert np.allclose(yaw_rotation(np.pi).rotate([1.0, 0.0, 0.0]), [-1.0, 0.0, 0.0], atol=1e-12)
    assert np.allclose(log_so3(yaw_rotation(0.7)), [0.0, 0.0, 0.7], atol=1e-12)
    assert yaw_rotation(0.7).yaw() == pytest.approx(0.7, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(vec3, st.floats(0.0, np.pi - 1e-6))
def test_log_exp_round_trip(direction, angle):
    n = np.linalg.norm(direction)
    v = direction / n * angle if n > 1e-3 else np.zeros(3)
    assert np.allclose(log_so3(exp_so3(v)), v, atol=1e-9)


@settings(max_examples=100, deadline=None)
@given(vec3, vec3)
def test_quaternion_stays_unit_and_inverse_is_identity(a, b):
    R = exp_so3(a) @ exp_so3(b)
    assert abs(np.linalg.norm(R.q) - 1.0) < 1e-9
    I = R @ R.inverse()
    assert np.allclose(I.matrix(), np.eye(3), atol=1e-9)


def test_taylor_branch_continuity():
    d = np.array([0.6, -0.3, 0.74])
    d /= np.linalg.norm(d)
    for mag in (1e-10, 1e-7, 1e-4):
        below = exp_so3(d * mag * (1 - 1e-9)).q
        above = exp_so3(d * mag * (1 + 1e-9)).q
        assert np.max(np.abs(below - above)) < 1e-12
    assert np.max(np.abs(exp_so3(d * 1e-10).q - exp_so3(np.zeros(3)).q)) < 1e-9
    # straddle the branch switch at exactly the threshold
    lo = exp_so3(d * np.nextafter(1e-7, 0)).q
    hi = exp_so3(d * 1e-7).q
    assert np.max(np.abs(lo - hi)) < 1e-12


def test_matrix_and_quaternion_forms_agree(rng):
    for _ in range(50):
        phi = rng.normal(size=3)
        assert np.allclose(exp_matrix(phi), exp_so3(phi).matrix(), atol=1e-13)
        R = Rot3.from_matrix(exp_matrix(phi))
        assert np.allclose(R.matrix(), exp_matrix(phi), atol=1e-13)


def test_passive_convention():
    # C_AB maps B coordinates into A: a frame B yawed by +90 deg sees A's x-axis as -y
    C_AB = yaw_rotation(np.pi / 2)
    assert np.allclose(C_AB.inverse().rotate([1.0, 0.0, 0.0]), [0.0, -1.0, 0.0], atol=1e-12)


def test_right_jacobian_definition(rng):
    for _ in range(30):
        phi = rng.normal(size=3)
        d = 1e-6 * rng.normal(size=3)
        lhs = exp_matrix(phi + d)
        rhs = exp_matrix(phi) @ exp_matrix(right_jacobian(phi) @ d)
        assert np.max(np.abs(lhs - rhs)) < 1e-10
        assert np.allclose(right_jacobian_inv(phi) @ right_jacobian(phi), np.eye(3), atol=1e-10)


def test_batch_helpers_match_scalar(rng):
    phi = np.vstack([rng.normal(size=(40, 3)), 1e-9 * rng.normal(size=(5, 3)),
                     [[0.0, 0.0, np.pi - 1e-6]]])
    C = exp_batch(phi)
    for k, p in enumerate(phi):
        assert np.allclose(C[k], exp_matrix(p), atol=1e-13)
        assert np.allclose(right_jacobian_batch(phi)[k], right_jacobian(p), atol=1e-12)
        assert np.allclose(right_jacobian_inv_batch(phi)[k], right_jacobian_inv(p), atol=1e-9)
        assert np.allclose(skew_batch(phi)[k], skew(p))
    assert np.allclose(log_batch(C), [log_so3(Rot3.from_matrix(c)) for c in C], atol=1e-9)
    q = np.array([random_rotation(rng).q for _ in range(20)])
    assert np.allclose(quat_to_matrix_batch(q), [Rot3(x).matrix() for x in q], atol=1e-14)


def test_pose_group_laws(rng):
    def rand_pose():
        return Pose3(random_rotation(rng), rng.normal(size=3) * 10)

    I = Pose3.identity()
    for _ in range(50):
        A, B, C = rand_pose(), rand_pose(), rand_pose()
        assert np.allclose(((A @ B) @ C).matrix(), (A @ (B @ C)).matrix(), atol=1e-9)
        assert np.allclose((A @ I).matrix(), A.matrix(), atol=1e-12)
        assert np.allclose((I @ A).matrix(), A.matrix(), atol=1e-12)
        assert np.allclose((A @ A.inverse()).matrix(), np.eye(4), atol=1e-9)
        p = rng.normal(size=3)
        assert np.allclose(A @ p, A.matrix()[:3, :3] @ p + A.matrix()[:3, 3])


def test_types_are_immutable():
    R = Rot3()
    with pytest.raises(ValueError):
        R.q[0] = 2.0
    P = Pose3()
    with pytest.raises(ValueError):
        P.translation[0] = 1.0
