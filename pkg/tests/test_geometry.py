import numpy as np
import pytest

from adaptive_lio.geometry import (
    Pose,
    apply_pose,
    exp_so3,
    log_so3,
    orthonormalize,
    skew,
    so3_left_jacobian,
    so3_right_jacobian_inv,
)


def test_skew_basis_vector():
    np.testing.assert_array_equal(
        skew(np.array([1.0, 0.0, 0.0])),
        np.array([[0, 0, 0], [0, 0, -1], [0, 1, 0]], dtype=float))


def test_skew_zero():
    np.testing.assert_array_equal(skew(np.zeros(3)), np.zeros((3, 3)))


def test_skew_matches_cross_product():
    rng = np.random.default_rng(0)
    for _ in range(20):
        v, w = rng.normal(size=3), rng.normal(size=3)
        np.testing.assert_allclose(skew(v) @ w, np.cross(v, w), atol=1e-12)
        np.testing.assert_allclose(skew(v) @ v, np.zeros(3), atol=1e-12)


def test_skew_antisymmetric():
    v = np.array([1.0, 2.0, 3.0])
    np.testing.assert_array_equal(skew(v), -skew(v).T)


def test_exp_so3_identity():
    np.testing.assert_allclose(exp_so3(np.zeros(3)), np.eye(3), atol=1e-15)


def test_exp_so3_quarter_turn_about_z():
    # Rodrigues by hand: rotation by pi/2 about z sends x to y.
    R = exp_so3(np.array([0.0, 0.0, np.pi / 2]))
    np.testing.assert_allclose(R @ np.array([1.0, 0.0, 0.0]),
                               np.array([0.0, 1.0, 0.0]), atol=1e-12)


def test_exp_so3_group_inverse():
    w = np.array([0.1, -0.2, 0.3])
    np.testing.assert_allclose(exp_so3(w) @ exp_so3(-w), np.eye(3), atol=1e-12)


def test_exp_log_roundtrip():
    rng = np.random.default_rng(1)
    for _ in range(100):
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        theta = rng.uniform(1e-6, np.pi - 0.1)
        w = theta * direction
        np.testing.assert_allclose(log_so3(exp_so3(w)), w, atol=1e-9)


def test_exp_so3_small_angle_branch():
    w = np.array([1e-10, -2e-10, 5e-11])
    R = exp_so3(w)
    np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-15)
    np.testing.assert_allclose(log_so3(R), w, atol=1e-18)


def test_left_jacobian_integrates_constant_twist():
    # d/dt exp(w t) p: position of a point under constant rotation rate; the
    # left Jacobian satisfies int_0^1 exp(w s) ds = J_l(w).
    w = np.array([0.3, -0.5, 0.7])
    quad = np.zeros((3, 3))
    n = 20000
    for s in (np.arange(n) + 0.5) / n:
        quad += exp_so3(w * s) / n
    np.testing.assert_allclose(so3_left_jacobian(w), quad, atol=1e-8)


def test_right_jacobian_inverse_is_log_derivative():
    rng = np.random.default_rng(2)
    h = 1e-7
    for _ in range(20):
        phi = rng.normal(size=3) * 0.5
        R = exp_so3(phi)
        Jinv = so3_right_jacobian_inv(phi)
        for k in range(3):
            d = np.zeros(3)
            d[k] = h
            num = (log_so3(R @ exp_so3(d)) - log_so3(R @ exp_so3(-d))) / (2 * h)
            np.testing.assert_allclose(Jinv[:, k], num, atol=1e-6)


def test_orthonormalize_projects_back():
    rng = np.random.default_rng(3)
    R = exp_so3(rng.normal(size=3))
    noisy = R + 1e-6 * rng.normal(size=(3, 3))
    fixed = orthonormalize(noisy)
    np.testing.assert_allclose(fixed @ fixed.T, np.eye(3), atol=1e-12)
    assert np.linalg.det(fixed) == pytest.approx(1.0, abs=1e-12)


class TestPose:
    def test_identity_apply(self):
        p = np.array([1.0, 2.0, 3.0])
        np.testing.assert_array_equal(apply_pose(Pose.identity(), p), p)

    def test_pure_translation(self):
        T = Pose(np.eye(3), np.array([0.0, 0.0, 5.0]))
        np.testing.assert_allclose(T.apply([1.0, 1.0, 1.0]), [1.0, 1.0, 6.0])

    def test_half_turn(self):
        T = Pose(exp_so3(np.array([0.0, 0.0, np.pi])), np.zeros(3))
        np.testing.assert_allclose(T.apply([1.0, 0.0, 0.0]), [-1.0, 0.0, 0.0],
                                   atol=1e-12)

    def test_inverse_composes_to_identity(self):
        rng = np.random.default_rng(4)
        T = Pose(exp_so3(rng.normal(size=3)), rng.normal(size=3))
        I = T.compose(T.inverse())
        np.testing.assert_allclose(I.rotation, np.eye(3), atol=1e-9)
        np.testing.assert_allclose(I.translation, np.zeros(3), atol=1e-9)

    def test_composition_associates_on_points(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            T1 = Pose(exp_so3(rng.normal(size=3)), rng.normal(size=3))
            T2 = Pose(exp_so3(rng.normal(size=3)), rng.normal(size=3))
            p = rng.normal(size=3)
            np.testing.assert_allclose(T1.compose(T2).apply(p),
                                       T1.apply(T2.apply(p)), atol=1e-9)

    def test_long_composition_chain_stays_orthonormal(self):
        rng = np.random.default_rng(6)
        step = Pose(exp_so3(rng.normal(size=3) * 0.01), rng.normal(size=3) * 0.01)
        T = Pose.identity()
        for _ in range(10_000):
            T = T.compose(step)
        err = np.abs(T.rotation @ T.rotation.T - np.eye(3)).max()
        assert err < 1e-9
        assert abs(np.linalg.det(T.rotation) - 1.0) < 1e-9

    def test_apply_batched_matches_single(self):
        rng = np.random.default_rng(7)
        T = Pose(exp_so3(rng.normal(size=3)), rng.normal(size=3))
        pts = rng.normal(size=(10, 3))
        batched = T.apply(pts)
        for i in range(10):
            np.testing.assert_allclose(batched[i], T.apply(pts[i]), atol=1e-12)

    def test_retract_matches_exp(self):
        T = Pose.identity()
        delta = np.array([0.0, 0.0, 0.1, 1.0, 2.0, 3.0])
        T2 = T.retract(delta)
        np.testing.assert_allclose(T2.rotation, exp_so3(delta[:3]), atol=1e-12)
        np.testing.assert_allclose(T2.translation, delta[3:], atol=1e-12)

    def test_immutable_arrays(self):
        T = Pose.identity()
        with pytest.raises(ValueError):
            T.rotation[0, 0] = 2.0
