import math

import numpy as np
import pytest
from hypothesis import example, given, settings, strategies as st

from gicsim import liegroup as lg
from gicsim.errors import (
    FrameMismatchError,
    MalformedSe3Error,
    NearPiRotationError,
    NotSkewError,
)

from oracles import expm_taylor, homogeneous, twist_matrix

RNG = np.random.default_rng(20240811)


def random_pose(rng, translation=2.0):
    return lg.random_pose(rng, translation)


# ---------------------------------------------------------------------------
# hat / vee


def test_hat3_zero():
    np.testing.assert_array_equal(lg.hat3(np.zeros(3)), np.zeros((3, 3)))


def test_hat3_canonical_basis():
    np.testing.assert_array_equal(
        lg.hat3([0.0, 0.0, 1.0]),
        np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]]),
    )


def test_hat3_cross_product_property():
    rng = np.random.default_rng(1)
    for _ in range(50):
        w = rng.normal(size=3)
        x = rng.normal(size=3)
        np.testing.assert_allclose(lg.hat3(w) @ x, np.cross(w, x), atol=1e-12)


def test_hat3_vee3_roundtrip():
    w = np.array([1.0, 2.0, 3.0])
    np.testing.assert_array_equal(lg.vee3(lg.hat3(w)), w)


def test_vee3_zero():
    np.testing.assert_array_equal(lg.vee3(np.zeros((3, 3))), np.zeros(3))


def test_vee3_rejects_non_skew():
    with pytest.raises(NotSkewError):
        lg.vee3(np.eye(3))


def test_hat6_vee6_roundtrip():
    xi = lg.Twist(np.array([0.1, -0.2, 0.3]), np.array([1.0, 2.0, -3.0]))
    m = lg.hat6(xi)
    assert np.all(m[3] == 0.0)
    back = lg.vee6(m)
    np.testing.assert_array_equal(back.v, xi.v)
    np.testing.assert_array_equal(back.w, xi.w)


def test_vee6_rejects_bad_bottom_row():
    m = np.zeros((4, 4))
    m[3, 0] = 1e-3
    with pytest.raises(MalformedSe3Error):
        lg.vee6(m)


# ---------------------------------------------------------------------------
# exp / log


def test_exp_zero_twist_is_identity():
    g = lg.exp_se3(lg.Twist.zero(), theta=1.7)
    np.testing.assert_allclose(g.rot.m, np.eye(3), atol=1e-15)
    np.testing.assert_allclose(g.pos, np.zeros(3), atol=1e-15)


def test_exp_pure_rotation_z():
    xi = lg.Twist(np.zeros(3), np.array([0.0, 0.0, 1.0]))
    g = lg.exp_se3(xi, theta=math.pi / 2)
    np.testing.assert_allclose(g.rot.m, lg.rot_z(math.pi / 2).m, atol=1e-12)
    np.testing.assert_allclose(g.pos, np.zeros(3), atol=1e-15)


def test_exp_matches_matrix_exponential_oracle():
    rng = np.random.default_rng(2)
    for _ in range(30):
        xi = rng.normal(size=6)
        theta = rng.uniform(-1.5, 1.5)
        expected = expm_taylor(twist_matrix(xi) * theta)
        g = lg.exp_se3(lg.Twist.from_array(xi), theta)
        np.testing.assert_allclose(g.matrix(), expected, atol=1e-12)


def test_exp_log_roundtrip_random_poses():
    rng = np.random.default_rng(3)
    count = 0
    while count < 100:
        g = random_pose(rng)
        angle = math.acos(min(1.0, max(-1.0, 0.5 * (np.trace(g.rot.m) - 1.0))))
        if angle >= math.pi - 1e-3:
            continue
        count += 1
        back = lg.exp_se3(lg.log_se3(g))
        np.testing.assert_allclose(back.matrix(), g.matrix(), atol=1e-9)


def test_log_raises_at_pi():
    with pytest.raises(NearPiRotationError):
        lg.log_se3(lg.Pose(lg.rot_z(math.pi), np.zeros(3)))
    with pytest.raises(NearPiRotationError):
        lg.log_se3(lg.Pose(lg.rot_x(math.pi - 1e-8), np.zeros(3)))
    # just inside the branch is fine
    lg.log_se3(lg.Pose(lg.rot_x(math.pi - 1e-3), np.zeros(3)))


@given(st.lists(st.floats(-1.0, 1.0), min_size=6, max_size=6))
@example([0.0, 1.0, 0.0, 0.0, 0.0, 3.1905262890158414e-06])
@settings(max_examples=200, deadline=None)
def test_exp_log_roundtrip_hypothesis(coords):
    xi = np.asarray(coords)
    if np.linalg.norm(xi[3:]) >= math.pi - 1e-3:
        xi[3:] *= (math.pi - 1e-2) / np.linalg.norm(xi[3:])
    g = lg.exp_se3(lg.Twist.from_array(xi))
    back = lg.exp_se3(lg.log_se3(g))
    assert np.max(np.abs(back.matrix() - g.matrix())) < 1e-9


def test_exp_log_roundtrip_tiny_angles():
    # the (1 - cos)/t^2 style coefficients must stay accurate down to the
    # numerical floor, not just above some series cutoff
    rng = np.random.default_rng(77)
    for exponent in np.linspace(-12, -1, 40):
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        xi = np.concatenate([rng.normal(size=3), axis * 10.0 ** exponent])
        g = lg.exp_se3(lg.Twist.from_array(xi))
        back = lg.exp_se3(lg.log_se3(g))
        assert np.max(np.abs(back.matrix() - g.matrix())) < 1e-12


# ---------------------------------------------------------------------------
# compose / inverse / adjoint


def test_compose_with_identity():
    rng = np.random.default_rng(4)
    g = random_pose(rng)
    for other in (lg.compose(g, lg.Pose.identity()), lg.compose(lg.Pose.identity(), g)):
        np.testing.assert_allclose(other.matrix(), g.matrix(), atol=1e-15)


def test_compose_matches_matrix_product():
    rng = np.random.default_rng(5)
    for _ in range(30):
        g1, g2 = random_pose(rng), random_pose(rng)
        expected = homogeneous(g1.rot.m, g1.pos) @ homogeneous(g2.rot.m, g2.pos)
        np.testing.assert_allclose(lg.compose(g1, g2).matrix(), expected, atol=1e-12)


def test_inverse_composes_to_identity():
    rng = np.random.default_rng(6)
    for _ in range(30):
        g = random_pose(rng)
        np.testing.assert_allclose(
            lg.compose(g, lg.inverse(g)).matrix(), np.eye(4), atol=1e-9)
        np.testing.assert_allclose(
            lg.compose(lg.inverse(g), g).matrix(), np.eye(4), atol=1e-9)


def test_adjoint_identity():
    np.testing.assert_array_equal(lg.adjoint(lg.Pose.identity()), np.eye(6))


def test_adjoint_pure_translation():
    p = np.array([1.0, -2.0, 0.5])
    ad = lg.adjoint(lg.Pose(lg.Rotation.identity(), p))
    np.testing.assert_allclose(ad[:3, 3:], lg.hat3(p), atol=1e-15)
    np.testing.assert_allclose(ad[:3, :3], np.eye(3), atol=1e-15)
    np.testing.assert_allclose(ad[3:, 3:], np.eye(3), atol=1e-15)


def test_adjoint_composition_property():
    rng = np.random.default_rng(7)
    for _ in range(30):
        g1, g2 = random_pose(rng), random_pose(rng)
        np.testing.assert_allclose(
            lg.adjoint(lg.compose(g1, g2)), lg.adjoint(g1) @ lg.adjoint(g2), atol=1e-9)


def test_adjoint_moves_twists_like_conjugation():
    # Ad_g xi == (g hat(xi) g^-1)^vee, cross-checked against raw 4x4 algebra
    rng = np.random.default_rng(8)
    for _ in range(20):
        g = random_pose(rng)
        xi = rng.normal(size=6)
        m = homogeneous(g.rot.m, g.pos) @ twist_matrix(xi) @ homogeneous(*_rp(lg.inverse(g)))
        expected = np.concatenate([m[:3, 3], [m[2, 1], m[0, 2], m[1, 0]]])
        np.testing.assert_allclose(lg.adjoint(g) @ xi, expected, atol=1e-10)


def _rp(g):
    return g.rot.m, g.pos


# ---------------------------------------------------------------------------
# GCEV, distance, elastic wrench


def test_gcev_zero_at_goal():
    rng = np.random.default_rng(9)
    g = random_pose(rng)
    np.testing.assert_allclose(lg.gcev(g, g), np.zeros(6), atol=1e-15)


def test_gcev_pure_translation():
    g = lg.Pose(lg.Rotation.identity(), np.array([1.0, 0.0, 0.0]))
    np.testing.assert_allclose(
        lg.gcev(g, lg.Pose.identity()), [1, 0, 0, 0, 0, 0], atol=1e-15)


@pytest.mark.parametrize("theta", [0.3, 1.1, math.pi / 2])
def test_gcev_single_axis_rotation(theta):
    g = lg.Pose(lg.rot_z(theta), np.zeros(3))
    expected = np.array([0, 0, 0, 0, 0, 2 * math.sin(theta)])
    np.testing.assert_allclose(lg.gcev(g, lg.Pose.identity()), expected, atol=1e-12)


def test_distance_zero_iff_same_pose():
    rng = np.random.default_rng(10)
    g = random_pose(rng)
    assert lg.distance(g, g) == pytest.approx(0.0, abs=1e-12)


def test_distance_unit_translation():
    g = lg.Pose(lg.Rotation.identity(), np.array([0.0, 1.0, 0.0]))
    assert lg.distance(g, lg.Pose.identity()) == pytest.approx(0.5, abs=1e-12)


def test_distance_pi_rotation():
    g = lg.Pose(lg.rot_z(math.pi), np.zeros(3))
    assert lg.distance(g, lg.Pose.identity()) == pytest.approx(4.0, abs=1e-12)


def test_elastic_wrench_zero_at_goal():
    rng = np.random.default_rng(11)
    g = random_pose(rng)
    w = lg.elastic_wrench(g, g, np.ones(3), np.ones(3))
    np.testing.assert_allclose(w.as_array(), np.zeros(6), atol=1e-15)
    assert w.frame == lg.BODY


def test_elastic_wrench_reduces_to_linear_spring():
    k = 37.5
    g = lg.Pose(lg.Rotation.identity(), np.array([0.2, -0.1, 0.05]))
    w = lg.elastic_wrench(g, lg.Pose.identity(), k * np.ones(3), np.ones(3))
    np.testing.assert_allclose(w.f, k * g.pos, atol=1e-12)
    np.testing.assert_allclose(w.tau, np.zeros(3), atol=1e-15)


def test_elastic_wrench_rejects_nonpositive_gains():
    g = lg.Pose.identity()
    with pytest.raises(ValueError):
        lg.elastic_wrench(g, g, np.array([1.0, 0.0, 1.0]), np.ones(3))


def test_elastic_wrench_matches_componentwise_formula():
    # direct evaluation of the stiffness-matrix expression as an oracle
    rng = np.random.default_rng(12)
    for _ in range(20):
        g, gd = random_pose(rng), random_pose(rng)
        kp = rng.uniform(1.0, 100.0, size=3)
        kr = rng.uniform(1.0, 100.0, size=3)
        r, p, rd, pd = g.rot.m, g.pos, gd.rot.m, gd.pos
        f_p = r.T @ rd @ np.diag(kp) @ rd.T @ (p - pd)
        m = np.diag(kr) @ rd.T @ r - r.T @ rd @ np.diag(kr)
        f_r = np.array([m[2, 1], m[0, 2], m[1, 0]])
        w = lg.elastic_wrench(g, gd, kp, kr)
        np.testing.assert_allclose(w.f, f_p, atol=1e-10)
        np.testing.assert_allclose(w.tau, f_r, atol=1e-10)


# ---------------------------------------------------------------------------
# velocity error


def test_velocity_error_regulation_case():
    rng = np.random.default_rng(13)
    g, gd = random_pose(rng), random_pose(rng)
    vb = lg.Twist.from_array(rng.normal(size=6))
    e = lg.velocity_error(g, gd, vb, lg.Twist.zero())
    np.testing.assert_allclose(e.as_array(), vb.as_array(), atol=1e-15)


def test_velocity_error_zero_when_matched():
    rng = np.random.default_rng(14)
    g = random_pose(rng)
    vb = lg.Twist.from_array(rng.normal(size=6))
    e = lg.velocity_error(g, g, vb, vb)
    np.testing.assert_allclose(e.as_array(), np.zeros(6), atol=1e-12)


def test_velocity_error_matches_adjoint_formula():
    rng = np.random.default_rng(15)
    for _ in range(20):
        g, gd = random_pose(rng), random_pose(rng)
        vb = lg.Twist.from_array(rng.normal(size=6))
        vd = lg.Twist.from_array(rng.normal(size=6))
        g_bd = lg.compose(lg.inverse(g), gd)
        expected = vb.as_array() - lg.adjoint(g_bd) @ vd.as_array()
        e = lg.velocity_error(g, gd, vb, vd)
        np.testing.assert_allclose(e.as_array(), expected, atol=1e-10)


def test_velocity_error_rejects_spatial_twist():
    g = lg.Pose.identity()
    with pytest.raises(FrameMismatchError):
        lg.velocity_error(g, g, lg.Twist.zero(lg.SPATIAL), lg.Twist.zero())


# ---------------------------------------------------------------------------
# Cartesian benchmark error


def test_cartesian_error_zero_at_goal():
    rng = np.random.default_rng(16)
    g = random_pose(rng)
    np.testing.assert_allclose(lg.cartesian_error(g, g), np.zeros(6), atol=1e-12)


def test_cartesian_error_pure_translation():
    g = lg.Pose(lg.Rotation.identity(), np.array([0.0, 1.0, 0.0]))
    np.testing.assert_allclose(
        lg.cartesian_error(g, lg.Pose.identity()), [0, 1, 0, 0, 0, 0], atol=1e-15)


@pytest.mark.parametrize("theta", [0.4, 1.0])
def test_cartesian_error_single_axis_sign(theta):
    # oracle: evaluate the column cross products directly
    r = lg.rot_z(theta).m
    rd = np.eye(3)
    e_r = sum(np.cross(rd[:, i], r[:, i]) for i in range(3))
    np.testing.assert_allclose(e_r, [0, 0, 2 * math.sin(theta)], atol=1e-12)
    e = lg.cartesian_error(lg.Pose(lg.rot_z(theta), np.zeros(3)), lg.Pose.identity())
    np.testing.assert_allclose(e, np.concatenate([np.zeros(3), e_r]), atol=1e-12)


def test_cartesian_error_not_left_invariant():
    # rotating the whole scene changes the benchmark error vector
    g = lg.Pose(lg.Rotation.identity(), np.array([0.3, 0.0, 0.0]))
    gd = lg.Pose.identity()
    gl = lg.Pose(lg.rot_z(1.0), np.zeros(3))
    before = lg.cartesian_error(g, gd)
    after = lg.cartesian_error(lg.compose(gl, g), lg.compose(gl, gd))
    assert np.max(np.abs(before - after)) > 0.1


# ---------------------------------------------------------------------------
# wrench frame changes


def test_wrench_body_to_spatial_identity_pose():
    w = lg.Wrench.from_array(np.arange(6.0))
    out = lg.wrench_body_to_spatial(lg.Pose.identity(), w)
    np.testing.assert_allclose(out.as_array(), w.as_array(), atol=1e-15)
    assert out.frame == lg.SPATIAL


def test_wrench_body_to_spatial_pure_rotation():
    rng = np.random.default_rng(17)
    rot = lg.random_rotation(rng)
    g = lg.Pose(rot, np.zeros(3))
    w = lg.Wrench.from_array(rng.normal(size=6))
    out = lg.wrench_body_to_spatial(g, w)
    np.testing.assert_allclose(out.f, rot.m @ w.f, atol=1e-12)
    np.testing.assert_allclose(out.tau, rot.m @ w.tau, atol=1e-12)


def test_wrench_frame_roundtrip():
    rng = np.random.default_rng(18)
    for _ in range(20):
        g = random_pose(rng)
        w = lg.Wrench.from_array(rng.normal(size=6))
        back = lg.wrench_spatial_to_body(g, lg.wrench_body_to_spatial(g, w))
        np.testing.assert_allclose(back.as_array(), w.as_array(), atol=1e-9)
        assert back.frame == lg.BODY


def test_wrench_frame_tag_enforced():
    g = lg.Pose.identity()
    with pytest.raises(FrameMismatchError):
        lg.wrench_body_to_spatial(g, lg.Wrench.zero(lg.SPATIAL))
    with pytest.raises(FrameMismatchError):
        lg.wrench_spatial_to_body(g, lg.Wrench.zero(lg.BODY))


# ---------------------------------------------------------------------------
# invariance / equivariance properties (full-size runs live in the
# acceptance suite; these are fast smoke-level versions of the same checks)


def test_left_invariance_suite_small():
    rng = np.random.default_rng(19)
    kp = np.array([50.0, 80.0, 120.0])
    kr = np.array([10.0, 20.0, 30.0])
    worst = 0.0
    for _ in range(2000):
        g, gd, gl = random_pose(rng), random_pose(rng), random_pose(rng)
        vb = lg.Twist.from_array(rng.normal(size=6))
        vd = lg.Twist.from_array(rng.normal(size=6))
        tg, tgd = lg.compose(gl, g), lg.compose(gl, gd)
        worst = max(worst, np.max(np.abs(lg.gcev(g, gd) - lg.gcev(tg, tgd))))
        worst = max(worst, np.max(np.abs(
            lg.elastic_wrench(g, gd, kp, kr).as_array()
            - lg.elastic_wrench(tg, tgd, kp, kr).as_array())))
        worst = max(worst, abs(lg.distance(g, gd) - lg.distance(tg, tgd)))
        worst = max(worst, np.max(np.abs(
            lg.velocity_error(g, gd, vb, vd).as_array()
            - lg.velocity_error(tg, tgd, vb, vd).as_array())))
    assert worst <= 1e-9


def test_goal_randomization_identity():
    # moving the goal by gl equals moving the current pose by gl^-1
    rng = np.random.default_rng(20)
    kp = np.array([100.0, 100.0, 100.0])
    kr = np.array([10.0, 10.0, 10.0])
    for _ in range(500):
        g, gd, gl = random_pose(rng), random_pose(rng), random_pose(rng)
        lhs = lg.elastic_wrench(g, lg.compose(gl, gd), kp, kr).as_array()
        rhs = lg.elastic_wrench(lg.compose(lg.inverse(gl), g), gd, kp, kr).as_array()
        assert np.max(np.abs(lhs - rhs)) <= 1e-9


def test_spatial_wrench_equivariance():
    rng = np.random.default_rng(21)
    kp = np.array([200.0, 150.0, 90.0])
    kr = np.array([25.0, 35.0, 45.0])
    for _ in range(500):
        g, gd, gl = random_pose(rng), random_pose(rng), random_pose(rng)
        lhs = lg.wrench_body_to_spatial(
            lg.compose(gl, g),
            lg.elastic_wrench(lg.compose(gl, g), lg.compose(gl, gd), kp, kr)).as_array()
        rhs = lg.adjoint(lg.inverse(gl)).T @ lg.wrench_body_to_spatial(
            g, lg.elastic_wrench(g, gd, kp, kr)).as_array()
        assert np.max(np.abs(lhs - rhs)) <= 1e-9


def test_distance_zero_iff_gcev_zero():
    rng = np.random.default_rng(22)
    for _ in range(200):
        g, gd = random_pose(rng), random_pose(rng)
        angle = math.acos(min(1.0, max(-1.0, 0.5 * (np.trace(gd.rot.m.T @ g.rot.m) - 1.0))))
        if angle >= math.pi - 1e-3:
            continue
        d = lg.distance(g, gd)
        n = np.linalg.norm(lg.gcev(g, gd))
        assert (d < 1e-18) == (n < 1e-18)


def test_small_angle_gcev_matches_log():
    rng = np.random.default_rng(23)
    for _ in range(100):
        phi = rng.normal(size=3)
        phi *= rng.uniform(1e-6, 1e-3) / np.linalg.norm(phi)
        g = lg.Pose(lg.Rotation(lg.so3_exp(phi)), np.zeros(3))
        e_r = lg.gcev(g, lg.Pose.identity())[3:]
        np.testing.assert_allclose(e_r, 2.0 * lg.so3_log(g.rot.m),
                                   rtol=1e-6, atol=1e-12)


# ---------------------------------------------------------------------------
# rotation hygiene and serialization


def test_rotation_validation():
    with pytest.raises(ValueError):
        lg.Rotation(np.eye(3) * 1.001)
    with pytest.raises(ValueError):
        lg.Rotation(np.diag([1.0, 1.0, -1.0]))


def test_project_rotation_repairs_drift():
    rng = np.random.default_rng(24)
    r = lg.random_rotation(rng).m + rng.normal(scale=1e-4, size=(3, 3))
    fixed = lg.project_rotation(r)
    np.testing.assert_allclose(fixed.m @ fixed.m.T, np.eye(3), atol=1e-12)
    assert np.linalg.det(fixed.m) == pytest.approx(1.0, abs=1e-12)


def test_quat_roundtrip_canonical_sign():
    rng = np.random.default_rng(25)
    for _ in range(100):
        r = lg.random_rotation(rng)
        q = r.as_quat()
        assert q[0] >= 0.0
        np.testing.assert_allclose(lg.matrix_from_quat(q), r.m, atol=1e-12)


def test_pose_json_roundtrip():
    rng = np.random.default_rng(26)
    g = random_pose(rng)
    d = lg.pose_to_dict(g)
    assert set(d) == {"p", "q"}
    back = lg.pose_from_dict(d)
    np.testing.assert_allclose(back.matrix(), g.matrix(), atol=1e-12)


@given(st.lists(st.floats(-1.0, 1.0), min_size=4, max_size=4))
@settings(max_examples=200, deadline=None)
def test_quat_matrix_roundtrip_hypothesis(q):
    q = np.asarray(q)
    if np.linalg.norm(q) < 1e-3:
        return
    m = lg.matrix_from_quat(q)
    assert np.max(np.abs(m @ m.T - np.eye(3))) < 1e-9
    q2 = lg.quat_from_matrix(m)
    assert q2[0] >= 0.0
    qn = q / np.linalg.norm(q)
    # w == 0 leaves the overall sign ambiguous; compare up to sign
    delta = min(np.max(np.abs(q2 - qn)), np.max(np.abs(q2 + qn)))
    assert delta < 1e-9
