import math

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from core.discretise import defect_residual, rk4_step
from core.dynamics import (
    ForceContext,
    cable_length,
    contact_gap,
    contact_point,
    ellipsoid_distance,
    projection,
    system_matrices,
    vector_field,
)
from core.errors import PreconditionError, SingularityError
from core.linearise import dynamics_jacobians, finite_difference_jacobian
from core.params import BeltModel, Pulley, SystemState


def _state(k1, k2, v1=(0, 0, 0), v2=(0, 0, 0)):
    x = np.zeros(18)
    x[0:3], x[3:6], x[9:12], x[12:15] = k1, k2, v1, v2
    return x


# ── geometry ────────────────────────────────────────────────────────────────

def test_projection():
    np.testing.assert_allclose(projection((1, 0, 0), (0, 0, 0)), [1, 0, 0])
    np.testing.assert_allclose(projection((1, 1, 0), (0, 0, 0)), [0.70710678, 0.70710678, 0], atol=1e-8)
    with pytest.raises(SingularityError):
        projection((0, 0, 0), (0, 0, 0))


def test_cable_length(scenario1, ctx_s1, ctx_s2):
    assert cable_length(_state((0, 0, 1), (0, 0, 0)), ctx_s1) == pytest.approx(1.0)
    assert cable_length(_state((0, 0, 1), (0, 0, 1)), ctx_s1) == 0.0
    assert cable_length(_state((0.10, 0.55, 0.53), (0, 0, 0)), ctx_s2) == pytest.approx(0.22)


def test_contact_point_lies_on_the_rim(scenario1):
    p1 = scenario1.pulley1
    below = p1.O + np.array([0.02, 0.0, -0.1])
    np.testing.assert_allclose(contact_point(below, p1), p1.O - np.array([0, 0, p1.groove_radius]))
    on_axis = p1.O + np.array([0.05, 0.0, 0.0])
    np.testing.assert_allclose(contact_point(on_axis, p1), p1.O - np.array([0, 0, p1.groove_radius]))


def test_contact_gap(scenario1, ctx_s1):
    p1 = scenario1.pulley1
    rim = p1.O - np.array([0, 0, p1.groove_radius])
    assert contact_gap(_state((0, 0, 1), rim), ctx_s1, 1e-3) == pytest.approx(1e-3)
    off = rim - np.array([0, 0, 0.1])
    assert contact_gap(_state((0, 0, 1), off), ctx_s1, 1e-3) == pytest.approx(math.sqrt(0.01 + 1e-6))
    assert contact_gap(_state((0, 0, 1), off), ctx_s1, 0.0) == pytest.approx(0.1)


def test_ellipsoid_distance():
    p = Pulley((0, 0, 0), 0.5, (2.0, 1.0, 1.0), axis=(0.0, 0.0, 1.0))
    assert ellipsoid_distance((2, 1, 0), p) == pytest.approx(math.sqrt(2) - 1)
    assert ellipsoid_distance((4, 0, 0), p) == pytest.approx(1.0)
    assert ellipsoid_distance((0, 1, 0), p) == pytest.approx(0.0)
    assert ellipsoid_distance((0, 0, 0), p) == pytest.approx(-1.0)


@pytest.mark.parametrize("rotvec", [(0.0, 0.0, 1.2), (0.3, -0.8, 0.5), (2.5, 0.4, -1.1)])
def test_ellipsoid_distance_is_rotation_invariant(rotvec):
    p = Pulley((0.1, 0.3, 0.5), 0.03, (0.035, 0.035, 0.01))
    R = Rotation.from_rotvec(rotvec).as_matrix()
    turned = Pulley(tuple(R @ p.O), p.groove_radius, p.ellipsoid_semi_axes, axis=tuple(R @ p.axis))
    for point in [(0.1, 0.33, 0.5), (0.104, 0.3, 0.47), (0.2, 0.25, 0.61), (0.1, 0.3, 0.5)]:
        q = R @ np.asarray(point)
        assert ellipsoid_distance(q, turned) == pytest.approx(ellipsoid_distance(point, p), abs=1e-12)
        assert ellipsoid_distance(q, turned, turned.groove_semi_axes) == \
            pytest.approx(ellipsoid_distance(point, p, p.groove_semi_axes), abs=1e-12)


def test_ellipsoid_distance_on_a_shaft_along_x(scenario1):
    p1 = scenario1.pulley1
    assert ellipsoid_distance(p1.O + [0.0, 0.035, 0.0], p1) == pytest.approx(0.0, abs=1e-12)
    assert ellipsoid_distance(p1.O + [0.01, 0.0, 0.0], p1) == pytest.approx(0.0, abs=1e-12)
    assert ellipsoid_distance(p1.O + [0.0, 0.0, 0.03], p1, p1.groove_semi_axes) == pytest.approx(0.0, abs=1e-12)


# ── vector field ────────────────────────────────────────────────────────────

def test_gravity_only(belt, ctx_s1):
    xdot = vector_field(_state((0, 0, 1), (0, 0.1, 1)), np.zeros(6), np.zeros(2), belt, ctx_s1)
    assert np.count_nonzero(xdot) == 2
    assert xdot[11] == pytest.approx(-9.81)
    assert xdot[14] == pytest.approx(-9.81)


def test_damper_between_keypoints(belt, ctx_s1):
    xdot = vector_field(_state((0, 0, 1), (0, 0.1, 1), v1=(1, 0, 0)), np.zeros(6), np.zeros(2), belt, ctx_s1)
    assert xdot[9] == pytest.approx(-4.65 / 0.042)
    assert xdot[12] == pytest.approx(4.65 / 0.042)
    assert xdot[0] == 1.0


def test_gravity_compensation_balances_k1(belt, ctx_s1):
    u = np.array([0, 0, 0.042 * 9.81, 0, 0, 0])
    xdot = vector_field(_state((0, 0, 1), (0, 0.1, 1)), u, np.zeros(2), belt, ctx_s1)
    assert xdot[11] == pytest.approx(0.0, abs=1e-12)


def test_cable_pulls_keypoints_together(belt, ctx_s1):
    xdot = vector_field(_state((0, 0, 1), (0, 0, 0.8)), np.zeros(6), [1.0, 0.0], belt, ctx_s1)
    assert xdot[11] == pytest.approx(-9.81 - 1.0 / belt.m1)
    assert xdot[14] == pytest.approx(-9.81 + 1.0 / belt.m2)


def test_contact_pushes_k2_off_the_pulley(scenario1, belt, ctx_s1):
    k2 = scenario1.pulley1.O - np.array([0, 0, 0.03])
    xdot = vector_field(_state((0, 0, 1), k2), np.zeros(6), [0.0, 2.0], belt, ctx_s1)
    assert xdot[14] == pytest.approx(-9.81 - 2.0 / belt.m2)


def test_system_matrices_are_read_only(belt):
    A, B, G = system_matrices(belt)
    assert A.shape == (18, 18) and B.shape == (18, 6) and G.shape == (18,)
    with pytest.raises(ValueError):
        A[0, 0] = 1.0


def test_singular_projection_in_vector_field(belt, ctx_s1):
    with pytest.raises(SingularityError):
        vector_field(_state((0, 0, 1), (0, 0, 1)), np.zeros(6), [1.0, 0.0], belt, ctx_s1)


@pytest.mark.parametrize("subtask", ["S1", "S2"])
def test_jacobians_match_finite_differences(scenario1, subtask, rng):
    belt, ctx = scenario1.belt, ForceContext(subtask, scenario1.pulley1)
    for _ in range(5):
        x = np.concatenate([
            scenario1.pulley1.O + [0.0, 0.05, 0.15] + rng.uniform(-0.05, 0.05, 3),
            scenario1.pulley1.O + [0.0, -0.05, -0.1] + rng.uniform(-0.05, 0.05, 3),
            rng.uniform(-1, 1, 3), rng.uniform(-0.5, 0.5, 9),
        ])
        u, lam = rng.uniform(-1, 1, 6), rng.uniform(0, 5, 2)
        Jx, Ju, Jl = dynamics_jacobians(x, u, lam, belt, ctx)
        scale = max(1.0, np.abs(Jx).max())
        fd_x = finite_difference_jacobian(lambda v: vector_field(v, u, lam, belt, ctx), x)
        fd_u = finite_difference_jacobian(lambda v: vector_field(x, v, lam, belt, ctx), u)
        fd_l = finite_difference_jacobian(lambda v: vector_field(x, u, v, belt, ctx), lam)
        assert np.abs(Jx - fd_x).max() <= 1e-5 * scale
        np.testing.assert_allclose(Ju, fd_u, atol=1e-5)
        np.testing.assert_allclose(Jl, fd_l, atol=1e-5)


def test_jacobian_at_coincident_points(belt, ctx_s1):
    with pytest.raises(SingularityError):
        dynamics_jacobians(_state((0, 0, 1), (0, 0, 1)), np.zeros(6), [0.0, 0.0], belt, ctx_s1)


# ── trapezoidal defect and RK4 ──────────────────────────────────────────────

def test_consistent_free_fall_step_has_zero_defect(belt, ctx_s1):
    h = 0.1
    xa = _state((0, 0, 1), (0, 0.1, 1))
    xb = xa.copy()
    xb[2] += -0.04905
    xb[5] += -0.04905
    xb[11] = xb[14] = -0.981
    r = defect_residual(xa, np.zeros(6), np.zeros(2), xb, np.zeros(6), np.zeros(2), h, belt=belt, ctx=ctx_s1)
    np.testing.assert_allclose(r, 0.0, atol=1e-12)

    xb[2] += 1e-3
    r = defect_residual(xa, np.zeros(6), np.zeros(2), xb, np.zeros(6), np.zeros(2), h, belt=belt, ctx=ctx_s1)
    assert r[2] == pytest.approx(1e-3)


def test_rest_without_gravity_has_zero_defect(ctx_s1):
    x = _state((0, 0, 1), (0, 0.1, 1))
    weightless = BeltModel(gravity_g=1e-12)
    r = defect_residual(x, np.zeros(6), np.zeros(2), x, np.zeros(6), np.zeros(2), 0.05,
                        belt=weightless, ctx=ctx_s1)
    np.testing.assert_allclose(r, 0.0, atol=1e-12)


def test_defect_rejects_nonpositive_step(belt, ctx_s1):
    x = _state((0, 0, 1), (0, 0.1, 1))
    with pytest.raises(PreconditionError):
        defect_residual(x, np.zeros(6), np.zeros(2), x, np.zeros(6), np.zeros(2), 0.0, belt=belt, ctx=ctx_s1)


def test_rk4_is_exact_for_constant_acceleration():
    def rhs(t, s):
        return np.array([s[1], -9.81])

    s = np.array([1.0, 0.0])
    for i in range(10):
        s = rk4_step(0.01 * i, s, 0.01, rhs)
    assert s[0] == pytest.approx(1.0 - 0.5 * 9.81 * 0.1 ** 2, abs=1e-12)
    assert s[1] == pytest.approx(-0.981, abs=1e-12)


def test_state_helpers_are_accepted(belt, ctx_s1):
    s = SystemState.at_rest((0, 0, 1), (0, 0.1, 1))
    np.testing.assert_allclose(vector_field(s, np.zeros(6), np.zeros(2), belt, ctx_s1),
                               vector_field(s.vector, np.zeros(6), np.zeros(2), belt, ctx_s1))


def test_trapezoid_local_error_is_third_order(scenario1, belt, ctx_s1):
    from sim.simulate import constitutive_forces, integrate_reduced

    # taut, overdamped cable: the exact trajectory stays smooth
    x0 = SystemState.at_rest((0.5, 0.0, 1.0), (0.5, 0.0, 1.0 - belt.rest_length_L - 0.03)).vector
    exact = integrate_reduced(x0, lambda t: np.zeros(6), 1e-3, 1e-6, belt, ctx_s1)

    def defect_norm(h):
        xb = exact.states[int(round(h / 1e-6))]
        la, lb = constitutive_forces(x0, belt, ctx_s1), constitutive_forces(xb, belt, ctx_s1)
        return np.linalg.norm(defect_residual(x0, np.zeros(6), la, xb, np.zeros(6), lb, h, belt=belt, ctx=ctx_s1))

    ratio = defect_norm(1e-3) / defect_norm(5e-4)
    assert 6.0 < ratio < 10.0


def test_force_context_rejects_bad_arguments(scenario1):
    with pytest.raises(PreconditionError):
        ForceContext("S3", scenario1.pulley1)
    with pytest.raises(PreconditionError):
        ForceContext("S1", scenario1.pulley1, epsilon=-1e-3)
