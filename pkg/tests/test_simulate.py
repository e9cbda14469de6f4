import numpy as np
import pytest

from control.mpcc import TrajectorySolution
from core.dynamics import ForceContext, cable_length
from core.errors import PreconditionError, SimulationBlowUp
from core.params import SystemState
from sim.simulate import (
    K1Reference,
    TrackingGains,
    constitutive_forces,
    input_schedule,
    integrate_reduced,
    plant_rhs,
    simulate_reduced,
    track_k1,
)


def _zero(t):
    return np.zeros(6)


def _energy(x, belt, ctx):
    ke = 0.5 * belt.m1 * x[9:12] @ x[9:12] + 0.5 * belt.m2 * x[12:15] @ x[12:15]
    stretch = max(0.0, cable_length(x, ctx) - belt.rest_length_L)
    return ke + 0.5 * belt.k_p * stretch ** 2 + belt.gravity_g * (belt.m1 * x[2] + belt.m2 * x[5])


# ── constitutive laws ───────────────────────────────────────────────────────

def test_slack_cable_carries_no_force(belt, ctx_s1):
    x = SystemState.at_rest((0.5, 0.0, 1.0), (0.5, 0.0, 0.9)).vector
    np.testing.assert_array_equal(constitutive_forces(x, belt, ctx_s1), [0.0, 0.0])


def test_stretched_cable_follows_the_spring_law(belt, ctx_s1):
    x = SystemState.at_rest((0.5, 0.0, 1.0), (0.5, 0.0, 1.0 - belt.rest_length_L - 0.01)).vector
    assert constitutive_forces(x, belt, ctx_s1)[0] == pytest.approx(belt.k_p * 0.01)


def test_rim_penalty_only_inside_the_groove(scenario1, belt, ctx_s1):
    p1 = scenario1.pulley1
    inside = SystemState.at_rest((0.1, 0.55, 0.5), p1.O - np.array([0.0, 0.0, 0.029])).vector
    assert constitutive_forces(inside, belt, ctx_s1)[1] == pytest.approx(1e4 * 0.001)
    beside = SystemState.at_rest((0.1, 0.55, 0.5), p1.O + np.array([0.05, 0.0, -0.029])).vector
    assert constitutive_forces(beside, belt, ctx_s1)[1] == 0.0


def test_plant_rhs_matches_free_flight(belt, ctx_s1):
    x = SystemState.at_rest((0.5, 0.0, 1.0), (0.5, 0.1, 1.0)).vector
    xdot = plant_rhs(x, np.zeros(6), belt, ctx_s1)
    assert xdot[11] == pytest.approx(-9.81) and xdot[14] == pytest.approx(-9.81)


# ── reduced plant ───────────────────────────────────────────────────────────

def test_free_fall_is_a_parabola(belt, ctx_s1):
    x0 = SystemState.at_rest((0.5, 0.0, 1.0), (0.5, 0.1, 1.0)).vector
    tr = integrate_reduced(x0, _zero, 0.5, 1e-3, belt, ctx_s1)
    expected = 1.0 - 0.5 * belt.gravity_g * tr.t ** 2
    np.testing.assert_allclose(tr.states[:, 2], expected, atol=1e-9)
    np.testing.assert_allclose(tr.states[:, 5], expected, atol=1e-9)
    assert not tr.forces.any()


def test_hanging_equilibrium(belt, ctx_s1):
    L = belt.rest_length_L
    x0 = SystemState.at_rest((0.5, 0.0, 1.0), (0.5, 0.0, 1.0 - L)).vector
    tr = integrate_reduced(x0, _zero, 4.0, 1e-3, belt, ctx_s1, fix_k1=True)
    extension = 1.0 - tr.states[-1, 5] - L
    assert extension == pytest.approx(0.042 * 9.81 / 63.34, abs=1e-5)
    assert abs(tr.states[-1, 14]) < 1e-4
    np.testing.assert_array_equal(tr.states[:, 0:3], np.tile([0.5, 0.0, 1.0], (tr.t.size, 1)))
    assert tr.final.forces[0] == pytest.approx(belt.m2 * belt.gravity_g, rel=1e-3)


def test_total_momentum_changes_only_by_gravity(belt, ctx_s1):
    x0 = SystemState(SystemState.at_rest((0.5, 0.0, 1.0), (0.5, 0.0, 0.78)).q,
                     (0.3, -0.2, 0.5, -0.4, 0.1, 0.0, 0, 0, 0)).vector
    tr = integrate_reduced(x0, _zero, 0.5, 1e-3, belt, ctx_s1)
    assert tr.forces[:, 0].max() > 0.0
    p = belt.m1 * tr.states[:, 9:12] + belt.m2 * tr.states[:, 12:15]
    expected = p[0] - np.outer(tr.t, [0.0, 0.0, (belt.m1 + belt.m2) * belt.gravity_g])
    np.testing.assert_allclose(p, expected, atol=1e-9)


def test_energy_never_grows_without_input(belt, ctx_s1):
    x0 = SystemState(SystemState.at_rest((0.5, 0.0, 1.0), (0.5, 0.0, 0.78)).q,
                     (0.3, -0.2, 0.5, -0.4, 0.1, 0.0, 0, 0, 0)).vector
    tr = integrate_reduced(x0, _zero, 0.5, 1e-3, belt, ctx_s1)
    E = np.array([_energy(x, belt, ctx_s1) for x in tr.states])
    assert np.all(np.diff(E) <= 1e-6)


def test_blow_up_is_reported(belt, ctx_s1):
    x0 = SystemState.at_rest((0.5, 0.0, 1.0), (0.5, 0.1, 1.0)).vector
    with pytest.raises(SimulationBlowUp) as err:
        integrate_reduced(x0, lambda t: np.array([1e6, 0, 0, 0, 0, 0]), 1.0, 1e-3, belt, ctx_s1)
    assert 0.0 < err.value.time < 1.0


def test_unknown_hold(belt, ctx_s1):
    x0 = SystemState.at_rest((0.5, 0.0, 1.0), (0.5, 0.1, 1.0)).vector
    with pytest.raises(PreconditionError):
        integrate_reduced(x0, _zero, 0.1, 1e-3, belt, ctx_s1, hold="cubic")


def _falling_solution(N=5, h=0.05, status="converged"):
    """Both keypoints in free fall with a slack cable, as a planner would report it."""
    x0 = SystemState.at_rest((0.5, 0.0, 1.0), (0.5, 0.1, 1.0)).vector
    t = h * np.arange(N + 1)
    X = np.tile(x0, (N + 1, 1))
    X[:, 2] = X[:, 5] = 1.0 - 0.5 * 9.81 * t ** 2
    X[:, 11] = X[:, 14] = -9.81 * t
    return TrajectorySolution(X, np.zeros((N + 1, 6)), np.zeros((N + 1, 2)), status, step_h=h)


def test_input_schedule_holds(scenario1):
    sol = _falling_solution()
    sol.inputs[:, 0] = np.arange(6)
    zoh, foh = input_schedule(sol, "zoh"), input_schedule(sol, "foh")
    assert zoh(0.074)[0] == 1.0
    assert foh(0.075)[0] == pytest.approx(1.5)
    assert zoh(10.0)[0] == 5.0


@pytest.mark.parametrize("hold", ["zoh", "foh"])
def test_replay_reproduces_a_consistent_solution(scenario1, hold):
    sol = _falling_solution()
    tr = simulate_reduced(sol, scenario1, ForceContext("S1", scenario1.pulley1), hold=hold)
    assert tr.t[-1] == pytest.approx(sol.horizon_N * sol.step_h)
    np.testing.assert_allclose(tr.states[-1], sol.states[-1], atol=1e-9)


@pytest.mark.parametrize("h, n_sub", [(0.045, 23), (0.01, 10), (0.001, 10)])
def test_replay_substeps(scenario1, h, n_sub):
    from sim.simulate import MAX_SUBSTEP

    sol = _falling_solution(N=4, h=h)
    tr = simulate_reduced(sol, scenario1)
    steps = np.diff(tr.t)
    assert tr.t.size == 4 * n_sub + 1
    np.testing.assert_allclose(steps, h / n_sub)
    assert steps.max() <= min(h / 10, MAX_SUBSTEP) * (1 + 1e-9)
    assert simulate_reduced(sol, scenario1, substeps=3).t.size == 4 * 3 + 1


def test_replay_needs_a_converged_solution(scenario1):
    with pytest.raises(PreconditionError):
        simulate_reduced(_falling_solution(status="max-iter"), scenario1)


# ── tracking law ────────────────────────────────────────────────────────────

def test_zero_error_gives_feedforward_only():
    ctrl = track_k1(K1Reference.hold((0.0, 0.0, 1.0)), TrackingGains(kp=200.0, kd=1.0))
    u = ctrl(0.0, (0.0, 0.0, 1.0), (0.0, 0.0, 0.0))
    np.testing.assert_allclose(u, [0, 0, 0.042 * 9.81, 0, 0, 0], atol=1e-12)


def test_step_error_adds_kp_times_error():
    ctrl = track_k1(K1Reference.hold((0.0, 0.0, 1.0)), TrackingGains(kp=200.0, kd=1.0))
    u = ctrl(0.0, (0.0, 0.0, 0.99), (0.0, 0.0, 0.0))
    assert u[2] - 0.042 * 9.81 == pytest.approx(2.0)


def test_output_saturates():
    gains = TrackingGains(kp=5000.0)
    ctrl = track_k1(K1Reference.hold((0.0, 0.0, 1.0), rpy=(3.0, 0.0, 0.0)), gains)
    u = ctrl(0.0, (0.0, 0.0, 0.0), (0.0, 0.0, 0.0), rpy=(-3.0, 0.0, 0.0), rates=(0.0, 0.0, 0.0))
    assert u[2] == gains.force_limit
    assert np.all(np.abs(u[0:3]) <= gains.force_limit)
    assert u[3] == pytest.approx(6.0 * gains.kp_rot)


def test_default_damping_is_critical():
    g = TrackingGains(kp=5000.0)
    assert g.damping(0.042) == pytest.approx(2.0 * np.sqrt(5000.0 * 0.042))
    assert TrackingGains(kp=100.0, kd=3.0).damping(1.0) == 3.0
    with pytest.raises(PreconditionError):
        TrackingGains(kp=-1.0)


def test_reference_from_solutions_joins_at_the_seam(scenario1):
    a = _falling_solution(N=4, h=0.1)
    b = _falling_solution(N=2, h=0.1)
    ref = K1Reference.from_solutions(a, None, b)
    assert ref.times.size == 5 + 2
    np.testing.assert_allclose(ref.times, [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6])
    assert ref.duration == pytest.approx(0.6)
    p, v, r, w = ref.sample(0.45)
    np.testing.assert_allclose(p[0:2], [0.5, 0.0])
    assert ref.positions[2, 4] == pytest.approx(1.0 - 0.5 * 9.81 * 0.4 ** 2)


@pytest.mark.slow
def test_replay_of_a_planned_s1_stays_close(scenario1):
    from control.mpcc import solve_subtask_sequence
    from core.scenarios import with_horizon

    sc = with_horizon(scenario1, 100)
    sol1, _ = solve_subtask_sequence(sc)
    assert sol1.converged
    tr = simulate_reduced(sol1, sc, hold="foh")
    err = np.linalg.norm((tr.states[-1, 0:6] - sol1.states[-1, 0:6]).reshape(2, 3), axis=1)
    assert err.max() <= 0.02


@pytest.mark.slow
def test_replay_error_shrinks_with_the_knot_count(scenario1):
    from control.builder import transcribe
    from control.mpcc import cold_start_guess, solve
    from core.scenarios import with_horizon

    spec = scenario1.subtask_s1
    duration = spec.horizon_N * spec.step_h
    errors = []
    for N in (50, 100, 200):
        sc = with_horizon(scenario1, N, duration / N)
        nlp = transcribe(sc, sc.subtask_s1, sc.initial_state)
        sol = solve(nlp, cold_start_guess(nlp))
        assert sol.converged
        tr = simulate_reduced(sol, sc, hold="foh")
        errors.append(np.linalg.norm(tr.states[-1, 0:3] - sol.states[-1, 0:3]))
    assert errors[0] > errors[1] > errors[2]
    assert errors[0] >= 3.0 * errors[2]
