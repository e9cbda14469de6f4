import math
from dataclasses import replace

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from control.mpcc import TrajectorySolution
from core.errors import PreconditionError
from sim.assembly import GROOVE_TOL, detect_success, wraps
from sim.chain import (
    ChainBeltState,
    ChainConfig,
    ellipse_perimeter,
    initial_loop,
    run_chain,
    simulate_chain,
)
from sim.simulate import K1Reference


def _loop(points, stretch=1.0, stiffness=1000.0):
    """Chain through *points* whose rest lengths are the chords divided by *stretch*."""
    pos = np.asarray(points, dtype=float)
    chords = np.linalg.norm(np.roll(pos, -1, axis=0) - pos, axis=1)
    return ChainBeltState(pos, np.zeros_like(pos), 0, chords / stretch, stiffness)


def _arc(centre, radius, start, stop, n):
    """Points on a circle in the y–z plane through *centre*, angles measured from +y."""
    th = np.linspace(start, stop, n, endpoint=False)
    return np.column_stack([np.full(n, centre[0]),
                            centre[1] + radius * np.cos(th),
                            centre[2] + radius * np.sin(th)])


# ── configuration and initial loop ──────────────────────────────────────────

def test_config_validation():
    cfg = ChainConfig()
    assert cfg.node_mass == pytest.approx(0.084 / 41)
    assert cfg.segment_stiffness(63.34) == pytest.approx(63.34 * 41 / 2)
    with pytest.raises(PreconditionError):
        ChainConfig(nodes=3)
    with pytest.raises(PreconditionError):
        ChainConfig(dt=0.0)


def test_skip_one_springs_are_off_by_default():
    assert ChainConfig().bending_stiffness == 0.0
    assert ChainConfig(bending_stiffness=20.0).bending_stiffness == 20.0
    with pytest.raises(PreconditionError):
        ChainConfig(bending_stiffness=-1.0)


def test_circle_perimeter():
    assert ellipse_perimeter(0.1, 0.1) == pytest.approx(2 * math.pi * 0.1)


def test_initial_loop(scenario1):
    state = initial_loop(scenario1)
    assert state.nodes == 41
    np.testing.assert_allclose(state.positions[0], scenario1.initial_state.k1, atol=1e-12)
    np.testing.assert_allclose(state.rest_lengths, 0.4 / 41)
    assert state.circumference == pytest.approx(0.4)
    assert state.segment_lengths().sum() == pytest.approx(0.4, rel=1e-2)
    assert not state.velocities.any()
    assert not state.segment_tensions().any()


def test_loop_must_fit_the_separation(scenario1):
    k1 = scenario1.initial_state.k1
    with pytest.raises(PreconditionError):
        initial_loop(scenario1, k1=k1, k2=k1 - np.array([0.0, 0.0, 0.3]))


def test_state_shapes_are_checked():
    with pytest.raises(PreconditionError):
        ChainBeltState(np.zeros((4, 3)), np.zeros((4, 3)), 0, np.ones(5), 1.0)
    with pytest.raises(PreconditionError):
        ChainBeltState(np.zeros((4, 3)), np.zeros((4, 3)), 4, np.ones(4), 1.0)


def test_stretched_segments_carry_tension():
    state = _loop(_arc((0.0, 0.0, 0.0), 0.1, 0.0, 2 * np.pi, 12), stretch=1.1)
    tensions = state.segment_tensions()
    chords = state.segment_lengths()
    np.testing.assert_allclose(tensions, 1000.0 * (chords - chords / 1.1))
    assert np.all(tensions > 0.0)


# ── chain plant ─────────────────────────────────────────────────────────────

def test_penetration_is_recorded(scenario1):
    O = scenario1.pulley1.O
    cfg = ChainConfig(log_every=10)
    state = initial_loop(scenario1, cfg, k1=O + [0.0, 0.0, 0.15], k2=O - [0.0, 0.0, 0.01])
    trace, _ = run_chain(state, K1Reference.hold(state.positions[0]), 0.01,
                         config=cfg, pulleys=(scenario1.pulley1,))
    assert trace.max_penetration > 0.0
    assert trace.t.size == 11
    assert trace.positions.shape == (11, 41, 3)


def test_no_pulleys_no_penetration(scenario1):
    state = initial_loop(scenario1)
    trace, final = run_chain(state, K1Reference.hold(state.positions[0]), 0.01)
    assert trace.max_penetration == 0.0
    assert final.nodes == state.nodes
    np.testing.assert_array_equal(trace.grip_reference[-1], state.positions[0])


def test_compressed_segments_carry_no_tension(scenario1):
    state = initial_loop(scenario1)
    trace, _ = run_chain(state, K1Reference.hold(state.positions[0]), 0.2, config=ChainConfig(log_every=10))
    slack = trace.segment_lengths < state.rest_lengths
    assert trace.tensions.shape == trace.segment_lengths.shape == (trace.t.size, state.nodes)
    assert slack.any() and (~slack).any()
    assert np.all(trace.tensions[slack] == 0.0)
    assert np.all(trace.tensions >= 0.0)
    assert trace.tensions.max() > 0.0


@pytest.mark.slow
def test_hanging_loop_settles_symmetric(scenario1):
    state = initial_loop(scenario1)
    top = state.positions[0]
    trace, final = run_chain(state, K1Reference.hold(top), 3.0)
    assert trace.kinetic_energy[-1] < 1e-2 * trace.kinetic_energy.max()
    # mirror plane through the grip, spanned by the vertical and the shaft
    y = final.positions[:, 1] - top[1]
    np.testing.assert_allclose(y[1:], -y[1:][::-1], atol=1e-4)
    np.testing.assert_allclose(final.positions[1:, 2], final.positions[1:, 2][::-1], atol=1e-4)
    assert final.positions[:, 2].min() < top[2] - 0.1


def test_replay_needs_converged_solutions(scenario1):
    x0 = scenario1.initial_state.vector
    sol = TrajectorySolution(np.tile(x0, (3, 1)), np.zeros((3, 6)), np.zeros((3, 2)), "max-iter")
    with pytest.raises(PreconditionError):
        simulate_chain(sol, scenario1)
    with pytest.raises(PreconditionError):
        simulate_chain([None], scenario1)


# ── assembly detector ───────────────────────────────────────────────────────

def _stadium(scenario, n=20):
    """Taut loop seated in both grooves of a scenario whose pulleys share the x = const plane."""
    p1, p2 = scenario.pulley1, scenario.pulley2
    left = _arc(p1.O, p1.groove_radius, 0.5 * np.pi, 1.5 * np.pi, n)
    right = _arc(p2.O, p2.groove_radius, 1.5 * np.pi, 2.5 * np.pi, n)
    return np.vstack([left, right])


def test_belt_around_both_grooves_succeeds(scenario1):
    state = _loop(_stadium(scenario1), stretch=1.05)
    outcome = detect_success(state, scenario1, max_penetration=1e-4)
    assert outcome.success
    assert outcome.wrapped_p1 and outcome.wrapped_p2
    assert outcome.final_tension > 0.0
    assert not outcome.dropped
    assert outcome.to_dict()["max_penetration_m"] == 1e-4


def test_slack_belt_around_both_grooves_fails(scenario1):
    outcome = detect_success(_loop(_stadium(scenario1)), scenario1)
    assert outcome.wrapped_p1 and outcome.wrapped_p2
    assert not outcome.success


def test_belt_on_p1_only(scenario1):
    p1 = scenario1.pulley1
    state = _loop(_arc(p1.O, p1.groove_radius, 0.0, 2 * np.pi, 30), stretch=1.05)
    outcome = detect_success(state, scenario1)
    assert outcome.wrapped_p1
    assert not outcome.wrapped_p2
    assert not outcome.success


def test_dropped_belt(scenario1):
    th = np.linspace(0.0, 2 * np.pi, 41, endpoint=False)
    floor = np.column_stack([0.1 + 0.06 * np.cos(th), 0.3 + 0.06 * np.sin(th), np.zeros(41)])
    outcome = detect_success(_loop(floor), scenario1)
    assert not outcome.wrapped_p1 and not outcome.wrapped_p2
    assert outcome.dropped
    assert outcome.final_tension == 0.0
    assert not outcome.success


def test_loop_far_from_the_groove_is_not_wrapped(scenario1):
    p1 = scenario1.pulley1
    wide = _arc(p1.O, p1.groove_radius + 3 * GROOVE_TOL, 0.0, 2 * np.pi, 30)
    assert not wraps(wide, p1)
    assert wraps(wide, p1, groove_tol=4 * GROOVE_TOL)


@pytest.mark.parametrize("loop", ["stadium", "p1-only", "slack"])
def test_detector_ignores_rotation_about_the_shafts(scenario1, loop):
    p1, p2 = scenario1.pulley1, scenario1.pulley2
    if loop == "p1-only":
        state = _loop(_arc(p1.O, p1.groove_radius, 0.0, 2 * np.pi, 30), stretch=1.05)
    else:
        state = _loop(_stadium(scenario1), stretch=1.05 if loop == "stadium" else 0.95)

    pivot = 0.5 * (p1.O + p2.O) + np.array([0.0, 0.02, -0.05])
    R = Rotation.from_rotvec(0.9 * np.asarray(p1.axis)).as_matrix()

    def turn(points):
        return pivot + (np.asarray(points) - pivot) @ R.T

    turned_scenario = replace(
        scenario1,
        pulley1=replace(p1, center=tuple(turn(p1.O))),
        pulley2=replace(p2, center=tuple(turn(p2.O))),
    )
    turned = ChainBeltState(turn(state.positions), state.velocities, state.grip_index,
                            state.rest_lengths, state.segment_stiffness)

    before = detect_success(state, scenario1)
    after = detect_success(turned, turned_scenario)
    assert (after.success, after.wrapped_p1, after.wrapped_p2) == \
           (before.success, before.wrapped_p1, before.wrapped_p2)
    assert after.final_tension == pytest.approx(before.final_tension, rel=1e-9, abs=1e-12)
