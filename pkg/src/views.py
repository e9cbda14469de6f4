# views.py
# Streamlit pages for planning and replaying belt-drive assembly trajectories

from __future__ import annotations

import numpy as np
import matplotlib.pyplot as plt
import streamlit as st

# Model, planner and plants
from core.params import DESK_HORIZON
from core.scenarios import builtin_scenarios, with_horizon
from control import SolverOptions, plan
from sim import initial_loop, simulate_chain

# Experiment harness and figures
from experiments.artifacts import concatenated, force_figure, k1_tracking_figure, record_to_dict
from experiments.montecarlo import ExperimentPlan, run_experiment

SCENARIOS = {sc.name: sc for sc in builtin_scenarios()}

# ─────────────────────────── Utility Functions ─────────────────────────────

def _circle(ax, centre_yz, radius, **kw) -> None:
    th = np.linspace(0.0, 2.0 * np.pi, 200)
    ax.plot(centre_yz[0] + radius * np.cos(th), centre_yz[1] + radius * np.sin(th), **kw)


def geometry_figure(scenario):
    """Side view (y–z plane) of both pulleys, the belt at ρ0 and the K1 goals."""
    fig, ax = plt.subplots(figsize=(5, 4))
    for p, name in ((scenario.pulley1, "P1"), (scenario.pulley2, "P2")):
        _circle(ax, p.O[1:], p.flange_radius, color="grey", ls=":")
        _circle(ax, p.O[1:], p.groove_radius, color="k")
        ax.annotate(name, p.O[1:], ha="center", va="center")
    loop = initial_loop(scenario).positions
    ax.plot(np.append(loop[:, 1], loop[0, 1]), np.append(loop[:, 2], loop[0, 2]), "o-", ms=2, color="C0",
            label="belt at ρ0")
    for spec, c in ((scenario.subtask_s1, "C1"), (scenario.subtask_s2, "C2")):
        g = spec.goal_state
        ax.plot(g.k1[1], g.k1[2], "*", ms=10, color=c, label=f"K1 goal {spec.id}")
    ax.set_xlabel("y [m]")
    ax.set_ylabel("z [m]")
    ax.set_aspect("equal")
    ax.legend(loc="best", fontsize="small")
    fig.tight_layout()
    return fig


def _pick_scenario(key: str):
    name = st.selectbox("Scenario", list(SCENARIOS), key=key)
    return SCENARIOS[name]

# ──────────────────────────── Scenario View ────────────────────────────────

def show_scenarios() -> None:
    """Geometry and belt parameters of the built-in scenarios."""
    st.markdown("## Scenarios")
    sc = _pick_scenario("sc_geometry")

    col_fig, col_tab = st.columns([3, 2], gap="small")
    col_fig.pyplot(geometry_figure(sc), use_container_width=True)
    col_tab.table({
        "quantity": ["belt circumference [m]", "rest length L [m]", "max length L_max [m]",
                     "k_p [N/m]", "k_d [N·s/m]", "wrap length [m]", "S2 tension target [N]"],
        "value": [f"{sc.belt_length:.3f}", f"{sc.belt.rest_length_L:.4f}", f"{sc.belt.max_length_Lmax:.3f}",
                  f"{sc.belt.k_p:.2f}", f"{sc.belt.k_d:.2f}", f"{sc.wrap_length:.3f}",
                  f"{sc.subtask_s2.desired_tension:.3f}"],
    })

# ──────────────────────────── Solve View ───────────────────────────────────

def show_solve() -> None:
    """Plan S1 and S2, plot K1 and the force magnitudes, optionally replay on the chain."""
    st.markdown("## Plan both subtasks")
    sc = _pick_scenario("sc_solve")
    N = st.slider("Knot intervals per subtask", 20, 300, DESK_HORIZON, 10)
    backend = st.radio("Backend", ["auglag", "ipopt"], horizontal=True)
    replay = st.checkbox("Replay on the chain-belt plant", value=True)
    if not st.button("Solve"):
        return

    with st.spinner("Solving…"):
        sol1, sol2 = plan(sc, N, opts=SolverOptions(backend=backend))
    for sol in (sol1, sol2):
        if sol is None:
            st.warning("S2 skipped: S1 did not converge.")
            continue
        st.write(f"**{sol.subtask_id}** – {sol.status}, violation {sol.max_violation:.2e}, "
                 f"cost {sol.cost:.4f}, {sol.wall_time:.1f} s")

    t, X, L = concatenated((sol1, sol2))
    col_k1, col_f = st.columns(2, gap="small")
    col_k1.pyplot(k1_tracking_figure(t, X[:, 0:3]), use_container_width=True)
    col_f.pyplot(force_figure(t, L), use_container_width=True)

    if replay and sol2 is not None and sol1.converged and sol2.converged:
        with st.spinner("Simulating chain…"):
            trace, outcome = simulate_chain((sol1, sol2), sc)
        st.pyplot(k1_tracking_figure(trace.t, trace.grip_reference, trace.positions[:, 0, :]))
        st.json(outcome.to_dict())

# ──────────────────────────── Experiment View ──────────────────────────────

def show_experiment() -> None:
    """Small seeded batch with feasible and success counts."""
    st.markdown("## Goal-sampling experiment")
    sc = _pick_scenario("sc_exp")
    runs = st.slider("Runs", 1, 10, 3)
    seed = st.number_input("Seed", min_value=0, value=42, step=1)
    N = st.slider("Knot intervals per subtask", 20, 300, DESK_HORIZON, 10, key="n_exp")
    simulate = st.checkbox("Replay on the chain-belt plant", value=True, key="sim_exp")
    if not st.button("Run"):
        return

    exp_plan = ExperimentPlan(sc.name, runs=runs, rng_seed=int(seed), horizon_N=N, simulate=simulate)
    with st.spinner(f"Running {runs} runs…"):
        report = run_experiment(exp_plan, with_horizon(sc, N))

    c1, c2, c3 = st.columns(3)
    c1.metric("Feasible trajectory", f"{report.feasible_count}/{runs}")
    c2.metric("Successful assembly", f"{report.success_count}/{runs}")
    c3.metric("Solve time per subtask", report.timing_summary())
    st.table([
        {k: v for k, v in record_to_dict(r).items() if k != "outcome"}
        for r in report.records
    ])
