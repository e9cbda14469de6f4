"""
sim/__init__.py

Simulation package init
────────────────────────
Makes the plants, the tracking law and the success detector available at
package level.

Exposes:
    - simulate_reduced : open-loop replay on the reduced two-keypoint plant
    - integrate_reduced: reduced plant under an arbitrary input schedule
    - track_k1         : PD grip law with gravity feedforward
    - simulate_chain   : closed-loop replay on the chain-belt plant
    - run_chain        : chain plant under an arbitrary K1 reference
    - initial_loop     : chain at rest on an ellipse through K1 and K2
    - detect_success   : wrapped / tension test of a settled chain
"""

from .simulate import (
    K1Reference,
    ReducedPlantState,
    ReducedTrace,
    TrackingGains,
    constitutive_forces,
    integrate_reduced,
    plant_rhs,
    simulate_reduced,
    track_k1,
)
from .assembly import AssemblyOutcome, detect_success
from .chain import (
    ChainBeltState,
    ChainConfig,
    ChainTrace,
    initial_loop,
    run_chain,
    simulate_chain,
)
