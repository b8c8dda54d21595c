"""Target tracking with controlled sensing on a discrete grid.

A simulator, exact and learned solvers, model-based baselines, and an
evaluation harness for the track-MDP formulation of energy-efficient target
tracking.
"""

__version__ = "0.1.0"

from .grid import (  # noqa: F401
    EXIT_STATE,
    Observation,
    RewardParams,
    SensingAction,
    TransitionKernel,
    load_kernel,
    make_experiment_kernel,
    observe,
    reward,
    sample_next,
    save_kernel,
)
from .trackmdp import (  # noqa: F401
    TERMINAL,
    StepOutcome,
    TrackState,
    constrain_action,
    enumerate_reachable,
    initial_state,
    predicted_distribution,
    step,
)
from .belief import (  # noqa: F401
    Belief,
    UpperBoundTable,
    belief_from_track_state,
    belief_update,
    qmdp_action,
    qmdp_upper_bound,
    renormalize_excluding,
)
