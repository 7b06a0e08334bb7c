"""Distributed multi-robot 3-D semantic mapping.

A team of simulated robots fuses noisy ray/category observations into
multi-class log-odds maps stored in adaptive-resolution semantic octrees,
and reaches a globally consistent map by exchanging compressed maps with
one-hop neighbors and running consensus-constrained gradient iterations.
"""

from .config import GraphSpec, RobotSpec, Scenario, default_scenario, load_scenario
from .consensus import (
    IterationParams,
    RobotGraph,
    apply_gradient,
    consensus_step,
    constraint_residual,
    gradient,
    gradient_literal,
    iterate,
    objective_value,
    pairwise_residual,
    run_rounds,
)
from .environment import (
    Environment,
    EnvironmentSpec,
    Pose,
    SensorSpec,
    generate_environment,
    load_environment,
    save_environment,
    simulate_scan,
)
from .errors import (
    ConfigMismatchError,
    GenerationError,
    InvalidInputError,
    MappingError,
    ResourceLimitError,
)
from .grid import MapConfig, morton_decode, morton_encode
from .gridmap import DenseMap
from .harness import MetricsRecord, RunResult, compute_metrics, run_scenario
from .logodds import (
    LOG_ODDS_LIMIT,
    PROB_FLOOR,
    from_distribution,
    normalize,
    softmax,
    squared_distance,
)
from .netsim import MapMessage, PacketLog, decode, encode, encode_grid_baseline, exchange
from .observation import (
    InverseModelParams,
    LogQAccumulator,
    RayObservation,
    inverse_observation,
    traverse_ray,
)
from .octree import NodeKey, SemanticOctree, common_refinement

__version__ = "0.1.0"
