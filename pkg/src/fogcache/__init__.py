"""Edge-cache simulation and learning toolkit.

A time-slotted simulator couples two hidden Markov chains (regional demand
profile, user-content affinity) with a churning user population; cache
agents (tabular Q-learning, linear value approximation, LRU/LFU baselines)
compete on the resulting request streams under a shared experiment harness.
"""

from .caching import ActionSpace, CacheAction, LfuCache, LruCache, hit_rate, reward
from .env import (
    ContentCatalog,
    Environment,
    EnvironmentConfig,
    Observation,
    PopularityChain,
    PreferenceChain,
    RequestBatch,
    UserPopulation,
    advance_chains,
    churn_users,
    generate_requests,
    kernel,
    kernel_matrix,
    observe,
    sticky_transition,
    zipf_popularity,
)
from .errors import ConfigError, NumericalError
from .harness import (
    ExperimentConfig,
    MetricsRecord,
    RunResult,
    compare,
    default_config,
    emit_figure,
    load_config,
    run_episode,
    selection_timing,
    sweep,
)
from .tabular import QLearningAgent, QTable, QuantizedState, StateQuantizer
from .vfa import CostFeatures, VfaAgent, cost_features, greedy_action, q_value, td_error

__version__ = "0.1.0"

__all__ = [
    "ActionSpace",
    "CacheAction",
    "ConfigError",
    "ContentCatalog",
    "CostFeatures",
    "Environment",
    "EnvironmentConfig",
    "ExperimentConfig",
    "LfuCache",
    "LruCache",
    "MetricsRecord",
    "NumericalError",
    "Observation",
    "PopularityChain",
    "PreferenceChain",
    "QLearningAgent",
    "QTable",
    "QuantizedState",
    "RequestBatch",
    "RunResult",
    "StateQuantizer",
    "UserPopulation",
    "VfaAgent",
    "advance_chains",
    "churn_users",
    "compare",
    "cost_features",
    "default_config",
    "emit_figure",
    "generate_requests",
    "greedy_action",
    "hit_rate",
    "kernel",
    "kernel_matrix",
    "load_config",
    "observe",
    "q_value",
    "reward",
    "run_episode",
    "selection_timing",
    "sticky_transition",
    "sweep",
    "td_error",
    "zipf_popularity",
]
