"""Experiment engine: configs, the slot loop, metrics, and result files.

Every run is fully determined by (config, seed): a master seed sequence is
split into one stream for the simulator and one for the agent, so the
request stream of a given seed is identical for every agent and comparisons
are paired.
"""

from __future__ import annotations

import csv
import hashlib
import logging
import math
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import yaml

from . import caching, env, tabular, vfa
from .caching import ActionSpace, CacheAction, LfuCache, LruCache, hit_rate
from .env import Environment, EnvironmentConfig, SlotView, sticky_transition
from .errors import ConfigError, NumericalError

logger = logging.getLogger(__name__)

AGENT_KINDS = ("q-vfa", "q-tabular", "lru", "lfu", "oracle-static")
SWEEP_DIMENSIONS = ("pq", "fb")

# Hit rate an untried table entry is assumed to earn when initial_q is
# "auto"; entries better than this aspiration are kept, worse ones are
# dropped after a single try, which keeps exploration systematic even in
# decision spaces far larger than the horizon.
AUTO_ASPIRATION_HIT_RATE = 0.55


@dataclass
class ExperimentConfig:
    """Flat experiment parameters; see KEY_DOCS for the meaning of each key."""

    library_size: int = 20
    cache_capacity: int = 5
    feature_dim: int = 3
    num_users: int = 40
    horizon: int = 20000
    num_pop_states: int = 4
    num_pref_states: int = 5
    zipf_betas: list = field(default_factory=lambda: [1.8, 2.1, 2.4, 2.7])
    pref_alphas: list = field(default_factory=lambda: [0.1, 0.25, 0.4, 0.55, 0.7])
    pop_transition: object = "sticky"
    pref_transition: object = "sticky"
    sticky_stay: float = 0.8
    turnover_prob: float = 0.05
    requests_per_user: float = 5.0
    mix_lambda: float = 0.5
    kernel_form: str = "distance"
    discount: float = 0.9
    step_size: float = 0.005
    epsilon_start: float = 0.5
    epsilon_decay: float = 0.999
    epsilon_floor: float = 0.01
    quantizer_mode: str = "oracle"
    centroid_update_rate: float = 0.05
    td_mode: str = "signed"
    state_includes_prev_action: bool = False
    initial_q: object = "auto"
    agent: str = "q-vfa"
    compare_agents: list = field(
        default_factory=lambda: ["q-vfa", "q-tabular", "lru", "lfu"]
    )
    seeds: list = field(default_factory=lambda: list(range(10)))
    metric_window: int = 100
    steady_fraction: float = 0.1
    convergence_ratio: float = 0.1
    sweep_dimension: object = None
    sweep_values: list = field(default_factory=list)
    sweep_agents: list = field(default_factory=lambda: ["q-vfa"])
    measure_timing: bool = False
    export_requests: bool = False


KEY_DOCS = {
    "library_size": "Number of contents in the library (F).",
    "cache_capacity": "Cache slots at the edge node (B), 1 <= B <= F.",
    "feature_dim": "Dimension of user trait and content feature vectors (M).",
    "num_users": "Group size restored after churn each slot (N).",
    "horizon": "Number of time slots per run (T).",
    "num_pop_states": "Hidden popularity chain states; must match len(zipf_betas).",
    "num_pref_states": "Hidden preference chain states; must match len(pref_alphas).",
    "zipf_betas": "Zipf exponent per popularity state, each > 0.",
    "pref_alphas": "Kernel affinity parameter per preference state, each in [0, 1).",
    "pop_transition": "Popularity chain rows: 'sticky' or an explicit row-stochastic matrix.",
    "pref_transition": "Preference chain rows: 'sticky' or an explicit row-stochastic matrix.",
    "sticky_stay": "Stay probability used by the 'sticky' transition shorthand.",
    "turnover_prob": "Per-slot probability that each user departs and is replaced.",
    "requests_per_user": "Mean of the per-user Poisson request count per slot.",
    "mix_lambda": "Geometric mixing weight between demand profile and user affinity, in [0, 1].",
    "kernel_form": "Affinity kernel: 'distance' (default) or the 'inner-product' variant.",
    "discount": "Discount factor gamma in (0, 1].",
    "step_size": "Weight update step rho for the linear-value agent, > 0.",
    "epsilon_start": "Exploration schedule start value.",
    "epsilon_decay": "Per-slot geometric decay of the exploration rate.",
    "epsilon_floor": "Lower bound keeping exploration persistent.",
    "quantizer_mode": "State mapping for the tabular agent: 'oracle' or 'centroid'.",
    "centroid_update_rate": "Online drift rate of the centroid quantizer.",
    "td_mode": "Weight update direction: 'signed' (default) or magnitude-only 'abs'.",
    "state_includes_prev_action": "Include the previous decision index in the tabular state.",
    "initial_q": "Value read for untried table entries: a float, or 'auto' for the aspiration level.",
    "agent": "Agent for the run command: q-vfa, q-tabular, lru, lfu, oracle-static.",
    "compare_agents": "Agents executed by the compare command.",
    "seeds": "Seed list; each seed is an independent paired realisation.",
    "metric_window": "Slots per metrics window.",
    "steady_fraction": "Final fraction of slots defining the steady-state hit rate.",
    "convergence_ratio": "Convergence threshold as a fraction of the first window's discrepancy.",
    "sweep_dimension": "Sweep axis: 'pq' (chain sizes) or 'fb' (library size x capacity).",
    "sweep_values": "Grid points for the sweep, one [a, b] pair per point.",
    "sweep_agents": "Agents executed at every sweep grid point.",
    "measure_timing": "Record per-slot action-selection wall time in the run CSV.",
    "export_requests": "Also write the per-request log (slot, user_id, content_id).",
}

_LIST_KEYS = {"zipf_betas", "pref_alphas", "compare_agents", "seeds", "sweep_values", "sweep_agents"}


def default_config() -> ExperimentConfig:
    return ExperimentConfig()


def config_from_mapping(mapping: dict) -> ExperimentConfig:
    """Build and validate a config from a flat mapping; unknown keys are rejected."""
    if not isinstance(mapping, dict):
        raise ConfigError("config file must contain a flat key/value mapping")
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = sorted(set(mapping) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    cfg = ExperimentConfig(**mapping)
    validate_config(cfg)
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError(f"could not parse {path}: {exc}") from exc
    if data is None:
        data = {}
    return config_from_mapping(data)


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ConfigError(message)


def validate_config(cfg: ExperimentConfig) -> None:
    _require(isinstance(cfg.library_size, int) and cfg.library_size >= 1,
             "library_size must be an integer >= 1")
    _require(isinstance(cfg.cache_capacity, int)
             and 1 <= cfg.cache_capacity <= cfg.library_size,
             "cache_capacity must be an integer in [1, library_size]")
    _require(isinstance(cfg.feature_dim, int) and cfg.feature_dim >= 1,
             "feature_dim must be an integer >= 1")
    _require(isinstance(cfg.num_users, int) and cfg.num_users >= 1,
             "num_users must be an integer >= 1")
    _require(isinstance(cfg.horizon, int) and cfg.horizon >= 0,
             "horizon must be an integer >= 0")
    _require(isinstance(cfg.num_pop_states, int) and cfg.num_pop_states >= 1,
             "num_pop_states must be an integer >= 1")
    _require(isinstance(cfg.num_pref_states, int) and cfg.num_pref_states >= 1,
             "num_pref_states must be an integer >= 1")
    _require(isinstance(cfg.zipf_betas, list)
             and len(cfg.zipf_betas) == cfg.num_pop_states,
             "zipf_betas must list one exponent per popularity state")
    _require(all(isinstance(b, (int, float)) and b > 0 for b in cfg.zipf_betas),
             "every zipf beta must be > 0")
    _require(isinstance(cfg.pref_alphas, list)
             and len(cfg.pref_alphas) == cfg.num_pref_states,
             "pref_alphas must list one alpha per preference state")
    _require(all(isinstance(a, (int, float)) and 0 <= a < 1 for a in cfg.pref_alphas),
             "every preference alpha must be in [0, 1)")
    _require(0.0 <= cfg.sticky_stay <= 1.0, "sticky_stay must be in [0, 1]")
    _require(0.0 <= cfg.turnover_prob <= 1.0, "turnover_prob must be in [0, 1]")
    _require(isinstance(cfg.requests_per_user, (int, float))
             and cfg.requests_per_user >= 0,
             "requests_per_user must be >= 0")
    _require(0.0 <= cfg.mix_lambda <= 1.0, "mix_lambda must be in [0, 1]")
    _require(cfg.kernel_form in env.KERNEL_FORMS,
             f"kernel_form must be one of {env.KERNEL_FORMS}")
    _require(0.0 < cfg.discount <= 1.0, "discount must be in (0, 1]")
    _require(cfg.step_size > 0, "step_size must be > 0")
    _require(0.0 <= cfg.epsilon_start <= 1.0, "epsilon_start must be in [0, 1]")
    _require(0.0 < cfg.epsilon_decay <= 1.0, "epsilon_decay must be in (0, 1]")
    _require(0.0 <= cfg.epsilon_floor <= 1.0, "epsilon_floor must be in [0, 1]")
    _require(cfg.quantizer_mode in tabular.QUANTIZER_MODES,
             f"quantizer_mode must be one of {tabular.QUANTIZER_MODES}")
    _require(cfg.centroid_update_rate > 0, "centroid_update_rate must be > 0")
    _require(cfg.td_mode in vfa.TD_MODES, f"td_mode must be one of {vfa.TD_MODES}")
    _require(isinstance(cfg.state_includes_prev_action, bool),
             "state_includes_prev_action must be a boolean")
    _require(cfg.initial_q == "auto" or isinstance(cfg.initial_q, (int, float)),
             "initial_q must be a number or 'auto'")
    _require(cfg.agent in AGENT_KINDS, f"agent must be one of {AGENT_KINDS}")
    _require(isinstance(cfg.compare_agents, list) and cfg.compare_agents
             and all(a in AGENT_KINDS for a in cfg.compare_agents),
             f"compare_agents must be a non-empty list drawn from {AGENT_KINDS}")
    _require(isinstance(cfg.seeds, list) and cfg.seeds
             and all(isinstance(s, int) and s >= 0 for s in cfg.seeds),
             "seeds must be a non-empty list of integers >= 0")
    _require(isinstance(cfg.metric_window, int) and cfg.metric_window >= 1,
             "metric_window must be an integer >= 1")
    _require(0.0 < cfg.steady_fraction <= 1.0, "steady_fraction must be in (0, 1]")
    _require(0.0 < cfg.convergence_ratio < 1.0, "convergence_ratio must be in (0, 1)")
    _require(cfg.sweep_dimension in (None, *SWEEP_DIMENSIONS),
             f"sweep_dimension must be one of {SWEEP_DIMENSIONS} or null")
    if cfg.sweep_dimension is not None:
        _require(isinstance(cfg.sweep_values, list) and cfg.sweep_values,
                 "sweep_values must list at least one [a, b] pair")
        for pair in cfg.sweep_values:
            _require(isinstance(pair, (list, tuple)) and len(pair) == 2
                     and all(isinstance(v, int) and v >= 1 for v in pair),
                     "each sweep value must be a pair of integers >= 1")
            if cfg.sweep_dimension == "fb":
                _require(pair[1] <= pair[0],
                         "fb sweep pairs must satisfy capacity <= library size")
    _require(isinstance(cfg.sweep_agents, list) and cfg.sweep_agents
             and all(a in AGENT_KINDS for a in cfg.sweep_agents),
             f"sweep_agents must be a non-empty list drawn from {AGENT_KINDS}")
    _require(isinstance(cfg.measure_timing, bool), "measure_timing must be a boolean")
    _require(isinstance(cfg.export_requests, bool), "export_requests must be a boolean")
    _resolve_transition(cfg.pop_transition, cfg.num_pop_states, cfg.sticky_stay, "pop")
    _resolve_transition(cfg.pref_transition, cfg.num_pref_states, cfg.sticky_stay, "pref")


def _resolve_transition(spec: object, n_states: int, stay: float, name: str) -> np.ndarray:
    if isinstance(spec, str):
        if spec != "sticky":
            raise ConfigError(
                f"{name}_transition must be 'sticky' or an explicit matrix, got {spec!r}"
            )
        return sticky_transition(n_states, stay)
    try:
        return env._validate_transition(np.asarray(spec, dtype=float), n_states, name)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"invalid {name}_transition: {exc}") from exc


def resolved_initial_q(cfg: ExperimentConfig) -> float:
    """Numeric default for untried table entries.

    'auto' resolves to the discounted long-run penalty of the aspiration
    hit rate, (1 - aspiration) / (1 - gamma); entries better than the
    aspiration survive a first try, worse ones are abandoned.
    """
    if cfg.initial_q == "auto":
        if cfg.discount >= 1.0:
            return 0.0
        return (1.0 - AUTO_ASPIRATION_HIT_RATE) / (1.0 - cfg.discount)
    return float(cfg.initial_q)


def environment_config(cfg: ExperimentConfig) -> EnvironmentConfig:
    return EnvironmentConfig(
        library_size=cfg.library_size,
        feature_dim=cfg.feature_dim,
        num_users=cfg.num_users,
        betas=list(cfg.zipf_betas),
        alphas=list(cfg.pref_alphas),
        pop_transition=_resolve_transition(
            cfg.pop_transition, cfg.num_pop_states, cfg.sticky_stay, "pop"
        ),
        pref_transition=_resolve_transition(
            cfg.pref_transition, cfg.num_pref_states, cfg.sticky_stay, "pref"
        ),
        turnover_prob=cfg.turnover_prob,
        requests_per_user=float(cfg.requests_per_user),
        mix_lambda=float(cfg.mix_lambda),
        kernel_form=cfg.kernel_form,
    )


def epsilon_schedule(cfg: ExperimentConfig):
    start, decay, floor = cfg.epsilon_start, cfg.epsilon_decay, cfg.epsilon_floor

    def schedule(t: int) -> float:
        return max(floor, start * decay**t)

    return schedule


def config_lines(cfg: ExperimentConfig) -> list[str]:
    """Deterministic 'key: value' lines echoing the resolved configuration."""
    lines = []
    for f in fields(ExperimentConfig):
        lines.append(f"{f.name}: {getattr(cfg, f.name)!r}")
    lines.append(f"initial_q_resolved: {resolved_initial_q(cfg)!r}")
    return lines


# ---------------------------------------------------------------------------
# Agent drivers: a uniform surface over learners, baselines, and the oracle.
# ---------------------------------------------------------------------------


class _Driver:
    discrepancy_tracked = False

    def start(self) -> CacheAction | None:
        return None

    def slot_theta(self, view: SlotView, current: CacheAction | None) -> float:
        raise NotImplementedError

    def learn(self, reward_value: float, view: SlotView) -> None:
        pass

    def select(self, view: SlotView) -> CacheAction | None:
        return None

    @property
    def last_discrepancy(self) -> float:
        return math.nan


class _TabularDriver(_Driver):
    discrepancy_tracked = True

    def __init__(self, cfg: ExperimentConfig, space: ActionSpace, rng: np.random.Generator):
        quantizer = tabular.StateQuantizer(
            n_pop_states=cfg.num_pop_states,
            n_pref_states=cfg.num_pref_states,
            mode=cfg.quantizer_mode,
            update_rate=cfg.centroid_update_rate,
        )
        self.agent = tabular.QLearningAgent(
            space=space,
            quantizer=quantizer,
            gamma=cfg.discount,
            epsilon_schedule=epsilon_schedule(cfg),
            rng=rng,
            initial_q=resolved_initial_q(cfg),
            include_prev_action=cfg.state_includes_prev_action,
        )

    def start(self) -> CacheAction:
        return self.agent.initial_action()

    def slot_theta(self, view: SlotView, current: CacheAction) -> float:
        return hit_rate(view.batch.counts, current)

    def learn(self, reward_value: float, view: SlotView) -> None:
        self.agent.learn(
            reward_value, view.observation, (view.pop_index, view.pref_index)
        )

    def select(self, view: SlotView) -> CacheAction:
        return self.agent.select(view.observation, (view.pop_index, view.pref_index))

    @property
    def last_discrepancy(self) -> float:
        return self.agent.last_discrepancy


class _VfaDriver(_Driver):
    discrepancy_tracked = True

    def __init__(self, cfg: ExperimentConfig, space: ActionSpace, rng: np.random.Generator):
        self.agent = vfa.VfaAgent(
            space=space,
            gamma=cfg.discount,
            rho=cfg.step_size,
            epsilon_schedule=epsilon_schedule(cfg),
            rng=rng,
            td_mode=cfg.td_mode,
        )

    def start(self) -> CacheAction:
        return self.agent.initial_action()

    def slot_theta(self, view: SlotView, current: CacheAction) -> float:
        return hit_rate(view.batch.counts, current)

    def learn(self, reward_value: float, view: SlotView) -> None:
        obs = view.observation
        self.agent.learn(reward_value, obs.popularity, obs.preference)

    def select(self, view: SlotView) -> CacheAction:
        obs = view.observation
        return self.agent.select(obs.popularity, obs.preference)

    @property
    def last_discrepancy(self) -> float:
        return self.agent.last_discrepancy


class _BaselineDriver(_Driver):
    def __init__(self, kind: str, capacity: int):
        self.policy = LruCache(capacity) if kind == "lru" else LfuCache(capacity)

    def slot_theta(self, view: SlotView, current: CacheAction | None) -> float:
        return self.policy.process_slot(view.batch.content_seq.tolist())


class _OracleStaticDriver(_Driver):
    """Caches the top-capacity contents of the true current demand profile."""

    def __init__(self, space: ActionSpace):
        self.space = space
        self._current: CacheAction | None = None

    def start(self) -> CacheAction:
        self._current = self.space.unrank(0)
        return self._current

    def slot_theta(self, view: SlotView, current: CacheAction) -> float:
        return hit_rate(view.batch.counts, current)

    def select(self, view: SlotView) -> CacheAction:
        order = np.argsort(-view.true_popularity, kind="stable")[: self.space.capacity]
        self._current = self.space.from_members(sorted(int(i) for i in order))
        return self._current


def _make_driver(cfg: ExperimentConfig, kind: str, space: ActionSpace,
                 rng: np.random.Generator) -> _Driver:
    if kind == "q-tabular":
        return _TabularDriver(cfg, space, rng)
    if kind == "q-vfa":
        return _VfaDriver(cfg, space, rng)
    if kind in ("lru", "lfu"):
        return _BaselineDriver(kind, cfg.cache_capacity)
    if kind == "oracle-static":
        return _OracleStaticDriver(space)
    raise ConfigError(f"unknown agent kind {kind!r}; expected one of {AGENT_KINDS}")


# ---------------------------------------------------------------------------
# Metrics.
# ---------------------------------------------------------------------------


@dataclass
class MetricsRecord:
    window_start: int
    avg_hit_rate: float
    mean_discrepancy: float
    cum_avg_reward: float
    action_select_micros: float


@dataclass
class RunResult:
    agent: str
    seed: int
    slots: int
    records: list
    steady_hit_rate: float
    convergence_window: int
    final_cum_avg_reward: float
    stream_hash: str
    empty_slots: int
    fallback_users: int
    mean_select_micros: float


def _windows(theta: np.ndarray, disc: np.ndarray, micros: np.ndarray,
             window: int) -> list[MetricsRecord]:
    records = []
    n = len(theta)
    if n == 0:
        return records
    rewards = 1.0 - theta
    cum = np.cumsum(rewards)
    for start in range(0, n, window):
        stop = min(start + window, n)
        chunk = disc[start:stop]
        finite = chunk[np.isfinite(chunk)]
        records.append(
            MetricsRecord(
                window_start=start,
                avg_hit_rate=float(theta[start:stop].mean()),
                mean_discrepancy=float(finite.mean()) if len(finite) else math.nan,
                cum_avg_reward=float(cum[stop - 1] / stop),
                action_select_micros=float(micros[start:stop].mean()),
            )
        )
    return records


def _convergence_window(records: list, ratio: float) -> int:
    """Index of the first window whose discrepancy drops below ratio x window 0; -1 if never."""
    baseline = math.nan
    for record in records:
        if math.isfinite(record.mean_discrepancy):
            baseline = record.mean_discrepancy
            break
    if not math.isfinite(baseline) or baseline <= 0:
        return -1
    for i, record in enumerate(records):
        if math.isfinite(record.mean_discrepancy) and record.mean_discrepancy < ratio * baseline:
            return i
    return -1


def _steady_hit_rate(theta: np.ndarray, fraction: float) -> float:
    if len(theta) == 0:
        return math.nan
    tail = max(1, math.ceil(fraction * len(theta)))
    return float(theta[-tail:].mean())


# ---------------------------------------------------------------------------
# The slot loop.
# ---------------------------------------------------------------------------


def _split_rngs(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    env_ss, agent_ss = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(env_ss), np.random.default_rng(agent_ss)


def record_trace(cfg: ExperimentConfig, seed: int) -> list[SlotView]:
    """Materialise one seed's slot sequence for replay across agents."""
    env_rng, _ = _split_rngs(seed)
    simulator = Environment(environment_config(cfg), env_rng)
    return [simulator.step() for _ in range(cfg.horizon)]


def _run_over_slots(cfg: ExperimentConfig, agent_kind: str, seed: int,
                    slot_iter) -> RunResult:
    space = ActionSpace(cfg.library_size, cfg.cache_capacity)
    _, agent_rng = _split_rngs(seed)
    driver = _make_driver(cfg, agent_kind, space, agent_rng)
    current = driver.start()
    horizon = cfg.horizon
    theta = np.empty(horizon)
    disc = np.empty(horizon)
    micros = np.zeros(horizon)
    digest = hashlib.sha256()
    empty_slots = 0
    fallback_users = 0
    timing = cfg.measure_timing
    for t, view in enumerate(slot_iter):
        digest.update(view.batch.counts.tobytes())
        empty_slots += view.empty
        fallback_users += view.fallback_users
        theta[t] = driver.slot_theta(view, current)
        driver.learn(caching.reward(theta[t]), view)
        if timing:
            tick = time.perf_counter()
            nxt = driver.select(view)
            micros[t] = (time.perf_counter() - tick) * 1e6
        else:
            nxt = driver.select(view)
        disc[t] = driver.last_discrepancy if driver.discrepancy_tracked else math.nan
        if nxt is not None:
            current = nxt
    records = _windows(theta, disc, micros, cfg.metric_window)
    return RunResult(
        agent=agent_kind,
        seed=seed,
        slots=horizon,
        records=records,
        steady_hit_rate=_steady_hit_rate(theta, cfg.steady_fraction),
        convergence_window=_convergence_window(records, cfg.convergence_ratio),
        final_cum_avg_reward=(
            records[-1].cum_avg_reward if records else math.nan
        ),
        stream_hash=digest.hexdigest(),
        empty_slots=empty_slots,
        fallback_users=fallback_users,
        mean_select_micros=float(micros.mean()) if horizon else 0.0,
    )


def run_episode(cfg: ExperimentConfig, agent_kind: str | None = None,
                seed: int | None = None, out_dir: str | Path | None = None,
                trace: list | None = None) -> RunResult:
    """Run one agent over one seeded realisation; optionally write result files."""
    kind = agent_kind or cfg.agent
    if kind not in AGENT_KINDS:
        raise ConfigError(f"unknown agent kind {kind!r}; expected one of {AGENT_KINDS}")
    run_seed = cfg.seeds[0] if seed is None else seed
    if trace is None:
        env_rng, _ = _split_rngs(run_seed)
        simulator = Environment(environment_config(cfg), env_rng)
        slot_iter = (simulator.step() for _ in range(cfg.horizon))
        result = _run_over_slots(cfg, kind, run_seed, slot_iter)
    else:
        result = _run_over_slots(cfg, kind, run_seed, trace)
    if out_dir is not None:
        write_run_files(cfg, result, Path(out_dir), trace=trace)
    return result


def compare(cfg: ExperimentConfig, agents: list | None = None,
            seeds: list | None = None,
            out_dir: str | Path | None = None) -> list[RunResult]:
    """Run each agent over identical per-seed request streams.

    Streams are generated once per seed and replayed, and the per-run stream
    hashes are asserted equal, so every comparison is paired.
    """
    agents = list(agents or cfg.compare_agents)
    seeds = list(seeds or cfg.seeds)
    results = []
    for seed in seeds:
        trace = record_trace(cfg, seed)
        hashes = set()
        for kind in agents:
            result = run_episode(cfg, kind, seed, out_dir=out_dir, trace=trace)
            hashes.add(result.stream_hash)
            results.append(result)
        if len(hashes) > 1:
            raise NumericalError(
                f"request streams diverged across agents for seed {seed}"
            )
    if out_dir is not None:
        write_comparison_csv(results, Path(out_dir) / "comparison.csv")
    return results


def _sweep_config(cfg: ExperimentConfig, dimension: str, value: tuple) -> ExperimentConfig:
    a, b = int(value[0]), int(value[1])
    if dimension == "fb":
        return replace(cfg, library_size=a, cache_capacity=b)
    betas = np.linspace(min(cfg.zipf_betas), max(cfg.zipf_betas), a).tolist()
    alphas = np.linspace(min(cfg.pref_alphas), max(cfg.pref_alphas), b).tolist()
    return replace(
        cfg,
        num_pop_states=a,
        num_pref_states=b,
        zipf_betas=betas,
        pref_alphas=alphas,
    )


def sweep_tag(dimension: str, value: tuple) -> str:
    prefix = ("F", "B") if dimension == "fb" else ("P", "Q")
    return f"{prefix[0]}{value[0]}_{prefix[1]}{value[1]}"


def sweep(cfg: ExperimentConfig, out_dir: str | Path | None = None) -> dict:
    """One paired comparison per grid point; returns {tag: [RunResult, ...]}."""
    if cfg.sweep_dimension is None:
        raise ConfigError("sweep requires sweep_dimension and sweep_values")
    summaries = {}
    for value in cfg.sweep_values:
        tag = sweep_tag(cfg.sweep_dimension, value)
        point_cfg = _sweep_config(cfg, cfg.sweep_dimension, value)
        validate_config(point_cfg)
        point_dir = Path(out_dir) / f"grid_{tag}" if out_dir is not None else None
        summaries[tag] = compare(
            point_cfg, agents=cfg.sweep_agents, out_dir=point_dir
        )
    if out_dir is not None:
        write_sweep_csv(cfg, summaries, Path(out_dir) / "sweep.csv")
    return summaries


# ---------------------------------------------------------------------------
# Selection-cost benchmark.
# ---------------------------------------------------------------------------


def selection_timing(library_size: int, capacity: int, reps: int = 300,
                     seed: int = 0) -> dict:
    """Median wall-clock cost of one greedy selection, in microseconds.

    The tabular side times the exhaustive table scan with every action of
    one state stored (the fully explored worst case); the linear-value side
    times the separable top-capacity selection.
    """
    rng = np.random.default_rng(seed)
    space = ActionSpace(library_size, capacity)
    state = tabular.QuantizedState(0, 0)
    table = tabular.QTable(space.size, default=0.0)
    for index, value in enumerate(rng.random(space.size)):
        table.set(state, index, float(value))
    weights = rng.standard_normal(2 * library_size + 1)
    popularity = rng.dirichlet(np.ones(library_size))
    preference = rng.random(library_size)
    prev = space.random_action(rng)

    def _median(fn) -> float:
        times = np.empty(reps)
        for i in range(reps):
            tick = time.perf_counter()
            fn()
            times[i] = time.perf_counter() - tick
        return float(np.median(times) * 1e6)

    tabular_micros = _median(
        lambda: tabular.select_action(table, state, space, 0.0, rng)
    )
    vfa_micros = _median(
        lambda: vfa.greedy_action(space, popularity, preference, prev, weights)
    )
    return {
        "library_size": library_size,
        "capacity": capacity,
        "actions": space.size,
        "tabular_micros": tabular_micros,
        "vfa_micros": vfa_micros,
    }


# ---------------------------------------------------------------------------
# Result files.
# ---------------------------------------------------------------------------


def _fmt(value: float) -> str:
    if isinstance(value, float) and math.isnan(value):
        return "nan"
    return format(value, ".12g")


def run_basename(agent: str, seed: int) -> str:
    return f"run_{agent}_seed{seed}"


def write_run_files(cfg: ExperimentConfig, result: RunResult, out_dir: Path,
                    trace: list | None = None) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    base = run_basename(result.agent, result.seed)
    with open(out_dir / f"{base}.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["window_start", "avg_hit_rate", "mean_discrepancy",
             "cum_avg_reward", "action_select_micros"]
        )
        for record in result.records:
            writer.writerow(
                [record.window_start, _fmt(record.avg_hit_rate),
                 _fmt(record.mean_discrepancy), _fmt(record.cum_avg_reward),
                 _fmt(record.action_select_micros if cfg.measure_timing else 0.0)]
            )
    summary_lines = ["[config]"]
    summary_lines.extend(config_lines(cfg))
    summary_lines.append("[result]")
    summary_lines.append(f"agent: {result.agent}")
    summary_lines.append(f"seed: {result.seed}")
    summary_lines.append(f"slots: {result.slots}")
    summary_lines.append(f"steady_hit_rate: {_fmt(result.steady_hit_rate)}")
    summary_lines.append(f"convergence_window: {result.convergence_window}")
    summary_lines.append(f"final_cum_avg_reward: {_fmt(result.final_cum_avg_reward)}")
    summary_lines.append(f"stream_hash: {result.stream_hash}")
    summary_lines.append(f"empty_slots: {result.empty_slots}")
    summary_lines.append(f"weight_fallback_users: {result.fallback_users}")
    if cfg.measure_timing:
        summary_lines.append(f"mean_select_micros: {_fmt(result.mean_select_micros)}")
    with open(out_dir / f"{base}_summary.txt", "w") as fh:
        fh.write("\n".join(summary_lines) + "\n")
    if cfg.export_requests and trace is not None:
        with open(out_dir / f"requests_seed{result.seed}.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["slot", "user_id", "content_id"])
            for view in trace:
                for uid, cid in zip(view.batch.user_seq, view.batch.content_seq):
                    writer.writerow([view.slot, int(uid), int(cid)])


def write_comparison_csv(results: list, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["agent", "seed", "steady_hit_rate", "convergence_window"])
        for result in sorted(results, key=lambda r: (r.agent, r.seed)):
            writer.writerow(
                [result.agent, result.seed, _fmt(result.steady_hit_rate),
                 result.convergence_window]
            )


def write_sweep_csv(cfg: ExperimentConfig, summaries: dict, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["dimension", "grid", "agent", "seed", "steady_hit_rate",
             "convergence_window"]
        )
        for tag in sorted(summaries):
            for result in sorted(summaries[tag], key=lambda r: (r.agent, r.seed)):
                writer.writerow(
                    [cfg.sweep_dimension, tag, result.agent, result.seed,
                     _fmt(result.steady_hit_rate), result.convergence_window]
                )


# ---------------------------------------------------------------------------
# Plot-ready long-format emission.
# ---------------------------------------------------------------------------

FIGURE_IDS = (3, 4, 5, 6)


def _read_run_csvs(out_dir: Path) -> dict:
    """Window rows grouped by agent: {agent: {seed: list of row dicts}}."""
    grouped: dict = {}
    for path in sorted(out_dir.glob("run_*_seed*.csv")):
        stem = path.stem[len("run_"):]
        agent, _, seed_part = stem.rpartition("_seed")
        if not agent or not seed_part.isdigit():
            continue
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        grouped.setdefault(agent, {})[int(seed_part)] = rows
    return grouped


def _series_mean(per_seed: dict, column: str) -> list:
    """Mean of a numeric column across seeds, per window ordinal."""
    seeds = sorted(per_seed)
    n_windows = min(len(per_seed[s]) for s in seeds)
    points = []
    for i in range(n_windows):
        values = [float(per_seed[s][i][column]) for s in seeds]
        finite = [v for v in values if math.isfinite(v)]
        x = int(per_seed[seeds[0]][i]["window_start"])
        points.append((x, sum(finite) / len(finite) if finite else math.nan))
    return points


def emit_figure(out_dir: str | Path, figure: int) -> Path:
    """Write figure<N>.csv (columns figure, series, x, y) from prior results.

    Figures 3 and 4 read a comparison directory (hit rate and discrepancy
    per agent); figures 5 and 6 read a sweep directory (hit rate per grid
    point).
    """
    out_dir = Path(out_dir)
    if figure not in FIGURE_IDS:
        raise ConfigError(f"figure must be one of {FIGURE_IDS}, got {figure}")
    series: dict[str, list] = {}
    if figure in (3, 4):
        column = "avg_hit_rate" if figure == 3 else "mean_discrepancy"
        grouped = _read_run_csvs(out_dir)
        if figure == 4:
            grouped = {a: g for a, g in grouped.items() if a in ("q-vfa", "q-tabular")}
        if not grouped:
            raise ConfigError(f"no run CSVs found under {out_dir}")
        for agent, per_seed in sorted(grouped.items()):
            series[agent] = _series_mean(per_seed, column)
    else:
        grid_dirs = sorted(out_dir.glob("grid_*"))
        if not grid_dirs:
            raise ConfigError(f"no sweep grid directories found under {out_dir}")
        for grid_dir in grid_dirs:
            tag = grid_dir.name[len("grid_"):]
            grouped = _read_run_csvs(grid_dir)
            for agent, per_seed in sorted(grouped.items()):
                label = tag if len(grouped) == 1 else f"{tag}_{agent}"
                series[label] = _series_mean(per_seed, "avg_hit_rate")
    path = out_dir / f"figure{figure}.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["figure", "series", "x", "y"])
        for label in sorted(series):
            for x, y in series[label]:
                writer.writerow([figure, label, x, _fmt(y)])
    return path
