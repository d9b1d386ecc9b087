"""Tabular Q-learning over quantized hidden states.

The agent keeps a sparse table of state-action values (unvisited pairs read
as the table default), explores epsilon-greedily over the full decision
space, and maps the continuous observation to discrete hidden-state indices
either through the simulator's true indices (oracle mode, test scaffolding)
or through online nearest-centroid classification.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .caching import ActionSpace, CacheAction
from .env import Observation
from .errors import NumericalError

QUANTIZER_MODES = ("oracle", "centroid")


@dataclass(frozen=True)
class QuantizedState:
    pop_index: int
    pref_index: int
    prev_action_index: int | None = None


class _CentroidBank:
    """Online nearest-centroid classifier with a fixed number of slots.

    Slots fill from the first observations; afterwards each observation is
    labelled with the nearest centroid (ties to the lowest index) and the
    winner drifts toward the observation by ``update_rate``.
    """

    def __init__(self, n_slots: int, update_rate: float):
        self.n_slots = n_slots
        self.update_rate = update_rate
        self.centroids: list[np.ndarray] = []

    def assign(self, vector: np.ndarray) -> int:
        if len(self.centroids) < self.n_slots:
            self.centroids.append(np.array(vector, dtype=float))
            return len(self.centroids) - 1
        stacked = np.stack(self.centroids)
        distances = np.sqrt(np.square(stacked - vector).sum(axis=1))
        winner = int(np.argmin(distances))
        self.centroids[winner] += self.update_rate * (vector - self.centroids[winner])
        return winner


class StateQuantizer:
    """Maps observations to (popularity state, preference state) indices."""

    def __init__(
        self,
        n_pop_states: int,
        n_pref_states: int,
        mode: str = "centroid",
        update_rate: float = 0.05,
    ):
        if mode not in QUANTIZER_MODES:
            raise ValueError(f"unknown quantizer mode {mode!r}; expected {QUANTIZER_MODES}")
        self.mode = mode
        self.n_pop_states = n_pop_states
        self.n_pref_states = n_pref_states
        self._pop_bank = _CentroidBank(n_pop_states, update_rate)
        self._pref_bank = _CentroidBank(n_pref_states, update_rate)

    def quantize(
        self,
        obs: Observation,
        truth: tuple[int, int] | None = None,
        prev_action_index: int | None = None,
    ) -> QuantizedState:
        if self.mode == "oracle":
            if truth is None:
                raise ValueError("oracle quantizer needs the true state indices")
            pop_index, pref_index = truth
        else:
            pop_index = self._pop_bank.assign(obs.popularity)
            pref_index = self._pref_bank.assign(obs.preference)
        return QuantizedState(
            pop_index=int(pop_index),
            pref_index=int(pref_index),
            prev_action_index=prev_action_index,
        )


class QTable:
    """Sparse map from (state, action index) to value; only visited pairs stored."""

    def __init__(self, num_actions: int, default: float = 0.0):
        if num_actions < 1:
            raise ValueError("num_actions must be >= 1")
        self.num_actions = num_actions
        self.default = float(default)
        self._states: dict[QuantizedState, dict[int, float]] = {}

    def value(self, state: QuantizedState, action_index: int) -> float:
        row = self._states.get(state)
        if row is None:
            return self.default
        return row.get(action_index, self.default)

    def set(self, state: QuantizedState, action_index: int, value: float) -> None:
        if not math.isfinite(value):
            raise NumericalError(
                f"non-finite table value {value} at state={state} action={action_index}"
            )
        self._states.setdefault(state, {})[action_index] = value

    def min_value(self, state: QuantizedState) -> float:
        """Minimum over all actions, stored or not."""
        row = self._states.get(state)
        if not row:
            return self.default
        best = min(row.values())
        if len(row) < self.num_actions:
            return min(best, self.default)
        return best

    def argmin(self, state: QuantizedState) -> int:
        """Lowest-value action index; ties break to the lowest index.

        Equivalent to an exhaustive scan of all ``num_actions`` actions with
        unvisited entries read as the default.
        """
        row = self._states.get(state)
        if not row:
            return 0
        best_value = math.inf
        best_index = self.num_actions
        for index, value in row.items():
            if value < best_value or (value == best_value and index < best_index):
                best_value = value
                best_index = index
        if len(row) < self.num_actions and self.default <= best_value:
            first_free = 0
            while first_free in row:
                first_free += 1
            if self.default < best_value or first_free < best_index:
                return first_free
        return best_index

    def entry_count(self) -> int:
        return sum(len(row) for row in self._states.values())

    def visited_states(self) -> int:
        return len(self._states)

    def values(self) -> list[float]:
        return [v for row in self._states.values() for v in row.values()]


def learning_rate(t: int) -> float:
    """Time-decaying step 1 / sqrt(t + 2): large while observing, small once settled."""
    return 1.0 / math.sqrt(t + 2)


def select_action(
    table: QTable,
    state: QuantizedState,
    space: ActionSpace,
    epsilon: float,
    rng: np.random.Generator,
) -> CacheAction:
    """Epsilon-greedy: exploit the table argmin, otherwise a uniform valid action."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must be in [0, 1], got {epsilon}")
    if rng.random() < epsilon:
        return space.random_action(rng)
    return space.unrank(table.argmin(state))


def update(
    table: QTable,
    state: QuantizedState,
    action_index: int,
    reward_value: float,
    next_state: QuantizedState,
    t: int,
    gamma: float,
) -> float:
    """One off-policy backup toward r + gamma * min_a' Q(s', a').

    Returns the pre-rate temporal-difference error (its square is the
    per-slot discrepancy metric).
    """
    if not 0.0 < gamma <= 1.0:
        raise ValueError(f"gamma must be in (0, 1], got {gamma}")
    current = table.value(state, action_index)
    target = reward_value + gamma * table.min_value(next_state)
    td = target - current
    if not math.isfinite(td):
        raise NumericalError(f"non-finite temporal-difference error {td} at t={t}")
    table.set(state, action_index, current + learning_rate(t) * td)
    return td


class QLearningAgent:
    """Drives the table through the slot loop: learn on arrival, select at slot end."""

    def __init__(
        self,
        space: ActionSpace,
        quantizer: StateQuantizer,
        gamma: float,
        epsilon_schedule,
        rng: np.random.Generator,
        initial_q: float = 0.0,
        include_prev_action: bool = False,
    ):
        self.space = space
        self.quantizer = quantizer
        self.gamma = gamma
        self.epsilon_schedule = epsilon_schedule
        self.rng = rng
        self.include_prev_action = include_prev_action
        self.table = QTable(space.size, default=initial_q)
        self.last_discrepancy = math.nan
        self._updates = 0
        self._selections = 0
        self._prev_state: QuantizedState | None = None
        self._next_state_cache: QuantizedState | None = None
        self._abar: CacheAction | None = None
        self._current: CacheAction | None = None

    def initial_action(self) -> CacheAction:
        self._current = self.space.random_action(self.rng)
        self._abar = self._current
        return self._current

    def _state_of(self, obs: Observation, truth: tuple[int, int]) -> QuantizedState:
        prev_index = self._current.index if self.include_prev_action else None
        return self.quantizer.quantize(obs, truth=truth, prev_action_index=prev_index)

    def learn(self, reward_value: float, obs: Observation, truth: tuple[int, int]) -> None:
        next_state = self._state_of(obs, truth)
        if self._prev_state is not None:
            td = update(
                self.table,
                self._prev_state,
                self._current.index,
                reward_value,
                next_state,
                self._updates,
                self.gamma,
            )
            self.last_discrepancy = td * td
            self._updates += 1
        self._next_state_cache = next_state

    def select(self, obs: Observation, truth: tuple[int, int]) -> CacheAction:
        state = self._next_state_cache
        if state is None:
            state = self._state_of(obs, truth)
        epsilon = self.epsilon_schedule(self._selections)
        self._selections += 1
        action = select_action(self.table, state, self.space, epsilon, self.rng)
        self._prev_state = state
        self._abar = self._current
        self._current = action
        self._next_state_cache = None
        return action
