"""Linear action-value approximation over per-content cost features.

The value of a cache decision is modelled as an inner product z(s, a)^T w,
where z stacks three costs of dimension 2F+1 in total:

    z1 = a^T (1 - a_bar)        refreshed slots pulled over the backhaul
    z2 = (1 - a) o p            popularity mass left uncached
    z3 = (1 - a) o q            group preference left uncached

Because the model is separable per content, the greedy decision is the
capacity-many contents with the smallest per-content scores, computed in
O(F log F) instead of enumerating all C(F, B) decisions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .caching import ActionSpace, CacheAction
from .errors import NumericalError

TD_MODES = ("signed", "abs")


@dataclass
class CostFeatures:
    """The stacked cost vector and its three named slices."""

    vector: np.ndarray

    @property
    def refresh_count(self) -> float:
        return float(self.vector[0])

    @property
    def popularity_mismatch(self) -> np.ndarray:
        n = (len(self.vector) - 1) // 2
        return self.vector[1 : 1 + n]

    @property
    def preference_mismatch(self) -> np.ndarray:
        n = (len(self.vector) - 1) // 2
        return self.vector[1 + n :]


def cost_vector(
    action_bits: np.ndarray,
    prev_bits: np.ndarray,
    popularity: np.ndarray,
    preference: np.ndarray,
) -> np.ndarray:
    """Stacked (2F+1) cost vector for taking ``action_bits`` after ``prev_bits``."""
    uncached = 1.0 - action_bits
    z1 = float(action_bits @ (1.0 - prev_bits))
    return np.concatenate(([z1], uncached * popularity, uncached * preference))


def cost_features(
    action: CacheAction,
    prev_action: CacheAction,
    popularity: np.ndarray,
    preference: np.ndarray,
) -> CostFeatures:
    if len(action.bits) != len(prev_action.bits):
        raise ValueError("action and previous action cover different libraries")
    return CostFeatures(
        vector=cost_vector(action.bits, prev_action.bits, popularity, preference)
    )


def q_value(features: CostFeatures | np.ndarray, weights: np.ndarray) -> float:
    """Inner product z^T w."""
    vector = features.vector if isinstance(features, CostFeatures) else features
    if vector.shape != weights.shape:
        raise ValueError(
            f"feature/weight dimension mismatch: {vector.shape} vs {weights.shape}"
        )
    return float(vector @ weights)


def content_scores(
    prev_bits: np.ndarray,
    popularity: np.ndarray,
    preference: np.ndarray,
    weights: np.ndarray,
) -> np.ndarray:
    """Per-content contribution of caching content f to the modelled value.

    The model decomposes as q_value = sum_f a_f * score_f + const, with
    score_f = w1 * (1 - prev_a_f) - (w2_f * p_f + w3_f * q_f).
    """
    n = len(popularity)
    w2 = weights[1 : 1 + n]
    w3 = weights[1 + n :]
    return weights[0] * (1.0 - prev_bits) - (w2 * popularity + w3 * preference)


def greedy_action(
    space: ActionSpace,
    popularity: np.ndarray,
    preference: np.ndarray,
    prev_action: CacheAction,
    weights: np.ndarray,
) -> CacheAction:
    """Value-minimising decision: the capacity-many smallest per-content scores.

    Score ties break to the lowest content id, which makes the result equal
    to exhaustive enumeration with its lowest-index tie rule; with zero
    weights this is the lexicographically first decision.
    """
    scores = content_scores(prev_action.bits, popularity, preference, weights)
    order = np.argsort(scores, kind="stable")[: space.capacity]
    return space.from_members(sorted(int(i) for i in order))


def td_error(
    reward_value: float,
    features: CostFeatures | np.ndarray,
    next_min_features: CostFeatures | np.ndarray,
    weights: np.ndarray,
    gamma: float,
) -> tuple[float, float]:
    """Signed temporal-difference error and its square.

    The bootstrapped target uses the greedy decision on the next
    observation under the current weights.
    """
    if not 0.0 < gamma <= 1.0:
        raise ValueError(f"gamma must be in (0, 1], got {gamma}")
    signed = (
        reward_value
        + gamma * q_value(next_min_features, weights)
        - q_value(features, weights)
    )
    if not math.isfinite(signed):
        raise NumericalError(f"non-finite temporal-difference error {signed}")
    return signed, signed * signed


def update_weights(
    weights: np.ndarray,
    features: CostFeatures | np.ndarray,
    signed_td: float,
    rho: float,
    mode: str = "signed",
) -> np.ndarray:
    """One stochastic step on the weights; returns the updated vector.

    ``signed`` (default) moves along rho * td * z, the standard
    semi-gradient step for a minimised value estimate.  ``abs`` moves along
    rho * |td| * z; with non-negative features that step can never reduce a
    weight, so it is retained only to demonstrate the difference.
    """
    if rho <= 0:
        raise ValueError(f"rho must be > 0, got {rho}")
    if mode not in TD_MODES:
        raise ValueError(f"unknown td mode {mode!r}; expected one of {TD_MODES}")
    vector = features.vector if isinstance(features, CostFeatures) else features
    step = signed_td if mode == "signed" else abs(signed_td)
    updated = weights + rho * step * vector
    if not np.all(np.isfinite(updated)):
        raise NumericalError("non-finite weights after update")
    return updated


class VfaAgent:
    """Drives the weight vector through the slot loop."""

    def __init__(
        self,
        space: ActionSpace,
        gamma: float,
        rho: float,
        epsilon_schedule,
        rng: np.random.Generator,
        td_mode: str = "signed",
    ):
        if td_mode not in TD_MODES:
            raise ValueError(f"unknown td mode {td_mode!r}; expected one of {TD_MODES}")
        self.space = space
        self.gamma = gamma
        self.rho = rho
        self.epsilon_schedule = epsilon_schedule
        self.rng = rng
        self.td_mode = td_mode
        self.weights = np.zeros(2 * space.library_size + 1)
        self.last_discrepancy = math.nan
        self._selections = 0
        self._abar: CacheAction | None = None
        self._current: CacheAction | None = None

    def initial_action(self) -> CacheAction:
        self._current = self.space.random_action(self.rng)
        self._abar = self._current
        return self._current

    def learn(self, reward_value: float, popularity: np.ndarray, preference: np.ndarray) -> None:
        """One slot's update: value the committed action on the slot's own observation.

        The bootstrap term values the observation's greedy follow-up action,
        the same decision problem the upcoming selection will solve.
        """
        if self._current is None or self._abar is None:
            return
        z = cost_vector(self._current.bits, self._abar.bits, popularity, preference)
        next_greedy = greedy_action(
            self.space, popularity, preference, self._current, self.weights
        )
        z_next = cost_vector(
            next_greedy.bits, self._current.bits, popularity, preference
        )
        signed, squared = td_error(reward_value, z, z_next, self.weights, self.gamma)
        self.weights = update_weights(self.weights, z, signed, self.rho, self.td_mode)
        self.last_discrepancy = squared

    def select(self, popularity: np.ndarray, preference: np.ndarray) -> CacheAction:
        epsilon = self.epsilon_schedule(self._selections)
        self._selections += 1
        if self.rng.random() < epsilon:
            action = self.space.random_action(self.rng)
        else:
            action = greedy_action(
                self.space, popularity, preference, self._current, self.weights
            )
        self._abar = self._current
        self._current = action
        return action
