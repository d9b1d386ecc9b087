"""Slotted request-stream simulator driven by two hidden Markov chains.

Each slot, a hidden popularity chain selects which rank-ordered Zipf profile
governs regional demand, a hidden preference chain selects the affinity
parameter coupling users to content features, a churning user population
issues Poisson-many requests per user, and the resulting batch is summarised
into the observation (empirical popularity, group preference) that agents
are allowed to see.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

KERNEL_FORMS = ("distance", "inner-product")


def kernel(x: np.ndarray, y: np.ndarray, alpha: float, form: str = "distance") -> float:
    """Affinity in [0, 1] between a user trait vector and a content feature vector.

    The default ``distance`` form is

        g = (1 - d(x, y)) ** (-ln(1 - alpha)),   d(x, y) = ||x - y||^2 / M,

    which is 1 for every pair at alpha = 0, is 1 whenever x = y, decreases
    in d for fixed alpha, and tends to the indicator of x = y as alpha -> 1.
    The ``inner-product`` form, (1 - <x, y>) ** ln(1 - alpha), is retained
    for comparison only: it can exceed 1 and is undefined for <x, y> > 1.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError(f"trait/feature shape mismatch: {x.shape} vs {y.shape}")
    if not 0.0 <= alpha < 1.0:
        raise ValueError(f"alpha must be in [0, 1), got {alpha}")
    if form == "distance":
        d = float(np.square(x - y).sum()) / x.size
        return float((1.0 - d) ** (-np.log1p(-alpha)))
    if form == "inner-product":
        return float((1.0 - float(x @ y)) ** np.log1p(-alpha))
    raise ValueError(f"unknown kernel form {form!r}; expected one of {KERNEL_FORMS}")


def kernel_matrix(
    traits: np.ndarray, features: np.ndarray, alpha: float, form: str = "distance"
) -> np.ndarray:
    """Vectorised ``kernel`` over all (user, content) pairs; shape (N, F)."""
    if form == "distance":
        diff = traits[:, None, :] - features[None, :, :]
        d = np.square(diff).mean(axis=2)
        return (1.0 - d) ** (-np.log1p(-alpha))
    if form == "inner-product":
        return (1.0 - traits @ features.T) ** np.log1p(-alpha)
    raise ValueError(f"unknown kernel form {form!r}; expected one of {KERNEL_FORMS}")


def zipf_popularity(library_size: int, beta: float, rank_perm: np.ndarray) -> np.ndarray:
    """Ground-truth demand profile: content holding rank k gets (1/k^beta) / H.

    ``rank_perm[k]`` is the content id holding rank k+1.
    """
    if beta <= 0:
        raise ValueError(f"zipf beta must be > 0, got {beta}")
    perm = np.asarray(rank_perm)
    if sorted(perm.tolist()) != list(range(library_size)):
        raise ValueError("rank_perm must be a permutation of the content ids")
    weights = 1.0 / np.arange(1, library_size + 1, dtype=float) ** beta
    probs = np.empty(library_size, dtype=float)
    probs[perm] = weights / weights.sum()
    return probs


def _validate_transition(matrix: np.ndarray, n_states: int, name: str) -> np.ndarray:
    matrix = np.asarray(matrix, dtype=float)
    if matrix.shape != (n_states, n_states):
        raise ValueError(
            f"{name} transition must be {n_states}x{n_states}, got {matrix.shape}"
        )
    if np.any(matrix < 0):
        raise ValueError(f"{name} transition has negative entries")
    rows = matrix.sum(axis=1)
    if np.any(np.abs(rows - 1.0) > 1e-12):
        raise ValueError(f"{name} transition rows must sum to 1 +/- 1e-12, got {rows}")
    return matrix


def sticky_transition(n_states: int, stay: float = 0.8) -> np.ndarray:
    """Stay with probability ``stay``; spread the rest uniformly over other states."""
    if not 0.0 <= stay <= 1.0:
        raise ValueError(f"stay probability must be in [0, 1], got {stay}")
    if n_states == 1:
        return np.ones((1, 1))
    off = (1.0 - stay) / (n_states - 1)
    matrix = np.full((n_states, n_states), off)
    np.fill_diagonal(matrix, stay)
    return matrix


@dataclass
class ContentCatalog:
    """Fixed content library: one feature vector in [0,1]^M per content."""

    features: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        if self.features.ndim != 2:
            raise ValueError("features must be a (F, M) array")
        if np.any(self.features < 0) or np.any(self.features > 1):
            raise ValueError("feature coordinates must lie in [0, 1]")

    @property
    def library_size(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]


class PopularityChain:
    """Hidden Markov chain over (zipf beta, rank permutation) demand profiles."""

    def __init__(
        self,
        betas: list[float],
        rank_perms: list[np.ndarray],
        transition: np.ndarray,
        current: int = 0,
    ):
        if len(betas) != len(rank_perms) or not betas:
            raise ValueError("need one rank permutation per beta, at least one state")
        library_size = len(rank_perms[0])
        self.betas = [float(b) for b in betas]
        self.rank_perms = [np.asarray(p) for p in rank_perms]
        self.transition = _validate_transition(transition, len(betas), "popularity")
        self.current = int(current)
        self.profiles = [
            zipf_popularity(library_size, b, p)
            for b, p in zip(self.betas, self.rank_perms)
        ]

    @property
    def n_states(self) -> int:
        return len(self.betas)

    def ground_truth(self, state: int | None = None) -> np.ndarray:
        return self.profiles[self.current if state is None else state]

    def advance(self, rng: np.random.Generator) -> int:
        self.current = _sample_row(self.transition[self.current], rng)
        return self.current


class PreferenceChain:
    """Hidden Markov chain over kernel affinity parameters alpha in [0, 1)."""

    def __init__(self, alphas: list[float], transition: np.ndarray, current: int = 0):
        if not alphas:
            raise ValueError("need at least one preference state")
        for a in alphas:
            if not 0.0 <= a < 1.0:
                raise ValueError(f"alpha must be in [0, 1), got {a}")
        self.alphas = [float(a) for a in alphas]
        self.transition = _validate_transition(transition, len(alphas), "preference")
        self.current = int(current)

    @property
    def n_states(self) -> int:
        return len(self.alphas)

    @property
    def alpha(self) -> float:
        return self.alphas[self.current]

    def advance(self, rng: np.random.Generator) -> int:
        self.current = _sample_row(self.transition[self.current], rng)
        return self.current


def _sample_row(row: np.ndarray, rng: np.random.Generator) -> int:
    return int(np.searchsorted(np.cumsum(row), rng.random(), side="right"))


def advance_chains(
    popularity: PopularityChain, preference: PreferenceChain, rng: np.random.Generator
) -> tuple[int, int]:
    """Advance both hidden chains independently; returns the new state indices."""
    return popularity.advance(rng), preference.advance(rng)


@dataclass
class UserPopulation:
    """The user group served during a slot.

    A user's trait vector is fixed for their whole stay; churn replaces
    departing users with fresh uniform traits so the group size stays at N.
    """

    user_ids: np.ndarray
    traits: np.ndarray
    turnover_prob: float
    next_id: int

    @property
    def size(self) -> int:
        return len(self.user_ids)

    @staticmethod
    def fresh(
        size: int, feature_dim: int, turnover_prob: float, rng: np.random.Generator
    ) -> "UserPopulation":
        if not 0.0 <= turnover_prob <= 1.0:
            raise ValueError(f"turnover_prob must be in [0, 1], got {turnover_prob}")
        return UserPopulation(
            user_ids=np.arange(size, dtype=np.int64),
            traits=rng.random((size, feature_dim)),
            turnover_prob=turnover_prob,
            next_id=size,
        )


def churn_users(pop: UserPopulation, rng: np.random.Generator) -> UserPopulation:
    """Each user departs independently; replacements restore the group size."""
    n = pop.size
    departing = rng.random(n) < pop.turnover_prob
    k = int(departing.sum())
    user_ids = pop.user_ids.copy()
    traits = pop.traits.copy()
    if k:
        user_ids[departing] = np.arange(pop.next_id, pop.next_id + k, dtype=np.int64)
        traits[departing] = rng.random((k, traits.shape[1]))
    return UserPopulation(
        user_ids=user_ids,
        traits=traits,
        turnover_prob=pop.turnover_prob,
        next_id=pop.next_id + k,
    )


@dataclass
class RequestBatch:
    """One slot's requests: per-content totals plus the per-request log."""

    slot: int
    counts: np.ndarray
    user_seq: np.ndarray
    content_seq: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass
class Observation:
    """Everything an agent may see about a slot."""

    popularity: np.ndarray
    preference: np.ndarray
    group_size: int


def request_weights(
    p_true: np.ndarray, affinities: np.ndarray, mix_lambda: float
) -> tuple[np.ndarray, int]:
    """Per-user request distributions: (p_true^lambda) * (g^(1-lambda)), renormalised.

    Rows whose weights all vanish fall back to the ground-truth profile;
    the number of such rows is returned for the run log.
    """
    if not 0.0 <= mix_lambda <= 1.0:
        raise ValueError(f"mix_lambda must be in [0, 1], got {mix_lambda}")
    weights = p_true[None, :] ** mix_lambda * affinities ** (1.0 - mix_lambda)
    row_sums = weights.sum(axis=1)
    dead = row_sums <= 0.0
    fallback = int(dead.sum())
    if fallback:
        weights[dead] = p_true
        row_sums[dead] = 1.0
    return weights / row_sums[:, None], fallback


def generate_requests(
    catalog: ContentCatalog,
    p_true: np.ndarray,
    alpha: float,
    users: UserPopulation,
    requests_per_user: float,
    mix_lambda: float,
    rng: np.random.Generator,
    slot: int = 0,
    kernel_form: str = "distance",
    affinities: np.ndarray | None = None,
) -> tuple[RequestBatch, int]:
    """Draw one slot's batch; returns (batch, number of weight-fallback users).

    Each user issues Poisson(requests_per_user) requests, each targeting
    content f with probability proportional to p_true[f]^lambda * g[f]^(1-lambda).
    The per-request log is a random interleaving of all users' requests.
    """
    if requests_per_user < 0:
        raise ValueError(f"requests_per_user must be >= 0, got {requests_per_user}")
    if affinities is None:
        affinities = kernel_matrix(users.traits, catalog.features, alpha, kernel_form)
    weights, fallback = request_weights(p_true, affinities, mix_lambda)
    if fallback:
        logger.warning(
            "slot %d: %d user(s) had all-zero request weights; "
            "fell back to the ground-truth profile",
            slot,
            fallback,
        )
    per_user = rng.poisson(requests_per_user, users.size)
    library_size = catalog.library_size
    counts = np.zeros(library_size, dtype=np.int64)
    content_chunks = []
    for i in range(users.size):
        if per_user[i] == 0:
            continue
        drawn = rng.multinomial(per_user[i], weights[i])
        counts += drawn
        content_chunks.append(np.repeat(np.arange(library_size), drawn))
    if content_chunks:
        content_seq = np.concatenate(content_chunks)
        user_seq = np.repeat(users.user_ids, per_user)
        order = rng.permutation(len(content_seq))
        content_seq = content_seq[order]
        user_seq = user_seq[order]
    else:
        content_seq = np.empty(0, dtype=np.int64)
        user_seq = np.empty(0, dtype=np.int64)
    batch = RequestBatch(
        slot=slot, counts=counts, user_seq=user_seq, content_seq=content_seq
    )
    return batch, fallback


def observe(
    batch: RequestBatch,
    users: UserPopulation,
    catalog: ContentCatalog,
    alpha: float,
    kernel_form: str = "distance",
    affinities: np.ndarray | None = None,
) -> Observation:
    """Summarise a slot into the agent-visible observation.

    Popularity is the batch's empirical content frequency (uniform when the
    batch is empty); preference is the group-mean kernel affinity per content.
    """
    total = batch.total
    library_size = catalog.library_size
    if total > 0:
        popularity = batch.counts / total
    else:
        popularity = np.full(library_size, 1.0 / library_size)
    if affinities is None:
        affinities = kernel_matrix(users.traits, catalog.features, alpha, kernel_form)
    preference = affinities.mean(axis=0)
    return Observation(
        popularity=popularity, preference=preference, group_size=users.size
    )


@dataclass
class SlotView:
    """One simulated slot: the batch, the observation, and oracle-only truth."""

    slot: int
    batch: RequestBatch
    observation: Observation
    pop_index: int
    pref_index: int
    true_popularity: np.ndarray
    empty: bool
    fallback_users: int


@dataclass
class EnvironmentConfig:
    library_size: int
    feature_dim: int
    num_users: int
    betas: list[float]
    alphas: list[float]
    pop_transition: np.ndarray
    pref_transition: np.ndarray
    turnover_prob: float
    requests_per_user: float
    mix_lambda: float
    kernel_form: str = "distance"


class Environment:
    """Stateful slot generator; all randomness flows from the generator it is given.

    One instance per run; instances with distinct generators are independent
    and may execute in parallel.
    """

    def __init__(self, config: EnvironmentConfig, rng: np.random.Generator):
        self.config = config
        self._rng = rng
        c = config
        self.catalog = ContentCatalog(features=rng.random((c.library_size, c.feature_dim)))
        rank_perms = [rng.permutation(c.library_size) for _ in c.betas]
        self.popularity = PopularityChain(
            betas=c.betas,
            rank_perms=rank_perms,
            transition=c.pop_transition,
            current=int(rng.integers(len(c.betas))),
        )
        self.preference = PreferenceChain(
            alphas=c.alphas,
            transition=c.pref_transition,
            current=int(rng.integers(len(c.alphas))),
        )
        self.users = UserPopulation.fresh(
            c.num_users, c.feature_dim, c.turnover_prob, rng
        )
        self._slot = 0
        self.empty_slots = 0
        self.fallback_users = 0

    def step(self) -> SlotView:
        """Advance chains, churn users, draw the batch, and build the observation."""
        c = self.config
        rng = self._rng
        advance_chains(self.popularity, self.preference, rng)
        self.users = churn_users(self.users, rng)
        alpha = self.preference.alpha
        p_true = self.popularity.ground_truth()
        affinities = kernel_matrix(
            self.users.traits, self.catalog.features, alpha, c.kernel_form
        )
        batch, fallback = generate_requests(
            self.catalog,
            p_true,
            alpha,
            self.users,
            c.requests_per_user,
            c.mix_lambda,
            rng,
            slot=self._slot,
            kernel_form=c.kernel_form,
            affinities=affinities,
        )
        observation = observe(
            batch, self.users, self.catalog, alpha, c.kernel_form, affinities=affinities
        )
        empty = batch.total == 0
        if empty:
            self.empty_slots += 1
            logger.warning("slot %d: empty request batch; popularity set uniform", self._slot)
        self.fallback_users += fallback
        view = SlotView(
            slot=self._slot,
            batch=batch,
            observation=observation,
            pop_index=self.popularity.current,
            pref_index=self.preference.current,
            true_popularity=p_true,
            empty=empty,
            fallback_users=fallback,
        )
        self._slot += 1
        return view
