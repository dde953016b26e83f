"""Recommendation policies behind a uniform select/update/flush interface.

Four learned policies plus a uniform-random baseline:

* ``ThompsonSampling``: per-exercise Gaussian reward model with unknown mean
  and variance under a conjugate Normal-Inverse-Gamma state.
* ``LinearThompsonSampling``: per-exercise ridge model of reward as a linear
  function of the context vector, with posterior parameter sampling.
* ``UserBasedCF`` / ``ItemBasedCF``: neighborhood collaborative filtering over
  a buffered user x exercise reward matrix with cosine similarity.

Ties always break toward the lexicographically smallest exercise identifier:
candidates are scored in sorted order and the first maximum wins. Each policy
instance is single-writer; distinct instances may run in parallel.
"""

from __future__ import annotations

import hashlib
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .types import RewardMatrix

DEFAULT_REFRESH_INTERVAL = 1000
DEFAULT_CF_BATCH_SIZE = 1000

# Validation-tuned defaults for the Normal-Inverse-Gamma prior.
DEFAULT_NIG_PRIOR = (0.0, 0.01, 1.0, 2.0)


class Policy(ABC):
    """Contract shared by every policy.

    ``select`` must return a member of ``candidates`` and raises on an empty
    candidate set. ``update`` feeds back the observed reward for one
    recommendation; ``flush`` applies any buffered state.
    """

    #: whether the replay evaluator should give this policy an initial
    #: random-selection phase
    uses_warm_start: bool = False

    @abstractmethod
    def select(
        self,
        user_id: str,
        context: np.ndarray | None,
        candidates: Sequence[str],
        rng: np.random.Generator,
    ) -> str:
        ...

    def update(
        self,
        user_id: str,
        context: np.ndarray | None,
        exercise_id: str,
        reward: float,
    ) -> None:
        pass

    def flush(self) -> None:
        pass

    def snapshot(self) -> dict:
        """JSON-serializable view of the policy state."""
        return {}

    @staticmethod
    def _check_candidates(candidates: Sequence[str]) -> None:
        if len(candidates) == 0:
            raise ValueError("select called with an empty candidate set")


def argmax_first(scores: np.ndarray) -> int:
    """Index of the maximum, first occurrence on ties."""
    return int(np.argmax(scores))


# ---------------------------------------------------------------------------
# Thompson Sampling with a Normal-Inverse-Gamma state per exercise
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NigArmState:
    """Conjugate state (m, nu, alpha, beta) for a Gaussian reward with unknown
    mean and variance."""

    m: float
    nu: float
    alpha: float
    beta: float

    def __post_init__(self) -> None:
        if self.nu <= 0 or self.alpha <= 0 or self.beta <= 0:
            raise ValueError(f"nu, alpha, beta must be positive: {self}")

    def updated(self, reward: float) -> "NigArmState":
        """Absorb one observation; the state stays in-family."""
        nu_next = self.nu + 1.0
        return NigArmState(
            m=(self.nu * self.m + reward) / nu_next,
            nu=nu_next,
            alpha=self.alpha + 0.5,
            beta=self.beta + self.nu * (reward - self.m) ** 2 / (2.0 * nu_next),
        )

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.m, self.nu, self.alpha, self.beta)


def sample_inverse_gamma(
    alpha: float | np.ndarray,
    beta: float | np.ndarray,
    rng: np.random.Generator,
    size: int | tuple | None = None,
) -> np.ndarray:
    """Inverse-Gamma(shape, scale) draws with mean beta / (alpha - 1) for
    alpha > 1, via the reciprocal of a Gamma variate."""
    return 1.0 / rng.gamma(shape=alpha, scale=1.0 / np.asarray(beta, dtype=float), size=size)


class ThompsonSampling(Policy):
    """Per-exercise posterior sampling: draw a variance, then a mean, play the
    argmax. Arms not seen before start from the configured prior."""

    uses_warm_start = True

    def __init__(
        self,
        m0: float = DEFAULT_NIG_PRIOR[0],
        nu0: float = DEFAULT_NIG_PRIOR[1],
        alpha0: float = DEFAULT_NIG_PRIOR[2],
        beta0: float = DEFAULT_NIG_PRIOR[3],
    ) -> None:
        self._prior = NigArmState(m=m0, nu=nu0, alpha=alpha0, beta=beta0)
        self._arms: dict[str, NigArmState] = {}

    @property
    def prior(self) -> NigArmState:
        return self._prior

    def arm(self, exercise_id: str) -> NigArmState:
        return self._arms.get(exercise_id, self._prior)

    def select(
        self,
        user_id: str,
        context: np.ndarray | None,
        candidates: Sequence[str],
        rng: np.random.Generator,
    ) -> str:
        self._check_candidates(candidates)
        states = [self.arm(c) for c in candidates]
        alphas = np.array([s.alpha for s in states])
        betas = np.array([s.beta for s in states])
        nus = np.array([s.nu for s in states])
        ms = np.array([s.m for s in states])
        variances = sample_inverse_gamma(alphas, betas, rng)
        means = rng.normal(ms, np.sqrt(variances / nus))
        return candidates[argmax_first(means)]

    def update(
        self,
        user_id: str,
        context: np.ndarray | None,
        exercise_id: str,
        reward: float,
    ) -> None:
        self._arms[exercise_id] = self.arm(exercise_id).updated(reward)

    def snapshot(self) -> dict:
        return {
            "kind": "ts",
            "prior": list(self._prior.as_tuple()),
            "arms": {e: list(s.as_tuple()) for e, s in self._arms.items()},
        }


# ---------------------------------------------------------------------------
# Linear Thompson Sampling
# ---------------------------------------------------------------------------


class LinArmState:
    """Per-exercise ridge accumulator with cached posterior quantities.

    ``precision`` and ``target`` are always current; ``omega``, ``cov`` (the
    inverse of ``precision``) and its Cholesky factor are refreshed only on
    the policy's refresh schedule or on flush, so selections in between use a
    deliberately stale posterior.
    """

    __slots__ = ("precision", "target", "omega", "cov", "chol", "staleness")

    def __init__(self, dim: int, regularization: float) -> None:
        self.precision = regularization * np.eye(dim)
        self.target = np.zeros(dim)
        self.omega = np.zeros(dim)
        self.cov = np.eye(dim) / regularization
        self.chol = np.eye(dim) / np.sqrt(regularization)
        self.staleness = 0


class LinearThompsonSampling(Policy):
    """Contextual bandit with one linear reward model per exercise.

    Selection samples a parameter vector per candidate from a Gaussian
    centered on the ridge solution with covariance ``v**2 * cov`` (via the
    cached Cholesky factor) and plays the argmax of the predicted rewards.
    """

    uses_warm_start = True

    def __init__(
        self,
        dim: int,
        v: float = 0.05,
        regularization: float = 1.0,
        refresh_interval: int = DEFAULT_REFRESH_INTERVAL,
    ) -> None:
        if dim <= 0:
            raise ValueError("dim must be positive")
        if v <= 0:
            raise ValueError("exploration scale v must be positive")
        if regularization <= 0:
            raise ValueError("regularization must be positive")
        if refresh_interval < 1:
            raise ValueError("refresh_interval must be at least 1")
        self._dim = dim
        self._v = v
        self._regularization = regularization
        self._refresh_interval = refresh_interval
        self._arms: dict[str, LinArmState] = {}
        self._updates_since_refresh = 0

    @property
    def dim(self) -> int:
        return self._dim

    def arm(self, exercise_id: str) -> LinArmState:
        state = self._arms.get(exercise_id)
        if state is None:
            state = LinArmState(self._dim, self._regularization)
            self._arms[exercise_id] = state
        return state

    def _as_context(self, context: np.ndarray | None) -> np.ndarray:
        if context is None:
            raise ValueError("a context vector is required")
        x = np.asarray(context, dtype=float)
        if x.shape != (self._dim,):
            raise ValueError(f"context has shape {x.shape}, expected ({self._dim},)")
        return x

    def select(
        self,
        user_id: str,
        context: np.ndarray | None,
        candidates: Sequence[str],
        rng: np.random.Generator,
    ) -> str:
        self._check_candidates(candidates)
        x = self._as_context(context)
        states = [self.arm(c) for c in candidates]
        omegas = np.stack([s.omega for s in states])
        chols = np.stack([s.chol for s in states])
        noise = rng.standard_normal((len(states), self._dim))
        thetas = omegas + self._v * np.einsum("kij,kj->ki", chols, noise)
        return candidates[argmax_first(thetas @ x)]

    def update(
        self,
        user_id: str,
        context: np.ndarray | None,
        exercise_id: str,
        reward: float,
    ) -> None:
        x = self._as_context(context)
        state = self.arm(exercise_id)
        state.precision += np.outer(x, x)
        state.target += reward * x
        state.staleness += 1
        self._updates_since_refresh += 1
        if self._updates_since_refresh >= self._refresh_interval:
            self.flush()

    def flush(self) -> None:
        for exercise_id, state in self._arms.items():
            if state.staleness > 0:
                self._refresh(exercise_id, state)
        self._updates_since_refresh = 0

    def _refresh(self, exercise_id: str, state: LinArmState) -> None:
        state.cov = np.linalg.inv(state.precision)
        state.omega = state.cov @ state.target
        try:
            state.chol = np.linalg.cholesky(state.cov)
        except np.linalg.LinAlgError:
            # Rank-one updates keep the precision matrix positive definite in
            # exact arithmetic; one jitter attempt guards round-off.
            try:
                state.chol = np.linalg.cholesky(
                    state.cov + 1e-10 * np.eye(self._dim)
                )
            except np.linalg.LinAlgError:
                raise RuntimeError(
                    f"posterior covariance for exercise {exercise_id!r} is not "
                    "positive definite"
                ) from None
        state.staleness = 0

    def snapshot(self) -> dict:
        def digest(array: np.ndarray) -> str:
            return hashlib.sha256(np.ascontiguousarray(array).tobytes()).hexdigest()

        return {
            "kind": "lints",
            "dim": self._dim,
            "v": self._v,
            "regularization": self._regularization,
            "refresh_interval": self._refresh_interval,
            "arms": {
                e: {
                    "omega": [float(w) for w in s.omega],
                    "precision_digest": digest(s.precision),
                    "target_digest": digest(s.target),
                    "staleness": s.staleness,
                }
                for e, s in self._arms.items()
            },
        }


# ---------------------------------------------------------------------------
# Collaborative filtering
# ---------------------------------------------------------------------------


def cosine_sim(x: np.ndarray, y: np.ndarray) -> float:
    """Cosine similarity; 0 whenever either vector has zero norm."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    norm = np.linalg.norm(x) * np.linalg.norm(y)
    if norm == 0.0:
        return 0.0
    return float(np.dot(x, y) / norm)


def _similarity_weighted(sims: np.ndarray, values: np.ndarray, fallback: float) -> float:
    denominator = float(np.sum(np.abs(sims)))
    if denominator == 0.0:
        return fallback
    return float(np.dot(sims, values) / denominator)


def _row_similarities(matrix: np.ndarray, index: int) -> np.ndarray:
    """Cosine similarity of one row against every row, zero-norm rows give 0."""
    norms = np.linalg.norm(matrix, axis=1)
    anchor = norms[index]
    if anchor == 0.0:
        return np.zeros(matrix.shape[0])
    with np.errstate(invalid="ignore", divide="ignore"):
        sims = (matrix @ matrix[index]) / (norms * anchor)
    sims[norms == 0.0] = 0.0
    return sims


def usercf_predict(matrix: RewardMatrix, user_id: str, exercise_id: str) -> float:
    """Similarity-weighted average of other users' rewards on the exercise.

    Users without a recorded reward on the exercise contribute zero to the
    numerator; a zero denominator falls back to the global mean reward.
    """
    if not matrix.has_user(user_id):
        raise ValueError(f"unknown user {user_id!r}")
    dense, users, exercises = matrix.dense()
    u = users.index(user_id)
    sims = _row_similarities(dense, u)
    sims[u] = 0.0
    column = (
        dense[:, exercises.index(exercise_id)]
        if exercise_id in set(exercises)
        else np.zeros(len(users))
    )
    return _similarity_weighted(sims, column, matrix.global_mean())


def itemcf_predict(matrix: RewardMatrix, user_id: str, exercise_id: str) -> float:
    """Similarity-weighted average of the user's own rewards on other
    exercises, weighted by exercise-column cosine similarity."""
    if not matrix.has_exercise(exercise_id):
        raise ValueError(f"unknown exercise {exercise_id!r}")
    dense, users, exercises = matrix.dense()
    a = exercises.index(exercise_id)
    sims = _row_similarities(dense.T, a)
    sims[a] = 0.0
    row = (
        dense[users.index(user_id), :]
        if user_id in set(users)
        else np.zeros(len(exercises))
    )
    return _similarity_weighted(sims, row, matrix.global_mean())


class _NeighborhoodCF(Policy):
    """Shared machinery for the CF baselines: a reward matrix fed by buffered
    updates applied every ``batch_size`` observations or on flush. Duplicate
    (user, exercise) pairs within one buffer resolve last-write-wins."""

    uses_warm_start = False

    def __init__(self, batch_size: int = DEFAULT_CF_BATCH_SIZE) -> None:
        if batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        self._batch_size = batch_size
        self._matrix = RewardMatrix()
        self._pending: list[tuple[str, str, float]] = []

    @property
    def matrix(self) -> RewardMatrix:
        return self._matrix

    @property
    def pending_count(self) -> int:
        return len(self._pending)

    def update(
        self,
        user_id: str,
        context: np.ndarray | None,
        exercise_id: str,
        reward: float,
    ) -> None:
        self._pending.append((user_id, exercise_id, reward))
        if len(self._pending) >= self._batch_size:
            self.flush()

    def flush(self) -> None:
        for user_id, exercise_id, reward in self._pending:
            self._matrix.set(user_id, exercise_id, reward)
        self._pending.clear()

    def select(
        self,
        user_id: str,
        context: np.ndarray | None,
        candidates: Sequence[str],
        rng: np.random.Generator,
    ) -> str:
        self._check_candidates(candidates)
        scores = self._predict_candidates(user_id, list(candidates))
        return candidates[argmax_first(scores)]

    def _predict_candidates(self, user_id: str, candidates: list[str]) -> np.ndarray:
        raise NotImplementedError

    def snapshot(self) -> dict:
        return {
            "kind": self._kind(),
            "batch_size": self._batch_size,
            "entries": {
                f"{u}/{e}": r for u, e, r in self._matrix.entries()
            },
            "pending": [[u, e, r] for u, e, r in self._pending],
        }

    def _kind(self) -> str:
        raise NotImplementedError


class UserBasedCF(_NeighborhoodCF):
    """Predict a candidate's reward from similar users' rewards on it."""

    def _predict_candidates(self, user_id: str, candidates: list[str]) -> np.ndarray:
        fallback = self._matrix.global_mean()
        if not self._matrix.has_user(user_id):
            return np.full(len(candidates), fallback)
        dense, users, exercises = self._matrix.dense()
        u = users.index(user_id)
        sims = _row_similarities(dense, u)
        sims[u] = 0.0
        exercise_index = {e: j for j, e in enumerate(exercises)}
        scores = np.empty(len(candidates))
        for k, exercise_id in enumerate(candidates):
            j = exercise_index.get(exercise_id)
            column = dense[:, j] if j is not None else np.zeros(len(users))
            scores[k] = _similarity_weighted(sims, column, fallback)
        return scores

    def _kind(self) -> str:
        return "usercf"


class ItemBasedCF(_NeighborhoodCF):
    """Predict a candidate's reward from the user's rewards on similar
    exercises."""

    def _predict_candidates(self, user_id: str, candidates: list[str]) -> np.ndarray:
        fallback = self._matrix.global_mean()
        dense, users, exercises = self._matrix.dense()
        if user_id in set(users):
            row = dense[users.index(user_id), :]
        else:
            row = np.zeros(len(exercises))
        exercise_index = {e: j for j, e in enumerate(exercises)}
        scores = np.empty(len(candidates))
        for k, exercise_id in enumerate(candidates):
            a = exercise_index.get(exercise_id)
            if a is None:
                scores[k] = fallback
                continue
            sims = _row_similarities(dense.T, a)
            sims[a] = 0.0
            scores[k] = _similarity_weighted(sims, row, fallback)
        return scores

    def _kind(self) -> str:
        return "itemcf"


class UniformRandom(Policy):
    """Uniform choice over the candidates; learns nothing."""

    def select(
        self,
        user_id: str,
        context: np.ndarray | None,
        candidates: Sequence[str],
        rng: np.random.Generator,
    ) -> str:
        self._check_candidates(candidates)
        return candidates[int(rng.integers(len(candidates)))]

    def snapshot(self) -> dict:
        return {"kind": "random"}


POLICY_KINDS = ("ts", "lints", "usercf", "itemcf", "random")


def make_policy(kind: str, params: Mapping | None = None, dim: int | None = None) -> Policy:
    """Instantiate a policy by kind name with keyword parameters."""
    params = dict(params or {})
    if kind == "ts":
        return ThompsonSampling(**params)
    if kind == "lints":
        if "dim" not in params:
            if dim is None:
                raise ValueError("lints requires the context dimension")
            params["dim"] = dim
        return LinearThompsonSampling(**params)
    if kind == "usercf":
        return UserBasedCF(**params)
    if kind == "itemcf":
        return ItemBasedCF(**params)
    if kind == "random":
        return UniformRandom(**params)
    raise ValueError(f"unknown policy kind {kind!r}; expected one of {POLICY_KINDS}")
