"""Hyperparameter grid search and the final retrain-and-test run.

Each configuration is scored by pretraining on the training split, replaying
the validation split with updates enabled, and averaging the mean
instantaneous validation reward over the given seeds. The winner (earliest
grid entry on ties) is then retrained on train plus validation and replayed
once, frozen, on the test split. The CF baselines have no hyperparameters
and bypass tuning entirely.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .policies import Policy, make_policy
from .preprocess import ConfigurationError, ExperimentData
from .replay import ReplayConfig, ReplayTrace, pretrain, replay
from .seeding import child_seed

TS_GRID = {
    "m0": [0.0],
    "nu0": [0.01, 0.1, 0.5, 1.0, 5.0],
    "alpha0": [0.1, 1.0, 2.0],
    "beta0": [0.1, 1.0, 2.0],
}

LINTS_GRID = {"v": [0.001, 0.01, 0.05, 0.1, 0.25, 0.5, 1.0, 2.0, 5.0]}

DEFAULT_GRIDS: dict[str, dict[str, list[float]]] = {"ts": TS_GRID, "lints": LINTS_GRID}

TUNABLE_KINDS = ("ts", "lints")

DEFAULT_TUNE_SEEDS = (0, 1, 2)


def enumerate_grid(grid: Mapping[str, Sequence[float]]) -> list[dict[str, float]]:
    """Cartesian product in the grid's key order, each combination once."""
    if not grid or any(len(v) == 0 for v in grid.values()):
        raise ConfigurationError("hyperparameter grid must be non-empty")
    names = list(grid)
    return [
        dict(zip(names, combo))
        for combo in itertools.product(*(grid[name] for name in names))
    ]


@dataclass
class TuneResult:
    policy_kind: str
    seeds: list[int]
    entries: list[dict] = field(default_factory=list)

    @property
    def best_index(self) -> int:
        scores = [entry["score"] for entry in self.entries]
        return int(np.argmax(scores))

    @property
    def best_params(self) -> dict[str, float]:
        return dict(self.entries[self.best_index]["params"])

    @property
    def best_score(self) -> float:
        return float(self.entries[self.best_index]["score"])

    def to_dict(self) -> dict:
        return {
            "policy": self.policy_kind,
            "seeds": self.seeds,
            "configurations": self.entries,
            "best_index": self.best_index,
            "best_params": self.best_params,
            "best_score": self.best_score,
        }


def _fresh_policy(kind: str, params: Mapping[str, float], data: ExperimentData) -> Policy:
    return make_policy(kind, params, dim=data.encoder.dim)


def grid_search(
    policy_kind: str,
    grid: Mapping[str, Sequence[float]],
    data: ExperimentData,
    seeds: Sequence[int] = DEFAULT_TUNE_SEEDS,
    warm_start_rounds: int = 1000,
) -> TuneResult:
    """Score every configuration and return all scores plus the winner."""
    if policy_kind not in TUNABLE_KINDS:
        raise ConfigurationError(
            f"policy {policy_kind!r} has no hyperparameter grid; only "
            f"{TUNABLE_KINDS} are tuned"
        )
    if not seeds:
        raise ConfigurationError("at least one seed is required")
    configurations = enumerate_grid(grid)
    contexts = data.contexts()
    result = TuneResult(policy_kind=policy_kind, seeds=list(seeds))
    for index, params in enumerate(configurations):
        per_seed: list[float] = []
        for seed in seeds:
            policy = _fresh_policy(policy_kind, params, data)
            pretrain(
                policy,
                [data.split.train],
                contexts,
                ReplayConfig(
                    seed=child_seed(seed, "tune", policy_kind, index, "pretrain"),
                    warm_start_rounds=warm_start_rounds,
                ),
            )
            trace = replay(
                policy,
                data.split.validation,
                contexts,
                ReplayConfig(
                    seed=child_seed(seed, "tune", policy_kind, index, "validation"),
                    warm_start_rounds=warm_start_rounds,
                    freeze=False,
                ),
            )
            per_seed.append(trace.mean_reward)
        result.entries.append(
            {
                "params": dict(params),
                "score": float(np.mean(per_seed)),
                "per_seed": per_seed,
            }
        )
    return result


def final_run(
    policy_kind: str,
    params: Mapping[str, float],
    data: ExperimentData,
    seed: int = 0,
    warm_start_rounds: int = 1000,
    test_warm_start_rounds: int = 0,
    freeze: bool = True,
) -> tuple[Policy, ReplayTrace]:
    """Retrain a fresh policy on train plus validation, then replay the test
    split (frozen by default, with no random warm-start phase)."""
    contexts = data.contexts()
    policy = _fresh_policy(policy_kind, params, data)
    pretrain(
        policy,
        [data.split.train, data.split.validation],
        contexts,
        ReplayConfig(
            seed=child_seed(seed, "final", policy_kind, "pretrain"),
            warm_start_rounds=warm_start_rounds,
        ),
    )
    trace = replay(
        policy,
        data.split.test,
        contexts,
        ReplayConfig(
            seed=child_seed(seed, "final", policy_kind, "test"),
            warm_start_rounds=test_warm_start_rounds,
            freeze=freeze,
        ),
    )
    return policy, trace
