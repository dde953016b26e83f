"""Offline replay evaluation over logged interactions.

The evaluator streams a split's events in global chronological order. Each
event opens one decision round for that event's learner: the policy picks
among the learner's still-available logged exercises, the logged skill-gain
reward for the chosen exercise is revealed, and (unless frozen) the policy
updates. An exercise leaves a learner's candidate pool once it has been
recommended in this replay or once its own logged event has streamed past,
so every possible choice has an observable reward and policies are scored on
how well they prioritize high-gain exercises before the opportunity passes.
Rounds whose candidate pool is empty are skipped and logged, not counted.
"""

from __future__ import annotations

import csv
import hashlib
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .policies import Policy
from .types import Interaction, chronological


class ReplayInvariantError(RuntimeError):
    """An internal replay guarantee was violated; aborting with diagnostics."""


@dataclass
class ReplayConfig:
    """Settings for one replay run.

    ``warm_start_rounds`` counted rounds at the start are chosen uniformly at
    random instead of by the policy, for policies that opt into a warm-start
    phase (the Thompson samplers). With ``freeze`` set, the policy is neither
    updated nor flushed, so its state is untouched by the run.
    """

    seed: int = 0
    warm_start_rounds: int = 1000
    freeze: bool = False


@dataclass(frozen=True)
class RoundRecord:
    round: int
    user_id: str
    exercise_id: str
    reward: float
    cum_avg: float


@dataclass
class ReplayTrace:
    """Per-round decisions plus selection counts and skipped-round log."""

    records: list[RoundRecord] = field(default_factory=list)
    action_counts: Counter = field(default_factory=Counter)
    skipped: list[tuple[int, str]] = field(default_factory=list)

    @property
    def rounds(self) -> int:
        return len(self.records)

    @property
    def skipped_rounds(self) -> int:
        return len(self.skipped)

    @property
    def final_average(self) -> float:
        return self.records[-1].cum_avg if self.records else 0.0

    @property
    def mean_reward(self) -> float:
        """Mean instantaneous reward over counted rounds."""
        return self.final_average

    def rewards(self) -> np.ndarray:
        return np.array([r.reward for r in self.records])


def reward_lookup(split: Sequence[Interaction]) -> dict[str, dict[str, float]]:
    """Per-user map from exercise to its logged reward in the split."""
    lookup: dict[str, dict[str, float]] = {}
    for interaction in split:
        lookup.setdefault(interaction.user_id, {})[interaction.exercise_id] = (
            interaction.reward
        )
    return lookup


def build_candidates(
    lookup: Mapping[str, Mapping[str, float]],
    user_id: str,
    already_recommended: set[str],
    attempted: set[str] = frozenset(),  # type: ignore[assignment]
) -> list[str]:
    """Exercises with a logged reward for the user, minus those already
    recommended in this replay and those whose logged attempt has already
    streamed past. Sorted, so index order is deterministic."""
    logged = lookup[user_id]
    return sorted(
        e for e in logged if e not in already_recommended and e not in attempted
    )


def policy_digest(policy: Policy) -> str:
    """Stable digest of a policy snapshot, for freeze checks."""
    payload = json.dumps(policy.snapshot(), sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()


def replay(
    policy: Policy,
    split: Sequence[Interaction],
    contexts: Mapping[str, np.ndarray] | None,
    config: ReplayConfig,
) -> ReplayTrace:
    """Run one replay and return its trace.

    Identical (policy state, split, contexts, config) inputs produce an
    identical trace. Every recommended exercise is checked to be a candidate
    with an observable reward; a miss aborts with diagnostics.
    """
    events = chronological(split)
    lookup = reward_lookup(events)
    recommended: dict[str, set[str]] = {u: set() for u in lookup}
    attempted: dict[str, set[str]] = {u: set() for u in lookup}
    rng = np.random.default_rng(config.seed)
    trace = ReplayTrace()
    total = 0.0

    for position, event in enumerate(events):
        user_id = event.user_id
        candidates = build_candidates(
            lookup, user_id, recommended[user_id], attempted[user_id]
        )
        if not candidates:
            trace.skipped.append((position, user_id))
            attempted[user_id].add(event.exercise_id)
            continue
        context = contexts.get(user_id) if contexts is not None else None
        if policy.uses_warm_start and trace.rounds < config.warm_start_rounds:
            choice = candidates[int(rng.integers(len(candidates)))]
        else:
            choice = policy.select(user_id, context, candidates, rng)
        if choice not in lookup[user_id]:
            raise ReplayInvariantError(
                f"round {trace.rounds}: policy chose {choice!r} with no logged "
                f"reward for user {user_id!r}"
            )
        if choice in recommended[user_id]:
            raise ReplayInvariantError(
                f"round {trace.rounds}: exercise {choice!r} recommended twice "
                f"for user {user_id!r}"
            )
        reward = lookup[user_id][choice]
        if not config.freeze:
            policy.update(user_id, context, choice, reward)
        recommended[user_id].add(choice)
        attempted[user_id].add(event.exercise_id)
        total += reward
        trace.records.append(
            RoundRecord(
                round=trace.rounds + 1,
                user_id=user_id,
                exercise_id=choice,
                reward=reward,
                cum_avg=total / (trace.rounds + 1),
            )
        )
        trace.action_counts[choice] += 1
    if not config.freeze:
        policy.flush()
    return trace


def pretrain(
    policy: Policy,
    splits: Sequence[Sequence[Interaction]],
    contexts: Mapping[str, np.ndarray] | None,
    config: ReplayConfig,
) -> Policy:
    """Run the replay loop with learning enabled over each split in order.

    Running the splits one after another equals running their chronological
    concatenation: each split scopes its own candidate pools.
    """
    learning = ReplayConfig(
        seed=config.seed,
        warm_start_rounds=config.warm_start_rounds,
        freeze=False,
    )
    for split in splits:
        replay(policy, split, contexts, learning)
    return policy


# ---------------------------------------------------------------------------
# Metric emission
# ---------------------------------------------------------------------------

DEFAULT_WINDOW = 10_000


def emit_metrics(
    trace: ReplayTrace,
    out_dir: str | Path,
    window: int = DEFAULT_WINDOW,
) -> dict[str, Path]:
    """Write trace.csv, action_freq.json, and windows.json under ``out_dir``.

    The windowed counts cover the first and last ``window`` rounds, clamped
    to the trace length. Output bytes are a pure function of the trace.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "trace": out / "trace.csv",
        "action_freq": out / "action_freq.json",
        "windows": out / "windows.json",
    }
    with open(paths["trace"], "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["round", "reward", "cum_avg"])
        for record in trace.records:
            writer.writerow([record.round, repr(record.reward), repr(record.cum_avg)])
    with open(paths["action_freq"], "w", encoding="utf-8") as handle:
        json.dump(dict(sorted(trace.action_counts.items())), handle, indent=2)
    effective = min(window, trace.rounds)
    first = Counter(r.exercise_id for r in trace.records[:effective])
    last = Counter(r.exercise_id for r in trace.records[-effective:] if effective)
    with open(paths["windows"], "w", encoding="utf-8") as handle:
        json.dump(
            {
                "window": window,
                "effective_window": effective,
                "first": dict(sorted(first.items())),
                "last": dict(sorted(last.items())),
            },
            handle,
            indent=2,
        )
    return paths


def trace_summary(trace: ReplayTrace) -> dict:
    return {
        "final_cumulative_average_reward": trace.final_average,
        "rounds": trace.rounds,
        "skipped_rounds": trace.skipped_rounds,
    }
