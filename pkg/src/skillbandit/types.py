"""Core domain types and the canonical file formats shared by every module.

All record types are immutable after construction and safe to share across
threads. Identifiers are opaque strings; components that need contiguous
integer indices (the reward matrix, trace reports) build them by sorting the
identifier universe, so "smallest exercise index" always means the
lexicographically smallest identifier.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

INTERACTION_COLUMNS = (
    "user_id",
    "exercise_id",
    "skill_id",
    "timestamp",
    "correct",
    "mastery_before",
    "mastery_after",
)

CATEGORICAL_FEATURES = ("academic_year", "school", "gender")

CONTINUOUS_FEATURES = (
    "avg_knowledge_mastery",
    "overall_correctness",
    "mcas_score",
    "confusion",
    "frustration",
    "boredom",
    "engaged_concentration",
    "carelessness",
    "gaming",
    "off_task",
)

PROFILE_COLUMNS = ("user_id",) + CATEGORICAL_FEATURES + CONTINUOUS_FEATURES

# Probability-like profile fields; mcas_score is an unbounded test score.
_UNIT_INTERVAL_FEATURES = tuple(f for f in CONTINUOUS_FEATURES if f != "mcas_score")

_TRUE_STRINGS = {"1", "true", "t", "yes"}
_FALSE_STRINGS = {"0", "false", "f", "no"}


def parse_timestamp(raw: str | int | float) -> float:
    """Parse an integer epoch value or an ISO-8601 string to epoch seconds.

    Naive ISO timestamps are interpreted as UTC so results do not depend on
    the local timezone.
    """
    if isinstance(raw, (int, float)):
        return float(raw)
    text = raw.strip()
    try:
        return float(int(text))
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


def parse_bool(raw: str | bool) -> bool:
    if isinstance(raw, bool):
        return raw
    text = raw.strip().lower()
    if text in _TRUE_STRINGS:
        return True
    if text in _FALSE_STRINGS:
        return False
    raise ValueError(f"cannot parse boolean field {raw!r}")


def format_number(value: float) -> str:
    """Shortest exact decimal form; integral values render without a fraction."""
    if float(value) == int(value):
        return str(int(value))
    return repr(float(value))


@dataclass(frozen=True)
class Interaction:
    """One logged learner-exercise event with mastery estimates around it.

    ``row`` is the position of the record in its source file and breaks
    timestamp ties, so ``(user_id, timestamp, row)`` is a total order.
    """

    user_id: str
    exercise_id: str
    skill_id: str
    timestamp: float
    correct: bool
    mastery_before: float
    mastery_after: float
    row: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.mastery_before <= 1.0:
            raise ValueError(f"mastery_before {self.mastery_before} outside [0, 1]")
        if not 0.0 <= self.mastery_after <= 1.0:
            raise ValueError(f"mastery_after {self.mastery_after} outside [0, 1]")

    @property
    def reward(self) -> float:
        """Skill gain: the change in estimated mastery across the event."""
        return self.mastery_after - self.mastery_before

    def sort_key(self) -> tuple[float, int]:
        return (self.timestamp, self.row)


def chronological(interactions: Iterable[Interaction]) -> list[Interaction]:
    """Global chronological order with row-order tie-breaking."""
    return sorted(interactions, key=Interaction.sort_key)


@dataclass(frozen=True)
class LearnerProfile:
    """Static per-learner features used to build context vectors."""

    user_id: str
    academic_year: str
    school: str
    gender: str
    avg_knowledge_mastery: float
    overall_correctness: float
    mcas_score: float
    confusion: float
    frustration: float
    boredom: float
    engaged_concentration: float
    carelessness: float
    gaming: float
    off_task: float

    def __post_init__(self) -> None:
        for name in _UNIT_INTERVAL_FEATURES:
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} {value} outside [0, 1]")

    def categorical(self, name: str) -> str:
        return getattr(self, name)

    def continuous(self, name: str) -> float:
        return getattr(self, name)


@dataclass(frozen=True)
class SplitDataset:
    """Per-user chronological train/validation/test partition."""

    train: tuple[Interaction, ...]
    validation: tuple[Interaction, ...]
    test: tuple[Interaction, ...]
    fractions: tuple[float, float, float] = (0.70, 0.15, 0.15)

    def part(self, name: str) -> tuple[Interaction, ...]:
        if name not in ("train", "validation", "test"):
            raise KeyError(f"unknown split {name!r}")
        return getattr(self, name)

    def all_interactions(self) -> list[Interaction]:
        return list(self.train) + list(self.validation) + list(self.test)

    def users(self, part: str = "train") -> set[str]:
        return {i.user_id for i in self.part(part)}

    def exercises(self, part: str = "train") -> set[str]:
        return {i.exercise_id for i in self.part(part)}

    def is_warm_start(self) -> bool:
        """True when every held-out user and exercise also appears in train."""
        train_users = self.users("train")
        train_exercises = self.exercises("train")
        held_out = list(self.validation) + list(self.test)
        return all(
            i.user_id in train_users and i.exercise_id in train_exercises
            for i in held_out
        )


class RewardMatrix:
    """Sparse user x exercise table of strictly positive skill-gain rewards.

    Missing entries are implicit zeros for similarity computations. A dense
    snapshot (rows and columns in sorted identifier order) is cached and
    rebuilt lazily after writes.
    """

    def __init__(self) -> None:
        self._rows: dict[str, dict[str, float]] = {}
        self._exercises: set[str] = set()
        self._version = 0
        self._dense_version = -1
        self._dense: np.ndarray | None = None
        self._user_order: list[str] = []
        self._exercise_order: list[str] = []

    def set(self, user_id: str, exercise_id: str, reward: float) -> None:
        if not reward > 0.0:
            raise ValueError(f"reward must be strictly positive, got {reward}")
        self._rows.setdefault(user_id, {})[exercise_id] = float(reward)
        self._exercises.add(exercise_id)
        self._version += 1

    def get(self, user_id: str, exercise_id: str) -> float | None:
        return self._rows.get(user_id, {}).get(exercise_id)

    def has_user(self, user_id: str) -> bool:
        return user_id in self._rows

    def has_exercise(self, exercise_id: str) -> bool:
        return exercise_id in self._exercises

    def users(self) -> list[str]:
        return sorted(self._rows)

    def exercises(self) -> list[str]:
        return sorted(self._exercises)

    def __len__(self) -> int:
        return sum(len(r) for r in self._rows.values())

    def entries(self) -> Iterator[tuple[str, str, float]]:
        for user_id in sorted(self._rows):
            row = self._rows[user_id]
            for exercise_id in sorted(row):
                yield user_id, exercise_id, row[exercise_id]

    def global_mean(self) -> float:
        total = 0.0
        count = 0
        for row in self._rows.values():
            total += sum(row.values())
            count += len(row)
        return total / count if count else 0.0

    def dense(self) -> tuple[np.ndarray, list[str], list[str]]:
        """Dense matrix plus the row/column identifier orders (both sorted)."""
        if self._dense_version != self._version:
            self._user_order = sorted(self._rows)
            self._exercise_order = sorted(self._exercises)
            exercise_index = {e: j for j, e in enumerate(self._exercise_order)}
            matrix = np.zeros((len(self._user_order), len(self._exercise_order)))
            for i, user_id in enumerate(self._user_order):
                for exercise_id, reward in self._rows[user_id].items():
                    matrix[i, exercise_index[exercise_id]] = reward
            self._dense = matrix
            self._dense_version = self._version
        assert self._dense is not None
        return self._dense, self._user_order, self._exercise_order


# ---------------------------------------------------------------------------
# Canonical CSV formats
# ---------------------------------------------------------------------------


def read_interaction_rows(path: str | Path) -> list[dict[str, str]]:
    """Read the canonical interaction CSV as raw string rows.

    Rows keep their file position under the ``_row`` key; parsing and
    validation happen downstream so malformed records can be counted rather
    than aborting ingestion.
    """
    rows: list[dict[str, str]] = []
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        missing = set(INTERACTION_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing interaction columns {sorted(missing)}")
        for position, row in enumerate(reader):
            row["_row"] = str(position)
            rows.append(row)
    return rows


def interaction_to_row(interaction: Interaction) -> dict[str, str]:
    return {
        "user_id": interaction.user_id,
        "exercise_id": interaction.exercise_id,
        "skill_id": interaction.skill_id,
        "timestamp": format_number(interaction.timestamp),
        "correct": "1" if interaction.correct else "0",
        "mastery_before": repr(interaction.mastery_before),
        "mastery_after": repr(interaction.mastery_after),
    }


def write_interactions_csv(path: str | Path, interactions: Iterable[Interaction]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=INTERACTION_COLUMNS)
        writer.writeheader()
        for interaction in interactions:
            writer.writerow(interaction_to_row(interaction))


def read_interactions_csv(path: str | Path) -> list[Interaction]:
    """Read a canonical interaction file that is known to be well formed."""
    interactions = []
    for row in read_interaction_rows(path):
        interactions.append(
            Interaction(
                user_id=row["user_id"],
                exercise_id=row["exercise_id"],
                skill_id=row["skill_id"],
                timestamp=parse_timestamp(row["timestamp"]),
                correct=parse_bool(row["correct"]),
                mastery_before=float(row["mastery_before"]),
                mastery_after=float(row["mastery_after"]),
                row=int(row["_row"]),
            )
        )
    return interactions


def write_profiles_csv(path: str | Path, profiles: Iterable[LearnerProfile]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=PROFILE_COLUMNS)
        writer.writeheader()
        for profile in profiles:
            row = {"user_id": profile.user_id}
            for name in CATEGORICAL_FEATURES:
                row[name] = profile.categorical(name)
            for name in CONTINUOUS_FEATURES:
                row[name] = repr(profile.continuous(name))
            writer.writerow(row)


def read_profiles_csv(path: str | Path) -> dict[str, LearnerProfile]:
    profiles: dict[str, LearnerProfile] = {}
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        missing = set(PROFILE_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing profile columns {sorted(missing)}")
        for row in reader:
            kwargs: dict[str, object] = {"user_id": row["user_id"]}
            for name in CATEGORICAL_FEATURES:
                kwargs[name] = row[name]
            for name in CONTINUOUS_FEATURES:
                kwargs[name] = float(row[name])
            profile = LearnerProfile(**kwargs)  # type: ignore[arg-type]
            profiles[profile.user_id] = profile
    return profiles
