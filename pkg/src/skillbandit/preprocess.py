"""Ingestion pipeline: reward filtering, dedup, activity threshold, temporal
split, warm-start enforcement, and context-vector encoding.

Every stage is a pure function over immutable inputs. The pipeline is
idempotent: feeding its own output back through any stage changes nothing.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .types import (
    CATEGORICAL_FEATURES,
    CONTINUOUS_FEATURES,
    Interaction,
    LearnerProfile,
    SplitDataset,
    chronological,
    parse_bool,
    parse_timestamp,
    read_interactions_csv,
    read_profiles_csv,
    write_interactions_csv,
    write_profiles_csv,
)

DEFAULT_MIN_INTERACTIONS = 50
DEFAULT_FRACTIONS = (0.70, 0.15, 0.15)

_MAX_REPORTED_ERRORS = 100


class ConfigurationError(ValueError):
    """Raised for invalid pipeline or experiment configuration."""


@dataclass
class PreprocessReport:
    """Per-stage drop accounting plus final dataset statistics."""

    stages: list[dict[str, int | str]] = field(default_factory=list)
    errors: list[str] = field(default_factory=list)
    error_count: int = 0
    final_users: int = 0
    final_exercises: int = 0
    final_interactions: int = 0
    final_skills: int = 0

    def add_stage(self, name: str, input_count: int, dropped: int) -> None:
        self.stages.append(
            {
                "stage": name,
                "input": input_count,
                "dropped": dropped,
                "retained": input_count - dropped,
            }
        )

    def record_error(self, message: str) -> None:
        self.error_count += 1
        if len(self.errors) < _MAX_REPORTED_ERRORS:
            self.errors.append(message)

    def dropped(self, stage: str) -> int:
        for entry in self.stages:
            if entry["stage"] == stage:
                return int(entry["dropped"])
        raise KeyError(stage)

    def to_dict(self) -> dict:
        return {
            "stages": self.stages,
            "errors": self.errors,
            "error_count": self.error_count,
            "final": {
                "users": self.final_users,
                "exercises": self.final_exercises,
                "interactions": self.final_interactions,
                "skills": self.final_skills,
            },
        }


def compute_rewards(
    raw_records: Sequence[Mapping[str, str]],
    report: PreprocessReport | None = None,
) -> list[Interaction]:
    """Parse raw rows, compute skill-gain rewards, keep strictly positive ones.

    Records with a missing mastery field are dropped and counted separately
    from records whose computed reward is not strictly positive. Malformed
    rows are collected as record-level errors; the pipeline never aborts on
    one bad record.
    """
    report = report if report is not None else PreprocessReport()
    malformed = 0
    missing_mastery = 0
    nonpositive = 0
    kept: list[Interaction] = []
    for position, row in enumerate(raw_records):
        before_raw = (row.get("mastery_before") or "").strip()
        after_raw = (row.get("mastery_after") or "").strip()
        if not before_raw or not after_raw:
            missing_mastery += 1
            continue
        try:
            interaction = Interaction(
                user_id=row["user_id"],
                exercise_id=row["exercise_id"],
                skill_id=row["skill_id"],
                timestamp=parse_timestamp(row["timestamp"]),
                correct=parse_bool(row["correct"]),
                mastery_before=float(before_raw),
                mastery_after=float(after_raw),
                row=int(row.get("_row", position)),
            )
        except (ValueError, KeyError) as exc:
            malformed += 1
            report.record_error(f"row {row.get('_row', position)}: {exc}")
            continue
        if interaction.reward > 0.0:
            kept.append(interaction)
        else:
            nonpositive += 1
    total = len(raw_records)
    report.add_stage("malformed", total, malformed)
    report.add_stage("missing_mastery", total - malformed, missing_mastery)
    report.add_stage(
        "nonpositive_reward", total - malformed - missing_mastery, nonpositive
    )
    return kept


def dedup_latest(
    interactions: Sequence[Interaction],
    report: PreprocessReport | None = None,
) -> list[Interaction]:
    """Keep only the most recent attempt per (user, exercise) pair.

    Recency is maximal ``(timestamp, row)``, so equal timestamps fall back to
    original file order. Surviving records keep their relative order.
    """
    latest: dict[tuple[str, str], Interaction] = {}
    for interaction in interactions:
        key = (interaction.user_id, interaction.exercise_id)
        current = latest.get(key)
        if current is None or interaction.sort_key() > current.sort_key():
            latest[key] = interaction
    winners = set(map(id, latest.values()))
    kept = [i for i in interactions if id(i) in winners]
    if report is not None:
        report.add_stage("duplicate_attempts", len(interactions), len(interactions) - len(kept))
    return kept


def filter_low_activity(
    interactions: Sequence[Interaction],
    threshold: int = DEFAULT_MIN_INTERACTIONS,
    report: PreprocessReport | None = None,
) -> list[Interaction]:
    """Drop every interaction of users with fewer than ``threshold`` records."""
    counts: dict[str, int] = {}
    for interaction in interactions:
        counts[interaction.user_id] = counts.get(interaction.user_id, 0) + 1
    kept = [i for i in interactions if counts[i.user_id] >= threshold]
    if report is not None:
        report.add_stage("low_activity_users", len(interactions), len(interactions) - len(kept))
    return kept


def temporal_split(
    interactions: Sequence[Interaction],
    fractions: tuple[float, float, float] = DEFAULT_FRACTIONS,
) -> SplitDataset:
    """Per-user chronological split: floor(f1*n) train, floor(f2*n) validation,
    remainder test."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigurationError(f"split fractions {fractions} do not sum to 1")
    if any(f < 0 for f in fractions):
        raise ConfigurationError(f"split fractions {fractions} must be nonnegative")
    per_user: dict[str, list[Interaction]] = {}
    for interaction in interactions:
        per_user.setdefault(interaction.user_id, []).append(interaction)
    train: list[Interaction] = []
    validation: list[Interaction] = []
    test: list[Interaction] = []
    for user_id in sorted(per_user):
        ordered = chronological(per_user[user_id])
        n = len(ordered)
        n_train = int(np.floor(fractions[0] * n))
        n_val = int(np.floor(fractions[1] * n))
        train.extend(ordered[:n_train])
        validation.extend(ordered[n_train : n_train + n_val])
        test.extend(ordered[n_train + n_val :])
    return SplitDataset(
        train=tuple(chronological(train)),
        validation=tuple(chronological(validation)),
        test=tuple(chronological(test)),
        fractions=tuple(fractions),  # type: ignore[arg-type]
    )


def enforce_warm_start(
    split: SplitDataset,
    report: PreprocessReport | None = None,
) -> SplitDataset:
    """Remove validation/test interactions whose user or exercise never
    appears in train. One pass suffices: removals from the held-out splits
    cannot un-train any entity."""
    train_users = split.users("train")
    train_exercises = split.exercises("train")

    def keep(interaction: Interaction) -> bool:
        return (
            interaction.user_id in train_users
            and interaction.exercise_id in train_exercises
        )

    validation = tuple(i for i in split.validation if keep(i))
    test = tuple(i for i in split.test if keep(i))
    if report is not None:
        report.add_stage(
            "warm_start_validation", len(split.validation), len(split.validation) - len(validation)
        )
        report.add_stage("warm_start_test", len(split.test), len(split.test) - len(test))
    return SplitDataset(
        train=split.train,
        validation=validation,
        test=test,
        fractions=split.fractions,
    )


def run_pipeline(
    raw_records: Sequence[Mapping[str, str]],
    min_interactions: int = DEFAULT_MIN_INTERACTIONS,
    fractions: tuple[float, float, float] = DEFAULT_FRACTIONS,
) -> tuple[SplitDataset, PreprocessReport]:
    """Full pipeline from raw CSV rows to an enforced warm-start split."""
    report = PreprocessReport()
    interactions = compute_rewards(raw_records, report)
    interactions = dedup_latest(interactions, report)
    interactions = filter_low_activity(interactions, min_interactions, report)
    split = temporal_split(interactions, fractions)
    split = enforce_warm_start(split, report)
    final = split.all_interactions()
    report.final_users = len({i.user_id for i in final})
    report.final_exercises = len({i.exercise_id for i in final})
    report.final_interactions = len(final)
    report.final_skills = len({i.skill_id for i in final})
    return split, report


# ---------------------------------------------------------------------------
# Context encoding
# ---------------------------------------------------------------------------


@dataclass
class ContextEncoder:
    """One-hot categorical blocks plus standardized continuous features plus a
    trailing bias entry.

    Vocabularies and standardization statistics come from training users only
    (population standard deviation). Zero-variance features get scale 1, so
    training values encode to 0. Unseen categorical values encode as an
    all-zeros block.
    """

    vocabularies: dict[str, list[str]]
    means: dict[str, float]
    scales: dict[str, float]

    @property
    def dim(self) -> int:
        return sum(len(v) for v in self.vocabularies.values()) + len(CONTINUOUS_FEATURES) + 1

    def encode(self, profile: LearnerProfile) -> np.ndarray:
        values = np.zeros(self.dim)
        offset = 0
        for name in CATEGORICAL_FEATURES:
            vocabulary = self.vocabularies[name]
            try:
                values[offset + vocabulary.index(profile.categorical(name))] = 1.0
            except ValueError:
                pass  # unseen category: all-zeros block
            offset += len(vocabulary)
        for name in CONTINUOUS_FEATURES:
            values[offset] = (profile.continuous(name) - self.means[name]) / self.scales[name]
            offset += 1
        values[offset] = 1.0
        return values

    def encode_many(self, profiles: Iterable[LearnerProfile]) -> np.ndarray:
        return np.array([self.encode(p) for p in profiles])

    def to_dict(self) -> dict:
        return {
            "vocabularies": self.vocabularies,
            "means": self.means,
            "scales": self.scales,
        }

    @classmethod
    def from_dict(cls, payload: Mapping) -> "ContextEncoder":
        return cls(
            vocabularies={k: list(v) for k, v in payload["vocabularies"].items()},
            means=dict(payload["means"]),
            scales=dict(payload["scales"]),
        )

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as handle:
            json.dump(self.to_dict(), handle, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path: str | Path) -> "ContextEncoder":
        with open(path, encoding="utf-8") as handle:
            return cls.from_dict(json.load(handle))


def fit_context_encoder(
    profiles: Mapping[str, LearnerProfile],
    train: Sequence[Interaction],
) -> ContextEncoder:
    """Fit vocabularies and standardization statistics on training users."""
    train_users = sorted({i.user_id for i in train})
    missing = [u for u in train_users if u not in profiles]
    if missing:
        raise ValueError(f"missing profiles for users: {missing}")
    vocabularies = {
        name: sorted({profiles[u].categorical(name) for u in train_users})
        for name in CATEGORICAL_FEATURES
    }
    means: dict[str, float] = {}
    scales: dict[str, float] = {}
    for name in CONTINUOUS_FEATURES:
        column = np.array([profiles[u].continuous(name) for u in train_users])
        means[name] = float(column.mean()) if len(column) else 0.0
        std = float(column.std()) if len(column) else 0.0
        scales[name] = std if std > 0.0 else 1.0
    return ContextEncoder(vocabularies=vocabularies, means=means, scales=scales)


# ---------------------------------------------------------------------------
# Preprocessed data directory
# ---------------------------------------------------------------------------


@dataclass
class ExperimentData:
    """A preprocessed split plus everything replay needs around it."""

    split: SplitDataset
    profiles: dict[str, LearnerProfile]
    encoder: ContextEncoder

    def contexts(self) -> dict[str, np.ndarray]:
        """Context vector per training user (held-out users are a subset)."""
        return {
            u: self.encoder.encode(self.profiles[u]) for u in sorted(self.split.users("train"))
        }


def write_data_dir(
    out_dir: str | Path,
    split: SplitDataset,
    encoder: ContextEncoder,
    report: PreprocessReport,
    profiles: Mapping[str, LearnerProfile],
) -> dict[str, Path]:
    """Write the canonical preprocessed layout: split CSVs, encoder, report,
    and a profiles copy so the directory is self-contained."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "train": out / "train.csv",
        "validation": out / "val.csv",
        "test": out / "test.csv",
        "encoder": out / "encoder.json",
        "report": out / "report.json",
        "profiles": out / "profiles.csv",
    }
    write_interactions_csv(paths["train"], split.train)
    write_interactions_csv(paths["validation"], split.validation)
    write_interactions_csv(paths["test"], split.test)
    encoder.save(paths["encoder"])
    with open(paths["report"], "w", encoding="utf-8") as handle:
        json.dump(report.to_dict(), handle, indent=2, sort_keys=True)
    write_profiles_csv(paths["profiles"], sorted(profiles.values(), key=lambda p: p.user_id))
    return paths


def load_data_dir(data_dir: str | Path) -> ExperimentData:
    data = Path(data_dir)
    split = SplitDataset(
        train=tuple(read_interactions_csv(data / "train.csv")),
        validation=tuple(read_interactions_csv(data / "val.csv")),
        test=tuple(read_interactions_csv(data / "test.csv")),
    )
    return ExperimentData(
        split=split,
        profiles=read_profiles_csv(data / "profiles.csv"),
        encoder=ContextEncoder.load(data / "encoder.json"),
    )
