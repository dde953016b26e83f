"""Synthetic learner simulator with known ground truth.

Learners practice exercises mapped to skills; mastery evolves under a
two-parameter (guess/slip) knowledge-tracing update with learn-on-attempt
transit, and each logged event records the mastery estimate before and after
the attempt, so the derived reward is exactly the simulated skill gain.

Learner heterogeneity is controlled by ``context_effect``: with a positive
effect, profile features carry signal about which skills a learner picks up
quickly (so a context-aware policy has a real informational edge), while a
zero effect makes expected rewards identical across learners conditional on
the skill parameters.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .types import Interaction, LearnerProfile, write_interactions_csv, write_profiles_csv


@dataclass(frozen=True)
class BktSkillParams:
    """Knowledge-tracing parameters for one skill."""

    p_init: float
    p_transit: float
    p_guess: float
    p_slip: float

    def __post_init__(self) -> None:
        for name in ("p_init", "p_transit", "p_guess", "p_slip"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} {value} outside [0, 1]")
        if self.p_guess >= 0.5:
            raise ValueError(f"p_guess {self.p_guess} must be below 0.5")
        if self.p_slip >= 0.5:
            raise ValueError(f"p_slip {self.p_slip} must be below 0.5")


def bkt_step(mastery: float, correct: bool, params: BktSkillParams) -> float:
    """Posterior mastery after observing one response, then a learning step.

    A zero denominator (an observation impossible under the model, reachable
    only at mastery 0 or 1 with extreme guess/slip) leaves the posterior at
    the prior.
    """
    if not 0.0 <= mastery <= 1.0:
        raise ValueError(f"mastery {mastery} outside [0, 1]")
    if correct:
        numerator = mastery * (1.0 - params.p_slip)
        denominator = numerator + (1.0 - mastery) * params.p_guess
    else:
        numerator = mastery * params.p_slip
        denominator = numerator + (1.0 - mastery) * (1.0 - params.p_guess)
    posterior = numerator / denominator if denominator > 0.0 else mastery
    return posterior + (1.0 - posterior) * params.p_transit


@dataclass
class SyntheticSpec:
    """Configuration of the simulated world.

    Skill parameters are drawn per skill from the ranges below unless a fixed
    override is given. ``context_effect`` scales both heterogeneity channels:
    a per-learner ability shift on initial mastery and a per-learner affinity
    that speeds up (or slows down) learning on a signed half of the skills.
    Affinity is recoverable from the generated profile features, ability from
    the proficiency features.
    """

    n_users: int = 200
    n_exercises: int = 300
    n_skills: int = 10
    min_session: int = 90
    max_session: int = 150
    context_effect: float = 1.0
    seed: int = 0
    p_init: float | None = None
    p_transit: float | None = None
    p_guess: float | None = None
    p_slip: float | None = None

    def __post_init__(self) -> None:
        if self.n_users < 1 or self.n_exercises < 1 or self.n_skills < 1:
            raise ValueError("n_users, n_exercises, n_skills must be positive")
        if self.n_skills > self.n_exercises:
            raise ValueError("cannot have more skills than exercises")
        if not 1 <= self.min_session <= self.max_session:
            raise ValueError("require 1 <= min_session <= max_session")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, payload: Mapping) -> "SyntheticSpec":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(payload) - known
        if unknown:
            raise ValueError(f"unknown synthetic spec fields: {sorted(unknown)}")
        return cls(**payload)

    @classmethod
    def load(cls, path: str | Path) -> "SyntheticSpec":
        with open(path, encoding="utf-8") as handle:
            return cls.from_dict(json.load(handle))


@dataclass
class GeneratedDataset:
    interactions: list[Interaction]
    profiles: list[LearnerProfile]

    def write(self, out_dir: str | Path) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "interactions": out / "interactions.csv",
            "profiles": out / "profiles.csv",
        }
        write_interactions_csv(paths["interactions"], self.interactions)
        write_profiles_csv(paths["profiles"], self.profiles)
        return paths


def _clip01(value: float, low: float = 0.0, high: float = 1.0) -> float:
    return float(min(high, max(low, value)))


# Transit boost per unit of (affinity * skill sign * context_effect).
_AFFINITY_TRANSIT_SCALE = 0.12
# Initial-mastery shift per unit of (ability * context_effect).
_ABILITY_INIT_SCALE = 0.10


def generate(spec: SyntheticSpec) -> GeneratedDataset:
    """Simulate sessions for every learner and return canonical-format data."""
    rng = np.random.default_rng(spec.seed)

    base_init = (
        np.full(spec.n_skills, spec.p_init)
        if spec.p_init is not None
        else rng.uniform(0.15, 0.45, spec.n_skills)
    )
    base_transit = (
        np.full(spec.n_skills, spec.p_transit)
        if spec.p_transit is not None
        else rng.uniform(0.06, 0.30, spec.n_skills)
    )
    guess = (
        np.full(spec.n_skills, spec.p_guess)
        if spec.p_guess is not None
        else rng.uniform(0.10, 0.30, spec.n_skills)
    )
    slip = (
        np.full(spec.n_skills, spec.p_slip)
        if spec.p_slip is not None
        else rng.uniform(0.05, 0.20, spec.n_skills)
    )
    # Signed halves of the skill space carry the affinity interaction.
    skill_sign = np.where(rng.random(spec.n_skills) < 0.5, 1.0, -1.0)

    width = len(str(spec.n_exercises - 1))
    exercise_ids = [f"e{j:0{width}d}" for j in range(spec.n_exercises)]
    skill_of = rng.integers(0, spec.n_skills, spec.n_exercises)
    # Every skill needs at least one exercise so skill counts are stable.
    skill_of[: spec.n_skills] = np.arange(spec.n_skills)
    skill_ids = [f"s{k:03d}" for k in range(spec.n_skills)]

    ability = rng.standard_normal(spec.n_users)
    affinity = rng.standard_normal(spec.n_users)

    interactions: list[Interaction] = []
    profiles: list[LearnerProfile] = []
    user_width = len(str(spec.n_users - 1))
    row = 0
    for u in range(spec.n_users):
        user_id = f"u{u:0{user_width}d}"
        profiles.append(_make_profile(user_id, ability[u], affinity[u], rng))
        params_by_skill = [
            BktSkillParams(
                p_init=_clip01(
                    base_init[k] + _ABILITY_INIT_SCALE * spec.context_effect * ability[u]
                ),
                p_transit=_clip01(
                    base_transit[k]
                    + _AFFINITY_TRANSIT_SCALE
                    * spec.context_effect
                    * affinity[u]
                    * skill_sign[k]
                ),
                p_guess=float(guess[k]),
                p_slip=float(slip[k]),
            )
            for k in range(spec.n_skills)
        ]
        mastery = [p.p_init for p in params_by_skill]
        session_length = int(
            rng.integers(spec.min_session, spec.max_session + 1)
        )
        session_length = min(session_length, spec.n_exercises)
        order = rng.permutation(spec.n_exercises)[:session_length]
        timestamp = int(rng.integers(0, 1_000_000))
        for j in order:
            k = int(skill_of[j])
            params = params_by_skill[k]
            before = mastery[k]
            p_correct = before * (1.0 - params.p_slip) + (1.0 - before) * params.p_guess
            correct = bool(rng.random() < p_correct)
            after = bkt_step(before, correct, params)
            interactions.append(
                Interaction(
                    user_id=user_id,
                    exercise_id=exercise_ids[j],
                    skill_id=skill_ids[k],
                    timestamp=float(timestamp),
                    correct=correct,
                    mastery_before=before,
                    mastery_after=after,
                    row=row,
                )
            )
            mastery[k] = after
            timestamp += int(rng.integers(30, 600))
            row += 1
    return GeneratedDataset(interactions=interactions, profiles=profiles)


def _make_profile(
    user_id: str,
    ability: float,
    affinity: float,
    rng: np.random.Generator,
) -> LearnerProfile:
    """Profile features as noisy linear views of the two learner latents."""

    def noisy(center: float, loading: float, latent: float, noise: float = 0.03) -> float:
        return _clip01(center + loading * latent + noise * rng.standard_normal())

    return LearnerProfile(
        user_id=user_id,
        academic_year=str(2004 + int(rng.integers(0, 3))),
        school=f"school_{int(rng.integers(0, 5)):02d}",
        gender=("F", "M")[int(rng.integers(0, 2))],
        avg_knowledge_mastery=noisy(0.55, 0.12, ability),
        overall_correctness=noisy(0.50, 0.10, ability),
        mcas_score=float(220.0 + 25.0 * ability + 5.0 * rng.standard_normal()),
        confusion=noisy(0.35, -0.10, affinity),
        frustration=noisy(0.30, -0.08, affinity),
        boredom=noisy(0.35, -0.07, affinity),
        engaged_concentration=noisy(0.50, 0.12, affinity),
        carelessness=noisy(0.25, -0.05, affinity),
        gaming=noisy(0.20, -0.05, affinity),
        off_task=noisy(0.30, -0.08, affinity),
    )
