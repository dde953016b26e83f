import numpy as np
import pytest

from skillbandit.types import Interaction, LearnerProfile


def make_interaction(
    user="u0",
    exercise="e0",
    skill="s0",
    timestamp=0.0,
    correct=True,
    before=0.4,
    after=0.7,
    row=0,
):
    return Interaction(
        user_id=user,
        exercise_id=exercise,
        skill_id=skill,
        timestamp=float(timestamp),
        correct=correct,
        mastery_before=before,
        mastery_after=after,
        row=row,
    )


def make_profile(user="u0", **overrides):
    defaults = dict(
        user_id=user,
        academic_year="2004",
        school="school_00",
        gender="F",
        avg_knowledge_mastery=0.5,
        overall_correctness=0.5,
        mcas_score=220.0,
        confusion=0.3,
        frustration=0.3,
        boredom=0.3,
        engaged_concentration=0.5,
        carelessness=0.2,
        gaming=0.2,
        off_task=0.3,
    )
    defaults.update(overrides)
    return LearnerProfile(**defaults)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
