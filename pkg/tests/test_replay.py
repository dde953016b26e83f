import json

import numpy as np
import pytest

from skillbandit.policies import Policy, ThompsonSampling, UniformRandom, make_policy
from skillbandit.replay import (
    ReplayConfig,
    ReplayInvariantError,
    build_candidates,
    emit_metrics,
    policy_digest,
    pretrain,
    replay,
    reward_lookup,
    trace_summary,
)

from conftest import make_interaction


class GreedyOracle(Policy):
    """Scores candidates by their true logged reward; for protocol tests."""

    def __init__(self, rewards):
        self._rewards = rewards

    def select(self, user_id, context, candidates, rng):
        self._check_candidates(candidates)
        scores = [self._rewards[(user_id, c)] for c in candidates]
        return candidates[int(np.argmax(scores))]


def two_event_split():
    gain = {"e1": (0.2, 0.3), "e2": (0.2, 0.6)}
    return [
        make_interaction(user="u", exercise="e1", timestamp=1, row=0,
                         before=gain["e1"][0], after=gain["e1"][1]),
        make_interaction(user="u", exercise="e2", timestamp=2, row=1,
                         before=gain["e2"][0], after=gain["e2"][1]),
    ]


def iid_split(rng, n_users=20, n_events=30):
    interactions = []
    row = 0
    for u in range(n_users):
        start = int(rng.integers(0, 1000))
        for i in range(n_events):
            before = float(rng.uniform(0.0, 0.5))
            interactions.append(
                make_interaction(
                    user=f"u{u:02d}",
                    exercise=f"e{i:02d}",
                    timestamp=start + i,
                    row=row,
                    before=before,
                    after=before + float(rng.uniform(0.05, 0.45)),
                )
            )
            row += 1
    return interactions


class TestBuildCandidates:
    def test_set_difference(self):
        lookup = {"u": {"e1": 0.1, "e2": 0.2, "e3": 0.3}}
        assert build_candidates(lookup, "u", {"e2"}) == ["e1", "e3"]

    def test_exhausted_pool_is_empty(self):
        lookup = {"u": {"e1": 0.1, "e2": 0.2}}
        assert build_candidates(lookup, "u", {"e1", "e2"}) == []

    def test_fresh_user_gets_all_logged_exercises(self):
        lookup = {"u": {f"e{i}": 0.1 * (i + 1) for i in range(5)}}
        assert build_candidates(lookup, "u", set()) == sorted(lookup["u"])

    def test_attempted_exercises_expire(self):
        lookup = {"u": {"e1": 0.1, "e2": 0.2, "e3": 0.3}}
        assert build_candidates(lookup, "u", set(), {"e1"}) == ["e2", "e3"]

    def test_unknown_user_is_a_caller_error(self):
        with pytest.raises(KeyError):
            build_candidates({}, "ghost", set())


class TestReplayLoop:
    def test_empty_split_gives_empty_trace(self):
        trace = replay(UniformRandom(), [], None, ReplayConfig(seed=0))
        assert trace.rounds == 0 and trace.final_average == 0.0

    def test_greedy_front_loads_and_skips_expired_round(self):
        """A perfect-estimate policy takes the 0.4 exercise at the first
        opportunity; by the second event both exercises are gone (one
        recommended, one expired), so the round is skipped."""
        split = two_event_split()
        rewards = reward_lookup(split)
        policy = GreedyOracle({("u", e): r for e, r in rewards["u"].items()})
        trace = replay(policy, split, None, ReplayConfig(seed=0, warm_start_rounds=0))
        assert [r.exercise_id for r in trace.records] == ["e2"]
        assert [r.cum_avg for r in trace.records] == [pytest.approx(0.4)]
        assert trace.skipped_rounds == 1

    def test_log_order_policy_collects_everything(self):
        split = two_event_split()

        class FollowLog(Policy):
            def select(self, user_id, context, candidates, rng):
                return candidates[0]  # e1 sorts first, then e2 remains

        trace = replay(FollowLog(), split, None, ReplayConfig(seed=0))
        assert [r.exercise_id for r in trace.records] == ["e1", "e2"]
        np.testing.assert_allclose(
            [r.cum_avg for r in trace.records], [0.1, 0.25], atol=1e-12
        )
        assert trace.skipped_rounds == 0

    def test_cumulative_average_consistency(self, rng):
        split = iid_split(rng, n_users=5, n_events=20)
        trace = replay(UniformRandom(), split, None, ReplayConfig(seed=3))
        total = 0.0
        for i, record in enumerate(trace.records, start=1):
            total += record.reward
            assert record.cum_avg == pytest.approx(total / i, abs=1e-12)
            assert record.round == i

    def test_selection_counts_match_rounds(self, rng):
        split = iid_split(rng, n_users=4, n_events=15)
        trace = replay(UniformRandom(), split, None, ReplayConfig(seed=1))
        assert sum(trace.action_counts.values()) == trace.rounds
        assert trace.rounds + trace.skipped_rounds == len(split)

    def test_no_pair_recommended_twice(self, rng):
        split = iid_split(rng, n_users=6, n_events=12)
        trace = replay(UniformRandom(), split, None, ReplayConfig(seed=2))
        pairs = [(r.user_id, r.exercise_id) for r in trace.records]
        assert len(pairs) == len(set(pairs))

    def test_every_choice_has_logged_reward(self, rng):
        split = iid_split(rng, n_users=6, n_events=12)
        lookup = reward_lookup(split)
        trace = replay(UniformRandom(), split, None, ReplayConfig(seed=2))
        for record in trace.records:
            assert lookup[record.user_id][record.exercise_id] == record.reward

    def test_invariant_violation_aborts_with_diagnostics(self):
        split = two_event_split()

        class Rogue(Policy):
            def select(self, user_id, context, candidates, rng):
                return "not_logged"

        with pytest.raises(ReplayInvariantError, match="not_logged"):
            replay(Rogue(), split, None, ReplayConfig(seed=0))

    def test_uniform_random_mean_near_global_mean(self, rng):
        """Over iid per-event rewards the collected average is unbiased."""
        split = iid_split(rng, n_users=20, n_events=30)
        global_mean = np.mean([i.reward for i in split])
        finals = [
            replay(UniformRandom(), split, None, ReplayConfig(seed=s)).final_average
            for s in range(10)
        ]
        finals = np.array(finals)
        standard_error = finals.std(ddof=1) / np.sqrt(len(finals))
        assert abs(finals.mean() - global_mean) <= 2 * standard_error + 2e-3

    def test_identical_seed_identical_trace(self, rng):
        split = iid_split(rng, n_users=8, n_events=20)
        traces = [
            replay(ThompsonSampling(), split, None, ReplayConfig(seed=11, warm_start_rounds=5))
            for _ in range(2)
        ]
        assert traces[0].records == traces[1].records
        assert traces[0].skipped == traces[1].skipped


class TestWarmStartPhase:
    def test_warm_start_rounds_are_random_then_policy_takes_over(self, rng):
        split = iid_split(rng, n_users=10, n_events=20)

        class Marker(ThompsonSampling):
            def __init__(self):
                super().__init__()
                self.calls = 0

            def select(self, user_id, context, candidates, rng):
                self.calls += 1
                return super().select(user_id, context, candidates, rng)

        policy = Marker()
        trace = replay(policy, split, None, ReplayConfig(seed=0, warm_start_rounds=50))
        assert trace.rounds > 50
        assert policy.calls == trace.rounds - 50

    def test_policies_without_warm_start_always_select(self, rng):
        split = iid_split(rng, n_users=4, n_events=10)

        class Counting(UniformRandom):
            calls = 0

            def select(self, user_id, context, candidates, rng):
                Counting.calls += 1
                return super().select(user_id, context, candidates, rng)

        trace = replay(Counting(), split, None, ReplayConfig(seed=0, warm_start_rounds=10**6))
        assert Counting.calls == trace.rounds


class TestPretrainAndFreeze:
    def test_pretrain_on_empty_split_leaves_policy_at_prior(self):
        policy = ThompsonSampling()
        digest = policy_digest(policy)
        pretrain(policy, [[]], None, ReplayConfig(seed=0))
        assert policy_digest(policy) == digest

    def test_sequential_pretrain_equals_multi_split_pretrain(self, rng):
        interactions = iid_split(rng, n_users=6, n_events=20)
        cut = len(interactions) // 2
        first, second = interactions[:cut], interactions[cut:]
        config = ReplayConfig(seed=4, warm_start_rounds=3)

        policy_a = ThompsonSampling()
        pretrain(policy_a, [first], None, config)
        pretrain(policy_a, [second], None, config)

        policy_b = ThompsonSampling()
        pretrain(policy_b, [first, second], None, config)
        assert policy_digest(policy_a) == policy_digest(policy_b)

    def test_frozen_replay_leaves_state_untouched(self, rng):
        split = iid_split(rng, n_users=6, n_events=15)
        policy = ThompsonSampling()
        pretrain(policy, [split[: len(split) // 2]], None, ReplayConfig(seed=0))
        digest_before = policy_digest(policy)
        replay(policy, split[len(split) // 2 :], None,
               ReplayConfig(seed=1, warm_start_rounds=0, freeze=True))
        assert policy_digest(policy) == digest_before

    def test_learning_replay_changes_state(self, rng):
        split = iid_split(rng, n_users=6, n_events=15)
        policy = ThompsonSampling()
        digest_before = policy_digest(policy)
        replay(policy, split, None, ReplayConfig(seed=1, freeze=False))
        assert policy_digest(policy) != digest_before


class TestEmitMetrics:
    def _trace(self, rng, **config):
        split = iid_split(rng, n_users=5, n_events=12)
        return replay(UniformRandom(), split, None, ReplayConfig(seed=7, **config))

    def test_running_mean_column(self, tmp_path):
        split = [
            make_interaction(user="u", exercise=f"e{i}", timestamp=i, row=i,
                             before=0.0, after=after)
            for i, after in enumerate([0.3, 0.1, 0.2])
        ]

        class FollowLog(Policy):
            def select(self, user_id, context, candidates, rng):
                return sorted(candidates)[0]

        trace = replay(FollowLog(), split, None, ReplayConfig(seed=0))
        paths = emit_metrics(trace, tmp_path)
        lines = paths["trace"].read_text().strip().splitlines()
        assert lines[0] == "round,reward,cum_avg"
        cum = [float(line.split(",")[2]) for line in lines[1:]]
        np.testing.assert_allclose(cum, [0.3, 0.2, 0.2], atol=1e-12)

    def test_window_clamped_to_trace_length(self, rng, tmp_path):
        trace = self._trace(rng)
        paths = emit_metrics(trace, tmp_path, window=10_000)
        payload = json.loads(paths["windows"].read_text())
        assert payload["effective_window"] == trace.rounds
        assert sum(payload["first"].values()) == trace.rounds

    def test_counts_sum_to_rounds(self, rng, tmp_path):
        trace = self._trace(rng)
        paths = emit_metrics(trace, tmp_path)
        counts = json.loads(paths["action_freq"].read_text())
        assert sum(counts.values()) == trace.rounds

    def test_byte_identical_outputs_for_same_seed(self, rng, tmp_path):
        blobs = []
        for name in ("a", "b"):
            rng_local = np.random.default_rng(123)
            split = iid_split(rng_local, n_users=5, n_events=12)
            trace = replay(UniformRandom(), split, None, ReplayConfig(seed=9))
            paths = emit_metrics(trace, tmp_path / name)
            blobs.append(tuple(p.read_bytes() for p in paths.values()))
        assert blobs[0] == blobs[1]

    def test_summary_fields(self, rng):
        trace = self._trace(rng)
        summary = trace_summary(trace)
        assert summary["rounds"] == trace.rounds
        assert summary["final_cumulative_average_reward"] == trace.final_average
        assert summary["skipped_rounds"] == trace.skipped_rounds
