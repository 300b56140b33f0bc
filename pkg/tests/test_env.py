import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mirobid.env import (
    STEP_DIM,
    BatchRollout,
    EpisodeOutcome,
    episode_reward,
    load_trajectories,
    observation_from_prefix,
    replay_actions,
    reset_episode,
    run_episode,
    save_trajectories,
    step_slot,
)
from mirobid.market import EnvironmentDay, GeneratorConfig, PricingKind, PricingRule, generate_day

SP = PricingRule(PricingKind.SECOND_PRICE)


def hand_day(u, m, B, bounds, L=1.0):
    u = np.asarray(u, float)
    return EnvironmentDay(u, u, np.asarray(m, float), SP, B, L, bounds)


@pytest.fixture(scope="module")
def days():
    cfg = GeneratorConfig(auctions_per_day=600, H=6)
    return [generate_day(cfg, 0), generate_day(cfg, 1, mechanism="MIX")]


class TestReset:
    def test_fresh_observation(self, days):
        obs, state = reset_episode(days[0])
        assert obs.budget_remaining == 1.0
        assert obs.win_rate == 0.0 and obs.cum_cost == 0.0 and obs.time_frac == 0.0
        assert state.t == 0 and not state.done

    def test_deterministic(self, days):
        a, _ = reset_episode(days[1])
        b, _ = reset_episode(days[1])
        assert np.array_equal(a.as_array(), b.as_array())


class TestStep:
    def test_budget_forfeit_hand_case(self):
        day = hand_day([1.0, 1.0], [4.0, 4.0], 5.0, [0, 2])
        _, state = reset_episode(day)
        obs, stats, done = step_slot(state, 5.0)
        assert done and state.truncated
        assert stats.cost == 4.0 and stats.wins == 1
        assert obs.cum_cost == 4.0

    def test_forfeit_ends_day_early(self):
        day = hand_day([1.0, 1.0, 1.0], [4.0, 4.0, 0.5], 5.0, [0, 2, 3])
        traj = replay_actions(day, [5.0, 5.0, 5.0])
        # the cheap third-slot auction is never reached
        assert len(traj) == 1 and traj.truncated
        assert traj.outcome.cost == 4.0

    def test_zero_ratio_everywhere(self, days):
        traj = replay_actions(days[0], [0.0] * days[0].H)
        assert len(traj) == days[0].H
        assert traj.outcome.utility == 0.0 and traj.outcome.cost == 0.0

    def test_step_after_done(self):
        day = hand_day([1.0], [1.0], 5.0, [0, 1])
        _, state = reset_episode(day)
        step_slot(state, 1.0)
        with pytest.raises(RuntimeError):
            step_slot(state, 1.0)

    def test_negative_ratio(self, days):
        _, state = reset_episode(days[0])
        with pytest.raises(ValueError):
            step_slot(state, -0.1)

    def test_state_not_in_observation(self, days):
        obs, _ = reset_episode(days[0])
        assert obs.as_array().shape == (7,)


class TestReward:
    def test_feasible(self):
        assert episode_reward(EpisodeOutcome(100.0, 100.0 / 2.2, 1e9, 2.0, False)) == 100.0

    def test_infeasible(self):
        assert episode_reward(EpisodeOutcome(100.0, 60.0, 1e9, 2.0, False)) == 0.0

    def test_no_wins(self):
        out = EpisodeOutcome(0.0, 0.0, 10.0, 2.0, False)
        assert out.roi == float("inf") and episode_reward(out) == 0.0


ratio_seqs = st.lists(st.floats(0.0, 20.0), min_size=6, max_size=6)


class TestProperties:
    @settings(max_examples=40, deadline=None)
    @given(ratio_seqs, st.integers(0, 1))
    def test_hard_budget_and_monotone_cost(self, ratios, which):
        cfg = GeneratorConfig(auctions_per_day=300, H=6)
        day = generate_day(cfg, which, mechanism="MIX" if which else "GSP")
        traj = replay_actions(day, ratios)
        assert traj.outcome.cost <= day.budget
        assert len(traj) <= day.H
        assert np.all(np.diff(traj.obs[:, 4]) >= 0)
        r = traj.episode_reward
        assert 0.0 <= r <= traj.outcome.utility

    @settings(max_examples=25, deadline=None)
    @given(ratio_seqs)
    def test_observations_recomputable_from_prefix(self, ratios):
        day = generate_day(GeneratorConfig(auctions_per_day=300, H=6), 2)
        traj = replay_actions(day, ratios)
        sizes = np.diff(day.slot_boundaries)
        for t in range(len(traj)):
            rebuilt = observation_from_prefix(traj, t, sizes).as_array()
            assert np.allclose(rebuilt, traj.obs[t], rtol=1e-12, equal_nan=False)

    def test_prefix_views_consistent(self, days):
        traj = replay_actions(days[0], [0.8] * days[0].H)
        for t in range(len(traj) + 1):
            o, a, r = traj.prefix(t)
            assert len(o) == len(a) == len(r) == t
            assert np.array_equal(a, traj.actions[:t])


class TestRollout:
    def test_batch_matches_sequential(self, days):
        ratios = [0.4, 1.1, 0.7, 2.0, 0.9, 0.3]
        batched = BatchRollout(days).run(lambda sf, of, t: np.full(len(days), ratios[t]))
        for d, tb in zip(days, batched):
            ts = replay_actions(d, ratios)
            assert np.array_equal(tb.actions, ts.actions)
            assert np.array_equal(tb.rewards, ts.rewards)
            assert np.array_equal(tb.obs, ts.obs)

    def test_policy_sees_only_past_steps(self, days):
        seen = []

        def policy(sf, of, t):
            seen.append(sf.shape)
            return np.ones(len(days))

        BatchRollout(days).run(policy)
        assert seen[0] == (2, 0, STEP_DIM) and seen[3] == (2, 3, STEP_DIM)

    def test_run_episode_passes_prefix(self, days):
        lengths = []

        def fn(obs, traj):
            lengths.append(len(traj.actions))
            return 1.0

        run_episode(days[0], fn)
        assert lengths == list(range(len(lengths)))

    def test_jsonl_round_trip(self, days, tmp_path):
        trajs = [replay_actions(d, [0.0, 1.0, 1.5, 0.5, 1.0, 1.0]) for d in days]
        p = tmp_path / "t.jsonl"
        save_trajectories(p, trajs)
        back = load_trajectories(p)
        assert len(back) == 2
        for a, b in zip(trajs, back):
            assert a.day_id == b.day_id and a.policy == b.policy
            assert np.array_equal(a.obs, b.obs) and np.array_equal(a.actions, b.actions)
            assert a.truncated == b.truncated
