import numpy as np
import pytest

from mirobid.diffcore import finite_diff_check, forward_backward, no_grad
from mirobid.env import FEATURE_DIM, replay_actions
from mirobid.market import GeneratorConfig, generate_day
from mirobid.miro import LearnerConfig, learner_update, policy_update
from mirobid.policy import CausalPolicy, ExpertBatch, PolicyConfig, causal_bc_loss, causal_bc_terms, rollout
from mirobid.worldmodel import WorldModel, WorldModelConfig, make_batch

SMALL = PolicyConfig(latent_dim=2, hidden=4, head_hidden=3)
LOG_2PI = np.log(2 * np.pi)


@pytest.fixture(scope="module")
def days():
    cfg = GeneratorConfig(auctions_per_day=300, H=5)
    return [generate_day(cfg, i, mechanism="MIX" if i % 2 else "GSP") for i in range(3)]


@pytest.fixture(scope="module")
def experts(days):
    return [replay_actions(d, [0.9, 1.1, 0.7, 1.0, 1.2], tag="expert") for d in days]


def smoothing_batch(policy, experts, seed=0):
    wm = WorldModel(WorldModelConfig(latent_dim=2, hidden=4, head_hidden=3), seed)
    b = make_batch(experts)
    m, s = wm.infer_latent(b.steps, b.mask, mode="smoothing")
    return ExpertBatch(b, m, s)


def trained_like(seed=0, use_latent=True):
    """A policy with non-trivial head weights so the latent actually matters."""
    p = CausalPolicy(PolicyConfig(latent_dim=2, hidden=4, head_hidden=3, use_latent=use_latent), seed)
    rng = np.random.default_rng(seed)
    p.params["pi.1.W"] = rng.normal(size=p.params["pi.1.W"].shape)
    p.params["enc.head.W"] = rng.normal(size=p.params["enc.head.W"].shape)
    return p


class TestActing:
    def test_deterministic_repeatable_and_positive(self, days):
        p = trained_like()
        a, _ = rollout(p, days, deterministic=True)
        b, _ = rollout(p, days, deterministic=True)
        for x, y in zip(a, b):
            assert np.array_equal(x.actions, y.actions)
            assert np.all(x.actions > 0)

    def test_zero_noise_equals_deterministic(self, days, experts):
        p = trained_like()
        tr = experts[0]
        steps = tr.features()
        obs = make_batch([tr]).obs[0]
        for t in range(len(tr)):
            det = p.act(obs[t], steps[:t], deterministic=True)
            zero = p.act(obs[t], steps[:t], noise=(np.zeros(2), 0.0), deterministic=False)
            assert det == zero

    def test_incremental_rollout_matches_batch_encoder(self, days):
        p = trained_like(1)
        trajs, _ = rollout(p, days, deterministic=True)
        for tr in trajs:
            b = make_batch([tr])
            steps = tr.features()
            for t in range(len(tr)):
                la = p.act(b.obs[0, t], steps[:t])
                assert la == pytest.approx(np.log(tr.actions[t] * tr.roi_target), abs=1e-10)

    def test_future_perturbation_leaves_actions(self, experts):
        p = trained_like(2)
        tr = experts[1]
        steps = tr.features()
        obs = make_batch([tr]).obs[0]
        for t in range(len(tr)):
            pert = steps.copy()
            pert[t:] += 3.0
            assert p.act(obs[t], steps[:t]) == p.act(obs[t], pert[:t])

    def test_memoryless_ignores_history(self, experts):
        p = trained_like(3, use_latent=False)
        tr = experts[0]
        steps = tr.features()
        obs = make_batch([tr]).obs[0]
        assert p.act(obs[3], steps[:3]) == p.act(obs[3], steps[:3] * 0.0 + 1.0)

    def test_encoder_loaded_from_world_model(self):
        wm = WorldModel(WorldModelConfig(latent_dim=2, hidden=4, head_hidden=3), 5)
        p = CausalPolicy(SMALL, 0)
        p.load_encoder(wm)
        for k in p.params.names():
            if k.startswith("enc."):
                assert np.array_equal(p.params[k], wm.params[k])


class TestImitation:
    def test_nll_at_mean_unit_sigma(self):
        p = CausalPolicy(SMALL, 0)
        for k in p.params.names():
            if k.startswith("pi."):
                p.params[k] = np.zeros_like(p.params[k])
        # constant head placed at the (constant) demonstrated log action
        tr = replay_actions(generate_day(GeneratorConfig(auctions_per_day=300, H=5), 0), [0.8] * 5, tag="expert")
        eb = smoothing_batch(p, [tr])
        p.params["pi.1.b"] = np.array([eb.batch.log_action[0, 0]])
        with no_grad():
            t = causal_bc_terms(p, p.params.constants(), eb, np.zeros((1, eb.batch.T, 2)), 0.0)
        assert float(t["nll"].data) == pytest.approx(0.5 * LOG_2PI, abs=1e-12)

    def test_matching_posteriors_give_pure_nll(self, experts):
        p = trained_like(4)
        b = make_batch(experts)
        with no_grad():
            q = p.encoder.filtering(p.params.constants(), b.steps, b.mask)
        eb = ExpertBatch(b, q.mean.data.reshape(b.B, b.T, 2), q.log_std.data.reshape(b.B, b.T, 2))
        noise = np.random.default_rng(0).standard_normal((b.B, b.T, 2))
        with no_grad():
            t = causal_bc_terms(p, p.params.constants(), eb, noise, 0.1)
        assert float(t["kl"].data) == 0.0
        assert float(t["total"].data) == float(t["nll"].data)

    def test_bc_gradients(self, experts):
        p = trained_like(5)
        eb = smoothing_batch(p, experts)
        noise = np.random.default_rng(1).standard_normal((eb.batch.B, eb.batch.T, 2))
        _, g = forward_backward(lambda P, X: causal_bc_loss(p, P, eb, noise, 0.1), {}, p.params)

        def loss():
            with no_grad():
                return float(causal_bc_loss(p, p.params.constants(), eb, noise, 0.1).data)

        arrays = {k: v for k, v in p.params.values.items() if not k.startswith("value")}
        assert finite_diff_check(loss, arrays, g, step=1e-4, max_coords=8) <= 1e-4

    def test_smoothing_target_gets_no_gradient(self, experts):
        p = trained_like(6)
        eb = smoothing_batch(p, experts)
        noise = np.zeros((eb.batch.B, eb.batch.T, 2))
        _, g = forward_backward(lambda P, X: causal_bc_loss(p, P, eb, noise, 0.1), {}, p.params)
        assert all(np.all(g[k] == 0) for k in g if k.startswith("value"))


class TestAblationIdentities:
    def _prepare(self, days, experts, use_latent=True):
        p = trained_like(7, use_latent)
        trajs, noise = rollout(p, days, np.random.default_rng(0))
        batch = make_batch(trajs)
        rewards = np.random.default_rng(1).normal(size=batch.mask.shape) * batch.mask
        eb = smoothing_batch(p, experts)
        bc_noise = np.random.default_rng(2).standard_normal((eb.batch.B, eb.batch.T, 2))
        return p, batch, noise, rewards, eb, bc_noise

    def test_bc_weight_zero_is_learner_update(self, days, experts):
        p, batch, noise, rewards, eb, bc_noise = self._prepare(days, experts)
        q = CausalPolicy(p.cfg, 7)
        q.params = p.params.copy()
        cfg = LearnerConfig()
        policy_update(p, batch, noise, rewards, eb, bc_noise, cfg, rl_weight=1.0, bc_weight=0.0, beta2=0.1)
        learner_update(q, batch, noise, rewards, cfg)
        for k in p.params.names():
            assert np.array_equal(p.params[k], q.params[k])

    def test_rl_weight_zero_no_latent_is_plain_bc(self, days, experts):
        p, batch, noise, rewards, eb, bc_noise = self._prepare(days, experts, use_latent=False)
        q = CausalPolicy(p.cfg, 7)
        q.params = p.params.copy()
        cfg = LearnerConfig()
        policy_update(p, None, None, None, eb, bc_noise, cfg, rl_weight=0.0, bc_weight=1.0, beta2=0.0)
        from mirobid.miro import apply_update

        _, g = forward_backward(lambda P, X: causal_bc_loss(q, P, eb, bc_noise, 0.0), {}, q.params)
        apply_update(q, g, cfg.lr, cfg.clip)
        for k in p.params.names():
            assert np.array_equal(p.params[k], q.params[k])
        # a memoryless policy's imitation loss never touches the encoder
        assert all(np.all(g[k] == 0) for k in g if k.startswith("enc."))

    def test_obs_dim(self):
        assert CausalPolicy(SMALL, 0).params["pi.0.W"].shape[0] == FEATURE_DIM + 2
