import numpy as np
import pytest

from pguide.data import gen_two_mode
from pguide.flow import (
    FlowTrainConfig,
    VelocityNet,
    fm_loss,
    load_flow,
    path_interp,
    save_flow,
    time_features,
    train_flow,
    velocity_forward,
)
from pguide.numcore import Rng, normal_sample
from pguide.prior import CheckpointError, PriorModel, prior_rows, train_prior
from pguide.verify import gradient_check


def _small_net(seed=0):
    return VelocityNet(dim=2, n_classes=2, hidden=(8, 8), embed_dim=4,
                       fourier=2, rng=Rng(seed))


class TestVelocityNet:
    def test_zero_head_gives_zero_velocity(self):
        net = _small_net()
        x = normal_sample(Rng(1), 5, 2)
        v = velocity_forward(net, x, 0.3, 1)
        assert np.array_equal(v, np.zeros((5, 2)))

    def test_input_width_invariant(self):
        net = VelocityNet(dim=3, n_classes=4, hidden=(16,), embed_dim=8,
                          fourier=8, rng=Rng(2))
        assert net.input_width == 3 + (2 * 8 + 1) + 8
        assert net.layers[0][0].value.shape[0] == net.input_width
        assert net.head_W.value.shape[1] == 3

    def test_time_features_width(self):
        f = time_features(np.array([0.0, 0.5, 1.0]), fourier=8)
        assert f.shape == (3, 17)
        assert np.array_equal(f[:, 0], [0.0, 0.5, 1.0])

    def test_deterministic_forward(self):
        net = _small_net(3)
        # give the head nonzero weights so the output is nontrivial
        net.head_W.value[:] = normal_sample(Rng(4), 8, 2)
        x = normal_sample(Rng(5), 4, 2)
        a = velocity_forward(net, x, 0.7, 0)
        b = velocity_forward(net, x, 0.7, 0)
        assert np.array_equal(a, b)

    def test_same_seed_same_init(self):
        a, b = _small_net(9), _small_net(9)
        for pa, pb in zip(a.params(), b.params()):
            assert np.array_equal(pa.value, pb.value)

    def test_time_out_of_range(self):
        with pytest.raises(ValueError):
            velocity_forward(_small_net(), np.zeros((1, 2)), 1.5, 0)

    def test_label_out_of_range(self):
        with pytest.raises(ValueError):
            velocity_forward(_small_net(), np.zeros((1, 2)), 0.5, 5)

    def test_per_row_times(self):
        net = _small_net(6)
        net.head_W.value[:] = normal_sample(Rng(7), 8, 2)
        x = normal_sample(Rng(8), 3, 2)
        t = np.array([0.0, 0.5, 1.0])
        batched = velocity_forward(net, x, t, 0)
        rows = [velocity_forward(net, x[i:i + 1], t[i], 0)[0] for i in range(3)]
        assert np.allclose(batched, np.array(rows), atol=1e-14)


class TestPathInterp:
    def test_endpoints(self):
        z = np.array([[1.0, 2.0]])
        x1 = np.array([[3.0, -4.0]])
        assert np.array_equal(path_interp(z, x1, 0.0), z)
        assert np.array_equal(path_interp(z, x1, 1.0), x1)

    def test_midpoint(self):
        z = np.array([[0.0, 0.0]])
        x1 = np.array([[2.0, 4.0]])
        assert np.array_equal(path_interp(z, x1, 0.5), np.array([[1.0, 2.0]]))

    def test_affinity(self):
        rng = Rng(10)
        z = normal_sample(rng, 4, 2)
        x1 = normal_sample(rng, 4, 2)
        for t in (0.1, 0.3, 0.9):
            assert np.allclose(path_interp(z, x1, t) - z, t * (x1 - z),
                               atol=1e-12)

    def test_constant_target_velocity(self):
        rng = Rng(11)
        z = normal_sample(rng, 3, 2)
        x1 = normal_sample(rng, 3, 2)
        # slope of the path between any two times equals x1 - z
        for t1, t2 in [(0.0, 0.25), (0.4, 0.9)]:
            slope = (path_interp(z, x1, t2) - path_interp(z, x1, t1)) / (t2 - t1)
            assert np.allclose(slope, x1 - z, atol=1e-12)


class TestFmLoss:
    def test_perfect_prediction_zero_loss(self):
        net = _small_net()
        z = normal_sample(Rng(1), 6, 2)
        # zero-head net predicts v = 0, so target 0 (x1 = z) gives loss 0
        assert fm_loss(net, z, z.copy(), np.zeros(6, dtype=int), 0.5,
                       accumulate=False) == 0.0

    def test_zero_net_unit_target(self):
        net = _small_net()
        z = np.zeros((4, 2))
        x1 = np.tile([[0.6, 0.8]], (4, 1))   # unit-norm target
        loss = fm_loss(net, z, x1, np.zeros(4, dtype=int), 0.5, accumulate=False)
        assert abs(loss - 1.0) < 1e-12

    def test_grads_match_finite_differences(self):
        net = _small_net(12)
        # nonzero head so every layer sees gradient signal
        net.head_W.value[:] = 0.3 * normal_sample(Rng(13), 8, 2)
        net.head_b.value[:] = 0.1 * normal_sample(Rng(14), 1, 2)
        rng = Rng(15)
        z = normal_sample(rng, 6, 2)
        x1 = normal_sample(rng, 6, 2)
        y = np.array([0, 1, 2, 0, 1, 2])   # include the null row
        t = rng.uniform(6)
        params = net.params()

        def loss_fn():
            return fm_loss(net, z, x1, y, t, accumulate=False)

        def grad_fn():
            for p in params:
                p.zero_grad()
            fm_loss(net, z, x1, y, t)

        assert gradient_check(loss_fn, grad_fn, params, Rng(16),
                              n_probes=100) < 1e-4


class TestTrainFlow:
    def test_zero_steps_is_identity(self):
        net = _small_net(20)
        data = gen_two_mode(64, Rng(21))
        before = [p.value.copy() for p in net.params()]
        cfg = FlowTrainConfig(steps=0, batch=16, lr=1e-3)
        history = train_flow(net, data, cfg, Rng(22))
        assert history == []
        for p, b in zip(net.params(), before):
            assert np.array_equal(p.value, b)

    def test_stage2_requires_prior(self):
        cfg = FlowTrainConfig(steps=1, batch=8, lr=1e-3, regime="pguide_stage2")
        with pytest.raises(ValueError, match="prior"):
            train_flow(_small_net(), gen_two_mode(32, Rng(0)), cfg, Rng(1))

    def test_baseline_requires_dropout(self):
        cfg = FlowTrainConfig(steps=1, batch=8, lr=1e-3, regime="cfm_baseline",
                              cond_dropout_p=0.0)
        with pytest.raises(ValueError, match="cond_dropout_p"):
            train_flow(_small_net(), gen_two_mode(32, Rng(0)), cfg, Rng(1))

    def test_dropout_rate_through_training(self):
        # fraction of null labels actually fed to the net over 1e5 draws
        class CountingNet(VelocityNet):
            null_seen = 0
            total_seen = 0

            def forward_cached(self, x, t, y):
                v, cache = super().forward_cached(x, t, y)
                CountingNet.null_seen += int(np.sum(cache[2] == self.null_id))
                CountingNet.total_seen += len(cache[2])
                return v, cache

        net = CountingNet(dim=2, n_classes=2, hidden=(4,), embed_dim=2,
                          fourier=1, rng=Rng(70))
        data = gen_two_mode(512, Rng(71))
        cfg = FlowTrainConfig(steps=400, batch=250, lr=1e-4,
                              regime="cfm_baseline", cond_dropout_p=0.1)
        train_flow(net, data, cfg, Rng(72))
        assert CountingNet.total_seen == 100_000
        frac = CountingNet.null_seen / CountingNet.total_seen
        assert abs(frac - 0.1) < 0.01

    def test_dropout_reaches_null_embedding(self):
        net = _small_net(23)
        net.head_W.value[:] = 0.1 * normal_sample(Rng(24), 8, 2)
        data = gen_two_mode(256, Rng(25))
        cfg = FlowTrainConfig(steps=60, batch=64, lr=1e-3,
                              regime="cfm_baseline", cond_dropout_p=0.2)
        null_row_before = net.class_embed.value[net.null_id].copy()
        train_flow(net, data, cfg, Rng(26))
        assert not np.array_equal(net.class_embed.value[net.null_id],
                                  null_row_before)

    def test_deterministic_history(self):
        def run():
            net = _small_net(30)
            data = gen_two_mode(128, Rng(31))
            cfg = FlowTrainConfig(steps=25, batch=32, lr=1e-3)
            return train_flow(net, data, cfg, Rng(32))

        assert run() == run()

    def test_stage2_beats_target_variance_floor(self):
        data = gen_two_mode(4000, Rng(40))
        prior = PriorModel(2, 2, variance_mode="fixed-unit")
        train_prior(prior, data, epochs=200, lr=0.05)
        net = VelocityNet(dim=2, n_classes=2, hidden=(32, 32), embed_dim=8,
                          fourier=4, rng=Rng(41))
        cfg = FlowTrainConfig(steps=1500, batch=128, lr=2e-3,
                              regime="pguide_stage2")
        history = train_flow(net, data, cfg, Rng(42), prior=prior)
        # oracle floor: variance of the regression targets themselves,
        # i.e. the loss of the best label-blind constant predictor
        rng = Rng(43)
        idx = rng.integers(20_000, len(data))
        eps = normal_sample(rng, 20_000, 2)
        mu, sigma = prior_rows(prior, data.y[idx])
        targets = data.x[idx] - (mu + sigma * eps)
        floor = float(((targets - targets.mean(0)) ** 2).sum(axis=1).mean())
        assert float(np.mean(history[-100:])) < floor


class TestFlowCheckpoint:
    def test_roundtrip(self, tmp_path):
        net = _small_net(50)
        net.head_W.value[:] = normal_sample(Rng(51), 8, 2)
        path = tmp_path / "flow.json"
        save_flow(net, path, config_echo={"regime": "cfm_baseline"})
        loaded, echo = load_flow(path)
        assert echo == {"regime": "cfm_baseline"}
        x = normal_sample(Rng(52), 3, 2)
        assert np.array_equal(loaded.forward(x, 0.5, 1), net.forward(x, 0.5, 1))

    def test_bad_magic_names_file(self, tmp_path):
        path = tmp_path / "flow.json"
        path.write_text('{"magic": "WRONG"}')
        with pytest.raises(CheckpointError, match="flow.json"):
            load_flow(path)

    def test_deterministic_bytes(self, tmp_path):
        net = _small_net(53)
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        save_flow(net, a)
        save_flow(net, b)
        assert a.read_bytes() == b.read_bytes()
