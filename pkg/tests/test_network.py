"""Layer mechanics, presets, training step algebra and weight persistence."""

import numpy as np
import pytest

from radarnet.layers import Conv2d, Dropout, Linear, MaxPool2d
from radarnet.network import (
    Network,
    StaleCacheError,
    TrainConfig,
    WeightShapeError,
    WeightsFormatError,
    build_network,
    gradient_check,
    load_weights,
    loss_and_grad,
    predict,
    save_weights,
    sgd_step,
)
from radarnet.radar import VehicleClass

MINI_SHAPE = (3, 257, 32)


def _mini(seed=0, precision="standard"):
    return build_network("mini", MINI_SHAPE, seed=seed, precision=precision)


def _x32(seed=0, shape=MINI_SHAPE):
    return np.random.default_rng(seed).normal(size=shape).astype(np.float32)


class TestBuildNetwork:
    def test_full_preset_shape_chain(self):
        net = build_network("full", (3, 227, 227), seed=0)
        chain = dict(net.shape_chain())
        assert chain["conv1"] == (96, 55, 55)
        assert chain["pool1"] == (96, 27, 27)
        assert chain["conv2"] == (256, 27, 27)
        assert chain["pool2"] == (256, 13, 13)
        assert chain["conv3"] == (384, 13, 13)
        assert chain["conv4"] == (384, 13, 13)
        assert chain["conv5"] == (256, 13, 13)
        assert chain["pool5"] == (256, 6, 6)
        assert chain["fc6"] == (4096,)
        assert chain["fc7"] == (4096,)
        assert chain["fc8"] == (6,)

    def test_full_preset_kernel_counts(self):
        net = build_network("full", (3, 227, 227), seed=0)
        counts = [net.layer_named(f"conv{i}").out_channels for i in range(1, 6)]
        assert counts == [96, 256, 384, 384, 256]
        assert net.layer_named("fc6").in_features == 9216

    def test_mini_preset_output(self):
        net = _mini()
        scores, _ = net.forward(_x32())
        assert scores.shape == (6,)

    def test_bad_preset_and_shapes(self):
        with pytest.raises(ValueError):
            build_network("huge", MINI_SHAPE)
        with pytest.raises(ValueError):
            build_network("mini", (1, 257, 32))
        with pytest.raises(ValueError, match="conv1"):
            build_network("full", (3, 8, 8))  # too small for the stride chain

    def test_seed_determinism(self):
        a, b = _mini(seed=4), _mini(seed=4)
        for name, arr in a.params().items():
            np.testing.assert_array_equal(arr, b.params()[name])
        c = _mini(seed=5)
        assert any(
            not np.array_equal(arr, c.params()[name]) for name, arr in a.params().items()
        )


class TestForward:
    def test_probabilities(self):
        net = _mini()
        for seed in range(5):
            scores, _ = net.forward(_x32(seed))
            assert scores.sum() == pytest.approx(1.0, abs=1e-6)
            assert np.all(scores > 0.0)

    def test_shift_invariance_of_softmax(self):
        from radarnet.layers import Softmax

        sm = Softmax("s")
        logits = np.array([1.0, -2.0, 0.5, 3.0, 0.0, -1.0])
        a, _ = sm.forward(logits)
        b, _ = sm.forward(logits + 123.456)
        np.testing.assert_allclose(a, b, atol=1e-6)

    def test_identity_conv(self):
        conv = Conv2d("c", 1, 1, 1, 1, 0, rng=np.random.default_rng(0))
        conv.W[...] = 1.0
        conv.b[...] = 0.0
        x = np.random.default_rng(1).normal(size=(1, 5, 7)).astype(np.float32)
        y, _ = conv.forward(x)
        np.testing.assert_allclose(y, x, rtol=1e-6)

    def test_shape_mismatch_rejected(self):
        net = _mini()
        with pytest.raises(ValueError):
            net.forward(np.zeros((3, 10, 10), dtype=np.float32))

    def test_eval_deterministic_train_dropout_varies(self):
        net = _mini()
        x = _x32()
        a, _ = net.forward(x, mode="eval")
        b, _ = net.forward(x, mode="eval")
        np.testing.assert_array_equal(a, b)
        t1, _ = net.forward(x, mode="train", rng=1)
        t2, _ = net.forward(x, mode="train", rng=2)
        assert not np.array_equal(t1, t2)
        t1b, _ = net.forward(x, mode="train", rng=1)
        np.testing.assert_array_equal(t1, t1b)


class TestLossAndGrad:
    def test_uniform_scores(self):
        loss, grad = loss_and_grad(np.full(6, 1 / 6), 0)
        assert loss == pytest.approx(np.log(6.0), abs=1e-12)
        np.testing.assert_allclose(grad, np.full(6, 1 / 6) - np.eye(6)[0])

    def test_certain_correct(self):
        scores = np.zeros(6)
        scores[2] = 1.0
        loss, grad = loss_and_grad(scores, 2)
        assert loss == 0.0
        np.testing.assert_array_equal(grad, np.zeros(6))

    def test_clamped_log(self):
        scores = np.zeros(6)
        scores[1] = 1.0
        loss, _ = loss_and_grad(scores, 0)   # p_true = 0 clamps
        assert np.isfinite(loss)

    def test_accepts_vehicle_class(self):
        loss_a, _ = loss_and_grad(np.full(6, 1 / 6), VehicleClass.CAR)
        loss_b, _ = loss_and_grad(np.full(6, 1 / 6), 0)
        assert loss_a == loss_b

    def test_dlogits_matches_finite_differences(self):
        # differentiate loss(softmax(logits)) numerically w.r.t. the logits
        rng = np.random.default_rng(8)
        logits = rng.normal(size=6)
        true = 3

        def loss_of(z):
            e = np.exp(z - z.max())
            p = e / e.sum()
            return -np.log(max(p[true], 1e-12))

        e_z = np.exp(logits - logits.max())
        probs = e_z / e_z.sum()
        _, analytic = loss_and_grad(probs, true)
        eps = 1e-6
        for i in range(6):
            z = logits.copy()
            z[i] += eps
            hi = loss_of(z)
            z[i] -= 2 * eps
            lo = loss_of(z)
            numeric = (hi - lo) / (2 * eps)
            assert abs(numeric - analytic[i]) < 1e-6


class TestBackward:
    def test_zero_dlogits_zero_grads(self):
        net = _mini()
        _, cache = net.forward(_x32())
        grads = net.backward(cache, np.zeros(6))
        assert all(np.all(g == 0.0) for g in grads.values())

    def test_stale_cache_rejected(self):
        net = _mini()
        _, cache = net.forward(_x32())
        sgd_step(net.params(), {k: np.zeros_like(v) for k, v in net.params().items()}, {}, TrainConfig())
        net.bump_version()
        with pytest.raises(StaleCacheError):
            net.backward(cache, np.zeros(6))

    def test_train_mode_mask_replay_deterministic(self):
        net = _mini()
        x = _x32()

        def run():
            scores, cache = net.forward(x, mode="train", rng=7)
            _, dlogits = loss_and_grad(scores, 1)
            return net.backward(cache, dlogits)

        a, b = run(), run()
        for name in a:
            np.testing.assert_array_equal(a[name], b[name])

    def test_maxpool_routes_gradient_mass(self):
        pool = MaxPool2d("p", kernel=3, stride=2)
        x = np.random.default_rng(3).normal(size=(4, 11, 9))
        y, cache = pool.forward(x)
        dy = np.random.default_rng(4).normal(size=y.shape)
        dx, _ = pool.backward(dy, cache)
        assert dx.shape == x.shape
        assert dx.sum() == pytest.approx(dy.sum(), rel=1e-6)
        # every output gradient lands on exactly one input cell
        ones_dx, _ = pool.backward(np.ones_like(dy), cache)
        assert ones_dx.sum() == pytest.approx(y.size)


class TestDropout:
    def test_eval_identity(self):
        d = Dropout("d", rate=0.5)
        x = np.random.default_rng(0).normal(size=(8, 8)).astype(np.float32)
        y, _ = d.forward(x, train=False)
        np.testing.assert_array_equal(y, x)

    def test_inverted_scaling_preserves_mean(self):
        # E[mask] = 1, Var[mask] = (1-p)/p per unit at p = 0.5
        d = Dropout("d", rate=0.5)
        x = np.ones((40,), dtype=np.float64)
        rng = np.random.default_rng(11)
        total = np.zeros_like(x)
        n = 10_000
        for _ in range(n):
            y, _ = d.forward(x, train=True, rng=rng)
            total += y
        mean = total / n
        se = np.sqrt((1 - 0.5) / 0.5 / n)
        assert np.all(np.abs(mean - 1.0) < 3 * se)

    def test_train_needs_rng(self):
        d = Dropout("d", rate=0.5)
        with pytest.raises(ValueError):
            d.forward(np.ones(4), train=True, rng=None)


class TestSgdStep:
    def test_single_step(self):
        params = {"w": np.array([1.0])}
        grads = {"w": np.array([0.5])}
        vel = {}
        cfg = TrainConfig(learning_rate=0.1, momentum=0.9, weight_decay=0.0)
        sgd_step(params, grads, vel, cfg)
        assert vel["w"][0] == pytest.approx(-0.05)
        assert params["w"][0] == pytest.approx(0.95)
        sgd_step(params, grads, vel, cfg)
        assert vel["w"][0] == pytest.approx(-0.095)
        assert params["w"][0] == pytest.approx(0.855)

    def test_decay_only(self):
        params = {"w": np.array([1.0])}
        grads = {"w": np.array([0.0])}
        cfg = TrainConfig(learning_rate=0.0001, momentum=0.9, weight_decay=0.0005)
        sgd_step(params, grads, {}, cfg)
        assert params["w"][0] == pytest.approx(1.0 - 5e-8, abs=1e-12)

    def test_nonfinite_gradient_aborts(self):
        params = {"w": np.array([1.0])}
        grads = {"w": np.array([np.nan])}
        with pytest.raises(FloatingPointError):
            sgd_step(params, grads, {}, TrainConfig())

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(learning_rate=0.0)
        with pytest.raises(ValueError):
            TrainConfig(momentum=1.0)
        with pytest.raises(ValueError):
            TrainConfig(weight_decay=-1.0)


class TestGradientCheck:
    def test_high_precision(self):
        net = _mini(seed=1, precision="high")
        x = np.random.default_rng(3).normal(size=MINI_SHAPE)
        err = gradient_check(net, x, 2, epsilon=1e-4, num_params=200, seed=5)
        assert err < 1e-5

    def test_standard_precision(self):
        net = _mini(seed=1, precision="standard")
        x = _x32(3)
        err = gradient_check(net, x, 2, epsilon=1e-4, num_params=200, seed=5)
        assert err < 1e-3

    def test_smooth_network(self):
        # no rectifier, no pooling: conv -> fc -> fc -> softmax stays smooth
        from radarnet.layers import Softmax

        rng = np.random.default_rng(2)
        layers = [
            Conv2d("conv1", 3, 4, 3, 2, 1, dtype=np.float64, rng=rng),
            Linear("fc1", 4 * 5 * 4, 16, dtype=np.float64, rng=rng),
            Linear("fc2", 16, 6, dtype=np.float64, rng=rng),
            Softmax("softmax"),
        ]
        net = Network(layers, (3, 9, 7), 6, precision="high")
        x = np.random.default_rng(6).normal(size=(3, 9, 7))
        err = gradient_check(net, x, 4, epsilon=1e-5, num_params=200, seed=9)
        assert err < 1e-7


class TestPredict:
    def test_argmax(self):
        net = _mini()
        label, scores = predict(net, _x32())
        assert label.index == int(np.argmax(scores))

    def test_tie_breaks_to_lowest_index(self):
        # zero the output layer: logits all equal, probabilities exactly 1/6
        net = _mini()
        fc2 = net.layer_named("fc2")
        fc2.W[...] = 0.0
        fc2.b[...] = 0.0
        net.bump_version()
        label, scores = predict(net, _x32())
        np.testing.assert_array_equal(scores, np.full(6, np.float32(1 / 6), dtype=np.float32))
        assert label is VehicleClass.CAR

    def test_constant_logit_shift_invariance(self):
        net = _mini()
        x = _x32(4)
        label1, s1 = predict(net, x)
        fc2 = net.layer_named("fc2")
        fc2.b += np.float32(3.0)   # shifts all logits equally
        net.bump_version()
        label2, s2 = predict(net, x)
        assert label1 == label2
        np.testing.assert_allclose(s1, s2, atol=1e-6)


class TestWeightPersistence:
    def test_roundtrip_bit_exact(self, tmp_path):
        net = _mini(seed=7)
        path = tmp_path / "w.rdw"
        save_weights(net, path)
        other = _mini(seed=8)
        load_weights(other, path)
        for name, arr in net.params().items():
            np.testing.assert_array_equal(arr, other.params()[name])
        save_weights(other, tmp_path / "w2.rdw")
        assert path.read_bytes() == (tmp_path / "w2.rdw").read_bytes()

    def test_partial_load_reinit_fc(self, tmp_path):
        net = _mini(seed=7)
        path = tmp_path / "w.rdw"
        save_weights(net, path)
        other = _mini(seed=8)
        before_fc = other.params()["fc1.W"].copy()
        loaded = load_weights(other, path, reinit_fc=True)
        assert all(not n.startswith("fc") for n in loaded)
        np.testing.assert_array_equal(other.params()["conv1.W"], net.params()["conv1.W"])
        np.testing.assert_array_equal(other.params()["fc1.W"], before_fc)

    def test_shape_mismatch_names_layer(self, tmp_path):
        net = _mini(seed=7)
        path = tmp_path / "w.rdw"
        save_weights(net, path)
        mismatched = build_network("mini", (3, 129, 32), seed=0)
        with pytest.raises(WeightShapeError, match="fc1"):
            load_weights(mismatched, path)

    def test_conv_shape_mismatch_names_conv1(self, tmp_path):
        import struct as st

        net = _mini(seed=7)
        # hand-build a file whose conv1.W record has a wrong shape
        records = {name: arr for name, arr in net.params().items()}
        blob = [b"RDW1", st.pack("<I", len(records))]
        for name in sorted(records):
            arr = np.ascontiguousarray(records[name], dtype="<f4")
            if name == "conv1.W":
                arr = arr[:, :, :3, :3].copy()
            enc = name.encode()
            blob += [st.pack("<I", len(enc)), enc, st.pack("<I", arr.ndim),
                     st.pack(f"<{arr.ndim}I", *arr.shape), arr.tobytes()]
        path = tmp_path / "bad.rdw"
        path.write_bytes(b"".join(blob))
        with pytest.raises(WeightShapeError, match="conv1"):
            load_weights(_mini(seed=1), path)

    def test_bad_magic(self, tmp_path):
        (tmp_path / "w.rdw").write_bytes(b"ZZZZ betrayal")
        with pytest.raises(WeightsFormatError):
            load_weights(_mini(), tmp_path / "w.rdw")


class TestTrainingSanity:
    def test_loss_monotone_on_fixed_batch(self):
        # deterministic full-batch descent: dropout off, no momentum, no decay
        net = build_network("mini", MINI_SHAPE, seed=3, dropout_rate=0.0)
        rng = np.random.default_rng(12)
        batch = [(rng.normal(size=MINI_SHAPE).astype(np.float32) * 5, i) for i in range(6)]
        cfg = TrainConfig(learning_rate=1e-4, momentum=0.0, weight_decay=0.0)
        velocity = {}

        def batch_loss_and_grads():
            total, grads_acc = 0.0, None
            for x, label in batch:
                scores, cache = net.forward(x, mode="train", rng=0)
                loss, dlogits = loss_and_grad(scores, label)
                total += loss / len(batch)
                g = net.backward(cache, dlogits)
                if grads_acc is None:
                    grads_acc = {k: v / len(batch) for k, v in g.items()}
                else:
                    for k in grads_acc:
                        grads_acc[k] += g[k] / len(batch)
            return total, grads_acc

        losses = []
        for _ in range(50):
            loss, grads = batch_loss_and_grads()
            losses.append(loss)
            sgd_step(net.params(), grads, velocity, cfg)
            net.bump_version()
        diffs = np.diff(losses)
        assert np.all(diffs <= 1e-12), f"loss increased: {losses}"
