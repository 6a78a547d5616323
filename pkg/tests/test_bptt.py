import numpy as np
import pytest

from snnbench.bptt import bptt_gradients, input_gradient, train_epoch_bptt
from snnbench.core import LayerParams, LifParams, Network, NetworkConfig, SurrogateSpec, init_network
from snnbench.data import synth_split
from snnbench.training import Gradients, LossSpec, OptimizerSpec, Optimizer, StateMeter, TrainingDiverged

from conftest import random_spikes
from oracles import LD, double_filter, fd_gradients, soft_nll


def soft_net(seed, n_in=4, hidden=(5,), k=3, recurrent=False):
    cfg = NetworkConfig(
        n_in, hidden, k, recurrent=recurrent, lif=LifParams(0.8, 0.7, 0.5), surrogate=SurrogateSpec("sigmoid-soft", 3.0)
    )
    return init_network(cfg, seed)


def rel_err(a, b):
    # coordinates below 1e-9 are dominated by finite-difference round-off
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-9)


class TestFiniteDifferences:
    def test_single_layer_t5(self, rng):
        net = soft_net(0, hidden=())
        x = random_spikes(rng, 5, 4, 0.5)
        g, _ = bptt_gradients(net, x, 1, soft=True, detach_reset=False)
        dw, _ = fd_gradients(net, x, 1)
        assert np.max(rel_err(g.dw[0], dw[0])) <= 1e-4

    def test_two_layer_recurrent_t3(self, rng):
        net = soft_net(1, hidden=(4,), recurrent=True)
        x = random_spikes(rng, 3, 4, 0.5)
        g, _ = bptt_gradients(net, x, 2, soft=True, detach_reset=False)
        dw, dv = fd_gradients(net, x, 2)
        assert np.max(rel_err(g.dv[0], dv[0])) <= 1e-4
        for a, b in zip(g.dw, dw):
            assert np.max(rel_err(a, b)) <= 1e-4

    def test_input_gradient(self, rng):
        net = soft_net(2, hidden=(4,), recurrent=True)
        x = random_spikes(rng, 4, 4, 0.5)
        g = input_gradient(net, x, 0, soft=True, detach_reset=False)
        ws = [l.w.astype(LD) for l in net.layers]
        vs = [None if l.v is None else l.v.astype(LD) for l in net.layers]
        args = (ws, vs, [l.lif for l in net.layers], [l.spiking for l in net.layers], net.surrogate.slope)
        h = 1e-5
        fd = np.zeros_like(x)
        for idx in np.ndindex(x.shape):
            xp, xm = x.astype(LD), x.astype(LD)
            xp[idx] += LD(h)
            xm[idx] -= LD(h)
            fd[idx] = float((soft_nll(*args, xp, 0) - soft_nll(*args, xm, 0)) / (2 * LD(h)))
        np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-10)

    def test_loss_matches_oracle(self, rng):
        net = soft_net(3, hidden=(4,))
        x = random_spikes(rng, 6, 4)
        _, loss = bptt_gradients(net, x, 1, soft=True, detach_reset=False)
        ws = [l.w.astype(LD) for l in net.layers]
        ref = soft_nll(ws, [None, None], [l.lif for l in net.layers], [True, False], net.surrogate.slope, x, 1)
        assert loss == pytest.approx(float(ref), rel=1e-12)


class TestStructure:
    def test_zero_weights_single_layer(self, rng):
        # scores are zero, so dL/dscores = softmax(0) - onehot and the
        # output gradient is that error times the double-filtered input
        lif = LifParams(0.9, 0.5, 1.0)
        net = Network([LayerParams(np.zeros((3, 4)), lif, spiking=False)])
        x = random_spikes(rng, 6, 4)
        g, loss = bptt_gradients(net, x, 2)
        err = np.full(3, 1 / 3) - np.eye(3)[2]
        filt = np.array([double_filter(x[:, j], 0.9, 0.5).sum() for j in range(4)])
        np.testing.assert_allclose(g.dw[0], np.outer(err, filt), atol=1e-12)
        assert loss == pytest.approx(np.log(3))

    def test_zero_weights_hidden_gradient_vanishes(self, rng):
        net = init_network(NetworkConfig(4, (5,), 3), 0)
        for layer in net.layers:
            layer.w[:] = 0
        g, _ = bptt_gradients(net, random_spikes(rng, 6, 4), 0)
        np.testing.assert_array_equal(g.dw[0], 0)
        np.testing.assert_array_equal(g.dw[1], 0)  # no hidden spikes reach the output

    def test_duplicated_batch(self, small_rec_net, rng):
        x = np.stack([random_spikes(rng, 7, 6) for _ in range(3)])
        y = np.array([0, 2, 1])
        g1, l1 = bptt_gradients(small_rec_net, x, y)
        g2, l2 = bptt_gradients(small_rec_net, np.concatenate([x, x]), np.concatenate([y, y]))
        np.testing.assert_allclose(g1.flat(), g2.flat(), rtol=1e-12, atol=1e-15)
        assert l1 == pytest.approx(l2)

    def test_batch_is_mean_of_singles(self, small_net, rng):
        x = np.stack([random_spikes(rng, 7, 6) for _ in range(4)])
        y = np.array([0, 1, 2, 1])
        gb, _ = bptt_gradients(small_net, x, y)
        singles = [bptt_gradients(small_net, x[i], y[i])[0].flat() for i in range(4)]
        np.testing.assert_allclose(gb.flat(), np.mean(singles, axis=0), rtol=1e-10, atol=1e-14)

    def test_shapes_mirror_network(self, small_rec_net, rng):
        g, _ = bptt_gradients(small_rec_net, random_spikes(rng, 5, 6), 1)
        for layer, dw, dv in zip(small_rec_net.layers, g.dw, g.dv):
            assert dw.shape == layer.w.shape
            assert (dv is None) == (layer.v is None)
            if dv is not None:
                assert dv.shape == layer.v.shape
        assert g.is_finite()

    def test_mean_squared_loss(self, small_net, rng):
        g, loss = bptt_gradients(small_net, random_spikes(rng, 5, 6), 1, LossSpec("mean-squared"))
        assert np.isfinite(loss) and g.is_finite()

    def test_trace_memory_linear_in_t(self, small_net, rng):
        counts = []
        for T in (5, 10, 20):
            meter = StateMeter()
            bptt_gradients(small_net, random_spikes(rng, T, 6), 0, meter=meter)
            counts.append(meter.total)
        assert counts[1] == 2 * counts[0] and counts[2] == 4 * counts[0]

    def test_divergence_is_reported(self, rng):
        net = init_network(NetworkConfig(4, (), 2), 0)
        net.layers[0].w[:] = 1e308
        with pytest.raises((TrainingDiverged, ValueError, FloatingPointError)):
            with np.errstate(over="ignore", invalid="ignore"):
                bptt_gradients(net, np.ones((3, 4)), 0)


class TestTraining:
    def setup_method(self):
        self.train, self.test = synth_split(2, 20, 10, 10, 32, jitter=0.05, seed=3)

    def test_lr_zero_keeps_weights(self):
        net = init_network(NetworkConfig(32, (16,), 2), 0)
        before = [l.w.copy() for l in net.layers]
        stats = train_epoch_bptt(net, self.train, OptimizerSpec("sgd", 0.0))
        for b, l in zip(before, net.layers):
            assert b.tobytes() == l.w.tobytes()
        assert 0.0 <= stats.accuracy <= 1.0

    def test_deterministic(self):
        nets = []
        for _ in range(2):
            net = init_network(NetworkConfig(32, (16,), 2, recurrent=True), 0)
            opt = Optimizer(OptimizerSpec("sgd", 0.01))
            for ep in range(3):
                train_epoch_bptt(net, self.train, opt, 8, ep)
            nets.append(net)
        for a, b in zip(*[n.layers for n in nets]):
            assert a.w.tobytes() == b.w.tobytes()

    @pytest.mark.parametrize("kind", ["sgd", "momentum", "adam"])
    def test_loss_decreases(self, kind):
        net = init_network(NetworkConfig(32, (16,), 2, lif=LifParams(0.9, 0.5, 0.9)), 1)
        opt = Optimizer(OptimizerSpec(kind, 0.01 if kind != "adam" else 0.003))
        first = train_epoch_bptt(net, self.train, opt, 8, 0).loss
        for ep in range(1, 10):
            last = train_epoch_bptt(net, self.train, opt, 8, ep).loss
        assert last < first

    def test_gradients_container(self, small_rec_net):
        g = Gradients.zeros_like(small_rec_net)
        assert g.flat().sum() == 0
        g2 = g.scaled(2.0)
        assert g2.flat().shape == g.flat().shape
