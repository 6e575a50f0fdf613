import numpy as np
import pytest

from helpers import random_spikes
from mfpq.io import checkpoint_bytes, gen_synthetic
from mfpq.network import MFPNetwork
from mfpq.neurons import NeuronConfig, TemporalMixMatrix
from mfpq.numeric import LowerTriangular
from mfpq.quantization import binarize
from mfpq.training import (
    Dataset,
    LayerCache,
    SurrogateSpec,
    TrainConfig,
    backward_parallel,
    cross_entropy,
    forward_train,
    loss_and_grads,
    sgd_step,
    smooth_spike,
    surrogate_grad,
    train,
)


def test_surrogate_window():
    cfg = NeuronConfig(v_th=1.0)
    spec = SurrogateSpec(0.5)
    assert surrogate_grad(np.array([1.0]), cfg, spec)[0] == 1
    assert surrogate_grad(np.array([1.5, 0.5]), cfg, spec).tolist() == [0, 0]
    assert surrogate_grad(np.array([1.4999]), cfg, spec)[0] == 1


def test_surrogate_is_derivative_of_scaled_ramp():
    cfg = NeuronConfig(v_th=0.7)
    spec = SurrogateSpec(1.0)
    a = spec.width
    rng = np.random.default_rng(0)
    v = rng.uniform(-2, 3.5, 5000)
    v = v[np.abs(np.abs(v - cfg.v_th) - a) > 1e-3]

    def ramp(x):
        return 2 * a * np.clip((x - cfg.v_th + a) / (2 * a), 0, 1)

    h = 1e-6
    fd = (ramp(v + h) - ramp(v - h)) / (2 * h)
    np.testing.assert_allclose(surrogate_grad(v, cfg, spec), fd, atol=1e-6)
    np.testing.assert_allclose(smooth_spike(v, cfg, spec), ramp(v), atol=1e-15)


def one_neuron_cache(latent, m, s, through_spike):
    w = binarize(np.array([[latent]]))
    mix = TemporalMixMatrix(LowerTriangular(1, [m]))
    x = np.array([[[s]]], dtype=np.float64)
    h = w.scale * m * w.signs[0, 0] * s
    return LayerCache(x, np.array([[[h]]]), w.scale * w.signs.astype(float), w.latent, mix.dense(), through_spike)


def test_backward_zero_upstream_gives_zero():
    rng = np.random.default_rng(1)
    net = MFPNetwork.init([6, 5, 3], 4, seed=2, dtype=np.float64)
    x = random_spikes(rng, (4, 3, 6))
    cache = forward_train(net, x)
    for c in cache.layers:
        g_lat, g_mix, g_in = backward_parallel(c, np.zeros_like(c.pre_activation), net.cfg)
        assert not g_lat.any() and not g_mix.any() and not g_in.any()


def test_backward_single_neuron_readout():
    # H = m * alpha * sign * s; hand chain rule with alpha = 0.5, m = 2, s = 1, upstream 3
    cache = one_neuron_cache(0.5, 2.0, 1.0, through_spike=False)
    g_lat, g_mix, g_in = backward_parallel(cache, np.array([[[3.0]]]), NeuronConfig())
    assert g_lat.tolist() == [[6.0]]
    assert g_mix.tolist() == [1.5]
    assert g_in.ravel().tolist() == [3.0]


def test_backward_single_neuron_through_spike():
    cfg = NeuronConfig(v_th=1.0)
    inside = one_neuron_cache(0.5, 2.0, 1.0, through_spike=True)   # H = 1.0, in the window
    g_lat, _, _ = backward_parallel(inside, np.array([[[3.0]]]), cfg)
    assert g_lat.tolist() == [[6.0]]
    outside = one_neuron_cache(0.5, 8.0, 1.0, through_spike=True)  # H = 4.0, outside
    g_lat, g_mix, g_in = backward_parallel(outside, np.array([[[3.0]]]), cfg)
    assert g_lat.tolist() == [[0.0]] and g_mix.tolist() == [0.0] and g_in.ravel().tolist() == [0.0]


def test_backward_ste_clips_large_latent():
    cache = one_neuron_cache(1.5, 2.0, 1.0, through_spike=False)
    g_lat, _, _ = backward_parallel(cache, np.array([[[3.0]]]), NeuronConfig())
    assert g_lat.tolist() == [[0.0]]


def test_backward_requires_cache():
    with pytest.raises(ValueError):
        backward_parallel(None, np.zeros(1), NeuronConfig())


def test_mix_grads_only_lower_triangle():
    net = MFPNetwork.init([4, 3, 2], 5, seed=0, dtype=np.float64)
    x = random_spikes(np.random.default_rng(0), (5, 2, 4))
    _, grads, _ = loss_and_grads(net, x, np.array([0, 1]))
    for i in range(2):
        assert grads[f"layers.{i}.mix"].shape == (15,)
        assert net.parameters()[f"layers.{i}.mix"].shape == (15,)


def finite_difference_check(net, x, y, step=1e-5):
    loss, grads, _ = loss_and_grads(net, x, y, smooth=True)

    def f():
        cache = forward_train(net, x, smooth=True)
        return cross_entropy(cache.logits, y)[0]

    worst = 0.0
    for name, p in net.parameters().items():
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + step
            up = f()
            p[idx] = orig - step
            down = f()
            p[idx] = orig
            fd = (up - down) / (2 * step)
            worst = max(worst, abs(grads[name][idx] - fd) / max(1e-8, abs(fd)))
    return worst


def test_gradient_check_small():
    rng = np.random.default_rng(3)
    net = MFPNetwork.init([5, 4, 3], 3, seed=1, dtype=np.float64)
    for layer in net.layers:
        layer.mix.tri.entries[:] = rng.uniform(0.3, 1.2, size=6)
    x = random_spikes(rng, (3, 4, 5))
    assert finite_difference_check(net, x, rng.integers(0, 3, 4)) < 1e-4


def test_sgd_plain_step():
    p = {"w": np.array([1.0, 2.0])}
    v = {}
    sgd_step(p, {"w": np.array([0.5, -1.0])}, lr=1.0, momentum=0.0, velocity=v)
    assert p["w"].tolist() == [0.5, 3.0]


def test_sgd_momentum_recursion():
    p = {"w": np.array([0.0])}
    v = {}
    g = np.array([1.0])
    sgd_step(p, {"w": g}, lr=0.1, momentum=0.9, velocity=v)
    sgd_step(p, {"w": g}, lr=0.1, momentum=0.9, velocity=v)
    # v1 = 1, v2 = 0.9 + 1 = 1.9, p = -0.1 * (1 + 1.9)
    assert v["w"][0] == pytest.approx(1.9, abs=1e-15)
    assert p["w"][0] == pytest.approx(-0.29, abs=1e-15)


def test_sgd_clamps_mix_diagonal():
    mix = np.array([1e-5, 0.3, -2e-5], dtype=np.float64)  # packed order-2: (0,0), (1,0), (1,1)
    p = {"layers.0.mix": mix}
    sgd_step(p, {"layers.0.mix": np.zeros(3)}, lr=0.1, momentum=0.0, velocity={})
    assert p["layers.0.mix"].tolist() == [1e-3, 0.3, -1e-3]


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(momentum=1.0)
    with pytest.raises(ValueError):
        TrainConfig(loss="tet")


def test_train_zero_lr_leaves_model_unchanged():
    data = gen_synthetic(6, 32, seed=1, t_steps=3)
    net = MFPNetwork.init([6, 5, 2], 3, seed=4)
    before = checkpoint_bytes(net)
    net, metrics = train(net, data, TrainConfig(lr=0.0, epochs=1, batch=8))
    assert checkpoint_bytes(net) == before
    assert len(metrics) == 1 and set(metrics[0]) == {"epoch", "split", "loss", "accuracy", "wall_ms"}


def test_train_is_deterministic():
    data = gen_synthetic(8, 64, seed=3, t_steps=3)
    runs = []
    for _ in range(2):
        net = MFPNetwork.init([8, 6, 2], 3, seed=7)
        net, metrics = train(net, data, TrainConfig(lr=0.05, epochs=3, batch=16, seed=7))
        runs.append((checkpoint_bytes(net), [(m["loss"], m["accuracy"]) for m in metrics]))
    assert runs[0] == runs[1]


def test_train_rejects_bad_data():
    net = MFPNetwork.init([4, 3, 2], 2, seed=0)
    with pytest.raises(ValueError):
        train(net, Dataset(np.zeros((2, 0, 4)), np.zeros(0)), TrainConfig())
    with pytest.raises(ValueError):
        train(net, Dataset(np.zeros((2, 3, 4)), np.array([0, 1, 2])), TrainConfig())
