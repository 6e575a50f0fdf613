import numpy as np
import pytest

from helpers import random_network, random_spikes
from mfpq.analysis import (
    ContributionStats,
    account_memory,
    all_spike_inputs,
    bench_parallel_vs_serial,
    contribution_stats,
    count_ops,
    verify_network,
)
from mfpq.network import MFPNetwork
from mfpq.neurons import NeuronConfig


def test_memory_single_layer_example():
    base = account_memory([(100, 100)], "fp32-lif", 4)
    mfp = account_memory([(100, 100)], "mfp-binary", 4)
    assert base.total_bits == 323_200
    assert mfp.total_bits == 10_000 + 32 + 320 + 128 == 10_480
    assert mfp.ratio == pytest.approx(323_200 / 10_480)
    assert round(mfp.ratio, 1) == 30.8
    assert base.ratio == 1.0


def test_memory_parts_sum_and_membrane_terms():
    arch = [(784, 300), (300, 100), (100, 10)]
    for scheme in ("fp32-lif", "mfp-binary"):
        rep = account_memory(arch, scheme, 6)
        assert rep.total_bits == rep.weight_bits + rep.membrane_bits + rep.aux_bits
        assert rep.total_bits == sum(l.total_bits for l in rep.layers)
    assert account_memory(arch, "fp32-lif", 6).membrane_bits == 32 * 410
    assert account_memory(arch, "mfp-binary", 6).membrane_bits == 0


def test_memory_size_list_equals_pairs():
    assert account_memory([10, 20, 5], "mfp-binary", 3) == account_memory([(10, 20), (20, 5)], "mfp-binary", 3)


def test_memory_empty_architecture():
    with pytest.raises(ValueError):
        account_memory([], "fp32-lif", 4)
    with pytest.raises(ValueError):
        account_memory([(2, 2)], "int8", 4)


def test_memory_weight_dominated_ratio():
    rep = account_memory([(1024, 1024)], "mfp-binary", 10)
    assert rep.weight_bits >= 10**6
    assert 28 <= rep.ratio <= 34


def test_memory_ratio_tends_to_32():
    ratios = [account_memory([(n, n)], "mfp-binary", 10).ratio for n in (64, 256, 1024, 4096, 16384)]
    gaps = [abs(r - 32) for r in ratios]
    assert all(a > b for a, b in zip(gaps, gaps[1:]))
    assert gaps[-1] < 0.01


def test_memory_text_mentions_mb_convention():
    assert "MB = 2^20 bytes" in account_memory([(4, 4)], "mfp-binary", 2).to_text()


def test_contribution_fraction_edges():
    st = ContributionStats(np.zeros(3), np.zeros(3))
    assert st.history_fraction == 0.0
    assert st.per_step_fraction.tolist() == [0.0, 0.0, 0.0]


def test_contribution_tau_zero():
    rng = np.random.default_rng(0)
    net = random_network(rng, 2, 4)
    x = random_spikes(rng, (4, 16, net.sizes[0]))
    for bits in (None, 8, 2):
        assert contribution_stats(net, x, bits, tau=0.0).history_fraction == 0.0


def test_contribution_zero_input_is_all_history():
    rng = np.random.default_rng(1)
    net = random_network(rng, 1, 5, cfg=NeuronConfig(tau=0.9, v_th=5.0))
    x = np.zeros((5, 4, net.sizes[0]), np.uint8)
    st = contribution_stats(net, x, None, initial_u=0.5)
    assert st.history_fraction == 1.0
    assert np.all(st.per_step_fraction == 1.0)


def test_contribution_fraction_bounded():
    rng = np.random.default_rng(2)
    for _ in range(10):
        net = random_network(rng, 2, 4)
        x = random_spikes(rng, (4, 8, net.sizes[0]))
        for bits in (None, 8, 4, 2):
            f = contribution_stats(net, x, bits).history_fraction
            assert 0.0 <= f <= 1.0


def test_ops_zero_input():
    rng = np.random.default_rng(3)
    net = random_network(rng, 2, 3)
    ops = count_ops(net, np.zeros((3, 2, net.sizes[0]), np.uint8))
    assert ops.ac_ops == 0


def test_ops_single_spike():
    net = MFPNetwork.init([5, 7], 1, NeuronConfig(), seed=0)
    x = np.zeros((1, 1, 5), np.uint8)
    x[0, 0, 2] = 1
    assert count_ops(net, x, "streaming").ac_ops == 7


def test_ops_recount_from_spike_trains():
    rng = np.random.default_rng(4)
    for mode in ("parallel", "streaming", "folded-diagonal"):
        net = random_network(rng, 3, 4)
        x = random_spikes(rng, (4, 3, net.sizes[0]))
        res = net.forward(x, mode)
        trains = [x] + res.spikes[:-1]
        expected = sum(int(s.sum()) * l.out_features for s, l in zip(trains, net.layers))
        assert count_ops(net, x, mode).ac_ops == expected


def test_all_spike_inputs():
    x = all_spike_inputs(2, 2)
    assert x.shape == (2, 16, 2)
    assert len({x[:, i].tobytes() for i in range(16)}) == 16


def test_verify_network_streaming_clean():
    rng = np.random.default_rng(5)
    net = random_network(rng, 2, 5)
    mismatches, first = verify_network(net, "streaming", 20, seed=1, batch=2)
    assert mismatches == 0 and first is None


def test_bench_small():
    net = MFPNetwork.init([16, 16, 16], 4, seed=0)
    res = bench_parallel_vs_serial(net, 4, batch=8, repeats=5)
    assert res.outputs_match
    assert res.parallel_ms > 0 and res.serial_ms > 0
    with pytest.raises(ValueError):
        bench_parallel_vs_serial(net, 4, batch=8, repeats=4)


def test_bench_single_step_is_near_parity():
    net = MFPNetwork.init([64, 64, 64], 1, seed=0)
    res = bench_parallel_vs_serial(net, 1, batch=64, repeats=15)
    assert res.outputs_match
    assert 1 / 3 < res.speedup < 3


def test_bench_parallel_time_grows_with_batch():
    net = MFPNetwork.init([128, 128, 128], 8, seed=0)
    small = bench_parallel_vs_serial(net, 8, batch=64, repeats=9)
    large = bench_parallel_vs_serial(net, 8, batch=512, repeats=9)
    assert large.parallel_ms >= small.parallel_ms
