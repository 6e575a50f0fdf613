import numpy as np

from mfpq.network import MFPNetwork
from mfpq.neurons import MFPLayer, NeuronConfig, TemporalMixMatrix
from mfpq.numeric import LowerTriangular
from mfpq.quantization import binarize


def random_mix(rng, t_steps, dtype=np.float64, diag_low=0.2):
    dense = np.tril(rng.uniform(-1.0, 1.0, size=(t_steps, t_steps)))
    np.fill_diagonal(dense, rng.uniform(diag_low, 1.5, size=t_steps) * rng.choice([-1, 1], size=t_steps))
    return TemporalMixMatrix(LowerTriangular.from_dense(dense.astype(dtype)))


def random_network(rng, n_layers, t_steps, max_width=32, dtype=np.float64, cfg=None):
    sizes = [int(rng.integers(1, max_width + 1)) for _ in range(n_layers + 1)]
    layers = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        latent = rng.uniform(-1, 1, size=(fan_out, fan_in)).astype(dtype)
        layers.append(MFPLayer(binarize(latent), random_mix(rng, t_steps, dtype)))
    cfg = cfg or NeuronConfig(tau=0.5, v_th=float(rng.uniform(0.1, 1.5)))
    return MFPNetwork(sizes, t_steps, cfg, layers, seed=0)


def random_spikes(rng, shape, density=None):
    p = rng.uniform(0.1, 0.9) if density is None else density
    return (rng.random(shape) < p).astype(np.uint8)


# criterion label -> (passed, detail); printed by conftest at session end
ACCEPTANCE_RESULTS = {}
