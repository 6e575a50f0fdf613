"""Run one binary layer two ways and check the spike trains agree bit for bit.

The parallel form mixes all timesteps at once through a lower-triangular
matrix. The streaming form keeps one accumulator per future step and never
stores a membrane potential.
"""

import numpy as np

from mfpq import NeuronConfig, binarize
from mfpq.neurons import StreamingState, TemporalMixMatrix, mfp_parallel_forward, mfp_streaming_step

rng = np.random.default_rng(0)
T, batch, n_in, n_out = 6, 3, 12, 5
cfg = NeuronConfig(v_th=1.0)

layer = binarize(rng.uniform(-1, 1, (n_out, n_in)))
mix = TemporalMixMatrix.lif_like(T, tau0=0.5)
print("mixing matrix (LIF-like start point):")
print(np.round(mix.dense(), 3))

x = (rng.random((T, batch, n_in)) < 0.4).astype(np.uint8)

par_spikes, _ = mfp_parallel_forward(layer, mix, x, cfg)

state = StreamingState.zeros(T, batch, n_out)
ser_spikes = []
for t in range(T):
    s, _, state = mfp_streaming_step(state, layer, mix, x[t], cfg, t=t)
    ser_spikes.append(s)
ser_spikes = np.stack(ser_spikes)

print("spike counts per step:", par_spikes.sum(axis=(1, 2)))
print("identical:", np.array_equal(par_spikes, ser_spikes))
print("membrane bytes held while streaming:", state.membrane_potential_bytes)
