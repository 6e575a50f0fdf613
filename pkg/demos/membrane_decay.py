"""How fast a quantized membrane forgets, and how much history survives.

Low bit widths truncate the decayed potential to zero within a step or two,
so the history term stops mattering. That is the argument for dropping the
stored membrane potential altogether.
"""

import numpy as np

from mfpq import NeuronConfig, QuantSpec
from mfpq.neurons import LIFState, decay_steps_bound, qlif_step

for bits in (2, 4, 8):
    cfg = NeuronConfig(tau=0.5, membrane_bits=bits)
    u = LIFState(np.array([1.0]))
    trace = [1.0]
    while u.u[0] != 0 and len(trace) < 20:
        _, u = qlif_step(u, np.zeros(1), cfg)
        trace.append(float(u.u[0]))
    print(f"{bits}-bit  top level steps to zero = {decay_steps_bound(bits, 0.5)}: {np.round(trace, 4).tolist()}")

print("2-bit levels:", QuantSpec(2, 1.0).levels().tolist())
