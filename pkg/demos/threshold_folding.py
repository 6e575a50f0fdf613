"""Folding the mixing weights into per-step thresholds.

With a diagonal mixing matrix the fold is exact. As soon as an off-diagonal
entry carries history into a later step, the folded rule no longer sees it,
and an exhaustive sweep finds an input where the two disagree.
"""

import numpy as np

from mfpq import NeuronConfig, binarize
from mfpq.analysis import all_spike_inputs, exhaustive_mode_check
from mfpq.neurons import MFPLayer, TemporalMixMatrix
from mfpq.numeric import LowerTriangular

cfg = NeuronConfig(v_th=0.6)
weight = binarize(np.array([[0.5, -0.5]]))

diag = TemporalMixMatrix(LowerTriangular.from_dense(np.diag([1.0, 0.5, 2.0])))
n, bad = exhaustive_mode_check([MFPLayer(weight, diag)], cfg, "folded-diagonal")
print(f"diagonal M: {bad.size} mismatches over {n} inputs")

full = TemporalMixMatrix(LowerTriangular.from_dense(np.array([[1.0, 0.0], [0.5, 1.0]])))
single = binarize(np.array([[0.5]]))
n, bad = exhaustive_mode_check([MFPLayer(single, full)], cfg, "folded-diagonal")
print(f"non-diagonal M: {bad.size} of {n} inputs diverge")
if bad.size:
    print("first divergent input train:", all_spike_inputs(2, 1)[:, bad[0], 0].tolist())
