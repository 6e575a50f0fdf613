"""Train a tiny binary MFP network on a synthetic two-class spike task."""

from mfpq import MFPNetwork, NeuronConfig
from mfpq.analysis import contribution_stats
from mfpq.io import gen_synthetic
from mfpq.training import TrainConfig, evaluate, train

data = gen_synthetic(16, 2048, seed=0, t_steps=4)
net = MFPNetwork.init([16, 32, 2], 4, NeuronConfig(), seed=0)

net, metrics = train(net, data, TrainConfig(lr=0.05, momentum=0.9, epochs=30, batch=64))
for row in metrics[::5] + metrics[-1:]:
    print(f"epoch {row['epoch']:>2}  loss {row['loss']:.4f}  acc {row['accuracy']:.3f}")

held_out = gen_synthetic(16, 512, seed=1, t_steps=4)
loss, acc = evaluate(net, held_out)
print(f"held-out  loss {loss:.4f}  acc {acc:.3f}")

# share of the pre-activation that comes from history, at several membrane widths
for bits in (8, 4, 2):
    print(bits, "bits:", round(contribution_stats(net, held_out.spikes, bits).history_fraction, 4))
