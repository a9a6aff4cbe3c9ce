"""Train a tiny ANN, convert it to an SNN and look at its spikes.

Run with ``python3 demos/quickstart.py``; takes under a minute.
"""
import numpy as np

from hiresnn import attacks as A
from hiresnn import datasets, metrics
from hiresnn import model as M
from hiresnn import training as Tr

X, Y = datasets.make_bars(1000, seed=0)
Xte, Yte = datasets.make_bars(300, seed=1)
print("images", X.shape, "labels", np.bincount(Y))

# A conv layer, a spiking layer, pooling and a linear readout.
ann = M.init_params(M.ModelGraph(
    [M.LayerSpec("conv", conv=M.ConvSpec(3, 1, 8, stride=2, padding=1)), M.neuron(),
     M.avgpool(2), M.linear(7 * 7 * 8, 2), M.output()], (28, 28, 1)), seed=0)
Tr.train_ann(ann, X, Y, Tr.TrainConfig(mode="ann", epochs=8, lr=0.05, momentum=0.9))
print(f"ANN clean accuracy {A.accuracy(ann, Xte, Yte):.1f}%")

# Thresholds come from a high percentile of the ANN pre-activations.
snn = M.convert_ann_to_snn(ann, X[:128], percentile=99.7, T=6)
print(f"SNN after conversion {A.accuracy(snn, Xte, Yte):.1f}%")

# Spiking activity per neuron layer: SA is spikes per neuron over the run, TASA is SA / T.
_, cache = M.forward_snn(snn, Xte)
for rec in metrics.layer_activity(cache):
    print(f"layer {rec.layer}: {rec.neurons} neurons, SA {rec.sa:.3f}, TASA {rec.tasa:.3f}")

# A short fine-tune with crafted input noise.
res = Tr.train(snn, X, Y, Tr.TrainConfig(mode="snn-hire", T=6, N=2, epochs=4, lr=0.01, momentum=0.9))
print(f"after HIRE fine-tune {A.accuracy(snn, Xte, Yte):.1f}%, "
      f"FGSM {A.robust_accuracy(snn, Xte, Yte, A.AttackConfig('fgsm')):.1f}%")
print("stored steps per update", res.stats.peak_stored_steps, "of T =", snn.T)
