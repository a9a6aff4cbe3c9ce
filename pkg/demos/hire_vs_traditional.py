"""Compare traditional, Gaussian-noise and HIRE fine-tuning of one converted SNN.

Every trainer starts from the same converted network and sees the same data.
One seed takes a few minutes on a single core.
"""
import sys

from hiresnn import attacks as A
from hiresnn import datasets
from hiresnn import model as M
from hiresnn import training as Tr

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
X, Y = datasets.make_bars(2000, seed=0)
Xte, Yte = datasets.make_bars(500, seed=1)

ann = M.init_params(M.ModelGraph(
    [M.LayerSpec("conv", conv=M.ConvSpec(3, 1, 8, stride=2, padding=1)), M.neuron(),
     M.avgpool(2), M.linear(7 * 7 * 8, 2), M.output()], (28, 28, 1)), seed)
Tr.train_ann(ann, X, Y, Tr.TrainConfig(mode="ann", epochs=8, lr=0.05, momentum=0.9, seed=seed))
start = M.convert_ann_to_snn(ann, X[:256], percentile=99.7, T=6)
print(f"ANN clean {A.accuracy(ann, Xte, Yte):.1f}%")

for mode in ("snn-traditional", "snn-gaussian", "snn-hire"):
    g = start.copy()
    Tr.train(g, X, Y, Tr.TrainConfig(mode=mode, T=6, N=2, eps_s=0.013, eps_t=0.013, epochs=8,
                                     lr=0.01, momentum=0.9, seed=seed))
    clean = A.accuracy(g, Xte, Yte)
    fgsm = A.robust_accuracy(g, Xte, Yte, A.AttackConfig("fgsm"))
    pgd = A.robust_accuracy(g, Xte, Yte, A.AttackConfig("pgd"))
    print(f"{mode:16s} clean {clean:5.1f}%  FGSM {fgsm:5.1f}%  PGD {pgd:5.1f}%")
