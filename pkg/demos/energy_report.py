"""FLOPs and compute energy of a converted SNN under direct and rate coding.

Direct coding feeds analog pixels, so the first layer costs a MAC per
operation; every later layer and every rate-coded layer costs an AC.
"""
from hiresnn import datasets, metrics
from hiresnn import model as M

X, _ = datasets.make_bars(200, seed=0)
ann = M.vgg_like((28, 28, 1), 2, conv_channels=(8, 16), hidden=(32,), seed=0)
snn = M.convert_ann_to_snn(ann, X[:64], T=6)

_, ann_rows = metrics.profile(ann, X)
print(f"ANN energy {sum(r[-1] for r in ann_rows):.4g} pJ")
for encoder, per in (("direct", "step"), ("poisson", "run")):
    _, rows = metrics.profile(snn, X, encoder, per=per)
    print(f"\n{encoder} coding")
    print("layer  flops_ann    flops_snn      energy_pJ")
    for layer, _, _, _, fa, fs, e in rows:
        print(f"{layer:5d}  {fa:9d}  {fs:11.1f}  {e:13.1f}")
    print(f"total {sum(r[-1] for r in rows):.4g} pJ")
