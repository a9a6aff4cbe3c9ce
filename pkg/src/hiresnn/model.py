"""Layer graphs executed either as ANNs or as direct-/rate-coded SNNs.

A :class:`ModelGraph` holds an ordered list of :class:`LayerSpec` and a flat
parameter dictionary (``"3.W"``, ``"4.v_t"``, ``"4.l_k"``; the prefix is the
layer index). In ANN mode ``neuron`` layers act as ReLU. In SNN mode they are
IF/LIF layers driven for ``steps`` time steps and the trailing ``output``
layer averages the last weighted layer's output over time.

Layers are independent in time except through their own membrane potential,
so the SNN forward pass runs layer by layer over all steps at once; the
result is the same as the step-by-step schedule and lets the weight kernels
see time stacked into the batch axis.
"""
from dataclasses import dataclass, field, replace

import numpy as np

from . import spiking, tensorops
from .errors import ConfigurationError, ContractError, InputError
from .tensorops import ConvSpec

WEIGHTED = ("conv", "linear")
KINDS = ("conv", "linear", "avgpool", "dropout", "neuron", "relu", "output")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    conv: ConvSpec = None
    in_features: int = 0
    out_features: int = 0
    window: int = 0
    rate: float = 0.0
    train_w: bool = True
    train_v_t: bool = True
    train_l_k: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown layer kind {self.kind!r}")
        if self.kind == "conv" and self.conv is None:
            raise ConfigurationError("conv layer needs a ConvSpec")
        if self.kind == "linear" and min(self.in_features, self.out_features) < 1:
            raise ConfigurationError("linear layer needs positive in/out features")
        if self.kind == "avgpool" and self.window < 1:
            raise ConfigurationError("avgpool layer needs a positive window")
        if self.kind == "dropout" and not 0 <= self.rate < 1:
            raise ConfigurationError(f"dropout rate {self.rate} outside [0, 1)")

    def to_dict(self):
        d = {"kind": self.kind}
        if self.conv is not None:
            d["conv"] = {"kernel_size": self.conv.kernel_size, "in_channels": self.conv.in_channels,
                         "out_channels": self.conv.out_channels, "stride": self.conv.stride,
                         "padding": self.conv.padding}
        for name in ("in_features", "out_features", "window", "rate"):
            if getattr(self, name):
                d[name] = getattr(self, name)
        for name in ("train_w", "train_v_t", "train_l_k"):
            if not getattr(self, name):
                d[name] = False
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "conv" in d:
            d["conv"] = ConvSpec(**d["conv"])
        return cls(**d)


def conv(kernel_size, in_channels, out_channels, stride=1, padding=0):
    return LayerSpec("conv", conv=ConvSpec(kernel_size, in_channels, out_channels, stride, padding))


def linear(in_features, out_features):
    return LayerSpec("linear", in_features=in_features, out_features=out_features)


def avgpool(window):
    return LayerSpec("avgpool", window=window)


def dropout(rate):
    return LayerSpec("dropout", rate=rate)


def neuron():
    return LayerSpec("neuron")


def output():
    return LayerSpec("output")


@dataclass
class ModelGraph:
    layers: list
    input_shape: tuple
    params: dict = field(default_factory=dict)
    mode: str = "ann"
    T: int = 1
    gamma: float = spiking.DEFAULT_GAMMA
    detach_reset: bool = False

    def __post_init__(self):
        self.input_shape = tuple(self.input_shape)
        if self.mode not in ("ann", "snn"):
            raise ConfigurationError(f"mode must be 'ann' or 'snn', got {self.mode!r}")
        self.shapes()  # validates geometry
        self._check_order()

    def _check_order(self):
        kinds = [spec.kind for spec in self.layers]
        if not kinds or kinds[-1] != "output":
            raise ConfigurationError("the last layer must be 'output'")
        weighted = [i for i, k in enumerate(kinds) if k in WEIGHTED]
        if not weighted:
            raise ConfigurationError("graph has no weighted layer")
        for i in weighted[:-1]:
            nxt = next((k for k in kinds[i + 1:] if k != "dropout"), None)
            if nxt not in ("neuron", "relu"):
                raise ConfigurationError(f"layer {i} ({kinds[i]}) must be followed by a neuron layer")
        if any(k in ("neuron", "relu") for k in kinds[weighted[-1]:]):
            raise ConfigurationError("no neuron layer may follow the output projection")
        if self.mode == "snn" and "relu" in kinds:
            raise ConfigurationError("'relu' layers are ANN-only; convert the graph first")

    def shapes(self):
        """Per-sample activation shape after each layer."""
        shape = self.input_shape
        out = []
        for i, spec in enumerate(self.layers):
            if spec.kind == "conv":
                if len(shape) != 3 or shape[2] != spec.conv.in_channels:
                    raise ConfigurationError(f"layer {i}: conv cannot take input {shape}")
                ho, wo = spec.conv.output_size(shape[0], shape[1])
                shape = (ho, wo, spec.conv.out_channels)
            elif spec.kind == "linear":
                if int(np.prod(shape)) != spec.in_features:
                    raise ConfigurationError(f"layer {i}: linear wants {spec.in_features} inputs, got {shape}")
                shape = (spec.out_features,)
            elif spec.kind == "avgpool":
                if len(shape) != 3 or shape[0] % spec.window or shape[1] % spec.window:
                    raise ConfigurationError(f"layer {i}: {shape} not divisible by window {spec.window}")
                shape = (shape[0] // spec.window, shape[1] // spec.window, shape[2])
            out.append(shape)
        return out

    def in_shapes(self):
        return [self.input_shape] + self.shapes()[:-1]

    @property
    def n_classes(self):
        return self.shapes()[-1][0]

    def neuron_layers(self):
        return [i for i, s in enumerate(self.layers) if s.kind == "neuron"]

    def weighted_layers(self):
        return [i for i, s in enumerate(self.layers) if s.kind in WEIGHTED]

    def copy(self):
        params = {k: np.array(v, copy=True) for k, v in self.params.items()}
        return replace(self, layers=list(self.layers), params=params)


def init_params(graph, seed=0):
    """He-normal weights, unit thresholds and leaks. Mutates and returns ``graph``."""
    rng = np.random.default_rng(seed)
    params = {}
    for i, spec in enumerate(graph.layers):
        if spec.kind == "conv":
            c = spec.conv
            fan_in = c.kernel_size ** 2 * c.in_channels
            params[f"{i}.W"] = rng.standard_normal(c.weight_shape) * np.sqrt(2.0 / fan_in)
        elif spec.kind == "linear":
            params[f"{i}.W"] = (rng.standard_normal((spec.in_features, spec.out_features))
                                * np.sqrt(2.0 / spec.in_features))
        elif spec.kind == "neuron":
            params[f"{i}.v_t"] = np.array(1.0)
            params[f"{i}.l_k"] = np.array(1.0)
    graph.params = params
    return graph


def vgg_like(input_shape=(28, 28, 1), n_classes=2, conv_channels=(8,), hidden=(), dropout_rate=0.2,
             pool=2, kernel_size=3, seed=0):
    """VGG-style stack: [conv-neuron-pool]* -> [linear-neuron-dropout]* -> linear -> output."""
    layers = []
    h, w, c = input_shape
    for co in conv_channels:
        layers += [conv(kernel_size, c, co, padding=kernel_size // 2), neuron()]
        if pool > 1:
            layers.append(avgpool(pool))
            h, w = h // pool, w // pool
        c = co
    d = h * w * c
    for dh in hidden:
        layers += [linear(d, dh), neuron()]
        if dropout_rate:
            layers.append(dropout(dropout_rate))
        d = dh
    layers += [linear(d, n_classes), output()]
    return init_params(ModelGraph(layers, input_shape), seed)


# --- encoders ----------------------------------------------------------------

def _check_pixels(x):
    x = np.asarray(x, dtype=np.float64)
    if x.size and (x.min() < 0 or x.max() > 1):
        raise InputError("pixel values must lie in [0, 1]")
    return x


def encode_direct(x, t=0):
    """Direct coding: the analog image is presented unchanged at every step."""
    return _check_pixels(x)


def encode_poisson(x, t, seed=0):
    """Rate coding: a binary frame with P(spike) equal to the pixel value.

    Frames for different ``t`` are independent; each is a pure function of
    ``(seed, t)``.
    """
    x = _check_pixels(x)
    rng = np.random.default_rng([seed, t])
    return (rng.random(x.shape) < x).astype(np.float64)


# --- execution -----------------------------------------------------------------

@dataclass
class ForwardCache:
    steps: int
    shared_input: bool
    layer_inputs: dict
    traces: dict
    masks: dict
    logits: np.ndarray = None


def _apply_weighted(spec, W, a):
    if spec.kind == "conv":
        return tensorops.conv2d_forward(a, W, spec.conv)
    return tensorops.linear_forward(a, W)


def _fold(a, shared):
    """Merge (S, N, ...) into (S*N, ...) for the kernels."""
    return a if shared else a.reshape((-1,) + a.shape[2:])


def _unfold(a, shared, steps):
    return a if shared else a.reshape((steps, -1) + a.shape[1:])


def _run(graph, inputs, steps, shared, training=False, rng=None, spike_fn="heaviside",
         init_potentials=None, stop_at=None):
    """Shared forward for both modes.

    ``inputs`` is ``(N, ...)`` when ``shared`` (the same frame at every step)
    or ``(S, N, ...)`` otherwise. Returns the cache; when ``stop_at`` is given,
    returns the activation entering that layer instead.
    """
    snn = graph.mode == "snn"
    cache = ForwardCache(steps, shared, {}, {}, {})
    a = inputs
    for i, spec in enumerate(graph.layers):
        if i == stop_at:
            return a
        cache.layer_inputs[i] = a
        if spec.kind in WEIGHTED:
            a = _unfold(_apply_weighted(spec, graph.params[f"{i}.W"], _fold(a, shared)), shared, steps)
        elif spec.kind == "avgpool":
            a = _unfold(tensorops.avgpool_forward(_fold(a, shared), spec.window), shared, steps)
        elif spec.kind == "dropout":
            if training and spec.rate > 0:
                n = a.shape[0] if shared else a.shape[1]
                mask = tensorops.dropout_mask((n,) + a.shape[(1 if shared else 2):], spec.rate, rng)
                cache.masks[i] = mask
                a = a * mask
        elif spec.kind in ("neuron", "relu"):
            if not snn:
                a = np.maximum(a, 0.0)
            else:
                if shared:
                    a = np.broadcast_to(a, (steps,) + a.shape)
                    shared = False
                u0 = None if init_potentials is None else init_potentials.get(i)
                trace = spiking.run_layer(a, float(graph.params[f"{i}.v_t"]),
                                          float(graph.params[f"{i}.l_k"]), u0=u0,
                                          gamma=graph.gamma, spike_fn=spike_fn)
                cache.traces[i] = trace
                a = trace.spikes
        elif spec.kind == "output":
            a = a if (shared or not snn) else a.mean(axis=0)
    cache.logits = a
    return cache


def forward_ann(graph, x, training=False, rng=None, return_cache=False):
    """Feed-forward ANN pass with ReLU neurons; returns logits ``(N, K)``."""
    if graph.mode != "ann":
        raise ContractError("forward_ann needs a graph in ANN mode")
    x = np.asarray(x, dtype=np.float64)
    single = x.shape == graph.input_shape
    cache = _run(graph, x[None] if single else x, 1, True, training, rng)
    logits = cache.logits[0] if single else cache.logits
    return (logits, cache) if return_cache else logits


def encode_steps(x, steps, encoder="direct", seed=0):
    """Stack encoded frames ``(S, N, ...)``; direct coding returns ``x`` as is."""
    if encoder == "direct":
        return encode_direct(x)
    if encoder == "poisson":
        return np.stack([encode_poisson(x, t, seed) for t in range(steps)])
    raise ConfigurationError(f"unknown encoder {encoder!r}")


def forward_snn(graph, x, steps=None, encoder="direct", seed=0, training=False, rng=None,
                spike_fn="heaviside", init_potentials=None):
    """Run the SNN for ``steps`` (default ``graph.T``).

    Returns ``(logits, cache)``; ``cache.traces`` maps neuron-layer index to
    its :class:`~hiresnn.spiking.SpikeTrace`.
    """
    if graph.mode != "snn":
        raise ContractError("forward_snn needs a graph in SNN mode")
    steps = graph.T if steps is None else steps
    if steps < 1:
        raise ConfigurationError(f"steps must be >= 1, got {steps}")
    x = np.asarray(x, dtype=np.float64)
    if x.shape == graph.input_shape:
        x = x[None]
    frames = encode_steps(x, steps, encoder, seed)
    cache = _run(graph, frames, steps, encoder == "direct", training, rng, spike_fn, init_potentials)
    return cache.logits, cache


def cross_entropy(logits, labels):
    """Mean softmax cross-entropy and its gradient w.r.t. ``logits``."""
    logits = np.atleast_2d(logits)
    labels = np.atleast_1d(np.asarray(labels))
    k = logits.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise InputError(f"labels must lie in [0, {k})")
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = len(labels)
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return float(loss), grad / n


def backward(graph, cache, grad_logits):
    """Backpropagate ``grad_logits`` through a cached forward pass.

    Returns ``(grads, grad_input)``. ``grads`` maps parameter keys to
    gradients; ``grad_input`` has the input's shape for shared (direct)
    inputs and is per-step ``(S, N, ...)`` otherwise.
    """
    snn = graph.mode == "snn"
    steps = cache.steps
    g = np.asarray(grad_logits, dtype=np.float64)
    grads = {}
    # activations below the first neuron layer are time-invariant under direct coding
    first_neuron = min(cache.traces) if cache.traces else None
    shared_at = {i: (not snn) or cache.shared_input and (first_neuron is None or i < first_neuron)
                 for i in range(len(graph.layers))}
    for i in range(len(graph.layers) - 1, -1, -1):
        spec = graph.layers[i]
        shared = shared_at[i]
        a_in = cache.layer_inputs[i]
        if spec.kind == "output":
            if not shared:
                g = np.broadcast_to(g / steps, (steps,) + g.shape)
        elif spec.kind in WEIGHTED:
            W = graph.params[f"{i}.W"]
            gf = _fold(g, shared)
            if spec.kind == "conv":
                gx, gw = tensorops.conv2d_backward(gf, _fold(a_in, shared), W, spec.conv)
            else:
                gx, gw = tensorops.linear_backward(gf, _fold(a_in, shared), W)
            grads[f"{i}.W"] = gw
            g = _unfold(gx, shared, steps)
        elif spec.kind == "avgpool":
            g = _unfold(tensorops.avgpool_backward(_fold(g, shared), spec.window), shared, steps)
        elif spec.kind == "dropout":
            if i in cache.masks:
                g = g * cache.masks[i]
        elif spec.kind in ("neuron", "relu"):
            if not snn:
                g = g * (a_in > 0)
            else:
                ng = spiking.bptt_backward(cache.traces[i], g, float(graph.params[f"{i}.v_t"]),
                                           float(graph.params[f"{i}.l_k"]), graph.gamma,
                                           graph.detach_reset)
                grads[f"{i}.v_t"] = np.array(ng.grad_v_t)
                grads[f"{i}.l_k"] = np.array(ng.grad_l_k)
                g = ng.grad_input
                if cache.shared_input and i == first_neuron:
                    g = g.sum(axis=0)
    return grads, g


def loss_and_grads(graph, x, labels, steps=None, encoder="direct", seed=0, training=False,
                   rng=None, spike_fn="heaviside", init_potentials=None):
    """Forward, cross-entropy and backward in one call.

    Returns ``(loss, logits, grads, grad_input, cache)``.
    """
    if graph.mode == "ann":
        logits, cache = forward_ann(graph, x, training, rng, return_cache=True)
        if logits.ndim == 1:
            logits = logits[None]
    else:
        logits, cache = forward_snn(graph, x, steps, encoder, seed, training, rng, spike_fn,
                                    init_potentials)
    loss, g = cross_entropy(logits, labels)
    grads, grad_input = backward(graph, cache, g)
    return loss, logits, grads, grad_input, cache


def predict(graph, x, steps=None, encoder="direct", seed=0, batch_size=256):
    """Top-1 class indices, evaluated in mini-batches."""
    x = np.asarray(x, dtype=np.float64)
    out = []
    for s in range(0, len(x), batch_size):
        xb = x[s:s + batch_size]
        if graph.mode == "ann":
            logits = forward_ann(graph, xb)
        else:
            logits, _ = forward_snn(graph, xb, steps, encoder, seed)
        out.append(np.argmax(logits, axis=1))
    return np.concatenate(out) if out else np.zeros(0, dtype=int)


# --- conversion ------------------------------------------------------------------

def convert_ann_to_snn(ann_graph, calibration_batch, percentile=99.7, T=None):
    """Copy an ANN into an SNN and calibrate thresholds layer by layer.

    Each neuron layer's threshold is the ``percentile`` of the weighted input
    it receives over all steps and samples, measured with every earlier layer
    already spiking at its calibrated threshold. Leaks start at 1.0 (IF).
    """
    calibration_batch = np.asarray(calibration_batch, dtype=np.float64)
    if calibration_batch.size == 0 or len(calibration_batch) == 0:
        raise InputError("calibration batch is empty")
    layers = [replace(s, kind="neuron") if s.kind == "relu" else s for s in ann_graph.layers]
    T = ann_graph.T if T is None else T
    if T < 1:
        raise ConfigurationError("T must be >= 1")
    params = {k: np.array(v, copy=True) for k, v in ann_graph.params.items()}
    for i, spec in enumerate(layers):
        if spec.kind == "neuron":
            params[f"{i}.v_t"] = np.array(1.0)
            params[f"{i}.l_k"] = np.array(1.0)
    snn = ModelGraph(layers, ann_graph.input_shape, params, "snn", T, ann_graph.gamma,
                     ann_graph.detach_reset)
    x = encode_direct(calibration_batch)
    for i in snn.neuron_layers():
        pre = _run(snn, x, T, True, stop_at=i)
        v = float(np.percentile(pre, percentile))
        snn.params[f"{i}.v_t"] = np.array(spiking.clamp_threshold(v))
    return snn
