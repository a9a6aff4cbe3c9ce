"""Integrate-and-fire dynamics with a linear surrogate gradient.

One step of a layer of neurons::

    z    = u / v_t - 1              (on the pre-update potential)
    O    = 1 if z > 0 else 0
    u'   = l_k * u + I - v_t * O    (soft reset)

``l_k = 1`` gives IF neurons, ``l_k < 1`` LIF neurons. The backward pass
replaces dO/dz with ``gamma * max(0, 1 - |z|)``.
"""
from dataclasses import dataclass, replace

import numpy as np

from .errors import ContractError, StateError

DEFAULT_GAMMA = 0.3
MIN_THRESHOLD = 0.01
MIN_LEAK = 1e-6


@dataclass
class NeuronState:
    u: np.ndarray
    v_t: float
    l_k: float = 1.0
    t: int = 0


@dataclass
class SpikeTrace:
    """Per-step record of one neuron layer.

    ``spikes[t]`` and ``potentials[t]`` (the pre-update ``u``) have the layer's
    shape; the leading axis is time.
    """
    spikes: np.ndarray
    potentials: np.ndarray
    final_potential: np.ndarray = None

    def __len__(self):
        return len(self.spikes)

    @property
    def counts(self):
        return self.spikes.sum(axis=0)


@dataclass
class NeuronGrads:
    grad_input: np.ndarray  # per-step dL/dI, same shape as the trace
    grad_v_t: float
    grad_l_k: float


def surrogate_grad(z, gamma=DEFAULT_GAMMA):
    return gamma * np.maximum(0.0, 1.0 - np.abs(z))


def smooth_spike(z, gamma=DEFAULT_GAMMA):
    """Antiderivative of :func:`surrogate_grad` (zero below z = -1).

    Used in place of the Heaviside step to obtain a network whose exact
    gradient is the surrogate gradient, so finite differences can check BPTT.
    """
    z = np.clip(z, -1.0, 1.0)
    neg = 0.5 * (z + 1.0) ** 2
    pos = 1.0 - 0.5 * (1.0 - z) ** 2
    return gamma * np.where(z <= 0, neg, pos)


def _fire(z, spike_fn, gamma):
    if spike_fn == "heaviside":
        return (z > 0).astype(z.dtype)
    if spike_fn == "smooth":
        return smooth_spike(z, gamma)
    raise ValueError(f"unknown spike_fn {spike_fn!r}")


def lif_step(state, weighted_input, gamma=DEFAULT_GAMMA, spike_fn="heaviside"):
    """Advance ``state`` by one step; returns ``(spikes, new_state)``."""
    if not state.v_t > 0:
        raise StateError(f"threshold must be positive, got {state.v_t}")
    u = np.asarray(state.u, dtype=np.float64)
    weighted_input = np.asarray(weighted_input, dtype=np.float64)
    if u.shape != weighted_input.shape:
        raise ContractError(f"input shape {weighted_input.shape} != potential shape {u.shape}")
    z = u / state.v_t - 1.0
    spikes = _fire(z, spike_fn, gamma)
    u_next = state.l_k * u + weighted_input - state.v_t * spikes
    return spikes, replace(state, u=u_next, t=state.t + 1)


def run_layer(inputs, v_t, l_k, u0=None, gamma=DEFAULT_GAMMA, spike_fn="heaviside"):
    """Run :func:`lif_step` over ``inputs[0..S-1]`` and record the trace."""
    if not v_t > 0:
        raise StateError(f"threshold must be positive, got {v_t}")
    inputs = np.asarray(inputs, dtype=np.float64)
    u = np.zeros(inputs.shape[1:]) if u0 is None else np.array(u0, dtype=np.float64)
    spikes = np.empty_like(inputs)
    potentials = np.empty_like(inputs)
    # inlined lif_step: same arithmetic, no per-step allocations of the state
    for t in range(len(inputs)):
        potentials[t] = u
        z = u / v_t - 1.0
        spikes[t] = _fire(z, spike_fn, gamma)
        u *= l_k
        u += inputs[t]
        u -= v_t * spikes[t]
    return SpikeTrace(spikes, potentials, u)


def bptt_backward(trace, upstream_grads, v_t, l_k, gamma=DEFAULT_GAMMA, detach_reset=False):
    """Reverse-time chain rule through one neuron layer.

    ``upstream_grads[t]`` is dL/dO at step ``t`` coming from the layers above.
    Returns per-step dL/dI together with dL/dv_t and dL/dl_k summed over
    steps and neurons. The potential left after the last step does not reach
    the loss, so the recurrence starts from a zero gradient. With
    ``detach_reset`` the ``-v_t * O`` term contributes no gradient.
    """
    upstream_grads = np.asarray(upstream_grads, dtype=np.float64)
    if upstream_grads.shape != trace.spikes.shape:
        raise ContractError(
            f"{len(upstream_grads)} upstream steps of shape {upstream_grads.shape[1:]} "
            f"for a trace of {len(trace)} steps of shape {trace.spikes.shape[1:]}")
    steps = len(trace)
    grad_input = np.empty_like(upstream_grads)
    g_next = np.zeros(upstream_grads.shape[1:])  # dL/du^{t+1}
    grad_v = 0.0
    grad_l = 0.0
    for t in range(steps - 1, -1, -1):
        u = trace.potentials[t]
        o = trace.spikes[t]
        grad_input[t] = g_next
        if t < steps - 1:
            grad_l += float(np.vdot(g_next, u))
            if not detach_reset:
                grad_v -= float(np.vdot(g_next, o))
        g_z = upstream_grads[t] - v_t * g_next if not detach_reset else upstream_grads[t].copy()
        g_z *= surrogate_grad(u / v_t - 1.0, gamma)
        grad_v -= float(np.vdot(g_z, u)) / v_t ** 2
        g_next *= l_k
        g_next += g_z / v_t
    return NeuronGrads(grad_input, grad_v, grad_l)


def output_accumulate(weighted_input, acc):
    """Non-spiking readout: ``acc + weighted_input``. Logits are ``acc / T``."""
    weighted_input = np.asarray(weighted_input)
    if np.shape(acc) != weighted_input.shape:
        raise ContractError(f"accumulator shape {np.shape(acc)} != input shape {weighted_input.shape}")
    return acc + weighted_input


def clamp_threshold(v_t):
    return max(float(v_t), MIN_THRESHOLD)


def clamp_leak(l_k):
    return min(max(float(l_k), MIN_LEAK), 1.0)
