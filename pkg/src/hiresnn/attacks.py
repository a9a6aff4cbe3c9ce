"""FGSM / PGD L-inf attacks on ANN or SNN graphs, white-box and transfer."""
from dataclasses import dataclass

import numpy as np

from . import model as M
from .errors import ConfigurationError, InputError

FAMILIES = ("fgsm", "pgd")


@dataclass
class AttackConfig:
    family: str = "fgsm"
    epsilon: float = 8 / 255
    alpha: float = 0.01
    K: int = 7
    random_start: bool = False
    clip_range: tuple = (0.0, 1.0)
    encoder: str = "direct"
    samples: int = 1  # gradient samplings for Poisson-coded SNNs
    seed: int = 0
    batch_size: int = 256

    def __post_init__(self):
        self.family = self.family.lower()
        if self.family not in FAMILIES:
            raise ConfigurationError(f"unknown attack family {self.family!r}")
        if self.epsilon < 0:
            raise ConfigurationError("epsilon must be >= 0")
        if self.family == "pgd" and (self.alpha <= 0 or self.K < 1):
            raise ConfigurationError("PGD needs alpha > 0 and K >= 1")
        self.clip_range = tuple(self.clip_range)


def input_gradient(graph, x, y, encoder="direct", samples=1, seed=0):
    """Gradient of each sample's cross-entropy loss w.r.t. its pixels.

    Dropout is inactive. For SNNs the per-step input gradients are summed over
    time; with Poisson coding the frame gradient is passed straight through to
    the pixel and averaged over ``samples`` encodings.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    n = len(x)
    if graph.mode == "ann" or encoder == "direct":
        _, _, _, gx, _ = M.loss_and_grads(graph, x, y)
        return gx * n
    total = np.zeros_like(x)
    for s in range(samples):
        _, _, _, gx, _ = M.loss_and_grads(graph, x, y, encoder=encoder, seed=seed + s)
        total += gx.sum(axis=0)
    return total * n / samples


def _batches(n, size):
    for s in range(0, n, size):
        yield slice(s, s + size)


def project(x_adv, x, eps, lo=0.0, hi=1.0):
    """Project onto the eps-ball around ``x`` and the box [lo, hi].

    ``x + eps`` can round one ulp past the ball, so such entries are nudged
    back until ``|x_adv - x| <= eps`` holds in floating point.
    """
    xa = np.clip(x_adv, x - eps, x + eps)
    for _ in range(4):
        over = np.abs(xa - x) > eps
        if not over.any():
            break
        xa[over] = np.nextafter(xa[over], x[over])
    return np.clip(xa, lo, hi)


def fgsm(graph, x, y, cfg):
    """``x + eps * sign(grad)`` projected onto the ball and box, with sign(0) = 0."""
    x = np.asarray(x, dtype=np.float64)
    lo, hi = cfg.clip_range
    out = np.empty_like(x)
    for sl in _batches(len(x), cfg.batch_size):
        g = input_gradient(graph, x[sl], y[sl], cfg.encoder, cfg.samples, cfg.seed)
        out[sl] = project(x[sl] + cfg.epsilon * np.sign(g), x[sl], cfg.epsilon, lo, hi)
    return out


def pgd(graph, x, y, cfg):
    """K signed-gradient steps of size alpha, each projected onto the eps-ball and the clip range."""
    x = np.asarray(x, dtype=np.float64)
    lo, hi = cfg.clip_range
    eps = cfg.epsilon
    out = np.empty_like(x)
    rng = np.random.default_rng(cfg.seed)
    for sl in _batches(len(x), cfg.batch_size):
        x0 = x[sl]
        xa = x0.copy()
        if cfg.random_start:
            xa = project(xa + rng.uniform(-eps, eps, size=xa.shape), x0, eps, lo, hi)
        for _ in range(cfg.K):
            g = input_gradient(graph, xa, y[sl], cfg.encoder, cfg.samples, cfg.seed)
            xa = project(xa + cfg.alpha * np.sign(g), x0, eps, lo, hi)
        out[sl] = xa
    return out


def generate(graph, x, y, cfg):
    y = np.asarray(y)
    if len(x) != len(y):
        raise InputError("image and label counts differ")
    if cfg.family == "fgsm":
        return fgsm(graph, x, y, cfg)
    return pgd(graph, x, y, cfg)


def blackbox_generate(source, target, x, y, cfg):
    """Craft examples on ``source`` for evaluation on ``target`` (transfer attack)."""
    if tuple(source.input_shape) != tuple(target.input_shape):
        raise ConfigurationError(
            f"source input {source.input_shape} != target input {target.input_shape}")
    return generate(source, x, y, cfg)


def accuracy(graph, x, y, encoder="direct", seed=0):
    """Top-1 accuracy in percent."""
    y = np.asarray(y)
    if len(y) == 0:
        raise InputError("empty dataset")
    return 100.0 * float(np.mean(M.predict(graph, x, encoder=encoder, seed=seed) == y))


def robust_accuracy(target, x, y, cfg, source=None):
    """Accuracy of ``target`` on examples crafted on ``source`` (defaults to ``target``)."""
    source = target if source is None else source
    x_adv = blackbox_generate(source, target, x, y, cfg)
    return accuracy(target, x_adv, y, cfg.encoder, cfg.seed)


def attack_sweep(graph, x, y, cfg, param="epsilon", values=(), source=None, alpha_scale=None):
    """Robust accuracy at each value of ``param`` (``epsilon`` or ``K``).

    With ``alpha_scale`` the PGD step grows with the bound,
    ``alpha = max(cfg.alpha, alpha_scale * eps / K)``, so large bounds are
    reachable in ``K`` steps. Returns a list of ``(value, accuracy)`` rows.
    """
    if len(values) == 0:
        raise ConfigurationError("sweep needs at least one point")
    if param not in ("epsilon", "K"):
        raise ConfigurationError(f"can only sweep 'epsilon' or 'K', not {param!r}")
    rows = []
    for v in values:
        point = AttackConfig(**{**cfg.__dict__, param: v})
        if alpha_scale is not None:
            point.alpha = max(cfg.alpha, alpha_scale * point.epsilon / point.K)
        rows.append((v, robust_accuracy(graph, x, y, point, source)))
    return rows
