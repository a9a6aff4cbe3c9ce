"""ANN pre-training and the three SNN regimes.

``snn-traditional`` does one forward/backward over all ``T`` steps per batch.
``snn-hire`` splits the ``T`` steps into ``N`` periods of ``T // N`` steps.
Each period runs on ``clip(x + kappa, 0, 1)`` and updates the parameters
once. The input gradient from the same backward pass moves ``kappa`` by one
signed step of size ``eps_s``, clipped to ``[-eps_t, eps_t]``. ``kappa`` is
kept per batch slot and carries over into the next batch.
``snn-gaussian`` keeps the period structure but draws fresh N(0, eps_s^2)
noise each period.
"""
from dataclasses import asdict, dataclass, field

import numpy as np

from . import model as M
from . import spiking
from .errors import ConfigurationError, ContractError, TrainingError

MODES = ("ann", "snn-traditional", "snn-hire", "snn-gaussian")

# (initial lr, decay factor, milestones as fractions of the epoch budget)
SCHEDULES = {
    "ann": (0.01, 0.1, (0.625, 0.75, 0.875)),
    "snn": (1e-4, 0.2, (0.6, 0.8, 0.9)),
}

CSV_HEADER = ("epoch", "mode", "train_acc", "val_acc", "loss", "lr", "kappa_saturation")


@dataclass
class TrainConfig:
    mode: str = "snn-hire"
    T: int = 6
    N: int = 2
    eps_s: float = 0.013
    eps_t: float = 0.013
    epochs: int = 30
    batch_size: int = 32
    lr: float = None
    lr_decay: float = None
    milestones: tuple = None
    momentum: float = 0.0
    freeze_v_t: bool = False
    freeze_l_k: bool = False
    gamma: float = spiking.DEFAULT_GAMMA
    detach_reset: bool = False
    carry_state: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}, got {self.mode!r}")
        lr, decay, milestones = SCHEDULES["ann" if self.mode == "ann" else "snn"]
        self.lr = lr if self.lr is None else self.lr
        self.lr_decay = decay if self.lr_decay is None else self.lr_decay
        self.milestones = tuple(milestones if self.milestones is None else self.milestones)
        if self.T < 1 or self.N < 1:
            raise ConfigurationError("T and N must be >= 1")
        if self.mode in ("snn-hire", "snn-gaussian") and self.T // self.N < 1:
            raise ConfigurationError(f"period length T // N is zero for T={self.T}, N={self.N}")
        if not self.eps_t >= self.eps_s >= 0:
            raise ConfigurationError("need eps_t >= eps_s >= 0")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigurationError("epochs must be >= 0 and batch_size >= 1")

    @property
    def periods(self):
        return 1 if self.mode in ("ann", "snn-traditional") else self.N

    @property
    def period_length(self):
        return self.T if self.periods == 1 else self.T // self.N

    def milestone_epochs(self):
        return [int(round(f * self.epochs)) for f in self.milestones]

    def lr_at(self, epoch):
        """Learning rate for 0-based ``epoch``."""
        passed = sum(epoch >= m for m in self.milestone_epochs())
        return self.lr * self.lr_decay ** passed

    def to_dict(self):
        return asdict(self)


@dataclass
class NoiseState:
    """Per-slot input perturbation, kept for the batch layout ``(n_B, h, w, c)``."""
    kappa: np.ndarray

    @classmethod
    def zeros(cls, batch_size, input_shape):
        return cls(np.zeros((batch_size,) + tuple(input_shape)))

    def for_batch(self, n):
        if n > len(self.kappa):
            pad = np.zeros((n - len(self.kappa),) + self.kappa.shape[1:])
            self.kappa = np.concatenate([self.kappa, pad])
        return self.kappa[:n]

    def step(self, grad_x, eps_s, eps_t):
        n = len(grad_x)
        self.kappa[:n] = np.clip(self.kappa[:n] + eps_s * np.sign(grad_x), -eps_t, eps_t)
        return self.kappa[:n]

    def saturation(self, eps_t):
        if eps_t == 0:
            return 0.0
        return float(np.mean(np.abs(self.kappa) >= eps_t))


@dataclass
class TrainStats:
    updates: int = 0
    batches: int = 0
    simulated_steps: int = 0
    peak_stored_steps: int = 0
    stored_steps_per_update: list = field(default_factory=list)


@dataclass
class TrainResult:
    graph: M.ModelGraph
    history: list
    stats: TrainStats
    noise: NoiseState = None
    kappa_log: list = None


def gradient_storage_report(cfg):
    """Per-step traces held in memory for one parameter update."""
    return cfg.period_length if cfg.mode != "ann" else 1


class _Optimizer:
    def __init__(self, momentum):
        self.momentum = momentum
        self.velocity = {}

    def step(self, graph, grads, lr, cfg):
        for key, g in grads.items():
            idx, name = key.split(".")
            spec = graph.layers[int(idx)]
            if name == "W" and not spec.train_w:
                continue
            if name == "v_t" and (cfg.freeze_v_t or not spec.train_v_t):
                continue
            if name == "l_k" and (cfg.freeze_l_k or not spec.train_l_k):
                continue
            if self.momentum:
                v = self.velocity.get(key, 0.0) * self.momentum + g
                self.velocity[key] = v
                g = v
            p = graph.params[key] - lr * g
            if name == "v_t":
                p = np.array(spiking.clamp_threshold(p))
            elif name == "l_k":
                p = np.array(spiking.clamp_leak(p))
            graph.params[key] = p


def gaussian_noise(rng, shape, eps_s):
    """Unclipped N(0, eps_s^2) draw used by the Gaussian-noise baseline."""
    return rng.normal(0.0, eps_s, shape)


def _check_finite(loss):
    if not np.isfinite(loss):
        raise TrainingError(f"loss diverged ({loss})")


def _epoch_row(graph, cfg, epoch, X, Y, val, loss, lr, noise):
    from .attacks import accuracy
    train_acc = accuracy(graph, X, Y)
    val_acc = accuracy(graph, *val) if val is not None else float("nan")
    sat = noise.saturation(cfg.eps_t) if noise is not None else 0.0
    return {"epoch": epoch + 1, "mode": cfg.mode, "train_acc": train_acc, "val_acc": val_acc,
            "loss": loss, "lr": lr, "kappa_saturation": sat}


def train_ann(graph, X, Y, cfg, val=None):
    """Mini-batch SGD on cross-entropy; ``graph`` is trained in place and returned."""
    if cfg.mode != "ann" or graph.mode != "ann":
        raise ContractError("train_ann needs mode 'ann' and an ANN graph")
    rng = np.random.default_rng(cfg.seed)
    opt = _Optimizer(cfg.momentum)
    stats = TrainStats()
    history = []
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y)
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        order = rng.permutation(len(X))
        losses = []
        for s in range(0, len(X), cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            loss, _, grads, _, _ = M.loss_and_grads(graph, X[idx], Y[idx], training=True, rng=rng)
            _check_finite(loss)
            opt.step(graph, grads, lr, cfg)
            losses.append(loss)
            stats.updates += 1
            stats.batches += 1
        history.append(_epoch_row(graph, cfg, epoch, X, Y, val, float(np.mean(losses)), lr, None))
    return TrainResult(graph, history, stats)


def _train_snn(graph, X, Y, cfg, val=None, noise=None, record_kappa=False, check=True, callback=None):
    if graph.mode != "snn":
        raise ContractError("SNN training needs a converted SNN graph")
    graph.gamma = cfg.gamma
    graph.detach_reset = cfg.detach_reset
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y)
    rng = np.random.default_rng(cfg.seed)  # shuffling + dropout
    noise_rng = np.random.default_rng([cfg.seed, 1])  # gaussian baseline only
    opt = _Optimizer(cfg.momentum)
    stats = TrainStats()
    history = []
    kappa_log = [] if record_kappa else None
    crafted = cfg.mode == "snn-hire"
    gaussian = cfg.mode == "snn-gaussian"
    if noise is None:
        noise = NoiseState.zeros(cfg.batch_size, graph.input_shape)
    steps = cfg.period_length
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        order = rng.permutation(len(X))
        losses = []
        for s in range(0, len(X), cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            xb, yb = X[idx], Y[idx]
            potentials = None
            for p in range(cfg.periods):
                if crafted:
                    kappa = noise.for_batch(len(xb))
                    if record_kappa:
                        kappa_log.append((stats.batches, p, "start", kappa.copy()))
                elif gaussian:
                    kappa = np.clip(gaussian_noise(noise_rng, xb.shape, cfg.eps_s), -cfg.eps_t, cfg.eps_t)
                else:
                    kappa = None
                xin = xb if kappa is None else np.clip(xb + kappa, 0.0, 1.0)
                if check and kappa is not None:
                    assert np.all(np.abs(kappa) <= cfg.eps_t), "kappa left its bound"
                    assert xin.min() >= 0.0 and xin.max() <= 1.0, "perturbed input left [0, 1]"
                loss, _, grads, gx, cache = M.loss_and_grads(
                    graph, xin, yb, steps=steps, training=True, rng=rng,
                    init_potentials=potentials)
                _check_finite(loss)
                stored = max((len(tr) for tr in cache.traces.values()), default=0)
                stats.stored_steps_per_update.append(stored)
                stats.peak_stored_steps = max(stats.peak_stored_steps, stored)
                stats.simulated_steps += steps
                if crafted:
                    kappa = noise.step(gx, cfg.eps_s, cfg.eps_t)
                    if check:
                        assert np.all(np.abs(kappa) <= cfg.eps_t), "kappa left its bound"
                    if record_kappa:
                        kappa_log.append((stats.batches, p, "end", kappa.copy()))
                opt.step(graph, grads, lr, cfg)
                stats.updates += 1
                losses.append(loss)
                if callback is not None:
                    callback(stats.updates, graph)
                if cfg.carry_state:
                    potentials = {i: tr.final_potential for i, tr in cache.traces.items()}
            stats.batches += 1
        history.append(_epoch_row(graph, cfg, epoch, X, Y, val, float(np.mean(losses)), lr,
                                  noise if crafted else None))
    return TrainResult(graph, history, stats, noise if crafted else None, kappa_log)


def train_snn_traditional(graph, X, Y, cfg, val=None, callback=None):
    """One forward over all T steps, one backward and one update per batch.

    ``callback(update_index, graph)`` runs after every parameter update.
    """
    if cfg.mode != "snn-traditional":
        raise ContractError("train_snn_traditional needs mode 'snn-traditional'")
    return _train_snn(graph, X, Y, cfg, val, callback=callback)


def train_snn_hire(graph, X, Y, cfg, val=None, noise=None, record_kappa=False, callback=None):
    """Period-partitioned training on inputs with crafted noise (kappa).

    Pass ``noise`` to continue from an existing kappa; ``record_kappa`` logs
    ``(batch, period, "start" | "end", kappa)`` around every update.
    """
    if cfg.mode != "snn-hire":
        raise ContractError("train_snn_hire needs mode 'snn-hire'")
    return _train_snn(graph, X, Y, cfg, val, noise, record_kappa, callback=callback)


def train_snn_gaussian(graph, X, Y, cfg, val=None):
    """Period-partitioned training with fresh Gaussian input noise each period."""
    if cfg.mode != "snn-gaussian":
        raise ContractError("train_snn_gaussian needs mode 'snn-gaussian'")
    return _train_snn(graph, X, Y, cfg, val)


def train(graph, X, Y, cfg, val=None):
    """Dispatch on ``cfg.mode``."""
    return {
        "ann": train_ann,
        "snn-traditional": train_snn_traditional,
        "snn-hire": train_snn_hire,
        "snn-gaussian": train_snn_gaussian,
    }[cfg.mode](graph, X, Y, cfg, val)
