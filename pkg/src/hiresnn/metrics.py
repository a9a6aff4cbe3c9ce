"""Spiking activity, perturbation distances, FLOPs/energy and evaluation reports."""
import csv
from dataclasses import dataclass, fields
from decimal import Decimal

import numpy as np

from . import attacks
from . import model as M
from .errors import InputError


@dataclass(frozen=True)
class EnergyConstants:
    """Per-operation energy in pJ for 32-bit arithmetic in 45 nm CMOS at 0.9 V."""
    e_mult_32int: Decimal = Decimal("3.1")
    e_add_32int: Decimal = Decimal("0.1")
    e_mac_32int: Decimal = Decimal("3.2")
    e_ac_32int: Decimal = Decimal("0.1")
    e_mult_32fp: Decimal = Decimal("3.7")
    e_add_32fp: Decimal = Decimal("0.9")
    e_mac_32fp: Decimal = Decimal("4.6")
    e_ac_32fp: Decimal = Decimal("0.9")

    def __post_init__(self):
        for p in ("32int", "32fp"):
            mult, add = getattr(self, f"e_mult_{p}"), getattr(self, f"e_add_{p}")
            if getattr(self, f"e_mac_{p}") != mult + add or getattr(self, f"e_ac_{p}") != add:
                raise ValueError(f"{p}: MAC must equal mult + add and AC must equal add")

    def mac(self, precision="fp"):
        return getattr(self, f"e_mac_32{_prec(precision)}")

    def ac(self, precision="fp"):
        return getattr(self, f"e_ac_32{_prec(precision)}")


def _prec(precision):
    p = precision.lower().replace("32", "").replace("-", "").replace("_", "")
    if p not in ("fp", "int"):
        raise InputError(f"precision must be 'fp' or 'int', got {precision!r}")
    return p


@dataclass
class LayerActivityRecord:
    layer: int
    neurons: int
    total_spikes: float
    T: int
    sa: float
    tasa: float


def spiking_activity(spikes, neuron_count, T):
    """``(SA, TASA)``: spikes per neuron over the run, and that divided by ``T``."""
    if neuron_count <= 0:
        raise InputError("neuron count must be positive")
    if T < 1:
        raise InputError("T must be >= 1")
    sa = float(np.sum(spikes)) / neuron_count
    return sa, sa / T


def layer_activity(cache):
    """Per-image averaged activity of every neuron layer in a forward cache."""
    records = []
    for i, trace in sorted(cache.traces.items()):
        steps, n = trace.spikes.shape[:2]
        neurons = int(np.prod(trace.spikes.shape[2:]))
        total = float(trace.spikes.sum()) / n
        sa, tasa = spiking_activity(total, neurons, steps)
        records.append(LayerActivityRecord(i, neurons, total, steps, sa, tasa))
    return records


def perturbation_distance(x, x_adv):
    """L2 norm of ``|x - x_adv|`` over all entries."""
    x, x_adv = np.asarray(x, dtype=np.float64), np.asarray(x_adv, dtype=np.float64)
    if x.shape != x_adv.shape:
        raise InputError(f"shape mismatch {x.shape} vs {x_adv.shape}")
    return float(np.linalg.norm(np.abs(x - x_adv).ravel()))


def spike_pd(trace_clean, trace_adv, T=None):
    """L2 distance between spike-count maps normalized by ``T``.

    Accepts :class:`~hiresnn.spiking.SpikeTrace` objects or ``(T, ...)``
    spike arrays.
    """
    a = getattr(trace_clean, "spikes", trace_clean)
    b = getattr(trace_adv, "spikes", trace_adv)
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InputError(f"trace shapes differ: {a.shape} vs {b.shape}")
    T = len(a) if T is None else T
    return perturbation_distance(a.sum(axis=0) / T, b.sum(axis=0) / T)


# --- FLOPs and energy ---------------------------------------------------------

@dataclass
class LayerFlops:
    layer: int
    kind: str
    flops_ann: int
    zeta: float = None
    flops_snn: float = None


def flops(graph, activity=None):
    """FLOPs of every conv/linear layer.

    ANN FLOPs are ``k^2 Ho Wo Co Ci`` (conv) or ``Di Do`` (linear). For SNNs
    they are scaled by ``zeta``, the activity of the layer's input:
    ``activity`` maps layer index -> zeta (see :func:`input_activity`).
    With ``activity=None`` only ANN FLOPs are filled in.
    """
    in_shapes = graph.in_shapes()
    rows = []
    for i in graph.weighted_layers():
        spec = graph.layers[i]
        if spec.kind == "conv":
            h, w, _ = in_shapes[i]
            fl = spec.conv.flops(h, w)
        else:
            fl = spec.in_features * spec.out_features
        row = LayerFlops(i, spec.kind, fl)
        if activity is not None:
            if i not in activity:
                raise InputError(f"no spiking activity recorded for layer {i}")
            row.zeta = float(activity[i])
            row.flops_snn = fl * row.zeta
        rows.append(row)
    return rows


def input_activity(graph, cache, encoder="direct", per="step"):
    """zeta for each weighted layer: activity of the map it consumes.

    ``per="step"`` gives TASA (events per input per step), ``per="run"`` gives
    SA (events per input over the whole run). Under direct coding the first
    layer sees an analog frame every step, i.e. one event per input per step.
    """
    if per not in ("step", "run"):
        raise InputError("per must be 'step' or 'run'")
    steps = cache.steps
    scale = 1 if per == "step" else steps
    out = {}
    for i in graph.weighted_layers():
        a = cache.layer_inputs[i]
        if i == graph.weighted_layers()[0] and encoder == "direct":
            out[i] = 1.0 * scale
            continue
        # spike maps (or their average-pooled versions, which keep the mean)
        out[i] = float(np.mean(a)) * scale
    return out


def energy(layer_flops, input_mode="direct", precision="fp", constants=None):
    """Compute energy in pJ.

    ``rate``:   sum_l FL_SNN^l * E_AC
    ``direct``: FL_SNN^1 * E_MAC + sum_{l>=2} FL_SNN^l * E_AC
    ``ann``:    sum_l FL_ANN^l * E_MAC

    ``layer_flops`` is a list of :class:`LayerFlops` or of plain FLOP counts.
    """
    c = constants or EnergyConstants()
    mac, ac = c.mac(precision), c.ac(precision)
    vals = []
    for row in layer_flops:
        if isinstance(row, LayerFlops):
            row = row.flops_ann if input_mode == "ann" else row.flops_snn
            if row is None:
                raise InputError("SNN FLOPs missing; pass spiking activity to flops()")
        vals.append(Decimal(repr(float(row))) if not isinstance(row, (int, Decimal)) else Decimal(row))
    if input_mode == "ann":
        total = sum(v * mac for v in vals)
    elif input_mode == "rate":
        total = sum(v * ac for v in vals)
    elif input_mode == "direct":
        total = (vals[0] * mac if vals else Decimal(0)) + sum(v * ac for v in vals[1:])
    else:
        raise InputError(f"input_mode must be 'rate', 'direct' or 'ann', got {input_mode!r}")
    return float(total)


def layer_energies(layer_flops, input_mode="direct", precision="fp", constants=None):
    c = constants or EnergyConstants()
    out = []
    for k, row in enumerate(layer_flops):
        if input_mode == "ann":
            e = Decimal(row.flops_ann) * c.mac(precision)
        elif input_mode == "direct" and k == 0:
            e = Decimal(repr(row.flops_snn)) * c.mac(precision)
        else:
            e = Decimal(repr(row.flops_snn)) * c.ac(precision)
        out.append(float(e))
    return out


# --- evaluation ----------------------------------------------------------------

REPORT_HEADER = ("layer", "neurons", "SA", "TASA", "flops_ann", "flops_snn", "energy_pJ")


@dataclass
class EvalReport:
    accuracy: float
    clean_accuracy: float
    layers: list
    activity: list
    pd_mean: float = 0.0
    pd_max: float = 0.0

    def rows(self):
        return [dict(zip(REPORT_HEADER, r)) for r in self.layers]


def profile(graph, X, encoder="direct", seed=0, batch_size=256, per="step", precision="fp"):
    """Average activity and per-layer FLOP/energy rows for an SNN over ``X``."""
    X = np.asarray(X, dtype=np.float64)
    if len(X) == 0:
        raise InputError("empty dataset")
    if graph.mode == "ann":
        fl = flops(graph)
        energies = layer_energies(fl, "ann", precision)
        return [], [(r.layer, 0, "", "", r.flops_ann, "", e) for r, e in zip(fl, energies)]
    totals, zetas, n = {}, {}, 0
    for s in range(0, len(X), batch_size):
        xb = X[s:s + batch_size]
        _, cache = M.forward_snn(graph, xb, encoder=encoder, seed=seed)
        for rec in layer_activity(cache):
            totals[rec.layer] = totals.get(rec.layer, 0.0) + rec.total_spikes * len(xb)
        for i, z in input_activity(graph, cache, encoder, per).items():
            zetas[i] = zetas.get(i, 0.0) + z * len(xb)
        n += len(xb)
    shapes = graph.shapes()
    activity = []
    for i, total in sorted(totals.items()):
        neurons = int(np.prod(shapes[i]))
        sa, tasa = spiking_activity(total / n, neurons, graph.T)
        activity.append(LayerActivityRecord(i, neurons, total / n, graph.T, sa, tasa))
    fl = flops(graph, {i: z / n for i, z in zetas.items()})
    mode = "rate" if encoder == "poisson" else "direct"
    energies = layer_energies(fl, mode, precision)
    by_layer = {r.layer: r for r in activity}
    rows = []
    for r, e in zip(fl, energies):
        nxt = next((j for j in sorted(by_layer) if j > r.layer), None)
        act = by_layer.get(nxt) if nxt is not None and _directly_follows(graph, r.layer, nxt) else None
        rows.append((r.layer, int(np.prod(shapes[r.layer])), act.sa if act else "",
                     act.tasa if act else "", r.flops_ann, r.flops_snn, e))
    return activity, rows


def _directly_follows(graph, i, j):
    return all(graph.layers[k].kind not in M.WEIGHTED for k in range(i + 1, j))


def evaluate(graph, X, Y, attack=None, source=None, encoder="direct", seed=0, precision="fp"):
    """Top-1 accuracy (percent) on clean or attacked data plus an activity report."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y)
    if len(X) == 0:
        raise InputError("empty dataset")
    clean = attacks.accuracy(graph, X, Y, encoder, seed)
    pd_mean = pd_max = 0.0
    Xe = X
    if attack is not None:
        Xe = attacks.blackbox_generate(source or graph, graph, X, Y, attack)
        d = np.linalg.norm((X - Xe).reshape(len(X), -1), axis=1)
        pd_mean, pd_max = float(d.mean()), float(d.max())
    acc = clean if attack is None else attacks.accuracy(graph, Xe, Y, encoder, seed)
    activity, rows = profile(graph, Xe, encoder, seed, precision=precision)
    return EvalReport(acc, clean, rows, activity, pd_mean, pd_max)


def delta(acc_m1, acc_m2):
    """Accuracy difference ``Acc_M1 - Acc_M2`` in points."""
    return acc_m1 - acc_m2


def obfuscation_checklist(graph, X, Y, source=None, epsilons=(0.0, 8 / 255, 16 / 255, 32 / 255, 64 / 255, 1.0),
                          fgsm_cfg=None, pgd_cfg=None, tol=2.0, n_classes=None, alpha_scale=2.5):
    """Five gradient-masking checks. Returns rows ``(test, passed, measured)``.

    i   single-step FGSM is no stronger than iterative PGD
    ii  transfer (black-box) attacks are no stronger than white-box ones
    iii robust accuracy does not increase with the bound eps
    iv  an unbounded attack (eps = 1) drives accuracy to about chance
    v   gradient attacks find at least one adversarial example

    The eps sweep and the unbounded attack scale the PGD step with the bound
    (see :func:`attacks.attack_sweep`).
    """
    Y = np.asarray(Y)
    fgsm_cfg = fgsm_cfg or attacks.AttackConfig("fgsm")
    pgd_cfg = pgd_cfg or attacks.AttackConfig("pgd")
    n_classes = n_classes or graph.n_classes
    chance = 100.0 / n_classes
    rows = []

    acc_fgsm = attacks.robust_accuracy(graph, X, Y, fgsm_cfg)
    x_pgd = attacks.generate(graph, X, Y, pgd_cfg)
    acc_pgd = attacks.accuracy(graph, x_pgd, Y)
    rows.append(("i_single_step_weaker", acc_fgsm >= acc_pgd - tol,
                 f"fgsm={acc_fgsm:.2f} pgd={acc_pgd:.2f}"))

    if source is not None:
        acc_bb = attacks.robust_accuracy(graph, X, Y, pgd_cfg, source=source)
        rows.append(("ii_blackbox_weaker", acc_bb >= acc_pgd - tol,
                     f"bb={acc_bb:.2f} wb={acc_pgd:.2f}"))
    else:
        rows.append(("ii_blackbox_weaker", False, "no source model given"))

    curve = attacks.attack_sweep(graph, X, Y, pgd_cfg, "epsilon", epsilons, alpha_scale=alpha_scale)
    accs = [a for _, a in curve]
    monotone = all(b <= a + tol for a, b in zip(accs, accs[1:]))
    rows.append(("iii_monotone_in_eps", monotone,
                 " ".join(f"{e:.4f}:{a:.2f}" for e, a in curve)))

    unbounded = attacks.attack_sweep(graph, X, Y, pgd_cfg, "epsilon", [1.0], alpha_scale=alpha_scale)[0][1]
    rows.append(("iv_unbounded_reaches_chance", unbounded <= chance + 5.0,
                 f"eps1={unbounded:.2f} chance={chance:.2f}"))

    pred_clean = M.predict(graph, X)
    pred_adv = M.predict(graph, x_pgd)
    found = int(np.sum((pred_clean == Y) & (pred_adv != Y)))
    rows.append(("v_adversarial_found", found > 0, f"successes={found}"))
    return rows


# --- report files ------------------------------------------------------------------

def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in (r if not isinstance(r, dict) else [r[h] for h in header])])


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "pass" if v else "fail"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def write_layer_report(path, report):
    write_csv(path, REPORT_HEADER, report.layers)


def write_checklist(path, rows):
    write_csv(path, ("test", "result", "measured"), rows)


def dataclass_rows(items):
    return [[getattr(it, f.name) for f in fields(it)] for it in items]
