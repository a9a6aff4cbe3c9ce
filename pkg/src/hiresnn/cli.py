"""Command-line experiment runner.

Every subcommand reads/writes files in an output directory and exits with
0 on success, 2 on a configuration error, 3 when an upstream artifact is
missing and 4 on a malformed data file.

Settings come from three places. A JSON ``--config`` file (keys are the long
flag names with dashes or underscores) is overridden by the ``HIRESNN_OUT``
environment variable (output directory only), which is overridden by flags
given on the command line.
"""
import argparse
import json
import os
import sys
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path

from . import attacks, checkpoint, datasets, metrics, training
from . import model as M
from .errors import (ConfigurationError, ContractError, DataFormatError, DependencyError,
                     InputError)

EXIT_OK, EXIT_CONFIG, EXIT_DEPENDENCY, EXIT_DATA = 0, 2, 3, 4
ENV_OUT = "HIRESNN_OUT"
RESULT_HEADER = ("model", "setting", "family", "epsilon", "alpha", "K", "accuracy")
SWEEP_HEADER = ("param", "value", "clean", "fgsm", "pgd")


@dataclass
class ExperimentConfig:
    data: str = "synthetic"
    format: str = "idx"
    test_data: str = None
    n_train: int = 2000
    n_test: int = 500
    conv_channels: list = field(default_factory=lambda: [8])
    hidden: list = field(default_factory=list)
    stride: int = 2
    out: str = "runs"
    seed: int = 0


def number(text):
    """Float or exact fraction such as ``8/255``."""
    try:
        return float(Fraction(str(text)))
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None


def number_list(text):
    """``a,b,c`` or an inclusive range ``lo:hi[:count]`` (count defaults to 5)."""
    try:
        if ":" in text:
            parts = [Fraction(p) for p in text.split(":")]
            if len(parts) == 2:
                parts.append(Fraction(5))
            lo, hi, n = parts
            if n < 2 or n.denominator != 1:
                raise ValueError
            return [float(lo + (hi - lo) * i / (n - 1)) for i in range(int(n))]
        return [float(Fraction(p)) for p in text.split(",") if p]
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"not a number list: {text!r}") from None


def _common(p):
    p.add_argument("--config", help="JSON file with default settings")
    p.add_argument("--out", help=f"output directory (env {ENV_OUT})")
    p.add_argument("--seed", type=int)
    p.add_argument("--data", help="'synthetic' or a dataset file")
    p.add_argument("--format", choices=("idx", "cifar-binary", "csv"))
    p.add_argument("--test-data")
    p.add_argument("--n-train", type=int)
    p.add_argument("--n-test", type=int)


def _snn_flags(p):
    p.add_argument("--T", type=int)
    p.add_argument("--N", type=int)
    p.add_argument("--eps-s", type=number)
    p.add_argument("--eps-t", type=number)
    p.add_argument("--gamma", type=number)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=number)
    p.add_argument("--momentum", type=number)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--freeze-v-t", action="store_true", default=None)
    p.add_argument("--freeze-l-k", action="store_true", default=None)
    p.add_argument("--reset-state", action="store_true", default=None,
                   help="reset membrane potentials at every period boundary")
    p.add_argument("--detach-reset", action="store_true", default=None)


def _attack_flags(p):
    p.add_argument("--family", choices=attacks.FAMILIES)
    p.add_argument("--eps", type=number)
    p.add_argument("--alpha", type=number)
    p.add_argument("--K", type=int)
    p.add_argument("--random-start", action="store_true", default=None)
    p.add_argument("--source", help="checkpoint used to craft black-box examples")


def build_parser():
    parser = argparse.ArgumentParser(prog="hiresnn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-ann", help="train the ANN that seeds conversion")
    _common(p)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=number)
    p.add_argument("--momentum", type=number)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--conv-channels", type=lambda s: [int(v) for v in s.split(",") if v])
    p.add_argument("--hidden", type=lambda s: [int(v) for v in s.split(",") if v])
    p.add_argument("--stride", type=int)

    p = sub.add_parser("convert", help="ANN -> SNN with calibrated thresholds")
    _common(p)
    p.add_argument("--ann", help="ANN checkpoint (default OUT/ann.ckpt)")
    p.add_argument("--T", type=int)
    p.add_argument("--percentile", type=number)
    p.add_argument("--calibration-size", type=int)

    p = sub.add_parser("train-snn", help="traditional, HIRE or Gaussian-noise SNN training")
    _common(p)
    p.add_argument("--mode", choices=("traditional", "hire", "gaussian"))
    p.add_argument("--snn", help="converted SNN checkpoint (default OUT/snn.ckpt)")
    p.add_argument("--tag", help="name of the output checkpoint (default snn-MODE)")
    _snn_flags(p)

    p = sub.add_parser("attack", help="FGSM/PGD robust accuracy, white- or black-box")
    _common(p)
    p.add_argument("--model", help="target checkpoint")
    _attack_flags(p)
    p.add_argument("--export", help="write the adversarial batch as IDX files with this prefix")

    p = sub.add_parser("eval", help="clean/attacked accuracy and per-layer activity report")
    _common(p)
    p.add_argument("--model")
    _attack_flags(p)
    p.add_argument("--checklist", action="store_true", default=None,
                   help="also run the five gradient-obfuscation checks")

    p = sub.add_parser("sweep", help="accuracy vs eps, K, or the HIRE noise step eps_s")
    _common(p)
    p.add_argument("--model")
    p.add_argument("--snn", help="converted SNN used as the start of every eps_s run")
    _attack_flags(p)
    p.add_argument("--eps-list", type=number_list, help="e.g. 0,8/255,16/255 or 0:1:6")
    p.add_argument("--K-list", type=number_list)
    _snn_flags(p)

    p = sub.add_parser("energy-report", help="FLOPs and compute energy per layer")
    _common(p)
    p.add_argument("--model")
    p.add_argument("--precision", choices=("fp", "int"))
    p.add_argument("--encoder", choices=("direct", "poisson"))

    p = sub.add_parser("compare", help="accuracy deltas between two result CSVs")
    _common(p)
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--output", help="output CSV (default OUT/compare.csv)")
    return parser


# sweep reuses --eps-s as a list, so parse it leniently there
def _sweep_eps_s(text):
    return number_list(text)


def _check_config(loaded, actions):
    """Validate config-file entries against the subcommand's flags."""
    by_dest = {a.dest: a for a in actions}
    clean = {}
    for key, value in loaded.items():
        dest = key.replace("-", "_")
        action = by_dest.get(dest)
        if action is None or dest in ("help", "config"):
            raise ConfigurationError(f"config field '{key}': not an option of this command")
        if action.type is not None and value is not None and not isinstance(value, bool):
            text = ",".join(str(v) for v in value) if isinstance(value, list) else str(value)
            try:
                value = action.type(text)
            except (argparse.ArgumentTypeError, ValueError) as e:
                raise ConfigurationError(f"config field '{key}': {e}") from None
        if action.choices is not None and value not in action.choices:
            raise ConfigurationError(f"config field '{key}': {value!r} not in {list(action.choices)}")
        clean[dest] = value
    return clean


def resolve(args, actions=()):
    """Merge config file < environment < flags into a flat settings dict."""
    settings = {}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise DependencyError(f"config file {path} not found")
        try:
            loaded = json.loads(path.read_text())
        except ValueError as e:
            raise ConfigurationError(f"config file {path}: {e}") from None
        if not isinstance(loaded, dict):
            raise ConfigurationError("config file must hold a JSON object")
        settings.update(_check_config(loaded, actions))
    if os.environ.get(ENV_OUT):
        settings["out"] = os.environ[ENV_OUT]
    for k, v in vars(args).items():
        if v is not None and k != "config":
            settings[k] = v
    base = asdict(ExperimentConfig())
    for k, v in base.items():
        settings.setdefault(k, v)
    return settings


def _out(s):
    out = Path(s["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def load_data(s):
    if s["data"] == "synthetic":
        Xtr, Ytr = datasets.make_bars(s["n_train"], seed=s["seed"])
        Xte, Yte = datasets.make_bars(s["n_test"], seed=s["seed"] + 1)
        return (Xtr, Ytr), (Xte, Yte)
    Xtr, Ytr = datasets.ingest_dataset(s["data"], s["format"])
    if s.get("test_data"):
        Xte, Yte = datasets.ingest_dataset(s["test_data"], s["format"])
    else:
        Xte, Yte = Xtr, Ytr
    return (Xtr[:s["n_train"]], Ytr[:s["n_train"]]), (Xte[:s["n_test"]], Yte[:s["n_test"]])


def desk_model(input_shape, n_classes, s):
    """Conv stack per ``conv_channels`` (stride ``stride``) then pooled readout."""
    layers = []
    h, w, c = input_shape
    for co in s["conv_channels"]:
        spec = M.ConvSpec(3, c, co, stride=s["stride"], padding=1)
        h, w = spec.output_size(h, w)
        layers += [M.LayerSpec("conv", conv=spec), M.neuron()]
        if h % 2 == 0 and w % 2 == 0:
            layers.append(M.avgpool(2))
            h, w = h // 2, w // 2
        c = co
    d = h * w * c
    for dh in s["hidden"]:
        layers += [M.linear(d, dh), M.neuron(), M.dropout(0.2)]
        d = dh
    layers += [M.linear(d, n_classes), M.output()]
    return M.init_params(M.ModelGraph(layers, input_shape), s["seed"])


def _train_cfg(s, mode):
    keys = ("T", "N", "eps_s", "eps_t", "gamma", "epochs", "lr", "momentum", "batch_size",
            "freeze_v_t", "freeze_l_k", "detach_reset", "seed")
    kw = {k: s[k] for k in keys if s.get(k) is not None}
    if s.get("reset_state"):
        kw["carry_state"] = False
    if mode != "ann":
        kw.setdefault("lr", 0.01)
        kw.setdefault("momentum", 0.9)
        kw.setdefault("epochs", 8)
        if "eps_s" in kw and "eps_t" not in kw:
            kw["eps_t"] = kw["eps_s"]
    return training.TrainConfig(mode=mode, **kw)


def _ckpt(s, key, default):
    return Path(s.get(key) or (_out(s) / default))


def _attack_cfg(s):
    kw = {}
    for flag, name in (("family", "family"), ("eps", "epsilon"), ("alpha", "alpha"), ("K", "K"),
                       ("random_start", "random_start")):
        if s.get(flag) is not None:
            kw[name] = s[flag]
    kw["seed"] = s["seed"]
    return attacks.AttackConfig(**kw)


def _result_row(name, setting, cfg, acc):
    if cfg is None:
        return (name, setting, "clean", 0.0, 0.0, 0, acc)
    return (name, setting, cfg.family, cfg.epsilon, cfg.alpha if cfg.family == "pgd" else 0.0,
            cfg.K if cfg.family == "pgd" else 0, acc)


def cmd_train_ann(s):
    (Xtr, Ytr), (Xte, Yte) = load_data(s)
    graph = desk_model(Xtr.shape[1:], int(max(Ytr.max(), Yte.max())) + 1, s)
    kw = {k: s[k] for k in ("epochs", "lr", "momentum", "batch_size") if s.get(k) is not None}
    kw.setdefault("epochs", 8)
    kw.setdefault("lr", 0.05)
    kw.setdefault("momentum", 0.9)
    cfg = training.TrainConfig(mode="ann", seed=s["seed"], **kw)
    res = training.train_ann(graph, Xtr, Ytr, cfg, val=(Xte, Yte))
    out = _out(s)
    checkpoint.save_checkpoint(out / "ann.ckpt", graph, {"train": cfg.to_dict()})
    metrics.write_csv(out / "train_ann.csv", training.CSV_HEADER, res.history)
    print(f"ann: val accuracy {res.history[-1]['val_acc']:.2f}%" if res.history else "ann: 0 epochs")


def cmd_convert(s):
    ann, meta = checkpoint.load_checkpoint(_ckpt(s, "ann", "ann.ckpt"))
    (Xtr, _), (Xte, Yte) = load_data(s)
    n = s.get("calibration_size") or 256
    snn = M.convert_ann_to_snn(ann, Xtr[:n], percentile=s.get("percentile") or 99.7, T=s.get("T") or 6)
    out = _out(s)
    checkpoint.save_checkpoint(out / "snn.ckpt", snn, {"converted_from": meta})
    print(f"converted SNN: clean accuracy {attacks.accuracy(snn, Xte, Yte):.2f}% at T={snn.T}")


def cmd_train_snn(s):
    mode = "snn-" + (s.get("mode") or "hire")
    snn, meta = checkpoint.load_checkpoint(_ckpt(s, "snn", "snn.ckpt"))
    cfg = _train_cfg(s, mode)
    if cfg.T != snn.T:
        snn.T = cfg.T
    (Xtr, Ytr), val = load_data(s)
    res = training.train(snn, Xtr, Ytr, cfg, val=val)
    out = _out(s)
    tag = s.get("tag") or mode
    checkpoint.save_checkpoint(out / f"{tag}.ckpt", snn, {"train": cfg.to_dict()})
    metrics.write_csv(out / f"train_{tag}.csv", training.CSV_HEADER, res.history)
    print(f"{tag}: val accuracy {res.history[-1]['val_acc']:.2f}%" if res.history else f"{tag}: 0 epochs")


def cmd_attack(s):
    target_path = _ckpt(s, "model", "snn-hire.ckpt")
    target, _ = checkpoint.load_checkpoint(target_path)
    source = checkpoint.load_checkpoint(Path(s["source"]))[0] if s.get("source") else None
    _, (Xte, Yte) = load_data(s)
    cfg = _attack_cfg(s)
    x_adv = attacks.blackbox_generate(source or target, target, Xte, Yte, cfg)
    acc = attacks.accuracy(target, x_adv, Yte)
    clean = attacks.accuracy(target, Xte, Yte)
    setting = "BB" if source is not None else "WB"
    rows = [_result_row(target_path.stem, setting, None, clean),
            _result_row(target_path.stem, setting, cfg, acc)]
    out = _out(s)
    metrics.write_csv(out / "attack.csv", RESULT_HEADER, rows)
    if s.get("export"):
        datasets.export_idx(out / s["export"], x_adv, Yte)
    print(f"{setting} {cfg.family}: {acc:.2f}% (clean {clean:.2f}%)")


def cmd_eval(s):
    path = _ckpt(s, "model", "snn-hire.ckpt")
    graph, _ = checkpoint.load_checkpoint(path)
    source = checkpoint.load_checkpoint(Path(s["source"]))[0] if s.get("source") else None
    _, (Xte, Yte) = load_data(s)
    cfg = _attack_cfg(s) if s.get("family") else None
    rep = metrics.evaluate(graph, Xte, Yte, attack=cfg, source=source)
    out = _out(s)
    setting = "BB" if source is not None else "WB"
    rows = [_result_row(path.stem, setting, None, rep.clean_accuracy)]
    if cfg is not None:
        rows.append(_result_row(path.stem, setting, cfg, rep.accuracy))
    metrics.write_csv(out / "eval.csv", RESULT_HEADER, rows)
    metrics.write_layer_report(out / "eval_layers.csv", rep)
    if s.get("checklist"):
        checks = metrics.obfuscation_checklist(graph, Xte, Yte, source=source)
        metrics.write_checklist(out / "checklist.csv", checks)
    print(f"accuracy {rep.accuracy:.2f}% (clean {rep.clean_accuracy:.2f}%)")


def cmd_sweep(s):
    out = _out(s)
    _, (Xte, Yte) = load_data(s)
    rows = []
    eps_s = s.get("eps_s")
    if isinstance(eps_s, (list, tuple)):
        base, _ = checkpoint.load_checkpoint(_ckpt(s, "snn", "snn.ckpt"))
        (Xtr, Ytr), _ = load_data(s)
        for v in eps_s:
            graph = base.copy()
            cfg = _train_cfg({**s, "eps_s": v, "eps_t": v}, "snn-hire" if v > 0 else "snn-traditional")
            graph.T = cfg.T
            training.train(graph, Xtr, Ytr, cfg)
            rows.append(("eps_s", v) + _triple(graph, Xte, Yte, s))
    else:
        graph, _ = checkpoint.load_checkpoint(_ckpt(s, "model", "snn-hire.ckpt"))
        cfg = _attack_cfg(s)
        if s.get("K_list"):
            cfg.family = "pgd"
            curve = attacks.attack_sweep(graph, Xte, Yte, cfg, "K", [int(k) for k in s["K_list"]])
            rows = [("K", k, "", "", a) for k, a in curve]
        else:
            values = s.get("eps_list") or [0.0, 4 / 255, 8 / 255, 16 / 255, 32 / 255, 1.0]
            curve = attacks.attack_sweep(graph, Xte, Yte, cfg, "epsilon", values)
            rows = [("epsilon", e, "", a, "") if cfg.family == "fgsm" else ("epsilon", e, "", "", a)
                    for e, a in curve]
    metrics.write_csv(out / "sweep.csv", SWEEP_HEADER, rows)
    print(f"sweep: {len(rows)} points written to {out / 'sweep.csv'}")


def _triple(graph, X, Y, s):
    clean = attacks.accuracy(graph, X, Y)
    f = attacks.robust_accuracy(graph, X, Y, attacks.AttackConfig("fgsm", seed=s["seed"]))
    p = attacks.robust_accuracy(graph, X, Y, attacks.AttackConfig("pgd", seed=s["seed"]))
    return clean, f, p


def cmd_energy_report(s):
    graph, _ = checkpoint.load_checkpoint(_ckpt(s, "model", "snn-hire.ckpt"))
    _, (Xte, _) = load_data(s)
    precision = s.get("precision") or "fp"
    encoder = s.get("encoder") or "direct"
    out = _out(s)
    _, rows = metrics.profile(graph, Xte, encoder=encoder, precision=precision)
    fl = metrics.flops(graph)
    ann_pj = metrics.energy(fl, "ann", precision)
    total = sum(r[-1] for r in rows)
    rows = list(rows) + [("total", "", "", "", sum(r.flops_ann for r in fl), "", total),
                         ("ann_baseline", "", "", "", "", "", ann_pj)]
    metrics.write_csv(out / "energy.csv", metrics.REPORT_HEADER, rows)
    print(f"{encoder} SNN energy {total:.1f} pJ/step, ANN {ann_pj:.1f} pJ ({precision})")


def cmd_compare(s):
    a, b = Path(s["a"]), Path(s["b"])
    for p in (a, b):
        if not p.exists():
            raise DependencyError(f"result file {p} not found")
    ra, rb = metrics.read_csv(a), metrics.read_csv(b)
    key = lambda r: (r.get("setting"), r.get("family"), r.get("epsilon"), r.get("alpha"), r.get("K"))
    index = {key(r): r for r in rb}
    rows = []
    for r in ra:
        other = index.get(key(r))
        if other is None or "accuracy" not in r:
            continue
        acc_a, acc_b = float(r["accuracy"]), float(other["accuracy"])
        label = "delta_d" if r["family"] == "clean" else "delta_a"
        rows.append((r["setting"], r["family"], r["epsilon"], r["alpha"], r["K"], r["model"],
                     other["model"], repr(acc_a), repr(acc_b), label, repr(metrics.delta(acc_a, acc_b))))
    if not rows:
        raise ConfigurationError("the two result files share no comparable rows")
    out_path = Path(s["output"]) if s.get("output") else _out(s) / "compare.csv"
    metrics.write_csv(out_path, ("setting", "family", "epsilon", "alpha", "K", "model_a", "model_b",
                                 "accuracy_a", "accuracy_b", "delta", "value"), rows)
    for r in rows:
        print(f"{r[0]} {r[1]} eps={r[2]}: {r[9]} = {float(r[10]):+.2f}")


COMMANDS = {
    "train-ann": cmd_train_ann,
    "convert": cmd_convert,
    "train-snn": cmd_train_snn,
    "attack": cmd_attack,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "energy-report": cmd_energy_report,
    "compare": cmd_compare,
}


def main(argv=None):
    parser = build_parser()
    # sweep takes a list for --eps-s
    argv = list(sys.argv[1:] if argv is None else argv)
    subparsers = parser._subparsers._group_actions[0].choices
    for action in subparsers["sweep"]._actions:
        if action.dest == "eps_s":
            action.type = _sweep_eps_s
    args = parser.parse_args(argv)
    try:
        settings = resolve(args, subparsers[args.command]._actions)
        COMMANDS[args.command](settings)
    except DependencyError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DEPENDENCY
    except DataFormatError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as e:
        print(f"error: missing file {e}", file=sys.stderr)
        return EXIT_DEPENDENCY
    except (ConfigurationError, InputError, ContractError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
