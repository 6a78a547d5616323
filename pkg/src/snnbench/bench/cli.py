"""Command-line entry point ``bench``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .. import analysis, attacks
from .config import ConfigError, ExperimentConfig, apply_overrides, dump_config, load_config, preset, preset_names
from .probe import complexity_probe

log = logging.getLogger("bench")


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _resolve_config(args) -> ExperimentConfig:
    if args.config:
        cfg = load_config(args.config)
    elif args.preset:
        cfg = preset(args.preset)
    else:
        raise ConfigError("give --config FILE or --preset NAME")
    overrides = list(args.set or [])
    if args.seed is not None:
        overrides.append(f"seeds=[{args.seed}]")
    if args.epochs is not None:
        overrides.append(f"epochs={args.epochs}")
    return apply_overrides(cfg, overrides) if overrides else cfg


def cmd_train(args) -> int:
    from .checkpoint import save_checkpoint
    from .report import emit_report, report_stem
    from .runner import run_experiment

    cfg = _resolve_config(args)
    out = Path(args.out)
    report, models = run_experiment(cfg, keep_models=True)
    formats = ["csv", "json"] if args.format == "both" else [args.format]
    for i, fmt in enumerate(formats):
        emit_report(report, fmt, out, figures=args.figures and i == 0)
    (out / f"{report_stem(report)}_config.yaml").write_text(dump_config(cfg))
    if args.save_models:
        for s, model in zip(report.seeds, models):
            if model is not None:
                meta = {"config": cfg.to_dict(), "seed": s.seed, "method": cfg.method, "architecture": cfg.architecture}
                save_checkpoint(out / f"{report_stem(report)}_{s.seed}.ckpt", model.net, model.context, meta)
    agg = report.aggregate
    print(f"{cfg.method} {cfg.architecture}: test accuracy {agg['test_accuracy']} over {agg['n_seeds']} seed(s) -> {out}")
    for err in report.errors:
        print(f"seed {err['seed']}: stage {err['stage']} failed: {err['message']}", file=sys.stderr)
    return 1 if report.errors else 0


def _load_model(path):
    from .checkpoint import load_checkpoint

    net, context, meta = load_checkpoint(path)
    cfg = ExperimentConfig.from_dict(meta["config"]) if "config" in meta else None
    return net, context, meta, cfg


def _test_set(cfg: ExperimentConfig, seed: int):
    from .runner import load_task

    if cfg is None:
        raise ConfigError("checkpoint metadata has no experiment config; cannot rebuild its test set")
    return load_task(cfg, seed)


def cmd_attack(args) -> int:
    from .report import BACKDOOR_COLUMNS, FGSM_COLUMNS
    from .runner import backdoor_rows

    net, _, meta, cfg = _load_model(args.model)
    seed = int(meta.get("seed", 0))
    train, test = _test_set(cfg, seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"{cfg.method}_{cfg.architecture}_{seed}"
    base = {"method": cfg.method, "architecture": cfg.architecture, "seed": seed}
    if args.fgsm_eps:
        fc = attacks.FgsmConfig(epsilon=args.fgsm_eps[0], mode=args.mode, epsilons=tuple(args.fgsm_eps))
        sweep = attacks.fgsm_sweep(net, test, fc)
        with open(out / f"{stem}_fgsm.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, FGSM_COLUMNS, lineterminator="\n")
            w.writeheader()
            for eps, acc in sweep:
                w.writerow(dict(base, epsilon=repr(eps), accuracy=repr(acc), asr=""))
                print(f"epsilon {eps:g}: accuracy {acc:.4f}")
    if args.poison_rates:
        cfg.attacks.poison_rates = list(args.poison_rates)
        cfg.attacks.poison_plans = args.plans
        rows = backdoor_rows(cfg, train, test, seed)
        with open(out / f"{stem}_backdoor_plans.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, (*BACKDOOR_COLUMNS, "source", "target"), lineterminator="\n")
            w.writeheader()
            for r in rows:
                w.writerow(dict(base, **{k: repr(v) if isinstance(v, float) else v for k, v in r.items()}))
                print(f"rate {r['rate']:g} {r['source']}->{r['target']}: asr {r['asr']:.3f} clean {r['accuracy']:.3f}")
    return 0


def cmd_analyze(args) -> int:
    from .plotting import plot_cka, plot_fisher
    from .report import FISHER_COLUMNS, write_square_csv

    net, context, meta, cfg = _load_model(args.model)
    seed = int(meta.get("seed", 0))
    _, test = _test_set(cfg, seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"{cfg.method}_{cfg.architecture}_{seed}"
    other = net if args.compare is None else _load_model(args.compare)[0]
    batch = min(args.cka_batch, len(test))
    mat = analysis.cka_matrix(net, other, test.x, batch, args.source)
    cells = [[None if np.isnan(v) else float(v) for v in row] for row in mat]
    name = f"{stem}_cka.csv" if args.compare is None else f"{stem}_vs_{Path(args.compare).stem}_cka.csv"
    write_square_csv(out / name, cells)
    plot_cka(cells, out / name.replace(".csv", ".png"))
    print(np.array2string(mat, precision=3))
    if args.fisher:
        prof = analysis.fisher_trace(
            net, test, grad_source=cfg.method, y_mode=args.y_mode, seed=seed, normalize=True, context=context, max_samples=args.samples
        )
        with open(out / f"{stem}_fisher.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, FISHER_COLUMNS, lineterminator="\n")
            w.writeheader()
            for g, v in prof.values.items():
                w.writerow({"method": cfg.method, "architecture": cfg.architecture, "seed": seed, "t": "", "group": g, "value": repr(v)})
        plot_fisher(prof.values, out / f"{stem}_fisher.png")
        print(json.dumps(prof.values, indent=2))
    return 0


PROBE_COLUMNS = ("method", "hidden", "t", "memory", "seconds_per_step")


def cmd_probe(args) -> int:
    from .plotting import plot_scaling

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tables = []
    for method in args.method:
        table = complexity_probe(method, args.sizes, args.t, n_inputs=args.inputs, repeats=args.repeats)
        tables.append(table)
        with open(out / f"probe_{method}.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(PROBE_COLUMNS)
            for p in table.points:
                w.writerow((method, p.hidden, p.t_steps, p.memory, repr(p.seconds_per_step)))
        slopes = {k: round(v, 6) for k, v in table.slopes.items()}
        (out / f"probe_{method}_slopes.json").write_text(json.dumps(slopes, indent=2, sort_keys=True) + "\n")
        print(f"{method}: " + ", ".join(f"{k}={v:.3f}" for k, v in slopes.items()))
    plot_scaling(tables, out / "probe_memory.png")
    return 0


def cmd_report(args) -> int:
    from .report import emit_report, load_report

    src = Path(args.input)
    files = sorted(src.glob("*_mean.json"))
    if not files:
        print(f"no *_mean.json reports under {src}", file=sys.stderr)
        return 1
    out = Path(args.out or src)
    rows = []
    for f in files:
        report = load_report(f)
        emit_report(report, "csv", out, figures=args.figures)
        agg = report.aggregate
        rows.append((report.method, report.architecture, agg["n_seeds"], agg["train_accuracy"], agg["test_accuracy"]))
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("method", "architecture", "n_seeds", "train_accuracy", "test_accuracy"))
        for r in rows:
            w.writerow(["" if v is None else v for v in r])
            print(*r)
    return 0


def cmd_presets(args) -> int:
    if args.show:
        print(dump_config(preset(args.show)), end="")
    else:
        print("\n".join(preset_names()))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bench", description="Train and evaluate spiking networks under three learning rules.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train the seeds of one experiment and write reports")
    t.add_argument("--config", help="YAML experiment config")
    t.add_argument("--preset", help="named preset, see `bench presets`")
    t.add_argument("--seed", type=int, help="run this single seed")
    t.add_argument("--epochs", type=int)
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config value (dotted keys for sections)")
    t.add_argument("--out", default="results")
    t.add_argument("--format", choices=("csv", "json", "both"), default="both")
    t.add_argument("--no-figures", dest="figures", action="store_false")
    t.add_argument("--save-models", action="store_true", help="write a checkpoint per seed")
    t.set_defaults(func=cmd_train)

    a = sub.add_parser("attack", help="FGSM sweep and backdoor runs against a checkpoint")
    a.add_argument("--model", required=True)
    a.add_argument("--fgsm-eps", type=_floats, default=[])
    a.add_argument("--mode", choices=attacks.FGSM_MODES, default="ann-counterpart")
    a.add_argument("--poison-rates", type=_floats, default=[])
    a.add_argument("--plans", type=int, default=5)
    a.add_argument("--out", default="results")
    a.set_defaults(func=cmd_attack)

    z = sub.add_parser("analyze", help="CKA matrix and Fisher profile of a checkpoint")
    z.add_argument("--model", required=True)
    z.add_argument("--compare", help="second checkpoint for cross-model CKA")
    z.add_argument("--source", choices=("spikes", "potentials"), default="spikes")
    z.add_argument("--cka-batch", type=int, default=128)
    z.add_argument("--fisher", action="store_true")
    z.add_argument("--y-mode", choices=("sample", "expected", "argmax", "label"), default="sample")
    z.add_argument("--samples", type=int, default=64)
    z.add_argument("--out", default="results")
    z.set_defaults(func=cmd_analyze)

    pr = sub.add_parser("probe", help="learning-state memory and time scaling")
    pr.add_argument("--method", type=lambda s: s.split(","), default=["bptt", "eprop", "decolle"])
    pr.add_argument("--t", type=_ints, default=[10, 20, 40, 80])
    pr.add_argument("--sizes", type=_ints, default=[32, 64, 128])
    pr.add_argument("--inputs", type=int, default=64)
    pr.add_argument("--repeats", type=int, default=3)
    pr.add_argument("--out", default="results")
    pr.set_defaults(func=cmd_probe)

    r = sub.add_parser("report", help="re-emit CSV summaries and figures from JSON reports")
    r.add_argument("--in", dest="input", required=True)
    r.add_argument("--out")
    r.add_argument("--no-figures", dest="figures", action="store_false")
    r.set_defaults(func=cmd_report)

    ps = sub.add_parser("presets", help="list presets or print one as YAML")
    ps.add_argument("--show", metavar="NAME")
    ps.set_defaults(func=cmd_presets)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"bench {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
