"""Command-line harness: gen-data, search, train, eval, plot."""
from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np
import torch

from .config import ConfigError, ExperimentConfig, load_config
from .eval import write_report_csv, write_report_text
from .nas import Genotype, save_alpha
from .phantom import PhantomConfig, generate_dataset, tree_hash
from .pipeline import MissingPrerequisiteError, evaluate_network, evaluate_random, load_splits
from .qlearn import load_network, run_search, run_train, save_network, write_curves

EXIT_OK, EXIT_CONFIG, EXIT_MISSING, EXIT_RUNTIME = 0, 2, 3, 4


def _prepare_out(path: Path, force: bool) -> Path:
    if path.exists() and any(path.iterdir()) and not force:
        raise ConfigError(f"output directory {path} is not empty (use --force)")
    path.mkdir(parents=True, exist_ok=True)
    return path


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    over = {"seed": args.seed} if args.seed is not None else {}
    if getattr(args, "data", None):
        over["data"] = args.data
    if getattr(args, "out", None):
        over["out"] = args.out
    return cfg.with_overrides(**over) if over else cfg


def _echo(cfg: ExperimentConfig, out: Path, inputs: dict[str, Path] | None = None) -> None:
    (out / "config.txt").write_text(cfg.echo())
    if inputs:
        lines = [f"{k} {tree_hash(v)}" for k, v in sorted(inputs.items())]
        (out / "inputs.txt").write_text("\n".join(lines) + "\n")


def _progress(tag):
    def log(e):
        print(f"[{tag}] epoch {e.epoch} reward {e.accumulated_reward:.3f} SAD {e.mean_sad:.3f} "
              f"loss {e.loss:.5f} eps {e.epsilon:.3f}", flush=True)
    return log


def cmd_gen_data(args) -> int:
    if args.seeds < 1:
        raise ConfigError("--seeds must be >= 1")
    pcfg = PhantomConfig(shape=args.shape, angle_spread=args.angle_spread).validate()
    out = _prepare_out(Path(args.out), args.force)
    base = args.seed if args.seed is not None else 0
    generate_dataset(out, args.seeds, pcfg, seed_base=base)
    print(f"wrote {args.seeds} cases to {out} (hash {tree_hash(out)[:12]})")
    return EXIT_OK


def cmd_search(args) -> int:
    cfg = _config(args)
    if not cfg.data:
        raise ConfigError("no dataset given (--data or data=)")
    splits = load_splits(cfg.data, cfg.n_train, cfg.n_val, 0, cfg.align)
    out = _prepare_out(Path(cfg.out or args.out), args.force)
    _echo(cfg, out, {"data": Path(cfg.data)})
    res = run_search(splits.train, splits.val, cfg.trainer, log=_progress("search"))
    res.genotype.save(out / "genotype.txt")
    save_alpha(out / "alpha", res.alpha, res.epoch)
    for e, snap in enumerate(res.snapshots, start=1):
        save_alpha(out / "alpha_epochs" / f"epoch_{e:03d}", snap, e)
    write_curves(out / "history.csv", res.logs)
    print(f"selected epoch {res.epoch}; genotype written to {out / 'genotype.txt'}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    t = cfg.trainer
    if not cfg.data:
        raise ConfigError("no dataset given (--data or data=)")
    genotype = None
    needs_genotype = t.backbone == "searched" or t.rnn == "searched"
    if needs_genotype:
        if not args.search:
            raise MissingPrerequisiteError("this variant needs a searched genotype: pass --search DIR")
        gpath = Path(args.search) / "genotype.txt"
        if not gpath.exists():
            raise MissingPrerequisiteError(f"missing {gpath}; run search first")
        genotype = Genotype.load(gpath)
        if t.backbone != "searched":
            genotype.cells = {}
        if t.rnn != "searched":
            genotype.rnn = None
    splits = load_splits(cfg.data, cfg.n_train, cfg.n_val, 0, cfg.align)
    out = _prepare_out(Path(cfg.out or args.out), args.force)
    inputs = {"data": Path(cfg.data)}
    if needs_genotype:
        inputs["genotype"] = gpath
    _echo(cfg, out, inputs)
    res = run_train(splits.train, splits.val, genotype, t, log=_progress("train"))
    save_network(out / "checkpoint", res.net, genotype, t)
    write_curves(out / "curves.csv", res.logs)
    last = res.logs[-1]
    (out / "final_val.txt").write_text(f"accumulated_reward {last.accumulated_reward!r}\n"
                                       f"mean_SAD {last.mean_sad!r}\n")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _config(args)
    if not cfg.data:
        raise ConfigError("no dataset given (--data or data=)")
    ckpt = Path(args.checkpoint) / "checkpoint"
    if not (ckpt / "weights.manifest").exists():
        raise MissingPrerequisiteError(f"no checkpoint under {args.checkpoint}; run train first")
    n_test = cfg.n_test if args.split == "test" else 0
    splits = load_splits(cfg.data, cfg.n_train, cfg.n_val, n_test, cfg.align)
    cases = splits.get(args.split)
    if not cases:
        raise ConfigError(f"split {args.split!r} is empty")
    out = _prepare_out(Path(cfg.out or args.out), args.force)
    _echo(cfg, out, {"data": Path(cfg.data), "checkpoint": ckpt})
    net = load_network(ckpt, cfg.trainer)
    reports, summary = [], []
    ev = evaluate_network(net, cases, cfg.trainer, args.split, args.label)
    reports.append(ev.report)
    summary.append((args.label, ev))
    if args.baseline:
        rnd = evaluate_random(cases, cfg.trainer, args.split)
        reports.append(rnd.report)
        summary.append(("Random", rnd))
    write_report_csv(out / "report.csv", reports)
    write_report_text(out / "report.txt", reports)
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variant", "split", "accumulated_reward", "mean_SAD", "initial_SAD"])
        for label, e in summary:
            w.writerow([label, args.split, repr(e.accumulated_reward), repr(e.mean_sad),
                        repr(float(e.init_sad.mean()))])
    print((out / "report.txt").read_text())
    return EXIT_OK


def cmd_plot(args) -> int:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    paths = [Path(p) for p in args.csv]
    for p in paths:
        if not p.exists():
            raise MissingPrerequisiteError(f"missing curve file {p}")
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    for p in paths:
        with open(p) as fh:
            rows = list(csv.DictReader(fh))
        try:
            ep = [int(r["epoch"]) for r in rows]
            reward = [float(r["accumulated_reward"]) for r in rows]
            sad = [float(r["mean_SAD"]) for r in rows]
        except KeyError as exc:
            raise ConfigError(f"{p} lacks column {exc}") from exc
        label = p.parent.name or p.stem
        axes[0].plot(ep, reward, marker="o", label=label)
        axes[1].plot(ep, sad, marker="o", label=label)
    axes[0].set_ylabel("accumulated reward (validation)")
    axes[1].set_ylabel("mean SAD (validation)")
    for ax in axes:
        ax.set_xlabel("epoch")
        ax.legend()
    fig.tight_layout()
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, dpi=100)
    plt.close(fig)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="planeloc", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=True):
        sp.add_argument("--seed", type=int, default=None, help="single source of randomness")
        sp.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")
        if data:
            sp.add_argument("--config", help="key=value config file")
            sp.add_argument("--data", help="dataset directory from gen-data")
        sp.add_argument("--out", required=True)

    g = sub.add_parser("gen-data", help="generate a phantom dataset")
    g.add_argument("--seeds", type=int, required=True, help="number of cases")
    g.add_argument("--angle-spread", type=float, default=PhantomConfig.angle_spread)
    g.add_argument("--shape", type=int, default=PhantomConfig.shape)
    common(g, data=False)
    g.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("search", help="architecture search")
    common(s)
    s.set_defaults(func=cmd_search)

    t = sub.add_parser("train", help="retrain a fixed architecture")
    common(t)
    t.add_argument("--search", help="search output directory holding genotype.txt")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a trained checkpoint")
    common(e)
    e.add_argument("--checkpoint", required=True, help="train output directory")
    e.add_argument("--split", choices=("test", "val"), default="test")
    e.add_argument("--label", default="model")
    e.add_argument("--baseline", action="store_true", help="also evaluate a uniform-random policy")
    e.set_defaults(func=cmd_eval)

    pl = sub.add_parser("plot", help="plot reward / SAD curves from CSV files")
    pl.add_argument("--csv", nargs="+", required=True)
    pl.add_argument("--out", required=True)
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    torch.set_num_threads(1)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingPrerequisiteError as exc:
        print(f"missing prerequisite: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except Exception as exc:  # noqa: BLE001
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
