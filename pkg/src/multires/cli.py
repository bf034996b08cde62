"""Command line entry point: ``multires <subcommand> ...``."""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import harness as hz
from .data import (DataError, SyntheticConfig, build_vocab, generate_synthetic, load_corrections, parse_casas,
                   preprocess_day, write_casas, write_instances)
from .metrics import classification_report

EXIT_OK, EXIT_USAGE, EXIT_MISSING, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4, 5, 6

log = logging.getLogger("multires")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"usage error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _config(args) -> hz.RunConfig:
    cfg = hz.load_config(args.config) if args.config else hz.RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "instances", None):
        cfg.data.instances = args.instances
    if getattr(args, "jobs", None):
        cfg.jobs = args.jobs
    if getattr(args, "folds", None):
        cfg.folds = tuple(args.folds)
    cfg.validate()
    return cfg


def _fold_split(cfg: hz.RunConfig, fold: int):
    instances = hz.load_instance_dir(os.environ.get(hz.DATA_ENV) or cfg.data.instances)
    plan = hz.plan_for(cfg, sorted({i.day_id for i in instances}))
    if not 1 <= fold <= len(plan.folds):
        raise hz.ConfigError(f"fold {fold} outside 1..{len(plan.folds)}")
    test_days = set(plan.test_days(fold))
    return ([i for i in instances if i.day_id not in test_days],
            [i for i in instances if i.day_id in test_days])


# ---------------------------------------------------------------- commands

def cmd_prep(args) -> int:
    src, dst = Path(args.input), Path(args.out)
    files = sorted(p for p in src.iterdir() if p.is_file()) if src.is_dir() else []
    if not files:
        raise FileNotFoundError(f"no day files in {src}")
    corrections = load_corrections(args.corrections) if args.corrections else {}
    dst.mkdir(parents=True, exist_ok=True)
    tokens, total = [], 0
    for day, path in enumerate(files, start=1):
        parsed = parse_casas(path, corrections, args.label_offset)
        instances, notes = preprocess_day(parsed.events, day, args.n_labels, args.width, args.step)
        with open(dst / f"day{day:02d}.tsv", "w") as fh:
            write_instances(instances, fh)
        tokens.extend(t for inst in instances for t in inst.window)
        total += len(instances)
        print(f"{path.name}: day {day}, {len(parsed.events)} events, layout {parsed.layout}, "
              f"{parsed.skipped} skipped lines, {len(instances)} instances")
        for note in parsed.diagnostics[:5] + notes:
            log.info("%s: %s", path.name, note)
    if tokens:
        build_vocab(tokens).save(dst / "vocab.tsv")
    print(f"{len(files)} days, {total} instances -> {dst}")
    return EXIT_OK


def cmd_synth(args) -> int:
    cfg = SyntheticConfig(overlap=args.overlap, days=args.days, seed=args.seed,
                          events_per_day=args.events_per_day)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    inst_dir = Path(args.instances) if args.instances else None
    if inst_dir:
        inst_dir.mkdir(parents=True, exist_ok=True)
    for d in range(cfg.days):
        events = generate_synthetic(cfg, d)
        with open(out / f"day{d + 1:02d}.txt", "w") as fh:
            write_casas(events, fh)
        if inst_dir:
            instances, _ = preprocess_day(events, d + 1, cfg.n_labels)
            with open(inst_dir / f"day{d + 1:02d}.tsv", "w") as fh:
                write_instances(instances, fh)
    print(f"{cfg.days} synthetic day files ({cfg.n_labels} activity classes) -> {out}")
    return EXIT_OK


def cmd_train_sep(args) -> int:
    cfg = _config(args)
    train, _ = _fold_split(cfg, args.fold)
    vocab = hz.fold_vocab(train)
    result = hz.train_seq2res(cfg, train, vocab, seed=cfg.seed * 1000 + args.fold, epochs=args.epochs)
    hz.save_model(result.model, vocab, Path(args.out), {"fold": args.fold})
    print(f"seq2res fold {args.fold}: final loss {result.history[-1]:.4f} -> {args.out}")
    return EXIT_OK


def cmd_train_cls(args) -> int:
    cfg = _config(args)
    train, _ = _fold_split(cfg, args.fold)
    sep = None
    if args.scenario == "S2S_Sep":
        if not args.sep:
            raise hz.ConfigError("S2S_Sep needs --sep CHECKPOINT")
        sep, vocab, meta = hz.load_model(args.sep, with_meta=True)
        if meta.get("fold") != args.fold:
            raise hz.ConfigError(f"separation checkpoint is for fold {meta.get('fold')}, not {args.fold}")
    else:
        vocab = hz.fold_vocab(train)
    result = hz.train_classifier(cfg, train, vocab, args.scenario, args.model, sep,
                                 seed=cfg.seed * 1000 + args.fold, epochs=args.epochs)
    hz.save_model(result.model, vocab, Path(args.out), {"fold": args.fold, "scenario": args.scenario})
    print(f"{args.model} {args.scenario} fold {args.fold}: final loss {result.history[-1]:.4f} -> {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _config(args)
    _, test = _fold_split(cfg, args.fold)
    sep = None
    if args.sep:
        sep, vocab, meta = hz.load_model(args.sep, with_meta=True)
        if meta.get("fold") != args.fold:
            raise hz.ConfigError(f"separation checkpoint is for fold {meta.get('fold')}, not {args.fold}")
        bleu = hz.evaluate_separation(sep, test, vocab, cfg.bleu_specials, cfg.bleu_smoothing)
        print(f"separation\tbleu\t{bleu['overall']:.6f}")
    if args.cls:
        model, vocab, meta = hz.load_model(args.cls, with_meta=True)
        if meta.get("fold") != args.fold:
            raise hz.ConfigError(f"classifier checkpoint is for fold {meta.get('fold')}, not {args.fold}")
        scenario = meta.get("scenario", "No_Sep")
        preds = hz.predict_classifier(model, hz.classifier_inputs(scenario, test, vocab, sep))
        scores = classification_report([p.predicted_set for p in preds], [i.label_set for i in test],
                                        model.n_labels)
        print(f"{scenario}\taccuracy\t{scores.accuracy:.6f}\n{scenario}\tmacro_f1\t{scores.macro_f1:.6f}")
    if not (args.sep or args.cls):
        raise hz.ConfigError("eval needs --sep and/or --cls")
    return EXIT_OK


def cmd_run_all(args) -> int:
    cfg = _config(args)
    if args.out:
        cfg.output_dir = args.out
    report = hz.run_all(cfg)
    print(hz.render_tables(report))
    print(f"reports -> {cfg.output_dir} ({report.wall_clock:.0f} s)")
    return EXIT_OK


def cmd_report(args) -> int:
    root = Path(args.dir)
    path = root / "fold_metrics.tsv"
    if not path.exists():
        raise FileNotFoundError(f"{path} not found; run run-all first")
    report = hz.MetricReport.from_fold_records(path.read_text())
    text = hz.render_tables(report)
    if args.write:
        (root / "report.txt").write_text(text)
    print(text)
    return EXIT_OK


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="multires", description="Multi-resident activity recognition experiments")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("prep", help="CASAS day files -> instance files")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--corrections")
    s.add_argument("--n-labels", type=int, default=15)
    s.add_argument("--width", type=int, default=16)
    s.add_argument("--step", type=int, default=3)
    s.add_argument("--label-offset", type=int, default=1, help="first activity id in the files")
    s.set_defaults(func=cmd_prep)

    s = sub.add_parser("synth", help="write synthetic two-resident day files")
    s.add_argument("--overlap", type=float, default=0.0)
    s.add_argument("--days", type=int, default=4)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--events-per-day", type=int, default=400)
    s.add_argument("--out", default="synthetic")
    s.add_argument("--instances", help="also write preprocessed instance files here")
    s.set_defaults(func=cmd_synth)

    def common(s, fold=True):
        s.add_argument("--config")
        s.add_argument("--instances", help="instance directory (overrides the config)")
        s.add_argument("--seed", type=int)
        if fold:
            s.add_argument("--fold", type=int, default=1)

    s = sub.add_parser("train-sep", help="train Seq2Res on one fold's training days")
    common(s)
    s.add_argument("--epochs", type=int)
    s.add_argument("--out", required=True, help="checkpoint path")
    s.set_defaults(func=cmd_train_sep)

    s = sub.add_parser("train-cls", help="train a classifier on one fold's training days")
    common(s)
    s.add_argument("--scenario", choices=hz.SCENARIOS, default="No_Sep")
    s.add_argument("--model", choices=("bn", "q2l"), default="q2l")
    s.add_argument("--sep", help="Seq2Res checkpoint (S2S_Sep)")
    s.add_argument("--epochs", type=int)
    s.add_argument("--out", required=True, help="checkpoint path")
    s.set_defaults(func=cmd_train_cls)

    s = sub.add_parser("eval", help="score checkpoints on one fold's test days")
    common(s)
    s.add_argument("--sep")
    s.add_argument("--cls")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("run-all", help="full fold x scenario x model grid")
    common(s, fold=False)
    s.add_argument("--out", help="report directory (overrides the config)")
    s.add_argument("--jobs", type=int)
    s.add_argument("--folds", type=int, nargs="+")
    s.set_defaults(func=cmd_run_all)

    s = sub.add_parser("report", help="render tables from a report directory")
    s.add_argument("--dir", default="reports")
    s.add_argument("--write", action="store_true", help="rewrite report.txt")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (FileNotFoundError, IsADirectoryError) as exc:
        print(f"missing file: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except hz.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except hz.DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except ValueError as exc:  # remaining input validation failures
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
