"""Command-line entry point: ``lpgnet {synth,train,eval,gradcheck,bench,ablate}``.

Configuration precedence for ``train`` and ``ablate`` (lowest to highest):
built-in defaults, ``--preset``, ``--config`` JSON file, explicit flags.

Exit codes: 0 success, 1 gradient check failed, 2 usage error,
3 contract or schema error, 4 training diverged.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import platform
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__
from .bench import BENCH_FIELDS, run_bench
from .checkpoint import load_checkpoint, save_checkpoint
from .data import MODES, SynthSpec, read_feature_file, stats_table, synth_generate, write_split
from .errors import ContractError, DivergenceError, SchemaError
from .experiments import VARIANTS, resolve_split, run_ablations, run_seed, summarize
from .gradcheck import full_loss_check
from .model import Ablation
from .train import HISTORY_FIELDS, TrainConfig, evaluate, with_overrides

log = logging.getLogger("lpgnet")

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_CONTRACT, EXIT_DIVERGED = 0, 1, 2, 3, 4
REPORT_SCHEMA_ID = "lpgnet.metrics_report/1"


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _int_list(text: str) -> list[int]:
    try:
        values = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def _write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def build_info() -> dict:
    return {"package": "lpgnet", "version": __version__, "python": platform.python_version(),
            "numpy": np.__version__}


def write_manifest(out_dir, command: str, config: dict | None, seeds, inputs: dict, outputs: dict,
                   timings: dict, status: str = "ok") -> Path:
    manifest = {
        "command": command,
        "status": status,
        "config": config,
        "seeds": list(seeds),
        "inputs": {str(p): sha256(p) for p in inputs.values()},
        "outputs": {k: str(v) for k, v in outputs.items()},
        "timings": timings,
        "build": build_info(),
    }
    return _write_json(Path(out_dir) / "manifest.json", manifest)


def load_data_dir(path):
    """Read train/test (and optional val) feature files from a directory."""
    path = Path(path)
    files = {name: path / f"{name}.jsonl" for name in ("train", "val", "test")}
    for name in ("train", "test"):
        if not files[name].is_file():
            raise UsageError(f"missing data file {files[name]}")
    header, train = read_feature_file(files["train"])
    test_header, test = read_feature_file(files["test"])
    val = None
    if files["val"].is_file():
        val_header, val = read_feature_file(files["val"])
        if val_header != header:
            raise SchemaError("val.jsonl header differs from train.jsonl")
    else:
        del files["val"]
    if test_header != header:
        raise SchemaError("test.jsonl header differs from train.jsonl")
    return header, train, val, test, files


def resolve_config(args) -> TrainConfig:
    base = {}
    if getattr(args, "preset", None) == "desk":
        base = asdict(TrainConfig.desk())
    if args.config:
        try:
            file_cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise UsageError(f"config file {args.config} not found") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {args.config} is not valid JSON ({exc})") from None
        if not isinstance(file_cfg, dict):
            raise UsageError("config file must hold a flat JSON object")
        base.update(file_cfg)
    config = TrainConfig.from_dict(base)
    overrides = dict(learning_rate=args.lr, batch_size=args.batch_size, hidden=args.hidden, epochs=args.epochs,
                     arch=args.arch, tau=args.tau, lambda_task=args.lambda_task, lambda_ce=args.lambda_ce,
                     lambda_kl=args.lambda_kl, kl_direction=args.kl_direction, val_ratio=args.val_ratio,
                     dropout=args.dropout)
    if isinstance(getattr(args, "seed", None), int):
        overrides["seed"] = args.seed
    config = with_overrides(config, **overrides)
    if getattr(args, "ablation", None):
        config = replace(config, ablation=[a for a in args.ablation if a != "none"])
    return config


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    spec = SynthSpec(num_classes=args.classes, f_t=args.f_t, f_a=args.f_a, train_dialogues=args.train_dialogues,
                     val_dialogues=args.val_dialogues, test_dialogues=args.test_dialogues, min_len=args.min_len,
                     max_len=args.max_len, separation=args.separation, mode=args.mode)
    try:
        spec.validate()
    except ContractError as exc:
        raise UsageError(str(exc)) from None
    t0 = time.perf_counter()
    split = synth_generate(spec, args.seed)
    out = Path(args.out)
    paths = write_split(out, split)
    stats = stats_table(split)
    stats["spec"] = asdict(spec)
    stats["seed"] = args.seed
    paths["stats"] = _write_json(out / "stats.json", stats)
    write_manifest(out, "synth", asdict(spec), [args.seed], {}, paths, {"seconds": time.perf_counter() - t0})
    total = stats["splits"]["total"]["total"]
    print(f"wrote {total} utterances to {out} ({', '.join(f'{k}={v}' for k, v in stats['dialogues'].items())})")
    return EXIT_OK


def _train_one(config: TrainConfig, header, train_pool, val, test, out: Path) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    split = resolve_split(header, train_pool, val, test, config.seed, config.val_ratio)
    csv_path = out / "history.csv"
    fh = open(csv_path, "w", newline="", encoding="utf-8")
    writer = csv.DictWriter(fh, fieldnames=list(HISTORY_FIELDS), lineterminator="\n")
    writer.writeheader()

    def progress(row):
        writer.writerow({k: row[k] for k in HISTORY_FIELDS})
        fh.flush()
        log.info("epoch %3d  loss %.4f  val acc %.4f  val F1 %.4f", row["epoch"], row["loss_total"],
                 row["val_accuracy"], row["val_macro_f1"])

    try:
        outcome = run_seed(config, split, progress)
    finally:
        fh.close()
    from .plotting import plot_confusion, plot_training_curves

    label = config.ablation_flags.label
    outputs = {
        "checkpoint": save_checkpoint(out / "checkpoint.lpgc", outcome.result.checkpoint),
        "history": csv_path,
        "curves": plot_training_curves(outcome.result.history, out / "curves.png", title=label),
        "confusion": plot_confusion(outcome.test.confusion, outcome.test.labels, out / "confusion.png"),
    }
    report = {
        "ablation": label,
        "arch": config.arch,
        "seed": config.seed,
        "best_epoch": outcome.result.best_epoch,
        "best_val": outcome.result.best,
        "test": outcome.test.to_json(),
    }
    outputs["report"] = _write_json(out / "report.json", report)
    print(f"[{label} seed={config.seed}] best epoch {outcome.result.best_epoch}: "
          f"test acc {100 * outcome.test.accuracy:.2f}  macro-F1 {100 * outcome.test.macro_f1:.2f}")
    return {"outcome": outcome, "outputs": outputs}


def cmd_train(args) -> int:
    config = resolve_config(args)
    header, train_pool, val, test, files = load_data_dir(args.data)
    seeds = args.seed or [config.seed]
    out = Path(args.out)
    t0 = time.perf_counter()
    outputs, outcomes = {}, []
    status = "ok"
    try:
        for seed in seeds:
            cfg = replace(config, seed=seed)
            target = out if len(seeds) == 1 else out / f"seed_{seed}"
            run = _train_one(cfg, header, train_pool, val, test, target)
            outcomes.append(run["outcome"])
            outputs.update({f"{k}" if len(seeds) == 1 else f"seed_{seed}/{k}": v for k, v in run["outputs"].items()})
        if len(seeds) > 1:
            summary = summarize(outcomes)
            summary["ablation"] = config.ablation_flags.label
            outputs["summary"] = _write_json(out / "summary.json", summary)
            acc, f1 = summary["test_accuracy"], summary["test_macro_f1"]
            print(f"{len(seeds)} seeds: acc {100 * acc['mean']:.2f} ± {100 * acc['std']:.2f}  "
                  f"macro-F1 {100 * f1['mean']:.2f} ± {100 * f1['std']:.2f}")
    except DivergenceError:
        status = "diverged"
        raise
    finally:
        if out.exists():
            write_manifest(out, "train", config.to_dict(), seeds, files, outputs,
                           {"seconds": time.perf_counter() - t0}, status)
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt_path, data_path = Path(args.checkpoint), Path(args.data)
    for p in (ckpt_path, data_path):
        if not p.is_file():
            raise UsageError(f"no such file: {p}")
    ckpt = load_checkpoint(ckpt_path)
    header, dialogues = read_feature_file(data_path)
    if header.num_classes != ckpt.num_classes:
        raise SchemaError(f"data has {header.num_classes} classes, checkpoint expects {ckpt.num_classes}")
    hp = ckpt.model["hparams"]
    if (header.f_t, header.f_a) != (hp["f_t"], hp["f_a"]):
        raise SchemaError(f"data feature dims ({header.f_t}, {header.f_a}) differ from checkpoint ({hp['f_t']}, {hp['f_a']})")
    batch_size = int(ckpt.config.get("batch_size", 32))
    report = evaluate(ckpt, dialogues, batch_size, list(header.labels))
    print(report.format_table())
    doc = {
        "schema": REPORT_SCHEMA_ID,
        "checkpoint": str(ckpt_path),
        "data": str(data_path),
        "num_utterances": report.total,
        "metrics": report.to_json(),
    }
    if args.out:
        _write_json(args.out, doc)
    if args.figure:
        from .plotting import plot_confusion

        plot_confusion(report.confusion, report.labels, args.figure)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    if args.scale != "tiny":
        raise UsageError("only --scale tiny is supported")
    t0 = time.perf_counter()
    report = full_loss_check(seed=args.seed, eps=args.eps, freeze_students=args.freeze == "students")
    for group, err in sorted(report.per_group(depth=3).items()):
        print(f"  {group:<28} {err:.3e}")
    verdict = "PASS" if report.passed(args.tol) else "FAIL"
    print(f"{verdict} max_rel_err={report.max_rel_error:.3e} coords={report.checked} "
          f"seconds={time.perf_counter() - t0:.1f}")
    return EXIT_OK if verdict == "PASS" else EXIT_FAIL


def cmd_bench(args) -> int:
    t0 = time.perf_counter()
    rows = run_bench(args.seq_lens, args.dims, args.repeats, batch=args.batch, f=args.features, seed=args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(BENCH_FIELDS), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    sys.stdout.write(out.read_text(encoding="utf-8"))
    outputs = {"csv": out}
    if not args.no_figure:
        from .plotting import plot_bench

        outputs["figure"] = plot_bench(rows, out.with_suffix(".png"))
    write_manifest(out.parent, "bench", vars_to_config(args), [args.seed], {}, outputs,
                   {"seconds": time.perf_counter() - t0})
    return EXIT_OK


def cmd_ablate(args) -> int:
    config = resolve_config(args)
    header, train_pool, val, test, files = load_data_dir(args.data)
    split = resolve_split(header, train_pool, val, test, config.seed, config.val_ratio)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    rows = run_ablations(config, split, args.variants or list(VARIANTS))
    csv_path = out / "ablation.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    from .plotting import plot_ablation

    outputs = {"csv": csv_path, "json": _write_json(out / "ablation.json", rows),
               "figure": plot_ablation(rows, out / "ablation.png")}
    print(f"{'variant':<22} {'acc':>7} {'macro-F1':>9}")
    for r in rows:
        print(f"{r['variant']:<22} {100 * r['test_accuracy']:7.2f} {100 * r['test_macro_f1']:9.2f}")
    write_manifest(out, "ablate", config.to_dict(), [config.seed], files, outputs,
                   {"seconds": time.perf_counter() - t0})
    return EXIT_OK


def vars_to_config(args) -> dict:
    return {k: v for k, v in vars(args).items() if k != "func"}


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_training_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True, help="directory with train.jsonl, test.jsonl and optionally val.jsonl")
    p.add_argument("--config", help="flat JSON config; keys are TrainConfig fields")
    p.add_argument("--preset", choices=["desk"], help="start from a preset before applying --config and flags")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--arch", choices=["lpgnet", "stacked"])
    p.add_argument("--epochs", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--lambda-task", type=float)
    p.add_argument("--lambda-ce", type=float)
    p.add_argument("--lambda-kl", type=float)
    p.add_argument("--kl-direction", choices=["student_teacher", "teacher_student"])
    p.add_argument("--val-ratio", type=float, help="validation share when no val.jsonl exists (default 0.1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lpgnet", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic feature corpus")
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--mode", choices=MODES, default="both")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="synth")
    p.add_argument("--f-t", type=int, default=64)
    p.add_argument("--f-a", type=int, default=64)
    p.add_argument("--train-dialogues", type=int, default=100)
    p.add_argument("--val-dialogues", type=int, default=20)
    p.add_argument("--test-dialogues", type=int, default=40)
    p.add_argument("--min-len", type=int, default=4)
    p.add_argument("--max-len", type=int, default=12)
    p.add_argument("--separation", type=float, default=3.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model and write checkpoint, history, report and figures")
    _add_training_flags(p)
    p.add_argument("--seed", type=int, action="append", help="repeat for a seed list (mean ± std is reported)")
    p.add_argument("--ablation", action="append", choices=list(Ablation.names()) + ["none"])
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a feature file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="an LPG-JSONL feature file")
    p.add_argument("--out", help="write the JSON report here")
    p.add_argument("--figure", help="write a confusion-matrix figure here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="central-difference check of the full objective")
    p.add_argument("--scale", default="tiny")
    p.add_argument("--freeze", choices=["none", "students"], default="none")
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("bench", help="parameter and latency comparison against stacked encoders")
    p.add_argument("--seq-lens", type=_int_list, default=[16, 64])
    p.add_argument("--dims", type=_int_list, default=[64, 256])
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--features", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="bench/bench.csv")
    p.add_argument("--no-figure", action="store_true")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("ablate", help="train every ablation variant and emit a comparison table")
    _add_training_flags(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--variants", nargs="+", choices=list(VARIANTS))
    p.set_defaults(func=cmd_ablate, ablation=None)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    from threadpoolctl import threadpool_limits

    threads = int(os.environ.get("LPGNET_THREADS", "1"))
    try:
        with threadpool_limits(limits=threads):
            return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ContractError, SchemaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONTRACT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
