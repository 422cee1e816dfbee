"""Command-line surface tying generation, encoding, tuning, and evaluation together.

Subcommands: gen (synthetic task files), init (fresh seeded checkpoint), eval
(benchmark a checkpoint under one extension strategy), tune (frozen-anchor
fine-tuning), inspect (dump position maps and frequencies for a strategy).

Configuration resolution order is CLI flag > config file (--config, JSON) >
built-in default; the resolved snapshot is embedded in every report. Exit
codes: 0 success, 2 configuration error, 3 data validation error, 4 runtime
numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .encoder import Model, ModelConfig, init_model
from .errors import (
    ConfigurationError,
    LongCtxError,
    NumericError,
    ValidationError,
)
from .evaluation import BenchmarkTask, run_benchmark
from .positions import (
    ExtensionSpec,
    Strategy,
    attention_scale,
    ntk_frequencies,
    resolve_extension,
    se_remap_deltas,
    standard_frequencies,
)
from .serialization import (
    load_checkpoint,
    load_task_dir,
    save_checkpoint,
    task_stats,
    write_report,
    write_task,
    write_training_log,
)
from .synth import DEFAULT_LENGTH_GRID, SyntheticTaskConfig, build_bucket
from .tuning import TuneConfig, extend_for_tuning, training_pairs_from_task, tune
from .encoder import position_assignment

_EVAL_DEFAULTS = {
    "strategy": "none",
    "l_target": None,
    "ntk_lambda": None,
    "g": None,
    "w": None,
    "seed": 42,
    "attn_scaling": True,
    "batch_size": 16,
}


def _resolved_config(defaults: dict, args: argparse.Namespace, file_keys: dict) -> dict:
    """CLI flag > config file > default, per key."""
    out = {}
    for key, default in defaults.items():
        cli_val = getattr(args, key, None)
        out[key] = cli_val if cli_val is not None else file_keys.get(key, default)
    return out


def _load_file_config(path: str | None) -> dict:
    if not path:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise ValidationError(f"config file {path} must hold a JSON object")
    return cfg


# ---------------------------------------------------------------------------
# gen


def cmd_gen(args) -> int:
    kinds = ["passkey", "needle"] if args.kind == "both" else [args.kind]
    lengths = tuple(int(x) for x in args.lengths.split(",")) if args.lengths else DEFAULT_LENGTH_GRID
    out_root = Path(args.out)
    for kind in kinds:
        config = SyntheticTaskConfig(
            kind=kind,
            length_grid=lengths,
            queries_per_length=args.queries,
            candidates_per_length=args.candidates,
            seed=args.seed,
            essay_path=args.essay,
        )
        for length in lengths:
            task = build_bucket(config, length)
            bucket_dir = out_root / kind / str(length)
            write_task(task, bucket_dir)
            print(f"wrote {task.name}: {len(task.queries)} queries, "
                  f"{len(task.docs)} docs -> {bucket_dir}")
    return 0


# ---------------------------------------------------------------------------
# init


def cmd_init(args) -> int:
    config = ModelConfig(
        hidden_size=args.hidden_size,
        n_layers=args.layers,
        n_heads=args.heads,
        vocab_size=args.vocab_size,
        original_context=args.l_orig,
        position_mode=args.mode,
        init_seed=args.seed,
    )
    model = init_model(config)
    save_checkpoint(model, args.out)
    print(f"wrote {args.mode} checkpoint (d={args.hidden_size}, "
          f"layers={args.layers}, l_orig={args.l_orig}) -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# eval


def _spec_from_resolved(model: Model, resolved: dict) -> ExtensionSpec:
    l_target = resolved["l_target"]
    return ExtensionSpec(
        strategy=Strategy(str(resolved["strategy"]).lower()),
        l_orig=model.config.original_context,
        l_target=int(l_target) if l_target is not None else None,
        ntk_lambda=resolved["ntk_lambda"],
        group_size=resolved["g"],
        window=resolved["w"],
    )


def _discover_synthetic(root: Path) -> list[BenchmarkTask]:
    """A kind directory with numeric bucket subdirs, or one bucket directory."""
    if (root / "queries.jsonl").exists():
        length = int(root.name) if root.name.isdigit() else None
        group = root.parent.name if root.name.isdigit() else root.name
        return [BenchmarkTask(task=load_task_dir(root), metric="acc@1",
                              group=group, length=length)]
    buckets = sorted((d for d in root.iterdir() if d.is_dir() and d.name.isdigit()),
                     key=lambda d: int(d.name))
    if not buckets:
        raise ValidationError(f"{root} holds no task files and no numeric bucket dirs")
    return [
        BenchmarkTask(task=load_task_dir(d), metric="acc@1",
                      group=root.name, length=int(d.name))
        for d in buckets
    ]


def _print_summary(report) -> None:
    cols = list(report.synthetic) + list(report.real) + ["Avg."]
    vals = [report.task_scores[g] for g in report.synthetic]
    vals += [report.real[g] for g in report.real]
    vals += [report.average]
    width = max(10, max((len(c) for c in cols), default=10) + 2)
    acc_cols = len(report.synthetic)
    header_groups = []
    if acc_cols:
        header_groups.append(f"{'Synthetic (Acc@1)':<{width * acc_cols}}")
    if report.real:
        header_groups.append(f"{'Real (nDCG@10)':<{width * len(report.real)}}")
    print("".join(header_groups))
    print("".join(f"{c:<{width}}" for c in cols))
    print("".join(f"{100 * v:<{width}.1f}" for v in vals))
    for group, buckets in report.synthetic.items():
        detail = "  ".join(f"{l}: {100 * v:.1f}" for l, v in sorted(buckets.items()))
        print(f"  {group} by length: {detail}")
    for name, counts in report.skipped.items():
        print(f"  note [{name}]: " + ", ".join(f"{k}={v}" for k, v in counts.items()))


def cmd_eval(args) -> int:
    model = load_checkpoint(args.model)
    file_cfg = _load_file_config(args.config)
    resolved = _resolved_config(_EVAL_DEFAULTS, args, file_cfg)
    if resolved["l_target"] is None:
        resolved["l_target"] = (
            model.extension.l_target if model.extension else model.config.original_context
        )
    spec = _spec_from_resolved(model, resolved)
    resolve_extension(spec, model.config.position_mode)  # fail fast before encoding

    tasks: list[BenchmarkTask] = []
    for d in args.synthetic or []:
        tasks.extend(_discover_synthetic(Path(d)))
    for d in args.real or []:
        task = load_task_dir(Path(d))
        stats = task_stats(task)
        print(f"ingested {task.name}: {stats['n_queries']} queries / {stats['n_docs']} docs, "
              f"mean words q={stats['mean_query_words']:.1f} d={stats['mean_doc_words']:.1f}")
        tasks.append(BenchmarkTask(task=task, metric="ndcg@10", group=Path(d).name))
    if not tasks:
        raise ValidationError("no tasks given; pass --synthetic and/or --real directories")

    report = run_benchmark(
        model, spec, tasks,
        attn_scaling=bool(resolved["attn_scaling"]),
        batch_size=int(resolved["batch_size"]),
        seed=int(resolved["seed"]),
        run_config={**resolved, "model": str(args.model), "tool_version": __version__},
    )
    _print_summary(report)
    if args.out:
        write_report(report, args.out)
        print(f"report -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# tune


def cmd_tune(args) -> int:
    model = load_checkpoint(args.model)
    if model.config.position_mode != "absolute":
        raise ConfigurationError("further tuning requires absolute-position mode")
    config = TuneConfig(
        mode=args.mode,
        l_orig=model.config.original_context,
        l_target=args.l_target,
        learning_rate=args.lr,
        batch_size=args.batch_size,
        epochs=args.epochs,
        warmup_steps=args.warmup_steps,
        temperature=args.temperature,
        n_negatives=args.negatives,
        seed=args.seed,
        max_steps=args.max_steps,
    )
    task = load_task_dir(Path(args.data))
    rng = np.random.default_rng(config.seed)
    pairs = training_pairs_from_task(
        task, model.config.vocab_size, config.n_negatives, rng,
        max_len=model.config.original_context,
    )
    if model.extension is None:
        model = extend_for_tuning(model, config)
    result = tune(model, pairs, config)
    save_checkpoint(result.model, args.out)
    if args.log:
        write_training_log(result.log, args.log)
    last = result.log[-1][1] if result.log else float("nan")
    print(f"tuned {len(result.log)} steps (last loss {last:.4f}) -> {args.out}")
    if result.diverged:
        raise NumericError(
            f"loss went non-finite; checkpoint at {args.out} holds the last good state"
        )
    return 0


# ---------------------------------------------------------------------------
# inspect


def cmd_inspect(args) -> int:
    spec = ExtensionSpec(
        strategy=Strategy(args.strategy.lower()),
        l_orig=args.l_orig,
        l_target=args.l_target,
        ntk_lambda=args.ntk_lambda,
        group_size=args.g,
        window=args.w,
    )
    resolved = resolve_extension(spec, args.mode)
    n = args.input_len or spec.l_target
    dump: dict = {
        "strategy": spec.strategy.value,
        "mode": args.mode,
        "l_orig": spec.l_orig,
        "l_target": spec.l_target,
        "scale": spec.scale,
        "ntk_lambda": resolved.ntk_lambda,
        "group_size": resolved.group_size,
        "window": resolved.window,
        "notes": list(resolved.notes),
        "attention_scale": {
            str(length): attention_scale(length, spec.l_orig)
            for length in sorted({spec.l_orig, n, spec.l_target})
        },
    }
    if args.mode == "rotary":
        freqs = (ntk_frequencies(args.d_head, 10000.0, resolved.ntk_lambda)
                 if resolved.ntk_lambda else standard_frequencies(args.d_head))
        dump["theta"] = freqs.theta.tolist()
    if spec.strategy is Strategy.SE:
        deltas = np.arange(n)
        dump["relative_positions_x0"] = se_remap_deltas(
            deltas, resolved.group_size, resolved.window
        ).tolist()
    else:
        # effective positions need no model weights, only the config shape
        probe = Model(
            config=ModelConfig(
                hidden_size=2, n_layers=1, n_heads=1, vocab_size=2,
                original_context=spec.l_orig, position_mode=args.mode,
            ),
            params={"pos_table": np.zeros((spec.l_orig, 2))} if args.mode == "absolute" else {},
        )
        assignment = position_assignment(probe, n, spec)
        dump["positions"] = np.asarray(assignment).tolist()
    text = json.dumps(dump, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
        print(f"inspection -> {args.out}")
    else:
        print(text)
    return 0


# ---------------------------------------------------------------------------
# parser / entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="longctx", description=__doc__)
    parser.add_argument("--version", action="version", version=f"longctx {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate synthetic task files")
    p.add_argument("--kind", choices=["passkey", "needle", "both"], default="both")
    p.add_argument("--lengths", help="comma-separated token lengths (default: full grid)")
    p.add_argument("--queries", type=int, default=50)
    p.add_argument("--candidates", type=int, default=100)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--essay", help="plain-text haystack source (default: builtin essay)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("init", help="write a fresh seeded model checkpoint")
    p.add_argument("--hidden-size", type=int, default=64)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--vocab-size", type=int, default=30522)
    p.add_argument("--l-orig", type=int, default=128)
    p.add_argument("--mode", choices=["absolute", "rotary"], default="absolute")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("eval", help="run the retrieval benchmark")
    p.add_argument("--model", required=True)
    p.add_argument("--config", help="JSON config file (flags override it)")
    p.add_argument("--strategy", choices=[s.value for s in Strategy])
    p.add_argument("--l-target", type=int, dest="l_target")
    p.add_argument("--ntk-lambda", type=float, dest="ntk_lambda")
    p.add_argument("--g", type=int, help="SelfExtend group size")
    p.add_argument("--w", type=int, help="SelfExtend neighbor window")
    p.add_argument("--seed", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--no-attn-scaling", dest="attn_scaling", action="store_false", default=None)
    p.add_argument("--synthetic", nargs="*", help="synthetic task dirs (kind or bucket)")
    p.add_argument("--real", nargs="*", help="ingested dataset dirs")
    p.add_argument("--out", help="report JSON path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("tune", help="frozen-anchor fine-tuning of an absolute-mode model")
    p.add_argument("--model", required=True)
    p.add_argument("--mode", choices=["pi_anchored", "rp_suffix"], default="pi_anchored")
    p.add_argument("--l-target", type=int, dest="l_target", required=True)
    p.add_argument("--data", required=True, help="task dir supplying contrastive triples")
    p.add_argument("--lr", type=float, default=5e-4)
    p.add_argument("--batch-size", type=int, dest="batch_size", default=8)
    p.add_argument("--epochs", type=int, default=3)
    p.add_argument("--warmup-steps", type=int, dest="warmup_steps", default=100)
    p.add_argument("--temperature", type=float, default=0.01)
    p.add_argument("--negatives", type=int, default=7)
    p.add_argument("--max-steps", type=int, dest="max_steps")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--log", help="training log TSV path")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("inspect", help="dump position maps / frequencies for a strategy")
    p.add_argument("--strategy", required=True, choices=[s.value for s in Strategy])
    p.add_argument("--mode", choices=["absolute", "rotary"], default="absolute")
    p.add_argument("--l-orig", type=int, dest="l_orig", required=True)
    p.add_argument("--l-target", type=int, dest="l_target")
    p.add_argument("--input-len", type=int, dest="input_len")
    p.add_argument("--d-head", type=int, dest="d_head", default=16)
    p.add_argument("--ntk-lambda", type=float, dest="ntk_lambda")
    p.add_argument("--g", type=int)
    p.add_argument("--w", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except LongCtxError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
