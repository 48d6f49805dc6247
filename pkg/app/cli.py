# app/cli.py
"""
Command line: `gen`, `run`, `sweep`, `baseline`.

    python -m app.cli gen --n 2000 --d 20 --k-true 4 --out data.csv
    python -m app.cli run --input data.csv --model local --k 4 --dprime 2
    python -m app.cli sweep --plan plan.txt --repeats 10 --out-dir results
    python -m app.cli baseline --input data.csv --arm naive --k 4 --delta 1e-6

Results go to --out (or stdout). Failures print {"error", "detail"} JSON on
stderr and exit 2 for invalid input, 1 otherwise.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from app.bench_service import (
    MixtureConfig,
    baseline_result,
    execute_run,
    mixture_points,
    parse_plan,
    sweep,
)
from app.config import settings
from app.core_types import SearchSpaceTooLargeError, load_dataset_csv, write_dataset_csv
from app.dp_oracles.wire import ShuffleTranscript, write_transcript
from app.logging_config import configure_logging
from app.pipeline import run_pipeline, shuffle_config, to_result

logger = logging.getLogger(__name__)

DPRIME_HINT = (
    "rerun with --dprime N (or set DPRIME_OVERRIDE, or `dprime = N` in a sweep plan) "
    "to force a smaller projected dimension"
)


class CliUsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise CliUsageError(message)


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).write_text(text if text.endswith("\n") else text + "\n", encoding="utf-8")
        logger.info("CLI: wrote %s", out)
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


# -----------------------------
# Subcommands
# -----------------------------
def cmd_gen(args: argparse.Namespace) -> int:
    cfg = MixtureConfig(k_true=args.k_true, n=args.n, d=args.d, r=args.r, seed=args.seed)
    X, _ = mixture_points(cfg)
    write_dataset_csv(args.out, X)
    logger.info("GEN: n=%s d=%s k_true=%s r=%s -> %s", cfg.n, cfg.d, cfg.k_true, cfg.r, args.out)
    return 0


def _record(result, source: str) -> None:
    from app.db import SessionLocal, engine
    from app.run_store import record_run
    from models import Base

    Base.metadata.create_all(bind=engine)
    db = SessionLocal()
    try:
        record_run(db, result, source=source)
    finally:
        db.close()


def cmd_run(args: argparse.Namespace) -> int:
    dataset = load_dataset_csv(args.input)

    if args.variant == "net-tree" and (args.transcript or args.tree_dump):
        outcome = run_pipeline(
            dataset, args.model, args.k, args.epsilon, args.delta, args.alpha, args.beta, args.seed,
            dprime_override=args.dprime,
        )
        result = to_result(outcome, dataset, args.model, args.seed, timings=args.timings)
        if args.tree_dump and outcome.result.tree is not None:
            Path(args.tree_dump).write_text(outcome.result.tree.dump().model_dump_json(indent=2) + "\n")
        if args.transcript:
            _write_run_transcript(args, outcome)
    else:
        result = execute_run(
            dataset,
            args.model,
            args.k,
            args.epsilon,
            delta=args.delta,
            alpha=args.alpha,
            beta=args.beta,
            seed=args.seed,
            variant=args.variant,
            dprime=args.dprime,
            split_levels=args.split_levels,
            timings=args.timings,
        )

    _emit(result.to_json(), args.out)
    if args.record:
        _record(result, source=str(args.input))
    return 0


def _write_run_transcript(args: argparse.Namespace, outcome) -> None:
    if args.model == "local":
        write_transcript(args.transcript, outcome.transcript)
    elif args.model == "shuffle":
        if outcome.shuffled is None:
            raise ValueError(
                "shuffle output was simulated, not materialized; raise SHUFFLE_MATERIALIZE_LIMIT to keep it"
            )
        write_transcript(args.transcript, ShuffleTranscript(shuffle_config(outcome.cfg), outcome.shuffled))
    else:
        raise ValueError("the exact model has no transcript")


def cmd_sweep(args: argparse.Namespace) -> int:
    plan = parse_plan(Path(args.plan).read_text(encoding="utf-8"))
    if not plan:
        raise ValueError(f"plan {args.plan} lists no settings")
    result = sweep(plan, repeats=args.repeats, base_seed=args.seed, workers=args.workers)
    paths = result.write(args.out_dir, stem=args.stem)
    sys.stdout.write(json.dumps({"rows": str(paths[0]), "summary": str(paths[1]), "plot": str(paths[2])}) + "\n")
    return 0


def cmd_baseline(args: argparse.Namespace) -> int:
    dataset = load_dataset_csv(args.input)
    result = baseline_result(dataset, args.arm, args.k, args.epsilon, args.delta, args.seed)
    _emit(result.to_json(), args.out)
    return 0


# -----------------------------
# Parser
# -----------------------------
def _privacy_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epsilon", type=float, default=1.0)
    p.add_argument("--delta", type=float, default=0.0)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--input", required=True, help="dataset CSV, one point per row")
    p.add_argument("--out", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dpkmeans", description="One-round private k-means and its benchmarks")
    parser.add_argument("--log-level", default=None)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    gen = sub.add_parser("gen", help="Gaussian-mixture dataset")
    gen.add_argument("--n", type=int, required=True)
    gen.add_argument("--d", type=int, required=True)
    gen.add_argument("--k-true", type=int, required=True)
    gen.add_argument("--r", type=float, default=100.0)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=cmd_gen)

    run = sub.add_parser("run", help="single clustering run")
    _privacy_flags(run)
    run.add_argument("--model", choices=["local", "shuffle", "exact"], default="local")
    run.add_argument("--variant", choices=["net-tree", "lsh"], default="net-tree")
    run.add_argument("--alpha", type=float, default=1.0)
    run.add_argument("--beta", type=float, default=0.1)
    run.add_argument("--dprime", type=int, default=None, help="force the projected dimension")
    run.add_argument("--split-levels", action="store_true", help="lsh: one user group per level")
    run.add_argument("--timings", action="store_true")
    run.add_argument("--record", action="store_true", help="store the result in the run registry")
    run.add_argument("--transcript", default=None, help="write the users' messages here")
    run.add_argument("--tree-dump", default=None, help="write the net tree as JSON here")
    run.set_defaults(func=cmd_run)

    sw = sub.add_parser("sweep", help="experiment sweep from a plan file")
    sw.add_argument("--plan", required=True)
    sw.add_argument("--repeats", type=int, default=10)
    sw.add_argument("--seed", type=int, default=0)
    sw.add_argument("--workers", type=int, default=1)
    sw.add_argument("--out-dir", default=settings.results_dir)
    sw.add_argument("--stem", default="sweep")
    sw.set_defaults(func=cmd_sweep)

    base = sub.add_parser("baseline", help="trivial or naive comparison arm")
    _privacy_flags(base)
    base.add_argument("--arm", choices=["trivial", "naive"], required=True)
    base.set_defaults(func=cmd_baseline)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        configure_logging(args.log_level or settings.log_level)
        return args.func(args)
    except SearchSpaceTooLargeError as e:
        code = 2
        err = SearchSpaceTooLargeError(f"{e}; {DPRIME_HINT}")
    except (ValueError, FileNotFoundError) as e:
        code = 2
        err = e
    except Exception as e:  # noqa: BLE001
        logger.exception("CLI: run failed")
        code = 1
        err = e
    sys.stderr.write(json.dumps({"error": type(err).__name__, "detail": str(err)}) + "\n")
    return code


if __name__ == "__main__":
    sys.exit(main())
