"""``imaginenet`` command line.

Exit codes: 0 ok, 2 config or validation error, 3 missing artifact,
4 run failure (diverged training, failed matrix cell or failed self-test).
"""

from __future__ import annotations

import argparse
from collections.abc import Sequence
from dataclasses import replace
from functools import partial
import json
import logging
import os
from pathlib import Path
import sys

import anyio
from dotenv import load_dotenv
from rich.console import Console
from rich.table import Table

from .config import (
    LOSSES,
    SUBSETS,
    EvalConfig,
    ExperimentConfig,
    load_experiment,
    load_matrix,
)
from .errors import (
    ArtifactMissing,
    ConfigError,
    NumericError,
    TrainingDiverged,
    ValidationError,
)
from .feature_data import write_split
from .fusion import load_head
from .metrics import EvalReport
from .pipeline import (
    RunRecord,
    dump_embeddings,
    evaluate_composite,
    load_split,
    perspective_sweep,
    prepare_split,
    run_experiment,
    write_record,
)
from .report import comparison_rows, to_text, write_report
from .runner import run_matrix
from .selftest import run_selftest
from .utils import setup_logging

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_FAILED = 4


def _views(value: str) -> tuple[int, ...] | str:
    if value == "all":
        return value
    try:
        return tuple(int(v) for v in value.split(",") if v.strip())
    except ValueError as e:
        raise argparse.ArgumentTypeError(
            f"--views takes 'all' or a comma-separated list, got {value!r}"
        ) from e


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="imaginenet",
        description="Composite-error recognition from single-class supervision.",
    )
    parser.add_argument(
        "-v", "--verbose", action="count", default=0, help="-v info, -vv debug"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="experiment YAML file")
    common.add_argument("--out", type=Path, default=Path("results"))
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--force", action="store_true", help="overwrite outputs")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--data", type=Path, help="dataset written by gen-data")
    data.add_argument("--subset", choices=SUBSETS, default=None)
    data.add_argument("--views", type=_views, default=None)

    gen = sub.add_parser("gen-data", parents=[common], help="write a synthetic split")
    gen.set_defaults(handler=cmd_gen_data)

    single = sub.add_parser(
        "train-single",
        parents=[common, data],
        help="single-class training + direct migration",
    )
    single.add_argument("--loss", choices=LOSSES, default=None)
    single.set_defaults(handler=cmd_train, mode="direct")

    imagine = sub.add_parser(
        "train-imagine", parents=[common, data], help="train an imagination head"
    )
    imagine.set_defaults(handler=cmd_train, mode="imagine", loss=None)

    ev = sub.add_parser("eval", parents=[common, data], help="evaluate a checkpoint")
    ev.add_argument("--checkpoint", type=Path, required=True)
    ev.add_argument("--dump-features", type=Path, default=None)
    ev.set_defaults(handler=cmd_eval)

    ablate = sub.add_parser("ablate", parents=[common], help="run a config matrix")
    ablate.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    ablate.set_defaults(handler=cmd_ablate)

    report = sub.add_parser("report", help="comparison tables from a results dir")
    report.add_argument("results", type=Path)
    report.set_defaults(handler=cmd_report)

    selftest = sub.add_parser("selftest", help="gradient and metric checks")
    selftest.add_argument("--seed", type=int, default=0)
    selftest.set_defaults(handler=cmd_selftest)
    return parser


def _require_config(args: argparse.Namespace) -> Path:
    if args.config is None:
        raise ConfigError(f"{args.command} needs --config")
    return args.config


def _with_overrides(
    config: ExperimentConfig, args: argparse.Namespace
) -> ExperimentConfig:
    if getattr(args, "loss", None):
        config = replace(config, train=replace(config.train, loss=args.loss))
    subset = getattr(args, "subset", None) or config.eval.subset
    views = getattr(args, "views", None)
    if isinstance(views, tuple):
        config = replace(config, eval=EvalConfig(subset, views))
    elif subset != config.eval.subset:
        config = replace(config, eval=replace(config.eval, subset=subset))
    return config


def _print_report(console: Console, title: str, report: EvalReport) -> None:
    table = Table(title=title)
    table.add_column("Metric", style="cyan")
    table.add_column("Value", justify="right", style="green")
    for key in ("macro_map", "mmit_map", "top1", "top3"):
        value = getattr(report, key)
        if value is not None:
            table.add_row(key, f"{value:.4f}")
    console.print(table)


def cmd_gen_data(args: argparse.Namespace, console: Console) -> int:
    config = load_experiment(_require_config(args), args.seed)
    out: Path = args.out
    if (out / "manifest.json").exists() and not args.force:
        raise ValidationError(f"{out} already holds a dataset; pass --force")
    label_space = config.build_label_space()
    split = prepare_split(config, label_space)
    anyio.run(
        partial(
            write_split,
            split,
            out,
            dataset={"seed": config.seed, **config.to_dict()["dataset"]},
            label_space_digest=label_space.digest(),
        )
    )
    console.print(
        f"Wrote {len(split.set1_train) + len(split.set1_test)} single-class and "
        f"{len(split.set2)} composite clips to {out}"
    )
    return EXIT_OK


def cmd_train(args: argparse.Namespace, console: Console) -> int:
    config = load_experiment(_require_config(args), args.seed)
    config = _with_overrides(replace(config, mode=args.mode), args)
    record_path = args.out / "records" / f"{config.hash}.json"
    if record_path.exists() and not args.force:
        console.print(f"Run {config.hash} already recorded at {record_path}")
        return EXIT_OK
    split = None
    if args.data is not None:
        split = load_split(args.data, config.build_label_space())
    record = run_experiment(config, split, args.out)
    if record.single_report is not None:
        single = EvalReport.from_dict(record.single_report)
        _print_report(console, "Single-class (Set-1 test)", single)
    report = EvalReport.from_dict(record.report)
    _print_report(console, f"{config.name} (Set-2)", report)
    console.print(f"Record written to {record_path}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace, console: Console) -> int:
    head, meta = load_head(args.checkpoint)
    if args.config is not None:
        config = load_experiment(args.config, args.seed)
    elif "experiment" in meta:
        config = ExperimentConfig.from_dict(meta["experiment"])
        if args.seed is not None:
            config = replace(config, seed=args.seed)
    else:
        raise ConfigError("Checkpoint carries no experiment config; pass --config")
    config = _with_overrides(config, args)
    label_space = config.build_label_space()
    if args.data is not None:
        split = load_split(args.data, label_space)
    else:
        split = prepare_split(config, label_space)

    if args.views == "all":
        table = Table(title="Perspective combinations")
        table.add_column("Views", style="cyan")
        table.add_column("mAP", justify="right", style="green")
        table.add_column("mmit mAP", justify="right", style="blue")
        for combo, report in perspective_sweep(
            head, split, label_space, subset=config.eval.subset
        ):
            views = "+".join(f"#{v + 1}" for v in combo)
            table.add_row(views, f"{report.macro_map:.4f}", f"{report.mmit_map:.4f}")
        console.print(table)
    else:
        report = evaluate_composite(
            head, split.set2, label_space, config.eval.subset, config.eval.views
        )
        _print_report(console, f"{args.checkpoint.name} ({config.eval.subset})", report)

    if args.dump_features is not None:
        clips = [c for c in split.set2 if c.label.size >= 2]
        path = dump_embeddings(head, clips, label_space, args.dump_features)
        console.print(f"Embeddings written to {path}")
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace, console: Console) -> int:
    configs = load_matrix(_require_config(args), args.seed)
    out: Path = args.out
    todo, done = [], []
    for config in configs:
        path = out / "records" / f"{config.hash}.json"
        if path.exists() and not args.force:
            done.append(RunRecord.from_dict(json.loads(path.read_text())))
        else:
            todo.append(config)
    logger.info("%d cells to run, %d already recorded", len(todo), len(done))
    records: list[RunRecord] = list(done)
    if todo:
        ran, _ = anyio.run(
            partial(run_matrix, todo, jobs=max(1, args.jobs), out_dir=out)
        )
        records.extend(ran)
    write_report(out)
    console.print(to_text(comparison_rows(records)), markup=False, highlight=False)
    failed = [r for r in records if r.status != "ok"]
    return EXIT_FAILED if failed else EXIT_OK


def cmd_report(args: argparse.Namespace, console: Console) -> int:
    csv_path, txt_path = write_report(args.results)
    console.print(txt_path.read_text(), markup=False, highlight=False)
    console.print(f"CSV written to {csv_path}")
    return EXIT_OK


def cmd_selftest(args: argparse.Namespace, console: Console) -> int:
    table = Table(title="Self-test")
    table.add_column("Check", style="cyan")
    table.add_column("Worst", justify="right")
    table.add_column("Limit", justify="right")
    table.add_column("Seconds", justify="right")
    table.add_column("Result")
    results = run_selftest(args.seed)
    for r in results:
        table.add_row(
            r.name,
            f"{r.value:.3g}",
            f"{r.limit:.3g}",
            f"{r.seconds:.2f}",
            "[green]ok[/green]" if r.passed else "[red]FAIL[/red]",
        )
    console.print(table)
    if all(r.passed for r in results):
        console.print("PASS")
        return EXIT_OK
    console.print("FAIL")
    return EXIT_FAILED


def main(argv: Sequence[str] | None = None, console: Console | None = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    console = console or Console()
    setup_logging(args.verbose)
    try:
        return args.handler(args, console)
    except (ConfigError, ValidationError) as e:
        console.print(f"[red]Error:[/red] {e}")
        return EXIT_CONFIG
    except ArtifactMissing as e:
        console.print(f"[red]Error:[/red] {e}")
        return EXIT_MISSING
    except (TrainingDiverged, NumericError) as e:
        record = getattr(e, "record", None)
        if record is not None and getattr(args, "out", None) is not None:
            write_record(record, args.out)
        console.print(f"[red]Error:[/red] {e}")
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
