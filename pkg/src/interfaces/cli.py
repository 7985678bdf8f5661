"""Command line interface for training, updating and evaluating hash models.

Exit codes: 0 on success, 1 on usage errors, 2 on data or model errors.
"""

from __future__ import annotations

import json
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import Any

import click

from src.common.config import THREADS_ENV_VAR
from src.common.exceptions import ConfigurationError, SIHashError, ValidationError
from src.common.logging import get_logger, setup_logging
from src.data_processing.dataset import load_dataset
from src.evaluation.retrieval_eval import CodeDatabase, evaluate, query_top, write_report
from src.hashing.incremental import Strategy, TrainState, parse_event_file, update
from src.hashing.trainer import HashModel, TrainConfig, encode_batch, train
from src.storage.model_io import load_codes, load_model, load_state, save_codes, save_model

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2


class OutputFormatter:
    """Handles consistent output formatting for CLI commands."""

    def __init__(self, output_format: str = "table") -> None:
        self._format = output_format

    def set_format(self, output_format: str) -> None:
        self._format = output_format

    @property
    def is_json(self) -> bool:
        return self._format == "json"

    def format_table(self, headers: list[str], rows: list[list[Any]]) -> str:
        if not rows:
            return "No data to display."

        widths = [len(h) for h in headers]
        for row in rows:
            for i, cell in enumerate(row):
                widths[i] = max(widths[i], len(str(cell)))

        header_line = " | ".join(h.ljust(widths[i]) for i, h in enumerate(headers))
        separator = "-+-".join("-" * w for w in widths)
        data_lines = [
            " | ".join(str(cell).ljust(widths[i]) for i, cell in enumerate(row)) for row in rows
        ]
        return "\n".join([header_line, separator] + data_lines)

    def format_json(self, data: Any) -> str:
        return json.dumps(data, indent=2, default=str)

    def format_dict(self, data: dict[str, Any], *, indent: int = 0) -> str:
        lines = []
        prefix = "  " * indent
        for key, value in data.items():
            if isinstance(value, dict):
                lines.append(f"{prefix}{key}:")
                lines.append(self.format_dict(value, indent=indent + 1))
            else:
                lines.append(f"{prefix}{key}: {value}")
        return "\n".join(lines)

    def render(self, data: dict[str, Any]) -> str:
        return self.format_json(data) if self.is_json else self.format_dict(data)

    def error(self, message: str) -> str:
        return click.style(f"✗ {message}", fg="red")


class CLIContext:
    """Context object holding shared CLI state."""

    def __init__(self) -> None:
        self.output_format: str = "table"
        self.formatter: OutputFormatter = OutputFormatter()


pass_context = click.make_pass_decorator(CLIContext, ensure=True)


def handle_errors(func: Any) -> Any:
    def wrapper(*args: Any, **kwargs: Any) -> Any:
        ctx = args[0] if args and isinstance(args[0], CLIContext) else None
        formatter = ctx.formatter if ctx else OutputFormatter()
        try:
            return func(*args, **kwargs)
        except ConfigurationError as e:
            click.echo(formatter.error(f"Configuration error: {e}"), err=True)
            sys.exit(EXIT_DATA)
        except SIHashError as e:
            click.echo(formatter.error(str(e)), err=True)
            sys.exit(EXIT_DATA)
        except OSError as e:
            click.echo(formatter.error(f"I/O error: {e}"), err=True)
            sys.exit(EXIT_DATA)

    wrapper.__name__ = func.__name__
    wrapper.__doc__ = func.__doc__
    return wrapper


def _threads_option(func: Any) -> Any:
    return click.option(
        "--threads",
        type=click.IntRange(min=1),
        envvar=THREADS_ENV_VAR,
        default=None,
        help=f"Worker threads (default from {THREADS_ENV_VAR}, else 1).",
    )(func)


def _model_of(saved: TrainState | HashModel) -> HashModel:
    return saved.model if isinstance(saved, TrainState) else saved


@click.group()
@click.option(
    "--log-level",
    type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False),
    default="WARNING",
    help="Console and file log level.",
)
@click.option(
    "--log-dir",
    type=click.Path(file_okay=False, path_type=Path),
    default=None,
    help="Write JSON logs to this directory.",
)
@click.option(
    "--format",
    "output_format",
    type=click.Choice(["table", "json"]),
    default="table",
    help="Output format.",
)
@click.version_option(version="0.1.0", prog_name="sih")
@click.pass_context
def cli(
    ctx: click.Context,
    log_level: str,
    log_dir: Path | None,
    output_format: str,
) -> None:
    """Supervised incremental hashing: learn, update and evaluate binary codes."""
    setup_logging(log_level=log_level, log_dir=log_dir, json_output=log_dir is not None)
    ctx.ensure_object(CLIContext)
    cli_ctx = ctx.obj
    cli_ctx.output_format = output_format
    cli_ctx.formatter.set_format(output_format)


@cli.command("train")
@click.option("--data", "data_path", required=True, type=click.Path(path_type=Path))
@click.option("--bits", type=click.IntRange(min=1), default=None, help="Code length m.")
@click.option("--anchors", type=click.IntRange(min=1), default=None, help="Anchor count r.")
@click.option("--sigma", type=float, default=None, help="RBF width (default: median heuristic).")
@click.option("--cx", type=float, default=None)
@click.option("--cb", type=float, default=None)
@click.option("--lambda", "lam", type=float, default=None)
@click.option("--gamma", type=float, default=None)
@click.option("--epsilon", type=float, default=None)
@click.option("--max-iter", type=click.IntRange(min=1), default=None)
@click.option("--seed", type=click.IntRange(min=0), default=None)
@_threads_option
@click.option(
    "--config",
    "config_path",
    type=click.Path(path_type=Path),
    default=None,
    help="Training configuration JSON; flags override its values.",
)
@click.option("--progress-log", type=click.Path(path_type=Path), default=None)
@click.option("--out", "out_path", required=True, type=click.Path(path_type=Path))
@pass_context
@handle_errors
def train_command(
    ctx: CLIContext,
    data_path: Path,
    bits: int | None,
    anchors: int | None,
    sigma: float | None,
    cx: float | None,
    cb: float | None,
    lam: float | None,
    gamma: float | None,
    epsilon: float | None,
    max_iter: int | None,
    seed: int | None,
    threads: int | None,
    config_path: Path | None,
    progress_log: Path | None,
    out_path: Path,
) -> None:
    """Learn hash functions from a labeled dataset."""
    overrides = {
        "bits": bits,
        "anchors": anchors,
        "sigma": sigma,
        "cx": cx,
        "cb": cb,
        "lam": lam,
        "gamma": gamma,
        "epsilon": epsilon,
        "max_iter": max_iter,
        "seed": seed,
        "threads": threads,
    }
    if config_path is not None:
        config = TrainConfig.from_file(config_path).with_overrides(**overrides)
    else:
        if bits is None or anchors is None:
            raise click.UsageError("--bits and --anchors are required without --config")
        config = TrainConfig(bits=bits, anchors=anchors).with_overrides(**overrides)

    dataset = load_dataset(data_path)
    result = train(dataset, config, progress_log=progress_log)
    save_model(TrainState.from_result(dataset, result), out_path)

    summary = {
        "model": str(out_path),
        "samples": dataset.n,
        "classes": dataset.num_classes,
        "bits": config.bits,
        "anchors": config.anchors,
        "iterations": result.history.iterations,
        "converged": result.history.converged,
        "objective": result.history.objectives[-1],
    }
    click.echo(ctx.formatter.render(summary))


@cli.command("update")
@click.option("--model", "model_path", required=True, type=click.Path(path_type=Path))
@click.option("--events", "events_path", required=True, type=click.Path(path_type=Path))
@click.option(
    "--strategy",
    type=click.Choice([s.value for s in Strategy]),
    default=Strategy.INCREMENTAL.value,
    show_default=True,
)
@click.option("--re-anchor", is_flag=True, help="Resample anchors (bit SVMs start from zero).")
@click.option("--refit-preprocessing", is_flag=True, help="Refit the mean; implies --re-anchor.")
@_threads_option
@click.option("--out", "out_path", required=True, type=click.Path(path_type=Path))
@pass_context
@handle_errors
def update_command(
    ctx: CLIContext,
    model_path: Path,
    events_path: Path,
    strategy: str,
    re_anchor: bool,
    refit_preprocessing: bool,
    threads: int | None,
    out_path: Path,
) -> None:
    """Apply database modifications from an event file and retrain."""
    state = load_state(model_path)
    events = parse_event_file(events_path)
    config = state.model.config.with_overrides(threads=threads)
    updated = update(state, events, strategy, config, re_anchor, refit_preprocessing)
    save_model(updated, out_path)

    summary = {
        "model": str(out_path),
        "strategy": strategy,
        "events": len(events),
        "samples": updated.dataset.n,
        "classes": updated.dataset.num_classes,
        "iterations": updated.model.history.iterations,
    }
    click.echo(ctx.formatter.render(summary))


@cli.command("encode")
@click.option("--model", "model_path", required=True, type=click.Path(path_type=Path))
@click.option("--data", "data_path", required=True, type=click.Path(path_type=Path))
@_threads_option
@click.option("--out", "out_path", required=True, type=click.Path(path_type=Path))
@pass_context
@handle_errors
def encode_command(
    ctx: CLIContext, model_path: Path, data_path: Path, threads: int | None, out_path: Path
) -> None:
    """Write the binary codes of a dataset."""
    model = _model_of(load_model(model_path))
    dataset = load_dataset(data_path)
    codes = encode_batch(model, dataset.features, threads or 1)
    save_codes(codes, out_path)
    click.echo(
        ctx.formatter.render({"codes": str(out_path), "samples": dataset.n, "bits": model.num_bits})
    )


@cli.command("query")
@click.option("--model", "model_path", required=True, type=click.Path(path_type=Path))
@click.option("--db", "db_path", required=True, type=click.Path(path_type=Path))
@click.option("--data", "data_path", required=True, type=click.Path(path_type=Path))
@click.option("--top", type=click.IntRange(min=1), default=10, show_default=True)
@pass_context
@handle_errors
def query_command(
    ctx: CLIContext, model_path: Path, db_path: Path, data_path: Path, top: int
) -> None:
    """Rank database codes by Hamming distance to each query sample."""
    model = _model_of(load_model(model_path))
    db_codes = load_codes(db_path)
    if db_codes.shape[1] != model.num_bits:
        raise ValidationError(
            f"database codes have {db_codes.shape[1]} bits, model has {model.num_bits}"
        )
    queries = load_dataset(data_path)
    db = CodeDatabase.from_codes(db_codes, labels=[0] * db_codes.shape[0])
    hits = query_top(encode_batch(model, queries.features), db, top)

    if ctx.formatter.is_json:
        payload = [
            {"query": q, "indices": hit.indices.tolist(), "distances": hit.distances.tolist()}
            for q, hit in enumerate(hits)
        ]
        click.echo(ctx.formatter.format_json(payload))
        return
    rows = [
        [q, rank + 1, int(index), int(distance)]
        for q, hit in enumerate(hits)
        for rank, (index, distance) in enumerate(zip(hit.indices, hit.distances))
    ]
    click.echo(ctx.formatter.format_table(["query", "rank", "index", "distance"], rows))


@cli.command("eval")
@click.option("--model", "model_path", required=True, type=click.Path(path_type=Path))
@click.option("--test", "test_path", required=True, type=click.Path(path_type=Path))
@click.option("--radius", "radii", type=click.IntRange(min=0), multiple=True, default=(2,))
@_threads_option
@click.option("--out", "out_path", required=True, type=click.Path(path_type=Path))
@pass_context
@handle_errors
def eval_command(
    ctx: CLIContext,
    model_path: Path,
    test_path: Path,
    radii: tuple[int, ...],
    threads: int | None,
    out_path: Path,
) -> None:
    """Leave-one-out Hamming ranking evaluation on a test set."""
    model = _model_of(load_model(model_path))
    test = load_dataset(test_path)
    codes = encode_batch(model, test.features, threads or 1)
    report = evaluate(CodeDatabase.from_codes(codes, test.labels), radii, threads or 1)
    write_report(report, out_path)

    summary = {"report": str(out_path), **report.to_dict()}
    summary.pop("pr_curve")
    click.echo(ctx.formatter.render(summary))


def run_command(argv: Sequence[str] | None = None) -> int:
    """Run the CLI and return its exit code instead of exiting."""
    args = list(argv) if argv is not None else sys.argv[1:]
    try:
        result = cli.main(args=args, prog_name="sih", standalone_mode=False, obj=CLIContext())
    except click.UsageError as e:
        e.show()
        return EXIT_USAGE
    except click.ClickException as e:
        e.show()
        return EXIT_USAGE
    except click.exceptions.Abort:
        return EXIT_USAGE
    except SystemExit as e:
        return int(e.code) if isinstance(e.code, int) else EXIT_DATA
    return result if isinstance(result, int) else EXIT_OK


def main() -> None:
    """Main entry point for the CLI."""
    sys.exit(run_command())


if __name__ == "__main__":
    main()
