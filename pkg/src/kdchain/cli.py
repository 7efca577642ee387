"""Operator entry point: graph ingestion, single-question traces, batch
evaluation, and report merging.

Exit codes are a stable contract: 0 success, 2 input/data error,
3 provider/transport error, 4 usage error.
"""
from __future__ import annotations

import os
import sys
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Optional, Sequence

import click

from .chain import ChainError, ChainRunner, RunOutcome
from .evaluation import (
    ConfigError,
    DuplicateId,
    SchemaError,
    load_dataset,
    make_report,
    parse_report_csv,
    report,
    run_method,
    write_records,
)
from .gateway import GatewayError, ProviderConfigError, Transcript, provider_from_spec
from .kgstore import Graph, MalformedRecord, load_graph

EXIT_OK = 0
EXIT_DATA = 2
EXIT_PROVIDER = 3
EXIT_USAGE = 4

_CONFIG_KEYS = ("graph", "provider", "method", "dataset", "k_list", "seed", "output_dir")
_ENV_PREFIX = "KDC_"


class CliFailure(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


@dataclass(frozen=True)
class RunConfig:
    graph_path: Path
    provider: str
    method: str
    dataset_path: Path
    k_list: tuple[int, ...] = (1, 3, 5)
    seed: int = 0
    output_dir: Path = Path("runs")

    def __post_init__(self):
        if not self.k_list:
            raise ConfigError("k_list must not be empty")
        if any(k < 1 or k > 20 for k in self.k_list):
            raise ConfigError("k_list values must be between 1 and 20")
        if list(self.k_list) != sorted(set(self.k_list)):
            raise ConfigError("k_list must be strictly ascending")


def parse_config_file(path: Path) -> dict[str, str]:
    """Flat `key = value` lines; quotes optional, # starts a comment line."""
    values: dict[str, str] = {}
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise CliFailure(EXIT_DATA, f"cannot read config file {path}: {exc}")
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise CliFailure(EXIT_DATA, f"config line {lineno} is not key = value: {raw!r}")
        key = key.strip()
        if key not in _CONFIG_KEYS:
            raise CliFailure(EXIT_DATA, f"config line {lineno}: unknown key {key!r}")
        value = value.strip()
        if len(value) >= 2 and value[0] == value[-1] and value[0] in "\"'":
            value = value[1:-1]
        values[key] = value
    return values


def _parse_k_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise ConfigError(f"k_list must be comma-separated integers, got {text!r}")


def build_run_config(flags: dict[str, Optional[str]], config_path: Optional[Path]) -> RunConfig:
    """Assemble config with precedence: flags > config file > environment."""
    file_values = parse_config_file(config_path) if config_path else {}

    def pick(key: str) -> Optional[str]:
        if flags.get(key) is not None:
            return flags[key]
        if key in file_values:
            return file_values[key]
        return os.environ.get(_ENV_PREFIX + key.upper())

    provider = pick("provider")
    if not provider:
        raise ProviderConfigError("no provider configured; pass --provider or set provider in the config")
    missing = [key for key in ("graph", "method", "dataset") if not pick(key)]
    if missing:
        raise ConfigError(f"missing required configuration: {', '.join(missing)}")
    return RunConfig(
        graph_path=Path(pick("graph")),
        provider=provider,
        method=pick("method"),
        dataset_path=Path(pick("dataset")),
        k_list=_parse_k_list(pick("k_list")) if pick("k_list") else (1, 3, 5),
        seed=int(pick("seed") or 0),
        output_dir=Path(pick("output_dir") or "runs"),
    )


def _new_run_dir(output_dir: Path) -> Path:
    stamp = datetime.now().strftime("%Y%m%dT%H%M%S-%f")
    run_dir = output_dir / stamp
    run_dir.mkdir(parents=True, exist_ok=False)
    return run_dir


def _load_graph_or_fail(path: Path, fmt: str = "tsv", lenient: bool = False, missing_code: int = EXIT_DATA) -> Graph:
    if not path.is_file():
        raise CliFailure(missing_code, f"graph file not found: {path}")
    try:
        return load_graph(path, fmt=fmt, lenient=lenient)
    except MalformedRecord as exc:
        raise CliFailure(EXIT_DATA, f"malformed graph record: {exc}")
    except OSError as exc:
        raise CliFailure(EXIT_DATA, f"cannot read graph file {path}: {exc}")


@click.group()
def cli():
    """Knowledge-graph question answering with verified reasoning chains."""


@cli.command()
@click.argument("path", type=click.Path(path_type=Path))
@click.option("--format", "fmt", type=click.Choice(["tsv", "nt"]), default="tsv", show_default=True)
@click.option("--lenient", is_flag=True, help="Skip malformed lines instead of failing.")
def ingest(path: Path, fmt: str, lenient: bool):
    """Load a graph file and print a store summary."""
    graph = _load_graph_or_fail(path, fmt=fmt, lenient=lenient)
    click.echo(f"triples: {len(graph)}")
    click.echo(f"entities: {len(graph.entities)}")
    click.echo(f"relations: {len(graph.relation_catalog)}")
    if lenient and graph.malformed:
        click.echo(f"skipped malformed lines: {len(graph.malformed)}")


def _print_trace(outcome: RunOutcome) -> None:
    for history in outcome.attempts:
        for position, attempt in enumerate(history):
            suffix = f" (repair {attempt.repair_count})" if position else ""
            step = attempt.subtask
            click.echo(f"[{attempt.verdict}] step {step.index}{suffix}: {step.goal}")
            for line in (attempt.canonical_code or "(no code)").splitlines():
                click.echo(f"    {line}")
            if attempt.evidence is not None:
                values = ", ".join(t.value for t in attempt.evidence.values) or "(empty)"
                click.echo(f"    evidence: {values}")
            for diagnostic in attempt.diagnostics:
                click.echo(f"    problem: {diagnostic.message}")
    for warning in outcome.warnings:
        click.echo(f"warning: {warning}")
    click.echo(f"chain: {outcome.chain.status}")
    click.echo("answers:")
    for rank, answer in enumerate(outcome.chain.final_answers, start=1):
        click.echo(f"  {rank}. {answer}")


@cli.command()
@click.argument("question")
@click.option("--graph", "graph_path", required=True, type=click.Path(path_type=Path))
@click.option("--provider", "provider_spec", required=True)
@click.option("--output-dir", type=click.Path(path_type=Path), default=Path("runs"), show_default=True)
def ask(question: str, graph_path: Path, provider_spec: str, output_dir: Path):
    """Trace one question through the verified chain and print ranked answers."""
    # A missing graph here is a run-environment fault, reported as such.
    graph = _load_graph_or_fail(graph_path, missing_code=EXIT_PROVIDER)
    try:
        provider = provider_from_spec(provider_spec)
    except ProviderConfigError as exc:
        raise CliFailure(EXIT_PROVIDER, str(exc))
    run_dir = _new_run_dir(output_dir)
    transcript = Transcript(run_dir / "transcript.jsonl")
    runner = ChainRunner(graph, provider, transcript=transcript)
    try:
        outcome = runner.run(question)
    except GatewayError as exc:
        raise CliFailure(EXIT_PROVIDER, str(exc))
    except ChainError as exc:
        raise CliFailure(EXIT_DATA, str(exc))
    _print_trace(outcome)
    click.echo(f"transcript: {run_dir / 'transcript.jsonl'}")


@cli.command("eval")
@click.option("--config", "config_path", type=click.Path(path_type=Path))
@click.option("--graph", "graph_flag")
@click.option("--provider", "provider_flag")
@click.option("--method", "method_flag")
@click.option("--dataset", "dataset_flag")
@click.option("--k-list", "k_list_flag", help="Comma-separated K values, e.g. 1,3,5.")
@click.option("--seed", "seed_flag")
@click.option("--output-dir", "output_dir_flag")
@click.option("--jobs", type=int, default=1, show_default=True)
def eval_command(
    config_path: Optional[Path],
    graph_flag: Optional[str],
    provider_flag: Optional[str],
    method_flag: Optional[str],
    dataset_flag: Optional[str],
    k_list_flag: Optional[str],
    seed_flag: Optional[str],
    output_dir_flag: Optional[str],
    jobs: int,
):
    """Run one method over a dataset; write records.jsonl and report.csv."""
    flags = {
        "graph": graph_flag,
        "provider": provider_flag,
        "method": method_flag,
        "dataset": dataset_flag,
        "k_list": k_list_flag,
        "seed": seed_flag,
        "output_dir": output_dir_flag,
    }
    try:
        config = build_run_config(flags, config_path)
    except ProviderConfigError as exc:
        raise CliFailure(EXIT_PROVIDER, str(exc))
    except (ConfigError, ValueError) as exc:
        raise CliFailure(EXIT_DATA, str(exc))

    graph = _load_graph_or_fail(config.graph_path)
    if not config.dataset_path.is_file():
        raise CliFailure(EXIT_DATA, f"dataset file not found: {config.dataset_path}")
    try:
        items = load_dataset(config.dataset_path)
    except (SchemaError, DuplicateId) as exc:
        raise CliFailure(EXIT_DATA, str(exc))
    try:
        provider = provider_from_spec(config.provider)
    except ProviderConfigError as exc:
        raise CliFailure(EXIT_PROVIDER, str(exc))

    run_dir = _new_run_dir(config.output_dir)
    transcript = Transcript(run_dir / "transcript.jsonl")
    try:
        records = run_method(
            config.method, items, graph, provider, jobs=jobs, transcript=transcript
        )
    except ConfigError as exc:
        raise CliFailure(EXIT_DATA, str(exc))
    except GatewayError as exc:
        raise CliFailure(EXIT_PROVIDER, str(exc))

    write_records(records, run_dir / "records.jsonl")
    by_item = {item.id: item for item in items}
    groups: dict[str, list] = {}
    for record in records:
        groups.setdefault(by_item[record.item_id].dataset, []).append(record)
    reports = [
        make_report(config.method, dataset, group, config.k_list)
        for dataset, group in groups.items()
    ]
    document = report(reports)
    (run_dir / "report.csv").write_text(document.csv, encoding="utf-8")
    click.echo(document.text, nl=False)
    click.echo(f"run directory: {run_dir}")


@cli.command("report")
@click.argument("run_dirs", nargs=-1, required=True, type=click.Path(path_type=Path))
def report_command(run_dirs: Sequence[Path]):
    """Merge and print report tables from one or more run directories."""
    rows: list[dict[str, object]] = []
    header: Optional[list[str]] = None
    for run_dir in run_dirs:
        csv_path = run_dir / "report.csv"
        if not csv_path.is_file():
            raise CliFailure(EXIT_DATA, f"no report.csv under {run_dir}")
        text = csv_path.read_text(encoding="utf-8")
        first_line = text.splitlines()[0].split(",") if text.strip() else []
        if header is None:
            header = first_line
        elif first_line != header:
            raise CliFailure(EXIT_DATA, f"report columns in {csv_path} do not match earlier runs")
        rows.extend(parse_report_csv(text))
    if not rows or header is None:
        raise CliFailure(EXIT_DATA, "no report rows found")
    table = [header] + [[str(row[key]) for key in header] for row in rows]
    widths = [max(len(line[i]) for line in table) for i in range(len(header))]
    for line in table:
        click.echo("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(line)).rstrip())


def run() -> None:
    try:
        cli.main(standalone_mode=False)
    except CliFailure as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(exc.code)
    except click.UsageError as exc:
        click.echo(f"usage error: {exc.format_message()}", err=True)
        sys.exit(EXIT_USAGE)
    except click.ClickException as exc:
        exc.show()
        sys.exit(EXIT_USAGE)
    except click.exceptions.Abort:
        sys.exit(130)
    except click.exceptions.Exit as exc:
        sys.exit(exc.exit_code)


if __name__ == "__main__":
    run()
