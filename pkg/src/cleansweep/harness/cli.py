"""``cleansweep`` command line.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 pipeline error.
"""

from __future__ import annotations

import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import click
import numpy as np

from ..attack import AttackConfig, AttackError, design_trigger, inject_poison
from ..clustering import ClusteringError
from ..core import DatasetError, ensure_dir, write_csv
from ..defense import DefenseConfig, DefenseError, run_defense
from ..ingest import (
    CsvFormatError,
    LineError,
    SyntheticConfig,
    ZeekFormatError,
    aggregate_with_keys,
    generate_synthetic,
    load_numeric_csv,
    read_label_map,
    read_zeek_conn,
)
from ..ingest.synthetic import SyntheticConfigError
from ..models import ModelError, model_to_json
from .experiment import ConfigError, dumps, load_config, parse_defense_config, run_experiment

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_PIPELINE = 0, 1, 2, 3


class DataError(Exception):
    pass


def _load_dataset(path):
    try:
        return load_numeric_csv(path)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def cli(verbose):
    """Backdoor poisoning experiments on tabular security data."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


@cli.command()
@click.option("--rows", default=10000, show_default=True)
@click.option("--features", default=20, show_default=True)
@click.option("--informative", default=6, show_default=True)
@click.option("--balance", default=0.5, show_default=True, help="Malicious fraction.")
@click.option("--separation", default=4.0, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def synth(rows, features, informative, balance, separation, seed, out):
    """Write a synthetic two-class dataset as CSV."""
    try:
        config = SyntheticConfig(rows, features, informative, balance, separation, seed)
    except SyntheticConfigError as exc:
        raise ConfigError(str(exc)) from exc
    write_csv(generate_synthetic(config), out)


@cli.command("ingest-zeek")
@click.option("--conn", required=True, type=click.Path(dir_okay=False))
@click.option("--window", default=30.0, show_default=True, help="Window length in seconds.")
@click.option("--internal", multiple=True, required=True,
              help="Internal address prefix (CIDR); repeatable.")
@click.option("--labels", type=click.Path(dir_okay=False), default=None,
              help="CSV of key,label with key window|internal_ip|dest_port.")
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def ingest_zeek(conn, window, internal, labels, out):
    """Aggregate a Zeek conn.log into per-window feature rows."""
    errors: list[LineError] = []
    try:
        records = read_zeek_conn(conn, errors)
        label_map = read_label_map(labels) if labels else None
    except OSError as exc:
        raise DataError(str(exc)) from exc
    try:
        result = aggregate_with_keys(records, window, internal, labels=label_map)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    write_csv(result.data, out)
    click.echo(
        f"{len(result.data)} rows, {result.data.n_features} features; "
        f"{len(errors)} bad lines, {result.skipped_external} records without internal endpoint",
        err=True,
    )


@cli.command()
@click.option("--data", required=True, type=click.Path(dir_okay=False))
@click.option("--rate", required=True, type=float, help="Poisoned fraction of rows.")
@click.option("--trigger-size", default=4, show_default=True)
@click.option("--value-strategy", default="min_population", show_default=True,
              type=click.Choice(["min_population", "benign_mode"]))
@click.option("--seed", default=0, show_default=True)
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def poison(data, rate, trigger_size, value_strategy, seed, out):
    """Inject a clean-label backdoor; writes the CSV and OUT.trigger.json."""
    try:
        config = AttackConfig(trigger_size, rate, value_strategy, seed)
    except AttackError as exc:
        raise ConfigError(str(exc)) from exc
    dataset = _load_dataset(data)
    trigger = design_trigger(dataset, config)
    poisoned, _ = inject_poison(dataset, trigger, rate, seed)
    write_csv(poisoned, out)
    Path(f"{out}.trigger.json").write_text(dumps(trigger.to_dict()))


@cli.command()
@click.option("--data", required=True, type=click.Path(dir_okay=False))
@click.option("--flag-mode", type=click.Choice(["fixed", "zscore"]), default=None)
@click.option("--sanitize", type=click.Choice(["filter", "patch"]), default=None)
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
              help="JSON object of defense settings.")
@click.option("--out", required=True, type=click.Path(file_okay=False))
def defend(data, flag_mode, sanitize, config_path, out):
    """Sanitize a training CSV and fit the purified model.

    Writes report.json, trace.csv, clean.csv and model.json into OUT.
    """
    settings = {}
    if config_path:
        try:
            settings = json.loads(Path(config_path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {config_path}: {exc}") from exc
    if flag_mode:
        settings["flag_mode"] = "fixed_threshold" if flag_mode == "fixed" else "zscore"
    if sanitize:
        settings["sanitize_mode"] = sanitize
    config = parse_defense_config(settings)
    dataset = _load_dataset(data)
    truth = dataset.poison_mask
    result = run_defense(dataset.blind(), config)
    out_dir = ensure_dir(out)
    report = {
        "config": config.to_dict(),
        "sanitization": result.report.to_dict(),
        "n_rows_in": len(dataset),
        "n_rows_clean": len(result.clean_data),
    }
    if truth is not None:
        poison_ids = dataset.row_ids[truth]
        kept = int(np.isin(poison_ids, result.clean_data.row_ids).sum())
        report["poisons_total"] = len(poison_ids)
        report["poisons_in_dclean"] = kept
    (out_dir / "report.json").write_text(dumps(report))
    result.trace.to_csv(out_dir / "trace.csv")
    write_csv(result.clean_data, out_dir / "clean.csv", include_poison=False)
    (out_dir / "model.json").write_text(model_to_json(result.model))


@cli.command()
@click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False))
@click.option("--out", required=True, type=click.Path(file_okay=False))
def experiment(config_path, out):
    """Run the full attack/defense grid; writes report.json and per-seed traces."""
    report = run_experiment(load_config(config_path), out)
    averages = report.averages
    click.echo(
        f"{averages['n_ok']} ok, {averages['n_failed']} failed; "
        f"base ASR {averages['base_asr']}, defended ASR {averages['defended_asr']}",
        err=True,
    )


_DATA_ERRORS = (DataError, DatasetError, CsvFormatError, ZeekFormatError)
_PIPELINE_ERRORS = (AttackError, DefenseError, ModelError, ClusteringError)


def main(argv=None) -> int:
    try:
        cli.main(args=argv, prog_name="cleansweep", standalone_mode=False)
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return EXIT_USAGE
    except click.ClickException as exc:
        exc.show()
        return EXIT_USAGE
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        return EXIT_USAGE
    except _DATA_ERRORS as exc:
        click.echo(f"data error: {exc}", err=True)
        return EXIT_DATA
    except _PIPELINE_ERRORS as exc:
        click.echo(f"pipeline error: {exc}", err=True)
        return EXIT_PIPELINE
    return EXIT_OK


def entry_point() -> None:
    sys.exit(main())
