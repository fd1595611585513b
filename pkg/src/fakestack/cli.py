"""Command-line interface; every pipeline stage is a subcommand.

Exit codes: 0 success, 2 config error, 3 data error, 4 training failure,
5 coverage or integrity error.
"""

from __future__ import annotations

import functools
import logging
import sys

import click

from .errors import ConfigError, FakeStackError
from .pipeline.config import validate_config
from .pipeline.runner import ExperimentRunner, compare_runs


def _run_options(fn):
    @click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False),
                  help="YAML experiment config.")
    @click.option("--offline", is_flag=True, default=None, help="Never download backbone weights.")
    @click.option("--seed", type=int, default=None, help="Override the global seed.")
    @click.option("--out", type=click.Path(file_okay=False), default=None, help="Override the output directory.")
    @click.option("--resume/--no-resume", default=True, show_default=True,
                  help="Reuse finished stages whose inputs are unchanged.")
    @click.option("--size-class", type=click.Choice(["base", "small-proxy"]), default=None)
    @functools.wraps(fn)
    def wrapper(config_path, offline, seed, out, resume, size_class, **kwargs):
        cfg = validate_config(config_path).with_overrides(offline=offline, seed=seed, out=out,
                                                          size_class=size_class)
        runner = ExperimentRunner(cfg, resume=resume)
        try:
            return fn(runner, **kwargs)
        finally:
            runner.manifest.save()
    return wrapper


def _guard(fn):
    """Turn package errors into their exit codes instead of tracebacks."""
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except FakeStackError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(exc.exit_code)
    return wrapper


@click.group()
@click.option("-v", "--verbose", count=True, help="-v for progress, -vv for debug output.")
def main(verbose):
    """Stacked transformer ensemble for fake-news detection."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    from transformers.utils import logging as hf_logging

    hf_logging.disable_progress_bar()


def _echo_stage(record):
    click.echo(f"{record.name}: {record.status} ({record.wall_time:.1f}s)")


@main.command("validate-config")
@click.argument("path", type=click.Path(dir_okay=False))
@_guard
def validate_config_cmd(path):
    """Check a config and print its fully defaulted form."""
    import yaml

    cfg = validate_config(path)
    click.echo(yaml.safe_dump(cfg.echo(), sort_keys=True), nl=False)


@main.command("prepare-data")
@_guard
@_run_options
def prepare_data(runner):
    """Load, check, preprocess and write the splits."""
    _echo_stage(runner.prepare_data())


@main.command("train-base")
@click.option("--member", required=True)
@_guard
@_run_options
def train_base(runner, member):
    """Fine-tune one ensemble member."""
    _echo_stage(runner.train_member(member))


@main.command("predict")
@click.option("--member", required=True)
@click.option("--split", "split", required=True, type=click.Choice(["train", "validation", "test"]))
@_guard
@_run_options
def predict(runner, member, split):
    """Cache one member's predictions on a split (out-of-fold on train in oof mode)."""
    _echo_stage(runner.predict_member(member, split))


@main.command("build-meta")
@_guard
@_run_options
def build_meta(runner):
    """Stack member predictions into meta-feature matrices."""
    _echo_stage(runner.build_meta())


@main.command("train-meta")
@_guard
@_run_options
def train_meta(runner):
    """Fit the meta-learner and write ensemble predictions."""
    _echo_stage(runner.train_meta())


@main.command("evaluate")
@_guard
@_run_options
def evaluate(runner):
    """Write reports for every member and the ensemble."""
    _echo_stage(runner.evaluate())
    click.echo((runner.run_dir / "reports" / "summary.md").read_text(encoding="utf-8"), nl=False)


@main.command("run-experiment")
@_guard
@_run_options
def run_experiment(runner):
    """Run every stage in order."""
    try:
        manifest = runner.run()
    finally:
        for rec in runner.manifest.stages.values():
            _echo_stage(rec)
    click.echo(f"manifest: {manifest.path}")


@main.command("compare")
@click.argument("run_a", type=click.Path(file_okay=False, exists=True))
@click.argument("run_b", type=click.Path(file_okay=False, exists=True))
@_guard
def compare(run_a, run_b):
    """Compare the reports of two runs."""
    try:
        click.echo(compare_runs(run_a, run_b), nl=False)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot compare runs: {exc}") from exc


if __name__ == "__main__":
    main()
