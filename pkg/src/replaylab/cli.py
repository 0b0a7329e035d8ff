"""Typer CLI entry point."""

from __future__ import annotations

import json
import logging
import pathlib
from typing import List, NoReturn, Optional

import click
import typer
from dotenv import load_dotenv
from typer.core import TyperGroup

load_dotenv()

EXIT_USAGE = 1
EXIT_RUNTIME = 2


class _Commands(TyperGroup):
    """Command group whose usage errors exit with EXIT_USAGE instead of click's 2."""

    def make_context(self, *args, **kwargs):
        try:
            return super().make_context(*args, **kwargs)
        except click.UsageError as exc:
            exc.exit_code = EXIT_USAGE
            raise

    def invoke(self, ctx: click.Context):
        try:
            return super().invoke(ctx)
        except click.UsageError as exc:
            exc.exit_code = EXIT_USAGE
            raise


app = typer.Typer(
    cls=_Commands,
    name="replaylab",
    help="Selective experience replay for lifelong learning: experiments, plots and buffer tools.",
    add_completion=False,
    no_args_is_help=True,
)


def _fail(message: str, code: int = EXIT_USAGE) -> NoReturn:
    typer.echo(f"error: {message}", err=True)
    raise typer.Exit(code=code)


def _load(config: str):
    from replaylab.config import ConfigError, load_config
    from replaylab.presets import resolve_config_path

    try:
        cfg = load_config(resolve_config_path(config))
        cfg.resolve_agent()
    except FileNotFoundError as exc:
        _fail(str(exc))
    except ConfigError as exc:
        _fail(str(exc))
    except ValueError as exc:
        _fail(f"agent.batch_*: {exc}")
    return cfg


@app.callback()
def root_callback(
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Debug logging"),
) -> None:
    """Run experiments or inspect their artifacts."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


@app.command()
def run(
    config: str = typer.Argument(..., help="Config file or preset name, e.g. gridworld/matching"),
    quick: bool = typer.Option(False, "--quick", help="Cap every task at quick_steps_per_task steps"),
    jobs: int = typer.Option(1, "--jobs", "-j", min=1, help="Seeds trained in parallel"),
    seed: Optional[List[int]] = typer.Option(None, "--seed", "-s", help="Override the seed list (repeatable)"),
    out: Optional[pathlib.Path] = typer.Option(None, "--out", "-o", help="Output directory override"),
    mnist_images: Optional[pathlib.Path] = typer.Option(None, "--mnist-images", help="IDX image file (classification)"),
    mnist_labels: Optional[pathlib.Path] = typer.Option(None, "--mnist-labels", help="IDX label file (classification)"),
    synthetic: bool = typer.Option(False, "--synthetic", help="Use the synthetic block digits"),
) -> None:
    """Train every seed of an experiment and write metrics, snapshots and tables."""
    from replaylab.config import Domain
    from replaylab.envs.idx import IdxFormatError
    from replaylab.experiment import RunError, run_experiment

    cfg = _load(config)
    if (mnist_images is None) != (mnist_labels is None):
        _fail("--mnist-images and --mnist-labels must be given together")
    if synthetic and mnist_images is not None:
        _fail("--synthetic cannot be combined with --mnist-images")
    if (synthetic or mnist_images is not None) and cfg.domain is not Domain.CLASSIFICATION:
        _fail(f"dataset flags only apply to the classification domain, not {cfg.domain.value}")
    update = {}
    if synthetic:
        update["env"] = cfg.env.model_copy(update={"data_dir": None, "mnist_images": None, "mnist_labels": None})
    elif mnist_images is not None:
        for p in (mnist_images, mnist_labels):
            if not p.is_file():
                _fail(f"dataset file not found: {p}")
        update["env"] = cfg.env.model_copy(
            update={"data_dir": None, "mnist_images": str(mnist_images), "mnist_labels": str(mnist_labels)}
        )
    if seed:
        update["seeds"] = list(dict.fromkeys(seed))
    if out is not None:
        update["output_dir"] = str(out)
    if update:
        cfg = cfg.model_copy(update=update)

    typer.echo(f"Running {cfg.name}: {cfg.strategy.value} on {cfg.domain.value}, seeds {cfg.seeds}")
    try:
        result = run_experiment(cfg, jobs=jobs, quick=quick)
    except (RunError, IdxFormatError, OSError) as exc:
        _fail(str(exc), EXIT_RUNTIME)

    for seed_result in result.seeds:
        retention = " ".join(f"{t}:{v:.2f}" for t, v in seed_result.retention.items())
        composition = " ".join(f"{t}:{n}" for t, n in seed_result.composition.items())
        typer.echo(f"  seed {seed_result.seed}  retention {retention}  buffer {composition}")
    typer.echo(f"Wrote {len(result.manifest.files)} files to {result.output_dir}")


@app.command()
def plot(
    csvs: List[pathlib.Path] = typer.Argument(..., help="Per-seed metrics CSVs sharing one schema"),
    out: pathlib.Path = typer.Option(..., "--out", "-o", help="SVG file to write"),
    aggregate: Optional[pathlib.Path] = typer.Option(None, "--aggregate", help="aggregate.csv for error envelopes"),
    smooth: bool = typer.Option(False, "--smooth", help="Window-5 moving average"),
    title: Optional[str] = typer.Option(None, "--title"),
) -> None:
    """Plot per-task success rate against global step."""
    from replaylab.plotting import plot_curves
    from replaylab.reports import SchemaError

    try:
        path = plot_curves(csvs, out, aggregate=aggregate, smooth=smooth, title=title)
    except (SchemaError, FileNotFoundError) as exc:
        _fail(str(exc))
    typer.echo(f"Plot written to {path.resolve()}")


@app.command("report-buffer")
def report_buffer(
    snapshot: pathlib.Path = typer.Argument(..., help="buffer_seed*.json from a run"),
    as_json: bool = typer.Option(False, "--json", help="Print the report as JSON"),
) -> None:
    """Summarize a buffer snapshot: size, per-task composition, rank range."""
    from replaylab.snapshots import SnapshotError, buffer_report, load_buffer

    try:
        report = buffer_report(load_buffer(snapshot))
    except SnapshotError as exc:
        _fail(str(exc))
    if as_json:
        typer.echo(json.dumps(report, indent=2))
        return
    typer.echo(f"{report['kind']} buffer ({report['strategy'] or 'fifo'}): {report['size']}/{report['capacity']}")
    for task, count in report["per_task"].items():
        share = count / report["size"] if report["size"] else 0.0
        typer.echo(f"  task {task}: {count} ({share:.1%})")
    if "rank_min" in report:
        typer.echo(f"  rank min {report['rank_min']:.6g} mean {report['rank_mean']:.6g} max {report['rank_max']:.6g}")


@app.command("dump-buffer")
def dump_buffer(
    snapshot: pathlib.Path = typer.Argument(..., help="buffer_seed*.json from a run"),
    out: Optional[pathlib.Path] = typer.Option(None, "--out", "-o", help="CSV file; stdout when omitted"),
    limit: Optional[int] = typer.Option(None, "--limit", min=1, help="Only the first N records"),
) -> None:
    """List stored experiences (weakest first for episodic stores) as CSV."""
    from replaylab.snapshots import SnapshotError, load_buffer, records_to_csv

    try:
        snap = load_buffer(snapshot)
    except SnapshotError as exc:
        _fail(str(exc))
    records = snap.records[:limit] if limit else snap.records
    if out is None:
        typer.echo(records_to_csv(records), nl=False)
    else:
        records_to_csv(records, out)
        typer.echo(f"{len(records)} records written to {out}")


@app.command("grad-check")
def grad_check(
    config: Optional[str] = typer.Option(None, "--config", "-c", help="Check this config's architecture"),
    batch_size: int = typer.Option(8, "--batch", min=1),
    seed: int = typer.Option(0, "--seed"),
    step: float = typer.Option(1e-4, "--step", help="Central-difference step"),
    tolerance: float = typer.Option(1e-4, "--tolerance"),
) -> None:
    """Compare backprop against central differences on a random batch; exit 2 above tolerance."""
    import numpy as np

    from replaylab.config import ExperimentConfig
    from replaylab.core import Experience
    from replaylab.experiment import build_network
    from replaylab.network import gradient_check

    cfg = _load(config) if config else ExperimentConfig()
    net = build_network(cfg, seed)
    rng = np.random.default_rng(seed)
    size = net.input_size
    batch = [
        Experience(
            state=rng.random(size),
            action=int(rng.integers(net.num_outputs)),
            reward=float(rng.normal()),
            next_state=rng.random(size),
            terminal=bool(rng.random() < 0.2),
            ret=float(rng.normal()),
            task_id=0,
            step_index=i,
        )
        for i in range(batch_size)
    ]

    error = gradient_check(net, batch, step=step, objective=cfg.objective, rng=rng)
    typer.echo(f"max relative error {error:.3e} ({net.parameter_count} parameters, {cfg.objective.value})")
    if not error < tolerance:
        _fail(f"gradient check failed: {error:.3e} >= {tolerance:.0e}", EXIT_RUNTIME)


@app.command("validate-config")
def validate_config(
    config: str = typer.Argument(..., help="Config file or preset name"),
) -> None:
    """Parse and validate a config; exit 1 naming the offending field."""
    cfg = _load(config)
    agent = cfg.resolve_agent()
    typer.echo(
        f"ok: {cfg.name} ({cfg.strategy.value} on {cfg.domain.value}, tasks {cfg.env.tasks}, "
        f"steps {cfg.env.steps_per_task}, fifo {agent.fifo_capacity or 'unbounded'}, "
        f"episodic {agent.episodic_capacity}, seeds {cfg.seeds})"
    )


@app.command("save-net")
def save_net(
    config: str = typer.Argument(..., help="Config file or preset name"),
    out: pathlib.Path = typer.Option(..., "--out", "-o", help="Checkpoint JSON to write"),
    seed: int = typer.Option(0, "--seed"),
) -> None:
    """Write a freshly initialized network for a config's architecture."""
    from replaylab.experiment import build_network
    from replaylab.snapshots import save_network

    net = build_network(_load(config), seed)
    path = save_network(net, out)
    typer.echo(f"{net.parameter_count} parameters written to {path}")


@app.command("load-net")
def load_net(
    checkpoint: pathlib.Path = typer.Argument(..., help="network_seed*.json or a save-net output"),
) -> None:
    """Load a checkpoint and describe its architecture."""
    import numpy as np

    from replaylab.snapshots import SnapshotError, load_network

    try:
        net = load_network(checkpoint)
    except SnapshotError as exc:
        _fail(str(exc))
    shape = "x".join(str(d) for d in net.input_shape)
    typer.echo(f"input {shape}, {net.num_outputs} outputs, {net.parameter_count} parameters")
    for spec in net.layers:
        typer.echo(f"  {json.dumps(spec.to_dict())}")
    typer.echo(f"  |theta| = {float(np.linalg.norm(net.params)):.6g}")


@app.command()
def presets(
    show: Optional[str] = typer.Option(None, "--show", help="Print one preset's TOML instead of listing"),
) -> None:
    """List the bundled experiment presets."""
    from replaylab.presets import get_presets_dir, list_presets, read_preset

    if show is not None:
        try:
            typer.echo(read_preset(show), nl=False)
        except FileNotFoundError as exc:
            _fail(str(exc))
        return
    names = list_presets()
    if not names:
        _fail(f"no presets found under {get_presets_dir()}")
    for name in names:
        typer.echo(name)


def main() -> None:
    app()


if __name__ == "__main__":
    main()
