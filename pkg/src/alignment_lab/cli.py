import logging
from collections.abc import Iterator
from contextlib import contextmanager
from pathlib import Path
from typing import Annotated

import typer
from rich.console import Console
from rich.logging import RichHandler
from rich.table import Table

from .config import InitialState, RunConfig, ValidationRequest, load_config, load_validation_request, with_overrides
from .dynamics import EnsembleState, SystemSpec, make_state
from .errors import AlignmentLabError, InvalidConfig, NumericalBlowup
from .harness import SweepAggregate, fit_decay_rate, run_sweep, sample_initial
from .integrator import IntegrationParams, integrate
from .model import validate_pair
from .output import (
    dumps,
    envelope,
    read_trajectory_csv,
    summarize_trajectory,
    write_cluster_counts_csv,
    write_json,
    write_jsonl,
    write_trajectory_csv,
)
from .relations import RelationQuery, integer_relation, kronecker_dimension
from .scenarios import SCENARIOS, get_scenario
from .sticky import run_sticky

PARALLELISM_ENV = "ALIGNMENT_LAB_PARALLELISM"

app = typer.Typer(
    name="alignment-lab",
    help="🐦 Numerical laboratory for alignment systems with local communication.",
    add_completion=True,
    no_args_is_help=True,
)

logger = logging.getLogger("alignment_lab")
stderr = Console(stderr=True)


@app.callback()
def main(
    verbose: Annotated[
        bool,
        typer.Option("--verbose", "-v", help="Log run details (DEBUG level)."),
    ] = False,
) -> None:
    logger.handlers.clear()
    logger.addHandler(RichHandler(console=stderr, show_path=False))
    logger.setLevel(logging.DEBUG if verbose else logging.WARNING)
    logger.propagate = False


@contextmanager
def _exit_codes() -> Iterator[None]:
    """Turn library errors into messages and exit codes: 1 for bad input, 2 for blow-ups."""
    try:
        yield
    except NumericalBlowup as exc:
        typer.secho(f"❌ Numerical blow-up: {exc}", fg=typer.colors.RED, err=True)
        raise typer.Exit(code=2) from exc
    except AlignmentLabError as exc:
        typer.secho(f"❌ {type(exc).__name__}: {exc}", fg=typer.colors.RED, err=True)
        raise typer.Exit(code=1) from exc


ConfigOption = Annotated[
    Path | None,
    typer.Option("--config", "-c", help="Path to the JSON run configuration.", show_default=False),
]
ScenarioOption = Annotated[
    str | None,
    typer.Option("--scenario", help=f"Named initial state ({', '.join(SCENARIOS)}).", show_default=False),
]
HorizonOption = Annotated[
    float | None,
    typer.Option("--horizon", "-T", help="Override the horizon.", show_default=False),
]
StepOption = Annotated[float | None, typer.Option("--step", help="Override the RK4 step.", show_default=False)]
SeedOption = Annotated[
    int | None,
    typer.Option("--seed", "-s", help="Override the sampling / master seed.", show_default=False),
]
OutputDirOption = Annotated[
    Path | None,
    typer.Option("--output-dir", "-o", help="Override the output directory.", show_default=False),
]


def _resolve(
    config_path: Path | None,
    scenario: str | None,
    **overrides: object,
) -> tuple[RunConfig, EnsembleState]:
    """Configuration plus initial state: a scenario, the explicit initial block, or a seeded sample."""
    picked = get_scenario(scenario) if scenario is not None else None
    if config_path is not None:
        config = load_config(config_path)
        typer.echo(f"🔍 Loaded config: {config_path}")
        if picked is not None and picked.system != config.system:
            raise InvalidConfig(f"Scenario '{scenario}' uses a different system than the config")
    elif picked is not None:
        config = RunConfig(system=picked.system, integration=IntegrationParams(T=10.0))
    else:
        raise InvalidConfig("Either --config or --scenario is required")
    config = with_overrides(config, **overrides)
    if overrides.get("seed") is not None:
        typer.echo(f"🌱 Using seed: {overrides['seed']}")

    if picked is not None:
        # embedded configs replay the scenario without its name
        initial = InitialState(x=picked.state.x.tolist(), v=picked.state.v.tolist())
        return config.model_copy(update={"initial": initial}), picked.state
    if config.initial is not None:
        return config, make_state(config.initial.x, config.initial.v, config.system)
    return config, sample_initial(config.sampling, config.system)


def _describe(system: SystemSpec) -> str:
    return f"{system.domain.kind} N={system.N} n={system.n} kernel={system.kernel.kind} force={system.force.kind}"


def _output_path(config: RunConfig, suffix: str) -> Path:
    return config.output.directory / f"{config.output.prefix}_{suffix}"


@app.command()
def simulate(
    config_path: ConfigOption = None,
    scenario: ScenarioOption = None,
    horizon: HorizonOption = None,
    step: StepOption = None,
    seed: SeedOption = None,
    output_dir: OutputDirOption = None,
) -> None:
    """
    Integrates one trajectory and writes the diagnostics time series (CSV) and a JSON summary.
    """
    with _exit_codes():
        config, state = _resolve(config_path, scenario, T=horizon, h=step, seed=seed, output_dir=output_dir)
        system = config.system
        typer.echo(f"⏳ Integrating {_describe(system)} up to T={config.integration.T}")
        csv_path = _output_path(config, "trajectory.csv")
        try:
            record = integrate(state, system, config.integration, config.epsilon)
        except NumericalBlowup as exc:
            if exc.record is not None:
                write_trajectory_csv(csv_path, exc.record.samples)
                typer.echo(f"   Partial trajectory saved to: {csv_path}")
            raise
        write_trajectory_csv(csv_path, record.samples)
        summary_path = _output_path(config, "summary.json")
        write_json(summary_path, summarize_trajectory(record, system), config)
        typer.secho(f"✅ Trajectory saved to: {csv_path}", fg=typer.colors.GREEN)
        typer.secho(f"✅ Summary saved to: {summary_path}", fg=typer.colors.GREEN)
    typer.echo("🎉 Simulation complete!")


@app.command()
def sticky(
    config_path: ConfigOption = None,
    scenario: ScenarioOption = None,
    horizon: HorizonOption = None,
    seed: SeedOption = None,
    output_dir: OutputDirOption = None,
) -> None:
    """
    Runs the event-driven sticky-particle model and writes the event log (JSON) and cluster counts (CSV).
    """
    with _exit_codes():
        config, state = _resolve(config_path, scenario, T=horizon, seed=seed, output_dir=output_dir)
        params = config.sticky_params
        if horizon is not None:
            params = params.model_copy(update={"t_max": horizon})
        typer.echo(f"⏳ Sticky run of {config.system.N} agents up to t={params.t_max}")
        record = run_sticky(state, config.system, params)
        events_path = _output_path(config, "events.json")
        counts_path = _output_path(config, "clusters.csv")
        write_json(events_path, record, config)
        write_cluster_counts_csv(counts_path, record)
        typer.echo(f"   {len(record.events)} event(s), {record.final.K} cluster(s) at t={record.final.t}")
        typer.secho(f"✅ Event log saved to: {events_path}", fg=typer.colors.GREEN)
    typer.echo("🎉 Sticky run complete!")


def _aggregate_table(aggregate: SweepAggregate) -> Table:
    table = Table(title=f"Sweep of {aggregate.trials} trials (master seed {aggregate.master_seed})")
    table.add_column("quantity")
    table.add_column("value", justify="right")
    lo, hi = aggregate.aligned_ci
    table.add_row("aligned fraction", f"{aggregate.aligned_fraction:.4f} [{lo:.4f}, {hi:.4f}]")
    table.add_row("pair-aligned fraction", f"{aggregate.pair_aligned_fraction:.4f}")
    table.add_row("H-flag fraction", f"{aggregate.H_fraction:.4f}")
    table.add_row("K <= 2n fraction", f"{aggregate.k_le_2n_fraction:.4f}")
    table.add_row("cluster histogram", ", ".join(f"{k}: {c}" for k, c in aggregate.cluster_histogram.items()))
    table.add_row("unexplained misaligned", str(aggregate.unexplained_misaligned))
    table.add_row("blow-ups", str(aggregate.blowups))
    return table


@app.command()
def sweep(
    config_path: Annotated[Path, typer.Option("--config", "-c", help="Path to the JSON run configuration.")],
    trials: Annotated[
        int | None,
        typer.Option("--trials", "-n", help="Override the number of trials.", show_default=False),
    ] = None,
    parallelism: Annotated[
        int | None,
        typer.Option(
            "--parallelism",
            "-p",
            help="Worker processes.",
            envvar=PARALLELISM_ENV,
            show_default=False,
        ),
    ] = None,
    horizon: HorizonOption = None,
    seed: SeedOption = None,
    output_dir: OutputDirOption = None,
) -> None:
    """
    Runs a seeded Monte-Carlo sweep and writes per-trial records (JSONL) and the aggregate (JSON).
    """
    with _exit_codes():
        config = load_config(config_path)
        config = with_overrides(
            config,
            trials=trials,
            parallelism=parallelism,
            T=horizon,
            seed=seed,
            output_dir=output_dir,
        )
        spec = config.sampling.model_copy(update={"seed": config.sweep.master_seed})
        workers = config.sweep.parallelism or 1
        typer.echo(f"⏳ Running {config.sweep.trials} trial(s) with {workers} worker(s)")
        typer.echo(f"🌱 Master seed: {config.sweep.master_seed}")
        report = run_sweep(config.system, spec, config.integration, config.sweep.trials, workers, config.thresholds)
        trials_path = _output_path(config, "trials.jsonl")
        aggregate_path = _output_path(config, "aggregate.json")
        write_jsonl(trials_path, report.summaries)
        write_json(aggregate_path, report.aggregate, config)
        stderr.print(_aggregate_table(report.aggregate))
        typer.secho(f"✅ Trial records saved to: {trials_path}", fg=typer.colors.GREEN)
        typer.secho(f"✅ Aggregate saved to: {aggregate_path}", fg=typer.colors.GREEN)
    typer.echo("🎉 Sweep complete!")


def _parse_vector(text: str) -> list[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise InvalidConfig(f"Cannot parse vector '{text}': {exc}") from exc


@app.command()
def relations(
    v: Annotated[str, typer.Option("--v", help="Comma-separated real vector, e.g. '1,1.4142135623730951'.")],
    tol: Annotated[float, typer.Option("--tol", help="Residual tolerance |q.v|.")] = 1e-9,
    bound: Annotated[int, typer.Option("--bound", help="Largest coefficient magnitude.", min=1)] = 100,
    output_file: Annotated[
        Path | None,
        typer.Option("--output-file", "-o", help="Save the JSON result here instead of printing it.", show_default=False),
    ] = None,
) -> None:
    """
    Searches for an integer relation q.v = 0 and reports the Kronecker dimension of v.
    """
    with _exit_codes():
        vector = _parse_vector(v)
        try:
            query = RelationQuery(v=vector, tol=tol, bound=bound)
        except ValueError as exc:
            raise InvalidConfig(str(exc)) from exc
        result = integer_relation(query)
        document = {
            "query": query.model_dump(mode="json"),
            "relation": result.model_dump(mode="json"),
            "kronecker_dimension": kronecker_dimension(vector, tol, bound),
        }
        _emit(document, output_file)


@app.command()
def analyze(
    csv_path: Annotated[Path, typer.Argument(help="Trajectory CSV written by `simulate`.")],
    columns: Annotated[
        list[str] | None,
        typer.Option("--column", help="Column to fit (repeatable).", show_default=False),
    ] = None,
    start: Annotated[float, typer.Option("--from", help="Start of the fitting window.")] = 1.0,
    end: Annotated[float | None, typer.Option("--to", help="End of the fitting window.", show_default=False)] = None,
    output_file: Annotated[
        Path | None,
        typer.Option("--output-file", "-o", help="Save the JSON fits here instead of printing them.", show_default=False),
    ] = None,
) -> None:
    """
    Fits exponential and power-law decay rates to columns of a trajectory CSV.
    """
    with _exit_codes():
        data = read_trajectory_csv(csv_path)
        wanted = columns or ["align_diam", "V2"] + (["pair_energy"] if "pair_energy" in data else [])
        fits: dict[str, object] = {}
        for name in wanted:
            if name not in data:
                raise InvalidConfig(f"Column '{name}' is not in {csv_path}")
            pairs = [(t, y) for t, y in zip(data["t"], data[name], strict=True) if t is not None and y is not None]
            window = (start, end if end is not None else float("inf"))
            fit = fit_decay_rate([t for t, _ in pairs], [y for _, y in pairs], window)
            fits[name] = fit.model_dump(mode="json")
        _emit({"source": str(csv_path), "window": [start, end], "fits": fits}, output_file)


@app.command()
def validate(
    pair_path: Annotated[
        Path,
        typer.Argument(help="JSON document with 'kernel', 'potential' and optionally 'radius' and 'grid'."),
    ],
    output_file: Annotated[
        Path | None,
        typer.Option("--output-file", "-o", help="Save the JSON report here instead of printing it.", show_default=False),
    ] = None,
) -> None:
    """
    Checks U'(r) phi'(r) <= 0 and the quadratic-contact condition for a kernel/potential pair.
    """
    with _exit_codes():
        request: ValidationRequest = load_validation_request(pair_path)
        report = validate_pair(request.kernel, request.potential, request.span, request.grid)
        if not report.ok:
            typer.secho("⚠️  The pair fails at least one condition", fg=typer.colors.YELLOW, err=True)
        _emit({"request": request.model_dump(mode="json"), "report": report.model_dump(mode="json")}, output_file)


def _emit(document: dict[str, object], output_file: Path | None) -> None:
    text = dumps(envelope(document))
    if output_file is None:
        typer.echo(text, nl=False)
        return
    output_file.parent.mkdir(parents=True, exist_ok=True)
    output_file.write_text(text, encoding="utf-8")
    typer.secho(f"✅ Result saved to: {output_file}", fg=typer.colors.GREEN, err=True)

