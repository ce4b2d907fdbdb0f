"""CSV, JSON and JSONL writers and readers for the run artifacts.

Every JSON document is wrapped in a provenance envelope carrying the code version and the fully
resolved configuration. CSV floats are written with 17 significant digits.
"""

import csv
import json
import logging
import math
from collections.abc import Iterable, Sequence
from pathlib import Path
from typing import Any

from pydantic import BaseModel, ConfigDict

from . import __version__
from .diagnostics import DiagnosticsSample, displayed_energy_rate, energy_dissipation_rate, total_energy
from .dynamics import NoForce, SystemSpec
from .errors import InvalidConfig
from .harness import TrialSummary
from .integrator import TrajectoryRecord, predicted_jacobian
from .sticky import StickyRecord

logger = logging.getLogger(__name__)

BASE_COLUMNS = (
    "t",
    "V2",
    "V1",
    "I1",
    "diss_rate",
    "E",
    "K",
    "P",
    "align_diam",
    "flock_diam",
    "acc_phi",
    "acc_diss",
    "acc_I1",
)
PAIR_COLUMNS = ("chi", "mod_energy", "pair_energy")


class SimulationSummary(BaseModel):
    model_config = ConfigDict(frozen=True)

    steps: int
    t_final: float
    final: DiagnosticsSample
    acc_phi: float
    acc_diss: float
    acc_I1: float
    min_distance: float
    volume_factor: float
    energy_rate: float | None = None
    displayed_energy_rate: float | None = None
    # E(T) - E(0) + acc_diss / (2 N^2), zero up to quadrature error
    energy_balance: float | None = None


def summarize_trajectory(record: TrajectoryRecord, system: SystemSpec) -> SimulationSummary:
    energy_rate = displayed = balance = None
    if not isinstance(system.force, NoForce):
        final = record.final
        energy_rate = energy_dissipation_rate(final, system)
        displayed = displayed_energy_rate(final, system)
        e0 = total_energy(record.states[0], system).E
        balance = total_energy(final, system).E - e0 + (final.acc_diss - record.states[0].acc_diss) / (
            2.0 * system.N**2
        )
    return SimulationSummary(
        steps=record.steps_done,
        t_final=record.final.t,
        final=record.samples[-1],
        acc_phi=record.acc_phi,
        acc_diss=record.acc_diss,
        acc_I1=record.acc_I1,
        min_distance=record.min_distance,
        volume_factor=predicted_jacobian(record.acc_phi, system),
        energy_rate=energy_rate,
        displayed_energy_rate=displayed,
        energy_balance=balance,
    )


# ---------------------------------------------------------------------------
# CSV


def format_float(value: float | None) -> str:
    return "" if value is None else format(value, ".17g")


def trajectory_columns(samples: Sequence[DiagnosticsSample]) -> tuple[str, ...]:
    has_pair = any(sample.chi is not None for sample in samples)
    return BASE_COLUMNS + PAIR_COLUMNS if has_pair else BASE_COLUMNS


def write_trajectory_csv(path: Path, samples: Sequence[DiagnosticsSample]) -> None:
    columns = trajectory_columns(samples)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(columns)
        for sample in samples:
            writer.writerow([format_float(getattr(sample, column)) for column in columns])
    logger.debug("Wrote %d rows to %s", len(samples), path)


def read_trajectory_csv(path: Path) -> dict[str, list[float | None]]:
    """Columns of a trajectory CSV; empty cells become None."""
    try:
        with path.open("r", encoding="utf-8", newline="") as f:
            reader = csv.reader(f)
            header = next(reader)
            rows = list(reader)
    except (OSError, StopIteration) as exc:
        raise InvalidConfig(f"Cannot read trajectory CSV '{path}': {exc}") from exc
    if tuple(header[: len(BASE_COLUMNS)]) != BASE_COLUMNS:
        raise InvalidConfig(f"'{path}' does not have the trajectory header")
    columns: dict[str, list[float | None]] = {name: [] for name in header}
    for line, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise InvalidConfig(f"{path}:{line}: expected {len(header)} fields, got {len(row)}")
        for name, cell in zip(header, row, strict=True):
            try:
                columns[name].append(float(cell) if cell else None)
            except ValueError as exc:
                raise InvalidConfig(f"{path}:{line}: column '{name}' is not a number: {cell!r}") from exc
    return columns


def write_cluster_counts_csv(path: Path, record: StickyRecord) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(("t", "K"))
        for t, k in record.cluster_counts():
            writer.writerow((format_float(t), k))


# ---------------------------------------------------------------------------
# JSON / JSONL


def _plain(value: Any) -> Any:
    if isinstance(value, BaseModel):
        return value.model_dump(mode="json")
    return value


def envelope(result: Any, config: BaseModel | None = None) -> dict[str, Any]:
    return {
        "version": __version__,
        "config": _plain(config),
        "result": _plain(result),
    }


def dumps(document: Any) -> str:
    def _check(value: Any) -> Any:
        if isinstance(value, float) and not math.isfinite(value):
            return None
        if isinstance(value, dict):
            return {k: _check(v) for k, v in value.items()}
        if isinstance(value, list):
            return [_check(v) for v in value]
        return value

    return json.dumps(_check(document), indent=2, ensure_ascii=False) + "\n"


def write_json(path: Path, result: Any, config: BaseModel | None = None) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(envelope(result, config)), encoding="utf-8")
    logger.debug("Wrote %s", path)


def read_json(path: Path) -> dict[str, Any]:
    try:
        document: dict[str, Any] = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidConfig(f"Cannot read JSON '{path}': {exc}") from exc
    return document


def write_jsonl(path: Path, rows: Iterable[BaseModel]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        for row in rows:
            f.write(row.model_dump_json() + "\n")


def read_trial_summaries(path: Path) -> list[TrialSummary]:
    summaries: list[TrialSummary] = []
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise InvalidConfig(f"Cannot read trial records '{path}': {exc}") from exc
    for line in lines:
        if line.strip():
            summaries.append(TrialSummary.model_validate_json(line))
    return summaries
