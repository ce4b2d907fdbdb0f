"""Seeded sampling, single trials with outcome classification, Monte-Carlo sweeps and decay fits.

Per-trial seeds are split from the master seed with the splitmix64 finaliser:
``seed_i = mix64(master XOR i)``. Every sample is drawn from ``numpy.random.Generator(Philox(seed))``.
"""

import logging
import math
from collections import Counter
from collections.abc import Sequence
from concurrent.futures import ProcessPoolExecutor
from typing import Annotated, Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.stats import norm

from .diagnostics import ClusterCensus, cluster_census, min_velocity_gap, well_gap
from .dynamics import EnsembleState, NoForce, SystemSpec, galilean_project, make_state
from .errors import InvalidConfig, NumericalBlowup, Unsupported
from .geometry import Torus, diameter
from .integrator import IntegrationParams, TrajectoryRecord, integrate

logger = logging.getLogger(__name__)

MASK64 = (1 << 64) - 1
MAX_REJECTIONS = 10_000
CLIP_FLOOR = 1e-30


# ---------------------------------------------------------------------------
# Sampling


class TorusUniform(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["torus_uniform"] = "torus_uniform"


class BoxUniform(BaseModel):
    """Uniform positions in [-L, L]^n."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["box_uniform"] = "box_uniform"
    L: float = Field(default=1.0, gt=0.0)


class BallVelocities(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["ball"] = "ball"
    V_max: float = Field(default=1.0, gt=0.0)


class GaussianVelocities(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["gaussian"] = "gaussian"
    sigma: float = Field(default=1.0, gt=0.0)


PositionLaw = Annotated[TorusUniform | BoxUniform, Field(discriminator="kind")]
VelocityLaw = Annotated[BallVelocities | GaussianVelocities, Field(discriminator="kind")]


class SampleSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    positions: PositionLaw = Field(default_factory=TorusUniform)
    velocities: VelocityLaw = Field(default_factory=BallVelocities)
    galilean_center: bool = False
    seed: int = Field(default=0, ge=0, le=MASK64)
    # redraw positions until the flock diameter is below this radius
    contact_radius: float | None = Field(default=None, gt=0.0)


def mix64(x: int) -> int:
    """splitmix64 finaliser."""
    z = (x + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def trial_seed(master: int, i: int) -> int:
    return mix64((master ^ i) & MASK64)


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def _ball(rng: np.random.Generator, N: int, n: int, radius: float) -> np.ndarray:
    direction = rng.standard_normal((N, n))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    return direction * radius * rng.random((N, 1)) ** (1.0 / n)


def sample_initial(spec: SampleSpec, system: SystemSpec) -> EnsembleState:
    domain = system.domain
    if spec.galilean_center and isinstance(domain, Torus):
        raise Unsupported("Galilean centering needs the open domain")
    if isinstance(spec.positions, TorusUniform) != isinstance(domain, Torus):
        raise InvalidConfig(f"Position law '{spec.positions.kind}' does not fit the '{domain.kind}' domain")

    rng = make_rng(spec.seed)
    N, n = system.N, system.n
    for _ in range(MAX_REJECTIONS):
        if isinstance(spec.positions, BoxUniform):
            x = rng.uniform(-spec.positions.L, spec.positions.L, size=(N, n))
        else:
            x = rng.uniform(0.0, domain.period, size=(N, n))  # type: ignore[union-attr]
        if spec.contact_radius is None or diameter(x, domain) < spec.contact_radius:
            break
    else:
        raise InvalidConfig(f"No position sample with diameter below {spec.contact_radius} in {MAX_REJECTIONS} draws")

    if isinstance(spec.velocities, BallVelocities):
        v = _ball(rng, N, n, spec.velocities.V_max)
    else:
        v = spec.velocities.sigma * rng.standard_normal((N, n))

    state = make_state(x, v, system)
    if spec.galilean_center:
        state = galilean_project(state, system)
    return state


# ---------------------------------------------------------------------------
# Decay fits


class DecayFit(BaseModel):
    model_config = ConfigDict(frozen=True)

    exp_rate: float
    power_slope: float
    exp_residual: float
    power_residual: float
    samples: int
    clipped: bool


def fit_decay_rate(
    times: Sequence[float],
    values: Sequence[float],
    window: tuple[float, float] | None = None,
) -> DecayFit:
    """Least-squares slopes of log y against t and against log(1 + t) over the window."""
    t = np.asarray(times, dtype=np.float64)
    y = np.asarray(values, dtype=np.float64)
    if window is not None:
        mask = (t >= window[0]) & (t <= window[1])
        t, y = t[mask], y[mask]
    if t.size < 4:
        raise InvalidConfig(f"Decay fits need at least 4 samples in the window, got {t.size}")
    clipped = bool(np.any(y <= CLIP_FLOOR))
    log_y = np.log(np.maximum(y, CLIP_FLOOR))

    exp_coef, exp_res, *_ = np.polyfit(t, log_y, 1, full=True)
    pow_coef, pow_res, *_ = np.polyfit(np.log1p(t), log_y, 1, full=True)
    return DecayFit(
        exp_rate=float(exp_coef[0]),
        power_slope=float(pow_coef[0]),
        exp_residual=float(exp_res[0]) if exp_res.size else 0.0,
        power_residual=float(pow_res[0]) if pow_res.size else 0.0,
        samples=int(t.size),
        clipped=clipped,
    )


# ---------------------------------------------------------------------------
# Trials


class Thresholds(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    eps_a: float = Field(default=1e-3, gt=0.0)
    # None: 1e-3 times the initial alignment diameter, floored at 1e-8
    eps_v: float | None = Field(default=None, gt=0.0)
    relation_tol: float = Field(default=1e-9, gt=0.0)
    relation_bound: int = Field(default=100, ge=1)
    # acc_phi below this counts as a trial whose agents never interacted appreciably
    interaction_threshold: float = Field(default=1.0, ge=0.0)
    fit_from: float = Field(default=1.0, ge=0.0)

    def velocity_tolerance(self, initial_align_diam: float) -> float:
        if self.eps_v is not None:
            return self.eps_v
        return max(1e-3 * initial_align_diam, 1e-8)


class TrialSummary(BaseModel):
    model_config = ConfigDict(frozen=True)

    seed: int
    outcome: Literal["completed", "blowup"] = "completed"
    t_final: float
    V2_initial: float
    V2: float
    V1: float
    align_diam: float
    flock_diam: float
    aligned: bool
    min_velocity_gap: float
    pair_aligned: bool
    acc_phi: float
    acc_diss: float
    acc_I1: float
    census: ClusterCensus | None = None
    min_distance: float
    H_flag: bool
    interacting: bool
    align_fit: DecayFit | None = None
    well_gap: float | None = None
    eps_a: float
    eps_v: float


def _align_fit(record: TrajectoryRecord, thresholds: Thresholds) -> DecayFit | None:
    times, values = record.series("align_diam")
    try:
        return fit_decay_rate(times, values, (thresholds.fit_from, math.inf))
    except InvalidConfig:
        return None


def summarize_record(
    record: TrajectoryRecord,
    system: SystemSpec,
    seed: int,
    thresholds: Thresholds,
    outcome: Literal["completed", "blowup"] = "completed",
) -> TrialSummary:
    first = record.samples[0]
    final = record.final
    last = record.samples[-1]
    eps_v = thresholds.velocity_tolerance(first.align_diam)
    reach = system.kernel.support_radius
    gap = min_velocity_gap(final)

    census: ClusterCensus | None = None
    if outcome == "completed":
        census = cluster_census(final, system, eps_v, thresholds.relation_tol, thresholds.relation_bound)

    pair_gap: float | None = None
    if system.N == 2 and not isinstance(system.force, NoForce):
        pair_gap = well_gap(final, system)

    return TrialSummary(
        seed=seed,
        outcome=outcome,
        t_final=final.t,
        V2_initial=first.V2,
        V2=last.V2,
        V1=last.V1,
        align_diam=last.align_diam,
        flock_diam=last.flock_diam,
        aligned=last.V2 <= thresholds.eps_a * max(first.V2, 1.0),
        min_velocity_gap=gap,
        pair_aligned=gap <= thresholds.eps_a,
        acc_phi=final.acc_phi,
        acc_diss=final.acc_diss,
        acc_I1=final.acc_I1,
        census=census,
        min_distance=record.min_distance,
        H_flag=math.isfinite(reach) and record.min_distance >= reach,
        interacting=final.acc_phi >= thresholds.interaction_threshold,
        align_fit=_align_fit(record, thresholds),
        well_gap=pair_gap,
        eps_a=thresholds.eps_a,
        eps_v=eps_v,
    )


def run_trial(
    system: SystemSpec,
    spec: SampleSpec,
    params: IntegrationParams,
    thresholds: Thresholds | None = None,
) -> TrialSummary:
    """Sample, integrate and classify one trial; a blow-up becomes the trial's outcome."""
    thresholds = thresholds or Thresholds()
    s0 = sample_initial(spec, system)
    try:
        record = integrate(s0, system, params)
        outcome: Literal["completed", "blowup"] = "completed"
    except NumericalBlowup as exc:
        logger.warning("Trial with seed %d blew up at t=%g", spec.seed, exc.t)
        record = exc.record
        outcome = "blowup"
    summary = summarize_record(record, system, spec.seed, thresholds, outcome)
    logger.debug("Trial seed=%d aligned=%s H=%s acc_phi=%.6g", spec.seed, summary.aligned, summary.H_flag, summary.acc_phi)
    return summary


# ---------------------------------------------------------------------------
# Sweeps


class SweepAggregate(BaseModel):
    model_config = ConfigDict(frozen=True)

    trials: int
    master_seed: int
    completed: int
    blowups: int
    aligned: int
    aligned_fraction: float
    aligned_ci: tuple[float, float]
    pair_aligned_fraction: float
    cluster_histogram: dict[int, int]
    k_le_2n_fraction: float
    H_fraction: float
    unexplained_misaligned: int
    thresholds: Thresholds


class SweepReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    aggregate: SweepAggregate
    summaries: list[TrialSummary]


def wilson_interval(successes: int, trials: int, confidence: float = 0.95) -> tuple[float, float]:
    if trials <= 0:
        raise InvalidConfig("Wilson interval needs at least one trial")
    z = float(norm.ppf(0.5 + confidence / 2.0))
    p = successes / trials
    denom = 1.0 + z * z / trials
    center = (p + z * z / (2.0 * trials)) / denom
    half = z / denom * math.sqrt(p * (1.0 - p) / trials + z * z / (4.0 * trials * trials))
    return max(0.0, center - half), min(1.0, center + half)


def aggregate_trials(
    summaries: Sequence[TrialSummary],
    n: int,
    master_seed: int,
    thresholds: Thresholds,
) -> SweepAggregate:
    """Sequential fold of trial summaries into the sweep aggregate."""
    total = len(summaries)
    if total == 0:
        raise InvalidConfig("Cannot aggregate an empty sweep")
    aligned = sum(s.aligned for s in summaries)
    with_census = [s.census.K for s in summaries if s.census is not None]
    histogram = Counter(with_census)
    unexplained = sum(
        1 for s in summaries if not s.aligned and not s.H_flag and s.acc_phi >= thresholds.interaction_threshold
    )
    return SweepAggregate(
        trials=total,
        master_seed=master_seed,
        completed=sum(s.outcome == "completed" for s in summaries),
        blowups=sum(s.outcome == "blowup" for s in summaries),
        aligned=aligned,
        aligned_fraction=aligned / total,
        aligned_ci=wilson_interval(aligned, total),
        pair_aligned_fraction=sum(s.pair_aligned for s in summaries) / total,
        cluster_histogram=dict(sorted(histogram.items())),
        k_le_2n_fraction=(sum(k <= 2 * n for k in with_census) / len(with_census)) if with_census else 0.0,
        H_fraction=sum(s.H_flag for s in summaries) / total,
        unexplained_misaligned=unexplained,
        thresholds=thresholds,
    )


def _trial_job(job: tuple[SystemSpec, SampleSpec, IntegrationParams, Thresholds]) -> TrialSummary:
    return run_trial(*job)


def run_sweep(
    system: SystemSpec,
    spec: SampleSpec,
    params: IntegrationParams,
    trials: int,
    parallelism: int = 1,
    thresholds: Thresholds | None = None,
) -> SweepReport:
    """Run `trials` seeded trials; the template's seed is the master seed.

    Summaries come back in trial order whatever the parallelism.
    """
    if trials < 1:
        raise InvalidConfig(f"A sweep needs at least one trial, got {trials}")
    if parallelism < 1:
        raise InvalidConfig(f"Parallelism must be at least 1, got {parallelism}")
    thresholds = thresholds or Thresholds()
    master = spec.seed
    jobs = [
        (system, spec.model_copy(update={"seed": trial_seed(master, i)}), params, thresholds) for i in range(trials)
    ]
    logger.info("Sweep of %d trials (master seed %d, parallelism %d)", trials, master, parallelism)

    if parallelism == 1:
        summaries = [_trial_job(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            summaries = list(pool.map(_trial_job, jobs))

    aggregate = aggregate_trials(summaries, system.n, master, thresholds)
    logger.info("Sweep done: aligned %d/%d", aggregate.aligned, trials)
    return SweepReport(aggregate=aggregate, summaries=summaries)
