"""Fixed-step RK4 on the augmented state, trajectory recording and the finite-difference flow Jacobian."""

import dataclasses
import logging
import math

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .diagnostics import DiagnosticsSample, sample_diagnostics
from .dynamics import EnsembleState, FieldValue, SystemSpec, check_state, flatten, rhs, unflatten
from .errors import InvalidState, NumericalBlowup
from .geometry import Torus, min_pair_distance, wrap_position

logger = logging.getLogger(__name__)

MAX_JACOBIAN_SIZE = 16
MAX_CONDITION = 1e12


class IntegrationParams(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    h: float = Field(default=1e-3, gt=0.0)
    T: float = Field(ge=0.0)
    sample_every: int = Field(default=100, ge=1)
    wrap: bool = True

    @property
    def steps(self) -> int:
        """Number of RK4 steps; the step is shrunk so that the last one lands on T exactly."""
        if self.T == 0.0:
            return 0
        return max(1, math.ceil(self.T / self.h - 1e-9))


@dataclasses.dataclass(frozen=True, slots=True)
class TrajectoryRecord:
    params: IntegrationParams
    times: list[float]
    states: list[EnsembleState]
    samples: list[DiagnosticsSample]
    final: EnsembleState
    min_distance: float
    steps_done: int

    @property
    def acc_phi(self) -> float:
        return self.final.acc_phi

    @property
    def acc_diss(self) -> float:
        return self.final.acc_diss

    @property
    def acc_I1(self) -> float:
        return self.final.acc_I1

    def series(self, field: str) -> tuple[list[float], list[float]]:
        """(t, y) pairs of one sampled diagnostic, skipping samples where it is undefined."""
        ts: list[float] = []
        ys: list[float] = []
        for sample in self.samples:
            value = getattr(sample, field)
            if value is not None:
                ts.append(sample.t)
                ys.append(value)
        return ts, ys


def _stage(state: EnsembleState, system: SystemSpec) -> FieldValue:
    k = rhs(state, system)
    if not (np.all(np.isfinite(k.dv)) and math.isfinite(k.dphi + k.ddiss + k.dI1)):
        raise NumericalBlowup("Non-finite field inside an RK4 stage", state.t)
    return k


def _shifted(state: EnsembleState, k: FieldValue, a: float) -> EnsembleState:
    x = state.x + a * k.dx
    v = state.v + a * k.dv
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(v))):
        raise NumericalBlowup("Non-finite state inside an RK4 stage", state.t + a)
    return state.replace(t=state.t + a, x=x, v=v)


def step_rk4(state: EnsembleState, system: SystemSpec, h: float, wrap: bool = True) -> EnsembleState:
    """One classical RK4 step of (x, v, acc_phi, acc_diss, acc_I1); positions are wrapped afterwards on the torus."""
    if not h > 0.0:
        raise InvalidState(f"Step size must be positive, got {h}")
    with np.errstate(over="ignore", invalid="ignore"):
        k1 = _stage(state, system)
        k2 = _stage(_shifted(state, k1, h / 2), system)
        k3 = _stage(_shifted(state, k2, h / 2), system)
        k4 = _stage(_shifted(state, k3, h), system)
        w = h / 6.0
        x = state.x + w * (k1.dx + 2.0 * k2.dx + 2.0 * k3.dx + k4.dx)
        v = state.v + w * (k1.dv + 2.0 * k2.dv + 2.0 * k3.dv + k4.dv)

    acc_phi = state.acc_phi + w * (k1.dphi + 2.0 * k2.dphi + 2.0 * k3.dphi + k4.dphi)
    acc_diss = state.acc_diss + w * (k1.ddiss + 2.0 * k2.ddiss + 2.0 * k3.ddiss + k4.ddiss)
    acc_I1 = state.acc_I1 + w * (k1.dI1 + 2.0 * k2.dI1 + 2.0 * k3.dI1 + k4.dI1)

    t = state.t + h
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(v)) and math.isfinite(acc_phi + acc_diss + acc_I1)):
        raise NumericalBlowup("Non-finite state after RK4 step", t)
    if wrap and isinstance(system.domain, Torus):
        x = wrap_position(x, system.domain)
    return EnsembleState(t=t, x=x, v=v, acc_phi=acc_phi, acc_diss=acc_diss, acc_I1=acc_I1)


def integrate(
    s0: EnsembleState,
    system: SystemSpec,
    params: IntegrationParams,
    epsilon: float = 0.1,
) -> TrajectoryRecord:
    """Integrate over [t0, t0 + T], sampling every `sample_every` steps and at the last step.

    `epsilon` weights the cross term of the modified pair energy in the samples.
    """
    check_state(s0, system)
    steps = params.steps
    h = params.T / steps if steps else params.h
    logger.info("Integrating N=%d n=%d over T=%g with %d steps (h=%g)", system.N, system.n, params.T, steps, h)

    times = [s0.t]
    states = [s0]
    samples = [sample_diagnostics(s0, system, epsilon)]
    min_distance = min_pair_distance(s0.x, system.domain)

    state = s0
    for k in range(1, steps + 1):
        try:
            state = step_rk4(state, system, h, wrap=params.wrap)
        except NumericalBlowup as exc:
            logger.warning("Blow-up at t=%g after %d steps", exc.t, k - 1)
            partial = TrajectoryRecord(
                params=params,
                times=times,
                states=states,
                samples=samples,
                final=state,
                min_distance=min_distance,
                steps_done=k - 1,
            )
            raise NumericalBlowup("Integration blew up", exc.t, record=partial) from exc
        # pin the clock to the grid so the record does not depend on summation order
        state = state.replace(t=s0.t + (params.T if k == steps else k * h))
        min_distance = min(min_distance, min_pair_distance(state.x, system.domain))
        if k % params.sample_every == 0 or k == steps:
            times.append(state.t)
            states.append(state)
            samples.append(sample_diagnostics(state, system, epsilon))
            logger.debug("t=%.6g V2=%.6g acc_phi=%.6g", state.t, samples[-1].V2, state.acc_phi)

    return TrajectoryRecord(
        params=params,
        times=times,
        states=states,
        samples=samples,
        final=state,
        min_distance=min_distance,
        steps_done=steps,
    )


def propagate(state: EnsembleState, system: SystemSpec, t: float, h: float = 1e-3) -> EnsembleState:
    """Flow map S_t without recording and without wrapping, so positions stay continuous."""
    steps = max(1, math.ceil(t / h - 1e-9)) if t > 0.0 else 0
    for _ in range(steps):
        state = step_rk4(state, system, t / steps, wrap=False)
    return state


def flow_jacobian_fd(
    s0: EnsembleState,
    system: SystemSpec,
    t: float,
    delta: float = 1e-6,
    h: float = 1e-3,
) -> float:
    """Determinant of the central finite-difference Jacobian of S_t over all 2nN coordinates."""
    check_state(s0, system)
    size = 2 * system.n * system.N
    if size > MAX_JACOBIAN_SIZE:
        raise InvalidState(f"Flow Jacobian is limited to 2nN <= {MAX_JACOBIAN_SIZE}, got {size}")
    if not 1e-7 <= delta <= 1e-4:
        raise InvalidState(f"Difference step must lie in [1e-7, 1e-4], got {delta}")
    if t < 0.0:
        raise InvalidState(f"Flow time must be nonnegative, got {t}")

    z0 = flatten(s0)
    jac = np.empty((size, size))
    for k in range(size):
        dz = np.zeros(size)
        dz[k] = delta
        plus = flatten(propagate(unflatten(z0 + dz, s0), system, t, h))
        minus = flatten(propagate(unflatten(z0 - dz, s0), system, t, h))
        jac[:, k] = (plus - minus) / (2.0 * delta)

    condition = float(np.linalg.cond(jac))
    if not math.isfinite(condition) or condition > MAX_CONDITION:
        raise NumericalBlowup(f"Ill-conditioned flow Jacobian (cond={condition:.3g})", s0.t + t)
    det = float(np.linalg.det(jac))
    logger.debug("Flow Jacobian at t=%g: det=%.12g cond=%.3g", t, det, condition)
    return det


def predicted_jacobian(acc_phi: float, system: SystemSpec) -> float:
    """exp(-(n/N) int sum phi_ij), the volume factor of the flow."""
    return math.exp(-system.n / system.N * acc_phi)
