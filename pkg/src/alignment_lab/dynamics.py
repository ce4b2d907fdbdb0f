"""Right-hand sides of the torus, confinement and pairwise-interaction alignment systems."""

import dataclasses
import math
from typing import Annotated, Literal, NamedTuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .errors import InvalidState, Unsupported
from .geometry import Domain, FloatArray, OpenSpace, Torus, pairwise_displacements, wrap_position
from .model import AnyKernel, AnyPotential, KernelSpec, PotentialSpec, potential_grad


class NoForce(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["none"] = "none"


class Confinement(BaseModel):
    """External radial potential acting on each agent: -grad U(x_i)."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["confinement"] = "confinement"
    potential: PotentialSpec


class Pairwise(BaseModel):
    """Interaction potential between agents: -(1/N) sum_j grad U(x_i - x_j)."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["pairwise"] = "pairwise"
    potential: PotentialSpec


ForceSpec = Annotated[NoForce | Confinement | Pairwise, Field(discriminator="kind")]


class SystemSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    domain: Domain
    kernel: KernelSpec
    force: ForceSpec = Field(default_factory=NoForce)
    N: int = Field(ge=2)
    n: int = Field(ge=1)
    masses: tuple[float, ...] | None = None

    @model_validator(mode="after")
    def _check_consistency(self) -> "SystemSpec":
        if self.domain.n != self.n:
            raise ValueError(f"Domain dimension {self.domain.n} does not match n={self.n}")
        if not isinstance(self.force, NoForce) and not isinstance(self.domain, OpenSpace):
            raise ValueError(f"Force '{self.force.kind}' requires the open domain")
        if self.masses is not None:
            if len(self.masses) != self.N:
                raise ValueError(f"Expected {self.N} masses, got {len(self.masses)}")
            if any(m <= 0.0 or not math.isfinite(m) for m in self.masses):
                raise ValueError("Masses must be positive and finite")
        return self

    @property
    def potential(self) -> AnyPotential | None:
        return None if isinstance(self.force, NoForce) else self.force.potential

    @property
    def mass_vector(self) -> FloatArray:
        if self.masses is None:
            return np.ones(self.N)
        return np.asarray(self.masses, dtype=np.float64)


@dataclasses.dataclass(frozen=True, slots=True)
class EnsembleState:
    """Phase point (x, v) at time t together with the running quadratures.

    acc_phi = int sum_{i!=j} phi_ij, acc_diss = int sum phi_ij |v_i - v_j|^2, acc_I1 = int I_1.
    """

    t: float
    x: FloatArray
    v: FloatArray
    acc_phi: float = 0.0
    acc_diss: float = 0.0
    acc_I1: float = 0.0

    @property
    def N(self) -> int:
        return int(self.x.shape[0])

    @property
    def n(self) -> int:
        return int(self.x.shape[1])

    def replace(self, **changes: object) -> "EnsembleState":
        return dataclasses.replace(self, **changes)  # type: ignore[arg-type]


def make_state(
    x: object,
    v: object,
    system: SystemSpec,
    t: float = 0.0,
) -> EnsembleState:
    """Build a validated state, wrapping positions on the torus."""
    try:
        xa = np.asarray(x, dtype=np.float64)
        va = np.asarray(v, dtype=np.float64)
    except (TypeError, ValueError) as e:
        raise InvalidState(f"Malformed initial state: {e}") from e
    size = system.N * system.n
    if xa.size != size or va.size != size:
        raise InvalidState(
            f"Expected {size} entries for N={system.N}, n={system.n}, got x: {xa.size}, v: {va.size}",
        )
    xa = xa.reshape(system.N, system.n)
    va = va.reshape(system.N, system.n)
    if not np.all(np.isfinite(va)):
        raise InvalidState("Non-finite velocities")
    return EnsembleState(t=t, x=wrap_position(xa, system.domain), v=va.copy())


def check_state(state: EnsembleState, system: SystemSpec) -> None:
    if state.x.shape != (system.N, system.n) or state.v.shape != (system.N, system.n):
        raise InvalidState(
            f"State shapes {state.x.shape}/{state.v.shape} do not match N={system.N}, n={system.n}",
        )


class PairField(NamedTuple):
    """Pair quantities shared by the field and the diagnostics."""

    disp: FloatArray  # (N, N, n) minimal-image x_i - x_j
    dist: FloatArray  # (N, N)
    phi: FloatArray  # (N, N), zero on the diagonal
    vdiff: FloatArray  # (N, N, n) v_i - v_j
    vgap: FloatArray  # (N, N) |v_i - v_j|


def pair_field(state: EnsembleState, kernel: AnyKernel, domain: Torus | OpenSpace) -> PairField:
    disp = pairwise_displacements(state.x, domain)
    dist = np.sqrt(np.sum(disp**2, axis=-1))
    phi = kernel.value(dist)
    np.fill_diagonal(phi, 0.0)
    vdiff = state.v[:, None, :] - state.v[None, :, :]
    vgap = np.sqrt(np.sum(vdiff**2, axis=-1))
    return PairField(disp=disp, dist=dist, phi=phi, vdiff=vdiff, vgap=vgap)


class FieldValue(NamedTuple):
    dx: FloatArray
    dv: FloatArray
    dphi: float
    ddiss: float
    dI1: float


def rhs(state: EnsembleState, system: SystemSpec) -> FieldValue:
    """Ensemble field with the three quadrature rates appended."""
    check_state(state, system)
    N = system.N
    pf = pair_field(state, system.kernel, system.domain)

    # (1/N) sum_j phi_ij (v_j - v_i)
    dv = (pf.phi @ state.v - pf.phi.sum(axis=1)[:, None] * state.v) / N

    force = system.force
    if isinstance(force, Confinement):
        dv -= potential_grad(force.potential, state.x)
    elif isinstance(force, Pairwise):
        dv -= potential_grad(force.potential, pf.disp).sum(axis=1) / N

    gap_sq = pf.vgap**2
    return FieldValue(
        dx=state.v.copy(),
        dv=dv,
        dphi=float(pf.phi.sum()),
        ddiss=float(np.sum(pf.phi * gap_sq)),
        dI1=float(np.sum(pf.phi * pf.vgap)) / N,
    )


def divergence(state: EnsembleState, system: SystemSpec) -> float:
    """Divergence of the ensemble field, -(n/N) sum_{i!=j} phi_ij; potential forces contribute nothing."""
    check_state(state, system)
    pf = pair_field(state, system.kernel, system.domain)
    return -system.n / system.N * float(pf.phi.sum())


def conserved_means(state: EnsembleState, system: SystemSpec) -> tuple[FloatArray | None, FloatArray]:
    """Mean position (open space only) and mean velocity."""
    x_bar = state.x.mean(axis=0) if isinstance(system.domain, OpenSpace) else None
    return x_bar, state.v.mean(axis=0)


def galilean_project(state: EnsembleState, system: SystemSpec) -> EnsembleState:
    """Restrict to the null space x_bar = v_bar = 0; quadratures are kept."""
    if not isinstance(system.domain, OpenSpace):
        raise Unsupported("Means are not defined modulo the torus period; projection needs the open domain")
    return state.replace(
        x=state.x - state.x.mean(axis=0),
        v=state.v - state.v.mean(axis=0),
    )


def flatten(state: EnsembleState) -> FloatArray:
    """Phase point as a single vector (x_1, ..., x_N, v_1, ..., v_N)."""
    return np.concatenate([state.x.ravel(), state.v.ravel()])


def unflatten(z: FloatArray, template: EnsembleState) -> EnsembleState:
    size = template.x.size
    return template.replace(
        x=z[:size].reshape(template.x.shape).copy(),
        v=z[size:].reshape(template.v.shape).copy(),
    )
