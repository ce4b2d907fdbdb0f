"""Scalar laws and functionals of the alignment systems, and the velocity cluster census."""

import math

import numpy as np
from pydantic import BaseModel, ConfigDict
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .dynamics import Confinement, EnsembleState, NoForce, Pairwise, SystemSpec, pair_field
from .errors import Unsupported
from .geometry import FloatArray, OpenSpace, diameter, pairwise_distances
from .model import kernel_peak, potential_grad, potential_well
from .relations import RelationFound, RelationQuery, RelationResult, integer_relation


class EnergyBreakdown(BaseModel):
    model_config = ConfigDict(frozen=True)

    E: float
    K: float
    P: float
    P_displayed: float


class PairFunctionals(BaseModel):
    model_config = ConfigDict(frozen=True)

    chi: float
    modified_energy: float
    pair_energy: float


class DiagnosticsSample(BaseModel):
    """One row of the trajectory time series."""

    model_config = ConfigDict(frozen=True)

    t: float
    V2: float
    V1: float
    I1: float
    diss_rate: float
    E: float | None = None
    K: float | None = None
    P: float | None = None
    align_diam: float
    flock_diam: float
    acc_phi: float
    acc_diss: float
    acc_I1: float
    chi: float | None = None
    mod_energy: float | None = None
    pair_energy: float | None = None


# ---------------------------------------------------------------------------
# Variations and dissipation


def _velocity_gaps(state: EnsembleState) -> FloatArray:
    vdiff = state.v[:, None, :] - state.v[None, :, :]
    return np.sqrt(np.sum(vdiff**2, axis=-1))


def quadratic_variation(state: EnsembleState) -> float:
    """V2 = sum over ordered pairs of |v_i - v_j|^2."""
    return float(np.sum(_velocity_gaps(state) ** 2))


def one_variation(state: EnsembleState) -> float:
    return float(np.sum(_velocity_gaps(state)))


def i1(state: EnsembleState, system: SystemSpec) -> float:
    pf = pair_field(state, system.kernel, system.domain)
    return float(np.sum(pf.phi * pf.vgap)) / system.N


def _weighted_dissipation(state: EnsembleState, system: SystemSpec) -> float:
    pf = pair_field(state, system.kernel, system.domain)
    return float(np.sum(pf.phi * pf.vgap**2))


def dissipation_rate(state: EnsembleState, system: SystemSpec) -> float:
    """dV2/dt = -2 sum phi_ij |v_i - v_j|^2."""
    return -2.0 * _weighted_dissipation(state, system)


def energy_dissipation_rate(state: EnsembleState, system: SystemSpec) -> float:
    """dE/dt obtained by differentiating E along the flow."""
    return -_weighted_dissipation(state, system) / (2.0 * system.N**2)


def displayed_energy_rate(state: EnsembleState, system: SystemSpec) -> float:
    """The -(1/N^2) normalisation of the energy law, kept for comparison with the derived one."""
    return -_weighted_dissipation(state, system) / system.N**2


def alignment_diameter(state: EnsembleState) -> float:
    return float(_velocity_gaps(state).max())


def min_velocity_gap(state: EnsembleState) -> float:
    gaps = _velocity_gaps(state)
    upper = np.triu_indices(state.N, k=1)
    return float(gaps[upper].min())


# ---------------------------------------------------------------------------
# Energies


def total_energy(state: EnsembleState, system: SystemSpec) -> EnergyBreakdown:
    """Kinetic + potential energy for the confinement and interaction systems.

    The interaction potential energy counts each unordered pair once, P = (1/(2N^2)) sum_ij U(x_ij),
    which is the normalisation under which dE/dt equals `energy_dissipation_rate`.
    """
    force = system.force
    if isinstance(force, NoForce) or not isinstance(system.domain, OpenSpace):
        raise Unsupported("Total energy is defined for the confinement and interaction systems on open space")
    N = system.N
    kinetic = float(np.sum(state.v**2)) / (2.0 * N)
    if isinstance(force, Confinement):
        radii = np.linalg.norm(state.x, axis=1)
        potential = float(np.sum(force.potential.value(radii))) / N
        displayed = potential
    else:
        pair_sum = float(np.sum(force.potential.value(pairwise_distances(state.x, system.domain))))
        potential = pair_sum / (2.0 * N**2)
        displayed = pair_sum / N**2
    return EnergyBreakdown(E=kinetic + potential, K=kinetic, P=potential, P_displayed=displayed)


def agent_energies(state: EnsembleState, system: SystemSpec) -> FloatArray:
    """Per-agent Hamiltonians |v_i|^2/2 + U(x_i) of the confinement system."""
    if not isinstance(system.force, Confinement):
        raise Unsupported("Per-agent energies are defined for the confinement system only")
    radii = np.linalg.norm(state.x, axis=1)
    return 0.5 * np.sum(state.v**2, axis=1) + system.force.potential.value(radii)


def pair_functionals(state: EnsembleState, system: SystemSpec, epsilon: float) -> PairFunctionals:
    """Two-agent energy, the communication-weighted cross term chi, and the modified energy."""
    if system.N != 2:
        raise Unsupported(f"Pair functionals need N=2, got N={system.N}")
    force = system.force
    if isinstance(force, NoForce):
        raise Unsupported("Pair functionals need a confinement or interaction force")
    x12 = state.x[0] - state.x[1]
    v12 = state.v[0] - state.v[1]
    phi12 = float(system.kernel.value(np.array(np.linalg.norm(x12))))
    if isinstance(force, Confinement):
        pair_energy = float(v12 @ v12 + x12 @ x12)
        chi = phi12 * float(x12 @ v12)
    else:
        u12 = float(force.potential.value(np.array(np.linalg.norm(x12))))
        pair_energy = float(v12 @ v12) + 2.0 * u12
        chi = phi12 * float(potential_grad(force.potential, x12) @ v12)
    return PairFunctionals(chi=chi, modified_energy=pair_energy + epsilon * chi, pair_energy=pair_energy)


def optimal_epsilon(t: float, c: float, epsilon0: float) -> float:
    """Time-dependent weight eps(t) = min(eps0, 1/(c t)) of the cross term."""
    if t <= 0.0:
        return epsilon0
    return min(epsilon0, 1.0 / (c * t))


def well_gap(state: EnsembleState, system: SystemSpec) -> float:
    """dist(|x_12|, W) + |v_12| with W the zero set of the potential (the origin under confinement)."""
    if system.N != 2:
        raise Unsupported(f"Well gap needs N=2, got N={system.N}")
    potential = system.potential
    if potential is None:
        raise Unsupported("Well gap needs a potential")
    lo, hi = potential_well(potential) if isinstance(system.force, Pairwise) else (0.0, 0.0)
    separation = float(np.linalg.norm(state.x[0] - state.x[1]))
    outside = max(lo - separation, separation - hi, 0.0)
    return outside + float(np.linalg.norm(state.v[0] - state.v[1]))


def sample_diagnostics(state: EnsembleState, system: SystemSpec, epsilon: float = 0.1) -> DiagnosticsSample:
    pf = pair_field(state, system.kernel, system.domain)
    weighted = float(np.sum(pf.phi * pf.vgap**2))
    energy: EnergyBreakdown | None = None
    pair: PairFunctionals | None = None
    if not isinstance(system.force, NoForce):
        energy = total_energy(state, system)
        if system.N == 2:
            pair = pair_functionals(state, system, epsilon)
    return DiagnosticsSample(
        t=state.t,
        V2=float(np.sum(pf.vgap**2)),
        V1=float(np.sum(pf.vgap)),
        I1=float(np.sum(pf.phi * pf.vgap)) / system.N,
        diss_rate=-2.0 * weighted,
        E=energy.E if energy else None,
        K=energy.K if energy else None,
        P=energy.P if energy else None,
        align_diam=float(pf.vgap.max()),
        flock_diam=float(pf.dist.max()),
        acc_phi=state.acc_phi,
        acc_diss=state.acc_diss,
        acc_I1=state.acc_I1,
        chi=pair.chi if pair else None,
        mod_energy=pair.modified_energy if pair else None,
        pair_energy=pair.pair_energy if pair else None,
    )


def chi_bound(system: SystemSpec, flock_diam: float, align_diam: float) -> float:
    """sup phi * diameter * alignment diameter: bounds |chi| along a run for the confinement pair."""
    return kernel_peak(system.kernel) * flock_diam * align_diam


# ---------------------------------------------------------------------------
# Cluster census


class GroupRelation(BaseModel):
    model_config = ConfigDict(frozen=True)

    groups: tuple[int, int]
    velocity_gap: list[float]
    result: RelationResult


class ClusterCensus(BaseModel):
    model_config = ConfigDict(frozen=True)

    groups: list[list[int]]
    K: int
    eps_v: float
    separation_ok: bool
    min_separation: float | None
    relations: list[GroupRelation]

    @property
    def certificates(self) -> dict[tuple[int, int], list[int]]:
        """Group pairs whose velocity difference carries a detected integer relation."""
        return {rel.groups: rel.result.q for rel in self.relations if isinstance(rel.result, RelationFound)}


def velocity_groups(v: FloatArray, eps_v: float) -> list[list[int]]:
    """Transitive closure of |v_i - v_j| <= eps_v, groups ordered by their smallest member."""
    gaps = np.sqrt(np.sum((v[:, None, :] - v[None, :, :]) ** 2, axis=-1))
    _, labels = connected_components(csr_matrix((gaps <= eps_v).astype(np.int8)), directed=False)
    order: dict[int, list[int]] = {}
    for agent, label in enumerate(labels.tolist()):
        order.setdefault(label, []).append(agent)
    return list(order.values())


def cluster_census(
    state: EnsembleState,
    system: SystemSpec,
    eps_v: float,
    tol: float = 1e-9,
    bound: int = 100,
) -> ClusterCensus:
    groups = velocity_groups(state.v, eps_v)
    labels = np.empty(state.N, dtype=np.int64)
    for k, members in enumerate(groups):
        labels[members] = k

    min_separation: float | None = None
    if len(groups) > 1:
        dist = pairwise_distances(state.x, system.domain)
        across = labels[:, None] != labels[None, :]
        min_separation = float(dist[across].min())
    reach = system.kernel.support_radius
    separation_ok = min_separation is None or (math.isfinite(reach) and min_separation >= reach)

    means = [state.v[members].mean(axis=0) for members in groups]
    relations: list[GroupRelation] = []
    for k in range(len(groups)):
        for ell in range(k + 1, len(groups)):
            gap = means[k] - means[ell]
            result = integer_relation(RelationQuery(v=gap.tolist(), tol=tol, bound=bound))
            relations.append(GroupRelation(groups=(k, ell), velocity_gap=gap.tolist(), result=result))

    return ClusterCensus(
        groups=groups,
        K=len(groups),
        eps_v=eps_v,
        separation_ok=separation_ok,
        min_separation=min_separation,
        relations=relations,
    )


def flock_diameter(state: EnsembleState, system: SystemSpec) -> float:
    return diameter(state.x, system.domain)
