import math

import numpy as np
import pytest

from alignment_lab.diagnostics import (
    agent_energies,
    alignment_diameter,
    chi_bound,
    cluster_census,
    dissipation_rate,
    displayed_energy_rate,
    energy_dissipation_rate,
    i1,
    min_velocity_gap,
    one_variation,
    optimal_epsilon,
    pair_functionals,
    quadratic_variation,
    sample_diagnostics,
    total_energy,
    velocity_groups,
    well_gap,
)
from alignment_lab.dynamics import EnsembleState, SystemSpec, make_state
from alignment_lab.errors import Unsupported
from alignment_lab.integrator import IntegrationParams, integrate, propagate
from alignment_lab.model import (
    Constant,
    IntervalWell,
    Plateau,
    QuadraticConfinement,
    QuadraticWell,
    SmoothBump,
    ZeroKernel,
)

from .helpers import SQRT2, open_system, random_state, torus_system


def _central_rate(state: EnsembleState, system: SystemSpec, functional, h: float = 1e-4) -> tuple[float, EnsembleState]:
    """Central difference of a functional around t + h, and the state at t + h."""
    mid = propagate(state, system, h, h=h)
    end = propagate(state, system, 2.0 * h, h=h)
    return (functional(end) - functional(state)) / (2.0 * h), mid


def test_variations_of_opposite_pair():
    system = open_system(kernel=Constant(amp=1.0))
    state = make_state([[0.0], [0.3]], [[1.0], [-1.0]], system)
    assert quadratic_variation(state) == 8.0
    assert one_variation(state) == 4.0
    assert i1(state, system) == 2.0
    assert dissipation_rate(state, system) == -16.0
    assert alignment_diameter(state) == 2.0
    assert min_velocity_gap(state) == 2.0


def test_dissipation_rate_matches_flow():
    """Tests dV2/dt against a central difference along the flow."""
    system = open_system(kernel=Constant(amp=1.0))
    state = make_state([[0.0], [0.3]], [[1.0], [-1.0]], system)
    rate, mid = _central_rate(state, system, quadratic_variation)
    assert rate == pytest.approx(dissipation_rate(mid, system), abs=1e-6)


def test_aligned_state_is_stationary():
    """Tests that equal velocities stay equal and dissipate nothing."""
    system = torus_system(N=3, kernel=SmoothBump(r0=2.0))
    state = make_state([[0.0], [0.5], [1.0]], [[0.7], [0.7], [0.7]], system)
    assert quadratic_variation(state) == 0.0
    assert one_variation(state) == 0.0
    assert i1(state, system) == 0.0
    assert dissipation_rate(state, system) == 0.0


def test_quadratic_variation_identity():
    system = open_system(N=5, n=3)
    for seed in range(5):
        state = random_state(system, seed=seed)
        centered = state.v - state.v.mean(axis=0)
        expected = 2.0 * system.N * float(np.sum(centered**2))
        assert quadratic_variation(state) == pytest.approx(expected, rel=1e-10)


def test_torus_variation_rate_along_flow():
    """Tests the V2 rate on the torus, where distances use the minimal image."""
    system = torus_system(N=4, n=2, kernel=SmoothBump(r0=2.5))
    state = random_state(system, seed=7)
    rate, mid = _central_rate(state, system, quadratic_variation)
    exact = dissipation_rate(mid, system)
    assert abs(rate - exact) <= 1e-6 + 1e-4 * abs(exact)
    assert exact <= 0.0


def test_total_energy_confinement():
    system = open_system(confinement=QuadraticConfinement())
    state = make_state([[1.0], [-1.0]], [[2.0], [0.0]], system)
    energy = total_energy(state, system)
    assert energy.K == 1.0
    assert energy.P == 0.5
    assert energy.E == 1.5


def test_total_energy_at_rest_in_well():
    confined = open_system(N=3, n=2, confinement=QuadraticConfinement())
    assert total_energy(make_state(np.zeros((3, 2)), np.zeros((3, 2)), confined), confined).E == 0.0
    pairwise = open_system(pairwise=QuadraticConfinement())
    together = make_state([[0.5], [0.5]], [[1.0], [1.0]], pairwise)
    assert total_energy(together, pairwise).P == 0.0


def test_total_energy_needs_force():
    """Tests that energies are undefined without a force."""
    system = open_system()
    with pytest.raises(Unsupported):
        total_energy(make_state([[0.0], [1.0]], [[0.0], [0.0]], system), system)
    torus = torus_system()
    with pytest.raises(Unsupported):
        total_energy(make_state([[0.0], [1.0]], [[0.0], [0.0]], torus), torus)


@pytest.mark.parametrize(
    "system",
    [
        open_system(N=3, n=2, kernel=SmoothBump(r0=2.0), confinement=QuadraticConfinement()),
        open_system(N=3, n=2, kernel=SmoothBump(r0=3.0), pairwise=IntervalWell(ell0=0.5, ell1=1.0)),
    ],
)
def test_energy_rate_along_flow(system):
    """Tests dE/dt against the exact dissipation for both force modes."""
    state = random_state(system, seed=11, spread=0.8)
    rate, mid = _central_rate(state, system, lambda s: total_energy(s, system).E)
    exact = energy_dissipation_rate(mid, system)
    assert abs(rate - exact) <= 1e-6 + 1e-4 * abs(exact)
    assert displayed_energy_rate(mid, system) == pytest.approx(2.0 * exact)


def test_agent_energies():
    system = open_system(n=2, confinement=QuadraticConfinement())
    state = make_state([[1.0, 0.0], [0.0, 2.0]], [[0.0, 1.0], [3.0, 0.0]], system)
    assert agent_energies(state, system).tolist() == [1.0, 6.5]
    with pytest.raises(Unsupported):
        agent_energies(state, open_system(n=2, pairwise=QuadraticConfinement()))


def test_pair_functionals_examples():
    system = open_system(n=2, kernel=Constant(amp=1.0), confinement=QuadraticConfinement())
    still = make_state([[0.4, 0.1], [0.4, 0.1]], [[1.0, 2.0], [1.0, 2.0]], system)
    values = pair_functionals(still, system, 0.1)
    assert (values.chi, values.modified_energy, values.pair_energy) == (0.0, 0.0, 0.0)

    orthogonal = make_state([[1.0, 0.0], [0.0, 0.0]], [[0.0, 1.0], [0.0, 0.0]], system)
    assert pair_functionals(orthogonal, system, 0.1).chi == 0.0

    parallel = make_state([[1.0, 0.0], [0.0, 0.0]], [[1.0, 0.0], [0.0, 0.0]], system)
    values = pair_functionals(parallel, system, 0.1)
    assert values.pair_energy == 2.0
    assert values.chi == 1.0
    assert values.modified_energy == pytest.approx(2.1)


def test_pair_energy_law_for_confinement_pair():
    """Tests d/dt (|v12|^2 + |x12|^2) = -2 phi |v12|^2 for a confined pair."""
    system = open_system(n=2, kernel=SmoothBump(r0=1.0), confinement=QuadraticConfinement())
    state = make_state([[0.2, 0.0], [-0.2, 0.0]], [[0.0, 0.3], [0.1, -0.2]], system)
    rate, mid = _central_rate(state, system, lambda s: pair_functionals(s, system, 0.0).pair_energy)
    x12 = mid.x[0] - mid.x[1]
    v12 = mid.v[0] - mid.v[1]
    phi12 = float(system.kernel.value(np.array(np.linalg.norm(x12))))
    assert rate == pytest.approx(-2.0 * phi12 * float(v12 @ v12), abs=1e-6)


@pytest.mark.parametrize(
    ("kernel", "potential", "separation"),
    [
        (SmoothBump(r0=3.0), IntervalWell(ell0=1.0, ell1=2.0), 0.6),
        (SmoothBump(r0=3.0), IntervalWell(ell0=1.0, ell1=2.0), 1.5),
        (SmoothBump(r0=3.0), IntervalWell(ell0=1.0, ell1=2.0), 2.6),
        (Plateau(amp=1.0, r_flat=1.0, r0=3.0), IntervalWell(ell0=1.0, ell1=2.0), 2.4),
        (Plateau(amp=1.0, r_flat=1.0, r0=3.0), QuadraticWell(ell0=1.0), 1.8),
        (SmoothBump(r0=3.0), QuadraticWell(ell0=1.0, delta=0.5), 1.2),
    ],
)
def test_pair_energy_law_for_interaction_pair(kernel, potential, separation):
    """Tests d/dt (|v12|^2 + 2 U(|x12|)) = -2 phi |v12|^2 away from the kinks of U and phi."""
    system = open_system(n=2, kernel=kernel, pairwise=potential)
    state = make_state([[0.0, 0.0], [separation, 0.0]], [[0.0, 0.3], [0.1, -0.2]], system)
    rate, mid = _central_rate(state, system, lambda s: pair_functionals(s, system, 0.0).pair_energy)
    x12 = mid.x[0] - mid.x[1]
    v12 = mid.v[0] - mid.v[1]
    phi12 = float(kernel.value(np.array(np.linalg.norm(x12))))
    assert phi12 > 0.0
    assert rate == pytest.approx(-2.0 * phi12 * float(v12 @ v12), abs=1e-6)


def test_modified_energy_stays_within_the_cross_term_bound():
    """Tests |E_mod - E_pair| <= eps * sup(phi) * flock diameter * alignment diameter at every sample."""
    epsilon = 0.1
    system = open_system(n=2, kernel=SmoothBump(r0=1.0), confinement=QuadraticConfinement())
    state = make_state([[0.3, 0.0], [-0.2, 0.1]], [[0.0, 0.4], [0.2, -0.3]], system)
    record = integrate(state, system, IntegrationParams(h=1e-2, T=5.0, sample_every=5), epsilon)
    assert any(sample.chi != 0.0 for sample in record.samples)
    for sample in record.samples:
        bound = epsilon * chi_bound(system, sample.flock_diam, sample.align_diam)
        assert abs(sample.mod_energy - sample.pair_energy) <= bound + 1e-12


def test_pair_functionals_need_two_agents():
    system = open_system(N=3, confinement=QuadraticConfinement())
    state = make_state([[0.0], [1.0], [2.0]], [[0.0], [0.0], [0.0]], system)
    with pytest.raises(Unsupported):
        pair_functionals(state, system, 0.1)


def test_optimal_epsilon():
    """Tests the schedule eps(t) = min(eps0, 1/(c t))."""
    assert optimal_epsilon(0.0, 2.0, 0.1) == 0.1
    assert optimal_epsilon(1.0, 2.0, 0.1) == 0.1
    assert optimal_epsilon(100.0, 2.0, 0.1) == pytest.approx(0.005)


def test_well_gap():
    system = open_system(n=2, pairwise=QuadraticWell(ell0=1.0))
    inside = make_state([[0.0, 0.0], [0.5, 0.0]], [[0.0, 0.0], [0.0, 0.0]], system)
    assert well_gap(inside, system) == 0.0
    outside = make_state([[0.0, 0.0], [3.0, 0.0]], [[0.0, 0.0], [0.0, 2.0]], system)
    assert well_gap(outside, system) == pytest.approx(4.0)

    confined = open_system(n=2, confinement=QuadraticConfinement())
    state = make_state([[0.0, 0.0], [3.0, 4.0]], [[0.0, 0.0], [0.0, 0.0]], confined)
    assert well_gap(state, confined) == pytest.approx(5.0)


def test_chi_bound():
    """Tests the arithmetic of the cross-term bound."""
    system = open_system(kernel=Constant(amp=3.0), confinement=QuadraticConfinement())
    assert chi_bound(system, 2.0, 0.5) == 3.0


def test_sample_diagnostics_columns():
    torus = torus_system(kernel=SmoothBump(r0=0.5))
    sample = sample_diagnostics(make_state([[0.0], [1.0]], [[1.0], [0.0]], torus), torus)
    assert sample.E is None
    assert sample.chi is None
    assert sample.V2 == 2.0
    assert sample.flock_diam == 1.0

    pair = open_system(kernel=Constant(), confinement=QuadraticConfinement())
    sample = sample_diagnostics(make_state([[1.0], [-1.0]], [[2.0], [0.0]], pair), pair)
    assert sample.E == 1.5
    assert sample.chi is not None
    assert sample.pair_energy is not None


def test_velocity_groups_threshold():
    """Tests that the group threshold splits velocities at eps_v."""
    eps = 1e-3
    v = np.array([[0.0], [eps / 2.0], [1.0]])
    assert velocity_groups(v, eps) == [[0, 1], [2]]
    assert velocity_groups(np.zeros((4, 2)), eps) == [[0, 1, 2, 3]]


def test_cluster_census_single_group():
    system = torus_system(N=3, kernel=SmoothBump(r0=0.5))
    state = make_state([[0.0], [2.0], [4.0]], [[0.3], [0.3], [0.3]], system)
    census = cluster_census(state, system, 1e-6)
    assert census.K == 1
    assert census.separation_ok
    assert census.min_separation is None
    assert census.relations == []


def test_cluster_census_two_groups():
    """Tests a census with two well-separated velocity groups."""
    eps = 1e-3
    system = torus_system(N=3, kernel=SmoothBump(r0=0.5))
    state = make_state([[0.0], [0.2], [3.0]], [[0.0], [eps / 2.0], [1.0]], system)
    census = cluster_census(state, system, eps)
    assert census.K == 2
    assert census.groups == [[0, 1], [2]]
    assert census.separation_ok
    assert census.min_separation == pytest.approx(2.8)
    assert len(census.relations) == 1
    assert census.certificates == {}


def test_cluster_census_attaches_planted_certificate():
    system = torus_system(N=2, n=2, kernel=SmoothBump(r0=0.5))
    state = make_state([[0.0, 0.0], [3.0, 3.0]], [[0.0, 0.0], [SQRT2, SQRT2]], system)
    census = cluster_census(state, system, 1e-6, tol=1e-9, bound=10)
    assert census.K == 2
    assert census.certificates == {(0, 1): [1, -1]}


def test_cluster_census_flags_close_groups():
    """Tests that groups closer than r0 are flagged."""
    system = torus_system(N=2, kernel=SmoothBump(r0=0.5))
    state = make_state([[0.0], [0.1]], [[0.0], [math.pi]], system)
    census = cluster_census(state, system, 1e-6)
    assert not census.separation_ok


def test_energy_needs_interaction():
    system = open_system(kernel=ZeroKernel(), confinement=QuadraticConfinement())
    state = make_state([[1.0], [0.0]], [[0.0], [1.0]], system)
    assert energy_dissipation_rate(state, system) == 0.0
