import math

import numpy as np
import pytest
from pydantic import ValidationError

from alignment_lab.dynamics import SystemSpec, make_state
from alignment_lab.errors import Unsupported
from alignment_lab.geometry import Torus, minimal_image
from alignment_lab.harness import make_rng
from alignment_lab.model import SmoothBump
from alignment_lab.scenarios import parallel_geodesics
from alignment_lab.sticky import (
    ClusterSet,
    StickyEvent,
    StickyParams,
    advance,
    from_state,
    merge,
    min_intercluster_distance,
    next_event,
    replay,
    run_sticky,
)

from .helpers import SQRT2, open_system, torus_system

T1 = Torus(n=1)


def _line(x, v, masses=None, r0=0.5) -> ClusterSet:
    system = torus_system(N=len(x))
    state = make_state([[c] for c in x], [[c] for c in v], system)
    return from_state(state, T1, r0, None if masses is None else np.asarray(masses, dtype=np.float64))


def test_first_contact_time():
    """Tests the exact contact time of a moving and a resting agent."""
    event = next_event(_line([0.0, math.pi], [1.0, 0.0]), 100.0)
    assert event is not None
    assert event.time == pytest.approx(math.pi - 0.5, rel=1e-12)
    assert event.clusters == (0, 1)
    assert event.witnesses == ((0, 1),)


def test_first_contact_time_faster_agent():
    event = next_event(_line([0.0, math.pi], [SQRT2, 0.0]), 100.0)
    assert event is not None
    assert event.time == pytest.approx((math.pi - 0.5) / SQRT2, rel=1e-12)


def test_no_event_for_equal_velocities():
    assert next_event(_line([0.0, 2.0, 4.0], [0.3, 0.3, 0.3]), 1e6) is None


def test_no_event_before_horizon():
    assert next_event(_line([0.0, math.pi], [1.0, 0.0]), 2.0) is None


def test_contact_across_the_seam():
    """Tests a contact through the periodic boundary."""
    # the agents approach through the identification 2 pi ~ 0
    event = next_event(_line([1.0, 5.0], [-1.0, 0.0]), 10.0)
    assert event is not None
    gap = 1.0 + 2.0 * math.pi - 5.0
    assert event.time == pytest.approx(gap - 0.5, rel=1e-12)


def test_merge_unit_masses():
    system = SystemSpec(domain=Torus(n=2), kernel=SmoothBump(r0=0.5), N=2, n=2)
    state = make_state([[0.0, 0.0], [0.5, 0.0]], [[2.0, 0.0], [0.0, 0.0]], system)
    cs = from_state(state, system.domain, 0.4)
    merged = merge(cs, StickyEvent(time=0.0, clusters=(0, 1), witnesses=((0, 1),)))
    assert merged.K == 1
    assert merged.clusters[0].velocity == (1.0, 0.0)
    assert merged.clusters[0].mass == 2.0
    assert np.allclose(merged.positions(), state.x)


def test_merge_mass_weighted():
    """Tests that a merge takes the mass-weighted velocity."""
    cs = _line([0.0, 0.5], [4.0, 0.0], masses=[1.0, 3.0], r0=0.4)
    merged = merge(cs, StickyEvent(time=0.0, clusters=(0, 1), witnesses=((0, 1),)))
    assert merged.clusters[0].velocity == (1.0,)
    assert merged.clusters[0].mass == 4.0


def test_merge_triple():
    cs = _line([0.0, 0.5, 1.0], [3.0, 0.0, -3.0], r0=0.4)
    event = StickyEvent(time=0.0, clusters=(0, 1, 2), witnesses=((0, 1), (1, 2)))
    merged = merge(cs, event)
    assert merged.K == 1
    assert merged.clusters[0].velocity == (0.0,)
    assert merged.clusters[0].members == (0, 1, 2)


def test_merge_across_the_seam_keeps_positions():
    """Tests that merged offsets follow the contact, not the wrap."""
    cs = _line([0.1, 2.0 * math.pi - 0.4], [0.0, 1.0], r0=0.45)
    merged = merge(cs, StickyEvent(time=0.0, clusters=(0, 1), witnesses=((0, 1),)))
    assert np.allclose(merged.positions(), cs.positions())
    offsets = merged.clusters[0].offsets
    assert abs(offsets[1][0] - offsets[0][0]) == pytest.approx(0.5)


def test_pre_glued_cluster_has_no_events():
    system = torus_system(N=3, kernel=SmoothBump(r0=0.5))
    state = make_state([[0.0], [0.3], [6.2]], [[0.3], [0.6], [0.0]], system)
    record = run_sticky(state, system, StickyParams(t_max=50.0))
    assert record.initial.K == 1
    assert record.events == []
    assert record.final.clusters[0].velocity == pytest.approx((0.3,))


def test_single_event_on_the_circle():
    """Tests the single event of two agents on the circle."""
    system = torus_system(kernel=SmoothBump(r0=0.5))
    state = make_state([[0.0], [math.pi]], [[SQRT2], [0.0]], system)
    record = run_sticky(state, system, StickyParams(t_max=10.0))
    assert len(record.events) == 1
    assert record.events[0].time == pytest.approx((math.pi - 0.5) / SQRT2, rel=1e-12)
    assert record.final.K == 1
    assert record.final.clusters[0].velocity == pytest.approx((SQRT2 / 2.0,), rel=1e-15)
    assert record.final.t == 10.0
    assert record.cluster_counts() == [(0.0, 2), (record.events[0].time, 1)]


def test_parallel_geodesics_never_meet():
    scenario = parallel_geodesics()
    record = run_sticky(scenario.state, scenario.system, StickyParams(t_max=1e5))
    assert record.events == []
    assert record.final.K == 2
    assert min_intercluster_distance(record.final) >= 0.5


def test_sticky_needs_torus():
    system = open_system()
    state = make_state([[0.0], [1.0]], [[1.0], [0.0]], system)
    with pytest.raises(Unsupported):
        run_sticky(state, system, StickyParams(t_max=1.0))


def test_gluing_radius_below_half_period():
    with pytest.raises(ValidationError):
        _line([0.0, 3.0], [0.0, 1.0], r0=3.2)


def _random_run(seed: int, N: int = 4, t_max: float = 200.0):
    rng = make_rng(seed)
    system = torus_system(N=N, kernel=SmoothBump(r0=0.3))
    x = np.linspace(0.0, 2.0 * math.pi, N, endpoint=False)[:, None]
    v = rng.uniform(-1.0, 1.0, size=(N, 1))
    masses = rng.uniform(0.5, 2.0, size=N)
    system = system.model_copy(update={"masses": tuple(masses.tolist())})
    state = make_state(x, v, system)
    return run_sticky(state, system, StickyParams(t_max=t_max))


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_merges_conserve_momentum_and_dissipate_energy(seed):
    """Tests momentum conservation and kinetic energy loss at every merge."""
    record = _random_run(seed)
    cs = record.initial
    counts = [cs.K]
    for event in record.events:
        merged = merge(cs, event)
        assert merged.momentum() == pytest.approx(cs.momentum(), abs=1e-12)
        assert merged.total_mass == pytest.approx(cs.total_mass, abs=1e-12)
        assert merged.kinetic_energy() <= cs.kinetic_energy() + 1e-12
        assert merged.K == cs.K - (len(event.clusters) - 1)
        counts.append(merged.K)
        cs = merged
    assert counts == sorted(counts, reverse=True)
    times = [event.time for event in record.events]
    assert times == sorted(times)


@pytest.mark.parametrize("seed", [4, 5])
def test_replay_reproduces_final_state(seed):
    """Tests that replaying the event log gives the recorded final set."""
    record = _random_run(seed)
    assert replay(record) == record.final


def test_random_runs_end_in_one_cluster():
    """Tests that random runs on the circle end in one cluster."""
    finished = sum(_random_run(seed, N=3, t_max=1e4).final.K == 1 for seed in range(10))
    assert finished >= 9


def _closest_approach(cs: ClusterSet, until: float, step: float = 1e-4) -> float:
    """Smallest distance between agents of different clusters on a dense time grid over [cs.t, until]."""
    if cs.K < 2:
        return math.inf
    i, j = np.triu_indices(cs.N, k=1)
    labels = cs.labels()
    apart = labels[i] != labels[j]
    i, j = i[apart], j[apart]
    x, v = cs.positions(), cs.velocities()
    times = np.append(np.arange(cs.t, until, step), until) - cs.t
    delta = (x[i] - x[j])[None] + times[:, None, None] * (v[i] - v[j])[None]
    return float(np.linalg.norm(minimal_image(delta, cs.domain), axis=-1).min())


@pytest.mark.parametrize("n", [1, 2])
@pytest.mark.parametrize("seed", [11, 12, 13])
def test_dense_scan_finds_no_missed_contact(n, seed):
    """Tests that no two clusters ever come closer than r0 between the reported events."""
    N, r0, t_max = (5, 0.3, 30.0) if n == 1 else (6, 0.5, 12.0)
    rng = make_rng(seed)
    system = torus_system(N=N, n=n, kernel=SmoothBump(r0=r0))
    x = rng.uniform(0.0, 2.0 * math.pi, size=(N, n))
    v = rng.uniform(-1.0, 1.0, size=(N, n))
    record = run_sticky(make_state(x, v, system), system, StickyParams(t_max=t_max))
    if n == 1:
        assert record.events

    cs = record.initial
    for event in record.events:
        assert _closest_approach(cs, event.time) >= r0 - 1e-8
        cs = merge(cs, event)
    assert _closest_approach(cs, record.final.t) >= r0 - 1e-8


def test_dense_scan_on_fixture_runs():
    geodesics = parallel_geodesics()
    record = run_sticky(geodesics.state, geodesics.system, StickyParams(t_max=20.0))
    assert not record.events
    assert _closest_approach(record.initial, 20.0) == pytest.approx(math.pi)

    system = torus_system(kernel=SmoothBump(r0=0.5))
    record = run_sticky(make_state([[0.0], [math.pi]], [[SQRT2], [0.0]], system), system, StickyParams(t_max=10.0))
    (event,) = record.events
    assert _closest_approach(record.initial, event.time) == pytest.approx(0.5, abs=1e-9)


def test_advance_is_free_flight():
    cs = _line([0.0, math.pi], [1.0, 0.0])
    moved = advance(cs, 1.0)
    assert moved.positions()[:, 0].tolist() == pytest.approx([1.0, math.pi])
    assert advance(cs, 0.0) is cs
