"""Named systems with hand-built initial states."""

import math
from collections.abc import Callable
from typing import NamedTuple

from .dynamics import Confinement, EnsembleState, Pairwise, SystemSpec, make_state
from .errors import InvalidConfig
from .geometry import OpenSpace, Torus
from .model import IntervalWell, Plateau, QuadraticConfinement, QuadraticWell, SmoothBump


class Scenario(NamedTuple):
    system: SystemSpec
    state: EnsembleState
    description: str


def parallel_geodesics(r0: float = 0.5) -> Scenario:
    """Two agents on horizontal geodesics of T^2 half a period apart: they never meet."""
    system = SystemSpec(domain=Torus(n=2), kernel=SmoothBump(r0=r0), N=2, n=2)
    x = [[0.0, 0.0], [0.0, math.pi]]
    v = [[1.0, 0.0], [-math.sqrt(2.0), 0.0]]
    return Scenario(system, make_state(x, v, system), "free flight along parallel geodesics")


def circular_oscillators(radius: float = 1.0) -> Scenario:
    """Antipodal agents on one circular orbit of U = r^2/2; their distance stays 2R > r0 = R."""
    system = SystemSpec(
        domain=OpenSpace(n=2),
        kernel=SmoothBump(r0=radius),
        force=Confinement(potential=QuadraticConfinement()),
        N=2,
        n=2,
    )
    x = [[radius, 0.0], [-radius, 0.0]]
    v = [[0.0, radius], [0.0, -radius]]
    return Scenario(system, make_state(x, v, system), "decoupled circular oscillators")


def three_agent_confinement(far_radius: float = 5.0) -> Scenario:
    """A low-energy communicating pair near the origin and a far oscillator that never reaches it."""
    system = SystemSpec(
        domain=OpenSpace(n=2),
        kernel=Plateau(amp=1.0, r_flat=0.5, r0=1.0),
        force=Confinement(potential=QuadraticConfinement()),
        N=3,
        n=2,
    )
    x = [[0.1, 0.0], [-0.1, 0.0], [far_radius, 0.0]]
    v = [[0.0, 0.1], [0.0, -0.05], [0.0, far_radius]]
    return Scenario(system, make_state(x, v, system), "aligning pair plus a non-interacting far oscillator")


def quadratic_well_pair(ell0: float = 1.0) -> Scenario:
    system = SystemSpec(
        domain=OpenSpace(n=2),
        kernel=SmoothBump(r0=3.0),
        force=Pairwise(potential=QuadraticWell(ell0=ell0)),
        N=2,
        n=2,
    )
    x = [[0.0, 0.0], [2.0, 0.0]]
    v = [[0.3, 0.0], [-0.3, 0.2]]
    return Scenario(system, make_state(x, v, system), "attraction towards a well of radius ell0")


def three_zone_pair(ell0: float = 1.0, ell1: float = 2.0, r0: float = 3.0) -> Scenario:
    """Repulsion below ell0, a flat well on [ell0, ell1] and attraction beyond, with r0 > ell1."""
    system = SystemSpec(
        domain=OpenSpace(n=2),
        kernel=Plateau(amp=1.0, r_flat=ell0, r0=r0),
        force=Pairwise(potential=IntervalWell(ell0=ell0, ell1=ell1)),
        N=2,
        n=2,
    )
    x = [[0.0, 0.0], [2.5, 0.0]]
    v = [[0.2, 0.1], [-0.2, -0.1]]
    return Scenario(system, make_state(x, v, system), "3Zone pair with communication beyond the well")


SCENARIOS: dict[str, Callable[[], Scenario]] = {
    "parallel-geodesics": parallel_geodesics,
    "circular-oscillators": circular_oscillators,
    "three-agent-confinement": three_agent_confinement,
    "quadratic-well-pair": quadratic_well_pair,
    "three-zone-pair": three_zone_pair,
}


def get_scenario(name: str) -> Scenario:
    try:
        factory = SCENARIOS[name]
    except KeyError:
        raise InvalidConfig(f"Unknown scenario '{name}'; expected one of {', '.join(SCENARIOS)}") from None
    return factory()

