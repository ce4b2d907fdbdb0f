import math

import numpy as np
import pytest

from alignment_lab.errors import InvalidConfig
from alignment_lab.integrator import IntegrationParams, integrate
from alignment_lab.model import validate_pair
from alignment_lab.scenarios import SCENARIOS, get_scenario, three_agent_confinement, three_zone_pair


@pytest.mark.parametrize("name", sorted(SCENARIOS))
def test_every_scenario_builds(name):
    """Tests that each named scenario builds a consistent system and state."""
    scenario = get_scenario(name)
    assert scenario.state.x.shape == (scenario.system.N, scenario.system.n)
    assert scenario.description


def test_unknown_scenario():
    with pytest.raises(InvalidConfig, match="parallel-geodesics"):
        get_scenario("lissajous")


def test_far_oscillator_stays_out_of_reach():
    """Tests that the far oscillator never enters the kernel support."""
    scenario = three_agent_confinement()
    record = integrate(scenario.state, scenario.system, IntegrationParams(h=1e-2, T=2.0 * math.pi, sample_every=1))
    for state in record.states:
        far = state.x[2]
        assert np.linalg.norm(far - state.x[0]) > 3.0
        assert np.linalg.norm(far - state.x[1]) > 3.0
    assert np.linalg.norm(record.final.v[2]) == pytest.approx(5.0, rel=1e-6)


def test_three_zone_scenario_is_a_valid_pair():
    scenario = three_zone_pair()
    report = validate_pair(scenario.system.kernel, scenario.system.force.potential, 6.0)
    assert report.ok
