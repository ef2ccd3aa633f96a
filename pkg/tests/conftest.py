import numpy as np
import pytest

from vibench import scenario as vbscenario


@pytest.fixture(scope="session")
def shaw():
    return vbscenario.load_scenario("shaw-beam")


@pytest.fixture(scope="session")
def shaw_linear():
    """shaw-beam with the cubic spring removed."""
    import copy

    raw = copy.deepcopy(vbscenario.load_scenario("shaw-beam").raw)
    raw["plant"]["cubic_spring"]["stiffness_N_per_m3"] = 0.0
    return vbscenario.Scenario(raw)


def scenario_variant(base, **edits):
    """Deep-copied scenario with dotted-path edits, e.g.
    ``scenario_variant(s, **{"control.harmonics": [2, 3]})``."""
    import copy

    raw = copy.deepcopy(base.raw)
    for path, value in edits.items():
        node = raw
        keys = path.split(".")
        for k in keys[:-1]:
            node = node.setdefault(k, {})
        node[keys[-1]] = value
    return vbscenario.Scenario(raw)
