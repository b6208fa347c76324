import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

import oracles  # noqa: E402
from wptdecrypt import swcap  # noqa: E402
from wptdecrypt.harness import runner  # noqa: E402
from wptdecrypt.harness.scenario import load_scenario  # noqa: E402

# switch-on times as fractions of half the nominal period
RESONANCE_FREQUENCIES = (79e3, 120e3, 161e3)
RESONANCE_FRACTIONS = tuple(np.linspace(0.05, 0.95, 10))


def closed_form_resonance(t_on):
    """Resonance predicted by the package's equivalent capacitance for a fixed t_on."""

    def cap(a, c1, c2):
        f = a / (np.pi * t_on) if t_on > 0 else 1.0
        return swcap.equivalent_capacitance(f, min(t_on, 0.5 / f), c1, c2)

    return oracles.fixed_point_resonance(t_on, capacitance=cap)


def _point(f0, frac):
    t_on = frac * 0.5 / f0
    return {
        "f0": f0,
        "frac": frac,
        "t_on": t_on,
        "closed_form": closed_form_resonance(t_on),
        "simulated": oracles.simulated_resonance(t_on),
        "piecewise": oracles.piecewise_resonance(t_on),
        "describing": oracles.fixed_point_resonance(
            t_on, capacitance=oracles.describing_capacitance),
    }


@pytest.fixture(scope="session")
def resonance_grid():
    return [_point(f0, frac) for f0 in RESONANCE_FREQUENCIES for frac in RESONANCE_FRACTIONS]


@pytest.fixture(scope="session")
def table2_sweep():
    """Nine-point sweep of the experiment scenario across the hacking band."""
    return runner.sweep_frequency(load_scenario("table2"), np.linspace(79e3, 161e3, 9))
