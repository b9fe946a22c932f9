import numpy as np
import pytest

from frfupdate import (FrequencyGrid, ParameterPoint, generate_chain_model,
                       synthesize_measurement)

TRUE_ALPHA = np.array([-0.6, -0.1, -0.3, -0.2, -0.2, -0.4])

# Desk-scale analog: 6-mass chain whose first two resonances (~189 and
# ~564 Hz) carry damping ratios comparable to the benchmark structure.
GOLDEN_STIFFNESS = 4e7
GOLDEN_STEP_FRACTION = 0.03


@pytest.fixture(scope="session")
def golden_model():
    return generate_chain_model(6, 6, mass_per_node=1.0,
                                stiffness_per_spring=GOLDEN_STIFFNESS,
                                damping_a=1e-2, damping_b=1e-4)


@pytest.fixture(scope="session")
def golden_theta():
    return ParameterPoint(alpha=TRUE_ALPHA, gamma=np.zeros(6))


@pytest.fixture(scope="session")
def golden_grid(golden_model, golden_theta):
    from frfupdate import apply_parameters, natural_frequencies
    sys = apply_parameters(golden_model, golden_theta)
    f12 = natural_frequencies(sys, 2)
    offsets = np.arange(-3, 3)
    pts = np.sort(np.concatenate(
        [fk * (1.0 + GOLDEN_STEP_FRACTION * offsets) for fk in f12]))
    return FrequencyGrid(freqs_hz=pts)


@pytest.fixture(scope="session")
def golden_measurement(golden_model, golden_theta, golden_grid):
    return synthesize_measurement(golden_model, golden_theta, golden_grid)
