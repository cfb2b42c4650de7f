import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_coeffs(rng, K, decay=1.5):
    """Hermitian coefficient array with power-law decay."""
    r = np.arange(-K, K + 1)
    n1, n2 = np.meshgrid(r, r, indexing="ij")
    w = (1.0 + n1 ** 2 + n2 ** 2) ** (-decay / 2)
    z = (rng.standard_normal(n1.shape) + 1j * rng.standard_normal(n1.shape)) * w
    return 0.5 * (z + np.conj(z[::-1, ::-1]))
