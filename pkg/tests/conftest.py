import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def accept_profile() -> str:
    """'smoke' (default) or 'full'; acceptance tests scale with this."""
    return os.environ.get("SVARSS_ACCEPT", "smoke")
