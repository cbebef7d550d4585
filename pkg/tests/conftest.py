import numpy as np
import pytest

from seqaug import numerics as nd


@pytest.fixture(autouse=True)
def float64_mode(request):
    """Unit tests run in 64-bit mode for tight tolerances. The acceptance
    module manages precision per criterion (its pipeline runs use the
    configured float32 training mode)."""
    if request.module.__name__ == "test_acceptance":
        yield
        return
    with nd.precision("float64"):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
