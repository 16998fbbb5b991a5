import numpy as np
import pytest

from impulse_lorenz import LorenzParams, SectionKind, build_section


@pytest.fixture(scope="session")
def params():
    return LorenzParams()


@pytest.fixture(scope="session")
def casimir_section(params):
    # Census runs once per session; the numba kernels compile on first use.
    return build_section(SectionKind.CASIMIR_SURFACE, params, n_returns=2000)


@pytest.fixture(scope="session")
def planar_section(params):
    return build_section(SectionKind.PLANAR_SQUARE, params, calibrated=False)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240817)
