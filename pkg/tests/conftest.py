import numpy as np
import pytest

import freqmod as fm


@pytest.fixture(scope="session")
def cosine_1000():
    return fm.build_schedule("cosine", 1000)


@pytest.fixture(scope="session")
def default_prior():
    return fm.PowerLawPrior(beta=2.0, amplitude=4e6, dc_variance=1.0)


def random_field(seed, channels=1, height=8, width=8):
    rng = np.random.default_rng(seed)
    return fm.RealField(rng.standard_normal((channels, height, width)))
