import numpy as np
import pytest

from nphmm.bases import BasisSpec
from nphmm.model import HmmSpec, section4_hmm


@pytest.fixture(scope="session")
def hmm4():
    return section4_hmm()


@pytest.fixture(scope="session")
def hist8():
    return BasisSpec("histogram", 8)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def one_state():
    return HmmSpec([[1.0]], [1.0], (((1.0, 1.0, 1.0),),))


@pytest.fixture(scope="session")
def symmetric_hmm():
    beta = ((1.0, 2.0, 5.0),)
    return HmmSpec([[0.5, 0.5], [0.5, 0.5]], [0.5, 0.5], (beta, beta))
