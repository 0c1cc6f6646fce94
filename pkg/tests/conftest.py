import numpy as np
import pytest
from scipy.stats import unitary_group

from uniscatter.coins import CoinField, CoinParams, DecayBound
from uniscatter.operators import LatticeWindow, WindowedOperator
from uniscatter.walk import build_walk, uniform_model

DEFECT_COIN = CoinParams.from_a(0.4, alpha=0.3, delta=0.7)


def defect_field(bulk: CoinParams) -> CoinField:
    return CoinField(bulk, bulk, {0: DEFECT_COIN.matrix}, None, DecayBound(10.0), DecayBound(10.0))


def random_unitary(n: int, seed: int) -> WindowedOperator:
    return WindowedOperator.dense(unitary_group.rvs(n, random_state=seed), unitary=True)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20261019)


@pytest.fixture(scope="session")
def defect_model():
    """a = 0.9 bulk with one reflecting defect at the origin, L = 1024."""
    return build_walk(defect_field(CoinParams.from_a(0.9)), LatticeWindow(1024))


@pytest.fixture(scope="session")
def small_defect_model():
    return build_walk(defect_field(CoinParams.from_a(0.9)), LatticeWindow(256))


@pytest.fixture(scope="session")
def hadamard_small():
    return uniform_model(CoinParams.hadamard(), 128)
