import numpy as np
import pytest

from src.model.lifting import Dictionary, DictionarySpec, build_dictionary
from src.simulation.dynamics import VdpConfig, simulate_vdp


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def identity_dictionary():
    """Factory for dictionaries made of the raw state (and optionally a constant)."""

    def make(n: int, constant: bool = False) -> Dictionary:
        return Dictionary(
            state_dim=n,
            include_constant=constant,
            include_identity=True,
            rbf_centers=np.empty((0, n)),
            rbf_bandwidth=1.0,
        )

    return make


@pytest.fixture(scope="session")
def vdp_traj():
    return simulate_vdp(VdpConfig(mu=0.8, sigma=0.2, dt_sample=0.01, seed=7), 2001)


@pytest.fixture(scope="session")
def vdp_dictionary(vdp_traj):
    """40 RBFs + identity + constant: K = 43."""
    return build_dictionary(DictionarySpec(num_rbf=40, seed=0, warmup=100), vdp_traj[:100])


@pytest.fixture
def random_stable_matrix(rng):
    q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    return 0.98 * q
