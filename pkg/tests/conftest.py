import pytest
import torch

from saen_bgs.network import NetworkConfig, build_network

torch.set_num_threads(1)
torch.use_deterministic_algorithms(True)


@pytest.fixture
def small_cfg():
    return NetworkConfig(input_size=(16, 16))


@pytest.fixture
def small_net(small_cfg):
    return build_network(small_cfg, seed=3)
