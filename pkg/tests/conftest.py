import numpy as np
import pytest
import torch

torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def toy_manifest():
    from clifgan import data as D

    return D.generate_synthetic_dataset(D.SyntheticSceneSpec(), 8, seed=42)


@pytest.fixture(scope="session")
def toy_sample(toy_manifest):
    return toy_manifest.entries[0]
