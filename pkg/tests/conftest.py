import numpy as np
import pytest

from volcp import synth, trimask


@pytest.fixture(scope="session")
def small_gen_config():
    return synth.GenerationConfig(
        n_train=80, n_calib=60, n_id_test=60, n_shift_test=60
    )


@pytest.fixture(scope="session")
def small_train(small_gen_config):
    return list(synth.iter_split(0, small_gen_config, "train"))


@pytest.fixture(scope="session")
def fitted_thresholds(small_train):
    return trimask.fit_thresholds(small_train, gamma=0.2)


@pytest.fixture(scope="session")
def small_id_test(small_gen_config):
    return list(synth.iter_split(0, small_gen_config, "id_test"))


def random_mask_pair(rng, dims=(6, 6, 6), ensure_nonempty=True):
    from volcp.grids import Mask3D

    while True:
        a = rng.random(dims) < 0.4
        b = rng.random(dims) < 0.4
        if not ensure_nonempty or (a.any() and b.any()):
            return Mask3D(a), Mask3D(b)
