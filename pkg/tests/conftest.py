import numpy as np
import pytest
import torch

from fundusheight.data import apply_partition, build_bank, make_splits, augment_corpus
from fundusheight.discriminator import DiscriminatorConfig
from fundusheight.generator import GeneratorConfig
from fundusheight.synth import synth_generate, synthesize_to_dir
from fundusheight.trainer import TrainConfig, fit_progressive


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory):
    """A 12-pair 64x64 synthetic corpus on disk, shared by CLI tests."""
    root = tmp_path_factory.mktemp("corpus")
    synthesize_to_dir(root, 12, seed=7, size=(64, 64))
    return root


def make_bank(n_sources=10, seed=5, size=(32, 32), split_seed=0):
    pairs = augment_corpus(synth_generate(n_sources, seed=seed, size=size))
    partition = make_splits(pairs, seed=split_seed)
    apply_partition(pairs, partition)
    return build_bank(pairs)


@pytest.fixture(scope="session")
def bank32():
    """40 augmented samples at 32x32 with train/val/test splits."""
    return make_bank()


TINY_GEN = GeneratorConfig(num_unets=1, unet_depth=3, base_channels=8)
TINY_DISC = DiscriminatorConfig(base_channels=8, image_size=32)
TINY_TRAIN = TrainConfig(batch_size=4, epochs=2, stages=(1,), seed=13)


@pytest.fixture(scope="session")
def tiny_ckpt(bank32):
    """One short training run; reused wherever a real checkpoint is needed."""
    return fit_progressive(bank32, TINY_TRAIN, gen_cfg=TINY_GEN, disc_cfg=TINY_DISC)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _torch_seed():
    # keep each test's ambient torch RNG independent of test order
    torch.manual_seed(99)
