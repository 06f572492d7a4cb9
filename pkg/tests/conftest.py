import random

import pytest
import torch

from timgan.editor import ModelConfig, TimGanModel
from timgan.text import Vocabulary

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def vocab():
    return Vocabulary.from_grammar()


SMALL = dict(canvas=48, channels=8, d0=8, d=8, layers=2, blocks=3, max_len=12)


@pytest.fixture()
def small_config():
    return ModelConfig(**SMALL)


@pytest.fixture()
def small_model(vocab, small_config):
    torch.manual_seed(0)
    return TimGanModel(vocab, small_config)


@pytest.fixture()
def rng():
    return random.Random(42)
