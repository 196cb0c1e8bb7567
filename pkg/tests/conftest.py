import os
import sys

from hypothesis import settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


import warnings

import pytest


@pytest.fixture(scope="session")
def dance_corpus():
    from coordsynth.synth_data import build_corpus, get_style

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return build_corpus(get_style("dance"), 20, 0, T=4)


@pytest.fixture(scope="session")
def tiny_generator(dance_corpus):
    """A quickly trained dance generator; good enough for plumbing, not for quality claims."""
    from coordsynth.generator import NoiseSchedule, TrainConfig, train_denoiser

    model, _ = train_denoiser(dance_corpus, NoiseSchedule.linear(20),
                              TrainConfig(steps=400, hidden=(96, 96), val_every=200))
    return model
