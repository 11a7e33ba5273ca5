import numpy as np
import pytest

from arousal_forge.audio import MfccBlock
from arousal_forge.experiment import prepare_sessions
from arousal_forge.synth import SynthConfig, generate_session
from arousal_forge.windows import Segment


def make_segment(rng, n=8, h=36, w=48, mean_arousal=0.5, session_id="s", start=0):
    """A segment with random frames and a random MFCC block."""
    frames = (rng.random((n, h, w)) * 255).astype(np.uint8)
    mfcc = MfccBlock(rng.standard_normal((n, 11)))
    return Segment(session_id, start, n, frames, mfcc, mean_arousal)


@pytest.fixture(scope="session")
def tiny_dataset():
    """Six short synthetic sessions at low resolution, cleaned and resampled."""
    config = SynthConfig(sessions=6, duration_s=20.0, height=36, width=36,
                         coupling="both", seed=404)
    raws = [generate_session(config, i).session for i in range(config.sessions)]
    data, summary = prepare_sessions(raws)
    return data, summary


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
