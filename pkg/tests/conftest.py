from __future__ import annotations

import numpy as np
import pytest

from supportq.core import DialogueState, Emotion, Speaker, Turn, default_catalog
from supportq.encoding import build_vocab, render_mcq
from supportq.qnet import MlpConfig, MlpScorer, SeqConfig, SeqScorer


@pytest.fixture(scope="session")
def catalog():
    return default_catalog()


@pytest.fixture
def tiny_state():
    return DialogueState(
        description="I hate my job but I am scared to quit.",
        emotion=Emotion("anxiety", 5),
        history=(
            Turn(Speaker.SEEKER, "I feel stuck."),
            Turn(Speaker.SUPPORTER, "What makes you feel stuck?", strategy=1),
        ),
        query="What should I do about it?",
    )


@pytest.fixture
def bare_state():
    return DialogueState(
        description="job stress",
        emotion=Emotion("anxiety"),
        history=(),
        query="What should I do?",
    )


@pytest.fixture(scope="session")
def small_vocab(catalog):
    state = DialogueState(
        description="job stress",
        emotion=Emotion("anxiety"),
        history=(),
        query="What should I do?",
    )
    corpus = [
        render_mcq(state, catalog),
        "I feel stuck. What makes you feel stuck? What should I do about it?",
        "I hate my job but I am scared to quit.",
    ]
    return build_vocab(corpus, 600)


@pytest.fixture
def seq_scorer(small_vocab):
    return SeqScorer(SeqConfig(vocab_size=small_vocab.size, d_model=16, n_ctx=512), seed=3)


@pytest.fixture
def mlp_scorer(catalog):
    return MlpScorer(MlpConfig(n_actions=len(catalog)), seed=3)


def fd_gradient(fn, array: np.ndarray, index, h: float = 1e-6) -> float:
    """Central finite difference of fn() along one coordinate of array."""
    orig = array[index]
    array[index] = orig + h
    plus = fn()
    array[index] = orig - h
    minus = fn()
    array[index] = orig
    return (plus - minus) / (2.0 * h)


def rel_error(a: float, b: float, floor: float = 1.0) -> float:
    """|a - b| relative to max(|a|, |b|, floor).

    The unit floor makes near-zero coordinates an absolute comparison; a
    central difference at h=1e-6 in float64 carries ~1e-9 measurement noise,
    so a pure ratio is unattainable there for any correct gradient.
    """
    return abs(a - b) / max(abs(a), abs(b), floor)
