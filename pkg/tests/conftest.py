import pytest

from ttastep.acoustic import TrainConfig, train_source
from ttastep.corpus import CorpusSpec, default_alphabet, synth_corpus
from ttastep.lm import train_lm

TINY_VOCAB = ("ace", "bad", "cab", "dab", "bead", "egg")


@pytest.fixture(scope="session")
def tiny_spec():
    return CorpusSpec(
        vocabulary=TINY_VOCAB,
        alphabet=default_alphabet("abcdeg "),
        sentence_length_range=(2, 3),
        frames_per_token_range=(2, 3),
        feature_dim=8,
        embedding_seed=7,
        num_utterances=40,
        embedding_scale=2.5,
    )


@pytest.fixture(scope="session")
def tiny_corpus(tiny_spec):
    return synth_corpus(tiny_spec, seed=11)


@pytest.fixture(scope="session")
def tiny_model(tiny_corpus):
    return train_source(tiny_corpus, TrainConfig(epochs=8, batch_frames=128, learning_rate=0.2, seed=0))


@pytest.fixture(scope="session")
def tiny_lm(tiny_corpus):
    return train_lm(tiny_corpus.references(), order=3, discount=0.5)
