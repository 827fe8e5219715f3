import json
import math

import numpy as np
import pytest

from ttastep.corpus import (
    Corruption,
    CorpusSpec,
    corrupt,
    default_alphabet,
    filter_by_length,
    load_jsonl,
    save_jsonl,
    synth_corpus,
)

from oracles import collapse_groupby


def _serialize(corpus):
    return json.dumps(
        [
            {
                "id": u.id,
                "features": u.features.tolist(),
                "reference": list(u.reference),
                "alignment": u.alignment.tolist(),
            }
            for u in corpus
        ]
    )


class TestSynth:
    def test_deterministic(self, tiny_spec):
        a = synth_corpus(tiny_spec, seed=3)
        b = synth_corpus(tiny_spec, seed=3)
        assert _serialize(a) == _serialize(b)

    def test_empty(self, tiny_spec):
        from dataclasses import replace

        empty = synth_corpus(replace(tiny_spec, num_utterances=0), seed=0)
        assert len(empty) == 0

    def test_collapse_roundtrip(self, tiny_corpus):
        # gold alignment must CTC-collapse back to the reference characters
        alphabet = tiny_corpus.alphabet
        for u in tiny_corpus:
            collapsed = collapse_groupby(u.alignment.tolist(), alphabet.blank_index)
            expect = tuple(alphabet.encode(" ".join(u.reference)))
            assert collapsed == expect

    def test_invariants_over_random_specs(self):
        rng = np.random.default_rng(0)
        for trial in range(5):
            fdim = int(rng.integers(4, 10))
            spec = CorpusSpec(
                vocabulary=("ab", "ba", "aa"),
                alphabet=default_alphabet("ab "),
                sentence_length_range=(1, int(rng.integers(1, 4))),
                frames_per_token_range=(1, int(rng.integers(1, 4))),
                feature_dim=fdim,
                embedding_seed=int(rng.integers(0, 100)),
                num_utterances=6,
            )
            corpus = synth_corpus(spec, seed=trial)
            for u in corpus:
                assert u.num_frames >= 1
                assert u.features.shape == (u.num_frames, fdim)
                assert u.alignment.max() < spec.alphabet.size
                collapsed = collapse_groupby(u.alignment.tolist(), 0)
                assert collapsed == tuple(spec.alphabet.encode(" ".join(u.reference)))

    def test_validation_errors(self, tiny_spec):
        from dataclasses import replace

        with pytest.raises(ValueError):
            synth_corpus(replace(tiny_spec, vocabulary=()), seed=0)
        with pytest.raises(ValueError):
            synth_corpus(replace(tiny_spec, frames_per_token_range=(0, 2)), seed=0)


def _snr_db(clean, noisy):
    noise = noisy - clean
    return 10.0 * math.log10(np.mean(clean**2) / np.mean(noise**2))


class TestCorrupt:
    def test_identity_at_infinite_snr(self, tiny_corpus):
        u = tiny_corpus.utterances[0]
        out = corrupt(u, Corruption(kind="gaussian", snr_db=math.inf, seed=1))
        np.testing.assert_array_equal(out.features, u.features)

    @pytest.mark.parametrize("snr", [10.0, 0.0, 20.0, -5.0])
    def test_exact_snr(self, tiny_corpus, snr):
        for u in tiny_corpus.utterances[:5]:
            out = corrupt(u, Corruption(kind="gaussian", snr_db=snr, seed=2))
            assert _snr_db(u.features, out.features) == pytest.approx(snr, abs=1e-6)

    def test_zero_db_noise_power_equals_signal_power(self, tiny_corpus):
        u = tiny_corpus.utterances[0]
        out = corrupt(u, Corruption(kind="gaussian", snr_db=0.0, seed=2))
        noise = out.features - u.features
        assert np.mean(noise**2) == pytest.approx(np.mean(u.features**2), rel=1e-6)

    def test_preserves_reference_alignment_length(self, tiny_corpus):
        u = tiny_corpus.utterances[0]
        for c in [
            Corruption(kind="gaussian", snr_db=5.0, seed=3),
            Corruption(kind="feature_scale", scale=2.0, seed=3),
            Corruption(kind="channel_shift", shift=1.0, seed=3),
        ]:
            out = corrupt(u, c)
            assert out.reference == u.reference
            np.testing.assert_array_equal(out.alignment, u.alignment)
            assert out.num_frames == u.num_frames

    def test_deterministic(self, tiny_corpus):
        u = tiny_corpus.utterances[1]
        c = Corruption(kind="gaussian", snr_db=10.0, seed=9)
        np.testing.assert_array_equal(corrupt(u, c).features, corrupt(u, c).features)

    def test_rejects_bad_snr(self, tiny_corpus):
        u = tiny_corpus.utterances[0]
        with pytest.raises(ValueError):
            corrupt(u, Corruption(kind="gaussian", snr_db=math.nan))
        with pytest.raises(ValueError):
            corrupt(u, Corruption(kind="gaussian", snr_db=-math.inf))
        with pytest.raises(ValueError):
            corrupt(u, Corruption(kind="wibble"))


class TestFilter:
    def test_noop_when_all_short(self, tiny_corpus):
        longest = max(u.num_frames for u in tiny_corpus)
        out = filter_by_length(tiny_corpus, longest)
        assert [u.id for u in out] == [u.id for u in tiny_corpus]

    def test_rejects_zero(self, tiny_corpus):
        with pytest.raises(ValueError):
            filter_by_length(tiny_corpus, 0)

    def test_drops_long(self, tiny_corpus):
        lengths = sorted(u.num_frames for u in tiny_corpus)
        cut = lengths[len(lengths) // 2]
        out = filter_by_length(tiny_corpus, cut)
        assert all(u.num_frames <= cut for u in out)
        kept = [u.id for u in tiny_corpus if u.num_frames <= cut]
        assert [u.id for u in out] == kept


class TestPersistence:
    def test_jsonl_roundtrip(self, tiny_corpus, tmp_path):
        path = str(tmp_path / "c.jsonl")
        save_jsonl(tiny_corpus, path)
        back = load_jsonl(path)
        assert len(back) == len(tiny_corpus)
        assert back.alphabet == tiny_corpus.alphabet
        assert back.vocabulary == tiny_corpus.vocabulary
        for a, b in zip(tiny_corpus, back):
            assert a.id == b.id
            assert a.reference == b.reference
            np.testing.assert_array_equal(a.features, b.features)
            np.testing.assert_array_equal(a.alignment, b.alignment)
