"""CTC greedy decoding and prefix beam search with n-gram shallow fusion.

The beam search merges alignments per collapsed label prefix (summing path
mass, never taking the max) and applies the external LM incrementally each
time a word completes at a space, scoring the trailing partial word once at
finalization:

    fused = log p_acoustic(prefix) + alpha * log p_lm(words) + beta * |words|

With an exhaustive beam width and the per-frame class floor disabled the
search is exact, which is what the brute-force alignment-sum oracle in the
test suite checks against. Ties anywhere break by lexicographic prefix
order so runs are reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .corpus import Alphabet
from .lm import LmState, NGramModel, score_incremental

NEG_INF = -math.inf


@dataclass(frozen=True)
class FusionConfig:
    alpha: float = 0.5
    beta: float = 0.0
    beam_width: int = 50
    n_best: int = 1
    # per-frame log-prob floor for class pruning (-9.0 is a sane value);
    # None keeps the search exact, which the oracle tests rely on
    logit_floor: float | None = None

    def validate(self) -> None:
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.beam_width < 1:
            raise ValueError("beam_width must be >= 1")
        if self.n_best < 1:
            raise ValueError("n_best must be >= 1")


def collapse_path(path, blank_index: int) -> list[int]:
    """CTC collapse: merge repeats, then drop blanks."""
    out: list[int] = []
    prev = None
    for c in path:
        if c != prev and c != blank_index:
            out.append(int(c))
        prev = c
    return out


def labels_to_words(labels, alphabet: Alphabet) -> tuple[str, ...]:
    return tuple(alphabet.decode_labels(labels).split())


def greedy_path(z: np.ndarray) -> np.ndarray:
    """Per-frame argmax class indices (ties go to the lowest class index)."""
    return z.argmax(axis=1)


def greedy_decode(z: np.ndarray, alphabet: Alphabet) -> tuple[str, ...]:
    """Argmax path, CTC collapse, split on spaces into word tokens."""
    labels = collapse_path(greedy_path(z), alphabet.blank_index)
    return labels_to_words(labels, alphabet)


def log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


@dataclass
class Decoded:
    """One n-best entry."""

    words: tuple[str, ...]
    labels: tuple[int, ...]  # collapsed class sequence incl. space classes
    score: float  # fused score
    acoustic_logp: float
    lm_logp: float  # completed + trailing-word LM mass (natural log)
    word_count: int

    def to_dict(self) -> dict:
        return {
            "words": list(self.words),
            "labels": list(self.labels),
            "score": self.score,
            "acoustic_logp": self.acoustic_logp,
            "lm_logp": self.lm_logp,
            "word_count": self.word_count,
        }


@dataclass
class _Beam:
    p_blank: float = NEG_INF
    p_nonblank: float = NEG_INF
    lm_state: LmState = ()
    lm_logp: float = 0.0  # completed words only
    words: int = 0
    partial: tuple[str, ...] = ()  # characters of the unfinished word

    def total(self) -> float:
        return _logaddexp(self.p_blank, self.p_nonblank)


def _logaddexp(a: float, b: float) -> float:
    if a == NEG_INF:
        return b
    if b == NEG_INF:
        return a
    if a < b:
        a, b = b, a
    return a + math.log1p(math.exp(b - a))


def beam_search(
    z: np.ndarray,
    lm: NGramModel | None,
    cfg: FusionConfig,
    alphabet: Alphabet,
) -> list[Decoded]:
    """Prefix beam search over frame posteriors with word-level fusion.

    ``lm=None`` (or alpha=0) ranks by acoustic prefix mass plus the word
    bonus alone. Returns the top ``cfg.n_best`` entries by fused score.
    """
    cfg.validate()
    if not np.all(np.isfinite(z)):
        raise ValueError("logits must be finite")
    logp = log_softmax(z)
    blank = alphabet.blank_index
    space = None
    if " " in alphabet.symbols:
        space = alphabet.index_of(" ")
    symbols = alphabet.symbols

    init_state: LmState = lm.initial_state() if lm is not None else ()
    beams: dict[tuple[int, ...], _Beam] = {
        (): _Beam(p_blank=0.0, lm_state=init_state)
    }

    def child_fields(parent: _Beam, c: int) -> tuple[LmState, float, int, tuple[str, ...]]:
        # word bookkeeping for prefix + c; pure function of the prefix chars
        if c == space:
            if parent.partial:
                word = "".join(parent.partial)
                if lm is not None:
                    state, lp = score_incremental(lm, parent.lm_state, word)
                else:
                    state, lp = parent.lm_state, 0.0
                return state, parent.lm_logp + lp, parent.words + 1, ()
            return parent.lm_state, parent.lm_logp, parent.words, ()
        return parent.lm_state, parent.lm_logp, parent.words, (*parent.partial, symbols[c])

    for t in range(z.shape[0]):
        row = logp[t]
        if cfg.logit_floor is not None:
            classes = [c for c in range(z.shape[1]) if row[c] >= cfg.logit_floor]
            if blank not in classes:
                classes.append(blank)
        else:
            classes = range(z.shape[1])
        row_list = row.tolist()
        new_beams: dict[tuple[int, ...], _Beam] = {}

        def bucket(prefix: tuple[int, ...], parent: _Beam, c: int | None) -> _Beam:
            nb = new_beams.get(prefix)
            if nb is None:
                if c is None:
                    nb = _Beam(
                        lm_state=parent.lm_state,
                        lm_logp=parent.lm_logp,
                        words=parent.words,
                        partial=parent.partial,
                    )
                else:
                    state, lp, words, partial = child_fields(parent, c)
                    nb = _Beam(lm_state=state, lm_logp=lp, words=words, partial=partial)
                new_beams[prefix] = nb
            return nb

        for prefix, beam in beams.items():
            total = beam.total()
            last = prefix[-1] if prefix else None
            for c in classes:
                lp_c = row_list[c]
                if c == blank:
                    nb = bucket(prefix, beam, None)
                    nb.p_blank = _logaddexp(nb.p_blank, total + lp_c)
                elif c == last:
                    # repeat extends the same emission on the non-blank path
                    nb = bucket(prefix, beam, None)
                    nb.p_nonblank = _logaddexp(nb.p_nonblank, beam.p_nonblank + lp_c)
                    # a new occurrence needs an intervening blank
                    ext = (*prefix, c)
                    nb2 = bucket(ext, beam, c)
                    nb2.p_nonblank = _logaddexp(nb2.p_nonblank, beam.p_blank + lp_c)
                else:
                    ext = (*prefix, c)
                    nb = bucket(ext, beam, c)
                    nb.p_nonblank = _logaddexp(nb.p_nonblank, total + lp_c)

        if len(new_beams) > cfg.beam_width:
            ranked = sorted(
                new_beams.items(),
                key=lambda kv: (
                    -(kv[1].total() + cfg.alpha * kv[1].lm_logp + cfg.beta * kv[1].words),
                    kv[0],
                ),
            )
            beams = dict(ranked[: cfg.beam_width])
        else:
            beams = new_beams

    results = []
    for prefix, beam in beams.items():
        lm_logp = beam.lm_logp
        words = beam.words
        if beam.partial:
            word = "".join(beam.partial)
            if lm is not None:
                _, lp = score_incremental(lm, beam.lm_state, word)
                lm_logp += lp
            words += 1
        acoustic = beam.total()
        if acoustic == NEG_INF:
            continue
        fused = acoustic + cfg.alpha * lm_logp + cfg.beta * words
        results.append(
            Decoded(
                words=labels_to_words(prefix, alphabet),
                labels=prefix,
                score=fused,
                acoustic_logp=acoustic,
                lm_logp=lm_logp,
                word_count=words,
            )
        )
    results.sort(key=lambda d: (-d.score, d.labels))
    return results[: cfg.n_best]
