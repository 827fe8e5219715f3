"""Backoff n-gram language model over word tokens.

Estimation is absolute discounting with Katz-style backoff: every observed
n-gram keeps count minus a constant discount D, and the freed mass D*K/c(h)
(K = distinct continuations of history h) is spread over unseen
continuations in proportion to the next-lower-order distribution. At the
unigram level the freed mass goes entirely to a single unknown-word class,
so every conditional distribution sums to one exactly and any word sequence
is scoreable.

Sentences are padded with one start marker and one end marker. Scoring and
counting mirror each other, so for every reachable history h the invariant
sum_w p(w|h) = 1 holds over the predictable vocabulary (words, end marker,
unknown class); the start marker is context only and carries no mass.

Models persist in ARPA text format (log10 in the file, natural log in
memory).
"""

from __future__ import annotations

import math
import os
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Sequence

BOS = "<s>"
EOS = "</s>"
UNK = "<unk>"

_LN10 = math.log(10.0)

LmState = tuple[str, ...]


@dataclass
class NGramModel:
    order: int
    # (h..., w) -> natural-log conditional probability
    logprob: dict[tuple[str, ...], float]
    # history tuple -> natural-log backoff weight
    backoff: dict[tuple[str, ...], float]
    vocab: frozenset[str]  # predictable tokens: words + EOS + UNK

    def initial_state(self) -> LmState:
        return (BOS,) if self.order > 1 else ()

    def _map(self, word: str) -> str:
        return word if word in self.vocab else UNK

    def cond_logp(self, state: LmState, word: str) -> float:
        """log p(word | state) with standard backoff semantics."""
        w = self._map(word)
        h = state[-(self.order - 1) :] if self.order > 1 else ()
        acc = 0.0
        while True:
            key = (*h, w)
            lp = self.logprob.get(key)
            if lp is not None:
                return acc + lp
            if not h:
                # unigram table covers the whole predictable vocabulary
                raise KeyError(f"token {w!r} missing from unigram table")
            acc += self.backoff.get(h, 0.0)
            h = h[1:]

    def advance(self, state: LmState, word: str) -> LmState:
        if self.order == 1:
            return ()
        return ((*state, self._map(word)))[-(self.order - 1) :]


def train_lm(
    text: Iterable[Sequence[str]], order: int, discount: float = 0.5
) -> NGramModel:
    """Estimate an absolute-discounting backoff model from word sequences."""
    if order < 1:
        raise ValueError("order must be >= 1")
    if not (0.0 < discount < 1.0):
        raise ValueError("discount must lie strictly between 0 and 1")
    sentences = [tuple(s) for s in text]
    if not sentences:
        raise ValueError("training text is empty")

    # counts[k][(w1..wk)] for k = 1..order; k-grams never end in BOS
    counts: list[dict[tuple[str, ...], int]] = [defaultdict(int) for _ in range(order)]
    for sent in sentences:
        padded = (BOS, *sent, EOS)
        for i in range(1, len(padded)):
            for k in range(1, order + 1):
                if i - k + 1 < 0:
                    break
                counts[k - 1][padded[i - k + 1 : i + 1]] += 1

    words = {g[0] for g in counts[0]}
    vocab = frozenset(words | {EOS, UNK})

    logprob: dict[tuple[str, ...], float] = {}
    backoff: dict[tuple[str, ...], float] = {}

    # unigrams: leftover discount mass becomes the unknown-word floor
    total = sum(counts[0].values())
    for (w,), c in sorted(counts[0].items()):
        logprob[(w,)] = math.log((c - discount) / total)
    logprob[(UNK,)] = math.log(discount * len(counts[0]) / total)

    def lower_logp(h: tuple[str, ...], w: str) -> float:
        acc = 0.0
        hh = h
        while True:
            lp = logprob.get((*hh, w))
            if lp is not None:
                return acc + lp
            if not hh:
                raise KeyError(w)
            acc += backoff.get(hh, 0.0)
            hh = hh[1:]

    for k in range(2, order + 1):
        by_hist: dict[tuple[str, ...], list[tuple[str, int]]] = defaultdict(list)
        for gram, c in counts[k - 1].items():
            by_hist[gram[:-1]].append((gram[-1], c))
        for hist in sorted(by_hist):
            conts = by_hist[hist]
            c_h = sum(c for _, c in conts)
            seen_lower = 0.0
            for w, c in conts:
                logprob[(*hist, w)] = math.log((c - discount) / c_h)
                seen_lower += math.exp(lower_logp(hist[1:], w))
            leftover = discount * len(conts) / c_h
            backoff[hist] = math.log(leftover) - math.log1p(-seen_lower)

    return NGramModel(order=order, logprob=logprob, backoff=backoff, vocab=vocab)


def score_sequence(lm: NGramModel, y: Sequence[str], include_eos: bool = True) -> float:
    """Natural-log probability of a word sequence, start/end markers included.

    The empty sequence scores log p(end | start). ``include_eos=False`` drops
    the end-marker term (kept as a switch because selection behavior with and
    without it is worth comparing)."""
    state = lm.initial_state()
    total = 0.0
    for w in y:
        total += lm.cond_logp(state, w)
        state = lm.advance(state, w)
    if include_eos:
        total += lm.cond_logp(state, EOS)
    return total


def score_incremental(lm: NGramModel, s: LmState, w: str) -> tuple[LmState, float]:
    """Advance one word; folding from the initial state reproduces
    score_sequence (minus its end-marker term)."""
    return lm.advance(s, w), lm.cond_logp(s, w)


# ---------------------------------------------------------------------------
# ARPA persistence
# ---------------------------------------------------------------------------


def save_arpa(lm: NGramModel, path: str) -> None:
    grams: list[list[tuple[tuple[str, ...], float]]] = [[] for _ in range(lm.order)]
    for key, lp in lm.logprob.items():
        grams[len(key) - 1].append((key, lp))
    # BOS needs a unigram line to carry its backoff weight; it is context
    # only, so it gets the conventional -99 log10 placeholder probability.
    has_bos = lm.order > 1
    lines = ["\\data\\"]
    for k in range(lm.order):
        n = len(grams[k]) + (1 if (k == 0 and has_bos) else 0)
        lines.append(f"ngram {k + 1}={n}")
    lines.append("")
    for k in range(lm.order):
        lines.append(f"\\{k + 1}-grams:")
        entries = sorted(grams[k])
        if k == 0 and has_bos:
            entries.append(((BOS,), None))  # type: ignore[list-item]
            entries.sort()
        for key, lp in entries:
            lp10 = -99.0 if lp is None else lp / _LN10
            parts = [f"{lp10:.17g}", " ".join(key)]
            if k + 1 < lm.order:
                bow = lm.backoff.get(key)
                if bow is not None:
                    parts.append(f"{bow / _LN10:.17g}")
            lines.append("\t".join(parts))
        lines.append("")
    lines.append("\\end\\")
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    os.replace(tmp, path)


def load_arpa(path: str) -> NGramModel:
    logprob: dict[tuple[str, ...], float] = {}
    backoff: dict[tuple[str, ...], float] = {}
    order = 0
    with open(path, encoding="utf-8") as fh:
        section = None
        for raw in fh:
            line = raw.strip()
            if not line or line == "\\data\\":
                continue
            if line == "\\end\\":
                break
            if line.startswith("ngram "):
                order = max(order, int(line.split("=")[0].split()[1]))
                continue
            if line.startswith("\\") and line.endswith("-grams:"):
                section = int(line[1:].split("-")[0])
                continue
            if section is None:
                continue
            parts = line.split("\t") if "\t" in line else line.split()
            lp10 = float(parts[0])
            if "\t" in line:
                tokens = tuple(parts[1].split(" "))
                bow10 = float(parts[2]) if len(parts) > 2 else None
            else:
                # whitespace-separated fallback: token count fixed by section
                tokens = tuple(parts[1 : 1 + section])
                bow10 = float(parts[1 + section]) if len(parts) > 1 + section else None
            if not (tokens == (BOS,) and lp10 <= -99.0):
                logprob[tokens] = lp10 * _LN10
            if bow10 is not None:
                backoff[tokens] = bow10 * _LN10
    if order < 1:
        raise ValueError(f"{path} is not an ARPA file")
    vocab = frozenset(w for (w,) in (k for k in logprob if len(k) == 1))
    return NGramModel(order=order, logprob=logprob, backoff=backoff, vocab=vocab)
