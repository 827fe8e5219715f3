"""Compact frame classifier with an adaptable per-feature affine front end.

Logits for frame x are ``(gamma * x + b) @ W + c``. Only (gamma, b) are
touched by test-time adaptation; W and c are trained once on source data
with frame-level cross-entropy against the gold alignments and then frozen.
A snapshot of the source (gamma, b) is kept on the model for episodic reset.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .corpus import Alphabet, Corpus, Utterance


@dataclass
class AcousticModel:
    W: np.ndarray  # (F, C)
    c: np.ndarray  # (C,)
    gamma: np.ndarray  # (F,) adaptable scale
    b: np.ndarray  # (F,) adaptable shift
    alphabet: Alphabet
    gamma_src: np.ndarray = field(default=None)  # type: ignore[assignment]
    b_src: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.gamma_src is None:
            self.gamma_src = self.gamma.copy()
        if self.b_src is None:
            self.b_src = self.b.copy()

    @property
    def feature_dim(self) -> int:
        return self.W.shape[0]

    @property
    def num_classes(self) -> int:
        return self.W.shape[1]

    def copy(self) -> "AcousticModel":
        return AcousticModel(
            W=self.W,
            c=self.c,
            gamma=self.gamma.copy(),
            b=self.b.copy(),
            alphabet=self.alphabet,
            gamma_src=self.gamma_src,
            b_src=self.b_src,
        )

    def reset_to_source(self) -> None:
        self.gamma = self.gamma_src.copy()
        self.b = self.b_src.copy()


def forward(m: AcousticModel, u: Utterance | np.ndarray) -> np.ndarray:
    """Frame logits, shape (L, C)."""
    x = u.features if isinstance(u, Utterance) else u
    if x.shape[1] != m.feature_dim:
        raise ValueError(
            f"feature width {x.shape[1]} does not match model feature_dim {m.feature_dim}"
        )
    return (x * m.gamma[None, :] + m.b[None, :]) @ m.W + m.c[None, :]


def confidence(z: np.ndarray) -> np.ndarray:
    """Per-frame probability of the predicted class, softmax at temperature 1."""
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e.max(axis=1) / e.sum(axis=1)


def mean_log_confidence(z: np.ndarray) -> float:
    """Average log confidence over frames (the per-step acoustic score)."""
    return float(np.mean(np.log(confidence(z))))


@dataclass(frozen=True)
class TrainConfig:
    """Source-training hyperparameters; defaults are desk-tuned, not taken
    from any reference system."""

    epochs: int = 10
    batch_frames: int = 256
    learning_rate: float = 0.2
    seed: int = 0


def train_source(corpus: Corpus, hyper: TrainConfig) -> AcousticModel:
    """Frame-level cross-entropy training of (W, c) on gold alignments.

    Plain mini-batch gradient descent with a fixed learning rate; gamma/b
    stay at identity and become the source snapshot. Deterministic in
    (corpus, hyper).
    """
    for u in corpus:
        if u.alignment is None:
            raise ValueError(f"utterance {u.id} lacks a gold alignment")
    fdim = corpus.feature_dim
    n_classes = corpus.alphabet.size
    if len(corpus) > 0:
        x_all = np.concatenate([u.features for u in corpus], axis=0)
        y_all = np.concatenate([u.alignment for u in corpus], axis=0)
    else:
        x_all = np.zeros((0, fdim))
        y_all = np.zeros((0,), dtype=np.int64)

    W = np.zeros((fdim, n_classes))
    c = np.zeros(n_classes)
    rng = np.random.default_rng(hyper.seed)
    n = x_all.shape[0]
    for _ in range(hyper.epochs):
        order = rng.permutation(n)
        for start in range(0, n, hyper.batch_frames):
            idx = order[start : start + hyper.batch_frames]
            xb, yb = x_all[idx], y_all[idx]
            z = xb @ W + c
            z -= z.max(axis=1, keepdims=True)
            p = np.exp(z)
            p /= p.sum(axis=1, keepdims=True)
            p[np.arange(len(idx)), yb] -= 1.0
            p /= len(idx)
            W -= hyper.learning_rate * (xb.T @ p)
            c -= hyper.learning_rate * p.sum(axis=0)

    return AcousticModel(
        W=W,
        c=c,
        gamma=np.ones(fdim),
        b=np.zeros(fdim),
        alphabet=corpus.alphabet,
    )


def frame_accuracy(m: AcousticModel, corpus: Corpus) -> float:
    """Fraction of aligned frames whose argmax logit matches the gold class."""
    hit = total = 0
    for u in corpus:
        z = forward(m, u)
        hit += int(np.sum(z.argmax(axis=1) == u.alignment))
        total += u.num_frames
    return hit / total if total else 0.0


def save_model(m: AcousticModel, path: str) -> None:
    payload = {
        "feature_dim": m.feature_dim,
        "num_classes": m.num_classes,
        "blank_index": m.alphabet.blank_index,
        "alphabet": list(m.alphabet.symbols),
        "W": m.W.tolist(),
        "c": m.c.tolist(),
        "gamma": m.gamma.tolist(),
        "b": m.b.tolist(),
        "gamma_src": m.gamma_src.tolist(),
        "b_src": m.b_src.tolist(),
    }
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)
        fh.write("\n")
    os.replace(tmp, path)


def load_model(path: str) -> AcousticModel:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    W = np.asarray(payload["W"], dtype=np.float64)
    if W.shape != (payload["feature_dim"], payload["num_classes"]):
        raise ValueError(f"model file {path}: W shape {W.shape} disagrees with header")
    return AcousticModel(
        W=W,
        c=np.asarray(payload["c"], dtype=np.float64),
        gamma=np.asarray(payload["gamma"], dtype=np.float64),
        b=np.asarray(payload["b"], dtype=np.float64),
        alphabet=Alphabet(
            symbols=tuple(payload["alphabet"]),
            blank_index=int(payload["blank_index"]),
        ),
        gamma_src=np.asarray(payload["gamma_src"], dtype=np.float64),
        b_src=np.asarray(payload["b_src"], dtype=np.float64),
    )
