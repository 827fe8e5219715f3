"""Episodic entropy-minimization adaptation of the feature affine.

Each utterance gets a private model copy reset to the source snapshot; N
gradient steps on the combined frame-entropy + class-confusion objective
produce a trajectory of per-step records (parameters, logits, greedy
transcript, acoustic score, loss). W and c are never touched. A non-finite
loss or gradient truncates the trajectory at the last finite step.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .acoustic import AcousticModel, forward, mean_log_confidence
from .corpus import Utterance
from .decode import greedy_decode
from .kernels import suta_loss_grad


@dataclass(frozen=True)
class TtaConfig:
    """Adaptation hyperparameters.

    max_steps is the only externally anchored value; learning_rate,
    temperature and the loss blend are desk-tuned analogues with no claim to
    match any reference system. ``seed`` is reserved for stochastic variants;
    the current update rule is deterministic.
    """

    max_steps: int = 20
    learning_rate: float = 0.15
    temperature: float = 1.5
    lambda_ent: float = 0.5
    lambda_mcc: float = 0.5
    optimizer: str = "adam"  # adam | sgd
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def validate(self) -> None:
        if self.max_steps < 0:
            raise ValueError("max_steps must be >= 0")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")
        if self.lambda_ent < 0 or self.lambda_mcc < 0:
            raise ValueError("loss weights must be >= 0")
        if self.lambda_ent + self.lambda_mcc <= 0:
            raise ValueError("at least one loss weight must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


class TtaDivergenceError(RuntimeError):
    """Non-finite loss or gradient during an adaptation step."""


def suta_loss(z: np.ndarray, cfg: TtaConfig) -> tuple[float, np.ndarray]:
    """Loss value and exact gradient w.r.t. the logits.

    value = lambda_ent * mean frame entropy
          + lambda_mcc * off-diagonal mass of the certainty-reweighted,
            row-normalized class-confusion matrix (divided by C),
    both on softmax(z / temperature). The gradient flows through the
    certainty weights as well, so it matches finite differences of the value.
    """
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        return suta_loss_grad(z, cfg.temperature, cfg.lambda_ent, cfg.lambda_mcc)


@dataclass
class OptState:
    m_gamma: np.ndarray
    v_gamma: np.ndarray
    m_b: np.ndarray
    v_b: np.ndarray
    t: int = 0

    @classmethod
    def init(cls, feature_dim: int) -> "OptState":
        return cls(
            m_gamma=np.zeros(feature_dim),
            v_gamma=np.zeros(feature_dim),
            m_b=np.zeros(feature_dim),
            v_b=np.zeros(feature_dim),
        )


def _loss_affine_from_logits(
    m: AcousticModel, u: Utterance, z: np.ndarray, cfg: TtaConfig
) -> tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    value, g_z = suta_loss(z, cfg)
    back = g_z @ m.W.T  # (L, F)
    g_gamma = (back * u.features).sum(axis=0)
    g_b = back.sum(axis=0)
    return value, g_gamma, g_b, z


def loss_and_affine_grad(
    m: AcousticModel, u: Utterance, cfg: TtaConfig
) -> tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    """(loss, d/d gamma, d/d b, logits) at the model's current parameters."""
    return _loss_affine_from_logits(m, u, forward(m, u), cfg)


def _apply_update(
    m: AcousticModel,
    opt_state: OptState,
    g_gamma: np.ndarray,
    g_b: np.ndarray,
    cfg: TtaConfig,
) -> tuple[AcousticModel, OptState]:
    m2 = m.copy()
    if cfg.optimizer == "sgd":
        opt2 = OptState(
            m_gamma=opt_state.m_gamma,
            v_gamma=opt_state.v_gamma,
            m_b=opt_state.m_b,
            v_b=opt_state.v_b,
            t=opt_state.t + 1,
        )
        m2.gamma = m.gamma - cfg.learning_rate * g_gamma
        m2.b = m.b - cfg.learning_rate * g_b
    else:
        t = opt_state.t + 1
        m_g = cfg.beta1 * opt_state.m_gamma + (1 - cfg.beta1) * g_gamma
        v_g = cfg.beta2 * opt_state.v_gamma + (1 - cfg.beta2) * g_gamma**2
        m_b_ = cfg.beta1 * opt_state.m_b + (1 - cfg.beta1) * g_b
        v_b_ = cfg.beta2 * opt_state.v_b + (1 - cfg.beta2) * g_b**2
        corr1 = 1 - cfg.beta1**t
        corr2 = 1 - cfg.beta2**t
        m2.gamma = m.gamma - cfg.learning_rate * (m_g / corr1) / (
            np.sqrt(v_g / corr2) + cfg.eps
        )
        m2.b = m.b - cfg.learning_rate * (m_b_ / corr1) / (
            np.sqrt(v_b_ / corr2) + cfg.eps
        )
        opt2 = OptState(m_gamma=m_g, v_gamma=v_g, m_b=m_b_, v_b=v_b_, t=t)
    return m2, opt2


def adapt_step(
    m: AcousticModel, u: Utterance, opt_state: OptState, cfg: TtaConfig
) -> tuple[AcousticModel, OptState, float]:
    """One forward/backward/update on (gamma, b); W and c are untouched.

    Raises TtaDivergenceError on a non-finite loss or gradient so the caller
    can truncate the trajectory at the last finite step.
    """
    value, g_gamma, g_b, _ = loss_and_affine_grad(m, u, cfg)
    if not (
        np.isfinite(value)
        and np.all(np.isfinite(g_gamma))
        and np.all(np.isfinite(g_b))
    ):
        raise TtaDivergenceError(f"non-finite loss/gradient on utterance {u.id}")
    m2, opt2 = _apply_update(m, opt_state, g_gamma, g_b, cfg)
    if not (np.all(np.isfinite(m2.gamma)) and np.all(np.isfinite(m2.b))):
        raise TtaDivergenceError(f"non-finite parameters on utterance {u.id}")
    return m2, opt2, value


@dataclass
class StepRecord:
    step: int
    gamma: np.ndarray
    b: np.ndarray
    logits: np.ndarray
    transcript: tuple[str, ...]  # greedy decode of this step's logits
    acoustic_score: float  # mean log confidence
    loss: float


@dataclass
class AdaptTrajectory:
    steps: list[StepRecord]

    def __len__(self) -> int:
        return len(self.steps)

    def __getitem__(self, i: int) -> StepRecord:
        return self.steps[i]

    def __iter__(self):
        return iter(self.steps)

    @property
    def last_step(self) -> int:
        return self.steps[-1].step

    def acoustic_scores(self) -> list[float]:
        return [r.acoustic_score for r in self.steps]


def iter_adapt(m: AcousticModel, u: Utterance, cfg: TtaConfig) -> Iterator[StepRecord]:
    """Yield step records 0..max_steps, adapting a private copy of ``m``.

    The caller's model is never mutated; stopping iteration early simply
    abandons the private copy, so online selection can drive this lazily.
    """
    cfg.validate()
    work = m.copy()
    work.reset_to_source()
    opt = OptState.init(m.feature_dim)
    for t in range(cfg.max_steps + 1):
        z = forward(work, u)
        if not np.all(np.isfinite(z)):
            return
        value, g_gamma, g_b, _ = _loss_affine_from_logits(work, u, z, cfg)
        if not np.isfinite(value):
            return
        yield StepRecord(
            step=t,
            gamma=work.gamma.copy(),
            b=work.b.copy(),
            logits=z,
            transcript=greedy_decode(z, m.alphabet),
            acoustic_score=mean_log_confidence(z),
            loss=value,
        )
        if t == cfg.max_steps:
            return
        if not (np.all(np.isfinite(g_gamma)) and np.all(np.isfinite(g_b))):
            return
        work, opt = _apply_update(work, opt, g_gamma, g_b, cfg)
        if not (np.all(np.isfinite(work.gamma)) and np.all(np.isfinite(work.b))):
            return


def adapt_trajectory(m: AcousticModel, u: Utterance, cfg: TtaConfig) -> AdaptTrajectory:
    """Full (possibly truncated) trajectory; episodic by construction."""
    steps = list(iter_adapt(m, u, cfg))
    if not steps:
        raise TtaDivergenceError(f"no finite step for utterance {u.id}")
    return AdaptTrajectory(steps=steps)


def dump_trajectory(traj: AdaptTrajectory, path: str) -> None:
    """Debug dump: one JSON line per step with loss, acoustic score, words."""
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        for r in traj:
            fh.write(
                json.dumps(
                    {
                        "step": r.step,
                        "loss": r.loss,
                        "acoustic_score": r.acoustic_score,
                        "transcript": list(r.transcript),
                    }
                )
                + "\n"
            )
    os.replace(tmp, path)
