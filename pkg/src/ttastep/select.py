"""Automatic adaptation-step selection.

Valid steps are those whose acoustic score (mean log frame confidence)
clears a threshold tau; among the valid steps the one whose greedy
transcript the external LM likes best wins, earliest index on ties. If no
step is valid, the last step of the trajectory is selected. The online
variant drives adaptation step by step and stops once the best linguistic
score has gone ``patience`` consecutive valid steps without a strict
improvement (the counter resets on every strict improvement).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .acoustic import AcousticModel, mean_log_confidence
from .corpus import Utterance
from .decode import FusionConfig, beam_search
from .lm import NGramModel, score_sequence
from .tta import AdaptTrajectory, StepRecord, TtaConfig, iter_adapt


@dataclass(frozen=True)
class SelectConfig:
    tau: float = -0.05
    patience: int = 3
    # None defers to the adaptation config's max_steps
    max_steps: int | None = None
    include_eos: bool = True

    def validate(self) -> None:
        if self.patience < 1:
            raise ValueError("patience must be >= 1")


@dataclass
class StepAudit:
    step: int
    acoustic_score: float
    lm_score: float | None  # None when the step failed the threshold


@dataclass
class SelectionResult:
    t_star: int
    valid_set_size: int
    steps_executed: int
    trail: list[StepAudit] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "t_star": self.t_star,
            "valid_set_size": self.valid_set_size,
            "steps_executed": self.steps_executed,
            "trail": [
                {"step": a.step, "acoustic_score": a.acoustic_score, "lm_score": a.lm_score}
                for a in self.trail
            ],
        }


def acoustic_score(z: np.ndarray) -> float:
    """Average log confidence over all frames; 0 is perfect confidence."""
    return mean_log_confidence(z)


def threshold_steps(scores, tau: float) -> set[int]:
    """Indices of steps whose acoustic score clears the threshold."""
    return {t for t, s in enumerate(scores) if s >= tau}


class _TranscriptScorer:
    """Memoized LM scoring; greedy transcripts repeat across steps a lot."""

    def __init__(self, lm: NGramModel, include_eos: bool):
        self.lm = lm
        self.include_eos = include_eos
        self._cache: dict[tuple[str, ...], float] = {}

    def __call__(self, words: tuple[str, ...]) -> float:
        score = self._cache.get(words)
        if score is None:
            score = score_sequence(self.lm, words, include_eos=self.include_eos)
            self._cache[words] = score
        return score


def select_step(
    traj: AdaptTrajectory,
    lm: NGramModel | None,
    cfg: SelectConfig,
    score_fn=None,
) -> SelectionResult:
    """Offline selection over a complete (possibly truncated) trajectory.

    ``score_fn`` replaces the LM transcript scorer when given (the property
    tests drive the selection rules with scripted scores through it)."""
    cfg.validate()
    scorer = score_fn if score_fn is not None else _TranscriptScorer(lm, cfg.include_eos)
    best_t: int | None = None
    best_score = -np.inf
    valid = 0
    trail: list[StepAudit] = []
    for rec in traj:
        s = rec.acoustic_score
        if s >= cfg.tau:
            valid += 1
            ls = scorer(rec.transcript)
            trail.append(StepAudit(rec.step, s, ls))
            if best_t is None or ls > best_score:
                best_t, best_score = rec.step, ls
        else:
            trail.append(StepAudit(rec.step, s, None))
    t_star = traj.last_step if best_t is None else best_t
    return SelectionResult(
        t_star=t_star,
        valid_set_size=valid,
        steps_executed=traj.last_step,
        trail=trail,
    )


class OnlineSelector:
    """Early-stopping state machine over per-step scores.

    Feed steps in order via ``observe``; it calls ``lm_score_fn`` only for
    valid steps and answers whether adaptation should continue. The patience
    counter resets on every strict improvement of the running best; equal
    scores count as non-improvement.
    """

    def __init__(self, tau: float, patience: int):
        self.tau = tau
        self.patience = patience
        self.best_t: int | None = None
        self.best_score = -np.inf
        self.stale = 0
        self.valid = 0
        self.trail: list[StepAudit] = []

    def observe(self, step: int, acoustic: float, lm_score_fn) -> bool:
        if acoustic < self.tau:
            self.trail.append(StepAudit(step, acoustic, None))
            return True
        self.valid += 1
        ls = lm_score_fn()
        self.trail.append(StepAudit(step, acoustic, ls))
        if self.best_t is None or ls > self.best_score:
            self.best_t, self.best_score = step, ls
            self.stale = 0
            return True
        self.stale += 1
        return self.stale < self.patience


def select_step_online(
    m: AcousticModel,
    u: Utterance,
    lm: NGramModel,
    tta_cfg: TtaConfig,
    cfg: SelectConfig,
) -> tuple[SelectionResult, list[StepRecord]]:
    """Drive adaptation step by step with early stopping.

    Returns the selection plus the records actually produced, so callers can
    decode the selected step without re-adapting. With patience >= max_steps
    this selects exactly what select_step would on the full trajectory.
    """
    cfg.validate()
    if cfg.max_steps is not None and cfg.max_steps != tta_cfg.max_steps:
        tta_cfg = replace(tta_cfg, max_steps=cfg.max_steps)
    scorer = _TranscriptScorer(lm, cfg.include_eos)
    machine = OnlineSelector(cfg.tau, cfg.patience)
    records: list[StepRecord] = []
    for rec in iter_adapt(m, u, tta_cfg):
        records.append(rec)
        if not machine.observe(
            rec.step, rec.acoustic_score, lambda r=rec: scorer(r.transcript)
        ):
            break
    if not records:
        raise ValueError(f"no finite adaptation step for utterance {u.id}")
    t_star = records[-1].step if machine.best_t is None else machine.best_t
    result = SelectionResult(
        t_star=t_star,
        valid_set_size=machine.valid,
        steps_executed=records[-1].step,
        trail=machine.trail,
    )
    return result, records


def select_step_random(traj: AdaptTrajectory, tau: float, seed) -> SelectionResult:
    """Ablation selector: uniform choice over the valid set, seeded."""
    scores = traj.acoustic_scores()
    valid = sorted(threshold_steps(scores, tau))
    rng = np.random.default_rng(seed)
    if valid:
        t_star = int(valid[rng.integers(len(valid))])
    else:
        t_star = traj.last_step
    trail = [
        StepAudit(rec.step, rec.acoustic_score, None) for rec in traj
    ]
    return SelectionResult(
        t_star=t_star,
        valid_set_size=len(valid),
        steps_executed=traj.last_step,
        trail=trail,
    )


def oracle_step(
    traj: AdaptTrajectory,
    reference: tuple[str, ...],
    lm: NGramModel | None,
    fusion_cfg: FusionConfig,
    alphabet,
) -> int:
    """Reference-aware selector: beam-decode every step, return the index
    with the lowest WER, earliest on ties."""
    from .evaluate import wer

    best_t = 0
    best_edits = None
    for rec in traj:
        hyp = beam_search(rec.logits, lm, fusion_cfg, alphabet)
        words = hyp[0].words if hyp else ()
        edits, _ = wer(reference, words)
        if best_edits is None or edits < best_edits:
            best_t, best_edits = rec.step, edits
    return best_t
