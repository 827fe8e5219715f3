"""WER computation, end-to-end method runners, sweeps and report files.

Corpus WER is micro-averaged (total edits over total reference words).
Wall time is normalized per second of synthetic audio, where one second is
``frame_rate`` frames (default 50). All numeric results are functions of
the inputs and seeds alone; timing fields are the only run-to-run variant.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .acoustic import AcousticModel, forward
from .corpus import Corpus, Utterance
from .decode import FusionConfig, beam_search, greedy_decode
from .kernels import levenshtein
from .lm import NGramModel
from .select import SelectConfig, select_step, select_step_online, select_step_random
from .tta import TtaConfig, adapt_trajectory

METHODS = (
    "source",
    "suta",
    "rescoring",
    "suta_rescoring",
    "suta_lm",
    "suta_lm_offline",
    "suta_lm_no_threshold",
    "random_step",
    "oracle",
    "fixed_step",
)

DEFAULT_FRAME_RATE = 50.0


def wer(reference, hypothesis) -> tuple[int, float]:
    """Word-level edit distance and rate; the reference must be non-empty."""
    ref = tuple(reference)
    hyp = tuple(hypothesis)
    if not ref:
        raise ValueError("reference must be non-empty")
    ids: dict[str, int] = {}
    for w in ref + hyp:
        ids.setdefault(w, len(ids))
    a = np.fromiter((ids[w] for w in ref), dtype=np.int32, count=len(ref))
    b = np.fromiter((ids[w] for w in hyp), dtype=np.int32, count=len(hyp))
    edits = int(levenshtein(a, b))
    return edits, edits / len(ref)


@dataclass(frozen=True)
class RunSettings:
    """Everything a method runner needs besides the models and data."""

    tta: TtaConfig = field(default_factory=TtaConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    select: SelectConfig = field(default_factory=SelectConfig)
    frame_rate: float = DEFAULT_FRAME_RATE
    fixed_step: int | None = None
    seed: int = 0  # feeds the random_step selector
    workers: int = 1


@dataclass
class UttResult:
    utt_id: str
    t_star: int
    steps_executed: int
    edits: int
    ref_len: int
    wer: float
    duration_sec: float
    wall_time: float
    transcript: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "utt_id": self.utt_id,
            "t_star": self.t_star,
            "steps_executed": self.steps_executed,
            "edits": self.edits,
            "ref_len": self.ref_len,
            "wer": self.wer,
            "duration_sec": self.duration_sec,
            "wall_time": self.wall_time,
            "transcript": list(self.transcript),
        }


@dataclass
class EvalReport:
    method: str
    corpus_name: str
    corpus_wer: float  # total edits / total reference words
    avg_t_star: float
    avg_steps_executed: float
    wall_time_per_sec: float  # seconds of compute per second of audio
    utterances: list[UttResult]

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "corpus": self.corpus_name,
            "corpus_wer": self.corpus_wer,
            "avg_t_star": self.avg_t_star,
            "avg_steps_executed": self.avg_steps_executed,
            "wall_time_per_sec": self.wall_time_per_sec,
            "utterances": [u.to_dict() for u in self.utterances],
        }


def _eval_utterance(
    method: str,
    u: Utterance,
    am: AcousticModel,
    lm: NGramModel | None,
    settings: RunSettings,
) -> UttResult:
    alphabet = am.alphabet
    start = time.perf_counter()

    def beam_at(logits) -> tuple[str, ...]:
        hyps = beam_search(logits, lm, settings.fusion, alphabet)
        return hyps[0].words if hyps else ()

    if method == "source":
        words = greedy_decode(forward(am, u), alphabet)
        t_star, steps = 0, 0
    elif method == "rescoring":
        words = beam_at(forward(am, u))
        t_star, steps = 0, 0
    elif method == "suta":
        traj = adapt_trajectory(am, u, settings.tta)
        words = traj.steps[-1].transcript
        t_star = steps = traj.last_step
    elif method == "suta_rescoring":
        traj = adapt_trajectory(am, u, settings.tta)
        words = beam_at(traj.steps[-1].logits)
        t_star = steps = traj.last_step
    elif method == "fixed_step":
        if settings.fixed_step is None:
            raise ValueError("fixed_step method requires settings.fixed_step")
        k = min(settings.fixed_step, settings.tta.max_steps)
        traj = adapt_trajectory(am, u, replace(settings.tta, max_steps=k))
        words = beam_at(traj.steps[-1].logits)
        t_star = steps = traj.last_step
    elif method in ("suta_lm", "suta_lm_no_threshold"):
        sel_cfg = settings.select
        if method == "suta_lm_no_threshold":
            sel_cfg = replace(sel_cfg, tau=-math.inf)
        result, records = select_step_online(u=u, m=am, lm=lm, tta_cfg=settings.tta, cfg=sel_cfg)
        rec = next(r for r in records if r.step == result.t_star)
        words = beam_at(rec.logits)
        t_star, steps = result.t_star, result.steps_executed
    elif method == "suta_lm_offline":
        traj = adapt_trajectory(am, u, settings.tta)
        result = select_step(traj, lm, settings.select)
        rec = next(r for r in traj if r.step == result.t_star)
        words = beam_at(rec.logits)
        t_star, steps = result.t_star, result.steps_executed
    elif method == "random_step":
        traj = adapt_trajectory(am, u, settings.tta)
        seed_tag = int.from_bytes(u.id.encode("utf-8")[-8:], "little")
        result = select_step_random(traj, settings.select.tau, seed=[settings.seed, seed_tag])
        rec = next(r for r in traj if r.step == result.t_star)
        words = beam_at(rec.logits)
        t_star, steps = result.t_star, result.steps_executed
    elif method == "oracle":
        traj = adapt_trajectory(am, u, settings.tta)
        best_t, best_edits, best_words = 0, None, ()
        for rec in traj:
            cand = beam_at(rec.logits)
            edits, _ = wer(u.reference, cand)
            if best_edits is None or edits < best_edits:
                best_t, best_edits, best_words = rec.step, edits, cand
        words = best_words
        t_star, steps = best_t, traj.last_step
    else:
        raise ValueError(f"unknown method {method!r}")

    wall = time.perf_counter() - start
    edits, rate = wer(u.reference, words)
    return UttResult(
        utt_id=u.id,
        t_star=t_star,
        steps_executed=steps,
        edits=edits,
        ref_len=len(u.reference),
        wer=rate,
        duration_sec=u.num_frames / settings.frame_rate,
        wall_time=wall,
        transcript=words,
    )


def _eval_many(args) -> list[UttResult]:
    method, utterances, am, lm, settings = args
    return [_eval_utterance(method, u, am, lm, settings) for u in utterances]


def run_method(
    method: str,
    corpus: Corpus,
    am: AcousticModel,
    lm: NGramModel | None,
    settings: RunSettings,
    corpus_name: str = "corpus",
) -> EvalReport:
    """Evaluate one method over a corpus.

    Aggregation is ordered by utterance id so the worker count never changes
    any reported number (only the timing fields move run to run).
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    if method not in ("source", "suta") and lm is None:
        raise ValueError(f"method {method!r} requires a language model")

    utterances = sorted(corpus.utterances, key=lambda u: u.id)
    if settings.workers > 1 and len(utterances) > 1:
        chunks = [
            (method, utterances[i :: settings.workers], am, lm, settings)
            for i in range(settings.workers)
        ]
        with ProcessPoolExecutor(max_workers=settings.workers) as pool:
            parts = list(pool.map(_eval_many, chunks))
        results = [r for part in parts for r in part]
        results.sort(key=lambda r: r.utt_id)
    else:
        results = [_eval_utterance(method, u, am, lm, settings) for u in utterances]

    total_edits = sum(r.edits for r in results)
    total_words = sum(r.ref_len for r in results)
    total_wall = sum(r.wall_time for r in results)
    total_dur = sum(r.duration_sec for r in results)
    n = max(len(results), 1)
    return EvalReport(
        method=method,
        corpus_name=corpus_name,
        corpus_wer=total_edits / total_words if total_words else 0.0,
        avg_t_star=sum(r.t_star for r in results) / n,
        avg_steps_executed=sum(r.steps_executed for r in results) / n,
        wall_time_per_sec=total_wall / total_dur if total_dur else 0.0,
        utterances=results,
    )


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------


@dataclass
class SweepRow:
    parameter: str
    value: float
    corpus_name: str
    corpus_wer: float
    avg_t_star: float
    avg_steps_executed: float
    wall_time_per_sec: float

    def to_dict(self) -> dict:
        return self.__dict__.copy()


def _fixed_step_sweep(
    values, corpus, am, lm, settings, corpus_name
) -> list[SweepRow]:
    # One trajectory per utterance serves every requested step value.
    steps = sorted({int(v) for v in values})
    max_needed = max(steps)
    tta_cfg = replace(settings.tta, max_steps=max_needed)
    totals = {k: [0, 0.0] for k in steps}  # edits, wall
    total_words = 0
    total_dur = 0.0
    for u in sorted(corpus.utterances, key=lambda x: x.id):
        t0 = time.perf_counter()
        traj = adapt_trajectory(am, u, tta_cfg)
        traj_wall = time.perf_counter() - t0
        total_words += len(u.reference)
        total_dur += u.num_frames / settings.frame_rate
        per_step_share = traj_wall / max(max_needed, 1)
        for k in steps:
            rec = traj.steps[min(k, traj.last_step)]
            t0 = time.perf_counter()
            hyps = beam_search(rec.logits, lm, settings.fusion, am.alphabet)
            decode_wall = time.perf_counter() - t0
            words = hyps[0].words if hyps else ()
            edits, _ = wer(u.reference, words)
            totals[k][0] += edits
            totals[k][1] += decode_wall + per_step_share * k
    return [
        SweepRow(
            parameter="fixed_step",
            value=float(k),
            corpus_name=corpus_name,
            corpus_wer=totals[k][0] / total_words if total_words else 0.0,
            avg_t_star=float(k),
            avg_steps_executed=float(k),
            wall_time_per_sec=totals[k][1] / total_dur if total_dur else 0.0,
        )
        for k in steps
    ]


def sweep(
    parameter: str,
    values,
    corpus: Corpus,
    am: AcousticModel,
    lm: NGramModel | None,
    settings: RunSettings,
    corpus_name: str = "corpus",
) -> list[SweepRow]:
    """One evaluation per value of tau / fixed_step / alpha.

    tau sweeps the online-selection threshold, fixed_step sweeps the
    always-adapt-k-steps strategy (step 0 is plain rescoring), alpha sweeps
    the fusion weight of rescoring alone.
    """
    values = list(values)
    if not values:
        raise ValueError("values must be non-empty")
    if parameter == "fixed_step":
        return _fixed_step_sweep(values, corpus, am, lm, settings, corpus_name)
    rows = []
    for v in values:
        if parameter == "tau":
            st = replace(settings, select=replace(settings.select, tau=float(v)))
            report = run_method("suta_lm", corpus, am, lm, st, corpus_name)
        elif parameter == "alpha":
            st = replace(settings, fusion=replace(settings.fusion, alpha=float(v)))
            report = run_method("rescoring", corpus, am, lm, st, corpus_name)
        else:
            raise ValueError(f"unknown sweep parameter {parameter!r}")
        rows.append(
            SweepRow(
                parameter=parameter,
                value=float(v),
                corpus_name=corpus_name,
                corpus_wer=report.corpus_wer,
                avg_t_star=report.avg_t_star,
                avg_steps_executed=report.avg_steps_executed,
                wall_time_per_sec=report.wall_time_per_sec,
            )
        )
    return rows


# ---------------------------------------------------------------------------
# Report files
# ---------------------------------------------------------------------------


def _atomic_write(path: str, text: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_report_json(reports: list[EvalReport], path: str, config: dict | None = None) -> None:
    payload = {
        "reports": [r.to_dict() for r in reports],
    }
    if config is not None:
        payload["config"] = config
    _atomic_write(path, json.dumps(payload, indent=2) + "\n")


def write_results_csv(reports: list[EvalReport], path: str, seed: int | None = None) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf)
    header = ["corpus", "method", "wer", "avg_t_star", "avg_steps_executed", "wall_time_per_sec"]
    if seed is not None:
        header.insert(0, "seed")
    writer.writerow(header)
    for r in reports:
        row = [
            r.corpus_name,
            r.method,
            f"{100.0 * r.corpus_wer:.4f}",
            f"{r.avg_t_star:.4f}",
            f"{r.avg_steps_executed:.4f}",
            f"{r.wall_time_per_sec:.6f}",
        ]
        if seed is not None:
            row.insert(0, seed)
        writer.writerow(row)
    _atomic_write(path, buf.getvalue())


def write_sweep_csv(rows: list[SweepRow], path: str) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(
        ["parameter", "value", "corpus", "wer", "avg_t_star", "avg_steps_executed", "wall_time_per_sec"]
    )
    for r in rows:
        writer.writerow(
            [
                r.parameter,
                r.value,
                r.corpus_name,
                f"{100.0 * r.corpus_wer:.4f}",
                f"{r.avg_t_star:.4f}",
                f"{r.avg_steps_executed:.4f}",
                f"{r.wall_time_per_sec:.6f}",
            ]
        )
    _atomic_write(path, buf.getvalue())
