"""Command-line frontend: synth, train-am, train-lm, run, sweep, report.

Every command reads the same nested JSON config; flags override the pieces
that vary between invocations (paths, seeds, methods). Outputs are written
atomically and the resolved config lands beside them. Exit codes: 0 ok,
2 missing file, 3 config/schema problem, 4 data or dimension mismatch,
5 nothing to report, 1 anything else.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import statistics
import sys

from . import acoustic, corpus as corpus_mod, evaluate, lm as lm_mod
from .config import ConfigError, RunConfig, config_to_dict, dump_config, load_config
from .evaluate import RunSettings, run_method, sweep

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_MISSING_FILE = 2
EXIT_CONFIG = 3
EXIT_DATA = 4
EXIT_EMPTY = 5

log = logging.getLogger("ttastep")


class DataError(ValueError):
    pass


def _setup_logging() -> None:
    level = os.environ.get("TTASTEP_LOG", "info").upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO), format="%(message)s")


def _load_cfg(args) -> RunConfig:
    if args.config is None:
        return RunConfig()
    return load_config(args.config)


def _seeds(cfg: RunConfig, args) -> list[int]:
    return list(args.seed) if args.seed else list(cfg.eval.seeds)


def _test_corpus_path(out: str, domain: str, seed: int) -> str:
    return os.path.join(out, f"test_{domain}_s{seed}.jsonl")


def cmd_synth(args) -> int:
    cfg = _load_cfg(args)
    os.makedirs(args.out, exist_ok=True)
    train = corpus_mod.synth_corpus(cfg.corpus.spec(), seed=cfg.acoustic.seed)
    corpus_mod.save_jsonl(train, os.path.join(args.out, "train.jsonl"))
    log.info("wrote train.jsonl (%d utterances)", len(train))
    for seed in _seeds(cfg, args):
        clean = corpus_mod.synth_corpus(
            cfg.corpus.spec(cfg.test.num_utterances), seed=cfg.test.seed + seed
        )
        clean = corpus_mod.filter_by_length(clean, cfg.test.max_frames)
        corpus_mod.save_jsonl(clean, _test_corpus_path(args.out, "clean", seed))
        for dom in cfg.test.domains:
            shifted = corpus_mod.corrupt_corpus(clean, dom.corruption(seed))
            corpus_mod.save_jsonl(shifted, _test_corpus_path(args.out, dom.name, seed))
            log.info("wrote test_%s_s%d.jsonl (%d utterances)", dom.name, seed, len(shifted))
    dump_config(cfg, os.path.join(args.out, "effective_config.json"))
    return EXIT_OK


def cmd_train_am(args) -> int:
    cfg = _load_cfg(args)
    train = corpus_mod.load_jsonl(args.corpus)
    model = acoustic.train_source(train, cfg.acoustic)
    acc = acoustic.frame_accuracy(model, train)
    acoustic.save_model(model, args.out)
    log.info("trained acoustic model: frame accuracy %.4f -> %s", acc, args.out)
    return EXIT_OK


def cmd_train_lm(args) -> int:
    cfg = _load_cfg(args)
    train = corpus_mod.load_jsonl(args.corpus)
    model = lm_mod.train_lm(train.references(), order=cfg.lm.order, discount=cfg.lm.discount)
    lm_mod.save_arpa(model, args.out)
    log.info("trained %d-gram model (%d entries) -> %s", cfg.lm.order, len(model.logprob), args.out)
    return EXIT_OK


def _settings(cfg: RunConfig, seed: int, args) -> RunSettings:
    return RunSettings(
        tta=cfg.tta,
        fusion=cfg.fusion,
        select=cfg.select,
        frame_rate=cfg.eval.frame_rate,
        seed=seed,
        workers=args.workers if args.workers else cfg.eval.workers,
    )


def cmd_run(args) -> int:
    cfg = _load_cfg(args)
    am = acoustic.load_model(args.am)
    lm = lm_mod.load_arpa(args.lm)
    methods = list(args.method) if args.method else list(cfg.eval.methods)
    for m in methods:
        if m not in evaluate.METHODS:
            raise ConfigError(f"unknown method {m!r}")
    os.makedirs(args.out, exist_ok=True)

    reports = []
    for seed in _seeds(cfg, args):
        for dom in cfg.test.domains:
            path = _test_corpus_path(args.data, dom.name, seed)
            test = corpus_mod.load_jsonl(path)
            if test.alphabet.symbols != am.alphabet.symbols:
                raise DataError(f"{path}: alphabet does not match the acoustic model")
            for method in methods:
                report = run_method(
                    method, test, am, lm, _settings(cfg, seed, args), corpus_name=dom.name
                )
                log.info(
                    "seed=%d corpus=%s method=%s wer=%.2f steps=%.2f",
                    seed, dom.name, method,
                    100 * report.corpus_wer, report.avg_steps_executed,
                )
                reports.append((seed, report))

    evaluate.write_report_json(
        [r for _, r in reports],
        os.path.join(args.out, "report.json"),
        config=config_to_dict(cfg),
    )
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(
        ["seed", "corpus", "method", "wer", "avg_t_star", "avg_steps_executed", "wall_time_per_sec"]
    )
    for seed, r in reports:
        writer.writerow(
            [
                seed, r.corpus_name, r.method,
                f"{100.0 * r.corpus_wer:.4f}",
                f"{r.avg_t_star:.4f}",
                f"{r.avg_steps_executed:.4f}",
                f"{r.wall_time_per_sec:.6f}",
            ]
        )
    evaluate._atomic_write(os.path.join(args.out, "results.csv"), buf.getvalue())
    dump_config(cfg, os.path.join(args.out, "effective_config.json"))
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load_cfg(args)
    am = acoustic.load_model(args.am)
    lm = lm_mod.load_arpa(args.lm)
    values = [float(v) for v in args.values.split(",")]
    os.makedirs(args.out, exist_ok=True)
    rows = []
    for seed in _seeds(cfg, args):
        for dom in cfg.test.domains:
            if args.domain and dom.name not in args.domain:
                continue
            test = corpus_mod.load_jsonl(_test_corpus_path(args.data, dom.name, seed))
            rows.extend(
                sweep(args.param, values, test, am, lm, _settings(cfg, seed, args), dom.name)
            )
    if not rows:
        print("no matching domains for sweep", file=sys.stderr)
        return EXIT_EMPTY
    evaluate.write_sweep_csv(rows, os.path.join(args.out, "sweep.csv"))
    evaluate._atomic_write(
        os.path.join(args.out, "sweep.json"),
        json.dumps([r.to_dict() for r in rows], indent=2) + "\n",
    )
    dump_config(cfg, os.path.join(args.out, "effective_config.json"))
    return EXIT_OK


def cmd_report(args) -> int:
    run_dirs = []
    for root, _dirs, files in os.walk(args.runs):
        if "report.json" in files:
            run_dirs.append(os.path.join(root, "report.json"))
    if not run_dirs:
        print(f"no runs found under {args.runs}", file=sys.stderr)
        return EXIT_EMPTY
    # (corpus, method) -> list of (wer, t_star, steps, wall)
    groups: dict[tuple[str, str], list[tuple[float, float, float, float]]] = {}
    for path in sorted(run_dirs):
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
        for rep in payload["reports"]:
            key = (rep["corpus"], rep["method"])
            groups.setdefault(key, []).append(
                (
                    rep["corpus_wer"],
                    rep["avg_t_star"],
                    rep["avg_steps_executed"],
                    rep["wall_time_per_sec"],
                )
            )
    os.makedirs(args.out, exist_ok=True)
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(
        ["corpus", "method", "runs", "mean_wer", "std_wer",
         "mean_t_star", "mean_steps_executed", "mean_wall_time_per_sec"]
    )
    for (corpus_name, method), vals in sorted(groups.items()):
        wers = [100.0 * v[0] for v in vals]
        writer.writerow(
            [
                corpus_name, method, len(vals),
                f"{statistics.mean(wers):.4f}",
                f"{statistics.stdev(wers):.4f}" if len(wers) > 1 else "0.0000",
                f"{statistics.mean(v[1] for v in vals):.4f}",
                f"{statistics.mean(v[2] for v in vals):.4f}",
                f"{statistics.mean(v[3] for v in vals):.6f}",
            ]
        )
    evaluate._atomic_write(os.path.join(args.out, "summary.csv"), buf.getvalue())

    # Fig. 3 analogue: average selected step per method and corpus
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["corpus", "method", "mean_t_star"])
    for (corpus_name, method), vals in sorted(groups.items()):
        writer.writerow([corpus_name, method, f"{statistics.mean(v[1] for v in vals):.4f}"])
    evaluate._atomic_write(os.path.join(args.out, "steps.csv"), buf.getvalue())
    log.info("aggregated %d run files -> %s", len(run_dirs), args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="ttastep",
        description="test-time adaptation with LM rescoring and automatic step selection",
    )
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", help="JSON run config (defaults apply when omitted)")
        sp.add_argument("--seed", type=int, action="append", help="run seed (repeatable)")
        sp.add_argument("--workers", type=int, default=0, help="utterance-level workers")

    sp = sub.add_parser("synth", help="synthesize train/test corpora")
    common(sp)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("train-am", help="train the source acoustic model")
    common(sp)
    sp.add_argument("--corpus", required=True, help="training corpus .jsonl")
    sp.add_argument("--out", required=True, help="output model .json")
    sp.set_defaults(func=cmd_train_am)

    sp = sub.add_parser("train-lm", help="train the n-gram language model")
    common(sp)
    sp.add_argument("--corpus", required=True, help="training corpus .jsonl")
    sp.add_argument("--out", required=True, help="output ARPA file")
    sp.set_defaults(func=cmd_train_lm)

    sp = sub.add_parser("run", help="evaluate methods on test corpora")
    common(sp)
    sp.add_argument("--data", required=True, help="directory produced by synth")
    sp.add_argument("--am", required=True)
    sp.add_argument("--lm", required=True)
    sp.add_argument("--method", action="append", help="method name (repeatable)")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("sweep", help="sweep tau, fixed_step or alpha")
    common(sp)
    sp.add_argument("--data", required=True)
    sp.add_argument("--am", required=True)
    sp.add_argument("--lm", required=True)
    sp.add_argument("--param", required=True, choices=("tau", "fixed_step", "alpha"))
    sp.add_argument("--values", required=True, help="comma-separated values")
    sp.add_argument("--domain", action="append", help="restrict to these domains")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("report", help="aggregate run directories")
    sp.add_argument("--runs", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_report)

    return p


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"missing file: {exc.filename or exc}", file=sys.stderr)
        return EXIT_MISSING_FILE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # pragma: no cover - last-resort diagnostics
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
