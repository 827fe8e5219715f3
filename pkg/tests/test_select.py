import math

import numpy as np
import pytest

from ttastep.decode import FusionConfig, beam_search
from ttastep.evaluate import wer
from ttastep.select import (
    OnlineSelector,
    SelectConfig,
    acoustic_score,
    oracle_step,
    select_step,
    select_step_online,
    select_step_random,
    threshold_steps,
)
from ttastep.tta import AdaptTrajectory, StepRecord, TtaConfig


def _fake_traj(acoustic_scores, transcripts=None):
    """Scripted trajectory: records carry only what selection reads."""
    steps = []
    for t, s in enumerate(acoustic_scores):
        words = (f"w{t}",) if transcripts is None else transcripts[t]
        steps.append(
            StepRecord(
                step=t,
                gamma=np.ones(1),
                b=np.zeros(1),
                logits=np.zeros((1, 2)),
                transcript=words,
                acoustic_score=float(s),
                loss=0.0,
            )
        )
    return AdaptTrajectory(steps=steps)


def _table(scores):
    mapping = {(f"w{t}",): float(v) for t, v in enumerate(scores)}
    return lambda words: mapping[words]


class TestAcousticScore:
    def test_perfect_confidence(self):
        z = np.full((4, 3), -60.0)
        z[:, 0] = 60.0
        assert acoustic_score(z) == pytest.approx(0.0, abs=1e-10)

    def test_uniform(self):
        assert acoustic_score(np.zeros((5, 4))) == pytest.approx(math.log(0.25))

    def test_direct_arithmetic(self):
        # two frames with confidences 0.9 and 0.5
        z = np.zeros((2, 2))
        z[0, 0] = math.log(0.9 / 0.1)
        z[1, 0] = 0.0  # uniform over 2 classes -> 0.5
        want = (math.log(0.9) + math.log(0.5)) / 2
        assert acoustic_score(z) == pytest.approx(want, abs=1e-12)


class TestThreshold:
    def test_definition(self):
        assert threshold_steps([-0.01, -0.2, -0.04], -0.05) == {0, 2}

    def test_minus_infinity_keeps_all(self):
        assert threshold_steps([-5.0, -1.0, -0.3], -math.inf) == {0, 1, 2}

    def test_zero_excludes_imperfect(self):
        assert threshold_steps([-0.001, -1e-9], 0.0) == set()

    def test_boundary_inclusive(self):
        assert threshold_steps([-0.05], -0.05) == {0}


class TestSelectStep:
    def test_empty_valid_set_falls_back_to_last(self):
        traj = _fake_traj([-1.0, -2.0, -3.0])
        res = select_step(traj, None, SelectConfig(tau=-0.05), score_fn=_table([0, 0, 0]))
        assert res.t_star == 2
        assert res.valid_set_size == 0

    def test_ties_prefer_smallest_index(self):
        traj = _fake_traj([-1.0, -0.01, -2.0, -0.01])
        res = select_step(
            traj, None, SelectConfig(tau=-0.05), score_fn=_table([0, -7.0, 0, -7.0])
        )
        assert res.t_star == 1

    def test_argmax_over_valid(self):
        traj = _fake_traj([-0.01, -1.0, -0.02])
        res = select_step(
            traj, None, SelectConfig(tau=-0.05), score_fn=_table([-5.0, 99.0, -3.0])
        )
        assert res.t_star == 2  # step 1 is invalid, its high score is ignored

    def test_property_suite_scripted(self):
        # Eq.(3) construction / Eq.(4) argmax / tie-break / fallback /
        # monotone-transform invariance over many random score trajectories
        rng = np.random.default_rng(0)
        cfg = SelectConfig(tau=-0.05)
        for _ in range(1000):
            n = int(rng.integers(1, 12))
            acoustics = rng.uniform(-0.2, 0.0, size=n)
            lm_scores = np.round(rng.normal(-10, 3, size=n), 1)  # rounding forces ties
            traj = _fake_traj(acoustics)
            res = select_step(traj, None, cfg, score_fn=_table(lm_scores))

            valid = threshold_steps(list(acoustics), cfg.tau)
            assert res.valid_set_size == len(valid)
            if not valid:
                assert res.t_star == n - 1
            else:
                best = max(sorted(valid), key=lambda t: (lm_scores[t], -t))
                assert res.t_star == best
                # strictly increasing transform leaves t* unchanged
                res2 = select_step(
                    traj, None, cfg,
                    score_fn=_table([math.exp(0.3 * s) + 5 for s in lm_scores]),
                )
                assert res2.t_star == res.t_star


class TestOnlineSelector:
    def test_strictly_improving_never_stops(self):
        sel = OnlineSelector(tau=-0.05, patience=3)
        for t in range(10):
            assert sel.observe(t, -0.01, lambda t=t: float(t))
        assert sel.best_t == 9

    def test_flat_scores_stop_after_patience(self):
        # valid steps 2..6, best at step 2 then flat with P=3: the third
        # non-improving valid step is step 5, so adaptation stops there
        sel = OnlineSelector(tau=-0.05, patience=3)
        outcomes = {}
        for t in range(7):
            acoustic = -1.0 if t < 2 else -0.01
            outcomes[t] = sel.observe(t, acoustic, lambda: -4.0)
            if not outcomes[t]:
                break
        assert outcomes[4] is True
        assert outcomes[5] is False
        assert sel.best_t == 2

    def test_counter_resets_on_improvement(self):
        sel = OnlineSelector(tau=-0.05, patience=2)
        scores = [-5.0, -5.0, -4.0, -4.0, -4.0]
        cont = [sel.observe(t, -0.01, lambda s=s: s) for t, s in enumerate(scores)]
        assert cont == [True, True, True, True, False]
        assert sel.best_t == 2

    def test_invalid_steps_do_not_count_toward_patience(self):
        sel = OnlineSelector(tau=-0.05, patience=2)
        assert sel.observe(0, -0.01, lambda: -4.0)
        for t in range(1, 8):
            assert sel.observe(t, -1.0, lambda: 0.0)
        assert sel.valid == 1


class TestOnlineOffline:
    def test_equivalence_when_patient(self, tiny_corpus, tiny_model, tiny_lm):
        tta_cfg = TtaConfig(max_steps=6, learning_rate=0.05)
        sel_cfg = SelectConfig(tau=-0.2, patience=6)
        for u in tiny_corpus.utterances[:10]:
            from ttastep.tta import adapt_trajectory

            offline = select_step(adapt_trajectory(tiny_model, u, tta_cfg), tiny_lm, sel_cfg)
            online, _ = select_step_online(tiny_model, u, tiny_lm, tta_cfg, sel_cfg)
            assert online.t_star == offline.t_star
            assert online.valid_set_size == offline.valid_set_size

    def test_online_executes_fewer_steps_when_flat(self, tiny_corpus, tiny_model, tiny_lm):
        tta_cfg = TtaConfig(max_steps=20, learning_rate=0.0, optimizer="sgd")
        sel_cfg = SelectConfig(tau=-math.inf, patience=3)
        u = tiny_corpus.utterances[0]
        # zero learning rate: every step repeats step 0, so the linguistic
        # score never improves and patience triggers at step 3
        online, records = select_step_online(tiny_model, u, tiny_lm, tta_cfg, sel_cfg)
        assert online.steps_executed == 3
        assert online.t_star == 0
        assert len(records) == 4


class TestSerialization:
    def test_selection_result_round_trips_json(self):
        import json

        traj = _fake_traj([-0.01, -1.0])
        res = select_step(traj, None, SelectConfig(tau=-0.05), score_fn=_table([-3.0, 0]))
        payload = json.loads(json.dumps(res.to_dict()))
        assert payload["t_star"] == res.t_star
        assert payload["trail"][1]["lm_score"] is None


class TestRandomSelector:
    def test_uniform_over_valid_and_seeded(self):
        traj = _fake_traj([-0.01, -1.0, -0.02, -0.01])
        res1 = select_step_random(traj, tau=-0.05, seed=7)
        res2 = select_step_random(traj, tau=-0.05, seed=7)
        assert res1.t_star == res2.t_star
        assert res1.t_star in {0, 2, 3}

    def test_fallback_to_last_when_empty(self):
        traj = _fake_traj([-1.0, -1.0])
        assert select_step_random(traj, tau=-0.05, seed=0).t_star == 1

    def test_covers_valid_set(self):
        traj = _fake_traj([-0.01, -1.0, -0.02, -0.01])
        seen = {select_step_random(traj, tau=-0.05, seed=s).t_star for s in range(50)}
        assert seen == {0, 2, 3}


class TestOracle:
    def test_identical_wer_every_step_gives_zero(self, tiny_model, tiny_lm, tiny_corpus):
        u = tiny_corpus.utterances[0]
        from ttastep.tta import adapt_trajectory

        traj = adapt_trajectory(tiny_model, u, TtaConfig(max_steps=3, learning_rate=0.0, optimizer="sgd"))
        got = oracle_step(traj, u.reference, tiny_lm, FusionConfig(beam_width=8), tiny_model.alphabet)
        assert got == 0

    def test_matches_exhaustive_scan(self, tiny_model, tiny_lm, tiny_corpus):
        cfg = FusionConfig(beam_width=8)
        tta_cfg = TtaConfig(max_steps=4, learning_rate=0.08)
        from ttastep.tta import adapt_trajectory

        for u in tiny_corpus.utterances[:6]:
            traj = adapt_trajectory(tiny_model, u, tta_cfg)
            got = oracle_step(traj, u.reference, tiny_lm, cfg, tiny_model.alphabet)
            # independent scan, coded from scratch
            best = None
            for rec in traj:
                hyp = beam_search(rec.logits, tiny_lm, cfg, tiny_model.alphabet)
                e, _ = wer(u.reference, hyp[0].words if hyp else ())
                if best is None or e < best[0]:
                    best = (e, rec.step)
            assert got == best[1]
