"""Test-time adaptation of a compact CTC recognizer with n-gram rescoring
and automatic adaptation-step selection, plus the benchmark harness around
them."""

from .acoustic import (
    AcousticModel,
    TrainConfig,
    confidence,
    forward,
    frame_accuracy,
    load_model,
    save_model,
    train_source,
)
from .corpus import (
    Alphabet,
    Corpus,
    CorpusSpec,
    Corruption,
    Utterance,
    corrupt,
    corrupt_corpus,
    default_alphabet,
    filter_by_length,
    load_jsonl,
    save_jsonl,
    synth_corpus,
)
from .decode import Decoded, FusionConfig, beam_search, collapse_path, greedy_decode
from .evaluate import EvalReport, RunSettings, run_method, sweep, wer
from .kernels import active_backend
from .lm import (
    BOS,
    EOS,
    UNK,
    NGramModel,
    load_arpa,
    save_arpa,
    score_incremental,
    score_sequence,
    train_lm,
)
from .select import (
    SelectConfig,
    SelectionResult,
    acoustic_score,
    oracle_step,
    select_step,
    select_step_online,
    select_step_random,
    threshold_steps,
)
from .tta import (
    AdaptTrajectory,
    StepRecord,
    TtaConfig,
    TtaDivergenceError,
    adapt_step,
    adapt_trajectory,
    iter_adapt,
    suta_loss,
)

__version__ = "0.1.0"
