"""Run configuration: one nested JSON file drives every command.

Defaults carry the externally anchored values (max_steps=20, tau=-0.05,
patience=3, alpha=0.5, beta=0); everything else is a desk-tuned analogue.
Unknown keys are rejected so sweep/ablation configs cannot silently typo a
field, and the resolved ("effective") config is always written next to the
outputs.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
from dataclasses import dataclass, field

from .acoustic import TrainConfig
from .corpus import Corruption, CorpusSpec, default_alphabet
from .decode import FusionConfig
from .select import SelectConfig
from .tta import TtaConfig

DEFAULT_VOCABULARY = (
    "aid", "badge", "bead", "cab", "cage", "chef", "chide", "dab", "dice", "dig",
    "each", "egg", "fade", "fig", "gig", "hedge", "hid", "ice", "jab", "jade",
)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class CorpusSection:
    vocabulary: tuple[str, ...] = DEFAULT_VOCABULARY
    alphabet_chars: str = "abcdefghij "
    sentence_length_range: tuple[int, int] = (3, 6)
    frames_per_token_range: tuple[int, int] = (2, 3)
    feature_dim: int = 16
    embedding_seed: int = 7
    embedding_scale: float = 1.5
    num_utterances: int = 160

    def spec(self, num_utterances: int | None = None) -> CorpusSpec:
        return CorpusSpec(
            vocabulary=tuple(self.vocabulary),
            alphabet=default_alphabet(self.alphabet_chars),
            sentence_length_range=tuple(self.sentence_length_range),
            frames_per_token_range=tuple(self.frames_per_token_range),
            feature_dim=self.feature_dim,
            embedding_seed=self.embedding_seed,
            num_utterances=self.num_utterances if num_utterances is None else num_utterances,
            embedding_scale=self.embedding_scale,
        )


@dataclass(frozen=True)
class DomainSection:
    name: str = "clean"
    kind: str = "gaussian"
    snr_db: float = math.inf
    scale: float = 1.0
    shift: float = 0.0
    seed: int = 0

    def corruption(self, run_seed: int = 0) -> Corruption:
        # vary the noise realization (and the shared bias direction) per run
        return Corruption(
            kind=self.kind,
            snr_db=self.snr_db,
            scale=self.scale,
            shift=self.shift,
            seed=self.seed + 7919 * run_seed,
        )


@dataclass(frozen=True)
class TestSection:
    num_utterances: int = 36
    seed: int = 1000
    max_frames: int = 400
    domains: tuple[DomainSection, ...] = (
        DomainSection(name="light", kind="gaussian", snr_db=20.0, seed=5),
        DomainSection(name="heavy", kind="gaussian", snr_db=0.0, seed=5),
    )


@dataclass(frozen=True)
class LmSection:
    order: int = 3
    discount: float = 0.5


@dataclass(frozen=True)
class EvalSection:
    methods: tuple[str, ...] = ("rescoring", "suta_rescoring", "suta_lm")
    seeds: tuple[int, ...] = (0, 1, 2)
    frame_rate: float = 50.0
    workers: int = 1


@dataclass(frozen=True)
class RunConfig:
    corpus: CorpusSection = field(default_factory=CorpusSection)
    test: TestSection = field(default_factory=TestSection)
    acoustic: TrainConfig = field(default_factory=TrainConfig)
    lm: LmSection = field(default_factory=LmSection)
    tta: TtaConfig = field(default_factory=TtaConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    select: SelectConfig = field(default_factory=SelectConfig)
    eval: EvalSection = field(default_factory=EvalSection)


_SEQUENCE_FIELDS = {
    "vocabulary",
    "sentence_length_range",
    "frames_per_token_range",
    "domains",
    "methods",
    "seeds",
}


def _build(cls, data, path):
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        fpath = f"{path}.{name}" if path else name
        ftype = fields[name].type
        if dataclasses.is_dataclass(_section_type(ftype)):
            kwargs[name] = _build(_section_type(ftype), value, fpath)
        elif name == "domains":
            if not isinstance(value, list):
                raise ConfigError(f"{fpath}: expected a list")
            kwargs[name] = tuple(_build(DomainSection, d, f"{fpath}[{i}]") for i, d in enumerate(value))
        elif name in _SEQUENCE_FIELDS:
            if not isinstance(value, list):
                raise ConfigError(f"{fpath}: expected a list")
            kwargs[name] = tuple(value)
        elif value is None or isinstance(value, (int, float, str, bool)):
            kwargs[name] = value
        else:
            raise ConfigError(f"{fpath}: unsupported value {value!r}")
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or cls.__name__}: {exc}") from exc


def _section_type(ftype):
    # dataclass field types arrive as strings under future annotations
    if isinstance(ftype, str):
        return {
            "CorpusSection": CorpusSection,
            "TestSection": TestSection,
            "TrainConfig": TrainConfig,
            "LmSection": LmSection,
            "TtaConfig": TtaConfig,
            "FusionConfig": FusionConfig,
            "SelectConfig": SelectConfig,
            "EvalSection": EvalSection,
            "DomainSection": DomainSection,
        }.get(ftype)
    return ftype if dataclasses.is_dataclass(ftype) else None


def load_config(path: str) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    cfg = _build(RunConfig, _from_inf(data), "")
    validate_config(cfg)
    return cfg


def validate_config(cfg: RunConfig) -> None:
    cfg.corpus.spec().validate()
    cfg.tta.validate()
    cfg.fusion.validate()
    cfg.select.validate()
    for d in cfg.test.domains:
        d.corruption().validate()
    if not (0.0 < cfg.lm.discount < 1.0):
        raise ConfigError("lm.discount must lie strictly between 0 and 1")
    if cfg.lm.order < 1:
        raise ConfigError("lm.order must be >= 1")
    names = [d.name for d in cfg.test.domains]
    if len(set(names)) != len(names):
        raise ConfigError("test.domains names must be unique")


def _to_jsonable(value):
    if dataclasses.is_dataclass(value) and not isinstance(value, type):
        return {f.name: _to_jsonable(getattr(value, f.name)) for f in dataclasses.fields(value)}
    if isinstance(value, tuple):
        return [_to_jsonable(v) for v in value]
    if isinstance(value, float) and math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return value


def _from_inf(data):
    if isinstance(data, dict):
        return {k: _from_inf(v) for k, v in data.items()}
    if isinstance(data, list):
        return [_from_inf(v) for v in data]
    if data == "inf":
        return math.inf
    if data == "-inf":
        return -math.inf
    return data


def config_to_dict(cfg: RunConfig) -> dict:
    return _to_jsonable(cfg)


def dump_config(cfg: RunConfig, path: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(config_to_dict(cfg), fh, indent=2)
        fh.write("\n")
    os.replace(tmp, path)


def config_from_dict(data: dict) -> RunConfig:
    cfg = _build(RunConfig, _from_inf(data), "")
    validate_config(cfg)
    return cfg
