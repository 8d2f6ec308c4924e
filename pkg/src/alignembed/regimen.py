"""Two-stage training: translation alignment, then target-language entailment.

A run is fully described by a :class:`RegimenConfig`. Every random choice
(initialization, validation splits, pairings, batch order) is derived from the
single ``seed`` field through :func:`alignembed.seeding.derive_seed`, with
labels that do not depend on ``skip_stage1``. The stage-2-only ablation
therefore sees exactly the same stage-2 batches and validation pairings as
the staged run; only the starting parameters differ.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import os
import time
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence, Union

import numpy as np

from . import encoder as E
from . import tensor as T
from .data import (LabeledPairings, PairDataset, SynthConfig, batch_iter, epochs_for,
                   load_pairs_tsv, make_eval_pairings, split_validation, synth_bilingual,
                   with_reversed)
from .evalkit import UndefinedCorrelationError, pearson, similarity_report
from .optim import AdamState, MnrlConfig, adamw_step, mnrl_loss
from .seeding import derive_seed
from .textproc import Vocab, build_vocab

logger = logging.getLogger(__name__)

# recorded in the trace when predictions have zero variance; outside [-1, 1] on purpose
PEARSON_UNDEFINED = -2.0
FAILED_MARKER = "FAILED"
PRESETS = ("desk", "paper")


class ConfigError(ValueError):
    pass


class NonFiniteLossError(ArithmeticError):
    pass


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelConfig:
    """Encoder shape plus tokenization; the vocabulary size is resolved at run time."""
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 128
    max_len: int = 64
    pooling_source: Optional[str] = None
    turkish_casing: bool = False
    min_freq: int = 1
    vocab: Optional[str] = None

    def __post_init__(self):
        if self.pooling_source is not None and self.pooling_source not in E.POOLING_SOURCES:
            raise ValueError(f"pooling_source must be one of {E.POOLING_SOURCES}")
        if self.min_freq < 1:
            raise ValueError("min_freq must be >= 1")
        # surface shape errors at config time rather than after data loading
        self.encoder_config(1, 0)

    def encoder_config(self, vocab_size: int, seed: int) -> E.EncoderConfig:
        return E.EncoderConfig(vocab_size, self.d_model, self.n_layers, self.n_heads,
                               self.d_ff, self.max_len, seed)


@dataclass(frozen=True)
class StageConfig:
    name: str
    kind: str
    data: Optional[str] = None
    batch_size: int = 32
    n_batches: int = 1000
    lr: float = 1e-3
    weight_decay: float = 0.005
    mnrl: MnrlConfig = MnrlConfig()
    eval_every: int = 500
    n_holdout: int = 256
    n_pos: int = 1000
    n_neg: int = 1000
    warmup_steps: int = 0
    decoupled_decay: bool = True
    add_reversed: bool = False
    seed: Optional[int] = None

    def __post_init__(self):
        if self.kind not in ("translation", "entailment"):
            raise ValueError(f"stage kind must be translation or entailment, got {self.kind!r}")
        if self.n_batches < 1:
            raise ValueError("n_batches must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.lr >= 0:
            raise ValueError("lr must be non-negative")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")
        if self.n_holdout < 1:
            raise ValueError("n_holdout must be >= 1")
        if self.kind == "entailment" and (self.n_pos < 1 or self.n_neg < 1):
            raise ValueError("Pearson validation needs both positive and negative pairings")


@dataclass(frozen=True)
class RegimenConfig:
    seed: int = 0
    encoder: ModelConfig = ModelConfig()
    stage1: StageConfig = StageConfig("stage1", "translation")
    stage2: StageConfig = StageConfig("stage2", "entailment")
    synth: Optional[SynthConfig] = None
    eval_data: Optional[str] = None
    skip_stage1: bool = False
    reuse_optimizer_state: bool = False
    record_timing: bool = False
    output_dir: str = "run"

    def __post_init__(self):
        if self.stage1.kind != "translation":
            raise ValueError("stage1 must be a translation stage")
        if self.stage2.kind != "entailment":
            raise ValueError("stage2 must be an entailment stage")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def preset(name: str) -> RegimenConfig:
    """``paper`` mirrors the published schedule; ``desk`` runs in minutes on synthetic data."""
    if name == "paper":
        return RegimenConfig(
            encoder=ModelConfig(d_model=512, n_layers=8, n_heads=8, d_ff=1024),
            stage1=StageConfig("stage1", "translation", batch_size=32, n_batches=120_000,
                               lr=1e-5, weight_decay=0.005, n_holdout=2048),
            stage2=StageConfig("stage2", "entailment", batch_size=16, n_batches=16_000,
                               lr=1e-4, weight_decay=0.005, n_holdout=1000,
                               n_pos=1000, n_neg=1000),
        )
    if name == "desk":
        return RegimenConfig(
            encoder=ModelConfig(d_model=64, n_layers=2, n_heads=4, d_ff=128),
            stage1=StageConfig("stage1", "translation", batch_size=32, n_batches=2000,
                               lr=1e-3, weight_decay=0.005, n_holdout=256),
            stage2=StageConfig("stage2", "entailment", batch_size=16, n_batches=1000,
                               lr=1e-4, weight_decay=0.005, eval_every=250, n_holdout=1000,
                               n_pos=1000, n_neg=1000),
            synth=SynthConfig(),
        )
    raise ConfigError(f"unknown preset {name!r}; choose from {PRESETS}")


def _unwrap_optional(tp):
    if typing.get_origin(tp) is Union:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if len(args) == 1:
            return args[0], True
    return tp, False


def _coerce(tp, value, key: str):
    inner, optional = _unwrap_optional(tp)
    if value is None:
        if optional:
            return None
        raise ConfigError(f"{key} may not be null")
    if dataclasses.is_dataclass(inner):
        if not isinstance(value, Mapping):
            raise ConfigError(f"{key} must be an object")
        return from_dict(inner, value, key + ".")
    if inner is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be true or false, got {value!r}")
        return value
    if inner is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key} must be an integer, got {value!r}")
        return value
    if inner is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number, got {value!r}")
        return float(value)
    if inner is str:
        if not isinstance(value, str):
            raise ConfigError(f"{key} must be a string, got {value!r}")
        return value
    raise ConfigError(f"{key}: unsupported field type {tp!r}")


def from_dict(cls, data: Mapping[str, Any], prefix: str = ""):
    """Build a config dataclass from plain JSON data, rejecting unknown keys."""
    hints = typing.get_type_hints(cls)
    names = [f.name for f in dataclasses.fields(cls)]
    unknown = sorted(set(data) - set(names))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(prefix + k for k in unknown)}")
    kwargs = {k: _coerce(hints[k], v, prefix + k) for k, v in data.items()}
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{prefix.rstrip('.') or cls.__name__}: {exc}") from exc


def _merge(base: dict, update: Mapping, prefix: str = "") -> dict:
    out = dict(base)
    for key, value in update.items():
        if isinstance(value, Mapping) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value, f"{prefix}{key}.")
        else:
            out[key] = value
    return out


def parse_override(item: str) -> tuple[list[str], Any]:
    """``a.b=value`` with a JSON value; anything that is not valid JSON is a string."""
    key, sep, raw = item.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"override {item!r} is not of the form key=value")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip().split("."), value


def apply_overrides(data: dict, overrides: Sequence[str]) -> dict:
    data = json.loads(json.dumps(data))
    for item in overrides:
        path, value = parse_override(item)
        node = data
        for i, part in enumerate(path[:-1]):
            child = node.get(part) if isinstance(node, dict) else None
            if not isinstance(child, dict):
                where = ".".join(path[:i + 1])
                raise ConfigError(f"override {item!r}: {where} is not a config section")
            node = child
        if path[-1] not in node:
            raise ConfigError(f"override {item!r}: unknown key {'.'.join(path)}")
        node[path[-1]] = value
    return data


def resolve_config(file_data: Optional[Mapping] = None, overrides: Sequence[str] = (),
                   preset_name: Optional[str] = None) -> RegimenConfig:
    """Preset defaults, then the config file, then ``--set`` overrides.

    A config file may name its base with a top-level ``"preset"`` key (default
    ``desk``). A ``synth`` section replaces a null one with ``SynthConfig``
    defaults before merging so partial sections work.
    """
    file_data = dict(file_data or {})
    name = file_data.pop("preset", None) or preset_name or "desk"
    base = preset(name).to_dict()
    if base.get("synth") is None and isinstance(file_data.get("synth"), Mapping):
        base["synth"] = dataclasses.asdict(SynthConfig())
    unknown = sorted(set(file_data) - set(base))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    merged = apply_overrides(_merge(base, file_data), overrides)
    return from_dict(RegimenConfig, merged)


def load_config(path, overrides: Sequence[str] = ()) -> RegimenConfig:
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return resolve_config(data, overrides)


# ---------------------------------------------------------------------------
# metric trace
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TraceRow:
    stage: str
    batch: int
    metric: str
    value: float
    seconds: Optional[float] = None


@dataclass
class MetricTrace:
    rows: list[TraceRow] = field(default_factory=list)

    def add(self, stage: str, batch: int, metric: str, value: float,
            seconds: Optional[float] = None) -> None:
        if not math.isfinite(value):
            raise ValueError(f"{stage}/{metric} at batch {batch}: non-finite value")
        for row in reversed(self.rows):
            if row.stage == stage and row.metric == metric:
                if batch <= row.batch:
                    raise ValueError(f"{stage}/{metric}: batch {batch} does not follow {row.batch}")
                break
        self.rows.append(TraceRow(stage, int(batch), metric, float(value), seconds))

    def series(self, stage: str, metric: str) -> list[tuple[int, float]]:
        return [(r.batch, r.value) for r in self.rows if r.stage == stage and r.metric == metric]

    def extend(self, other: "MetricTrace") -> None:
        for r in other.rows:
            self.add(r.stage, r.batch, r.metric, r.value, r.seconds)

    def write_csv(self, path) -> None:
        lines = ["stage,batch,metric,value,seconds"]
        for r in self.rows:
            secs = "" if r.seconds is None else repr(r.seconds)
            lines.append(f"{r.stage},{r.batch},{r.metric},{r.value!r},{secs}")
        E.atomic_write_bytes(path, ("\n".join(lines) + "\n").encode("utf-8"))

    @classmethod
    def read_csv(cls, path) -> "MetricTrace":
        trace = cls()
        with open(path, newline="", encoding="utf-8") as fh:
            for rec in csv.DictReader(fh):
                trace.add(rec["stage"], int(rec["batch"]), rec["metric"], float(rec["value"]),
                          float(rec["seconds"]) if rec["seconds"] else None)
        return trace


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TranslationMetrics:
    mean_cos: float
    acc_ab: float
    acc_ba: float

    @property
    def primary(self) -> float:
        return 0.5 * (self.acc_ab + self.acc_ba)


def validate_translation(encoder, val: PairDataset) -> TranslationMetrics:
    """Mean true-pair cosine and argmax retrieval accuracy in both directions."""
    if not len(val):
        raise ValueError("empty validation set")
    a = encoder.encode([p[0] for p in val.pairs])
    b = encoder.encode([p[1] for p in val.pairs])
    sims = a @ b.T
    idx = np.arange(len(val))
    mean_cos = math.fsum(np.diag(sims).tolist()) / len(val)
    acc_ab = float(np.count_nonzero(sims.argmax(axis=1) == idx)) / len(val)
    acc_ba = float(np.count_nonzero(sims.argmax(axis=0) == idx)) / len(val)
    return TranslationMetrics(mean_cos, acc_ab, acc_ba)


def validate_pearson(encoder, pairings: LabeledPairings) -> float:
    """Point-biserial correlation of predicted cosine against the 0/1 labels."""
    counts = pairings.counts()
    if not counts.get(1.0) or not counts.get(0.0):
        raise ValueError("pairings must contain both labels")
    a = encoder.encode([it[0] for it in pairings.items])
    b = encoder.encode([it[1] for it in pairings.items])
    return pearson(np.einsum("ij,ij->i", a, b), pairings.labels)


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------

@dataclass
class StageResult:
    params: E.EncoderParams
    trace: MetricTrace
    optimizer: AdamState
    summary: dict


def _validate(encoder, cfg: StageConfig, val) -> tuple[float, dict]:
    if cfg.kind == "translation":
        m = validate_translation(encoder, val)
        return m.primary, {"mean_cos": m.mean_cos, "acc_ab": m.acc_ab, "acc_ba": m.acc_ba,
                           "acc_mean": m.primary}
    try:
        r = validate_pearson(encoder, val)
    except UndefinedCorrelationError:
        logger.warning("%s: Pearson undefined (constant predictions)", cfg.name)
        r = PEARSON_UNDEFINED
    return r, {"pearson": r}


def run_stage(params: E.EncoderParams, cfg: StageConfig, train: PairDataset,
              val: Union[PairDataset, LabeledPairings], vocab: Vocab, *, seed: int,
              out_dir=None, optimizer: Optional[AdamState] = None,
              pooling_source: Optional[str] = None, turkish_casing: bool = False,
              record_timing: bool = False) -> StageResult:
    """Train one stage with MNRL and AdamW, validating every ``eval_every`` batches.

    Validation also runs before the first step (batch 0) and after the last.
    With ``out_dir`` the best-so-far parameters go to ``<name>_best.btn`` and
    the final ones to ``<name>_final.btn``, both written atomically. The input
    ``params`` are not modified.
    """
    params = params.copy()
    ecfg = params.config
    encoder = E.SentenceEncoder(params, vocab, pooling_source, turkish_casing)
    state = optimizer if optimizer is not None else AdamState(
        lr=cfg.lr, weight_decay=cfg.weight_decay, decoupled=cfg.decoupled_decay,
        warmup_steps=cfg.warmup_steps)
    trace = MetricTrace()
    clock = time.perf_counter()
    best_path = final_path = None
    if out_dir is not None:
        best_path = Path(out_dir) / f"{cfg.name}_best.btn"
        final_path = Path(out_dir) / f"{cfg.name}_final.btn"

    def elapsed():
        return round(time.perf_counter() - clock, 6) if record_timing else None

    best = {"value": -math.inf, "batch": None}
    history = []

    def validate(step):
        value, metrics = _validate(encoder, cfg, val)
        secs = elapsed()
        for name, v in metrics.items():
            trace.add(cfg.name, step, name, v, secs)
        history.append((step, metrics))
        if value > best["value"]:
            best.update(value=value, batch=step)
            if best_path is not None:
                E.save_checkpoint(params, best_path)

    batches = batch_iter(train, cfg.batch_size, cfg.n_batches, seed)
    validate(0)
    steps = 0
    for steps, batch in enumerate(batches, start=1):
        g = T.Graph(seed)
        w = E.bind(g, params)
        u = E.forward(g, w, ecfg, encoder.tokenize([a for a, _ in batch]), pooling_source)
        v = E.forward(g, w, ecfg, encoder.tokenize([b for _, b in batch]), pooling_source)
        loss = mnrl_loss(u, v, cfg.mnrl)
        value = loss.item()
        if not math.isfinite(value):
            raise NonFiniteLossError(f"{cfg.name}: non-finite loss at batch {steps}")
        T.backward(g, loss)
        adamw_step(state, params.tensors, {k: t.grad for k, t in w.items() if t.grad is not None})
        trace.add(cfg.name, steps, "loss", value, elapsed())
        if steps % cfg.eval_every == 0 or steps == cfg.n_batches:
            validate(steps)
    if final_path is not None:
        E.save_checkpoint(params, final_path)

    final_step, final_metrics = history[-1]
    summary = {
        "skipped": False,
        "kind": cfg.kind,
        "n_steps": steps,
        "n_train_pairs": len(train),
        "n_val": len(val),
        "epochs": epochs_for(steps, cfg.batch_size, len(train)),
        "collisions": batches.collisions,
        "initial_metrics": history[0][1],
        "final_metrics": final_metrics,
        "final_metric": _validate_primary(cfg, final_metrics),
        "best_metric": best["value"],
        "best_batch": best["batch"],
        "wall_seconds": elapsed(),
        "checkpoints": None if out_dir is None else {"best": best_path.name,
                                                     "final": final_path.name},
    }
    return StageResult(params, trace, state, summary)


def _validate_primary(cfg: StageConfig, metrics: dict) -> float:
    return metrics["acc_mean"] if cfg.kind == "translation" else metrics["pearson"]


# ---------------------------------------------------------------------------
# full regimen
# ---------------------------------------------------------------------------

@dataclass
class RegimenData:
    translation: PairDataset
    entailment: PairDataset
    evaluation: Optional[PairDataset] = None


@dataclass
class RunResult:
    report: dict
    params: E.EncoderParams
    vocab: Vocab
    trace: MetricTrace
    output_dir: Path


def load_regimen_data(cfg: RegimenConfig) -> RegimenData:
    """Stage corpora from TSV paths when given, otherwise from the synthetic generator."""
    synth = synth_bilingual(cfg.synth) if cfg.synth is not None else None

    def pick(path, kind, idx):
        if path is not None:
            return load_pairs_tsv(path, kind)
        if synth is None:
            raise ConfigError(f"no {kind} data: set a data path or a synth section")
        return synth[idx]

    tr = pick(cfg.stage1.data, "translation", 0)
    ent = pick(cfg.stage2.data, "entailment", 1)
    if cfg.eval_data is not None:
        ev = load_pairs_tsv(cfg.eval_data, "caption")
    else:
        ev = synth[2] if synth is not None else None
    return RegimenData(tr, ent, ev)


def random_pairs(ds: PairDataset, seed: int) -> PairDataset:
    """A_i with B_j for seeded j != i, one per pair of ``ds``."""
    items = make_eval_pairings(ds, 0, len(ds), seed).items
    return PairDataset([(a, b) for a, b, _ in items], ds.kind, f"{ds.source}[random]")


def regimen_vocab(cfg: RegimenConfig, data: RegimenData) -> Vocab:
    if cfg.encoder.vocab is not None:
        return Vocab.load(cfg.encoder.vocab)
    corpus = data.translation.sentences() + data.entailment.sentences()
    return build_vocab(corpus, cfg.encoder.min_freq, cfg.encoder.turkish_casing)


def _dump_json(obj, path) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"
    E.atomic_write_bytes(path, text.encode("utf-8"))


def run_regimen(cfg: RegimenConfig, data: Optional[RegimenData] = None) -> RunResult:
    """Stage 1 then stage 2 on one parameter registry, writing all artifacts.

    Artifacts in ``cfg.output_dir``: ``vocab.txt``, ``trace.csv``,
    ``report.json`` and the per-stage best/final checkpoints. On any error a
    ``FAILED`` marker holding the message is written and the error re-raised;
    checkpoints already on disk are left intact.
    """
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    marker = out / FAILED_MARKER
    if marker.exists():
        marker.unlink()
    trace = MetricTrace()
    report: dict = {"status": "running", "config": cfg.to_dict()}
    try:
        result = _run(cfg, data, out, trace, report)
    except BaseException as exc:
        report["status"] = "failed"
        report["error"] = f"{type(exc).__name__}: {exc}"
        E.atomic_write_bytes(marker, (report["error"] + "\n").encode("utf-8"))
        try:
            trace.write_csv(out / "trace.csv")
            _dump_json(report, out / "report.json")
        except Exception:  # the marker is what matters
            logger.exception("could not write partial artifacts")
        raise
    return result


def _run(cfg, data, out, trace, report) -> RunResult:
    data = data if data is not None else load_regimen_data(cfg)
    vocab = regimen_vocab(cfg, data)
    vocab.save(out / "vocab.txt")
    ecfg = cfg.encoder.encoder_config(len(vocab), derive_seed(cfg.seed, "encoder.init"))
    params = E.init_params(ecfg)
    s1, s2 = cfg.stage1, cfg.stage2
    common = dict(out_dir=out, pooling_source=cfg.encoder.pooling_source,
                  turkish_casing=cfg.encoder.turkish_casing, record_timing=cfg.record_timing)

    # splits and pairings are computed identically whether or not stage 1 runs
    tr_train, tr_val = split_validation(data.translation, s1.n_holdout,
                                        derive_seed(cfg.seed, "stage1.split"))
    en_train, en_val = split_validation(data.entailment, s2.n_holdout,
                                        derive_seed(cfg.seed, "stage2.split"))
    pairings = make_eval_pairings(en_val, s2.n_pos, s2.n_neg,
                                  derive_seed(cfg.seed, "stage2.pairings"))
    if s1.add_reversed:
        tr_train = with_reversed(tr_train)
    if s2.add_reversed:
        en_train = with_reversed(en_train)

    report["resolved"] = {
        "encoder": ecfg.to_dict(),
        "vocab_size": len(vocab),
        "data": {"translation": len(data.translation), "entailment": len(data.entailment),
                 "evaluation": None if data.evaluation is None else len(data.evaluation),
                 "stage1_train": len(tr_train), "stage1_val": len(tr_val),
                 "stage2_train": len(en_train), "stage2_pairings": {"pos": pairings.counts().get(1.0, 0),
                                                     "neg": pairings.counts().get(0.0, 0)}},
    }
    stages: dict = {}
    report["stages"] = stages
    optimizer = None
    if cfg.skip_stage1:
        stages["stage1"] = {"skipped": True}
    else:
        r1 = run_stage(params, s1, tr_train, tr_val, vocab,
                       seed=_stage_seed(cfg, s1), **common)
        trace.extend(r1.trace)
        stages["stage1"] = r1.summary
        params = r1.params
        if cfg.reuse_optimizer_state:
            optimizer = r1.optimizer
            optimizer.lr, optimizer.weight_decay = s2.lr, s2.weight_decay
            optimizer.decoupled, optimizer.warmup_steps = s2.decoupled_decay, s2.warmup_steps
    r2 = run_stage(params, s2, en_train, pairings, vocab, seed=_stage_seed(cfg, s2),
                   optimizer=optimizer, **common)
    trace.extend(r2.trace)
    stages["stage2"] = r2.summary

    evaluation = None
    if data.evaluation is not None and len(data.evaluation) >= 2:
        enc = E.SentenceEncoder(r2.params, vocab, cfg.encoder.pooling_source,
                                cfg.encoder.turkish_casing)
        rand = random_pairs(data.evaluation, derive_seed(cfg.seed, "eval.random"))
        evaluation = similarity_report(enc, data.evaluation, rand).to_dict()
    report["evaluation"] = evaluation
    report["artifacts"] = {"vocab": "vocab.txt", "trace": "trace.csv",
                           "final_checkpoint": f"{s2.name}_final.btn", "report": "report.json"}
    report["status"] = "ok"
    trace.write_csv(out / "trace.csv")
    _dump_json(report, out / "report.json")
    return RunResult(report, r2.params, vocab, trace, out)


def _stage_seed(cfg: RegimenConfig, stage: StageConfig) -> int:
    return stage.seed if stage.seed is not None else derive_seed(cfg.seed, f"{stage.name}.batches")
