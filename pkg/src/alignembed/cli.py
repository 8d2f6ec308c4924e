"""Command-line entry point: ``alignembed <subcommand> [--config PATH] [--seed N] [--out DIR] [--set k=v ...]``.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
Every subcommand writes only inside ``--out`` and records the resolved
configuration it ran with.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from . import encoder as E
from . import evalkit, regimen
from .data import (LabeledPairings, SynthConfig, load_pairs_tsv, make_eval_pairings,
                   synth_bilingual, write_pairs_tsv)
from .regimen import ConfigError, apply_overrides, from_dict
from .seeding import derive_seed
from .textproc import Vocab, build_vocab

logger = logging.getLogger("alignembed")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


# per-subcommand option schemas; ``train`` uses regimen.RegimenConfig

@dataclass(frozen=True)
class VocabOptions:
    min_freq: int = 1
    turkish_casing: bool = False


@dataclass(frozen=True)
class EncodeOptions:
    pooling_source: Optional[str] = None
    turkish_casing: bool = False
    chunk_size: int = 256


@dataclass(frozen=True)
class EvalOptions:
    pooling_source: Optional[str] = None
    turkish_casing: bool = False
    n_pos: int = 1000
    n_neg: int = 1000


@dataclass(frozen=True)
class PcaOptions:
    k: int = 2
    tol: float = 1e-10
    max_iter: int = 10_000


SCHEMAS = {
    "synth": SynthConfig,
    "build-vocab": VocabOptions,
    "eval": EvalOptions,
    "embed": EncodeOptions,
    "pca": PcaOptions,
    "train": regimen.RegimenConfig,
}


def schema_text(command: str) -> str:
    cls = SCHEMAS[command]
    if command == "train":
        data = regimen.preset("desk").to_dict()
    else:
        data = dataclasses.asdict(cls())
    return (f"config keys for '{command}' (JSON file via --config, or --set key=value;"
            f" nested keys use dots):\n" + json.dumps(data, indent=2, sort_keys=True))


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int, help="global seed (unsigned 64-bit)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="override a config key (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="alignembed", description="Two-stage cross-lingual sentence embeddings")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("synth", parents=[common], help="generate synthetic bilingual corpora")

    p = sub.add_parser("build-vocab", parents=[common], help="build a vocabulary from corpora")
    p.add_argument("inputs", nargs="+", help="TSV pair files or one-sentence-per-line files")

    sub.add_parser("train", parents=[common], help="run the two-stage regimen")

    for name, helptext in (("eval", "similarity report and/or Pearson validation"),
                           ("embed", "write sentence embeddings as CSV")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--vocab", required=True)
        if name == "eval":
            p.add_argument("--same", help="caption-style TSV of matched pairs")
            p.add_argument("--entailment", help="entailment TSV for labeled pairings")
        else:
            p.add_argument("--input", required=True, help="one sentence per line")

    p = sub.add_parser("pca", parents=[common], help="2-D PCA of an embedding CSV")
    p.add_argument("--input", required=True, help="CSV written by 'embed'")
    return parser


def _load_file(path: Optional[str]) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return data


def resolve_options(command: str, args) -> object:
    """File values over schema defaults, then ``--set``; unknown keys are errors."""
    file_data = _load_file(args.config)
    if command == "train":
        if args.out is not None:
            file_data["output_dir"] = args.out
        if args.seed is not None:
            file_data["seed"] = args.seed
        return regimen.resolve_config(file_data, args.overrides)
    cls = SCHEMAS[command]
    base = dataclasses.asdict(cls())
    unknown = sorted(set(file_data) - set(base))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    base.update(file_data)
    if command == "synth" and args.seed is not None:
        base["seed"] = args.seed
    return from_dict(cls, apply_overrides(base, args.overrides))


def _out_dir(args) -> Path:
    if args.out is None:
        raise UsageError("--out is required")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _global_seed(args) -> int:
    seed = 0 if args.seed is None else args.seed
    if not 0 <= seed < 2 ** 64:
        raise UsageError("--seed must be an unsigned 64-bit integer")
    return seed


def _encoder(args, opts) -> E.SentenceEncoder:
    vocab = Vocab.load(args.vocab)
    params = E.load_checkpoint(args.checkpoint)
    return E.SentenceEncoder(params, vocab, opts.pooling_source, opts.turkish_casing)


def cmd_synth(args, cfg: SynthConfig) -> None:
    out = _out_dir(args)
    tr, ent, ev = synth_bilingual(cfg)
    names = {"translation": tr, "entailment": ent, "eval": ev}
    for name, ds in names.items():
        write_pairs_tsv(ds, out / f"{name}.tsv")
    evalkit.write_json({"seed": cfg.seed, "config": cfg.to_dict(),
                        "counts": {k: len(v) for k, v in names.items()},
                        "files": {k: f"{k}.tsv" for k in names}}, out / "manifest.json")


def _read_sentences(path: str) -> list[str]:
    sentences = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            cols = line.split("\t")
            sentences.extend(c for c in cols[:2] if c.strip())
    return sentences


def cmd_build_vocab(args, opts: VocabOptions) -> None:
    out = _out_dir(args)
    corpus = [s for path in args.inputs for s in _read_sentences(path)]
    vocab = build_vocab(corpus, opts.min_freq, opts.turkish_casing)
    vocab.save(out / "vocab.txt")
    evalkit.write_json({"options": dataclasses.asdict(opts), "inputs": args.inputs,
                        "size": len(vocab)}, out / "vocab.json")


def cmd_train(args, cfg: regimen.RegimenConfig) -> None:
    result = regimen.run_regimen(cfg)
    s2 = result.report["stages"]["stage2"]
    print(f"stage2 final pearson {s2['final_metric']:.4f} -> {result.output_dir / 'report.json'}")


def cmd_eval(args, opts: EvalOptions) -> None:
    if args.same is None and args.entailment is None:
        raise UsageError("eval needs --same and/or --entailment")
    out = _out_dir(args)
    seed = _global_seed(args)
    enc = _encoder(args, opts)
    result: dict = {"options": dataclasses.asdict(opts), "seed": seed}
    if args.same is not None:
        same = load_pairs_tsv(args.same, "caption")
        rand = regimen.random_pairs(same, derive_seed(seed, "eval.random"))
        result["similarity"] = evalkit.similarity_report(enc, same, rand).to_dict()
    if args.entailment is not None:
        ds = load_pairs_tsv(args.entailment, "entailment")
        pairings: LabeledPairings = make_eval_pairings(ds, min(opts.n_pos, len(ds)), opts.n_neg,
                                                       derive_seed(seed, "eval.pairings"))
        try:
            result["pearson"] = regimen.validate_pearson(enc, pairings)
        except evalkit.UndefinedCorrelationError:
            result["pearson"] = None
    evalkit.write_json(result, out / "eval.json")


def cmd_embed(args, opts: EncodeOptions) -> None:
    out = _out_dir(args)
    n = evalkit.embed_file(_encoder(args, opts), args.input, out / "embeddings.csv",
                           chunk_size=opts.chunk_size)
    logger.info("wrote %d embeddings", n)


def cmd_pca(args, opts: PcaOptions) -> None:
    out = _out_dir(args)
    x = evalkit.read_embedding_csv(args.input)
    res = evalkit.pca_project(x, opts.k, seed=derive_seed(_global_seed(args), "pca.init"),
                              tol=opts.tol, max_iter=opts.max_iter)
    res.write_csv(out / "pca.csv")
    evalkit.write_json(res.to_dict(), out / "pca.json")


COMMANDS = {
    "synth": cmd_synth,
    "build-vocab": cmd_build_vocab,
    "train": cmd_train,
    "eval": cmd_eval,
    "embed": cmd_embed,
    "pca": cmd_pca,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    command = None
    try:
        args = parser.parse_args(argv)
        command = args.command
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        opts = resolve_options(command, args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        if command in SCHEMAS:
            print(schema_text(command), file=sys.stderr)
        else:
            print(parser.format_usage(), file=sys.stderr, end="")
        return EXIT_USAGE
    try:
        COMMANDS[command](args, opts)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # surfaced as a runtime failure, not a traceback
        logger.debug("failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
