"""Command-line entry point: ``docnmt {prepare,train,translate,score,convert}``.

Exit codes: 0 success, 1 any other library error, 2 corpus or config
problems, 3 training diverged, 4 checkpoint or vocabulary mismatch.
Log verbosity comes from ``DOCNMT_LOG_LEVEL`` (default WARNING).
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt_io
from .bleu import corpus_bleu
from .config import RunConfig, parse_pairs
from .context import assemble, select_context
from .corpus import Vocab, build_vocab, document_sentences, load_documents, save_binarized
from .errors import CheckpointError, ConfigError, ContextError, CorpusError, DocNMTError, ShapeMismatch, TrainingDiverged
from .model import EncoderOutput, Transformer, param_shapes
from .numerics import Tensor
from .objective import examples_from_documents
from .search import beam_search
from .trainer import evaluate_nll, save_model, train

log = logging.getLogger("docnmt")

EXIT_OK, EXIT_ERROR, EXIT_INPUT, EXIT_DIVERGED, EXIT_MISMATCH = 0, 1, 2, 3, 4

CONFIG_NAME = "config.txt"
METRICS_NAME = "metrics.log"
MODEL_NAME = "model.ntc"
SOURCE_VOCAB = "source.vocab"
TARGET_VOCAB = "target.vocab"


# -- prepare ---------------------------------------------------------------

def cmd_prepare(args) -> int:
    docs = load_documents(args.source, args.target)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sides = ["source"] + (["target"] if args.target else [])
    for side in sides:
        vocab = build_vocab(document_sentences(docs, side), args.vocab_size, args.min_count)
        vocab.save(out / f"{side}.vocab")
        ids = [[vocab.encode(s) for s in (d.sentences if side == "source" else d.targets)] for d in docs]
        save_binarized(ids, out / f"{side}.bin")
        print(f"{side}: {len(docs)} documents, {sum(map(len, ids))} sentences, vocab {len(vocab)}")
    return EXIT_OK


# -- train -----------------------------------------------------------------

def _vocabs(cfg: RunConfig, docs) -> tuple[Vocab, Vocab]:
    src = Vocab.load(cfg.source_vocab) if cfg.source_vocab else build_vocab(document_sentences(docs, "source"), cfg.vocab_size)
    tgt = Vocab.load(cfg.target_vocab) if cfg.target_vocab else build_vocab(document_sentences(docs, "target"), cfg.vocab_size)
    return src, tgt


def _examples(cfg: RunConfig, docs, src_vocab: Vocab, tgt_vocab: Vocab):
    src = [[src_vocab.encode(s) for s in d.sentences] for d in docs]
    tgt = [[tgt_vocab.encode(t) for t in d.targets] for d in docs]
    return examples_from_documents(src, tgt, cfg.context, cfg.max_input, cfg.resolved_position_mode)


def cmd_train(args) -> int:
    cfg = RunConfig.load(args.config, _overrides(args.set))
    if not cfg.train_source or not cfg.train_target:
        raise ConfigError("train_source and train_target are required for training")
    docs = load_documents(cfg.train_source, cfg.train_target)
    src_vocab, tgt_vocab = _vocabs(cfg, docs)
    examples = _examples(cfg, docs, src_vocab, tgt_vocab)

    run = Path(cfg.run_dir)
    run.mkdir(parents=True, exist_ok=True)
    cfg.save(run / CONFIG_NAME)
    src_vocab.save(run / SOURCE_VOCAB)
    tgt_vocab.save(run / TARGET_VOCAB)

    model = Transformer(cfg.model_config(len(src_vocab), len(tgt_vocab)), seed=cfg.seed)
    if cfg.pretrained:
        report = ckpt_io.init_encoder(model, ckpt_io.load(cfg.pretrained))
        log.info("encoder init: %s", report.summary())
        if not report.initialized:
            raise ShapeMismatch(f"{cfg.pretrained} shares no encoder tensor with this model")

    with open(run / METRICS_NAME, "w", encoding="utf-8") as metrics:
        streams = [metrics] + ([sys.stdout] if not args.quiet else [])
        try:
            train(model, examples, cfg.train_config(), log_streams=streams, checkpoint_dir=run)
        except TrainingDiverged as exc:
            metrics.write(f"diverged {exc}\n")
            raise
    save_model(model, run / MODEL_NAME, {"context": cfg.context})
    if cfg.valid_source and cfg.valid_target:
        valid = _examples(cfg, load_documents(cfg.valid_source, cfg.valid_target), src_vocab, tgt_vocab)
        print(f"valid_nll={evaluate_nll(model, valid):.6g}")
    return EXIT_OK


# -- translate -------------------------------------------------------------

def load_run(run_dir: str | Path) -> tuple[RunConfig, Transformer, Vocab, Vocab]:
    """Config, trained model and vocabularies of a finished run directory."""
    run = Path(run_dir)
    cfg = RunConfig.load(run / CONFIG_NAME)
    try:
        src_vocab = Vocab.load(run / SOURCE_VOCAB)
        tgt_vocab = Vocab.load(run / TARGET_VOCAB)
    except OSError as exc:
        raise CheckpointError(f"missing vocabulary in {run}: {exc.strerror}") from None
    model_cfg = cfg.model_config(len(src_vocab), len(tgt_vocab))
    ckpt = ckpt_io.load(run / MODEL_NAME)
    expected = param_shapes(model_cfg)
    if set(ckpt.entries) != set(expected):
        missing = sorted(set(expected) - set(ckpt.entries))
        extra = sorted(set(ckpt.entries) - set(expected))
        raise ShapeMismatch(f"checkpoint tensors do not match config (missing {missing[:3]}, extra {extra[:3]})")
    params = {}
    for name, shape in expected.items():
        arr = ckpt[name]
        if arr.shape != shape:
            raise ShapeMismatch(f"{name}: checkpoint {arr.shape} vs model {shape} (vocabulary mismatch?)")
        params[name] = Tensor(arr.astype(model_cfg.dtype), requires_grad=True, name=name)
    return cfg, Transformer(model_cfg, params), src_vocab, tgt_vocab


def _noise_hook(seed: int, scale: float = 10.0):
    rng = np.random.default_rng(seed)

    def hook(enc: EncoderOutput) -> EncoderOutput:
        h = enc.hidden.data.copy()
        where = enc.context_mask & ~enc.pad_mask
        h[where] += rng.normal(0.0, scale, size=h[where].shape).astype(h.dtype)
        return dataclasses.replace(enc, hidden=Tensor(h))

    return hook


def translate_documents(cfg: RunConfig, model: Transformer, src_vocab: Vocab, tgt_vocab: Vocab, docs,
                        beam: int | None = None, noise_seed: int | None = None) -> list[list[list[str]]]:
    hook = None if noise_seed is None else _noise_hook(noise_seed)
    out = []
    for doc in docs:
        ids = [src_vocab.encode(s) for s in doc.sentences]
        lines = []
        for j, s in enumerate(ids):
            # source-side context only, never crossing the document boundary
            x = assemble(select_context(ids, j, cfg.context), s, cfg.max_input, cfg.resolved_position_mode)
            hyp = beam_search(model, x, beam=beam or cfg.beam, alpha=cfg.alpha, encoder_hook=hook)
            lines.append(tgt_vocab.decode(hyp.output))
        out.append(lines)
    return out


def cmd_translate(args) -> int:
    cfg, model, src_vocab, tgt_vocab = load_run(args.run_dir)
    docs = load_documents(args.input)
    result = translate_documents(cfg, model, src_vocab, tgt_vocab, docs, args.beam, args.noise_context)
    text = "\n\n".join("\n".join(" ".join(s) for s in doc) for doc in result) + "\n"
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


# -- score -----------------------------------------------------------------

def _read_lines(path: str) -> list[str]:
    try:
        with open(path, encoding="utf-8") as fh:
            return [line.rstrip("\n") for line in fh]
    except OSError as exc:
        raise CorpusError(f"cannot read {path}: {exc.strerror}") from None


def cmd_score(args) -> int:
    hyp, ref = _read_lines(args.hypotheses), _read_lines(args.references)
    if len(hyp) == len(ref):
        # document separators are blank on both sides; drop them pairwise
        kept = [(h, r) for h, r in zip(hyp, ref) if h.strip() or r.strip()]
        hyp, ref = [h for h, _ in kept], [r for _, r in kept]
    report = corpus_bleu([h.split() for h in hyp], [r.split() for r in ref])
    for line in report.lines():
        print(line)
    print(report.summary())
    return EXIT_OK


# -- convert ---------------------------------------------------------------

def cmd_convert(args) -> int:
    ckpt = ckpt_io.load(args.checkpoint)
    if args.action == "inspect":
        for name, arr in ckpt.entries.items():
            print(f"{name}\t{arr.dtype}\t{'x'.join(map(str, arr.shape)) or 'scalar'}")
        for k, v in ckpt.metadata.items():
            print(f"# {k} = {v}")
        print(f"# {len(ckpt)} tensors, {sum(a.size for a in ckpt.entries.values())} values")
        return EXIT_OK
    if not args.output:
        raise ConfigError("repack needs --output")
    out = ckpt_io.Checkpoint(metadata=ckpt.metadata or None)
    for name, arr in ckpt.entries.items():
        if name.startswith(args.prefix):
            out.add(name, arr.astype(args.dtype) if args.dtype else arr)
    ckpt_io.save(out, args.output)
    print(f"wrote {len(out)} tensors to {args.output}")
    return EXIT_OK


# -- plumbing --------------------------------------------------------------

def _overrides(items: list[str] | None) -> dict[str, str]:
    return parse_pairs("\n".join(items or []))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="docnmt", description="Document-level translation with long source context.")
    sub = p.add_subparsers(dest="command", required=True)

    pr = sub.add_parser("prepare", help="build vocabularies and binarize a corpus")
    pr.add_argument("source")
    pr.add_argument("target", nargs="?")
    pr.add_argument("--out-dir", required=True)
    pr.add_argument("--vocab-size", type=int, default=32000)
    pr.add_argument("--min-count", type=int, default=1)
    pr.set_defaults(func=cmd_prepare)

    tr = sub.add_parser("train", help="train a model from a config file")
    tr.add_argument("config")
    tr.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")
    tr.add_argument("--quiet", action="store_true", help="metrics only to the run directory")
    tr.set_defaults(func=cmd_train)

    tl = sub.add_parser("translate", help="translate documents with a trained run")
    tl.add_argument("run_dir")
    tl.add_argument("input")
    tl.add_argument("--output")
    tl.add_argument("--beam", type=int)
    tl.add_argument("--noise-context", type=int, metavar="SEED",
                    help="debug: add noise to context encoder states before decoding")
    tl.set_defaults(func=cmd_translate)

    sc = sub.add_parser("score", help="corpus BLEU of hypotheses against references")
    sc.add_argument("hypotheses")
    sc.add_argument("references")
    sc.set_defaults(func=cmd_score)

    cv = sub.add_parser("convert", help="inspect or repack an NTC1 checkpoint")
    cv.add_argument("action", choices=("inspect", "repack"))
    cv.add_argument("checkpoint")
    cv.add_argument("--output")
    cv.add_argument("--prefix", default="", help="keep only tensors whose name starts with this")
    cv.add_argument("--dtype", choices=("float32", "float64"))
    cv.set_defaults(func=cmd_convert)
    return p


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, TrainingDiverged):
        return EXIT_DIVERGED
    if isinstance(exc, CheckpointError):
        return EXIT_MISMATCH
    if isinstance(exc, (CorpusError, ConfigError, ContextError)):
        return EXIT_INPUT
    return EXIT_ERROR


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(
        level=os.environ.get("DOCNMT_LOG_LEVEL", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DocNMTError as exc:
        print(f"docnmt {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
