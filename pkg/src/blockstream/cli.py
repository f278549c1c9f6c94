"""Command-line interface: gen-data, train, eval, stream, experiment."""

from __future__ import annotations

import argparse
import json
import sys

from . import experiment as exp
from . import multilatency as ml
from .blocking import BlockSpec
from .config import load_config
from .errors import BlockstreamError
from .synthdata import CorpusSpec, generate_corpus, read_corpus, write_corpus

MODES = ("single", "multiple-A", "multiple-B")


def _add_gen_data(sub):
    p = sub.add_parser("gen-data", help="generate and write a synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--vocab-size", type=int, default=16)
    p.add_argument("--frames-per-token", type=int, default=4)
    p.add_argument("--d-feat", type=int, default=8)
    p.add_argument("--noise-std", type=float, default=1.0)
    p.add_argument("--train-utts", type=int, default=2000)
    p.add_argument("--dev-utts", type=int, default=200)
    p.add_argument("--test-utts", type=int, default=200)
    p.add_argument("--min-tokens", type=int, default=2)
    p.add_argument("--max-tokens", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)


def _cmd_gen_data(args):
    spec = CorpusSpec(
        vocab_size=args.vocab_size,
        frames_per_token=args.frames_per_token,
        d_feat=args.d_feat,
        noise_std=args.noise_std,
        n_train=args.train_utts,
        n_dev=args.dev_utts,
        n_test=args.test_utts,
        min_tokens=args.min_tokens,
        max_tokens=args.max_tokens,
        seed=args.seed,
    )
    corpus = generate_corpus(spec)
    write_corpus(corpus, args.out)
    print(f"wrote {args.out}: {len(corpus.train)}/{len(corpus.dev)}/{len(corpus.test)} utterances")
    return 0


def _add_train(sub):
    p = sub.add_parser("train", help="train one model and save a checkpoint")
    p.add_argument("--corpus", required=True)
    p.add_argument("--spec", default="8-4-4", help="block setting L-C-R")
    p.add_argument("--mode", choices=MODES, default="single")
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--lr", type=float, default=3e-3)
    p.add_argument("--d-model", type=int, default=32)
    p.add_argument("--layers", type=int, default=4)
    p.add_argument("--heads", type=int, default=2)
    p.add_argument("--d-ff", type=int, default=64)
    p.add_argument("--mask-prob", type=float, default=0.5)
    p.add_argument("--mode-prob", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)


def _cmd_train(args):
    corpus = read_corpus(args.corpus)
    spec = BlockSpec.parse(args.spec)
    cfg = exp.TrainConfig(
        d_model=args.d_model,
        n_layers=args.layers,
        n_heads=args.heads,
        d_ff=args.d_ff,
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr=args.lr,
        mask_prob=args.mask_prob,
        mode_prob=args.mode_prob,
        seed=args.seed,
    )
    models, _ = exp.train_model(corpus, spec, args.mode, cfg, log=print)
    exp.save_models(args.out, models, cfg, spec, args.mode)
    print(f"saved checkpoint {args.out}")
    return 0


def _add_eval(sub):
    p = sub.add_parser("eval", help="score a checkpoint on corpus splits")
    p.add_argument("--corpus", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--splits", default="dev,test")


def _cmd_eval(args):
    corpus = read_corpus(args.corpus)
    models, cfg, spec, mode = exp.load_models(args.checkpoint)
    splits = tuple(s.strip() for s in args.splits.split(",") if s.strip())
    rate = exp.evaluate(corpus, splits, spec, models, cfg, mode)
    print(f"error_rate {rate:.6f}")
    return 0


def _add_stream(sub):
    p = sub.add_parser("stream", help="stream one utterance, printing step records")
    p.add_argument("--corpus", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--index", type=int, default=0)


def _cmd_stream(args):
    corpus = read_corpus(args.corpus)
    models, cfg, spec, mode = exp.load_models(args.checkpoint)
    utts = corpus.split(args.split)
    if not 0 <= args.index < len(utts):
        raise BlockstreamError(f"utterance index {args.index} out of range for split {args.split}")
    utt = utts[args.index]
    method = {"single": "single", "multiple-A": "A", "multiple-B": "B"}[mode]
    recog = ml.NeuralRecognizer(models[0], models[1], cfg.max_symbols_per_frame)
    streamer = ml.Streamer(ml.LatencyConfig(primary_spec=spec, method=method), recog)
    hop = spec.n_center
    frames = utt.frames
    committed = []
    t = 0
    while t < frames.shape[0] and not streamer.done:
        out = streamer.step(frames[t : t + hop])
        t = min(t + hop, frames.shape[0])
        committed.extend(out.primary_tokens)
        print(
            json.dumps(
                {
                    "clock_ms": streamer.t * spec.frame_ms,
                    "committed": committed,
                    "provisional": out.aux_tokens,
                    "done": out.done,
                }
            )
        )
        if out.done:
            break
    transcript = streamer.finalize()
    print(
        json.dumps(
            {
                "clock_ms": streamer.t * spec.frame_ms,
                "committed": transcript,
                "provisional": [],
                "done": True,
            }
        )
    )
    return 0


def _add_experiment(sub):
    p = sub.add_parser("experiment", help="run the latency/accuracy trend experiment")
    p.add_argument("--corpus", required=True)
    p.add_argument("--config", required=True, help="key=value config with row entries")
    p.add_argument("--out", default="-", help="CSV path, or - for stdout")


def _cmd_experiment(args):
    corpus = read_corpus(args.corpus)
    config = load_config(args.config)
    rows = exp.run_experiment(config, corpus, log=lambda msg: print(msg, file=sys.stderr))
    text = exp.rows_to_csv(rows)
    if args.out == "-":
        sys.stdout.write(text)
    else:
        with open(args.out, "w") as fh:
            fh.write(text)
        print(f"wrote {args.out}", file=sys.stderr)
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(prog="blockstream")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_gen_data(sub)
    _add_train(sub)
    _add_eval(sub)
    _add_stream(sub)
    _add_experiment(sub)
    args = parser.parse_args(argv)
    handlers = {
        "gen-data": _cmd_gen_data,
        "train": _cmd_train,
        "eval": _cmd_eval,
        "stream": _cmd_stream,
        "experiment": _cmd_experiment,
    }
    try:
        return handlers[args.command](args)
    except BlockstreamError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
