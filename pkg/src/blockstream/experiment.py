"""Model training, evaluation and the latency/accuracy trend experiment."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from . import checkpoint
from . import encoder as enc
from . import multilatency as ml
from . import transducer as td
from .optim import Adam
from .blocking import BlockSpec, delay_ms
from .encoder import EncoderConfig, EncoderParams
from .errors import ContractError, ParseError
from .metrics import error_rate
from .transducer import TransducerParams, Vocabulary


@dataclass(frozen=True)
class TrainConfig:
    d_model: int = 32
    n_layers: int = 4
    n_heads: int = 2
    d_ff: int = 64
    epochs: int = 30
    batch_size: int = 16
    lr: float = 3e-3
    mask_prob: float = 0.5
    mode_prob: float = 0.5
    max_symbols_per_frame: int = 3
    seed: int = 0


@dataclass(frozen=True)
class ExperimentRow:
    model: str
    mode: str  # "single" | "multiple-A" | "multiple-B"
    block_setting: str
    delay_ms: int
    error_rate: float


def build_models(vocab_size, d_feat, cfg):
    rng = np.random.default_rng(cfg.seed)
    enc_cfg = EncoderConfig(
        d_feat=d_feat,
        d_model=cfg.d_model,
        n_layers=cfg.n_layers,
        n_heads=cfg.n_heads,
        d_ff=cfg.d_ff,
    )
    enc_params = EncoderParams(enc_cfg, rng)
    dec_params = TransducerParams(Vocabulary(vocab_size), cfg.d_model, cfg.d_model, rng)
    return enc_params, dec_params


def named_params(models):
    enc_params, dec_params = models
    out = dict(enc_params.named())
    out.update(dec_params.named())
    return out


def save_models(path, models, cfg, spec, mode):
    enc_params, dec_params = models
    arrays = {k: t.data for k, t in named_params(models).items()}
    arrays["meta/hyper"] = np.array(
        [
            enc_params.cfg.d_feat,
            cfg.d_model,
            cfg.n_layers,
            cfg.n_heads,
            cfg.d_ff,
            dec_params.vocab.size,
            cfg.max_symbols_per_frame,
        ],
        dtype=np.float64,
    )
    arrays["meta/spec"] = np.array(
        [spec.n_left, spec.n_center, spec.n_right, spec.frame_ms], dtype=np.float64
    )
    arrays["meta/mode"] = np.array([{"single": 0, "multiple-A": 1, "multiple-B": 2}[mode]])
    checkpoint.save_arrays(path, arrays)


def load_models(path):
    arrays = checkpoint.load_arrays(path)
    try:
        d_feat, d_model, n_layers, n_heads, d_ff, vocab_size, max_sym = (
            int(x) for x in arrays["meta/hyper"]
        )
        sl, sc, sr, sms = (int(x) for x in arrays["meta/spec"])
        mode = ["single", "multiple-A", "multiple-B"][int(arrays["meta/mode"][0])]
    except KeyError as exc:
        raise ParseError(f"{path}: missing metadata array {exc}") from exc
    cfg = TrainConfig(
        d_model=d_model,
        n_layers=n_layers,
        n_heads=n_heads,
        d_ff=d_ff,
        max_symbols_per_frame=max_sym,
    )
    models = build_models(vocab_size, d_feat, cfg)
    models[0].load_named(arrays)
    models[1].load_named(arrays)
    return models, cfg, BlockSpec(sl, sc, sr, frame_ms=sms), mode


def train_model(corpus, spec, mode, cfg, log=None):
    """Train one row's model; returns (models, per-epoch mean losses)."""
    models = build_models(corpus.spec.vocab_size, corpus.spec.d_feat, cfg)
    opt = Adam(named_params(models), lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed + 1)
    utts = list(corpus.train)
    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(utts))
        total = 0.0
        count = 0
        for lo in range(0, len(utts), cfg.batch_size):
            batch = [utts[i] for i in order[lo : lo + cfg.batch_size]]
            opt.zero_grad()
            if mode == "multiple-A":
                loss = ml.train_step_method_a(batch, spec, cfg.mask_prob, models, rng)
            elif mode == "multiple-B":
                loss = ml.train_step_method_b(batch, spec, cfg.mode_prob, models, rng)
            else:
                loss = ml.train_step_method_a(batch, spec, 0.0, models, rng)
            ad.backward(loss)
            opt.step()
            total += float(loss.data) * len(batch)
            count += len(batch)
        history.append(total / count)
        if log:
            log(f"epoch {epoch + 1}/{cfg.epochs}: loss {history[-1]:.4f}")
    return models, history


def transcribe_offline(utt, spec, models, cfg):
    """Plain block-streaming decode of a whole utterance (single mode)."""
    enc_params, dec_params = models
    state = td.decode_start(dec_params)
    tokens = []
    for h, _ in enc.encode_stream(utt.frames, spec, enc_params):
        emissions, state = td.greedy_decode_block(
            h, state, dec_params, cfg.max_symbols_per_frame
        )
        tokens.extend(tok for tok, _ in emissions)
    out = []
    for tok in tokens:
        if tok == td.EOS:
            break
        out.append(tok)
    return out


def transcribe_streaming(utt, spec, models, cfg, method):
    enc_params, dec_params = models
    recog = ml.NeuralRecognizer(enc_params, dec_params, cfg.max_symbols_per_frame)
    config = ml.LatencyConfig(primary_spec=spec, method=method)
    transcript, _ = ml.run_stream(config, recog, utt.frames)
    return transcript


def evaluate(corpus, split_names, spec, models, cfg, mode):
    """Average token error rate over the given splits."""
    rates = []
    for name in split_names:
        errors = 0
        ref_len = 0
        for utt in corpus.split(name):
            if mode == "single":
                hyp = transcribe_offline(utt, spec, models, cfg)
            else:
                method = "A" if mode == "multiple-A" else "B"
                hyp = transcribe_streaming(utt, spec, models, cfg, method)
            _, counts = error_rate(hyp, utt.transcript)
            errors += counts.total
            ref_len += len(utt.transcript)
        rates.append(errors / ref_len if ref_len else 0.0)
    return sum(rates) / len(rates)


def _parse_row(text):
    parts = text.split()
    if len(parts) not in (2, 3) or parts[0] not in ("single", "multiple-A", "multiple-B"):
        raise ParseError(f"bad experiment row {text!r}; expected '<mode> <L-C-R> [epochs]'")
    epochs = None
    if len(parts) == 3:
        try:
            epochs = int(parts[2])
        except ValueError:
            raise ParseError(f"bad per-row epoch count in {text!r}") from None
    return parts[0], BlockSpec.parse(parts[1]), epochs


def run_experiment(config, corpus, log=None):
    """Train and evaluate every configured row; returns ExperimentRow list.

    ``config`` is a parsed key=value dict with repeated ``row`` entries.
    """
    from .config import as_list

    rows_spec = [_parse_row(r) for r in as_list(config.get("row"))]
    if not rows_spec:
        raise ContractError("experiment config has no 'row' entries")
    cfg = TrainConfig(
        d_model=int(config.get("d_model", 32)),
        n_layers=int(config.get("layers", 4)),
        n_heads=int(config.get("heads", 2)),
        d_ff=int(config.get("d_ff", 64)),
        epochs=int(config.get("epochs", 30)),
        batch_size=int(config.get("batch_size", 16)),
        lr=float(config.get("lr", 3e-3)),
        mask_prob=float(config.get("mask_prob", 0.5)),
        mode_prob=float(config.get("mode_prob", 0.5)),
        seed=int(config.get("seed", 0)),
    )
    results = []
    for mode, spec, row_epochs in rows_spec:
        # a row may override the shared epoch budget, e.g. to equalize
        # per-condition exposure when a mode splits its batches across
        # masked/joint variants
        row_cfg = cfg if row_epochs is None else replace(cfg, epochs=row_epochs)
        if log:
            log(f"== training {mode} {spec} ==")
        models, _ = train_model(corpus, spec, mode, row_cfg, log=log)
        rate = evaluate(corpus, ("dev", "test"), spec, models, row_cfg, mode)
        results.append(
            ExperimentRow(
                model="blockstream",
                mode=mode,
                block_setting=str(spec),
                delay_ms=0 if mode.startswith("multiple") else delay_ms(spec),
                error_rate=rate,
            )
        )
        if log:
            log(f"{mode} {spec}: error {100 * rate:.2f}%")
    return results


def rows_to_csv(rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["model", "mode", "block_setting", "delay_ms", "error_rate"])
    for row in rows:
        writer.writerow(
            [row.model, row.mode, row.block_setting, row.delay_ms, f"{row.error_rate:.6f}"]
        )
    return buf.getvalue()
