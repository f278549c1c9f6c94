"""Synthetic streaming corpora: prototype feature streams + white noise.

Each content token owns a fixed random prototype vector; an utterance is
the token prototypes repeated ``frames_per_token`` times with additive
Gaussian noise.  A small random run of leading silence frames (padding,
shorter than one token) de-aligns token boundaries from block boundaries so
look-ahead context actually matters for recognition.

Corpus files are newline-delimited text records; frame payloads are
base-16 little-endian float64, so round trips are byte-exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, ParseError

_HEADER = "BLOCKSTREAM-CORPUS 1"
_PROTO_STD = 0.65  # prototype scale; noise_std=1.0 then needs multi-frame context


@dataclass(frozen=True)
class CorpusSpec:
    vocab_size: int = 16
    frames_per_token: int = 4
    d_feat: int = 8
    noise_std: float = 1.0
    n_train: int = 2000
    n_dev: int = 200
    n_test: int = 200
    min_tokens: int = 2
    max_tokens: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.vocab_size < 3:
            raise ContractError("need blank, eos and at least one content token")
        if self.frames_per_token < 1:
            raise ContractError("frames_per_token must be >= 1")
        if self.noise_std < 0:
            raise ContractError("noise_std must be >= 0")
        if not 1 <= self.min_tokens <= self.max_tokens:
            raise ContractError("bad min/max tokens")
        if min(self.n_train, self.n_dev, self.n_test) < 0:
            raise ContractError("split sizes must be >= 0")


@dataclass
class Utterance:
    frames: np.ndarray  # [T x d_feat]
    transcript: list  # content-token ids (no blank/eos)
    offset: int = 0  # leading silence-padding frames


@dataclass
class Corpus:
    spec: CorpusSpec
    prototypes: np.ndarray  # [V x d_feat]; rows 0/1 are silence
    train: list = field(default_factory=list)
    dev: list = field(default_factory=list)
    test: list = field(default_factory=list)

    def split(self, name):
        try:
            return getattr(self, name)
        except AttributeError:
            raise ContractError(f"unknown split {name!r}") from None


def _make_utterance(spec, prototypes, rng):
    n_tokens = int(rng.integers(spec.min_tokens, spec.max_tokens + 1))
    tokens = rng.integers(2, spec.vocab_size, n_tokens).tolist()
    offset = int(rng.integers(0, spec.frames_per_token))
    clean = np.repeat(prototypes[tokens], spec.frames_per_token, axis=0)
    frames = np.vstack([np.zeros((offset, spec.d_feat)), clean])
    frames = frames + rng.normal(0.0, spec.noise_std, frames.shape)
    return Utterance(frames=frames, transcript=tokens, offset=offset)


def generate_corpus(spec):
    """Seed-deterministic corpus with disjoint train/dev/test splits."""
    rng = np.random.default_rng(spec.seed)
    prototypes = np.zeros((spec.vocab_size, spec.d_feat))
    prototypes[2:] = rng.normal(0.0, _PROTO_STD, (spec.vocab_size - 2, spec.d_feat))
    corpus = Corpus(spec=spec, prototypes=prototypes)
    for name, count in (("train", spec.n_train), ("dev", spec.n_dev), ("test", spec.n_test)):
        corpus.split(name).extend(_make_utterance(spec, prototypes, rng) for _ in range(count))
    return corpus


def nearest_prototype_decode(utt, corpus):
    """Oracle decoder that knows the generation process (alignment included)."""
    fpt = corpus.spec.frames_per_token
    protos = corpus.prototypes[2:]
    out = []
    for i in range(len(utt.transcript)):
        lo = utt.offset + i * fpt
        mean = utt.frames[lo : lo + fpt].mean(axis=0)
        out.append(2 + int(np.argmin(((protos - mean) ** 2).sum(axis=1))))
    return out


def _hex_floats(arr):
    return np.ascontiguousarray(arr, dtype="<f8").tobytes().hex()


def _unhex_floats(text, count, what):
    try:
        raw = bytes.fromhex(text)
    except ValueError as exc:
        raise ParseError(f"{what}: bad hex payload") from exc
    if len(raw) != 8 * count:
        raise ParseError(f"{what}: expected {count} doubles, got {len(raw) // 8}")
    return np.frombuffer(raw, dtype="<f8").copy()


def write_corpus(corpus, path):
    spec = corpus.spec
    with open(path, "w", encoding="ascii") as fh:
        fh.write(_HEADER + "\n")
        fh.write(
            "spec"
            f" vocab_size={spec.vocab_size} frames_per_token={spec.frames_per_token}"
            f" d_feat={spec.d_feat} noise_std={spec.noise_std!r}"
            f" n_train={spec.n_train} n_dev={spec.n_dev} n_test={spec.n_test}"
            f" min_tokens={spec.min_tokens} max_tokens={spec.max_tokens} seed={spec.seed}\n"
        )
        fh.write(f"prototypes {_hex_floats(corpus.prototypes)}\n")
        for name in ("train", "dev", "test"):
            utts = corpus.split(name)
            fh.write(f"split {name} {len(utts)}\n")
            for utt in utts:
                toks = ",".join(str(t) for t in utt.transcript) or "-"
                fh.write(
                    f"{utt.frames.shape[0]} {len(utt.transcript)} {utt.offset}"
                    f" {toks} {_hex_floats(utt.frames)}\n"
                )


def _parse_spec_line(line):
    fields = {}
    for part in line.split()[1:]:
        key, _, val = part.partition("=")
        fields[key] = val
    try:
        return CorpusSpec(
            vocab_size=int(fields["vocab_size"]),
            frames_per_token=int(fields["frames_per_token"]),
            d_feat=int(fields["d_feat"]),
            noise_std=float(fields["noise_std"]),
            n_train=int(fields["n_train"]),
            n_dev=int(fields["n_dev"]),
            n_test=int(fields["n_test"]),
            min_tokens=int(fields["min_tokens"]),
            max_tokens=int(fields["max_tokens"]),
            seed=int(fields["seed"]),
        )
    except (KeyError, ValueError) as exc:
        raise ParseError(f"bad corpus spec line: {exc}") from exc


def read_corpus(path):
    with open(path, encoding="ascii") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != _HEADER:
        raise ParseError(f"{path}: not a corpus file")
    if len(lines) < 3:
        raise ParseError(f"{path}: truncated header")
    spec = _parse_spec_line(lines[1])
    if not lines[2].startswith("prototypes "):
        raise ParseError(f"{path}: missing prototype record")
    protos = _unhex_floats(
        lines[2].split(" ", 1)[1], spec.vocab_size * spec.d_feat, "prototypes"
    ).reshape(spec.vocab_size, spec.d_feat)
    corpus = Corpus(spec=spec, prototypes=protos)

    idx = 3
    for name in ("train", "dev", "test"):
        if idx >= len(lines) or not lines[idx].startswith(f"split {name} "):
            raise ParseError(f"{path}: missing split header for {name!r}")
        count = int(lines[idx].split()[2])
        idx += 1
        for rec in range(count):
            if idx >= len(lines):
                raise ParseError(f"{path}: {name} record {rec}: file truncated")
            parts = lines[idx].split()
            if len(parts) != 5:
                raise ParseError(f"{path}: {name} record {rec}: malformed record")
            try:
                t_len, u_len, offset = int(parts[0]), int(parts[1]), int(parts[2])
            except ValueError as exc:
                raise ParseError(f"{path}: {name} record {rec}: bad header") from exc
            tokens = [] if parts[3] == "-" else [int(x) for x in parts[3].split(",")]
            if len(tokens) != u_len:
                raise ParseError(f"{path}: {name} record {rec}: token count mismatch")
            frames = _unhex_floats(
                parts[4], t_len * spec.d_feat, f"{path}: {name} record {rec}"
            ).reshape(t_len, spec.d_feat)
            corpus.split(name).append(Utterance(frames=frames, transcript=tokens, offset=offset))
            idx += 1
    if idx != len(lines):
        raise ParseError(f"{path}: trailing garbage after last record")
    return corpus
