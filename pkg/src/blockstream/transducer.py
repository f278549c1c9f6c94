"""Transducer head: label encoder, joint network, lattice loss, decoding.

The joint network computes
``log_softmax(Linear(tanh(Linear(h_ae) + Linear(h_le))))`` over the
vocabulary (blank id 0, end-of-sequence id 1).  The loss sums over all
monotone frame/label alignments via a forward lattice; its gradient with
respect to the per-point log-probabilities is the (negated) posterior edge
occupancy computed with a matching backward lattice.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, ShapeError

BLANK = 0
EOS = 1


@dataclass(frozen=True)
class Vocabulary:
    size: int
    blank: int = BLANK
    eos: int = EOS

    def __post_init__(self):
        if self.size < 3:
            raise ContractError("vocabulary needs blank, eos and >= 1 content token")

    @property
    def content_ids(self):
        return range(2, self.size)


class TransducerParams:
    """Label-encoder (single-layer LSTM) + joint network parameters."""

    def __init__(self, vocab, d_model, d_joint, rng):
        self.vocab = vocab
        self.d_model = d_model
        self.d_joint = d_joint
        d = d_model
        v = vocab.size

        def u(shape, fan_in):
            bound = 1.0 / np.sqrt(max(fan_in, 1))
            return Tensor(rng.uniform(-bound, bound, shape), requires_grad=True)

        self.embed = u((v, d), d)
        self.wx = u((d, 4 * d), d)
        self.wh = u((d, 4 * d), d)
        self.b = u((4 * d,), d)
        self.h0 = u((d,), d)
        self.cell0 = u((d,), d)
        self.j_wa = u((d, d_joint), d)
        self.j_wl = u((d, d_joint), d)
        self.j_b = u((d_joint,), d)
        self.j_wo = u((d_joint, v), d_joint)
        self.j_bo = u((v,), d_joint)

    def named(self):
        return {
            "dec/embed": self.embed,
            "dec/wx": self.wx,
            "dec/wh": self.wh,
            "dec/b": self.b,
            "dec/h0": self.h0,
            "dec/cell0": self.cell0,
            "dec/j_wa": self.j_wa,
            "dec/j_wl": self.j_wl,
            "dec/j_b": self.j_b,
            "dec/j_wo": self.j_wo,
            "dec/j_bo": self.j_bo,
        }

    def load_named(self, arrays):
        for name, t in self.named().items():
            t.data = np.asarray(arrays[name], dtype=np.float64).reshape(t.data.shape)


@dataclass
class LabelEncoderState:
    h: Tensor
    c: Tensor


def label_start(params):
    return LabelEncoderState(params.h0, params.cell0)


def label_advance(state, token, params):
    """One recurrence step; advancing by the empty sequence is the identity."""
    if not 0 <= token < params.vocab.size:
        raise ContractError(f"token {token} outside vocabulary of size {params.vocab.size}")
    d = params.d_model
    x = params.embed[token]
    z = ad.matmul(ad.reshape(x, (1, d)), params.wx) + ad.matmul(
        ad.reshape(state.h, (1, d)), params.wh
    ) + params.b
    z = ad.reshape(z, (4 * d,))
    i_gate = ad.sigmoid(z[0:d])
    f_gate = ad.sigmoid(z[d : 2 * d])
    g_gate = ad.tanh(z[2 * d : 3 * d])
    o_gate = ad.sigmoid(z[3 * d : 4 * d])
    c_new = f_gate * state.c + i_gate * g_gate
    h_new = o_gate * ad.tanh(c_new)
    return LabelEncoderState(h_new, c_new)


def label_encode(prefix, params):
    """Encode a full label prefix from scratch; returns (h_le, state)."""
    state = label_start(params)
    for token in prefix:
        if token == params.vocab.blank:
            raise ContractError("label prefixes must not contain the blank token")
        state = label_advance(state, token, params)
    return state.h, state


def joint(h_ae, h_le, params):
    """Log-probability vector over the vocabulary (Tensor[..., V])."""
    if h_ae.data.shape[-1] != params.d_model or h_le.data.shape[-1] != params.d_model:
        raise ShapeError("joint: acoustic/label features must have the model dimension")
    pre = ad.tanh(ad.matmul(h_ae, params.j_wa) + ad.matmul(h_le, params.j_wl) + params.j_b)
    return ad.log_softmax(ad.matmul(pre, params.j_wo) + params.j_bo, axis=-1)


def _label_states(targets, params):
    """Stacked label-encoder outputs for every prefix of ``targets`` [U+1, d]."""
    state = label_start(params)
    rows = [ad.reshape(state.h, (1, params.d_model))]
    for token in targets:
        state = label_advance(state, token, params)
        rows.append(ad.reshape(state.h, (1, params.d_model)))
    return ad.concat(rows, axis=0)


def joint_lattice(h_stream, targets, params):
    """Log-probabilities at every lattice point: Tensor [T, U+1, V]."""
    t_len = h_stream.data.shape[0]
    u_len = len(targets)
    g = _label_states(targets, params)  # [U+1, d]
    f_proj = ad.matmul(h_stream, params.j_wa)  # [T, J]
    g_proj = ad.matmul(g, params.j_wl)  # [U+1, J]
    pre = ad.tanh(
        ad.reshape(f_proj, (t_len, 1, params.d_joint))
        + ad.reshape(g_proj, (1, u_len + 1, params.d_joint))
        + params.j_b
    )
    return ad.log_softmax(ad.matmul(pre, params.j_wo) + params.j_bo, axis=-1)


def _lattice_alpha_beta(logp, targets):
    t_len, width, _ = logp.shape
    u_len = len(targets)
    assert width == u_len + 1
    neg = -np.inf
    alpha = np.full((t_len, u_len + 1), neg)
    alpha[0, 0] = 0.0
    for t in range(t_len):
        for u in range(u_len + 1):
            if t == 0 and u == 0:
                continue
            acc = neg
            if t > 0:
                acc = np.logaddexp(acc, alpha[t - 1, u] + logp[t - 1, u, BLANK])
            if u > 0:
                acc = np.logaddexp(acc, alpha[t, u - 1] + logp[t, u - 1, targets[u - 1]])
            alpha[t, u] = acc
    beta = np.full((t_len, u_len + 1), neg)
    beta[t_len - 1, u_len] = logp[t_len - 1, u_len, BLANK]
    for t in range(t_len - 1, -1, -1):
        for u in range(u_len, -1, -1):
            if t == t_len - 1 and u == u_len:
                continue
            acc = neg
            if t + 1 < t_len:
                acc = np.logaddexp(acc, logp[t, u, BLANK] + beta[t + 1, u])
            if u < u_len:
                acc = np.logaddexp(acc, logp[t, u, targets[u]] + beta[t, u + 1])
            beta[t, u] = acc
    return alpha, beta


def _lattice_loss_op(logp, targets):
    """-log of the full alignment sum, with analytic gradient wrt ``logp``."""
    t_len = logp.data.shape[0]
    u_len = len(targets)
    alpha, beta = _lattice_alpha_beta(logp.data, targets)
    log_z = alpha[t_len - 1, u_len] + logp.data[t_len - 1, u_len, BLANK]

    def bwd(g):
        if not logp.requires_grad:
            return
        grad = np.zeros_like(logp.data)
        for t in range(t_len):
            for u in range(u_len + 1):
                if not np.isfinite(alpha[t, u]):
                    continue
                # blank edge (t, u) -> (t + 1, u); terminal blank ends the lattice
                nxt = 0.0 if (t == t_len - 1 and u == u_len) else (
                    beta[t + 1, u] if t + 1 < t_len else -np.inf
                )
                occ = alpha[t, u] + logp.data[t, u, BLANK] + nxt - log_z
                if np.isfinite(occ):
                    grad[t, u, BLANK] -= np.exp(occ)
                if u < u_len:
                    occ = alpha[t, u] + logp.data[t, u, targets[u]] + beta[t, u + 1] - log_z
                    if np.isfinite(occ):
                        grad[t, u, targets[u]] -= np.exp(occ)
        ad._accum(logp, grad * g)

    return ad._node(np.asarray(-log_z), (logp,), bwd)


def rnnt_loss(h_stream, targets, params):
    """Negative log-likelihood of ``targets`` under the alignment lattice.

    ``h_stream``: Tensor [T' x d_model]; ``targets``: blank-free token ids.
    """
    if h_stream.data.ndim != 2 or h_stream.data.shape[0] < 1:
        raise ContractError("rnnt_loss: need at least one acoustic feature frame")
    targets = list(targets)
    for tok in targets:
        if tok == params.vocab.blank:
            raise ContractError("rnnt_loss: targets must not contain the blank token")
        if not 0 <= tok < params.vocab.size:
            raise ContractError(f"rnnt_loss: token {tok} out of vocabulary")
    logp = joint_lattice(h_stream, targets, params)
    return _lattice_loss_op(logp, targets)


# ---------------------------------------------------------------------------
# decoding


@dataclass
class DecodeState:
    label_state: LabelEncoderState
    h_le: Tensor


def decode_start(params):
    h, state = label_encode([], params)
    return DecodeState(state, h)


def _advance(state, token, params):
    new = label_advance(state.label_state, token, params)
    return DecodeState(new, new.h)


def greedy_decode_block(h_block, state, params, max_symbols_per_frame=3, frame_offset=0):
    """Greedy frame-synchronous decoding, resumable across blocks.

    Returns (emissions, state) where each emission is ``(token, abs_frame)``.
    """
    if max_symbols_per_frame < 1:
        raise ContractError("max_symbols_per_frame must be >= 1")
    emissions = []
    with ad.no_grad():
        for f in range(h_block.data.shape[0]):
            h_ae = Tensor(h_block.data[f])
            for _ in range(max_symbols_per_frame):
                logp = joint(h_ae, state.h_le, params).data
                tok = int(np.argmax(logp))
                if tok == params.vocab.blank:
                    break
                emissions.append((tok, frame_offset + f))
                state = _advance(state, tok, params)
    return emissions, state


@dataclass
class Hypothesis:
    tokens: tuple
    log_score: float
    state: DecodeState

    def __post_init__(self):
        if any(t == BLANK for t in self.tokens):
            raise ContractError("hypotheses never contain the blank token")


def initial_beam(params):
    return [Hypothesis(tokens=(), log_score=0.0, state=decode_start(params))]


def _merge(pool, hyp):
    old = pool.get(hyp.tokens)
    if old is None:
        pool[hyp.tokens] = hyp
    else:
        # same token sequence implies the same label-encoder state
        merged = np.logaddexp(old.log_score, hyp.log_score)
        pool[hyp.tokens] = Hypothesis(hyp.tokens, float(merged), old.state)


def beam_search_block(h_block, beams, width, params, max_symbols_per_frame=3):
    """Frame-synchronous beam search over one feature block, resumable.

    Width 1 reproduces greedy decoding; hypotheses with identical token
    sequences are merged by log-sum-exp.
    """
    if width < 1:
        raise ContractError("beam width must be >= 1")
    if not beams:
        raise ContractError("beam_search_block needs a non-empty beam")
    with ad.no_grad():
        for f in range(h_block.data.shape[0]):
            h_ae = Tensor(h_block.data[f])
            finished = {}
            ongoing = {}
            for hyp in beams:
                _merge(ongoing, hyp)
            for step in range(max_symbols_per_frame + 1):
                new_ongoing = {}
                for hyp in ongoing.values():
                    logp = joint(h_ae, hyp.state.h_le, params).data
                    _merge(
                        finished,
                        Hypothesis(hyp.tokens, hyp.log_score + float(logp[BLANK]), hyp.state),
                    )
                    if step < max_symbols_per_frame:
                        for tok in range(1, params.vocab.size):
                            _merge(
                                new_ongoing,
                                Hypothesis(
                                    hyp.tokens + (tok,),
                                    hyp.log_score + float(logp[tok]),
                                    _advance(hyp.state, tok, params),
                                ),
                            )
                # a token sequence can appear both finished (frame consumed)
                # and ongoing (still emitting at this frame); those are
                # distinct lattice states and must not be merged here
                pool = [(h, False) for h in finished.values()]
                pool += [(h, True) for h in new_ongoing.values()]
                pool.sort(key=lambda entry: -entry[0].log_score)
                finished = {h.tokens: h for h, live in pool[:width] if not live}
                ongoing = {h.tokens: h for h, live in pool[:width] if live}
                if not ongoing:
                    break
            beams = sorted(finished.values(), key=lambda h: -h.log_score)[:width]
    return beams
