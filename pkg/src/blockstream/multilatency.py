"""Multi-latency streaming orchestration.

A primary encoder commits tokens once its look-ahead frames have arrived;
zero-look-ahead auxiliary passes cover the primary's look-ahead region so
the composed system surfaces output for every received frame immediately.

Two realizations are provided:

* method "A": ``n_right / n_center`` auxiliary encoder chains sharing the
  primary's parameters, each running over the input shifted forward by
  ``i * n_center`` frames with the last ``i * n_center`` look-ahead
  positions masked away.
* method "B": a single encoding pass per block; target-region features are
  committed, look-ahead-region features form the provisional tail.
* method "single": a plain one-encoder streamer (the baseline).

The orchestrator never reads a frame beyond its clock; the provisional
tail is recomputed each step and only the final tail enters the
transcript.  The first end-of-sequence token in the tail terminates the
stream.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import encoder as enc
from . import transducer as td
from .autodiff import Tensor
from .blocking import Block, BlockSpec
from .errors import ContractError
from .metrics import TokenEvent


@dataclass(frozen=True)
class LatencyConfig:
    primary_spec: BlockSpec
    method: str  # "A" | "B" | "single"
    seed: int = 0

    def __post_init__(self):
        if self.method not in ("A", "B", "single"):
            raise ContractError(f"unknown method {self.method!r}")
        if self.method in ("A", "B"):
            spec = self.primary_spec
            if spec.n_right < spec.n_center or spec.n_right % spec.n_center:
                raise ContractError(
                    "methods A/B need n_right to be a positive multiple of n_center"
                )

    @property
    def aux_count(self):
        if self.method == "single":
            return 0
        return self.primary_spec.n_right // self.primary_spec.n_center


@dataclass
class StepOutput:
    primary_tokens: list  # newly committed token ids
    aux_tokens: list  # current provisional tail token ids
    done: bool


class NeuralRecognizer:
    """Trained encoder + transducer bundle behind the orchestrator protocol."""

    def __init__(self, enc_params, dec_params, max_symbols_per_frame=3):
        self.enc_params = enc_params
        self.dec_params = dec_params
        self.max_symbols = max_symbols_per_frame

    @property
    def d_feat(self):
        return self.enc_params.cfg.d_feat

    def initial_context(self):
        return enc.init_context(self.enc_params)

    def encode_block(self, block, c_prev, suffix_k, include_lookahead=False):
        mask = enc.block_mask(block, suffix_k)
        with ad.no_grad():
            seq = enc.encode_sequence(
                Tensor(block.frames), c_prev.values, mask.allowed, self.enc_params
            )
        c_new = enc.ContextVector(seq[0])
        center = block.center_slice
        h_center = seq[1 + center.start : 1 + center.stop]
        h_look = None
        if include_lookahead:
            la = block.lookahead_slice
            n_real = int(block.valid[la].sum())
            h_look = seq[1 + la.start : 1 + la.start + n_real]
        return h_center, h_look, c_new

    def decode_start(self):
        return td.decode_start(self.dec_params)

    def decode(self, h_block, state, frame_offset):
        return td.greedy_decode_block(
            h_block, state, self.dec_params, self.max_symbols, frame_offset
        )


@dataclass
class _AuxChain:
    shift: int  # i * n_center
    suffix_k: int
    ctx: object = None
    blocks: int = 0
    newest: object = None  # (h_center, center_range)


class Streamer:
    """Streaming state machine: push(frames) / poll() / finalize()."""

    def __init__(self, config, model):
        self.config = config
        self.model = model
        self.spec = config.primary_spec
        self._nc = self.spec.n_center
        self._nr = self.spec.n_right
        self._buf = np.zeros((0, model.d_feat))
        self.t = 0
        self.done = False
        self.max_frame_read = 0
        self._stepped = False
        self._transcript = None
        self._committed = []  # (token, emission_frame)
        self._tail = []  # (token, emission_frame)
        self.trace = []
        self._p_blocks = 0
        self._p_ctx = model.initial_context()
        self._p_dec = model.decode_start()
        self._aux = [
            _AuxChain(shift=i * self._nc, suffix_k=i, ctx=model.initial_context())
            for i in range(1, config.aux_count + 1)
        ]
        self._b_look = None  # (h_look, region_start)

    # -- frame access -------------------------------------------------------

    def _read_block(self, offset, b, cutoff):
        """Materialize block ``b`` of the tiling starting at ``offset``.

        Frames at absolute index >= ``cutoff`` are zero-padded and marked
        invalid, so nothing past the clock is ever read.
        """
        spec = self.spec
        start = offset + (b - 1) * self._nc - spec.n_left
        width = spec.width
        data = np.zeros((width, self.model.d_feat))
        valid = np.zeros(width, dtype=bool)
        lo = max(start, 0)
        hi = min(start + width, cutoff)
        if hi > lo:
            if hi > self.t:
                raise ContractError("internal: attempted to read past the clock")
            self.max_frame_read = max(self.max_frame_read, hi)
            data[lo - start : hi - start] = self._buf[lo:hi]
            valid[lo - start : hi - start] = True
        center = (offset + (b - 1) * self._nc, min(offset + b * self._nc, cutoff))
        return Block(
            index=b, frames=data, valid=valid, center_range=center, start=start, spec=spec
        )

    # -- streaming ----------------------------------------------------------

    def push(self, new_frames):
        if self.done or self._transcript is not None:
            raise ContractError("push after the stream has ended")
        new_frames = np.asarray(new_frames, dtype=np.float64)
        if new_frames.ndim != 2 or new_frames.shape[1] != self.model.d_feat:
            raise ContractError(f"push expects [n x {self.model.d_feat}] frames")
        self._buf = np.vstack([self._buf, new_frames])
        self.t += new_frames.shape[0]

    def step(self, new_frames):
        self.push(new_frames)
        return self.poll()

    def poll(self):
        """Process every block whose visible span has arrived."""
        self._stepped = True
        new_committed = self._advance_primary(cutoff=self.t)
        if self.config.method == "A":
            self._advance_aux_chains()
            self._tail = self._build_tail_a(final=False)
        elif self.config.method == "B":
            self._tail = self._build_tail_b()
        return StepOutput(
            primary_tokens=[tok for tok, _ in new_committed],
            aux_tokens=[tok for tok, _ in self._tail],
            done=self.done,
        )

    def _advance_primary(self, cutoff, flush=False):
        """Encode/commit primary blocks whose look-ahead window is filled.

        With ``flush`` set (stream exhausted, single mode only), remaining
        blocks are encoded with their missing look-ahead masked away.
        """
        vocab = self.model.dec_params.vocab if hasattr(self.model, "dec_params") else None
        eos = vocab.eos if vocab else td.EOS
        out = []
        want_look = self.config.method == "B"
        while not self.done:
            b = self._p_blocks + 1
            center_start = (b - 1) * self._nc
            if flush:
                if center_start >= cutoff:
                    break
            elif b * self._nc + self._nr > self.t:
                break
            block = self._read_block(0, b, cutoff)
            h_center, h_look, self._p_ctx = self.model.encode_block(
                block, self._p_ctx, 0, include_lookahead=want_look
            )
            emissions, dec_state = self.model.decode(h_center, self._p_dec, block.center_range[0])
            self._p_dec = dec_state
            if want_look:
                self._b_look = (h_look, block.center_range[1])
            for tok, frame in emissions:
                if tok == eos:
                    if self.config.method == "single":
                        self.done = True
                        break
                    continue  # primary eos carries no control meaning here
                self._committed.append((tok, frame))
                out.append((tok, frame))
                self.trace.append(
                    TokenEvent(tok, frame, block.center_range[1], self.t, committed=True)
                )
            self._p_blocks = b
        return out

    def _advance_aux_chains(self):
        for chain in self._aux:
            while True:
                b = chain.blocks + 1
                if b * self._nc + self._nr > self.t:
                    break
                block = self._read_block(chain.shift, b, cutoff=self.t)
                h_center, _, chain.ctx = self.model.encode_block(
                    block, chain.ctx, chain.suffix_k
                )
                chain.newest = (h_center, block.center_range)
                chain.blocks = b

    def _decode_tail_segment(self, h, state, frame_offset, center_end, tail):
        emissions, state = self.model.decode(h, state, frame_offset)
        for tok, frame in emissions:
            if tok == td.EOS:
                self.done = True
                return state, True
            tail.append((tok, frame))
            self.trace.append(TokenEvent(tok, frame, center_end, self.t, committed=False))
        return state, False

    def _build_tail_a(self, final):
        if final:
            return self._tail_at_exhaustion(self._p_blocks * self._nc)
        frontier = self._p_blocks * self._nc
        tail = []
        state = self._p_dec
        if self._p_blocks < 1:
            # cold start: nothing committed yet, so the whole received stream
            # is the tail; cover it with a fresh zero-look-ahead pass
            return self._tail_from_scratch()
        for chain in self._aux:
            if chain.newest is None:
                continue
            h, center = chain.newest
            if center[0] != frontier + chain.shift - self._nc:
                continue  # chain not aligned yet (mid-hop poll)
            state, hit_eos = self._decode_tail_segment(h, state, center[0], center[1], tail)
            if hit_eos:
                return tail
        return tail

    def _tail_at_exhaustion(self, pos):
        """Decode [pos, t) from fresh primary blocks at stream end.

        Every frame has arrived by now, so the remaining blocks can be
        encoded as ordinary target rows whose look-ahead is truncated by
        the stream end itself — the same features the model trains on —
        superseding the in-flight masked estimates of the tail.
        """
        tail = []
        state = self._p_dec
        b = self._p_blocks
        while pos < self.t:
            b += 1
            block = self._read_block(0, b, cutoff=self.t)
            h_center, _, self._p_ctx = self.model.encode_block(block, self._p_ctx, 0)
            c_lo, c_hi = block.center_range
            if c_hi > pos:
                rows = h_center[max(pos, c_lo) - c_lo : c_hi - c_lo]
                state, hit_eos = self._decode_tail_segment(
                    rows, state, max(pos, c_lo), c_hi, tail
                )
                if hit_eos:
                    break
            pos = c_hi
        return tail

    def _tail_from_scratch(self):
        """Stream shorter than one primary block: one zero-look-ahead pass."""
        tail = []
        ctx = self.model.initial_context()
        state = self._p_dec
        k = self.config.aux_count
        b = 0
        while b * self._nc < self.t:
            b += 1
            block = self._read_block(0, b, cutoff=self.t)
            h, _, ctx = self.model.encode_block(block, ctx, k)
            state, hit_eos = self._decode_tail_segment(
                h, state, block.center_range[0], block.center_range[1], tail
            )
            if hit_eos:
                break
        return tail

    def _build_tail_b(self, final=False):
        tail = []
        state = self._p_dec
        if final:
            start = self._b_look[1] if self._b_look is not None else 0
            return self._tail_at_exhaustion(start)
        if self._b_look is None:
            return self._tail_from_scratch()
        h_look, region_start = self._b_look
        n = h_look.data.shape[0]
        if n:
            state, _ = self._decode_tail_segment(
                h_look, state, region_start, region_start + n, tail
            )
        return tail

    # -- termination --------------------------------------------------------

    def finalize(self):
        """Transcript = committed tokens + final provisional tail."""
        if not self._stepped:
            raise ContractError("finalize before any step")
        if self._transcript is not None:
            return self._transcript
        if not self.done:
            if self.config.method == "single":
                self._advance_primary(cutoff=self.t, flush=True)
            elif self.config.method == "A":
                self._advance_aux_chains()
                self._tail = self._build_tail_a(final=True)
            else:
                self._tail = self._build_tail_b(final=True)
        tokens = [tok for tok, _ in self._committed] + [tok for tok, _ in self._tail]
        self._transcript = [tok for tok in tokens if tok != td.EOS]
        return self._transcript

    @property
    def committed_frontier(self):
        return self._p_blocks * self._nc


def step(streamer, new_frames):
    """One orchestration step: feed a target-hop of frames, get StepOutput."""
    return streamer.step(new_frames)


def finalize(streamer):
    return streamer.finalize()


def run_stream(config, model, frames):
    """Convenience: hop through a whole utterance; returns (transcript, streamer)."""
    streamer = Streamer(config, model)
    hop = config.primary_spec.n_center
    t = 0
    total = frames.shape[0]
    while t < total and not streamer.done:
        out = streamer.step(frames[t : t + hop])
        t += min(hop, total - t)
        if out.done:
            break
    return streamer.finalize(), streamer


# ---------------------------------------------------------------------------
# training objectives


def _check_trainable_spec(spec):
    if spec.n_right < spec.n_center or spec.n_right % spec.n_center:
        raise ContractError("multi-latency training needs n_right = k * n_center, k >= 1")


def encode_batch(frame_list, spec, params, suffix_ks, include_lookahead=False):
    """Batched block-chain encoding of padded utterances.

    Returns (h_centers [B, n_blocks*n_center, d_model], h_looks list of
    per-block [B, n_right, d_model]); rows past each utterance's true
    length are garbage and must be sliced away by the caller.
    """
    b_sz = len(frame_list)
    d_feat = params.cfg.d_feat
    lengths = [f.shape[0] for f in frame_list]
    t_max = max(lengths)
    nc, nl, width = spec.n_center, spec.n_left, spec.width
    n_blocks = -(-t_max // nc)
    padded = np.zeros((b_sz, t_max, d_feat))
    valid = np.zeros((b_sz, t_max), dtype=bool)
    for i, f in enumerate(frame_list):
        padded[i, : lengths[i]] = f
        valid[i, : lengths[i]] = True
    suffix_ok = np.ones((b_sz, width), dtype=bool)
    for i, k in enumerate(suffix_ks):
        if k:
            suffix_ok[i, width - k * nc :] = False

    c = params.c0
    h_centers = []
    h_looks = []
    for b in range(1, n_blocks + 1):
        start = (b - 1) * nc - nl
        blk = np.zeros((b_sz, width, d_feat))
        blk_valid = np.zeros((b_sz, width), dtype=bool)
        lo, hi = max(start, 0), min(start + width, t_max)
        if hi > lo:
            blk[:, lo - start : hi - start] = padded[:, lo:hi]
            blk_valid[:, lo - start : hi - start] = valid[:, lo:hi]
        key_ok = blk_valid & suffix_ok
        allowed = np.ones((b_sz, width + 1, width + 1), dtype=bool)
        allowed[:, :, 1:] = key_ok[:, None, :]
        seq = enc.encode_sequence(Tensor(blk), c, allowed, params)
        c = seq[:, 0:1, :]
        h_centers.append(seq[:, 1 + nl : 1 + nl + nc, :])
        if include_lookahead:
            h_looks.append(seq[:, 1 + nl + nc :, :])
    return ad.concat(h_centers, axis=1), h_looks


def _batch_loss(feature_list, batch, dec_params):
    losses = []
    for feats, utt in zip(feature_list, batch):
        targets = list(utt.transcript) + [td.EOS]
        losses.append(ad.reshape(td.rnnt_loss(feats, targets, dec_params), (1,)))
    return ad.tsum(ad.concat(losses, axis=0)) * (1.0 / len(feature_list))


def train_step_method_a(batch, spec, mask_prob, models, rng):
    """Shared-parameter training: random look-ahead suffix masking per utterance."""
    if not 0 <= mask_prob <= 1:
        raise ContractError("mask_prob must lie in [0, 1]")
    if mask_prob > 0:
        _check_trainable_spec(spec)
    enc_params, dec_params = models
    k_max = spec.n_right // spec.n_center
    ks = []
    for _ in batch:
        if mask_prob > 0 and rng.random() < mask_prob:
            ks.append(int(rng.integers(1, k_max + 1)))
        else:
            ks.append(0)
    h, _ = encode_batch([u.frames for u in batch], spec, enc_params, ks)
    feats = [h[i, : u.frames.shape[0]] for i, u in enumerate(batch)]
    return _batch_loss(feats, batch, dec_params)


def train_step_method_b(batch, spec, mode_prob, models, rng):
    """Unified training: target-only vs target+look-ahead objectives."""
    if not 0 <= mode_prob <= 1:
        raise ContractError("mode_prob must lie in [0, 1]")
    _check_trainable_spec(spec)
    enc_params, dec_params = models
    joint_mode = [mode_prob > 0 and rng.random() < mode_prob for _ in batch]
    h, h_looks = encode_batch(
        [u.frames for u in batch], spec, enc_params, [0] * len(batch), include_lookahead=True
    )
    nc, nr = spec.n_center, spec.n_right
    feats = []
    for i, utt in enumerate(batch):
        t_len = utt.frames.shape[0]
        if joint_mode[i]:
            # every block contributes its target rows followed by its
            # look-ahead rows, so look-ahead features occur throughout the
            # utterance exactly as the streaming tail decoder sees them
            parts = []
            for b in range(len(h_looks)):
                c_lo = b * nc
                if c_lo >= t_len:
                    break
                parts.append(h[i, c_lo : min(c_lo + nc, t_len)])
                n_look = min(nr, t_len - (c_lo + nc))
                if n_look > 0:
                    parts.append(h_looks[b][i, :n_look])
            feats.append(ad.concat(parts, axis=0))
        else:
            feats.append(h[i, :t_len])
    return _batch_loss(feats, batch, dec_params)


def partition_method_b(block_tokens, block):
    """Split decoded (token, emission_frame) pairs into target vs look-ahead."""
    primary, aux = [], []
    c_lo, c_hi = block.center_range
    la_lo = block.start + block.spec.n_left + block.spec.n_center
    la_hi = block.start + block.spec.width
    for tok, frame in block_tokens:
        if c_lo <= frame < c_hi:
            primary.append((tok, frame))
        elif la_lo <= frame < la_hi:
            aux.append((tok, frame))
        else:
            raise ContractError(f"emission frame {frame} outside block {block.index}")
    return primary, aux
