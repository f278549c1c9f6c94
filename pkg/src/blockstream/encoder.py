"""Block-streaming encoder with an inherited per-block context vector.

Each block is encoded as the sequence [context slot; block frames].  The
context slot's final-layer state becomes the context vector handed to the
next block; target (and optionally look-ahead) positions become acoustic
features.  Layers are pre-norm self-attention + feed-forward; padding and
suffix-masked frames are excluded from attention as keys, so masking the
look-ahead suffix is numerically identical to truncating the block.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import AttentionMask, Tensor
from .errors import ShapeError


@dataclass(frozen=True)
class EncoderConfig:
    d_feat: int
    d_model: int = 32
    n_layers: int = 2
    n_heads: int = 2
    d_ff: int = 64
    ln_eps: float = 1e-5

    def __post_init__(self):
        if self.n_layers < 1:
            raise ShapeError("encoder needs at least one layer")
        if self.d_model % self.n_heads:
            raise ShapeError("d_model must be divisible by n_heads")


@dataclass
class ContextVector:
    values: Tensor


def _uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return Tensor(rng.uniform(-bound, bound, shape), requires_grad=True)


class EncoderParams:
    """Trainable parameter bundle; immutable during inference."""

    def __init__(self, cfg, rng):
        self.cfg = cfg
        d, f = cfg.d_model, cfg.d_feat
        self.w_in = _uniform(rng, (f, d), f)
        self.b_in = _uniform(rng, (d,), f)
        self.c0 = _uniform(rng, (d,), d)
        self.layers = []
        for _ in range(cfg.n_layers):
            self.layers.append(
                {
                    "ln1_g": Tensor(np.ones(d), requires_grad=True),
                    "ln1_b": Tensor(np.zeros(d), requires_grad=True),
                    "wq": _uniform(rng, (d, d), d),
                    "bq": _uniform(rng, (d,), d),
                    "wk": _uniform(rng, (d, d), d),
                    "bk": _uniform(rng, (d,), d),
                    "wv": _uniform(rng, (d, d), d),
                    "bv": _uniform(rng, (d,), d),
                    "wo": _uniform(rng, (d, d), d),
                    "bo": _uniform(rng, (d,), d),
                    "ln2_g": Tensor(np.ones(d), requires_grad=True),
                    "ln2_b": Tensor(np.zeros(d), requires_grad=True),
                    "w1": _uniform(rng, (d, cfg.d_ff), d),
                    "b1": _uniform(rng, (cfg.d_ff,), d),
                    "w2": _uniform(rng, (cfg.d_ff, d), cfg.d_ff),
                    "b2": _uniform(rng, (d,), cfg.d_ff),
                }
            )
        self.lnf_g = Tensor(np.ones(d), requires_grad=True)
        self.lnf_b = Tensor(np.zeros(d), requires_grad=True)

    def named(self):
        out = {"enc/w_in": self.w_in, "enc/b_in": self.b_in, "enc/c0": self.c0}
        for i, layer in enumerate(self.layers):
            for key, t in layer.items():
                out[f"enc/l{i}/{key}"] = t
        out["enc/lnf_g"] = self.lnf_g
        out["enc/lnf_b"] = self.lnf_b
        return out

    def load_named(self, arrays):
        for name, t in self.named().items():
            t.data = np.asarray(arrays[name], dtype=np.float64).reshape(t.data.shape)


def positional_encoding(length, d_model):
    pos = np.arange(length)[:, None]
    dim = np.arange(d_model)[None, :]
    angle = pos / np.power(10000.0, (2 * (dim // 2)) / d_model)
    pe = np.where(dim % 2 == 0, np.sin(angle), np.cos(angle))
    return pe


def init_context(params):
    """The learned context vector fed to the first block."""
    return ContextVector(params.c0)


def _split_heads(x, n_heads):
    *lead, s, d = x.data.shape
    x = ad.reshape(x, (*lead, s, n_heads, d // n_heads))
    return ad.swap_axes(x, -3, -2)  # [..., heads, S, d_head]


def _merge_heads(x):
    x = ad.swap_axes(x, -3, -2)
    *lead, s, h, dh = x.data.shape
    return ad.reshape(x, (*lead, s, h * dh))


def encode_sequence(x_frames, c_prev, allowed, params):
    """Shared forward pass over ``[context; frames]``.

    ``x_frames``: Tensor [..., S, d_feat]; ``c_prev``: Tensor broadcastable to
    [..., 1, d_model]; ``allowed``: bool [..., S+1, S+1].  Returns the
    final-layer sequence [..., S+1, d_model] (slot 0 is the new context).
    """
    cfg = params.cfg
    s = x_frames.data.shape[-2]
    if x_frames.data.shape[-1] != cfg.d_feat:
        raise ShapeError(f"expected d_feat={cfg.d_feat}, got {x_frames.data.shape}")
    if allowed.shape[-1] != s + 1 or allowed.shape[-2] != s + 1:
        raise ShapeError("mask must cover the block length plus one context slot")

    x = ad.matmul(x_frames, params.w_in) + params.b_in + Tensor(positional_encoding(s, cfg.d_model))
    lead = x.data.shape[:-2]
    if c_prev.data.ndim == 1:
        c = ad.reshape(c_prev, (1,) * len(lead) + (1, cfg.d_model))
        if lead:
            c = c + Tensor(np.zeros(lead + (1, cfg.d_model)))  # broadcast to batch
    else:
        c = c_prev
    seq = ad.concat([c, x], axis=-2)

    mask = AttentionMask(allowed if allowed.ndim == 2 else allowed[..., None, :, :])
    for layer in params.layers:
        xn = ad.layer_norm(seq, layer["ln1_g"], layer["ln1_b"], cfg.ln_eps)
        q = _split_heads(ad.matmul(xn, layer["wq"]) + layer["bq"], cfg.n_heads)
        k = _split_heads(ad.matmul(xn, layer["wk"]) + layer["bk"], cfg.n_heads)
        v = _split_heads(ad.matmul(xn, layer["wv"]) + layer["bv"], cfg.n_heads)
        att = _merge_heads(ad.masked_self_attention(q, k, v, mask))
        seq = seq + ad.matmul(att, layer["wo"]) + layer["bo"]
        xn = ad.layer_norm(seq, layer["ln2_g"], layer["ln2_b"], cfg.ln_eps)
        ff = ad.matmul(ad.relu(ad.matmul(xn, layer["w1"]) + layer["b1"]), layer["w2"])
        seq = seq + ff + layer["b2"]
    return ad.layer_norm(seq, params.lnf_g, params.lnf_b, cfg.ln_eps)


def block_mask(block, suffix_k=0):
    """Extended attention mask for one block: context slot + visible frames.

    Keys are attendable iff they are real (in-stream) frames not hidden by
    the ``suffix_k`` look-ahead mask; the context slot is always attendable.
    """
    from .blocking import suffix_mask  # local import to avoid a cycle

    width = block.spec.width
    key_ok = block.valid & suffix_mask(block.spec, suffix_k).allowed[0]
    allowed = np.ones((width + 1, width + 1), dtype=bool)
    allowed[:, 1:] = key_ok[None, :]
    allowed[:, 0] = True
    return AttentionMask(allowed)


def encode_block(block, c_prev, mask, params, include_lookahead=False):
    """Encode one block; returns (H_b, new ContextVector).

    ``H_b`` covers the real target frames, plus the real look-ahead frames
    when ``include_lookahead`` is set (the unified single-pass mode).
    """
    seq = encode_sequence(Tensor(block.frames), c_prev.values, mask.allowed, params)
    c_b = ContextVector(seq[0])
    center = block.center_slice
    h = seq[1 + center.start : 1 + center.stop]
    if include_lookahead:
        la = block.lookahead_slice
        n_real = int(block.valid[la].sum())
        if n_real:
            h = ad.concat([h, seq[1 + la.start : 1 + la.start + n_real]], axis=0)
    return h, c_b


def encode_stream(frames, spec, params, include_lookahead=False, offset=0, suffix_k=0):
    """Fold :func:`encode_block` over the segmented stream."""
    from .blocking import segment

    out = []
    c = init_context(params)
    for block in segment(frames, spec, offset=offset):
        h, c = encode_block(
            block, c, block_mask(block, suffix_k), params, include_lookahead=include_lookahead
        )
        out.append((h, c))
    return out
