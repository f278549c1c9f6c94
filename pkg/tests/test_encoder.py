import numpy as np
import pytest

from blockstream import encoder as enc
from blockstream.autodiff import Tensor
from blockstream.blocking import BlockSpec, segment
from blockstream.encoder import EncoderConfig, EncoderParams
from blockstream.errors import ShapeError

D_FEAT = 3


def make_params(seed=0, **kw):
    cfg = EncoderConfig(d_feat=D_FEAT, d_model=16, n_layers=2, n_heads=2, d_ff=32, **kw)
    return EncoderParams(cfg, np.random.default_rng(seed))


def stream(T, seed=1):
    return np.random.default_rng(seed).normal(size=(T, D_FEAT))


def encode_one(block, params, suffix_k=0, include_lookahead=False):
    return enc.encode_block(
        block,
        enc.init_context(params),
        enc.block_mask(block, suffix_k),
        params,
        include_lookahead=include_lookahead,
    )


def test_init_context_is_c0_and_deterministic():
    params = make_params()
    c1 = enc.init_context(params)
    c2 = enc.init_context(params)
    np.testing.assert_array_equal(c1.values.data, params.c0.data)
    np.testing.assert_array_equal(c1.values.data, c2.values.data)


def test_encode_block_purity():
    params = make_params()
    block = segment(stream(20), BlockSpec(8, 4, 4))[2]
    h1, c1 = encode_one(block, params)
    h2, c2 = encode_one(block, params)
    np.testing.assert_array_equal(h1.data, h2.data)
    np.testing.assert_array_equal(c1.values.data, c2.values.data)


def test_suffix_mask_equals_truncation():
    """Masking the look-ahead suffix must reproduce the shorter geometry."""
    params = make_params()
    x = stream(24, seed=7)
    wide = segment(x, BlockSpec(8, 4, 4))
    narrow = segment(x, BlockSpec(8, 4, 0))
    for bw, bn in zip(wide, narrow):
        h_mask, c_mask = encode_one(bw, params, suffix_k=1)
        h_trunc, c_trunc = encode_one(bn, params)
        np.testing.assert_allclose(h_mask.data, h_trunc.data, atol=1e-9)
        np.testing.assert_allclose(c_mask.values.data, c_trunc.values.data, atol=1e-9)


def test_suffix_mask_two_steps():
    params = make_params()
    x = stream(24, seed=8)
    wide = segment(x, BlockSpec(8, 4, 8))[1]
    narrow = segment(x, BlockSpec(8, 4, 0))[1]
    h_mask, _ = encode_one(wide, params, suffix_k=2)
    h_trunc, _ = encode_one(narrow, params)
    np.testing.assert_allclose(h_mask.data, h_trunc.data, atol=1e-9)


def test_padded_frames_carry_no_weight():
    params = make_params()
    x = stream(12, seed=2)
    block = segment(x, BlockSpec(8, 4, 4))[0]  # 8 padded history rows
    h1, c1 = encode_one(block, params)
    frames2 = block.frames.copy()
    frames2[0] += 50.0  # padded, invalid position
    block2 = block.__class__(
        index=block.index,
        frames=frames2,
        valid=block.valid,
        center_range=block.center_range,
        start=block.start,
        spec=block.spec,
        is_last=block.is_last,
    )
    h2, c2 = encode_one(block2, params)
    np.testing.assert_array_equal(h1.data, h2.data)
    np.testing.assert_array_equal(c1.values.data, c2.values.data)


def test_causality_zero_lookahead():
    """With n_right=0, H_b must not depend on frames past its target range."""
    params = make_params()
    spec = BlockSpec(8, 4, 0)
    x = stream(16, seed=3)
    ref = [h.data.copy() for h, _ in enc.encode_stream(x, spec, params)]
    x2 = x.copy()
    x2[8:] += 10.0  # only blocks 3+ see these frames
    got = [h.data.copy() for h, _ in enc.encode_stream(x2, spec, params)]
    np.testing.assert_array_equal(ref[0], got[0])
    np.testing.assert_array_equal(ref[1], got[1])
    assert not np.allclose(ref[2], got[2])


def test_context_carries_history():
    """Block 3 must react to block-1 frames through the context chain."""
    params = make_params()
    spec = BlockSpec(0, 4, 0)  # no history overlap: only c can carry the past
    x = stream(12, seed=4)
    ref = enc.encode_stream(x, spec, params)
    x2 = x.copy()
    x2[0] += 5.0
    got = enc.encode_stream(x2, spec, params)
    assert not np.allclose(ref[2][0].data, got[2][0].data)


def test_single_block_stream_equals_encode_block():
    params = make_params()
    spec = BlockSpec(8, 4, 4)
    x = stream(4, seed=5)
    [(h_s, c_s)] = enc.encode_stream(x, spec, params)
    block = segment(x, spec)[0]
    h_b, c_b = encode_one(block, params)
    np.testing.assert_array_equal(h_s.data, h_b.data)
    np.testing.assert_array_equal(c_s.values.data, c_b.values.data)


def test_include_lookahead_rows():
    params = make_params()
    x = stream(12, seed=6)
    blocks = segment(x, BlockSpec(8, 4, 4))
    h, _ = encode_one(blocks[0], params, include_lookahead=True)
    assert h.data.shape[0] == 8  # 4 target + 4 real look-ahead rows
    h_last, _ = encode_one(blocks[-1], params, include_lookahead=True)
    assert h_last.data.shape[0] == 4  # look-ahead past T is padding, excluded


def test_lookahead_rows_extend_target_rows():
    params = make_params()
    x = stream(12, seed=9)
    block = segment(x, BlockSpec(8, 4, 4))[1]
    h_plain, _ = encode_one(block, params)
    h_full, _ = encode_one(block, params, include_lookahead=True)
    np.testing.assert_array_equal(h_full.data[:4], h_plain.data)


def test_shape_errors():
    params = make_params()
    block = segment(stream(8), BlockSpec(8, 4, 4))[0]
    c = enc.init_context(params)
    bad_mask = enc.block_mask(block)
    with pytest.raises(ShapeError):
        enc.encode_sequence(Tensor(np.zeros((4, D_FEAT + 1))), c.values, bad_mask.allowed, params)
    with pytest.raises(ShapeError):
        enc.encode_sequence(Tensor(block.frames), c.values, bad_mask.allowed[:3, :3], params)


def test_named_round_trip():
    params = make_params(seed=11)
    named = params.named()
    fresh = make_params(seed=12)
    fresh.load_named({k: t.data for k, t in named.items()})
    x = stream(8, seed=13)
    spec = BlockSpec(4, 4, 0)
    a = enc.encode_stream(x, spec, params)[-1][0].data
    b = enc.encode_stream(x, spec, fresh)[-1][0].data
    np.testing.assert_array_equal(a, b)
