import numpy as np
import pytest

from blockstream import multilatency as ml
from blockstream import encoder as enc
from blockstream import transducer as td
from blockstream.autodiff import Tensor
from blockstream.blocking import BlockSpec
from blockstream.encoder import EncoderConfig, EncoderParams
from blockstream.errors import ContractError
from blockstream.metrics import measure_latency
from blockstream.multilatency import LatencyConfig, Streamer
from blockstream.synthdata import CorpusSpec, generate_corpus
from blockstream.transducer import EOS, TransducerParams, Vocabulary


class FixtureRecognizer:
    """Hand-set recognizer: frame value v >= 2 decodes as token v, 1 as eos.

    Encoding passes the raw (visible) frame values through, so every
    orchestration decision is hand-traceable.
    """

    d_feat = 1

    def initial_context(self):
        return None

    def encode_block(self, block, c_prev, suffix_k, include_lookahead=False):
        nl, nc = block.spec.n_left, block.spec.n_center
        n_center = block.center_range[1] - block.center_range[0]
        h_center = Tensor(block.frames[nl : nl + n_center])
        h_look = None
        if include_lookahead:
            la = block.lookahead_slice
            n_real = int(block.valid[la].sum())
            h_look = Tensor(block.frames[nl + nc : nl + nc + n_real])
        return h_center, h_look, c_prev

    def decode_start(self):
        return None

    def decode(self, h_block, state, frame_offset):
        emissions = []
        for i, row in enumerate(h_block.data):
            v = int(round(float(row[0])))
            if v >= 1:
                emissions.append((v, frame_offset + i))
        return emissions, state


def token_stream(tokens, region=4, eos_at=None):
    """One frame value per region (at its last frame), zeros elsewhere."""
    frames = np.zeros((region * len(tokens), 1))
    for i, tok in enumerate(tokens):
        frames[region * (i + 1) - 1, 0] = tok
    if eos_at is not None:
        frames[eos_at, 0] = EOS
    return frames


def drive(streamer, frames, hop=4):
    outs = []
    t = 0
    while t < frames.shape[0] and not streamer.done:
        outs.append(streamer.step(frames[t : t + hop]))
        t += hop
    return outs


def test_single_mode_reduction():
    frames = token_stream([2, 3, EOS])
    s = Streamer(LatencyConfig(BlockSpec(8, 4, 0), "single"), FixtureRecognizer())
    outs = drive(s, frames)
    assert [o.primary_tokens for o in outs] == [[2], [3], []]
    assert all(o.aux_tokens == [] for o in outs)
    assert [o.done for o in outs] == [False, False, True]
    assert s.finalize() == [2, 3]


def test_method_a_hand_trace():
    frames = token_stream([2, 3, 4, 5])
    s = Streamer(LatencyConfig(BlockSpec(8, 4, 4), "A"), FixtureRecognizer())
    outs = drive(s, frames)
    assert [o.primary_tokens for o in outs] == [[], [2], [3], [4]]
    assert [o.aux_tokens for o in outs] == [[2], [3], [4], [5]]
    assert s.finalize() == [2, 3, 4, 5]


def test_method_a_deeper_lookahead():
    frames = token_stream([2, 3, 4, 5, 6])
    s = Streamer(LatencyConfig(BlockSpec(8, 4, 8), "A"), FixtureRecognizer())
    outs = drive(s, frames)
    # primary commits lag by n_right = 2 hops; the tail covers the gap
    assert [o.primary_tokens for o in outs] == [[], [], [2], [3], [4]]
    assert [o.aux_tokens for o in outs] == [[2], [2, 3], [3, 4], [4, 5], [5, 6]]
    assert s.finalize() == [2, 3, 4, 5, 6]


def test_method_b_hand_trace():
    frames = token_stream([2, 3, 4, 5])
    s = Streamer(LatencyConfig(BlockSpec(8, 4, 4), "B"), FixtureRecognizer())
    outs = drive(s, frames)
    assert [o.primary_tokens for o in outs] == [[], [2], [3], [4]]
    assert [o.aux_tokens for o in outs] == [[2], [3], [4], [5]]
    assert s.finalize() == [2, 3, 4, 5]


def test_done_at_first_aux_eos():
    # eos sits in the third region; the aux path sees it one hop before
    # the primary would commit that region
    frames = np.vstack([token_stream([2, 3]), token_stream([4, 5])])
    frames[11, 0] = EOS  # third region [8, 12)
    s = Streamer(LatencyConfig(BlockSpec(8, 4, 4), "A"), FixtureRecognizer())
    outs = drive(s, frames)
    assert outs[-1].done and len(outs) == 3
    assert s.t == 12  # no frames consumed past the terminating step
    assert s.finalize() == [2, 3]
    with pytest.raises(ContractError):
        s.push(frames[12:16])


def test_finalize_before_any_step_raises():
    s = Streamer(LatencyConfig(BlockSpec(8, 4, 4), "A"), FixtureRecognizer())
    with pytest.raises(ContractError):
        s.finalize()


def test_finalize_is_committed_plus_tail():
    frames = token_stream([2, 3, 4, 5, 6])
    s = Streamer(LatencyConfig(BlockSpec(8, 4, 4), "A"), FixtureRecognizer())
    drive(s, frames)
    committed = [tok for tok, _ in s._committed]
    tail = [tok for tok, _ in s._tail]
    got = s.finalize()
    assert got[: len(committed)] == committed
    assert got == committed + [tok for tok, _ in s._tail] or got == committed + tail


def test_monotone_commitment():
    frames = token_stream([2, 3, 4, 5, 6, 7])
    s = Streamer(LatencyConfig(BlockSpec(8, 4, 4), "A"), FixtureRecognizer())
    seen = []
    t = 0
    while t < frames.shape[0]:
        out = s.step(frames[t : t + 4])
        t += 4
        prev = list(seen)
        seen.extend(out.primary_tokens)
        assert seen[: len(prev)] == prev
    final = s.finalize()
    assert final[: len(seen)] == seen


def test_coverage_partition():
    frames = token_stream([2, 3, 4, 5])
    for method in ("A", "B"):
        s = Streamer(LatencyConfig(BlockSpec(8, 4, 4), method), FixtureRecognizer())
        drive(s, frames)
        s.finalize()
        committed_regions = sorted({ev.region_end for ev in s.trace if ev.committed})
        tail_regions = sorted({ev.region_end for ev in s.trace if not ev.committed})
        assert committed_regions == [4, 8, 12]
        assert 16 in tail_regions
        # committed tokens and the final tail cover each region exactly once
        assert s.finalize() == [2, 3, 4, 5]


def test_never_reads_past_clock():
    frames = token_stream([2, 3, 4, 5, 6])
    for method, spec in (("A", BlockSpec(8, 4, 4)), ("A", BlockSpec(8, 4, 8)),
                         ("B", BlockSpec(8, 4, 4))):
        s = Streamer(LatencyConfig(spec, method), FixtureRecognizer())
        t = 0
        while t < frames.shape[0] and not s.done:
            s.step(frames[t : t + 4])
            t += 4
            assert s.max_frame_read <= s.t
        s.finalize()
        assert s.max_frame_read <= s.t


def test_multiple_modes_have_zero_structural_delay():
    frames = token_stream([2, 3, 4, 5, 6])
    for method in ("A", "B"):
        s = Streamer(LatencyConfig(BlockSpec(8, 4, 4), method), FixtureRecognizer())
        drive(s, frames)
        s.finalize()
        report = measure_latency(s.trace, frame_ms=32)
        assert report.max_ms == 0, method


def test_single_mode_lookahead_delay():
    frames = token_stream([2, 3, 4, 5])
    s = Streamer(LatencyConfig(BlockSpec(8, 4, 4), "single"), FixtureRecognizer())
    drive(s, frames)
    s.finalize()
    report = measure_latency(s.trace, frame_ms=32)
    assert report.max_ms == 128
    s8 = Streamer(LatencyConfig(BlockSpec(8, 4, 8), "single"), FixtureRecognizer())
    drive(s8, frames)
    s8.finalize()
    assert measure_latency(s8.trace, frame_ms=32).max_ms == 256


def test_irregular_push_sizes():
    frames = token_stream([2, 3, 4, 5])
    s = Streamer(LatencyConfig(BlockSpec(8, 4, 4), "A"), FixtureRecognizer())
    for chunk in (1, 5, 2, 8):
        s.push(frames[:chunk])
        frames = frames[chunk:]
        s.poll()
    assert s.finalize() == [2, 3, 4, 5]


def test_latency_config_validation():
    with pytest.raises(ContractError):
        LatencyConfig(BlockSpec(8, 4, 0), "A")  # no look-ahead to cover
    with pytest.raises(ContractError):
        LatencyConfig(BlockSpec(8, 4, 6), "B")  # not a multiple of n_center
    with pytest.raises(ContractError):
        LatencyConfig(BlockSpec(8, 4, 4), "C")
    assert LatencyConfig(BlockSpec(8, 4, 8), "A").aux_count == 2
    assert LatencyConfig(BlockSpec(8, 4, 0), "single").aux_count == 0


# -- neural paths --------------------------------------------------------------


def neural_models(seed=0, d_feat=4):
    cfg = EncoderConfig(d_feat=d_feat, d_model=12, n_layers=2, n_heads=2, d_ff=24)
    enc_params = EncoderParams(cfg, np.random.default_rng(seed))
    dec_params = TransducerParams(Vocabulary(6), 12, 12, np.random.default_rng(seed + 1))
    return enc_params, dec_params


class FakeUtt:
    def __init__(self, frames, transcript):
        self.frames = frames
        self.transcript = transcript


def fake_batch(seed=0, d_feat=4):
    rng = np.random.default_rng(seed)
    batch = []
    for n_tok in (2, 3, 4):
        T = 4 * n_tok + int(rng.integers(0, 4))
        batch.append(FakeUtt(rng.normal(size=(T, d_feat)), rng.integers(2, 6, n_tok).tolist()))
    return batch


def test_encode_batch_matches_unbatched():
    enc_params, _ = neural_models()
    batch = fake_batch()
    spec = BlockSpec(8, 4, 4)
    for ks in ([0, 0, 0], [1, 0, 1]):
        h, _ = ml.encode_batch([u.frames for u in batch], spec, enc_params, ks)
        for i, utt in enumerate(batch):
            per_block = enc.encode_stream(utt.frames, spec, enc_params, suffix_k=ks[i])
            want = np.vstack([hb.data for hb, _ in per_block])
            np.testing.assert_allclose(h.data[i, : want.shape[0]], want, atol=1e-9)


def test_train_step_determinism():
    models = neural_models(seed=3)
    batch = fake_batch(seed=4)
    spec = BlockSpec(8, 4, 4)
    l1 = ml.train_step_method_a(batch, spec, 0.5, models, np.random.default_rng(9))
    l2 = ml.train_step_method_a(batch, spec, 0.5, models, np.random.default_rng(9))
    assert float(l1.data) == float(l2.data)
    b1 = ml.train_step_method_b(batch, spec, 0.5, models, np.random.default_rng(9))
    b2 = ml.train_step_method_b(batch, spec, 0.5, models, np.random.default_rng(9))
    assert float(b1.data) == float(b2.data)


def test_mask_prob_zero_equals_unmasked_loss():
    enc_params, dec_params = neural_models(seed=5)
    batch = fake_batch(seed=6)
    spec = BlockSpec(8, 4, 4)
    loss = ml.train_step_method_a(
        batch, spec, 0.0, (enc_params, dec_params), np.random.default_rng(0)
    )
    want = []
    for utt in batch:
        feats = Tensor(
            np.vstack([h.data for h, _ in enc.encode_stream(utt.frames, spec, enc_params)])
        )
        want.append(float(td.rnnt_loss(feats, list(utt.transcript) + [EOS], dec_params).data))
    np.testing.assert_allclose(float(loss.data), np.mean(want), atol=1e-9)


def test_method_b_joint_mode_matches_single_pass_oracle():
    # with joint mode forced on, every block contributes its target rows
    # followed by its look-ahead rows — the unified single-pass layout
    enc_params, dec_params = neural_models(seed=5)
    batch = fake_batch(seed=6)
    spec = BlockSpec(8, 4, 4)
    loss = ml.train_step_method_b(
        batch, spec, 1.0, (enc_params, dec_params), np.random.default_rng(0)
    )
    want = []
    for utt in batch:
        rows = [
            h.data
            for h, _ in enc.encode_stream(utt.frames, spec, enc_params, include_lookahead=True)
        ]
        feats = Tensor(np.vstack(rows))
        want.append(float(td.rnnt_loss(feats, list(utt.transcript) + [EOS], dec_params).data))
    np.testing.assert_allclose(float(loss.data), np.mean(want), atol=1e-9)


def test_train_step_contract_errors():
    models = neural_models()
    batch = fake_batch()
    rng = np.random.default_rng(0)
    with pytest.raises(ContractError):
        ml.train_step_method_a(batch, BlockSpec(8, 4, 4), 1.5, models, rng)
    with pytest.raises(ContractError):
        ml.train_step_method_a(batch, BlockSpec(8, 4, 0), 0.5, models, rng)
    with pytest.raises(ContractError):
        ml.train_step_method_b(batch, BlockSpec(8, 4, 6), 0.5, models, rng)


def test_partition_method_b():
    from blockstream.blocking import segment

    spec = BlockSpec(8, 4, 4)
    block = segment(np.zeros((16, 1)), spec)[1]  # center [4, 8), look-ahead [8, 12)
    primary, aux = ml.partition_method_b([(2, 4), (3, 7), (4, 8), (5, 11)], block)
    assert primary == [(2, 4), (3, 7)]
    assert aux == [(4, 8), (5, 11)]
    with pytest.raises(ContractError):
        ml.partition_method_b([(2, 3)], block)


def test_neural_run_stream_matches_offline_tokens():
    """Method A streaming must reproduce the plain zero-look-ahead decode of
    its own tail geometry on short streams (cold start only)."""
    enc_params, dec_params = neural_models(seed=8)
    recog = ml.NeuralRecognizer(enc_params, dec_params, 3)
    frames = np.random.default_rng(11).normal(size=(4, 4))
    config = LatencyConfig(BlockSpec(8, 4, 4), "A")
    transcript, s = ml.run_stream(config, recog, frames)
    assert s.max_frame_read <= s.t
    assert all(tok != EOS for tok in transcript)
