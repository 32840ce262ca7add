"""Residual quantizer, EMA codebooks, conv autoencoder, token codec."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from motioncoach.nn import Adam, Tensor, grad_check, precision, substream
from motioncoach.synth import synth_motion
from motioncoach.tokenizer import (
    CODE_DIM,
    CODEBOOK_SIZE,
    Codebook,
    TokenizerModel,
    codes_to_symbols,
    ema_update,
    nearest_code,
    quantize,
    read_tokens,
    restart_dead_codes,
    symbols_to_indices,
    tokenizer_train_step,
    tokens_to_codes,
    write_tokens,
)


def _naive_nearest(features, entries):
    out = np.empty(len(features), dtype=np.int64)
    for i, f in enumerate(features):
        d = [float(((f.astype(np.float64) - e.astype(np.float64)) ** 2).sum())
             for e in entries]
        best = min(range(len(d)), key=lambda k: (d[k], k))
        out[i] = best
    return out


def test_nearest_code_agrees_with_naive_search():
    rng = substream(0, "test/nn")
    feats = rng.standard_normal((1000, CODE_DIM)).astype(np.float32)
    entries = rng.standard_normal((CODEBOOK_SIZE, CODE_DIM)).astype(np.float32)
    assert np.array_equal(nearest_code(feats, entries), _naive_nearest(feats, entries))


def test_nearest_code_ties_take_lowest_index():
    entries = np.zeros((4, 2), dtype=np.float32)
    entries[2] = [1.0, 0.0]
    entries[3] = [1.0, 0.0]
    f = np.array([[1.0, 0.0], [0.0, 0.0]], dtype=np.float32)
    assert nearest_code(f, entries).tolist() == [2, 0]


def test_quantize_two_stage_shapes_and_ranges():
    rng = substream(1, "test/q")
    feats = rng.standard_normal((50, CODE_DIM)).astype(np.float32)
    books = (
        Codebook(rng.standard_normal((CODEBOOK_SIZE, CODE_DIM))),
        Codebook(rng.standard_normal((CODEBOOK_SIZE, CODE_DIM))),
    )
    q = quantize(feats, books)
    assert q.codes.shape == (50, CODE_DIM)
    assert q.class_indices.min() >= 0 and q.class_indices.max() < CODEBOOK_SIZE
    assert q.residual_indices.min() >= 0 and q.residual_indices.max() < CODEBOOK_SIZE
    rebuilt = tokens_to_codes(q.class_indices, q.residual_indices, books)
    assert np.array_equal(q.codes, rebuilt.codes)


def test_residual_stage_tightens_data_fit_codebooks():
    # the two-stage estimate beats the class-only one when the residual book
    # is fit to actual residuals (not an identity for arbitrary codebooks)
    rng = substream(2, "test/res")
    feats = rng.standard_normal((512, CODE_DIM)).astype(np.float32)
    class_book = Codebook(feats[rng.integers(0, 512, CODEBOOK_SIZE)])
    ci = nearest_code(feats, class_book.entries)
    residuals = feats - class_book.entries[ci]
    res_book = Codebook(residuals[rng.integers(0, 512, CODEBOOK_SIZE)])
    for _ in range(10):
        ci = nearest_code(feats, class_book.entries)
        ema_update(class_book, feats, ci)
        residuals = feats - class_book.entries[ci]
        ri = nearest_code(residuals, res_book.entries)
        ema_update(res_book, residuals, ri)
    q = quantize(feats, (class_book, res_book))
    d2 = ((feats - q.codes) ** 2).sum(axis=1)
    d1 = ((feats - class_book.entries[q.class_indices]) ** 2).sum(axis=1)
    # on average the second stage strictly improves the fit
    assert d2.mean() < 0.8 * d1.mean()


def test_ema_update_formula_and_edge_cases():
    book = Codebook(np.zeros((3, 2)), decay=0.5)
    feats = np.array([[2.0, 0.0], [4.0, 0.0], [0.0, 6.0]])
    assigns = np.array([0, 0, 1])
    ema_update(book, feats, assigns)
    # cluster 0: size 0.5*1 + 0.5*2 = 1.5, sum 0.5*0 + 0.5*6 = 3.0
    assert book.ema_cluster_size[0] == pytest.approx(1.5)
    assert book.entries[0, 0] == pytest.approx(3.0 / (1.5 + 1e-5), rel=1e-5)
    # decay 0 replaces entirely
    book2 = Codebook(np.ones((2, 2)))
    ema_update(book2, np.array([[5.0, 5.0]]), np.array([1]), gamma=0.0)
    assert book2.entries[1, 0] == pytest.approx(5.0 / (1.0 + 1e-5), rel=1e-5)
    # no assignments: entries barely drift
    book3 = Codebook(np.full((2, 2), 3.0))
    before = book3.entries.copy()
    ema_update(book3, np.zeros((0, 2)), np.zeros(0, dtype=int))
    assert np.abs(book3.entries - before).max() < 1e-4


def test_restart_dead_codes():
    book = Codebook(np.zeros((4, 2)))
    book.ema_cluster_size[:] = [1.0, 0.001, 0.001, 1.0]
    feats = np.arange(10, dtype=np.float64).reshape(5, 2)
    n = restart_dead_codes(book, feats, substream(0, "test/restart"))
    assert n == 2
    assert np.all(book.ema_cluster_size >= 0.03)


def test_receptive_field_radius():
    assert TokenizerModel.receptive_field_radius() == 15
    # a far-away frame perturbation cannot change a token
    x = synth_motion("walk_cycle", {}, 64, seed=0)
    model = TokenizerModel(x.layout.dim, channels=24, seed=0)
    model.fit_normalizer([x])
    model.init_codebooks([x])
    base = model.encode(x).values
    bumped = x.frames.copy()
    bumped[60] += 0.5
    from motioncoach.motion import MotionSequence

    y = MotionSequence(bumped, x.fps, x.layout)
    out = model.encode(y).values
    r = TokenizerModel.receptive_field_radius()
    assert np.array_equal(base[: 60 - r], out[: 60 - r])
    assert not np.array_equal(base[60], out[60])


def test_token_symbol_roundtrips():
    rng = substream(3, "test/sym")
    ci = rng.integers(0, CODEBOOK_SIZE, 30)
    ri = rng.integers(0, CODEBOOK_SIZE, 30)
    sym = codes_to_symbols(type("Q", (), {"class_indices": ci, "residual_indices": ri})())
    assert sym[0::2].max() < CODEBOOK_SIZE and sym[1::2].min() >= CODEBOOK_SIZE
    ci2, ri2 = symbols_to_indices(sym)
    assert np.array_equal(ci, ci2) and np.array_equal(ri, ri2)
    with pytest.raises(ValueError):
        symbols_to_indices(sym[:-1])  # odd length
    bad = sym.copy()
    bad[1] = 5  # residual slot holding a class-range symbol
    with pytest.raises(ValueError):
        symbols_to_indices(bad)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 50), st.integers(0, 2**31 - 1))
def test_token_file_roundtrip(n, seed):
    import os
    import tempfile

    rng = np.random.default_rng(seed)
    sym = np.empty(2 * n, dtype=np.uint16)
    sym[0::2] = rng.integers(0, CODEBOOK_SIZE, n)
    sym[1::2] = rng.integers(CODEBOOK_SIZE, 2 * CODEBOOK_SIZE, n)
    with tempfile.TemporaryDirectory() as d:
        p = os.path.join(d, "t.cgtt")
        write_tokens(p, sym)
        back = read_tokens(p)
    assert np.array_equal(sym, back)


def test_tokenize_detokenize_pipeline():
    x = synth_motion("arm_raise", {}, 20, seed=1)
    model = TokenizerModel(x.layout.dim, channels=24, seed=0)
    model.fit_normalizer([x])
    model.init_codebooks([x])
    sym = model.tokenize(x)
    assert sym.dtype == np.uint16 and len(sym) == 2 * x.T
    y = model.detokenize(sym, x.layout)
    assert y.frames.shape == x.frames.shape
    # tokenization is deterministic
    assert np.array_equal(sym, model.tokenize(x))


def test_gradients_bypass_codebooks():
    x = synth_motion("wave", {}, 16, seed=2)
    model = TokenizerModel(x.layout.dim, channels=24, seed=1)
    model.fit_normalizer([x])
    opt = Adam(model.parameters(), lr=1e-3)
    tokenizer_train_step(model, [x], opt, update_codebooks=False)
    before = model.class_codebook.entries.copy()
    for _ in range(5):
        tokenizer_train_step(model, [x], opt, update_codebooks=False)
    assert np.array_equal(before, model.class_codebook.entries)


def test_training_reduces_weighted_loss():
    motions = [synth_motion("walk_cycle", {}, 24, seed=s) for s in range(4)]
    model = TokenizerModel(motions[0].layout.dim, channels=32, seed=0)
    model.fit_normalizer(motions)
    model.init_codebooks(motions)
    opt = Adam(model.parameters(), lr=3e-3)
    losses = [tokenizer_train_step(model, motions, opt)[0] for _ in range(80)]
    assert losses[-1] < 0.5 * losses[0]


def test_straight_through_gradient_is_exact():
    x = synth_motion("squat", {}, 12, seed=0)
    model = TokenizerModel(x.layout.dim, channels=20, seed=2)
    model.fit_normalizer([x])
    model.init_codebooks([x])
    xn = np.stack([model._normalize(x.frames)])

    f0, _ = model.encode_features(xn)
    q = quantize(f0.data.reshape(-1, CODE_DIM), model.codebooks)
    offset = q.codes.reshape(xn.shape[0], -1, CODE_DIM) - f0.data

    def loss():
        # freeze the pass-through offset at the linearization point
        f, _ = model.encode_features(xn)
        z_st = f + Tensor(offset)
        recon = model.decode_features(z_st)
        diff = recon - Tensor(xn)
        return (diff * diff).mean()

    # probe a slice of the parameters; the full set is numeric-diff hostile
    probe = [model.params["proj_down_w"], model.params["proj_up_b"],
             model.params["dec.out_b"]]
    with precision(np.float64):
        err = grad_check(loss, probe)
    assert err < 1e-6


def test_save_load_tokenizes_identically(tmp_path):
    motions = [synth_motion("kick", {}, 16, seed=s) for s in range(3)]
    model = TokenizerModel(motions[0].layout.dim, channels=24, seed=0)
    model.fit_normalizer(motions)
    model.init_codebooks(motions)
    opt = Adam(model.parameters(), lr=1e-3)
    for _ in range(5):
        tokenizer_train_step(model, motions, opt)
    p = tmp_path / "tok.cgtw"
    model.save(p)
    other = TokenizerModel.load(p)
    for m in motions:
        assert np.array_equal(model.tokenize(m), other.tokenize(m))
    # EMA state is serialized at float32, so equality is up to that precision
    assert np.allclose(model.class_codebook.ema_cluster_size,
                       other.class_codebook.ema_cluster_size, atol=1e-5)
