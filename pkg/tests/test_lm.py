"""Vocabulary, prompt templates, transformer behavior, training, generation."""

import numpy as np
import pytest

from motioncoach.lm import (
    EOS,
    LmModel,
    SPECIALS,
    anchor_loss,
    build_vocab,
    generate_batch,
    generate_instruction,
    lm_forward,
    lm_train_step,
    make_template,
    pack_batch,
    render_template,
    tokenize_text,
    vocab_from_words,
)
from motioncoach.nn import Adam, Tensor, grad_check, precision
from motioncoach.tokenizer import N_MOTION_SYMBOLS

CORPUS = ["Raise the left arm!", "Lower the left arm.", "raise the right arm"]


def _big_corpus():
    # enough distinct words for the id-sharing strategy
    return CORPUS + [f"word{i:03d}" for i in range(140)]


def test_tokenize_text_normalizes():
    assert tokenize_text("Raise, the LEFT arm!") == ["raise", "the", "left", "arm"]
    assert tokenize_text("  a  b ") == ["a", "b"]
    assert tokenize_text("...") == []


def test_build_vocab_words_and_determinism():
    v = build_vocab(CORPUS, strategy="extended")
    assert v.words[:4] == SPECIALS
    body = set(v.words[4:])
    assert body == {"raise", "lower", "the", "left", "right", "arm",
                    "action", "1", "2", ":", "instruction"}
    v2 = build_vocab(list(reversed(CORPUS)), strategy="extended")
    assert v.words == v2.words


def test_extended_vocab_appends_motion_rows():
    v = build_vocab(CORPUS, strategy="extended")
    n_text = len(v.words)
    assert v.size == n_text + N_MOTION_SYMBOLS
    assert v.motion_ids.tolist() == list(range(n_text, n_text + N_MOTION_SYMBOLS))
    assert not v.is_text_row[v.motion_ids[0]]


def test_reuse_vocab_shares_rare_word_ids():
    v = build_vocab(_big_corpus(), strategy="reuse")
    assert v.size == len(v.words)
    assert v.motion_ids.tolist() == list(range(v.size - N_MOTION_SYMBOLS, v.size))
    with pytest.raises(ValueError):
        build_vocab(CORPUS, strategy="reuse")


def test_vocab_from_words_roundtrip():
    v = build_vocab(_big_corpus(), strategy="reuse")
    v2 = vocab_from_words(v.words, v.strategy)
    assert v.words == v2.words
    assert np.array_equal(v.motion_ids, v2.motion_ids)


def test_template_skeleton_length():
    v = build_vocab(CORPUS, strategy="extended")
    src = np.arange(6) % N_MOTION_SYMBOLS
    tgt = np.arange(6) % N_MOTION_SYMBOLS
    prompt = render_template(src, tgt, v)
    assert len(prompt) == 11 + 12  # fixed skeleton plus the two symbol streams
    t = make_template(src, tgt, "raise the left arm", v)
    assert np.array_equal(t.input_ids, prompt)
    assert t.output_ids[-1] == v.id_of(EOS)
    assert len(t.output_ids) == 4 + 1


def test_untrained_model_is_exactly_uniform():
    model = LmModel(50, embed_dim=16, n_heads=2, n_blocks=1, context=32, seed=0)
    probs = lm_forward(model, np.array([1, 5, 9]))
    assert np.allclose(probs, 1.0 / 50, atol=1e-7)
    ids = np.array([[1, 5, 9]])
    logits = model.forward(ids)
    targets = np.array([[5, 9, 2]])
    from motioncoach.nn import cross_entropy

    ce = cross_entropy(logits, targets)
    assert ce.item() == pytest.approx(np.log(50), rel=1e-5)


def test_causality_future_tokens_do_not_leak():
    model = LmModel(40, embed_dim=16, n_heads=2, n_blocks=2, context=32, seed=1)
    # give it nonzero output weights so the check is nontrivial
    rng = np.random.default_rng(0)
    model.params["out_w"].data[:] = rng.standard_normal(
        model.params["out_w"].shape).astype(np.float32)
    a = np.array([[3, 7, 11, 2, 5]])
    b = a.copy()
    b[0, -1] = 9
    la = model.forward_np(a)
    lb = model.forward_np(b)
    assert np.array_equal(la[0, :-1], lb[0, :-1])
    assert not np.array_equal(la[0, -1], lb[0, -1])


def test_tape_and_fast_paths_agree():
    model = LmModel(30, embed_dim=16, n_heads=4, n_blocks=2, context=16, seed=2)
    rng = np.random.default_rng(1)
    model.params["out_w"].data[:] = 0.01 * rng.standard_normal(
        model.params["out_w"].shape).astype(np.float32)
    ids = np.array([[4, 9, 1, 22], [7, 7, 0, 3]])
    # same math, different kernel order: agreement to float32 roundoff
    assert np.allclose(model.forward(ids).data, model.forward_np(ids), atol=1e-6)


def test_kv_cache_matches_full_forward():
    model = LmModel(30, embed_dim=16, n_heads=2, n_blocks=2, context=16, seed=3)
    rng = np.random.default_rng(2)
    model.params["out_w"].data[:] = 0.01 * rng.standard_normal(
        model.params["out_w"].shape).astype(np.float32)
    ids = np.array([[4, 9, 1, 22, 5]])
    full = model.forward_np(ids)
    cache = {i: (None, None) for i in range(model.n_blocks)}
    part = model.forward_np(ids[:, :3], cache=cache, pos0=0)
    inc = model.forward_np(ids[:, 3:], cache=cache, pos0=3)
    assert np.allclose(full[:, -1], inc[:, -1], atol=1e-5)


def test_anchor_loss_hand_values():
    model = LmModel(10, embed_dim=4, n_heads=2, n_blocks=1, context=8,
                    lambda_anchor=0.5, seed=0)
    assert anchor_loss(model).item() == 0.0
    model.params["tok_emb"].data[3, 1] += 2.0
    assert anchor_loss(model).item() == pytest.approx(0.5 * 4.0, rel=1e-6)
    model.snapshot_anchor()
    assert anchor_loss(model).item() == 0.0


def test_pack_batch_masks_only_response_positions():
    v = build_vocab(CORPUS, strategy="extended")
    t = make_template(np.array([0, 1]), np.array([2, 3]), "raise the left arm", v)
    ids, targets, mask = pack_batch([t], pad_id=0)
    n_in, n_out = len(t.input_ids), len(t.output_ids)
    assert ids.shape == (1, n_in + n_out)
    lo = n_in - 1
    assert mask[0, :lo].sum() == 0
    assert mask[0, lo : n_in + n_out - 1].sum() == n_out
    assert mask[0, n_in + n_out - 1 :].sum() == 0
    # the first masked target is the first response token
    assert targets[0, lo] == t.output_ids[0]


def test_loss_ignores_prompt_positions():
    v = build_vocab(CORPUS, strategy="extended")
    t1 = make_template(np.array([0, 1, 2]), np.array([3, 4, 5]), "raise the left arm", v)
    # same response, different prompt symbols
    t2 = make_template(np.array([9, 9, 9]), np.array([9, 9, 9]), "raise the left arm", v)
    model = LmModel(v.size, embed_dim=16, n_heads=2, n_blocks=1, context=64, seed=0)
    ids1, tg1, m1 = pack_batch([t1], pad_id=0)
    from motioncoach.nn import cross_entropy

    ce1 = cross_entropy(model.forward(ids1), tg1, mask=m1).item()
    ids2, tg2, m2 = pack_batch([t2], pad_id=0)
    ce2 = cross_entropy(model.forward(ids2), tg2, mask=m2).item()
    # with uniform outputs the masked loss depends only on response length
    assert ce1 == pytest.approx(ce2, rel=1e-6)


def test_lm_gradients():
    model = LmModel(20, embed_dim=8, n_heads=2, n_blocks=1, context=16, seed=4)
    ids = np.array([[3, 7, 1, 5]])
    targets = np.array([[7, 1, 5, 2]])
    mask = np.array([[0.0, 1.0, 1.0, 1.0]])

    def loss():
        from motioncoach.nn import cross_entropy

        return cross_entropy(model.forward(ids), targets,
                             mask=mask.astype(np.float64)) + anchor_loss(model)

    probe = [model.params["tok_emb"], model.params["b0.wq"],
             model.params["ln_f_g"], model.params["out_b"]]
    with precision(np.float64):
        err = grad_check(loss, probe)
    assert err < 1e-6


def test_overfit_small_batch_and_regenerate():
    v = build_vocab(_big_corpus(), strategy="reuse")
    rng = np.random.default_rng(0)
    phrases = ["raise the left arm", "lower the left arm",
               "raise the right arm", "word001 word002 word003"]
    templates = [
        make_template(rng.integers(0, N_MOTION_SYMBOLS, 6),
                      rng.integers(0, N_MOTION_SYMBOLS, 6), p, v)
        for p in phrases
    ]
    model = LmModel(v.size, embed_dim=48, n_heads=4, n_blocks=2, context=64, seed=0)
    opt = Adam(model.parameters(), lr=3e-3)
    ce = None
    for _ in range(150):
        ce, _ = lm_train_step(model, templates, opt)
    assert ce < 0.05
    for t, phrase in zip(templates, phrases):
        out = generate_batch(model, [t.input_ids], v, max_length=12)[0]
        assert out.text == phrase
        assert not out.truncated


def test_generation_is_deterministic_and_temperature_zero_is_greedy():
    v = build_vocab(CORPUS, strategy="extended")
    model = LmModel(v.size, embed_dim=16, n_heads=2, n_blocks=1, context=64, seed=5)
    rng = np.random.default_rng(3)
    model.params["out_w"].data[:] = 0.1 * rng.standard_normal(
        model.params["out_w"].shape).astype(np.float32)
    prompt = render_template(np.array([0, 1]), np.array([2, 3]), v)
    a = generate_instruction(model, [0, 1], [2, 3], v, max_length=8)
    b = generate_batch(model, [prompt], v, max_length=8, temperature=0.0, seed=99)[0]
    assert a.text == b.text
    assert np.array_equal(a.token_ids, b.token_ids)
    c = generate_batch(model, [prompt], v, max_length=8, temperature=1.5, seed=1)[0]
    d = generate_batch(model, [prompt], v, max_length=8, temperature=1.5, seed=1)[0]
    assert np.array_equal(c.token_ids, d.token_ids)


def test_generation_truncation_flag():
    v = build_vocab(CORPUS, strategy="extended")
    model = LmModel(v.size, embed_dim=16, n_heads=2, n_blocks=1, context=64, seed=6)
    prompt = render_template(np.array([0]), np.array([1]), v)
    out = generate_batch(model, [prompt], v, max_length=3)[0]
    if out.truncated:
        assert len(out.token_ids) == 3
    else:
        assert out.token_ids[-1] == v.id_of(EOS)


def test_save_load_generates_identically(tmp_path):
    v = build_vocab(CORPUS, strategy="extended")
    model = LmModel(v.size, embed_dim=16, n_heads=2, n_blocks=1, context=64,
                    lambda_anchor=0.25, seed=7)
    t = make_template(np.array([0, 1]), np.array([2, 3]), "raise the left arm", v)
    opt = Adam(model.parameters(), lr=1e-3)
    for _ in range(5):
        lm_train_step(model, [t], opt)
    p = tmp_path / "lm.cgtw"
    model.save(p)
    other = LmModel.load(p)
    assert other.lambda_anchor == model.lambda_anchor
    assert np.array_equal(model.w0, other.w0)
    a = generate_batch(model, [t.input_ids], v, max_length=8)[0]
    b = generate_batch(other, [t.input_ids], v, max_length=8)[0]
    assert a.text == b.text
