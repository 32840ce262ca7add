"""Decoder-only autoregressive model over a mixed text + motion-token
vocabulary, trained with masked cross-entropy plus an embedding anchor.

The prompt template is fixed:
  <bos> action 1 : {src motion symbols} <sep> action 2 : {tgt motion symbols}
  <sep> instruction : {response} <eos>
Loss is computed only over the response positions.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from . import checkpoint
from .nn import (
    Tensor,
    cross_entropy,
    default_dtype,
    embedding,
    layer_norm,
    matmul,
    relu,
    softmax,
)
from .nn.optim import Adam
from .nn.rng import substream
from .tokenizer import N_MOTION_SYMBOLS

PAD, BOS, EOS, SEP = "<pad>", "<bos>", "<eos>", "<sep>"
SPECIALS = (PAD, BOS, EOS, SEP)
# words of the prompt skeleton, always present in the vocabulary
TEMPLATE_WORDS = ("action", "1", "2", ":", "instruction")
STRATEGIES = ("reuse", "extended")
MAX_GENERATION_LENGTH = 64

_WORD_RE = re.compile(r"[^a-z0-9 ]")


def tokenize_text(text: str) -> list:
    """Lowercase, punctuation-stripped, whitespace word tokens."""
    return _WORD_RE.sub(" ", text.lower()).split()


@dataclass(frozen=True)
class Vocab:
    words: tuple  # id -> string, specials first, then text by frequency
    strategy: str
    motion_ids: np.ndarray  # motion symbol 0..127 -> vocabulary id
    is_text_row: np.ndarray  # True where the row is a real word or special

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown vocab strategy {self.strategy!r}")
        if len(set(self.motion_ids.tolist())) != N_MOTION_SYMBOLS:
            raise ValueError("motion symbols must map to distinct ids")

    @property
    def size(self) -> int:
        return len(self.words) + (
            N_MOTION_SYMBOLS if self.strategy == "extended" else 0
        )

    def id_of(self, word: str) -> int:
        try:
            return self.words.index(word)
        except ValueError:
            raise KeyError(f"word {word!r} not in vocabulary") from None

    def encode_words(self, words) -> list:
        return [self.id_of(w) for w in words]

    def decode_ids(self, ids) -> str:
        out = []
        for i in ids:
            i = int(i)
            if not 0 <= i < self.size:
                raise ValueError(f"id {i} out of range")
            out.append(self.words[i] if i < len(self.words) else f"<motion_{i}>")
        return " ".join(out)


def build_vocab(corpus, strategy: str = "reuse") -> Vocab:
    """Deterministic vocabulary over whitespace word tokens.

    reuse: the 128 least-frequent word ids double as motion-symbol ids.
    extended: 128 fresh ids are appended after the text rows.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown vocab strategy {strategy!r}")
    texts = list(corpus)
    if not texts:
        raise ValueError("corpus must be nonempty")
    freq = {}
    for text in texts:
        for w in tokenize_text(text):
            freq[w] = freq.get(w, 0) + 1
    for w in TEMPLATE_WORDS:
        freq.setdefault(w, 0)
    ordered = sorted(freq, key=lambda w: (-freq[w], w))
    words = tuple(SPECIALS) + tuple(ordered)
    if strategy == "reuse":
        if len(ordered) < N_MOTION_SYMBOLS:
            raise ValueError(
                f"reuse strategy needs at least {N_MOTION_SYMBOLS} distinct "
                f"words, corpus has {len(ordered)}"
            )
        # least-frequent words sit at the tail of the ordering
        motion_ids = np.arange(len(words) - N_MOTION_SYMBOLS, len(words))
        is_text = np.ones(len(words), dtype=bool)
    else:
        motion_ids = np.arange(len(words), len(words) + N_MOTION_SYMBOLS)
        is_text = np.concatenate(
            [np.ones(len(words), bool), np.zeros(N_MOTION_SYMBOLS, bool)]
        )
    return Vocab(words, strategy, motion_ids, is_text)


def vocab_from_words(words, strategy: str) -> Vocab:
    """Rebuild a Vocab from a serialized word list (specials included)."""
    words = tuple(words)
    if words[: len(SPECIALS)] != SPECIALS:
        raise ValueError("word list must start with the special tokens")
    if strategy == "reuse":
        motion_ids = np.arange(len(words) - N_MOTION_SYMBOLS, len(words))
        is_text = np.ones(len(words), dtype=bool)
    elif strategy == "extended":
        motion_ids = np.arange(len(words), len(words) + N_MOTION_SYMBOLS)
        is_text = np.concatenate(
            [np.ones(len(words), bool), np.zeros(N_MOTION_SYMBOLS, bool)]
        )
    else:
        raise ValueError(f"unknown vocab strategy {strategy!r}")
    return Vocab(words, strategy, motion_ids, is_text)


@dataclass(frozen=True)
class TemplateTokens:
    input_ids: np.ndarray  # U^I: <bos> ... instruction :
    output_ids: np.ndarray  # U^O: response words, ends with <eos>
    n_src: int
    n_tgt: int


def _motion_to_vocab(symbols, vocab: Vocab) -> list:
    out = []
    for s in np.asarray(symbols, dtype=int):
        if not 0 <= s < N_MOTION_SYMBOLS:
            raise ValueError(f"motion symbol {s} out of range")
        out.append(int(vocab.motion_ids[s]))
    return out


def render_template(src_symbols, tgt_symbols, vocab: Vocab) -> np.ndarray:
    """Prompt ids U^I for a (source, target) motion-symbol pair."""
    src = _motion_to_vocab(src_symbols, vocab)
    tgt = _motion_to_vocab(tgt_symbols, vocab)
    w = vocab.id_of
    ids = (
        [w(BOS), w("action"), w("1"), w(":")]
        + src
        + [w(SEP), w("action"), w("2"), w(":")]
        + tgt
        + [w(SEP), w("instruction"), w(":")]
    )
    return np.asarray(ids, dtype=np.int64)


def make_template(src_symbols, tgt_symbols, instruction: str, vocab: Vocab) -> TemplateTokens:
    input_ids = render_template(src_symbols, tgt_symbols, vocab)
    out = vocab.encode_words(tokenize_text(instruction)) + [vocab.id_of(EOS)]
    return TemplateTokens(
        input_ids, np.asarray(out, dtype=np.int64), len(src_symbols), len(tgt_symbols)
    )


class LmModel:
    """Pre-LN transformer decoder with learned positions.

    The output projection starts at zero, so the untrained model emits the
    uniform distribution. W0 is the embedding snapshot the anchor term pulls
    toward during fine-tuning.
    """

    def __init__(self, vocab_size: int, embed_dim: int = 128, n_heads: int = 4,
                 n_blocks: int = 4, context: int = 512, lambda_anchor: float = 0.01,
                 seed: int = 0):
        if embed_dim % n_heads != 0:
            raise ValueError("embed_dim must be divisible by n_heads")
        if lambda_anchor < 0:
            raise ValueError("lambda_anchor must be nonnegative")
        self.vocab_size = vocab_size
        self.embed_dim = embed_dim
        self.n_heads = n_heads
        self.n_blocks = n_blocks
        self.context = context
        self.lambda_anchor = lambda_anchor
        rng = substream(seed, "lm/init")
        V, E = vocab_size, embed_dim

        def p(shape, scale):
            w = rng.standard_normal(shape) * scale
            return Tensor(w.astype(default_dtype()), requires_grad=True)

        self.params = {
            "tok_emb": p((V, E), 0.02),
            "pos_emb": p((context, E), 0.02),
        }
        for i in range(n_blocks):
            for name in ("wq", "wk", "wv", "wo"):
                self.params[f"b{i}.{name}"] = p((E, E), E ** -0.5)
            self.params[f"b{i}.ln1_g"] = Tensor(np.ones(E), requires_grad=True)
            self.params[f"b{i}.ln1_b"] = Tensor(np.zeros(E), requires_grad=True)
            self.params[f"b{i}.ln2_g"] = Tensor(np.ones(E), requires_grad=True)
            self.params[f"b{i}.ln2_b"] = Tensor(np.zeros(E), requires_grad=True)
            self.params[f"b{i}.ff1_w"] = p((E, 4 * E), E ** -0.5)
            self.params[f"b{i}.ff1_b"] = Tensor(np.zeros(4 * E), requires_grad=True)
            self.params[f"b{i}.ff2_w"] = p((4 * E, E), (4 * E) ** -0.5)
            self.params[f"b{i}.ff2_b"] = Tensor(np.zeros(E), requires_grad=True)
        self.params["ln_f_g"] = Tensor(np.ones(E), requires_grad=True)
        self.params["ln_f_b"] = Tensor(np.zeros(E), requires_grad=True)
        self.params["out_w"] = Tensor(np.zeros((E, V)), requires_grad=True)
        self.params["out_b"] = Tensor(np.zeros(V), requires_grad=True)
        self.w0 = self.params["tok_emb"].data.copy()

    def parameters(self):
        return list(self.params.values())

    def snapshot_anchor(self):
        """Re-freeze W0 at the current embedding values."""
        self.w0 = self.params["tok_emb"].data.copy()

    def _check_ids(self, ids: np.ndarray):
        if ids.size == 0:
            raise ValueError("token ids must be nonempty")
        if np.any(ids < 0) or np.any(ids >= self.vocab_size):
            raise ValueError("token id out of vocabulary range")
        if ids.shape[-1] > self.context:
            raise ValueError(
                f"sequence length {ids.shape[-1]} exceeds context {self.context}"
            )

    def forward(self, ids) -> Tensor:
        """ids (B, S) -> logits (B, S, V), causal."""
        ids = np.atleast_2d(np.asarray(ids, dtype=np.int64))
        self._check_ids(ids)
        B, S = ids.shape
        E, H = self.embed_dim, self.n_heads
        dh = E // H
        x = embedding(self.params["tok_emb"], ids) + embedding(
            self.params["pos_emb"], np.broadcast_to(np.arange(S), (B, S))
        )
        causal = np.triu(np.full((S, S), -1e9, dtype=default_dtype()), k=1)
        for i in range(self.n_blocks):
            h = layer_norm(x, self.params[f"b{i}.ln1_g"], self.params[f"b{i}.ln1_b"])
            q = matmul(h, self.params[f"b{i}.wq"]).reshape(B, S, H, dh).swapaxes(1, 2)
            k = matmul(h, self.params[f"b{i}.wk"]).reshape(B, S, H, dh).swapaxes(1, 2)
            v = matmul(h, self.params[f"b{i}.wv"]).reshape(B, S, H, dh).swapaxes(1, 2)
            scores = matmul(q, k.swapaxes(2, 3)) * (dh ** -0.5) + Tensor(causal)
            att = matmul(softmax(scores, axis=-1), v)
            att = att.swapaxes(1, 2).reshape(B, S, E)
            x = x + matmul(att, self.params[f"b{i}.wo"])
            h = layer_norm(x, self.params[f"b{i}.ln2_g"], self.params[f"b{i}.ln2_b"])
            h = relu(matmul(h, self.params[f"b{i}.ff1_w"]) + self.params[f"b{i}.ff1_b"])
            x = x + matmul(h, self.params[f"b{i}.ff2_w"]) + self.params[f"b{i}.ff2_b"]
        x = layer_norm(x, self.params["ln_f_g"], self.params["ln_f_b"])
        return matmul(x, self.params["out_w"]) + self.params["out_b"]

    # -- fast inference path (no autograd, with key/value cache) -------------

    def _np_block(self, x, i, cache, pos0):
        p = {k: v.data for k, v in self.params.items()}
        def ln(a, g, b):
            mu = a.mean(axis=-1, keepdims=True)
            var = a.var(axis=-1, keepdims=True)
            return (a - mu) / np.sqrt(var + 1e-5) * g + b
        B, S, E = x.shape
        H, dh = self.n_heads, self.embed_dim // self.n_heads
        h = ln(x, p[f"b{i}.ln1_g"], p[f"b{i}.ln1_b"])
        q = (h @ p[f"b{i}.wq"]).reshape(B, S, H, dh).transpose(0, 2, 1, 3)
        k = (h @ p[f"b{i}.wk"]).reshape(B, S, H, dh).transpose(0, 2, 1, 3)
        v = (h @ p[f"b{i}.wv"]).reshape(B, S, H, dh).transpose(0, 2, 1, 3)
        if cache is not None:
            ck, cv = cache[i]
            k = k if ck is None else np.concatenate([ck, k], axis=2)
            v = v if cv is None else np.concatenate([cv, v], axis=2)
            cache[i] = (k, v)
        scores = q @ k.transpose(0, 1, 3, 2) * (dh ** -0.5)
        Sk = k.shape[2]
        mask = np.triu(np.full((S, Sk), -1e9, dtype=x.dtype), k=1 + Sk - S)
        scores = scores + mask
        scores -= scores.max(axis=-1, keepdims=True)
        w = np.exp(scores)
        w /= w.sum(axis=-1, keepdims=True)
        att = (w @ v).transpose(0, 2, 1, 3).reshape(B, S, E)
        x = x + att @ p[f"b{i}.wo"]
        h = ln(x, p[f"b{i}.ln2_g"], p[f"b{i}.ln2_b"])
        h = np.maximum(h @ p[f"b{i}.ff1_w"] + p[f"b{i}.ff1_b"], 0.0)
        return x + h @ p[f"b{i}.ff2_w"] + p[f"b{i}.ff2_b"]

    def forward_np(self, ids, cache=None, pos0: int = 0) -> np.ndarray:
        """Inference-only forward; with `cache`, ids are the new tail tokens."""
        ids = np.atleast_2d(np.asarray(ids, dtype=np.int64))
        if np.any(ids < 0) or np.any(ids >= self.vocab_size):
            raise ValueError("token id out of vocabulary range")
        if pos0 + ids.shape[1] > self.context:
            raise ValueError("sequence exceeds the model context")
        p = {k: v.data for k, v in self.params.items()}
        B, S = ids.shape
        x = p["tok_emb"][ids] + p["pos_emb"][pos0 : pos0 + S]
        for i in range(self.n_blocks):
            x = self._np_block(x, i, cache, pos0)
        mu = x.mean(axis=-1, keepdims=True)
        var = x.var(axis=-1, keepdims=True)
        x = (x - mu) / np.sqrt(var + 1e-5) * p["ln_f_g"] + p["ln_f_b"]
        return x @ p["out_w"] + p["out_b"]

    def save(self, path):
        arrays = {k: v.data for k, v in self.params.items()}
        arrays["__w0"] = self.w0
        arrays["__config"] = np.array(
            [self.vocab_size, self.embed_dim, self.n_heads, self.n_blocks,
             self.context, self.lambda_anchor],
            dtype=np.float32,
        )
        checkpoint.save_arrays(path, arrays)

    @classmethod
    def load(cls, path) -> "LmModel":
        arrays = checkpoint.load_arrays(path)
        cfg = arrays.pop("__config")
        model = cls(int(cfg[0]), int(cfg[1]), int(cfg[2]), int(cfg[3]),
                    int(cfg[4]), float(cfg[5]))
        model.w0 = arrays.pop("__w0").astype(default_dtype())
        for k, v in arrays.items():
            if k not in model.params or model.params[k].data.shape != v.shape:
                raise ValueError(f"checkpoint parameter {k!r} does not fit the model")
            model.params[k].data = v.astype(default_dtype())
        return model


def lm_forward(model: LmModel, prefix) -> np.ndarray:
    """Next-token probability distribution after `prefix`."""
    prefix = np.asarray(prefix, dtype=np.int64)
    if prefix.ndim != 1 or prefix.size == 0:
        raise ValueError("prefix must be a nonempty 1-D id sequence")
    logits = model.forward_np(prefix[None])[0, -1]
    logits = logits - logits.max()
    probs = np.exp(logits)
    return probs / probs.sum()


def pack_batch(templates, pad_id: int):
    """Concatenate prompt+response per record, pad to a common length.

    Returns (ids (B, S), targets (B, S), mask (B, S)) where mask is 1 exactly
    at positions whose next-token target lies in the response.
    """
    seqs = [np.concatenate([t.input_ids, t.output_ids]) for t in templates]
    S = max(len(s) for s in seqs)
    B = len(seqs)
    ids = np.full((B, S), pad_id, dtype=np.int64)
    targets = np.full((B, S), pad_id, dtype=np.int64)
    mask = np.zeros((B, S), dtype=default_dtype())
    for b, (t, s) in enumerate(zip(templates, seqs)):
        ids[b, : len(s)] = s
        targets[b, : len(s) - 1] = s[1:]
        lo = len(t.input_ids) - 1  # position predicting the first response token
        mask[b, lo : len(s) - 1] = 1.0
    return ids, targets, mask


def anchor_loss(model: LmModel) -> Tensor:
    d = model.params["tok_emb"] - Tensor(model.w0)
    return (d * d).sum() * model.lambda_anchor


def lm_train_step(model: LmModel, batch, optimizer: Adam) -> tuple:
    """One Adam step on masked cross-entropy plus the anchor term.

    Returns (L_LLM, L_Anchor); cross-entropy is averaged over response
    positions.
    """
    if not batch:
        raise ValueError("batch must be nonempty")
    ids, targets, mask = pack_batch(batch, pad_id=0)
    logits = model.forward(ids)
    ce = cross_entropy(logits, targets, mask=mask)
    anchor = anchor_loss(model)
    values = (float(ce.item()), float(anchor.item()))
    if not all(np.isfinite(v) for v in values):
        raise FloatingPointError("non-finite language model loss")
    loss = ce + anchor
    optimizer.zero_grad()
    loss.backward()
    optimizer.step()
    return values


def lm_pretrain_step(model: LmModel, batch, optimizer: Adam) -> float:
    """One Adam step on next-token cross-entropy over the whole sequence.

    Warm-up phase before anchored fine-tuning: predicting the second motion
    stream forces the model to read the first one back at a fixed offset,
    which is the same circuitry the response tokens need. No anchor term;
    call model.snapshot_anchor() after this phase so the anchor holds the
    warmed-up embeddings.
    """
    if not batch:
        raise ValueError("batch must be nonempty")
    ids, targets, mask = pack_batch(batch, pad_id=0)
    full = np.zeros_like(mask)
    for b, t in enumerate(batch):
        full[b, : len(t.input_ids) + len(t.output_ids) - 1] = 1.0
    logits = model.forward(ids)
    ce = cross_entropy(logits, targets, mask=full)
    value = float(ce.item())
    if not np.isfinite(value):
        raise FloatingPointError("non-finite language model loss")
    optimizer.zero_grad()
    ce.backward()
    optimizer.step()
    return value


@dataclass(frozen=True)
class GenerationResult:
    text: str
    token_ids: np.ndarray
    truncated: bool


def generate_batch(model: LmModel, prompts, vocab: Vocab,
                   max_length: int = MAX_GENERATION_LENGTH,
                   temperature: float = 0.0, seed: int = 0) -> list:
    """Greedy (temperature 0) or temperature sampling for same-length prompts."""
    prompts = [np.asarray(p, dtype=np.int64) for p in prompts]
    S0 = len(prompts[0])
    if any(len(p) != S0 for p in prompts):
        raise ValueError("batched generation requires same-length prompts")
    if temperature < 0:
        raise ValueError("temperature must be nonnegative")
    B = len(prompts)
    eos = vocab.id_of(EOS)
    rng = substream(seed, "lm/generate")
    cache = {i: (None, None) for i in range(model.n_blocks)}
    ids = np.stack(prompts)
    logits = model.forward_np(ids, cache=cache, pos0=0)[:, -1]
    done = np.zeros(B, dtype=bool)
    out = [[] for _ in range(B)]
    for step in range(max_length):
        if temperature == 0.0:
            nxt = logits.argmax(axis=-1)
        else:
            z = logits / temperature
            z -= z.max(axis=-1, keepdims=True)
            probs = np.exp(z)
            probs /= probs.sum(axis=-1, keepdims=True)
            nxt = np.array([rng.choice(len(p), p=p) for p in probs])
        for b in range(B):
            if not done[b]:
                out[b].append(int(nxt[b]))
                if nxt[b] == eos:
                    done[b] = True
        if done.all():
            break
        logits = model.forward_np(nxt[:, None], cache=cache, pos0=S0 + step)[:, -1]
    results = []
    for b in range(B):
        toks = out[b]
        truncated = not (toks and toks[-1] == eos)
        body = toks[:-1] if not truncated else toks
        results.append(GenerationResult(vocab.decode_ids(body), np.asarray(toks), truncated))
    return results


def generate_instruction(model: LmModel, src_symbols, tgt_symbols, vocab: Vocab,
                         max_length: int = MAX_GENERATION_LENGTH,
                         temperature: float = 0.0, seed: int = 0) -> GenerationResult:
    prompt = render_template(src_symbols, tgt_symbols, vocab)
    return generate_batch(model, [prompt], vocab, max_length, temperature, seed)[0]
