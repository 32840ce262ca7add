"""Evaluation: text overlap metrics for generated instructions and
reconstruction metrics for editor-in-the-loop scoring.

Text metrics never emit NaN; degenerate inputs (empty candidate, too-short
reference) score 0. METEOR here is a reduced exact-match variant: no stems
or synonym tables.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from . import checkpoint
from .edits import apply_parametric_edit
from .lm import tokenize_text
from .motion import (
    JointTrajectory,
    MotionSequence,
    default_skeleton,
    joints_from_motion,
)
from .nn import Tensor, conv1d, cross_entropy, default_dtype, relu
from .nn.optim import Adam
from .nn.rng import substream

BLEU_EPS = 1e-9


@dataclass(frozen=True)
class TextScore:
    bleu4: float
    rouge2_f1: float
    meteor: float
    embed_cosine: float

    def __post_init__(self):
        for name in ("bleu4", "rouge2_f1", "meteor", "embed_cosine"):
            v = getattr(self, name)
            if not np.isfinite(v) or not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")


@dataclass(frozen=True)
class ReconScore:
    mpjpe: float
    fid: float

    def __post_init__(self):
        if self.mpjpe < 0:
            raise ValueError("mpjpe must be nonnegative")
        if self.fid < -1e-6:
            raise ValueError("fid must be nonnegative")
        object.__setattr__(self, "fid", max(self.fid, 0.0))


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(candidate: str, references, max_n: int = 4) -> float:
    """Geometric mean of clipped n-gram precisions with add-epsilon
    smoothing, times the brevity penalty exp(min(0, 1 - r/c))."""
    cand = tokenize_text(candidate)
    refs = [tokenize_text(r) for r in references]
    if not cand or not refs:
        return 0.0
    log_p, orders = 0.0, 0
    for n in range(1, max_n + 1):
        cgrams = _ngrams(cand, n)
        total = sum(cgrams.values())
        if total == 0:
            continue
        clipped = 0
        for gram, count in cgrams.items():
            clipped += min(count, max(r_ng.get(gram, 0) for r_ng in
                                      (_ngrams(r, n) for r in refs)))
        log_p += np.log((clipped + BLEU_EPS) / (total + BLEU_EPS))
        orders += 1
    if orders == 0:
        return 0.0
    c = len(cand)
    # closest reference length; shorter wins ties
    r = min((abs(len(t) - c), len(t)) for t in refs)[1]
    bp = np.exp(min(0.0, 1.0 - r / c))
    return float(bp * np.exp(log_p / orders))


def rouge_n(candidate: str, reference: str, n: int = 2) -> float:
    """F1 over the clipped n-gram multiset intersection."""
    cand, ref = tokenize_text(candidate), tokenize_text(reference)
    if len(cand) < n or len(ref) < n:
        return 0.0
    cg, rg = _ngrams(cand, n), _ngrams(ref, n)
    overlap = sum(min(c, rg.get(g, 0)) for g, c in cg.items())
    if overlap == 0:
        return 0.0
    p = overlap / sum(cg.values())
    r = overlap / sum(rg.values())
    return float(2 * p * r / (p + r))


def _align(cand, ref):
    """Greedy in-order exact alignment; returns (cand_pos, ref_pos) pairs."""
    used = [False] * len(ref)
    pairs = []
    for i, w in enumerate(cand):
        for j, v in enumerate(ref):
            if not used[j] and v == w:
                used[j] = True
                pairs.append((i, j))
                break
    return pairs


def meteor_lite(candidate: str, reference: str) -> float:
    """Exact-match METEOR: F = PR/(0.9P + 0.1R), chunk penalty 0.5(ch/m)^3."""
    cand, ref = tokenize_text(candidate), tokenize_text(reference)
    if not cand or not ref:
        return 0.0
    pairs = _align(cand, ref)
    m = len(pairs)
    if m == 0:
        return 0.0
    p, r = m / len(cand), m / len(ref)
    f = p * r / (0.9 * p + 0.1 * r)
    chunks = 1
    for (ci, ri), (cj, rj) in zip(pairs, pairs[1:]):
        if cj != ci + 1 or rj != ri + 1:
            chunks += 1
    penalty = 0.5 * (chunks / m) ** 3
    return float(f * (1.0 - penalty))


class TextEmbedder:
    """Mean-of-token-embeddings text vectors from a word embedding table."""

    def __init__(self, table: dict):
        if not table:
            raise ValueError("embedding table must be nonempty")
        self.table = {w: np.asarray(v, dtype=np.float64) for w, v in table.items()}
        self.dim = len(next(iter(self.table.values())))

    @classmethod
    def from_vocab(cls, vocab, embedding_matrix: np.ndarray) -> "TextEmbedder":
        return cls({w: embedding_matrix[i] for i, w in enumerate(vocab.words)})

    def embed(self, text: str) -> np.ndarray:
        vecs = [self.table[w] for w in tokenize_text(text) if w in self.table]
        if not vecs:
            return np.zeros(self.dim)
        return np.mean(vecs, axis=0)


def embed_score(candidate: str, reference: str, embedder) -> float:
    """Cosine of the two text vectors mapped to [0, 1]; zero vectors are
    treated as orthogonal (score 0.5)."""
    a, b = embedder.embed(candidate), embedder.embed(reference)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.5
    c = float(np.dot(a, b) / (na * nb))
    return (np.clip(c, -1.0, 1.0) + 1.0) / 2.0


def text_score(candidate: str, reference: str, embedder) -> TextScore:
    return TextScore(
        bleu(candidate, [reference]),
        rouge_n(candidate, reference),
        meteor_lite(candidate, reference),
        embed_score(candidate, reference, embedder),
    )


def mpjpe(pred, gt) -> float:
    """Mean Euclidean distance over frames and joints, in meters."""
    p = pred.positions if isinstance(pred, JointTrajectory) else np.asarray(pred)
    g = gt.positions if isinstance(gt, JointTrajectory) else np.asarray(gt)
    if p.shape != g.shape:
        raise ValueError(f"trajectory shapes differ: {p.shape} vs {g.shape}")
    return float(np.linalg.norm(p.astype(np.float64) - g.astype(np.float64), axis=-1).mean())


def _sqrtm_psd(a: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(a)
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.T


def fid(features_a: np.ndarray, features_b: np.ndarray) -> float:
    """Frechet distance between Gaussian fits of two feature sets.

    Matrix square root via symmetric eigendecomposition of S1^1/2 S2 S1^1/2;
    covariances get +1e-6 I, negative eigenvalues clamp to 0, and the result
    clamps at 0.
    """
    a = np.asarray(features_a, dtype=np.float64)
    b = np.asarray(features_b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError("feature sets must be (N, F) with a shared F")
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise ValueError("need at least 2 samples per set")
    mu1, mu2 = a.mean(axis=0), b.mean(axis=0)
    reg = 1e-6 * np.eye(a.shape[1])
    s1 = np.cov(a, rowvar=False, ddof=1) + reg
    s2 = np.cov(b, rowvar=False, ddof=1) + reg
    root1 = _sqrtm_psd(s1)
    inner = _sqrtm_psd(root1 @ s2 @ root1)
    d2 = float(np.sum((mu1 - mu2) ** 2) + np.trace(s1) + np.trace(s2) - 2.0 * np.trace(inner))
    return max(d2, 0.0)


class FeatureExtractor:
    """Temporal-conv classifier whose mean-pooled penultimate layer (F=32)
    is the motion feature used by FID."""

    FEAT_DIM = 32

    def __init__(self, data_dim: int, n_classes: int, seed: int = 0):
        self.data_dim = data_dim
        self.n_classes = n_classes
        self.norm_mean = np.zeros(data_dim, dtype=np.float32)
        self.norm_std = np.ones(data_dim, dtype=np.float32)
        rng = substream(seed, "metrics/extractor_init")
        F = self.FEAT_DIM

        def p(shape, fan_in):
            w = rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)
            return Tensor(w.astype(default_dtype()), requires_grad=True)

        self.params = {
            "c1_w": p((F, data_dim, 3), 3 * data_dim),
            "c1_b": Tensor(np.zeros(F), requires_grad=True),
            "c2_w": p((F, F, 3), 3 * F),
            "c2_b": Tensor(np.zeros(F), requires_grad=True),
            "head_w": p((F, n_classes), F),
            "head_b": Tensor(np.zeros(n_classes), requires_grad=True),
        }

    def parameters(self):
        return list(self.params.values())

    def fit_normalizer(self, motions):
        data = np.concatenate([m.frames for m in motions], axis=0)
        self.norm_mean = data.mean(axis=0).astype(np.float32)
        self.norm_std = np.maximum(data.std(axis=0), 1e-2).astype(np.float32)

    def _pooled(self, x_batch) -> Tensor:
        x = x_batch if isinstance(x_batch, Tensor) else Tensor(np.asarray(x_batch))
        h = relu(conv1d(x.swapaxes(1, 2), self.params["c1_w"], self.params["c1_b"], padding=1))
        h = relu(conv1d(h, self.params["c2_w"], self.params["c2_b"], padding=1))
        return h.mean(axis=2)

    def forward(self, x_batch) -> Tensor:
        from .nn import matmul

        return matmul(self._pooled(x_batch), self.params["head_w"]) + self.params["head_b"]

    def features(self, x: MotionSequence) -> np.ndarray:
        if x.layout.dim != self.data_dim:
            raise ValueError("motion dim does not match the extractor")
        xn = ((x.frames - self.norm_mean) / self.norm_std).astype(default_dtype())
        return self._pooled(xn[None]).data[0].copy()

    def save(self, path):
        arrays = {k: v.data for k, v in self.params.items()}
        arrays["norm_mean"] = self.norm_mean
        arrays["norm_std"] = self.norm_std
        arrays["__config"] = np.array([self.data_dim, self.n_classes], np.float32)
        checkpoint.save_arrays(path, arrays)

    @classmethod
    def load(cls, path) -> "FeatureExtractor":
        arrays = checkpoint.load_arrays(path)
        cfg = arrays.pop("__config").astype(int)
        model = cls(int(cfg[0]), int(cfg[1]))
        model.norm_mean = arrays.pop("norm_mean")
        model.norm_std = arrays.pop("norm_std")
        for k, v in arrays.items():
            model.params[k].data = v.astype(default_dtype())
        return model


def motion_features(extractor: FeatureExtractor, x: MotionSequence) -> np.ndarray:
    return extractor.features(x)


def train_feature_extractor(motions, labels, n_classes: int, epochs: int = 30,
                            batch_size: int = 16, lr: float = 2e-3,
                            seed: int = 0) -> FeatureExtractor:
    """Supervised training on (motion, class label) pairs of equal length."""
    if len(motions) != len(labels):
        raise ValueError("motions and labels must align")
    ext = FeatureExtractor(motions[0].layout.dim, n_classes, seed=seed)
    ext.fit_normalizer(motions)
    xs = np.stack([((m.frames - ext.norm_mean) / ext.norm_std) for m in motions])
    ys = np.asarray(labels, dtype=np.int64)
    opt = Adam(ext.parameters(), lr=lr)
    rng = substream(seed, "metrics/extractor_train")
    n = len(motions)
    for _ in range(epochs):
        order = rng.permutation(n)
        for lo in range(0, n, batch_size):
            idx = order[lo : lo + batch_size]
            logits = ext.forward(xs[idx].astype(default_dtype()))
            loss = cross_entropy(logits, ys[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
    return ext


@dataclass(frozen=True)
class ReconReport:
    score: ReconScore
    baseline_mpjpe: float
    parse_failure_rate: float
    count: int


def reconstruction_eval(triplets, generated_instructions, grammar,
                        feature_fn, skeleton=None) -> ReconReport:
    """Editor-in-the-loop scoring with the oracle editor.

    triplets: (src, tgt) MotionSequence pairs. Each generated instruction is
    parsed back to its edit and re-applied to src; unparseable instructions
    fall back to the unedited src (worst case) and count as parse failures.
    """
    triplets = list(triplets)
    generated = list(generated_instructions)
    if not triplets or len(triplets) != len(generated):
        raise ValueError("need one generated instruction per triplet")
    skeleton = skeleton or default_skeleton()
    errs, base_errs, failures = [], [], 0
    feats_edit, feats_gt = [], []
    for (src, tgt), text in zip(triplets, generated):
        try:
            spec = grammar.parse(text)
            edited = apply_parametric_edit(src, spec, skeleton)
        except ValueError:
            failures += 1
            edited = src
        jp = joints_from_motion(edited, skeleton)
        jg = joints_from_motion(tgt, skeleton)
        errs.append(mpjpe(jp, jg))
        base_errs.append(mpjpe(joints_from_motion(src, skeleton), jg))
        feats_edit.append(feature_fn(edited))
        feats_gt.append(feature_fn(tgt))
    f = fid(np.stack(feats_edit), np.stack(feats_gt))
    return ReconReport(
        ReconScore(float(np.mean(errs)), f),
        float(np.mean(base_errs)),
        failures / len(triplets),
        len(triplets),
    )
