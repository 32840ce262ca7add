"""Motion tokenizer: dilated TCN encoder, two-stage residual vector
quantization with EMA codebooks, TCN decoder.

Each frame becomes two discrete indices (class, residual). For the language
model the pair is flattened to a 128-symbol alphabet: class symbols 0..63,
residual symbols 64..127, interleaved per frame.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import checkpoint
from .motion import MotionLayout, MotionSequence
from .nn import Tensor, conv1d, default_dtype, relu
from .nn.optim import Adam
from .nn.rng import substream

CODEBOOK_SIZE = 64
CODE_DIM = 16
BETA_COMMIT = 0.25
EMA_DECAY = 0.99
EMA_EPS = 1e-5
N_MOTION_SYMBOLS = 2 * CODEBOOK_SIZE

TOKEN_MAGIC = b"CGTT"
TOKEN_VERSION = 1

# conv1 dilations of the three residual blocks, outermost first
BLOCK_DILATIONS = (9, 3, 1)


@dataclass
class Codebook:
    entries: np.ndarray  # (K, H)
    ema_cluster_size: np.ndarray = None
    ema_embed_sum: np.ndarray = None
    decay: float = EMA_DECAY

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=np.float32)
        if self.entries.ndim != 2 or self.entries.shape[0] == 0:
            raise ValueError("codebook must be a nonempty (K, H) table")
        if not np.all(np.isfinite(self.entries)):
            raise ValueError("codebook entries must be finite")
        if self.ema_cluster_size is None:
            self.ema_cluster_size = np.ones(self.entries.shape[0], dtype=np.float64)
        if self.ema_embed_sum is None:
            self.ema_embed_sum = self.entries.astype(np.float64).copy()

    @property
    def K(self):
        return self.entries.shape[0]


@dataclass(frozen=True)
class FrameFeatures:
    values: np.ndarray  # (T, H) post-projection
    pre: np.ndarray  # (T, W) pre-projection activations


@dataclass(frozen=True)
class QuantizedCodes:
    codes: np.ndarray  # (T, H), class code + residual code per frame
    class_indices: np.ndarray  # (T,) ints in [0, K)
    residual_indices: np.ndarray  # (T,) ints in [0, K)


def nearest_code(features: np.ndarray, entries: np.ndarray) -> np.ndarray:
    """Index of the nearest codebook row per feature; lowest index on ties."""
    if entries.shape[0] == 0:
        raise ValueError("empty codebook")
    f = features.astype(np.float64)
    c = entries.astype(np.float64)
    d = ((f[:, None, :] - c[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d, axis=1)


def quantize(f: FrameFeatures | np.ndarray, codebooks) -> QuantizedCodes:
    """Two-stage residual quantization against (class, residual) codebooks."""
    values = f.values if isinstance(f, FrameFeatures) else np.asarray(f)
    class_cb, residual_cb = codebooks
    if values.shape[1] != class_cb.entries.shape[1]:
        raise ValueError("feature dimension does not match the codebook")
    ci = nearest_code(values, class_cb.entries)
    residual = values - class_cb.entries[ci]
    ri = nearest_code(residual, residual_cb.entries)
    z = class_cb.entries[ci] + residual_cb.entries[ri]
    return QuantizedCodes(z.astype(values.dtype), ci, ri)


def tokens_to_codes(class_indices, residual_indices, codebooks) -> QuantizedCodes:
    class_cb, residual_cb = codebooks
    ci = np.asarray(class_indices, dtype=int)
    ri = np.asarray(residual_indices, dtype=int)
    if ci.shape != ri.shape:
        raise ValueError("index lists must have equal length")
    if np.any(ci < 0) or np.any(ci >= class_cb.K):
        raise ValueError("class index out of range")
    if np.any(ri < 0) or np.any(ri >= residual_cb.K):
        raise ValueError("residual index out of range")
    z = class_cb.entries[ci] + residual_cb.entries[ri]
    return QuantizedCodes(z, ci, ri)


def ema_update(codebook: Codebook, features: np.ndarray, assignments: np.ndarray,
               gamma: float | None = None) -> Codebook:
    """EMA re-estimation of code vectors from the latest assignments, in place.

    cluster_size' = g*cluster_size + (1-g)*n_k
    embed_sum'    = g*embed_sum + (1-g)*sum of assigned features
    entry_k       = embed_sum'_k / (cluster_size'_k + eps)
    """
    g = codebook.decay if gamma is None else gamma
    K, H = codebook.entries.shape
    features = np.asarray(features, dtype=np.float64).reshape(-1, H)
    assignments = np.asarray(assignments, dtype=int).reshape(-1)
    n_k = np.bincount(assignments, minlength=K).astype(np.float64)
    sums = np.zeros((K, H))
    np.add.at(sums, assignments, features)
    codebook.ema_cluster_size = g * codebook.ema_cluster_size + (1.0 - g) * n_k
    codebook.ema_embed_sum = g * codebook.ema_embed_sum + (1.0 - g) * sums
    codebook.entries = (
        codebook.ema_embed_sum / (codebook.ema_cluster_size + EMA_EPS)[:, None]
    ).astype(np.float32)
    return codebook


class TokenizerModel:
    """Encoder/decoder pair around the residual quantizer.

    channels defaults to the full-width architecture; desk-scale training
    runs use a narrower setting for CPU-minutes budgets.
    """

    def __init__(self, data_dim: int, channels: int = 256, seed: int = 0,
                 fps: int = 20):
        if data_dim < 1 or channels < CODE_DIM:
            raise ValueError("invalid tokenizer configuration")
        self.data_dim = data_dim
        self.channels = channels
        self.fps = fps
        self.norm_mean = np.zeros(data_dim, dtype=np.float32)
        self.norm_std = np.ones(data_dim, dtype=np.float32)
        self._codebooks_ready = False
        rng = substream(seed, "tokenizer/init")
        W, D, H = channels, data_dim, CODE_DIM

        def p(shape, fan_in):
            w = rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)
            return Tensor(w.astype(default_dtype()), requires_grad=True)

        self.params = {}

        def stack(prefix, cin):
            self.params[f"{prefix}.in_w"] = p((W, cin, 3), 3 * cin)
            self.params[f"{prefix}.in_b"] = Tensor(np.zeros(W), requires_grad=True)
            for d in BLOCK_DILATIONS:
                self.params[f"{prefix}.d{d}.c1_w"] = p((W, W, 3), 3 * W)
                self.params[f"{prefix}.d{d}.c1_b"] = Tensor(np.zeros(W), requires_grad=True)
                # residual branches start at zero so the stack begins as an
                # identity map and activations cannot blow up with depth
                self.params[f"{prefix}.d{d}.c2_w"] = Tensor(np.zeros((W, W, 1)), requires_grad=True)
                self.params[f"{prefix}.d{d}.c2_b"] = Tensor(np.zeros(W), requires_grad=True)

        stack("enc", D)
        self.params["proj_down_w"] = p((H, W, 1), W)
        self.params["proj_down_b"] = Tensor(np.zeros(H), requires_grad=True)
        self.params["proj_up_w"] = p((W, H, 1), H)
        self.params["proj_up_b"] = Tensor(np.zeros(W), requires_grad=True)
        stack("dec", W)
        self.params["dec.out_w"] = p((D, W, 1), W)
        self.params["dec.out_b"] = Tensor(np.zeros(D), requires_grad=True)

        self.class_codebook = Codebook(np.zeros((CODEBOOK_SIZE, H), np.float32))
        self.residual_codebook = Codebook(np.zeros((CODEBOOK_SIZE, H), np.float32))

    @property
    def codebooks(self):
        return (self.class_codebook, self.residual_codebook)

    def parameters(self):
        # codebooks are intentionally absent: EMA-only, never gradient-updated
        return list(self.params.values())

    @staticmethod
    def receptive_field_radius() -> int:
        return 2 + sum(BLOCK_DILATIONS)

    def fit_normalizer(self, motions) -> None:
        data = np.concatenate([m.frames for m in motions], axis=0)
        self.norm_mean = data.mean(axis=0).astype(np.float32)
        # std floor keeps constant features (contacts at rest) well-scaled
        self.norm_std = np.maximum(data.std(axis=0), 1e-2).astype(np.float32)

    def _stack_forward(self, h: Tensor, prefix: str) -> Tensor:
        h = conv1d(h, self.params[f"{prefix}.in_w"], self.params[f"{prefix}.in_b"], padding=1)
        for d in BLOCK_DILATIONS:
            a = conv1d(relu(h), self.params[f"{prefix}.d{d}.c1_w"],
                       self.params[f"{prefix}.d{d}.c1_b"], padding=d, dilation=d)
            a = conv1d(relu(a), self.params[f"{prefix}.d{d}.c2_w"],
                       self.params[f"{prefix}.d{d}.c2_b"])
            h = h + a
        return h

    def _normalize(self, frames: np.ndarray) -> np.ndarray:
        return ((frames - self.norm_mean) / self.norm_std).astype(default_dtype())

    def _denormalize(self, frames: np.ndarray) -> np.ndarray:
        return frames * self.norm_std + self.norm_mean

    def encode_features(self, x_batch) -> tuple:
        """Differentiable path: (B, T, D) -> (features (B, T, H), pre (B, W, T))."""
        x = x_batch if isinstance(x_batch, Tensor) else Tensor(np.asarray(x_batch))
        h = self._stack_forward(x.swapaxes(1, 2), "enc")
        f = conv1d(h, self.params["proj_down_w"], self.params["proj_down_b"])
        return f.swapaxes(1, 2), h

    def decode_features(self, z_batch) -> Tensor:
        """Differentiable path: codes (B, T, H) -> frames (B, T, D), normalized space."""
        z = z_batch if isinstance(z_batch, Tensor) else Tensor(np.asarray(z_batch))
        h = conv1d(z.swapaxes(1, 2), self.params["proj_up_w"], self.params["proj_up_b"])
        h = self._stack_forward(h, "dec")
        out = conv1d(relu(h), self.params["dec.out_w"], self.params["dec.out_b"])
        return out.swapaxes(1, 2)

    def encode(self, x: MotionSequence) -> FrameFeatures:
        if x.layout.dim != self.data_dim:
            raise ValueError(
                f"motion dim {x.layout.dim} does not match tokenizer dim {self.data_dim}"
            )
        f, pre = self.encode_features(self._normalize(x.frames)[None])
        return FrameFeatures(f.data[0], pre.data[0].T)

    def decode(self, z, layout: MotionLayout | None = None) -> MotionSequence:
        codes = z.codes if isinstance(z, QuantizedCodes) else np.asarray(z)
        if codes.ndim != 2 or codes.shape[0] < 1:
            raise ValueError("codes must be a (T, H) array with T >= 1")
        out = self.decode_features(codes.astype(default_dtype())[None]).data[0]
        frames = self._denormalize(out).astype(np.float32)
        layout = layout or MotionLayout.infer(self.data_dim)
        return MotionSequence(frames, self.fps, layout)

    def init_codebooks(self, motions, seed: int = 0) -> None:
        """Seed both codebooks from encoder features of real data."""
        feats = np.concatenate(
            [self.encode(m).values for m in motions], axis=0
        ).astype(np.float64)
        rng = substream(seed, "tokenizer/codebook_init")
        pick = rng.choice(len(feats), size=CODEBOOK_SIZE, replace=len(feats) < CODEBOOK_SIZE)
        self.class_codebook = Codebook(feats[pick].astype(np.float32))
        ci = nearest_code(feats, self.class_codebook.entries)
        residuals = feats - self.class_codebook.entries[ci]
        pick = rng.choice(len(feats), size=CODEBOOK_SIZE, replace=len(feats) < CODEBOOK_SIZE)
        self.residual_codebook = Codebook(residuals[pick].astype(np.float32))
        self._codebooks_ready = True

    def tokenize(self, x: MotionSequence) -> np.ndarray:
        """Motion -> interleaved symbol stream [class_0, 64+res_0, class_1, ...]."""
        q = quantize(self.encode(x), self.codebooks)
        return codes_to_symbols(q)

    def detokenize(self, symbols, layout: MotionLayout | None = None) -> MotionSequence:
        ci, ri = symbols_to_indices(symbols)
        return self.decode(tokens_to_codes(ci, ri, self.codebooks), layout)

    def save(self, path):
        arrays = {k: v.data for k, v in self.params.items()}
        arrays["class_codebook"] = self.class_codebook.entries
        arrays["class_cluster_size"] = self.class_codebook.ema_cluster_size
        arrays["class_embed_sum"] = self.class_codebook.ema_embed_sum
        arrays["residual_codebook"] = self.residual_codebook.entries
        arrays["residual_cluster_size"] = self.residual_codebook.ema_cluster_size
        arrays["residual_embed_sum"] = self.residual_codebook.ema_embed_sum
        arrays["norm_mean"] = self.norm_mean
        arrays["norm_std"] = self.norm_std
        arrays["__config"] = np.array([self.data_dim, self.channels, self.fps], np.float32)
        checkpoint.save_arrays(path, arrays)

    @classmethod
    def load(cls, path) -> "TokenizerModel":
        arrays = checkpoint.load_arrays(path)
        cfg = arrays.pop("__config").astype(int)
        model = cls(int(cfg[0]), int(cfg[1]), fps=int(cfg[2]))
        model.norm_mean = arrays.pop("norm_mean")
        model.norm_std = arrays.pop("norm_std")
        for stage in ("class", "residual"):
            cb = Codebook(
                arrays.pop(f"{stage}_codebook"),
                arrays.pop(f"{stage}_cluster_size").astype(np.float64),
                arrays.pop(f"{stage}_embed_sum").astype(np.float64),
            )
            setattr(model, f"{stage}_codebook", cb)
        model._codebooks_ready = True
        for k, v in arrays.items():
            if k not in model.params or model.params[k].data.shape != v.shape:
                raise ValueError(f"checkpoint parameter {k!r} does not fit the model")
            model.params[k].data = v.astype(default_dtype())
        return model


def tokenizer_train_step(model: TokenizerModel, batch, optimizer: Adam,
                         update_codebooks: bool = True,
                         beta_commit: float = BETA_COMMIT) -> tuple:
    """One optimizer step on L_recon + beta_commit * L_com.

    Gradients reach the encoder/decoder/projections through a pass-through
    estimator at the quantizer; codebooks move only via EMA.
    Returns (L_recon, L_com) as floats, measured in normalized feature space.
    """
    if not batch:
        raise ValueError("batch must be nonempty")
    xn = np.stack([model._normalize(m.frames) for m in batch])
    if not model._codebooks_ready:
        model.init_codebooks(batch)
    B, T, H = xn.shape[0], xn.shape[1], CODE_DIM
    f, _ = model.encode_features(xn)
    flat = f.data.reshape(B * T, H)
    q = quantize(flat, model.codebooks)
    z = q.codes.reshape(B, T, H)
    # pass-through: forward uses z, gradient flows to f unchanged
    z_st = f + Tensor(z - f.data)
    recon = model.decode_features(z_st)
    diff = recon - Tensor(xn)
    # per-feature variance weights make this the raw-space L2 error up to a
    # global constant, so training optimizes what evaluation measures
    w = model.norm_std.astype(np.float64) ** 2
    w = (w / w.mean()).astype(default_dtype())
    l_recon = (diff * diff * Tensor(w)).mean()
    fd = f - Tensor(z)
    l_com = (fd * fd).mean()
    loss = l_recon + l_com * beta_commit
    values = (float(l_recon.item()), float(l_com.item()))
    if not all(np.isfinite(v) for v in values):
        raise FloatingPointError("non-finite tokenizer loss")
    optimizer.zero_grad()
    loss.backward()
    optimizer.step()
    if update_codebooks:
        ema_update(model.class_codebook, flat, q.class_indices)
        residuals = flat - model.class_codebook.entries[q.class_indices]
        ema_update(model.residual_codebook, residuals, q.residual_indices)
    return values


def restart_dead_codes(codebook: Codebook, features: np.ndarray,
                       rng: np.random.Generator, threshold: float = 0.03) -> int:
    """Reseed codes whose EMA cluster size decayed below threshold from
    random recent features. Returns the number of restarts."""
    features = np.asarray(features, dtype=np.float64).reshape(-1, codebook.entries.shape[1])
    dead = np.where(codebook.ema_cluster_size < threshold)[0]
    if len(dead) == 0 or len(features) == 0:
        return 0
    pick = rng.integers(0, len(features), size=len(dead))
    codebook.entries[dead] = features[pick].astype(np.float32)
    codebook.ema_cluster_size[dead] = 1.0
    codebook.ema_embed_sum[dead] = features[pick]
    return len(dead)


def reconstruction_mse_ratio(model: TokenizerModel, motions) -> float:
    """Mean squared reconstruction error over mean per-feature data variance."""
    errs, data = [], []
    for m in motions:
        q = quantize(model.encode(m), model.codebooks)
        rec = model.decode(q, m.layout)
        errs.append(np.mean((rec.frames - m.frames) ** 2, dtype=np.float64))
        data.append(m.frames)
    var = np.concatenate(data, axis=0).var(axis=0, dtype=np.float64).mean()
    return float(np.mean(errs) / var)


def utilization_report(model: TokenizerModel, motions) -> dict:
    """Fraction of codes used on a corpus, plus the dead-code lists."""
    used_c, used_r = set(), set()
    for m in motions:
        q = quantize(model.encode(m), model.codebooks)
        used_c.update(q.class_indices.tolist())
        used_r.update(q.residual_indices.tolist())
    K = CODEBOOK_SIZE
    return {
        "class_utilization": len(used_c) / K,
        "residual_utilization": len(used_r) / K,
        "dead_class_codes": sorted(set(range(K)) - used_c),
        "dead_residual_codes": sorted(set(range(K)) - used_r),
    }


def codes_to_symbols(q: QuantizedCodes) -> np.ndarray:
    out = np.empty(2 * len(q.class_indices), dtype=np.uint16)
    out[0::2] = q.class_indices
    out[1::2] = q.residual_indices + CODEBOOK_SIZE
    return out


def symbols_to_indices(symbols) -> tuple:
    s = np.asarray(symbols, dtype=np.int64)
    if s.ndim != 1 or len(s) % 2 != 0:
        raise ValueError("symbol stream must be a flat even-length sequence")
    ci, ri = s[0::2], s[1::2] - CODEBOOK_SIZE
    if np.any(ci < 0) or np.any(ci >= CODEBOOK_SIZE):
        raise ValueError("class symbol out of range")
    if np.any(ri < 0) or np.any(ri >= CODEBOOK_SIZE):
        raise ValueError("residual symbol out of range")
    return ci, ri


def write_tokens(path, symbols: np.ndarray) -> None:
    s = np.ascontiguousarray(symbols, dtype="<u2")
    with open(path, "wb") as fh:
        fh.write(TOKEN_MAGIC + struct.pack("<II", TOKEN_VERSION, len(s)))
        fh.write(s.tobytes())


def read_tokens(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12 or blob[:4] != TOKEN_MAGIC:
        raise ValueError("bad magic")
    version, n = struct.unpack("<II", blob[4:12])
    if version != TOKEN_VERSION:
        raise ValueError(f"unsupported token stream version {version}")
    if len(blob) != 12 + 2 * n:
        raise ValueError("truncated token stream")
    return np.frombuffer(blob, dtype="<u2", count=n, offset=12).copy()
