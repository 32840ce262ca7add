"""Conditional denoising diffusion motion editor.

The model predicts the clean sequence x0 from a noised input, a timestep and
a discrete edit label. Editing composes a generated corrective sequence with
the input through a body-part feature mask; columns outside the mask are
bit-identical to the input.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import checkpoint
from .motion import BodyPartMask, MotionLayout, MotionSequence
from .nn import Tensor, conv1d, default_dtype, embedding, matmul, relu
from .nn.optim import Adam
from .nn.rng import sample_gaussian, substream


@dataclass(frozen=True)
class NoiseSchedule:
    steps: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    sigma: np.ndarray

    def alpha_bar_prev(self, t: int) -> float:
        # alpha_bar at step 0 is 1 by convention
        return 1.0 if t == 1 else float(self.alpha_bar[t - 2])


def make_schedule(steps: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Linear beta schedule; sigma_t = sqrt(beta_t)."""
    if steps < 2:
        raise ValueError("steps must be at least 2")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ValueError("need 0 < beta_start <= beta_end < 1")
    beta = np.linspace(beta_start, beta_end, steps, dtype=np.float64)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    return NoiseSchedule(steps, beta, alpha, alpha_bar, np.sqrt(beta))


@dataclass(frozen=True)
class EditCondition:
    text: str
    part: str

    def __post_init__(self):
        if not self.text:
            raise ValueError("condition text must be nonempty")


def _frames(x) -> np.ndarray:
    return x.frames if isinstance(x, MotionSequence) else np.asarray(x)


def q_sample(x0, t: int, noise: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    """Closed-form forward marginal x_t = sqrt(abar_t) x0 + sqrt(1-abar_t) eps."""
    if not 1 <= t <= schedule.steps:
        raise ValueError(f"t={t} outside [1, {schedule.steps}]")
    x0 = _frames(x0)
    noise = np.asarray(noise)
    if noise.shape != x0.shape:
        raise ValueError("noise shape must match x0 shape")
    ab = schedule.alpha_bar[t - 1]
    return (np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * noise).astype(x0.dtype)


def posterior_mean(x0_hat: np.ndarray, x_t: np.ndarray, t: int, schedule: NoiseSchedule) -> np.ndarray:
    ab_t = schedule.alpha_bar[t - 1]
    ab_prev = schedule.alpha_bar_prev(t)
    beta_t = schedule.beta[t - 1]
    alpha_t = schedule.alpha[t - 1]
    c0 = np.sqrt(ab_prev) * beta_t / (1.0 - ab_t)
    ct = np.sqrt(alpha_t) * (1.0 - ab_prev) / (1.0 - ab_t)
    return c0 * x0_hat + ct * x_t


def _sinusoidal_table(steps: int, dim: int) -> np.ndarray:
    t = np.arange(steps + 1, dtype=np.float64)[:, None]
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half - 1, 1))
    ang = t * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)[:, :dim]


class DenoiserModel:
    """Temporal convolutional residual net predicting x0.

    Time and condition embeddings are added to the hidden state before each
    residual block. The output projection is zero-initialized, so an
    untrained model predicts exactly zero.
    """

    def __init__(self, data_dim: int, n_conditions: int, steps: int,
                 channels: int = 64, blocks: int = 4, seed: int = 0):
        if data_dim < 1 or n_conditions < 1 or channels < 2 or blocks < 1:
            raise ValueError("invalid model configuration")
        self.data_dim = data_dim
        self.n_conditions = n_conditions
        self.steps = steps
        self.channels = channels
        self.blocks = blocks
        self.time_features = _sinusoidal_table(steps, channels)
        rng = substream(seed, "editor/init")
        C, D = channels, data_dim

        def p(shape, fan_in):
            w = rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)
            return Tensor(w.astype(default_dtype()), requires_grad=True)

        self.params = {"in_w": p((C, D, 1), D), "in_b": Tensor(np.zeros(C), requires_grad=True)}
        for i in range(blocks):
            self.params[f"b{i}.aw"] = p((C, C, 3), 3 * C)
            self.params[f"b{i}.ab"] = Tensor(np.zeros(C), requires_grad=True)
            self.params[f"b{i}.bw"] = p((C, C, 1), C)
            self.params[f"b{i}.bb"] = Tensor(np.zeros(C), requires_grad=True)
            self.params[f"b{i}.tw"] = p((C, C), C)
            self.params[f"b{i}.ce"] = p((n_conditions, C), C)
        self.params["out_w"] = Tensor(np.zeros((D, C, 1)), requires_grad=True)
        self.params["out_b"] = Tensor(np.zeros(D), requires_grad=True)

    def parameters(self):
        return list(self.params.values())

    def condition_id(self, cond) -> int:
        if isinstance(cond, (int, np.integer)):
            cid = int(cond)
        else:
            raise TypeError(
                "DenoiserModel conditions on discrete edit labels; map the "
                "instruction text to a label id before calling"
            )
        if not 0 <= cid < self.n_conditions:
            raise ValueError(f"condition id {cid} out of range")
        return cid

    def forward(self, x_t, t_ids, cond_ids) -> Tensor:
        """x_t: (B, T, D); t_ids, cond_ids: (B,) ints. Returns (B, T, D)."""
        x = x_t if isinstance(x_t, Tensor) else Tensor(np.asarray(x_t))
        t_ids = np.atleast_1d(np.asarray(t_ids, dtype=int))
        cond_ids = np.atleast_1d(np.asarray(cond_ids, dtype=int))
        B = x.shape[0]
        h = conv1d(x.swapaxes(1, 2), self.params["in_w"], self.params["in_b"])
        tfeat = Tensor(self.time_features[t_ids].astype(default_dtype()))
        for i in range(self.blocks):
            emb = matmul(tfeat, self.params[f"b{i}.tw"]) + embedding(
                self.params[f"b{i}.ce"], cond_ids
            )
            a = relu(h + emb.reshape(B, self.channels, 1))
            a = conv1d(a, self.params[f"b{i}.aw"], self.params[f"b{i}.ab"], padding=1)
            a = conv1d(relu(a), self.params[f"b{i}.bw"], self.params[f"b{i}.bb"])
            h = h + a
        out = conv1d(h, self.params["out_w"], self.params["out_b"])
        return out.swapaxes(1, 2)

    def predict_x0(self, x_t: np.ndarray, t: int, cond) -> np.ndarray:
        cid = self.condition_id(cond)
        out = self.forward(np.asarray(x_t)[None], [t], [cid])
        return out.data[0]

    def save(self, path):
        arrays = {k: v.data for k, v in self.params.items()}
        arrays["__config"] = np.array(
            [self.data_dim, self.n_conditions, self.steps, self.channels, self.blocks],
            dtype=np.float32,
        )
        checkpoint.save_arrays(path, arrays)

    @classmethod
    def load(cls, path) -> "DenoiserModel":
        arrays = checkpoint.load_arrays(path)
        cfg = arrays.pop("__config").astype(int)
        model = cls(*cfg)
        for k, v in arrays.items():
            if k not in model.params or model.params[k].data.shape != v.shape:
                raise ValueError(f"checkpoint parameter {k!r} does not fit the model")
            model.params[k].data = v.astype(default_dtype())
        return model


def denoise_step(model, x_t: np.ndarray, t: int, cond, schedule: NoiseSchedule,
                 rng: np.random.Generator) -> np.ndarray:
    """One reverse step: posterior mean around the x0 prediction plus sigma_t z."""
    if not 1 <= t <= schedule.steps:
        raise ValueError(f"t={t} outside [1, {schedule.steps}]")
    x_t = np.asarray(x_t)
    if not np.all(np.isfinite(x_t)):
        raise ValueError("x_t must be finite")
    x0_hat = np.asarray(model.predict_x0(x_t, t, cond))
    if not np.all(np.isfinite(x0_hat)):
        raise FloatingPointError("model produced non-finite x0 prediction")
    mean = posterior_mean(x0_hat, x_t, t, schedule)
    if t == 1:
        return mean.astype(x_t.dtype)
    z = sample_gaussian(x_t.shape, rng)
    return (mean + schedule.sigma[t - 1] * z).astype(x_t.dtype)


def sample_motion(model, cond, T_frames: int, schedule: NoiseSchedule, seed: int,
                  fps: int = 20, layout: MotionLayout | None = None) -> MotionSequence:
    """Full reverse chain from Gaussian noise; deterministic given seed."""
    if T_frames < 1:
        raise ValueError("T_frames must be positive")
    D = layout.dim if layout is not None else model.data_dim
    rng = substream(seed, "editor/sample")
    x = sample_gaussian((T_frames, D), rng)
    for t in range(schedule.steps, 0, -1):
        x = denoise_step(model, x, t, cond, schedule, rng)
    layout = layout or MotionLayout.infer(D)
    return MotionSequence(x.astype(np.float32), fps, layout)


def edit_motion(x_I: MotionSequence, cond, mask: BodyPartMask, model,
                schedule: NoiseSchedule, seed: int) -> MotionSequence:
    """x_O = m * x_L + (1 - m) * x_I with a freshly sampled corrective x_L."""
    if mask.mask.shape[0] != x_I.layout.dim:
        raise ValueError("mask does not match the motion layout")
    x_L = sample_motion(model, cond, x_I.T, schedule, seed, x_I.fps, x_I.layout)
    if x_L.T != x_I.T:
        raise ValueError("generated motion length does not match the input")
    keep = mask.mask.astype(bool)
    frames = np.where(keep[None, :], x_L.frames, x_I.frames)
    return MotionSequence(frames, x_I.fps, x_I.layout)


def editor_train_step(model: DenoiserModel, batch, schedule: NoiseSchedule,
                      optimizer: Adam, rng: np.random.Generator) -> float:
    """One Adam step of the unweighted MSE x0-prediction objective.

    batch: list of (motion, condition_id). Sequences must share a length.
    """
    if not batch:
        raise ValueError("batch must be nonempty")
    x0 = np.stack([_frames(x).astype(default_dtype()) for x, _ in batch])
    cond_ids = np.array([model.condition_id(c) for _, c in batch])
    B = len(batch)
    t_ids = rng.integers(1, schedule.steps + 1, size=B)
    noise = sample_gaussian(x0.shape, rng)
    ab = schedule.alpha_bar[t_ids - 1].reshape(B, 1, 1)
    x_t = np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * noise
    pred = model.forward(x_t.astype(default_dtype()), t_ids, cond_ids)
    diff = pred - Tensor(x0)
    loss = (diff * diff).mean()
    value = float(loss.item())
    if not np.isfinite(value):
        raise FloatingPointError("non-finite training loss")
    optimizer.zero_grad()
    loss.backward()
    optimizer.step()
    return value
