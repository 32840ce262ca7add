"""Train a small motion tokenizer and inspect the discrete codes.

The tokenizer is a 1-d conv autoencoder with a two-stage residual
quantizer: a class codebook captures the coarse pose, a residual codebook
refines it. Every frame becomes two symbols from a 128-symbol alphabet.

    python demos/02_tokenize_motion.py
"""

import numpy as np

from motioncoach.nn import Adam
from motioncoach.synth import PRIMITIVES, synth_motion
from motioncoach.tokenizer import (
    CODEBOOK_SIZE,
    TokenizerModel,
    reconstruction_mse_ratio,
    tokenizer_train_step,
    utilization_report,
)

T = 40
train = [synth_motion(name, {}, T, seed=s)
         for s in range(12) for name in sorted(PRIMITIVES)]
val = [synth_motion(name, {}, T, seed=100 + s)
       for s in range(2) for name in sorted(PRIMITIVES)]
print(f"{len(train)} training motions, {len(val)} validation motions, "
      f"feature dim {train[0].layout.dim}")

model = TokenizerModel(train[0].layout.dim, channels=32, seed=0)
model.fit_normalizer(train)
model.init_codebooks(train, seed=0)
opt = Adam(model.parameters(), lr=3e-3)

rng = np.random.default_rng(0)
for step in range(200):
    batch = [train[i] for i in rng.integers(0, len(train), 8)]
    loss, recon = tokenizer_train_step(model, batch, opt)
    if step % 40 == 0 or step == 199:
        ratio = reconstruction_mse_ratio(model, val)
        print(f"step {step:3d}: loss {loss:.4f}, val mse/var {ratio:.4f}")

util = utilization_report(model, val)
print(f"codebook utilization: class {util['class_utilization']:.2f}, "
      f"residual {util['residual_utilization']:.2f}")

x = val[0]
symbols = model.tokenize(x)
print(f"\none motion ({x.T} frames) -> {len(symbols)} symbols")
print(f"first 10 symbols: {symbols[:10].tolist()}")
print(f"class symbols sit in [0, {CODEBOOK_SIZE}), "
      f"residual symbols in [{CODEBOOK_SIZE}, {2 * CODEBOOK_SIZE})")

y = model.detokenize(symbols, x.layout)
err = np.sqrt(((x.frames - y.frames) ** 2).mean())
scale = np.sqrt((x.frames ** 2).mean())
print(f"detokenized rms error {err:.4f} (signal rms {scale:.4f})")
