"""Run configuration: JSON with defaults, strict key checking, and bound
validation that names the offending key."""

from __future__ import annotations

import copy
import hashlib
import json

DEFAULTS = {
    "seed": 42,
    "data": {
        "count": 2000,
        "T": 60,
        "fps": 20,
        "split_ratios": [0.8, 0.1, 0.1],
        "editor": "oracle",
    },
    "tokenizer": {
        "K": 64,
        "H": 16,
        "β_commit": 0.25,
        "γ": 0.99,
        "epochs": 28,
        "lr": 3e-3,
        "channels": 64,
        "batch": 8,
        "max_train_motions": 512,
    },
    "editor": {
        "steps": 50,
        "beta_start": 1e-4,
        "beta_end": 0.02,
        "epochs": 4,
        "lr": 2e-3,
        "channels": 64,
        "blocks": 4,
        "batch": 8,
    },
    "lm": {
        "strategy": "reuse",
        "λ": 0.01,
        "blocks": 4,
        "embed": 128,
        "heads": 4,
        "context": 512,
        "forge_extra": 4800,
        "pretrain_epochs": 1,
        "epochs": 3,
        "lr": 2e-3,
        "batch": 16,
    },
    "eval": {
        "metrics": ["bleu4", "rouge2_f1", "meteor", "embed_cosine", "mpjpe", "fid"],
        "editor_backend": "oracle",
        "extractor_epochs": 20,
    },
}

# key -> (predicate, human-readable bound)
_RULES = {
    "seed": (lambda v: isinstance(v, int) and 0 <= v, "seed must be a nonnegative integer"),
    "data.count": (lambda v: isinstance(v, int) and v >= 1, "data.count must be >= 1"),
    "data.T": (lambda v: isinstance(v, int) and v >= 8, "data.T must be >= 8"),
    "data.fps": (lambda v: isinstance(v, int) and v >= 1, "data.fps must be >= 1"),
    "data.split_ratios": (
        lambda v: isinstance(v, list) and len(v) == 3 and all(
            isinstance(x, (int, float)) and x >= 0 for x in v
        ) and abs(sum(v) - 1.0) <= 1e-9,
        "data.split_ratios must be three nonnegative numbers summing to 1",
    ),
    "data.editor": (
        lambda v: v in ("oracle", "diffusion"),
        "data.editor must be 'oracle' or 'diffusion'",
    ),
    "tokenizer.K": (lambda v: v == 64, "tokenizer.K must be 64 (fixed by the 128-symbol motion alphabet)"),
    "tokenizer.H": (lambda v: v == 16, "tokenizer.H must be 16 (fixed code dimension)"),
    "tokenizer.β_commit": (lambda v: 0 <= v, "tokenizer.β_commit must be >= 0"),
    "tokenizer.γ": (lambda v: 0 <= v < 1, "tokenizer.γ must be in [0, 1)"),
    "tokenizer.epochs": (lambda v: isinstance(v, int) and v >= 1, "tokenizer.epochs must be >= 1"),
    "tokenizer.lr": (lambda v: v > 0, "tokenizer.lr must be > 0"),
    "tokenizer.channels": (lambda v: isinstance(v, int) and v >= 16, "tokenizer.channels must be >= 16"),
    "tokenizer.batch": (lambda v: isinstance(v, int) and v >= 1, "tokenizer.batch must be >= 1"),
    "tokenizer.max_train_motions": (
        lambda v: isinstance(v, int) and v >= 8,
        "tokenizer.max_train_motions must be >= 8",
    ),
    "editor.steps": (lambda v: isinstance(v, int) and v >= 2, "editor.steps must be >= 2"),
    "editor.beta_start": (lambda v: 0 < v < 1, "editor.beta_start must be in (0, 1)"),
    "editor.beta_end": (lambda v: 0 < v < 1, "editor.beta_end must be in (0, 1)"),
    "editor.epochs": (lambda v: isinstance(v, int) and v >= 1, "editor.epochs must be >= 1"),
    "editor.lr": (lambda v: v > 0, "editor.lr must be > 0"),
    "editor.channels": (lambda v: isinstance(v, int) and v >= 2, "editor.channels must be >= 2"),
    "editor.blocks": (lambda v: isinstance(v, int) and v >= 1, "editor.blocks must be >= 1"),
    "editor.batch": (lambda v: isinstance(v, int) and v >= 1, "editor.batch must be >= 1"),
    "lm.strategy": (lambda v: v in ("reuse", "extended"), "lm.strategy must be 'reuse' or 'extended'"),
    "lm.λ": (lambda v: v >= 0, "lm.λ must be >= 0"),
    "lm.blocks": (lambda v: isinstance(v, int) and v >= 1, "lm.blocks must be >= 1"),
    "lm.embed": (lambda v: isinstance(v, int) and v >= 8, "lm.embed must be >= 8"),
    "lm.heads": (lambda v: isinstance(v, int) and v >= 1, "lm.heads must be >= 1"),
    "lm.context": (lambda v: isinstance(v, int) and v >= 32, "lm.context must be >= 32"),
    "lm.forge_extra": (
        lambda v: isinstance(v, int) and v >= 0,
        "lm.forge_extra must be >= 0",
    ),
    "lm.pretrain_epochs": (
        lambda v: isinstance(v, int) and v >= 0,
        "lm.pretrain_epochs must be >= 0",
    ),
    "lm.epochs": (lambda v: isinstance(v, int) and v >= 1, "lm.epochs must be >= 1"),
    "lm.lr": (lambda v: v > 0, "lm.lr must be > 0"),
    "lm.batch": (lambda v: isinstance(v, int) and v >= 1, "lm.batch must be >= 1"),
    "eval.metrics": (
        lambda v: isinstance(v, list) and v and all(isinstance(x, str) for x in v),
        "eval.metrics must be a nonempty list of metric names",
    ),
    "eval.editor_backend": (
        lambda v: v in ("oracle", "diffusion"),
        "eval.editor_backend must be 'oracle' or 'diffusion'",
    ),
    "eval.extractor_epochs": (
        lambda v: isinstance(v, int) and v >= 1,
        "eval.extractor_epochs must be >= 1",
    ),
}


class ConfigError(ValueError):
    pass


def _merge(base: dict, override: dict, prefix: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        path = f"{prefix}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key: {path}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{path} must be an object")
            out[key] = _merge(base[key], value, f"{path}.")
        else:
            out[key] = value
    return out


def _validate(cfg: dict) -> None:
    for path, (pred, bound) in _RULES.items():
        node = cfg
        for part in path.split("."):
            node = node[part]
        ok = False
        try:
            ok = bool(pred(node))
        except TypeError:
            ok = False
        if not ok:
            raise ConfigError(f"invalid value for {path}: {node!r} ({bound})")
    b0, b1 = cfg["editor"]["beta_start"], cfg["editor"]["beta_end"]
    if b0 > b1:
        raise ConfigError(
            f"invalid value for editor.beta_start: {b0!r} "
            "(editor.beta_start must be <= editor.beta_end)"
        )
    if cfg["lm"]["embed"] % cfg["lm"]["heads"] != 0:
        raise ConfigError(
            f"invalid value for lm.heads: {cfg['lm']['heads']!r} "
            "(lm.embed must be divisible by lm.heads)"
        )


def make_config(overrides: dict | None = None) -> dict:
    cfg = _merge(DEFAULTS, overrides or {})
    _validate(cfg)
    return cfg


def load_config(path) -> dict:
    """Defaults merged with the JSON file at `path`, validated."""
    with open(path, encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config parse error: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    return make_config(raw)


def serialize_config(cfg: dict) -> str:
    return json.dumps(cfg, ensure_ascii=False, sort_keys=True, indent=2)


def config_hash(cfg: dict) -> str:
    payload = json.dumps(cfg, ensure_ascii=False, sort_keys=True)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:12]
