"""Command line pipeline: forge data, train the three models, generate
instructions, and score them.

Artifacts live under out/<config-hash>/{data,checkpoints,reports}. Every
report is sorted-key JSON with no timestamps, so a rerun with the same
config reproduces the same bytes.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, replace

import numpy as np

from . import __version__
from .config import ConfigError, _validate, config_hash, load_config, make_config, serialize_config
from .diffusion import DenoiserModel, edit_motion, editor_train_step, make_schedule
from .edits import apply_parametric_edit, edit_feature_mask
from .forge import (
    default_grammar,
    forge_training_pairs,
    forge_triplets,
    load_manifest,
    save_manifest,
    split_dataset,
)
from .lm import (
    LmModel,
    build_vocab,
    generate_batch,
    lm_pretrain_step,
    lm_train_step,
    make_template,
    pack_batch,
    render_template,
    vocab_from_words,
)
from .metrics import (
    FeatureExtractor,
    TextEmbedder,
    reconstruction_eval,
    text_score,
    train_feature_extractor,
)
from .motion import default_skeleton, read_motion, write_motion
from .nn.optim import Adam
from .nn.rng import substream
from .tokenizer import (
    TokenizerModel,
    codes_to_symbols,
    quantize,
    reconstruction_mse_ratio,
    restart_dead_codes,
    tokenizer_train_step,
    utilization_report,
)

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_MISSING = 2
EXIT_CONFIG = 3


class MissingArtifact(RuntimeError):
    pass


@dataclass
class Workspace:
    cfg: dict
    hash: str
    root: str
    data: str
    checkpoints: str
    reports: str
    quiet: bool

    def log(self, msg: str) -> None:
        if not self.quiet:
            print(msg)


def _workspace(cfg: dict, out_root: str, quiet: bool) -> Workspace:
    h = config_hash(cfg)
    root = os.path.join(out_root, h)
    ws = Workspace(
        cfg, h, root,
        os.path.join(root, "data"),
        os.path.join(root, "checkpoints"),
        os.path.join(root, "reports"),
        quiet,
    )
    for d in (ws.data, ws.checkpoints, ws.reports):
        os.makedirs(d, exist_ok=True)
    with open(os.path.join(root, "config.json"), "w", encoding="utf-8") as fh:
        fh.write(serialize_config(cfg) + "\n")
    return ws


def _provenance(ws: Workspace) -> dict:
    return {
        "config_hash": ws.hash,
        "master_seed": ws.cfg["seed"],
        "package_version": __version__,
    }


def _write_report(ws: Workspace, name: str, payload: dict) -> str:
    payload = dict(payload)
    payload["provenance"] = _provenance(ws)
    path = os.path.join(ws.reports, f"{name}.json")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(payload, ensure_ascii=False, sort_keys=True, indent=2) + "\n")
    return path


def _require(path: str, what: str, produced_by: str) -> str:
    if not os.path.exists(path):
        raise MissingArtifact(
            f"missing {what} at {path}; run `motioncoach {produced_by}` first"
        )
    return path


def _manifest_path(ws: Workspace) -> str:
    return os.path.join(ws.data, "manifest.jsonl")


def _rebase(records, ws: Workspace, to_relative: bool):
    # manifests store paths relative to the workspace root, so the same
    # config yields the same bytes no matter where --out points
    def conv(p):
        return os.path.relpath(p, ws.root) if to_relative else os.path.join(ws.root, p)

    return [replace(r, src=conv(r.src), tgt=conv(r.tgt)) for r in records]


def _load_records(ws: Workspace, split: str | None = None):
    records = load_manifest(_require(_manifest_path(ws), "dataset manifest", "forge"))
    records = _rebase(records, ws, to_relative=False)
    if split is not None:
        records = [r for r in records if r.split == split]
    return records


def _decayed_lr(lr0: float, step: int, total: int) -> float:
    # exponential decay to lr0/10 over the run
    return lr0 * 10.0 ** (-step / max(total - 1, 1))


# ---------------------------------------------------------------------------
# subcommands


def cmd_forge(ws: Workspace, args) -> dict:
    cfg = ws.cfg
    grammar = default_grammar()
    backend = cfg["data"]["editor"]
    diffusion = None
    if backend == "diffusion":
        path = getattr(args, "editor_checkpoint", None) or os.path.join(
            ws.checkpoints, "editor.cgtw"
        )
        path = _require(path, "editor checkpoint", "train-editor")
        model = DenoiserModel.load(path)
        schedule = make_schedule(
            cfg["editor"]["steps"], cfg["editor"]["beta_start"], cfg["editor"]["beta_end"]
        )
        diffusion = (model, schedule)
    records = forge_triplets(
        cfg["data"]["count"], cfg["data"]["T"], cfg["data"]["fps"], ws.data,
        grammar, editor=backend, diffusion=diffusion, master_seed=cfg["seed"],
        log=ws.log,
    )
    records = split_dataset(records, tuple(cfg["data"]["split_ratios"]), cfg["seed"])
    save_manifest(_rebase(records, ws, to_relative=True), _manifest_path(ws))
    counts = {}
    for r in records:
        counts[r.split] = counts.get(r.split, 0) + 1
    report = {
        "requested": cfg["data"]["count"],
        "forged": len(records),
        "skipped": cfg["data"]["count"] - len(records),
        "splits": counts,
        "editor": backend,
    }
    ws.log(f"forged {len(records)} triplets -> {_manifest_path(ws)} (splits {counts})")
    _write_report(ws, "forge", report)
    return report


def _train_motions(ws: Workspace, split: str, cap: int | None = None):
    records = _load_records(ws, split)
    motions = []
    for r in records:
        motions.append(read_motion(r.src))
        motions.append(read_motion(r.tgt))
        if cap is not None and len(motions) >= cap:
            break
    if not motions:
        raise MissingArtifact(f"manifest has no '{split}' records; rerun `motioncoach forge`")
    return motions[:cap] if cap is not None else motions


def cmd_train_tokenizer(ws: Workspace, args) -> dict:
    cfg = ws.cfg["tokenizer"]
    seed = ws.cfg["seed"]
    motions = _train_motions(ws, "train", cfg["max_train_motions"])
    model = TokenizerModel(
        motions[0].layout.dim, channels=cfg["channels"], seed=seed,
        fps=ws.cfg["data"]["fps"],
    )
    model.class_codebook.decay = cfg["γ"]
    model.residual_codebook.decay = cfg["γ"]
    model.fit_normalizer(motions)
    model.init_codebooks(motions, seed=seed)
    opt = Adam(model.parameters(), lr=cfg["lr"])
    order_rng = substream(seed, "cli/tokenizer_order")
    restart_rng = substream(seed, "cli/tokenizer_restart")
    n, bs = len(motions), cfg["batch"]
    steps_per_epoch = (n + bs - 1) // bs
    total = cfg["epochs"] * steps_per_epoch
    restart_cutoff = int(0.8 * total)
    step = 0
    first = last = None
    for _ in range(cfg["epochs"]):
        order = order_rng.permutation(n)
        for lo in range(0, n, bs):
            batch = [motions[i] for i in order[lo : lo + bs]]
            opt.lr = _decayed_lr(cfg["lr"], step, total)
            l_recon, l_com = tokenizer_train_step(
                model, batch, opt, beta_commit=cfg["β_commit"]
            )
            if first is None:
                first = (l_recon, l_com)
            last = (l_recon, l_com)
            step += 1
            if step % 20 == 0 and step < restart_cutoff:
                xn = np.stack([model._normalize(m.frames) for m in batch])
                f, _ = model.encode_features(xn)
                flat = f.data.reshape(-1, f.data.shape[-1])
                restart_dead_codes(model.class_codebook, flat, restart_rng)
                q = quantize(flat, model.codebooks)
                res = flat - model.class_codebook.entries[q.class_indices]
                restart_dead_codes(model.residual_codebook, res, restart_rng)
    probe = _train_motions(ws, "val", 64)
    ratio = reconstruction_mse_ratio(model, probe)
    util = utilization_report(model, probe)
    path = os.path.join(ws.checkpoints, "tokenizer.cgtw")
    model.save(path)
    report = {
        "steps": step,
        "loss_first": list(first),
        "loss_last": list(last),
        "val_mse_ratio": ratio,
        "class_utilization": util["class_utilization"],
        "residual_utilization": util["residual_utilization"],
        "checkpoint": os.path.relpath(path, ws.root),
    }
    ws.log(
        f"tokenizer trained: val mse ratio {ratio:.4f}, "
        f"utilization {util['class_utilization']:.2f}/{util['residual_utilization']:.2f}"
    )
    _write_report(ws, "train_tokenizer", report)
    return report


def cmd_train_editor(ws: Workspace, args) -> dict:
    cfg = ws.cfg["editor"]
    seed = ws.cfg["seed"]
    grammar = default_grammar()
    records = _load_records(ws, "train")
    if not records:
        raise MissingArtifact("manifest has no train records; rerun `motioncoach forge`")
    pairs = [
        (read_motion(r.tgt), grammar.label_of(grammar.parse(r.instruction)))
        for r in records
    ]
    model = DenoiserModel(
        pairs[0][0].layout.dim, grammar.n_labels, cfg["steps"],
        channels=cfg["channels"], blocks=cfg["blocks"], seed=seed,
    )
    schedule = make_schedule(cfg["steps"], cfg["beta_start"], cfg["beta_end"])
    opt = Adam(model.parameters(), lr=cfg["lr"])
    rng = substream(seed, "cli/editor_train")
    order_rng = substream(seed, "cli/editor_order")
    n, bs = len(pairs), cfg["batch"]
    first = last = None
    step, total = 0, cfg["epochs"] * ((n + bs - 1) // bs)
    for _ in range(cfg["epochs"]):
        order = order_rng.permutation(n)
        for lo in range(0, n, bs):
            batch = [pairs[i] for i in order[lo : lo + bs]]
            opt.lr = _decayed_lr(cfg["lr"], step, total)
            loss = editor_train_step(model, batch, schedule, opt, rng)
            if first is None:
                first = loss
            last = loss
            step += 1
    path = os.path.join(ws.checkpoints, "editor.cgtw")
    model.save(path)
    report = {"steps": step, "loss_first": first, "loss_last": last,
              "checkpoint": os.path.relpath(path, ws.root)}
    ws.log(f"editor trained: loss {first:.4f} -> {last:.4f}")
    _write_report(ws, "train_editor", report)
    return report


def _load_tokenizer(ws: Workspace) -> TokenizerModel:
    path = _require(
        os.path.join(ws.checkpoints, "tokenizer.cgtw"), "tokenizer checkpoint",
        "train-tokenizer",
    )
    return TokenizerModel.load(path)


def _tokenize_many(tok: TokenizerModel, motions, batch_size: int = 32):
    """Batched motion -> symbol streams; all motions must share a length."""
    out = []
    for lo in range(0, len(motions), batch_size):
        chunk = motions[lo : lo + batch_size]
        xn = np.stack([tok._normalize(m.frames) for m in chunk])
        f, _ = tok.encode_features(xn)
        for b in range(len(chunk)):
            out.append(codes_to_symbols(quantize(f.data[b], tok.codebooks)))
    return out


def _record_templates(ws: Workspace, tok: TokenizerModel, records, vocab):
    srcs = _tokenize_many(tok, [read_motion(r.src) for r in records])
    tgts = _tokenize_many(tok, [read_motion(r.tgt) for r in records])
    return [
        make_template(s, t, r.instruction, vocab)
        for s, t, r in zip(srcs, tgts, records)
    ]


def _next_token_accuracy(model: LmModel, templates, batch_size: int = 16) -> float:
    correct = total = 0
    for lo in range(0, len(templates), batch_size):
        ids, targets, mask = pack_batch(templates[lo : lo + batch_size], pad_id=0)
        pred = model.forward_np(ids).argmax(axis=-1)
        sel = mask > 0
        correct += int((pred[sel] == targets[sel]).sum())
        total += int(sel.sum())
    return correct / max(total, 1)


def _vocab_path(ws: Workspace) -> str:
    return os.path.join(ws.checkpoints, "vocab.json")


def _load_vocab(ws: Workspace):
    path = _require(_vocab_path(ws), "vocabulary file", "train-lm")
    with open(path, encoding="utf-8") as fh:
        blob = json.load(fh)
    return vocab_from_words(blob["words"], blob["strategy"])


def cmd_train_lm(ws: Workspace, args) -> dict:
    cfg = ws.cfg["lm"]
    seed = ws.cfg["seed"]
    tok = _load_tokenizer(ws)
    records = _load_records(ws, "train")
    if not records:
        raise MissingArtifact("manifest has no train records; rerun `motioncoach forge`")
    # the full phrase inventory keeps the vocabulary stable across corpus sizes
    grammar = default_grammar()
    corpus = [r.instruction for r in records] + grammar.phrases()
    vocab = build_vocab(corpus, strategy=cfg["strategy"])
    with open(_vocab_path(ws), "w", encoding="utf-8") as fh:
        fh.write(json.dumps(
            {"words": list(vocab.words), "strategy": vocab.strategy},
            ensure_ascii=False, sort_keys=True,
        ) + "\n")
    ws.log(f"vocabulary: {vocab.size} rows ({vocab.strategy})")
    templates = _record_templates(ws, tok, records, vocab)
    if cfg["forge_extra"]:
        # forged pairs are nearly free; extra fresh examples generalize far
        # better than extra passes over the same corpus
        dcfg = ws.cfg["data"]
        pairs = forge_training_pairs(
            cfg["forge_extra"], dcfg["T"], dcfg["fps"], grammar,
            master_seed=seed,
        )
        srcs = _tokenize_many(tok, [p[0] for p in pairs])
        tgts = _tokenize_many(tok, [p[1] for p in pairs])
        templates += [
            make_template(s, t, p[2], vocab)
            for s, t, p in zip(srcs, tgts, pairs)
        ]
        ws.log(f"training pool: {len(records)} corpus + {len(pairs)} forged extra")
    model = LmModel(
        vocab.size, embed_dim=cfg["embed"], n_heads=cfg["heads"],
        n_blocks=cfg["blocks"], context=cfg["context"],
        lambda_anchor=cfg["λ"], seed=seed,
    )
    order_rng = substream(seed, "cli/lm_order")
    n, bs = len(templates), cfg["batch"]
    # warm-up on the full-sequence loss builds the motion-comparison
    # circuitry the response needs; the anchor is snapshotted after it
    opt = Adam(model.parameters(), lr=cfg["lr"])
    step, total = 0, cfg["pretrain_epochs"] * ((n + bs - 1) // bs)
    pre_ce = None
    for epoch in range(cfg["pretrain_epochs"]):
        order = order_rng.permutation(n)
        for lo in range(0, n, bs):
            batch = [templates[i] for i in order[lo : lo + bs]]
            opt.lr = _decayed_lr(cfg["lr"], step, total)
            pre_ce = lm_pretrain_step(model, batch, opt)
            step += 1
        ws.log(f"lm warm-up epoch {epoch + 1}/{cfg['pretrain_epochs']}: "
               f"full-seq ce {pre_ce:.4f}")
    model.snapshot_anchor()
    opt = Adam(model.parameters(), lr=cfg["lr"])  # fresh moments
    step, total = 0, cfg["epochs"] * ((n + bs - 1) // bs)
    first = last = None
    for epoch in range(cfg["epochs"]):
        order = order_rng.permutation(n)
        for lo in range(0, n, bs):
            batch = [templates[i] for i in order[lo : lo + bs]]
            opt.lr = _decayed_lr(cfg["lr"], step, total)
            ce, anchor = lm_train_step(model, batch, opt)
            if first is None:
                first = (ce, anchor)
            last = (ce, anchor)
            step += 1
        ws.log(f"lm epoch {epoch + 1}/{cfg['epochs']}: ce {last[0]:.4f}")
    acc = _next_token_accuracy(model, templates[:64])
    path = os.path.join(ws.checkpoints, "lm.cgtw")
    model.save(path)
    report = {
        "steps": step,
        "vocab_size": vocab.size,
        "pretrain_ce_last": pre_ce,
        "loss_first": list(first),
        "loss_last": list(last),
        "train_next_token_accuracy": acc,
        "checkpoint": os.path.relpath(path, ws.root),
    }
    ws.log(f"lm trained: ce {first[0]:.4f} -> {last[0]:.4f}, next-token acc {acc:.3f}")
    _write_report(ws, "train_lm", report)
    return report


def cmd_generate(ws: Workspace, args) -> dict:
    split = args.split
    tok = _load_tokenizer(ws)
    vocab = _load_vocab(ws)
    lm_path = _require(os.path.join(ws.checkpoints, "lm.cgtw"), "lm checkpoint", "train-lm")
    model = LmModel.load(lm_path)
    all_records = _load_records(ws)
    picked = [(i, r) for i, r in enumerate(all_records) if r.split == split]
    if not picked:
        raise MissingArtifact(f"manifest has no '{split}' records; rerun `motioncoach forge`")
    records = [r for _, r in picked]
    srcs = _tokenize_many(tok, [read_motion(r.src) for r in records])
    tgts = _tokenize_many(tok, [read_motion(r.tgt) for r in records])
    prompts = [render_template(s, t, vocab) for s, t in zip(srcs, tgts)]
    # batches must share a prompt length
    groups = {}
    for pos, p in enumerate(prompts):
        groups.setdefault(len(p), []).append(pos)
    results = [None] * len(prompts)
    for length in sorted(groups):
        idx = groups[length]
        for lo in range(0, len(idx), 64):
            chunk = idx[lo : lo + 64]
            outs = generate_batch(
                model, [prompts[i] for i in chunk], vocab, seed=ws.cfg["seed"]
            )
            for i, res in zip(chunk, outs):
                results[i] = res
    items = [
        {
            "index": picked[pos][0],
            "reference": records[pos].instruction,
            "generated": results[pos].text,
            "truncated": results[pos].truncated,
        }
        for pos in range(len(records))
    ]
    n_trunc = sum(1 for it in items if it["truncated"])
    report = {"split": split, "count": len(items), "truncated": n_trunc, "items": items}
    ws.log(f"generated {len(items)} instructions on '{split}' ({n_trunc} truncated)")
    _write_report(ws, "generate", report)
    return report


def _feature_extractor(ws: Workspace) -> FeatureExtractor:
    path = os.path.join(ws.checkpoints, "extractor.cgtw")
    if os.path.exists(path):
        return FeatureExtractor.load(path)
    records = _load_records(ws, "train")
    if not records:
        raise MissingArtifact("manifest has no train records; rerun `motioncoach forge`")
    records = records[:256]
    parts = sorted({r.body_part for r in records})
    motions = [read_motion(r.tgt) for r in records]
    labels = [parts.index(r.body_part) for r in records]
    ext = train_feature_extractor(
        motions, labels, n_classes=max(len(parts), 2),
        epochs=ws.cfg["eval"]["extractor_epochs"], seed=ws.cfg["seed"],
    )
    ext.save(path)
    return ext


def cmd_evaluate(ws: Workspace, args) -> dict:
    gen_path = _require(
        os.path.join(ws.reports, "generate.json"), "generated instructions", "generate"
    )
    with open(gen_path, encoding="utf-8") as fh:
        gen = json.load(fh)
    all_records = _load_records(ws)
    vocab = _load_vocab(ws)
    lm_path = _require(os.path.join(ws.checkpoints, "lm.cgtw"), "lm checkpoint", "train-lm")
    lm = LmModel.load(lm_path)
    embedder = TextEmbedder.from_vocab(vocab, lm.params["tok_emb"].data)
    grammar = default_grammar()
    skeleton = default_skeleton()
    items = gen["items"]
    scores = [text_score(it["generated"], it["reference"], embedder) for it in items]
    text_stats = {}
    for name in ("bleu4", "rouge2_f1", "meteor", "embed_cosine"):
        vals = np.array([getattr(s, name) for s in scores], dtype=np.float64)
        text_stats[name] = {"mean": float(vals.mean()), "std": float(vals.std())}
    ext = _feature_extractor(ws)
    triplets = [
        (read_motion(all_records[it["index"]].src), read_motion(all_records[it["index"]].tgt))
        for it in items
    ]
    recon = reconstruction_eval(
        triplets, [it["generated"] for it in items], grammar, ext.features, skeleton
    )
    base = recon.baseline_mpjpe
    reduction = (base - recon.score.mpjpe) / base if base > 0 else 0.0
    requested = set(ws.cfg["eval"]["metrics"])
    report = {
        "split": gen["split"],
        "count": recon.count,
        "parse_failure_rate": recon.parse_failure_rate,
        "text": {k: v for k, v in text_stats.items() if k in requested},
        "mpjpe": recon.score.mpjpe,
        "baseline_mpjpe": base,
        "mpjpe_reduction": reduction,
        "fid": recon.score.fid,
    }
    ws.log(
        f"evaluate: mpjpe {recon.score.mpjpe:.4f} (baseline {base:.4f}, "
        f"reduction {reduction:.1%}), fid {recon.score.fid:.4f}, "
        f"parse failures {recon.parse_failure_rate:.1%}"
    )
    _write_report(ws, "evaluate", report)
    return report


def cmd_edit(ws: Workspace, args) -> dict:
    grammar = default_grammar()
    skeleton = default_skeleton()
    motion = read_motion(_require(args.motion, "input motion", "forge"))
    spec = grammar.parse(args.instruction)
    backend = args.editor or ws.cfg["eval"]["editor_backend"]
    if backend == "oracle":
        edited = apply_parametric_edit(motion, spec, skeleton)
    else:
        path = _require(
            os.path.join(ws.checkpoints, "editor.cgtw"), "editor checkpoint", "train-editor"
        )
        model = DenoiserModel.load(path)
        schedule = make_schedule(
            ws.cfg["editor"]["steps"], ws.cfg["editor"]["beta_start"],
            ws.cfg["editor"]["beta_end"],
        )
        mask = edit_feature_mask(spec, motion.layout, skeleton)
        edited = edit_motion(
            motion, grammar.label_of(spec), mask, model, schedule, ws.cfg["seed"]
        )
    write_motion(edited, args.output)
    ws.log(f"edited motion written to {args.output} ({backend} editor)")
    return {"output": args.output, "editor": backend}


def cmd_roundtrip(ws: Workspace, args) -> dict:
    stages = {}
    stages["forge"] = cmd_forge(ws, args)
    stages["train_tokenizer"] = cmd_train_tokenizer(ws, args)
    stages["train_lm"] = cmd_train_lm(ws, args)
    stages["generate"] = cmd_generate(ws, args)
    ev = cmd_evaluate(ws, args)
    stages["evaluate"] = ev
    report = {
        "stages": sorted(stages),
        "summary": {
            "records": stages["forge"]["forged"],
            "val_mse_ratio": stages["train_tokenizer"]["val_mse_ratio"],
            "mpjpe": ev["mpjpe"],
            "baseline_mpjpe": ev["baseline_mpjpe"],
            "mpjpe_reduction": ev["mpjpe_reduction"],
            "parse_failure_rate": ev["parse_failure_rate"],
        },
    }
    _write_report(ws, "roundtrip", report)
    ws.log(f"roundtrip done: mpjpe reduction {ev['mpjpe_reduction']:.1%}")
    return report


def cmd_report(ws: Workspace, args) -> dict:
    path = _require(os.path.join(ws.reports, "evaluate.json"), "evaluation report", "evaluate")
    with open(path, encoding="utf-8") as fh:
        ev = json.load(fh)
    lines = [
        f"config {ev['provenance']['config_hash']} "
        f"(seed {ev['provenance']['master_seed']}, "
        f"motioncoach {ev['provenance']['package_version']})",
        f"split: {ev['split']} ({ev['count']} records)",
        f"parse failure rate: {ev['parse_failure_rate']:.3f}",
    ]
    for name, stats in sorted(ev["text"].items()):
        lines.append(f"{name}: {stats['mean']:.4f} +/- {stats['std']:.4f}")
    lines += [
        f"mpjpe: {ev['mpjpe']:.6f} (baseline {ev['baseline_mpjpe']:.6f}, "
        f"reduction {ev['mpjpe_reduction']:.1%})",
        f"fid: {ev['fid']:.6f}",
    ]
    text = "\n".join(lines) + "\n"
    out = os.path.join(ws.reports, "report.txt")
    with open(out, "w", encoding="utf-8") as fh:
        fh.write(text)
    if not ws.quiet:
        sys.stdout.write(text)
    return {"report": out}


# ---------------------------------------------------------------------------
# argument parsing


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="motioncoach",
        description="corrective-instruction pipeline for synthetic human motion",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (defaults apply otherwise)")
    common.add_argument("--seed", type=int, help="override the master seed")
    common.add_argument("--out", default="out", help="artifact root directory")
    common.add_argument("--quiet", action="store_true", help="suppress progress output")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("forge", parents=[common], help="synthesize the triplet dataset")
    p.add_argument("--count", type=int, help="override the triplet count")
    p.add_argument("--editor", choices=("oracle", "diffusion"), help="forging backend")
    p.add_argument("--editor-checkpoint",
                   help="editor weights to forge with (e.g. from an oracle-forged run)")

    sub.add_parser("train-tokenizer", parents=[common], help="train the motion tokenizer")
    sub.add_parser("train-editor", parents=[common], help="train the diffusion editor")
    sub.add_parser("train-lm", parents=[common], help="fine-tune the instruction model")

    p = sub.add_parser("generate", parents=[common], help="generate instructions for a split")
    p.add_argument("--split", default="test", choices=("train", "val", "test"))

    p = sub.add_parser("edit", parents=[common], help="apply an instruction to a motion file")
    p.add_argument("--motion", required=True, help="input .cgtm file")
    p.add_argument("--instruction", required=True, help="instruction text")
    p.add_argument("--output", required=True, help="output .cgtm file")
    p.add_argument("--editor", choices=("oracle", "diffusion"))

    sub.add_parser("evaluate", parents=[common], help="score generated instructions")

    p = sub.add_parser("roundtrip", parents=[common],
                       help="forge, train, generate, and evaluate in one run")
    p.add_argument("--count", type=int, help="override the triplet count")
    p.add_argument("--editor", choices=("oracle", "diffusion"), help="forging backend")
    p.add_argument("--split", default="test", choices=("train", "val", "test"))

    sub.add_parser("report", parents=[common], help="print the evaluation summary")
    return parser


_COMMANDS = {
    "forge": cmd_forge,
    "train-tokenizer": cmd_train_tokenizer,
    "train-editor": cmd_train_editor,
    "train-lm": cmd_train_lm,
    "generate": cmd_generate,
    "edit": cmd_edit,
    "evaluate": cmd_evaluate,
    "roundtrip": cmd_roundtrip,
    "report": cmd_report,
}


def _resolve_config(args) -> dict:
    cfg = load_config(args.config) if args.config else make_config()
    if args.seed is not None:
        cfg["seed"] = args.seed
    if getattr(args, "count", None) is not None:
        cfg["data"]["count"] = args.count
    if args.command in ("forge", "roundtrip") and getattr(args, "editor", None):
        cfg["data"]["editor"] = args.editor
    _validate(cfg)
    return cfg


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = _resolve_config(args)
        ws = _workspace(cfg, args.out, args.quiet)
        _COMMANDS[args.command](ws, args)
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingArtifact as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_MISSING
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
