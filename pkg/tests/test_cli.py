"""Config validation, CLI exit codes, tiny pipeline runs, byte determinism."""

import hashlib
import json
import os

import numpy as np
import pytest

from motioncoach.cli import main
from motioncoach.config import (
    ConfigError,
    DEFAULTS,
    config_hash,
    load_config,
    make_config,
    serialize_config,
)
from motioncoach.edits import apply_parametric_edit
from motioncoach.forge import default_grammar
from motioncoach.motion import default_skeleton, read_motion

TINY = {
    "data": {"count": 24, "T": 12},
    "tokenizer": {"epochs": 1, "channels": 16, "max_train_motions": 16},
    "editor": {"steps": 6, "epochs": 1, "channels": 8, "blocks": 1},
    "lm": {"embed": 16, "heads": 2, "blocks": 1, "context": 128,
           "forge_extra": 4, "pretrain_epochs": 1, "epochs": 1},
    "eval": {"extractor_epochs": 2},
}


# -- config --------------------------------------------------------------------


def test_defaults_validate_and_merge_is_deep():
    cfg = make_config()
    assert cfg == DEFAULTS and cfg is not DEFAULTS
    cfg["lm"]["epochs"] = 99
    assert DEFAULTS["lm"]["epochs"] != 99


def test_unknown_key_is_named():
    with pytest.raises(ConfigError, match="unknown config key: lm.width"):
        make_config({"lm": {"width": 8}})
    with pytest.raises(ConfigError, match="unknown config key: turbo"):
        make_config({"turbo": True})


def test_bound_violation_names_key_and_bound():
    with pytest.raises(ConfigError, match=r"lm.λ must be >= 0"):
        make_config({"lm": {"λ": -1}})
    with pytest.raises(ConfigError, match="tokenizer.K must be 64"):
        make_config({"tokenizer": {"K": 32}})
    with pytest.raises(ConfigError, match="beta_start must be <= editor.beta_end"):
        make_config({"editor": {"beta_start": 0.5, "beta_end": 0.1}})
    with pytest.raises(ConfigError, match="divisible by lm.heads"):
        make_config({"lm": {"embed": 10, "heads": 4}})


def test_config_hash_is_stable_and_order_free():
    h = config_hash(make_config())
    assert len(h) == 12 and int(h, 16) >= 0
    assert config_hash(make_config()) == h
    assert config_hash(make_config({"seed": 7})) != h
    blob = serialize_config(make_config())
    assert json.loads(blob) == make_config()


def test_load_config_rejects_bad_files(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("not json")
    with pytest.raises(ConfigError, match="parse error"):
        load_config(p)
    p.write_text("[1, 2]")
    with pytest.raises(ConfigError, match="root must be a JSON object"):
        load_config(p)


# -- pipeline ------------------------------------------------------------------


def _write_cfg(root):
    path = os.path.join(root, "tiny.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(TINY, fh)
    return path


def _run(cfg, out, *argv):
    return main([argv[0], "--config", cfg, "--out", out, "--quiet", *argv[1:]])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = str(tmp_path_factory.mktemp("cli"))
    cfg = _write_cfg(root)
    out = os.path.join(root, "out")
    for cmd in ("forge", "train-tokenizer", "train-lm", "generate", "evaluate", "report"):
        assert _run(cfg, out, cmd) == 0, cmd
    h = config_hash(make_config(TINY))
    return cfg, out, os.path.join(out, h)


def test_pipeline_artifacts_exist(pipeline):
    _, _, ws = pipeline
    assert os.path.exists(os.path.join(ws, "config.json"))
    assert os.path.exists(os.path.join(ws, "data", "manifest.jsonl"))
    for name in ("tokenizer.cgtw", "vocab.json", "lm.cgtw", "extractor.cgtw"):
        assert os.path.exists(os.path.join(ws, "checkpoints", name)), name
    for name in ("forge", "train_tokenizer", "train_lm", "generate", "evaluate"):
        with open(os.path.join(ws, "reports", f"{name}.json"), encoding="utf-8") as fh:
            rep = json.load(fh)
        assert rep["provenance"]["config_hash"] == os.path.basename(ws)
    assert os.path.exists(os.path.join(ws, "reports", "report.txt"))


def test_generate_report_shape(pipeline):
    _, _, ws = pipeline
    with open(os.path.join(ws, "reports", "generate.json"), encoding="utf-8") as fh:
        gen = json.load(fh)
    assert gen["split"] == "test"
    assert gen["count"] == len(gen["items"]) > 0
    for item in gen["items"]:
        assert set(item) == {"index", "reference", "generated", "truncated"}


def test_evaluate_report_shape(pipeline):
    _, _, ws = pipeline
    with open(os.path.join(ws, "reports", "evaluate.json"), encoding="utf-8") as fh:
        ev = json.load(fh)
    assert 0.0 <= ev["parse_failure_rate"] <= 1.0
    assert ev["baseline_mpjpe"] > 0.0
    assert set(ev["text"]) == {"bleu4", "rouge2_f1", "meteor", "embed_cosine"}


def test_edit_command_matches_oracle(pipeline, tmp_path):
    cfg, out, ws = pipeline
    with open(os.path.join(ws, "data", "manifest.jsonl"), encoding="utf-8") as fh:
        rec = json.loads(fh.readline())
    motion_path = os.path.join(ws, rec["src"])
    grammar = default_grammar()
    phrase = grammar.phrases()[0]
    dest = str(tmp_path / "edited.cgtm")
    code = main([
        "edit", "--config", cfg, "--out", out, "--quiet",
        "--motion", motion_path, "--instruction", phrase, "--output", dest,
    ])
    assert code == 0
    want = apply_parametric_edit(
        read_motion(motion_path), grammar.parse(phrase), default_skeleton()
    )
    assert np.array_equal(read_motion(dest).frames, want.frames)


def _tree_digest(root):
    h = hashlib.sha256()
    for base, dirs, files in sorted(os.walk(root)):
        dirs.sort()
        for name in sorted(files):
            p = os.path.join(base, name)
            h.update(os.path.relpath(p, root).encode())
            with open(p, "rb") as fh:
                h.update(fh.read())
    return h.hexdigest()


def test_rerun_is_byte_identical(pipeline, tmp_path):
    cfg, _, ws = pipeline
    out2 = str(tmp_path / "out2")
    for cmd in ("forge", "train-tokenizer", "train-lm", "generate", "evaluate"):
        assert _run(cfg, out2, cmd) == 0, cmd
    ws2 = os.path.join(out2, os.path.basename(ws))
    # report.txt only exists in the first run; compare the shared artifacts
    for sub in ("data", "checkpoints"):
        assert _tree_digest(os.path.join(ws, sub)) == _tree_digest(os.path.join(ws2, sub))
    for name in ("forge", "train_tokenizer", "train_lm", "generate", "evaluate"):
        a = open(os.path.join(ws, "reports", f"{name}.json"), "rb").read()
        b = open(os.path.join(ws2, "reports", f"{name}.json"), "rb").read()
        assert a == b, name


# -- exit codes ----------------------------------------------------------------


def test_exit_code_config_error(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"lm": {"λ": -1}}))
    assert main(["forge", "--config", str(p), "--out", str(tmp_path / "o"), "--quiet"]) == 3
    assert main(["forge", "--seed", "-3", "--out", str(tmp_path / "o"), "--quiet"]) == 3


def test_exit_code_missing_artifact(tmp_path, capsys):
    cfg = _write_cfg(str(tmp_path))
    out = str(tmp_path / "o")
    assert _run(cfg, out, "train-tokenizer") == 2
    assert "run `motioncoach forge` first" in capsys.readouterr().err
    assert _run(cfg, out, "generate") == 2
    err = capsys.readouterr().err
    assert "tokenizer checkpoint" in err and "train-tokenizer" in err
    assert _run(cfg, out, "evaluate") == 2
    assert _run(cfg, out, "report") == 2


def test_exit_code_internal_error(pipeline, tmp_path):
    cfg, out, ws = pipeline
    # a missing motion file is a missing artifact
    code = main([
        "edit", "--config", cfg, "--out", out, "--quiet",
        "--motion", str(tmp_path / "nope.cgtm"),
        "--instruction", "do a backflip", "--output", str(tmp_path / "x.cgtm"),
    ])
    assert code == 2
    # an unparseable instruction against a real motion is an internal error
    with open(os.path.join(ws, "data", "manifest.jsonl"), encoding="utf-8") as fh:
        rec = json.loads(fh.readline())
    code = main([
        "edit", "--config", cfg, "--out", out, "--quiet",
        "--motion", os.path.join(ws, rec["src"]),
        "--instruction", "do a backflip", "--output", str(tmp_path / "x.cgtm"),
    ])
    assert code == 1


def test_split_override_requires_valid_choice(tmp_path):
    with pytest.raises(SystemExit):
        main(["generate", "--split", "bogus", "--out", str(tmp_path / "o")])
