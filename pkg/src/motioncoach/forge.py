"""Triplet forging: synthesize source motions, sample corrective
instructions from a finite grammar, and produce edited targets.

Every grammar phrase maps to exactly one EditSpec and back, so an
instruction can be scored by re-applying its parsed edit and comparing
against the stored target.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, asdict

import numpy as np

from .edits import EditSpec, MAGNITUDE_BOUNDS, apply_parametric_edit, edit_feature_mask
from .lm import tokenize_text
from .motion import MotionSequence, Skeleton, default_skeleton, read_motion, write_motion
from .nn.rng import substream
from .synth import PRIMITIVES, synth_motion

LEFT_ARM_FULL = (14, 15, 16, 17)
RIGHT_ARM_FULL = (18, 19, 20, 21)
LEFT_LEG_FULL = (1, 2, 3, 4)
RIGHT_LEG_FULL = (5, 6, 7, 8)

DEGREES = ("slightly", "moderately", "sharply")
_DEGREE_BASE = {"slightly": 0.25, "moderately": 0.5, "sharply": 0.8}

EDITOR_BACKENDS = ("oracle", "diffusion")
SPLITS = ("train", "val", "test")

# template rows: (part, kind, direction, slot mode, phrase with {side}/{degree})
# slot mode: "side" binds left/right limb subsets, "both" is the symmetric
# limb pair, "whole" is the entire body part
_TEMPLATES = (
    ("upper_body", "elevate", 1, "side", "raise the {side} arm {degree}"),
    ("upper_body", "elevate", 1, "side", "lift your {side} elbow {degree} like a tennis serve"),
    ("upper_body", "elevate", 1, "side", "elevate the {side} hand {degree} toward the ceiling"),
    ("upper_body", "elevate", 1, "both", "hoist both arms {degree} overhead"),
    ("upper_body", "elevate", -1, "side", "lower the {side} arm {degree} as though setting down a cup"),
    ("upper_body", "elevate", -1, "side", "drop your {side} wrist {degree} in a relaxed manner"),
    ("upper_body", "elevate", -1, "both", "sink both arms {degree} downward past the waist"),
    ("upper_body", "extend", 1, "side", "extend the {side} arm {degree} further out"),
    ("upper_body", "extend", 1, "side", "stretch your {side} hand {degree} as if grabbing a shelf"),
    ("upper_body", "extend", -1, "side", "retract the {side} arm {degree} close to the chest"),
    ("upper_body", "extend", -1, "side", "tuck your {side} elbow in {degree} while guarding the ribs"),
    ("upper_body", "amplitude_scale", 1, "side", "exaggerate the {side} arm swing {degree}"),
    ("upper_body", "amplitude_scale", 1, "whole", "amplify your torso motion {degree}"),
    ("upper_body", "amplitude_scale", -1, "side", "soften the {side} arm movement {degree}"),
    ("upper_body", "amplitude_scale", -1, "whole", "calm your torso sway {degree}"),
    ("upper_body", "speed_scale", 1, "side", "quicken the {side} arm action {degree} like snapping a whip"),
    ("upper_body", "speed_scale", 1, "whole", "hurry your shoulder rhythm {degree} with sudden energy"),
    ("upper_body", "speed_scale", -1, "side", "slacken the {side} arm tempo {degree} into a lazy glide"),
    ("upper_body", "phase_shift", 1, "side", "delay the {side} arm timing {degree} behind the beat"),
    ("upper_body", "phase_shift", -1, "side", "advance your {side} arm cue {degree} ahead of schedule"),
    ("upper_body", "mirror", 0, "both", "mirror your arm gesture from side to side"),
    ("upper_body", "mirror", 0, "whole", "swap the whole upper pose left to right"),
    ("lower_body", "elevate", 1, "side", "raise the {side} knee {degree}"),
    ("lower_body", "elevate", 1, "side", "lift your {side} foot {degree} as if climbing stairs"),
    ("lower_body", "elevate", 1, "side", "kick the {side} leg up {degree}"),
    ("lower_body", "elevate", -1, "side", "lower the {side} leg {degree}"),
    ("lower_body", "elevate", -1, "both", "settle both legs {degree} back under you"),
    ("lower_body", "extend", 1, "side", "extend the {side} stride {degree}"),
    ("lower_body", "extend", 1, "side", "lengthen your {side} step {degree} like wading through water"),
    ("lower_body", "extend", -1, "side", "shorten the {side} stride {degree}"),
    ("lower_body", "extend", -1, "side", "pull the {side} foot back in {degree}"),
    ("lower_body", "amplitude_scale", 1, "side", "exaggerate the {side} leg swing {degree}"),
    ("lower_body", "amplitude_scale", 1, "whole", "boost your hip bounce {degree}"),
    ("lower_body", "amplitude_scale", -1, "side", "dampen the {side} leg motion {degree}"),
    ("lower_body", "amplitude_scale", -1, "whole", "steady your hip wobble {degree}"),
    ("lower_body", "speed_scale", 1, "side", "accelerate the {side} leg cadence {degree} for a brisk march"),
    ("lower_body", "speed_scale", 1, "whole", "rush your gait tempo {degree} as when chasing a bus"),
    ("lower_body", "speed_scale", -1, "side", "ease the {side} leg pace {degree} to an unhurried stroll"),
    ("lower_body", "phase_shift", 1, "side", "stagger the {side} leg timing {degree} off the count"),
    ("lower_body", "phase_shift", -1, "side", "anticipate your {side} foot strike {degree} before landing"),
    ("lower_body", "mirror", 0, "both", "mirror the knee pattern from side to side"),
    ("lower_body", "mirror", 0, "whole", "flip the lower stance left to right"),
)

_SIDE_SUBSETS = {
    "upper_body": {"left": LEFT_ARM_FULL, "right": RIGHT_ARM_FULL,
                   "both": LEFT_ARM_FULL + RIGHT_ARM_FULL},
    "lower_body": {"left": LEFT_LEG_FULL, "right": RIGHT_LEG_FULL,
                   "both": LEFT_LEG_FULL + RIGHT_LEG_FULL},
}
# symmetric knee/hip pair: a mirror subset distinct from the whole part
_LOWER_MIRROR_PAIR = (1, 2, 5, 6)


def _magnitude(kind: str, direction: int, degree: str, template_index: int) -> float:
    if kind == "mirror":
        return 0.0
    low, high = MAGNITUDE_BOUNDS[kind]
    bound = high if direction > 0 else -low
    # template-specific factor keeps magnitudes unique across phrasings
    mag = direction * bound * _DEGREE_BASE[degree] * (1.0 + 0.004 * template_index)
    return round(mag, 9)


@dataclass(frozen=True)
class GrammarEntry:
    phrase: str
    spec: EditSpec


class InstructionGrammar:
    """Finite phrase inventory with a phrase <-> EditSpec bijection."""

    def __init__(self, entries):
        self.entries = tuple(entries)
        if not self.entries:
            raise ValueError("grammar must be nonempty")
        self._by_phrase = {}
        self._by_spec = {}
        self._by_part = {}
        for e in self.entries:
            key = " ".join(tokenize_text(e.phrase))
            if key in self._by_phrase:
                raise ValueError(f"duplicate phrase {key!r}")
            if e.spec in self._by_spec:
                raise ValueError(f"duplicate edit for phrase {key!r}")
            self._by_phrase[key] = e.spec
            self._by_spec[e.spec] = e.phrase
            self._by_part.setdefault(e.spec.part_name, []).append(e)
        self._labels = {
            e.spec: i
            for i, e in enumerate(
                sorted(self.entries, key=lambda e: " ".join(tokenize_text(e.phrase)))
            )
        }

    @property
    def n_labels(self) -> int:
        return len(self.entries)

    @property
    def parts(self):
        return tuple(sorted(self._by_part))

    def phrases(self):
        return [e.phrase for e in self.entries]

    def parse(self, text: str) -> EditSpec:
        key = " ".join(tokenize_text(text))
        if key not in self._by_phrase:
            raise ValueError(f"instruction not in grammar: {text!r}")
        return self._by_phrase[key]

    def phrase_of(self, spec: EditSpec) -> str:
        return self._by_spec[spec]

    def label_of(self, spec: EditSpec) -> int:
        return self._labels[spec]

    def sample(self, rng: np.random.Generator, part: str | None = None):
        """Uniform draw; returns (phrase, spec)."""
        pool = self.entries if part is None else self._by_part.get(part)
        if not pool:
            raise ValueError(f"grammar has no phrases for part {part!r}")
        e = pool[int(rng.integers(0, len(pool)))]
        return e.phrase, e.spec

    def vocabulary(self):
        words = set()
        for e in self.entries:
            words.update(tokenize_text(e.phrase))
        return sorted(words)


def sample_instruction(grammar: InstructionGrammar, rng: np.random.Generator,
                       part: str | None = None):
    return grammar.sample(rng, part)


def default_grammar() -> InstructionGrammar:
    entries = []
    for tidx, (part, kind, direction, mode, text) in enumerate(_TEMPLATES):
        if mode == "side":
            bindings = [("left",), ("right",)]
        else:
            bindings = [(None,)]
        for (side,) in bindings:
            if mode == "side":
                subset = _SIDE_SUBSETS[part][side]
            elif mode == "both":
                if part == "lower_body" and kind == "mirror":
                    subset = _LOWER_MIRROR_PAIR
                else:
                    subset = _SIDE_SUBSETS[part]["both"]
            else:
                subset = None
            degrees = DEGREES if kind != "mirror" else (None,)
            for degree in degrees:
                phrase = text
                if side is not None:
                    phrase = phrase.replace("{side}", side)
                if degree is not None:
                    phrase = phrase.replace("{degree}", degree)
                mag = _magnitude(kind, direction, degree, tidx) if degree else 0.0
                entries.append(
                    GrammarEntry(phrase, EditSpec(part, kind, mag, subset))
                )
    grammar = InstructionGrammar(entries)
    upper = sum(1 for p, *_ in _TEMPLATES if p == "upper_body")
    lower = sum(1 for p, *_ in _TEMPLATES if p == "lower_body")
    assert upper >= 16 and lower >= 16, "grammar template inventory too small"
    return grammar


@dataclass(frozen=True)
class TripletRecord:
    src: str
    tgt: str
    instruction: str
    body_part: str
    editor: str
    split: str
    seed: int


def save_manifest(records, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(asdict(r), ensure_ascii=False) + "\n")


def load_manifest(path):
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(TripletRecord(**json.loads(line)))
    return records


def _sample_primitive(rng: np.random.Generator):
    names = sorted(PRIMITIVES)
    name = names[int(rng.integers(0, len(names)))]
    params = {}
    for pname, (default, low, high) in PRIMITIVES[name].items():
        if pname == "side":
            params[pname] = float(rng.integers(0, 2))
        else:
            span = high - low
            params[pname] = float(rng.uniform(low + 0.1 * span, high - 0.1 * span))
    return name, params


def forge_triplets(count: int, T: int, fps: int, out_dir, grammar: InstructionGrammar,
                   skeleton: Skeleton | None = None, editor: str = "oracle",
                   diffusion=None, master_seed: int = 0,
                   max_skip_fraction: float = 0.05, log=None):
    """Forge `count` triplets; returns the record list (split set to train).

    diffusion: (model, schedule) pair, required for the diffusion backend.
    Each record derives its own random substream from (master_seed, index),
    so the output is byte-reproducible and order-independent.
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    if editor not in EDITOR_BACKENDS:
        raise ValueError(f"unknown editor backend {editor!r}")
    if editor == "diffusion" and diffusion is None:
        raise ValueError("diffusion backend requires (model, schedule)")
    skeleton = skeleton or default_skeleton()
    os.makedirs(out_dir, exist_ok=True)
    records, skipped = [], 0
    for i in range(count):
        rng = substream(master_seed, f"forge/{i}")
        si = int(rng.integers(0, 2**31 - 1))
        name, params = _sample_primitive(rng)
        src = synth_motion(name, params, T, skeleton, seed=si, fps=fps)
        part = grammar.parts[int(rng.integers(0, len(grammar.parts)))]
        phrase, spec = grammar.sample(rng, part)
        try:
            if editor == "oracle":
                tgt = apply_parametric_edit(src, spec, skeleton)
            else:
                from .diffusion import edit_motion

                model, schedule = diffusion
                mask = edit_feature_mask(spec, src.layout, skeleton)
                tgt = edit_motion(src, grammar.label_of(spec), mask, model, schedule, si)
            if not np.all(np.isfinite(tgt.frames)):
                raise FloatingPointError("non-finite edited motion")
        except (FloatingPointError, ValueError) as exc:
            skipped += 1
            if log is not None:
                log(f"record {i} skipped: {exc}")
            continue
        src_path = os.path.join(out_dir, f"src_{i:05d}.cgtm")
        tgt_path = os.path.join(out_dir, f"tgt_{i:05d}.cgtm")
        write_motion(src, src_path)
        write_motion(tgt, tgt_path)
        records.append(
            TripletRecord(src_path, tgt_path, phrase, part, editor, "train", si)
        )
    if skipped > max_skip_fraction * count:
        raise RuntimeError(
            f"{skipped}/{count} records skipped, above the "
            f"{max_skip_fraction:.0%} failure budget"
        )
    return records


def forge_training_pairs(count: int, T: int, fps: int, grammar: InstructionGrammar,
                         skeleton: Skeleton | None = None, master_seed: int = 0):
    """Forge (src, tgt, instruction) triples in memory with the oracle editor.

    Cheap supplementary training data: nothing is written to disk and the
    substream names ("augment/{i}") are disjoint from forge_triplets
    ("forge/{i}"), so these pairs never collide with the persisted corpus.
    """
    if count < 0:
        raise ValueError("count must be nonnegative")
    skeleton = skeleton or default_skeleton()
    out = []
    for i in range(count):
        rng = substream(master_seed, f"augment/{i}")
        si = int(rng.integers(0, 2**31 - 1))
        name, params = _sample_primitive(rng)
        src = synth_motion(name, params, T, skeleton, seed=si, fps=fps)
        part = grammar.parts[int(rng.integers(0, len(grammar.parts)))]
        phrase, spec = grammar.sample(rng, part)
        tgt = apply_parametric_edit(src, spec, skeleton)
        out.append((src, tgt, phrase))
    return out


def split_dataset(records, ratios=(0.8, 0.1, 0.1), seed: int = 0):
    """Deterministic shuffle then floor-based partition, remainder train-first."""
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios):
        raise ValueError("need three nonnegative split ratios")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("split ratios must sum to 1")
    n = len(records)
    rng = substream(seed, "forge/split")
    order = rng.permutation(n)
    sizes = [int(np.floor(r * n)) for r in ratios]
    leftover = n - sum(sizes)
    for j in range(leftover):
        sizes[j % 3] += 1
    out = [None] * n
    pos = 0
    for split, size in zip(SPLITS, sizes):
        for idx in order[pos : pos + size]:
            r = records[idx]
            out[idx] = TripletRecord(
                r.src, r.tgt, r.instruction, r.body_part, r.editor, split, r.seed
            )
        pos += size
    return out
