"""Command text: paraphrase templates, the closed vocabulary, tokenizer.

Each behavior carries a handful of paraphrases; annotation samples one
uniformly. The vocabulary is built from the templates themselves, with
PAD fixed at index 0, then UNK and BOS.
"""

from __future__ import annotations

import re

import numpy as np

PAD, UNK, BOS = 0, 1, 2
SPECIALS = ["<pad>", "<unk>", "<bos>"]

TEMPLATES = {
    "stand_still": [
        "a person stands still",
        "the character stands in place without moving",
        "stand upright and keep balance",
        "someone remains standing quietly",
    ],
    "walk_forward": [
        "a person walks forward",
        "the character takes a few steps ahead",
        "walk straight ahead",
        "someone strolls forward across the floor",
    ],
    "jump_in_place": [
        "a person jumps in place",
        "the character hops up and down on the spot",
        "jump straight up",
        "someone bounces vertically without moving forward",
    ],
    "squat": [
        "a person squats down and stands back up",
        "the character does slow deep squats",
        "bend the knees into a squat and rise again",
        "someone crouches low then comes up repeatedly",
    ],
    "wave_left": [
        "a person waves with the left hand",
        "the character raises its left arm and waves",
        "wave hello using the left arm",
        "someone greets by waving the left hand overhead",
    ],
    "wave_right": [
        "a person waves with the right hand",
        "the character raises its right arm and waves",
        "wave hello using the right arm",
        "someone greets by waving the right hand overhead",
    ],
    "kick_right": [
        "a person kicks with the right leg",
        "the character snaps a kick with the right foot",
        "kick forward using the right leg",
        "someone throws a quick right kick",
    ],
    "crouch_then_jump": [
        "a person crouches and then springs up",
        "the character ducks low before leaping upward",
        "crouch down then explode into a jump",
        "someone sinks into a crouch and jumps up fast",
    ],
}


class UnknownBehavior(KeyError):
    pass


def annotate(behavior_id: str, rng: np.random.Generator) -> str:
    """Sample one paraphrase for a behavior, uniformly."""
    try:
        options = TEMPLATES[behavior_id]
    except KeyError:
        raise UnknownBehavior(f"no templates for behavior '{behavior_id}'")
    return options[int(rng.integers(len(options)))]


_WORD_RE = re.compile(r"[a-z']+")


def words_of(text: str) -> list:
    return _WORD_RE.findall(text.lower())


class Vocabulary:
    """Closed word list with PAD/UNK/BOS specials; index 0 is PAD."""

    def __init__(self, words):
        self.words = SPECIALS + sorted(set(words) - set(SPECIALS))
        self.index = {w: i for i, w in enumerate(self.words)}

    def __len__(self):
        return len(self.words)

    @classmethod
    def from_templates(cls, templates=None) -> "Vocabulary":
        templates = templates or TEMPLATES
        words = []
        for phrases in templates.values():
            for p in phrases:
                words.extend(words_of(p))
        return cls(words)

    def encode_word(self, w: str) -> int:
        return self.index.get(w, UNK)

    def tokenize(self, text: str, max_len: int) -> np.ndarray:
        """BOS-prefixed, UNK for out-of-vocabulary, padded to max_len."""
        if max_len < 1:
            raise ValueError("max_len must be >= 1")
        ids = [BOS] + [self.encode_word(w) for w in words_of(text)]
        ids = ids[:max_len]
        ids += [PAD] * (max_len - len(ids))
        return np.array(ids, dtype=np.int64)

    def detokenize(self, ids) -> str:
        out = []
        for i in ids:
            i = int(i)
            if i in (PAD, BOS):
                continue
            out.append(self.words[i] if 0 <= i < len(self.words) else "<unk>")
        return " ".join(out)


def audit_template_overlap() -> dict:
    """Pairwise word-set overlap between behaviors; retrieval needs < 1.0."""
    sets = {b: set(w for p in ps for w in words_of(p)) for b, ps in TEMPLATES.items()}
    report = {}
    names = list(sets)
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            inter = len(sets[a] & sets[b])
            union = len(sets[a] | sets[b])
            report[(a, b)] = inter / union
    return report
