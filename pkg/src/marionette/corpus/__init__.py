"""Scripted-expert corpus: behaviors, annotation text, dataset files."""

from .behaviors import BehaviorScript, StateView, default_behaviors, CONTROL_HZ
from .dataset import (CollectionFailed, CollectionReport, DatasetFormatError,
                      Triplet, collect, load_dataset, recheck, run_episode,
                      save_dataset, split_dataset, DEFAULT_MAX_LEN)
from .text import (PAD, UNK, BOS, TEMPLATES, UnknownBehavior, Vocabulary,
                   annotate, audit_template_overlap, words_of)

__all__ = [
    "BehaviorScript", "StateView", "default_behaviors", "CONTROL_HZ",
    "CollectionFailed", "CollectionReport", "DatasetFormatError", "Triplet",
    "collect", "load_dataset", "recheck", "run_episode", "save_dataset",
    "split_dataset", "DEFAULT_MAX_LEN", "PAD", "UNK", "BOS", "TEMPLATES",
    "UnknownBehavior", "Vocabulary", "annotate", "audit_template_overlap",
    "words_of",
]
