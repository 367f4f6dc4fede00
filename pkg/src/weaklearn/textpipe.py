"""Caption normalization and dictionary construction.

Captions go through a destructive normalization (lowercase, accent folding,
punctuation removal) so that the label space is a closed set of plain ASCII
words. The dictionary keeps the K most frequent words after dropping the
stop_count most frequent ones.
"""

from __future__ import annotations

import re
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

# Characters that split words before the deletion rule runs.
_SPLITTERS = re.compile(r"[-/_]")
# Anything that is not a lowercase ASCII letter or whitespace is deleted.
_DROPPED = re.compile(r"[^a-z\s]")

DICT_FORMAT = "weaklearn-dict v1"
_DICT_HEADER = re.compile(r"^#weaklearn-dict v1 K=(\d+) stop=(\d+)$")


def normalize_text(text: str) -> list[str]:
    """Normalize a raw caption into a list of plain-ASCII word tokens.

    Lowercases, folds accents by canonical decomposition and dropping
    combining marks, turns hyphen/slash/underscore into spaces, deletes
    every remaining character that is not a basic Latin letter or
    whitespace, then splits on whitespace.
    """
    text = unicodedata.normalize("NFD", text.lower())
    text = "".join(c for c in text if not unicodedata.combining(c))
    text = _SPLITTERS.sub(" ", text)
    text = _DROPPED.sub("", text)
    return text.split()


@dataclass
class Dictionary:
    """Closed label vocabulary: word i is class index i.

    Words are ordered by descending corpus count with ties broken by
    ascending lexicographic byte order. counts[i] is the corpus count of
    words[i]; stop_count records how many top words were removed before
    the cut.
    """

    words: list[str]
    counts: np.ndarray
    stop_count: int
    word_to_index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if len(self.words) != len(self.counts):
            raise ValueError("words and counts length mismatch")
        if len(self.words) == 0:
            raise ValueError("empty vocabulary")
        if np.any(self.counts < 1):
            raise ValueError("nonpositive count")
        if np.any(np.diff(self.counts) > 0):
            raise ValueError("counts not non-increasing")
        for i in range(len(self.words) - 1):
            if self.counts[i] == self.counts[i + 1] and not self.words[i] < self.words[i + 1]:
                raise ValueError("tied counts not in ascending word order")
        self.word_to_index = {w: i for i, w in enumerate(self.words)}
        if len(self.word_to_index) != len(self.words):
            raise ValueError("duplicate word")

    @property
    def k(self) -> int:
        return len(self.words)


def count_tokens(docs: Iterable[list[str]]) -> Counter:
    """Count tokens over tokenized docs. Shards merge with `+`."""
    counts = Counter()
    for doc in docs:
        counts.update(doc)
    return counts


def dictionary_from_counts(counts: Counter, k: int, stop_count: int) -> Dictionary:
    """Build a Dictionary from merged token counts.

    The stop_count most frequent words are removed first (ties at the
    boundary: lexicographically smallest removed first), then the k most
    frequent remaining words are kept, same tie rule.
    """
    if k < 1:
        raise ValueError("invalid K")
    if stop_count < 0:
        raise ValueError("invalid stop_count")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    eligible = ranked[stop_count:]
    if not eligible:
        raise ValueError("empty vocabulary")
    kept = eligible[:k]
    return Dictionary(
        words=[w for w, _ in kept],
        counts=np.array([c for _, c in kept], dtype=np.int64),
        stop_count=stop_count,
    )


def build_dictionary(docs: Iterable[list[str]], k: int, stop_count: int) -> Dictionary:
    """Count tokens over docs and build the dictionary in one pass."""
    return dictionary_from_counts(count_tokens(docs), k, stop_count)


def encode_targets(tokens: list[str], dictionary: Dictionary) -> np.ndarray:
    """Map a tokenized doc to sorted unique class indices; unknown words are skipped."""
    w2i = dictionary.word_to_index
    hits = {w2i[t] for t in tokens if t in w2i}
    return np.array(sorted(hits), dtype=np.int64)


def save_dictionary(dictionary: Dictionary, path: str) -> None:
    """Write the versioned tab-separated dictionary file."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"#weaklearn-dict v1 K={dictionary.k} stop={dictionary.stop_count}\n")
        for word, count in zip(dictionary.words, dictionary.counts):
            fh.write(f"{word}\t{int(count)}\n")


def load_dictionary(path: str) -> Dictionary:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        m = _DICT_HEADER.match(header)
        if m is None:
            raise ValueError("malformed dictionary header")
        declared_k, stop_count = int(m.group(1)), int(m.group(2))
        words, counts = [], []
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                word, count = line.split("\t")
                counts.append(int(count))
            except ValueError:
                raise ValueError(f"malformed dictionary line: {line!r}") from None
            words.append(word)
    if len(words) != declared_k:
        raise ValueError("dictionary K mismatch")
    return Dictionary(words=words, counts=np.array(counts, dtype=np.int64), stop_count=stop_count)
