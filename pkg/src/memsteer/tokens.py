"""Tokenization and set similarity for state retrieval.

States are compared as sets of lowercase tokens; the similarity metric is
plain Jaccard overlap. Keeping the tokenizer tiny and deterministic is what
makes retrieval results reproducible byte-for-byte across runs.
"""

from __future__ import annotations

import re

# Runs of word characters, underscores excluded: splits on whitespace and
# punctuation, keeps digits attached to letters ("s3" stays one token).
_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


def tokenize(text: str) -> frozenset[str]:
    """Lowercase, split on whitespace/punctuation, drop empties, dedupe."""
    return frozenset(_TOKEN_RE.findall(text.lower()))


def jaccard(a: frozenset[str], b: frozenset[str]) -> float:
    """|a ∩ b| / |a ∪ b|. Two empty sets count as identical (1.0)."""
    if not a and not b:
        return 1.0
    inter = len(a & b)
    union = len(a) + len(b) - inter
    return inter / union
