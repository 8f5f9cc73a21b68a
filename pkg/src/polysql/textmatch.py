"""Fuzzy string matching primitives for value retrieval.

Levenshtein ranking finds candidate cell values for a keyword; a banded
MinHash prefilter over subword-token shingles cheaply discards unrelated
survivors before the (comparatively expensive) embedding threshold stage.
"""

from __future__ import annotations

import hashlib
from typing import Iterable, Sequence

_MERSENNE_PRIME = (1 << 61) - 1
_LSH_SEED = 0x9E3779B9


def levenshtein(a: str, b: str) -> int:
    """Edit distance between two strings, O(min(len)) space."""
    if a == b:
        return 0
    if len(a) > len(b):
        a, b = b, a
    if not a:
        return len(b)
    previous = list(range(len(a) + 1))
    for i, cb in enumerate(b, start=1):
        current = [i] + [0] * len(a)
        for j, ca in enumerate(a, start=1):
            cost = 0 if ca == cb else 1
            current[j] = min(previous[j] + 1, current[j - 1] + 1, previous[j - 1] + cost)
        previous = current
    return previous[len(a)]


def top_k_by_distance(
    keyword: str,
    values: Sequence[str],
    k: int,
    distance_cap: int | None = None,
) -> list[tuple[str, int]]:
    """Top-k values by ascending edit distance to `keyword`, ties lexicographic.

    Values beyond `distance_cap` are ignored entirely.
    """
    scored = []
    for value in values:
        distance = levenshtein(keyword, value)
        if distance_cap is not None and distance > distance_cap:
            continue
        scored.append((value, distance))
    scored.sort(key=lambda pair: (pair[1], pair[0]))
    return scored[:k]


def _stable_hash(token: str) -> int:
    digest = hashlib.md5(token.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


class SubwordTokenizer:
    """Tokenizes text into subword shingles over an optional fixed vocabulary.

    With a vocabulary, segmentation is greedy longest-match; spans not
    covered by the vocabulary (or all text, when no vocabulary is given)
    fall back to padded character 3-grams.
    """

    def __init__(self, vocab: Iterable[str] | None = None, ngram: int = 3):
        self._vocab = frozenset(v.lower() for v in vocab) if vocab else frozenset()
        self._max_piece = max((len(v) for v in self._vocab), default=0)
        self._n = ngram

    def _char_grams(self, span: str) -> list[str]:
        padded = "^" + span + "$"
        if len(padded) <= self._n:
            return [padded]
        return [padded[i : i + self._n] for i in range(len(padded) - self._n + 1)]

    def tokenize(self, text: str) -> frozenset[str]:
        text = text.lower()
        if not text:
            return frozenset()
        if not self._vocab:
            return frozenset(self._char_grams(text))
        tokens: set[str] = set()
        i = 0
        pending_start = 0
        while i < len(text):
            matched = None
            for length in range(min(self._max_piece, len(text) - i), 0, -1):
                piece = text[i : i + length]
                if piece in self._vocab:
                    matched = piece
                    break
            if matched is None:
                i += 1
                continue
            if pending_start < i:
                tokens.update(self._char_grams(text[pending_start:i]))
            tokens.add(matched)
            i += len(matched)
            pending_start = i
        if pending_start < len(text):
            tokens.update(self._char_grams(text[pending_start:]))
        return frozenset(tokens)


class MinHashLsh:
    """Banded MinHash over token sets.

    Two token sets are candidate matches when at least one band of their
    signatures agrees. Permutation parameters derive from a fixed seed, so
    matching is reproducible across runs.
    """

    def __init__(self, permutations: int = 64, bands: int = 16, rows_per_band: int = 4):
        if bands * rows_per_band != permutations:
            raise ValueError(
                f"bands * rows_per_band must equal permutations "
                f"({bands} * {rows_per_band} != {permutations})"
            )
        self.permutations = permutations
        self.bands = bands
        self.rows_per_band = rows_per_band
        self._params = []
        state = _LSH_SEED
        for _ in range(permutations):
            state = (state * 6364136223846793005 + 1442695040888963407) % (1 << 64)
            a = (state % (_MERSENNE_PRIME - 1)) + 1
            state = (state * 6364136223846793005 + 1442695040888963407) % (1 << 64)
            b = state % _MERSENNE_PRIME
            self._params.append((a, b))

    def signature(self, tokens: Iterable[str]) -> tuple[int, ...]:
        hashes = [_stable_hash(t) for t in tokens]
        if not hashes:
            return tuple([_MERSENNE_PRIME] * self.permutations)
        return tuple(
            min((a * h + b) % _MERSENNE_PRIME for h in hashes) for a, b in self._params
        )

    def band_keys(self, signature: tuple[int, ...]) -> list[tuple[int, ...]]:
        r = self.rows_per_band
        return [signature[i * r : (i + 1) * r] for i in range(self.bands)]

    def candidate_match(self, tokens_a: Iterable[str], tokens_b: Iterable[str]) -> bool:
        sig_a = self.signature(tokens_a)
        sig_b = self.signature(tokens_b)
        return any(x == y for x, y in zip(self.band_keys(sig_a), self.band_keys(sig_b)))
