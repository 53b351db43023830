"""Deterministic BLEU-1..4, ROUGE-L, and stem-aware METEOR.

BLEU is corpus-level (aggregated clipped counts, brevity penalty, no
smoothing: a zero precision at any order zeroes that BLEU order exactly).
ROUGE-L and METEOR are per-pair scores averaged over the corpus.  METEOR uses
a two-stage alignment (exact match, then Porter-stem match) with no synonym
stage.
"""

from __future__ import annotations

import math
import re
import sys
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Sequence

from .stemmer import porter_stem

__all__ = [
    "tokenize",
    "bleu",
    "rouge_l",
    "rouge_l_corpus",
    "meteor",
    "meteor_corpus",
    "MetricReport",
    "compute_metrics",
]

TokenSequence = list[str]

_TOKEN = re.compile(r"\d+(?:\.\d+)?|[^\W\d_]+|[^\w\s]")


def tokenize(text: str) -> TokenSequence:
    """Lowercase, split on whitespace, separate punctuation, keep numbers whole."""
    return _TOKEN.findall(text.lower())


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(
    candidates: Sequence[TokenSequence],
    references: Sequence[TokenSequence],
    max_n: int = 4,
) -> list[float]:
    """Corpus BLEU_1..BLEU_max_n with uniform weights and no smoothing."""
    if len(candidates) != len(references):
        raise ValueError(f"got {len(candidates)} candidates but {len(references)} references")

    matched = [0] * max_n
    total = [0] * max_n
    cand_len = 0
    ref_len = 0
    for cand, ref in zip(candidates, references):
        cand_len += len(cand)
        ref_len += len(ref)
        for n in range(1, max_n + 1):
            cand_grams = _ngrams(cand, n)
            ref_grams = _ngrams(ref, n)
            matched[n - 1] += sum(min(c, ref_grams[g]) for g, c in cand_grams.items())
            total[n - 1] += max(len(cand) - n + 1, 0)

    precisions = [m / t if t > 0 else 0.0 for m, t in zip(matched, total)]
    bp = 1.0 if cand_len >= ref_len else (math.exp(1 - ref_len / cand_len) if cand_len > 0 else 0.0)

    scores = []
    for k in range(1, max_n + 1):
        if any(p == 0.0 for p in precisions[:k]):
            scores.append(0.0)
        else:
            log_mean = sum(math.log(p) for p in precisions[:k]) / k
            scores.append(bp * math.exp(log_mean))
    return scores


def _lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(
    candidate: TokenSequence,
    reference: TokenSequence,
    diagnostic: Callable[[str], None] = lambda m: print(m, file=sys.stderr),
) -> float:
    """LCS F-measure with beta = 1 (harmonic mean of LCS precision and recall)."""
    if not candidate and not reference:
        diagnostic("rouge_l: both sequences empty; defined as 0")
        return 0.0
    if not candidate or not reference:
        return 0.0
    lcs = _lcs_length(candidate, reference)
    if lcs == 0:
        return 0.0
    precision = lcs / len(candidate)
    recall = lcs / len(reference)
    return 2 * precision * recall / (precision + recall)


def rouge_l_corpus(candidates: Sequence[TokenSequence], references: Sequence[TokenSequence]) -> float:
    if len(candidates) != len(references):
        raise ValueError("length mismatch")
    if not candidates:
        return 0.0
    return sum(rouge_l(c, r) for c, r in zip(candidates, references)) / len(candidates)


def _align(candidate: TokenSequence, reference: TokenSequence) -> list[tuple[int, int]]:
    """Two-stage alignment: exact token match, then Porter-stem match.

    Each token participates in at most one match; candidate tokens are
    matched left to right against the first available reference token.
    """
    cand_free = [True] * len(candidate)
    ref_free = [True] * len(reference)
    pairs: list[tuple[int, int]] = []

    for key in (lambda t: t, porter_stem):
        ref_keys = [key(t) for t in reference]
        for ci, token in enumerate(candidate):
            if not cand_free[ci]:
                continue
            ck = key(token)
            for ri, rk in enumerate(ref_keys):
                if ref_free[ri] and ck == rk:
                    pairs.append((ci, ri))
                    cand_free[ci] = False
                    ref_free[ri] = False
                    break
    return sorted(pairs)


def meteor(
    candidate: TokenSequence,
    reference: TokenSequence,
    alpha: float = 0.9,
    beta: float = 3.0,
    gamma: float = 0.5,
) -> float:
    """F_mean x (1 - fragmentation penalty) over the two-stage alignment."""
    if not candidate or not reference:
        return 0.0
    pairs = _align(candidate, reference)
    m = len(pairs)
    if m == 0:
        return 0.0

    chunks = 1
    for (pc, pr), (c, r) in zip(pairs, pairs[1:]):
        if c != pc + 1 or r != pr + 1:
            chunks += 1

    precision = m / len(candidate)
    recall = m / len(reference)
    f_mean = precision * recall / (alpha * precision + (1 - alpha) * recall)
    penalty = gamma * (chunks / m) ** beta
    return f_mean * (1 - penalty)


def meteor_corpus(candidates: Sequence[TokenSequence], references: Sequence[TokenSequence]) -> float:
    if len(candidates) != len(references):
        raise ValueError("length mismatch")
    if not candidates:
        return 0.0
    return sum(meteor(c, r) for c, r in zip(candidates, references)) / len(candidates)


@dataclass(frozen=True)
class MetricReport:
    bleu: tuple[float, float, float, float]
    rouge_l_f1: float
    meteor: float
    n_pairs: int


def compute_metrics(candidates: Sequence[str], references: Sequence[str]) -> MetricReport:
    """All metrics for paired raw texts (one reference per candidate)."""
    if len(candidates) != len(references):
        raise ValueError("length mismatch")
    cand_tokens = [tokenize(t) for t in candidates]
    ref_tokens = [tokenize(t) for t in references]
    b = bleu(cand_tokens, ref_tokens)
    return MetricReport(
        bleu=(b[0], b[1], b[2], b[3]),
        rouge_l_f1=rouge_l_corpus(cand_tokens, ref_tokens),
        meteor=meteor_corpus(cand_tokens, ref_tokens),
        n_pairs=len(candidates),
    )
