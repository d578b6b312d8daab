"""Text-quality measures for parser output.

Every function here is pure. Word-level metrics (BLEU, ROUGE) share one
fixed tokenizer: lowercase, replace every character that is neither a word
character nor whitespace by a space, then split on whitespace.

Default configuration and what it gives on the reference sentence pair
used in the acceptance suite (gravitational-force example):

* BLEU: up to 4-grams, add-one smoothing on n >= 2 (unigram precision is
  never smoothed, so texts without a shared word score 0), exponential
  brevity penalty. Measured value 0.3515.
* ROUGE: unigram F1 (``rouge1_f``). Measured value 0.7826.
  ``rougeL_f`` (LCS F1) gives 0.5217 on the same pair.
"""

from __future__ import annotations

import logging
import math
import re
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numba
import numpy as np

logger = logging.getLogger(__name__)

NEITHER = "NEITHER"

_PUNCT = re.compile(r"[^\w\s]+")


class InsufficientDataError(ValueError):
    """Raised when an aggregate metric has nothing to aggregate."""


@dataclass(frozen=True)
class MetricConfig:
    bleu_max_ngram: int = 4
    bleu_smoothing: str = "add_one"
    rouge_variant: str = "rouge1_f"
    car_band_width: int = 1024
    at_threshold: float = 0.5

    def __post_init__(self) -> None:
        if not 1 <= self.bleu_max_ngram <= 8:
            raise ValueError(f"bleu_max_ngram must be in [1, 8], got {self.bleu_max_ngram}")
        if self.bleu_smoothing not in ("none", "add_one"):
            raise ValueError(f"unknown bleu_smoothing {self.bleu_smoothing!r}")
        if self.rouge_variant not in ("rouge1_f", "rougeL_f"):
            raise ValueError(f"unknown rouge_variant {self.rouge_variant!r}")
        if self.car_band_width < 1:
            raise ValueError("car_band_width must be >= 1")
        if not 0.0 <= self.at_threshold <= 1.0:
            raise ValueError("at_threshold must be in [0, 1]")

    def to_dict(self) -> dict:
        return {
            "bleu_max_ngram": self.bleu_max_ngram,
            "bleu_smoothing": self.bleu_smoothing,
            "rouge_variant": self.rouge_variant,
            "car_band_width": self.car_band_width,
            "at_threshold": self.at_threshold,
        }


DEFAULT_CONFIG = MetricConfig()


@dataclass(frozen=True)
class QualityScores:
    coverage: float
    bleu: float
    rouge: float
    car: float
    accepted: bool


@dataclass(frozen=True)
class PreferenceRecord:
    """One human judgement between two parses of the same page.

    ``winner_parser``/``loser_parser`` hold parser ids. An indifference
    judgement stores ``NEITHER`` as the winner and the two parsers that were
    shown in ``options``.
    """

    page_id: str
    winner_parser: str
    loser_parser: str
    annotator_id: str
    options: tuple[str, str] | None = None

    def __post_init__(self) -> None:
        if self.winner_parser == self.loser_parser:
            raise ValueError("winner and loser must differ")
        if self.winner_parser == NEITHER or self.loser_parser == NEITHER:
            if self.options is None or len(set(self.options)) != 2 or NEITHER in self.options:
                raise ValueError("indifference records must name the two parsers shown in options")

    @property
    def indifferent(self) -> bool:
        return self.winner_parser == NEITHER or self.loser_parser == NEITHER

    @property
    def pair(self) -> frozenset[str]:
        if self.indifferent:
            return frozenset(self.options)
        return frozenset((self.winner_parser, self.loser_parser))

    @property
    def choice(self) -> str:
        return NEITHER if self.indifferent else self.winner_parser

    @classmethod
    def from_dict(cls, d: dict) -> "PreferenceRecord":
        options = d.get("options")
        return cls(
            page_id=str(d["page_id"]),
            winner_parser=str(d["winner_parser"]),
            loser_parser=str(d["loser_parser"]),
            annotator_id=str(d["annotator_id"]),
            options=tuple(options) if options is not None else None,
        )


def tokenize(text: str) -> list[str]:
    return _PUNCT.sub(" ", text.lower()).split()


# ---------------------------------------------------------------- edit distance


_SHORT = 256


def levenshtein(a: str, b: str) -> int:
    """Exact unit-cost edit distance.

    Bit-parallel (Myers/Hyyro): one pass over the longer string, each step a
    handful of word operations on a bit vector as long as the shorter one.
    Short inputs use Python integers as the bit vector; longer ones a
    compiled kernel over 64-bit blocks.
    """
    if len(a) < len(b):
        a, b = b, a
    m = len(b)
    if m == 0:
        return len(a)
    if len(a) <= _SHORT:
        return _myers_bigint(a, b)
    codes, inv = np.unique(np.concatenate([_codepoints(a), _codepoints(b)]), return_inverse=True)
    ia, ib = inv[:len(a)].astype(np.int64), inv[len(a):].astype(np.int64)
    words = (m + 63) // 64
    peq = np.zeros((len(codes), words), dtype=np.uint64)
    j = np.arange(m, dtype=np.uint64)
    np.bitwise_or.at(peq, (ib, (j >> np.uint64(6)).astype(np.int64)), np.uint64(1) << (j & np.uint64(63)))
    return int(_myers_blocks(ia, peq, m))


def _myers_bigint(a: str, b: str) -> int:
    m = len(b)
    peq: dict[str, int] = {}
    for i, ch in enumerate(b):
        peq[ch] = peq.get(ch, 0) | (1 << i)
    mask = (1 << m) - 1
    high = 1 << (m - 1)
    pv, mv, score = mask, 0, m
    for ch in a:
        eq = peq.get(ch, 0)
        xv = eq | mv
        xh = (((eq & pv) + pv) ^ pv) | eq
        ph = mv | (~(xh | pv) & mask)
        mh = pv & xh
        if ph & high:
            score += 1
        elif mh & high:
            score -= 1
        ph = ((ph << 1) | 1) & mask
        mh = (mh << 1) & mask
        pv = mh | (~(xv | ph) & mask)
        mv = ph & xv
    return score


@numba.njit(cache=True)
def _myers_blocks(text, peq, m):  # pragma: no cover - compiled
    words = peq.shape[1]
    one = np.uint64(1)
    full = ~np.uint64(0)
    pv = np.full(words, full, dtype=np.uint64)
    mv = np.zeros(words, dtype=np.uint64)
    last = np.uint64((m - 1) & 63)
    top = np.uint64(63)
    score = m
    for i in range(text.shape[0]):
        c = text[i]
        hin = 1  # the first row grows by one per column
        for w in range(words):
            eq = peq[c, w]
            p, q = pv[w], mv[w]
            xv = eq | q
            if hin < 0:
                eq |= one
            xh = (((eq & p) + p) ^ p) | eq
            ph = q | ~(xh | p)
            mh = p & xh
            bit = last if w == words - 1 else top
            hout = 0
            if (ph >> bit) & one:
                hout = 1
            elif (mh >> bit) & one:
                hout = -1
            ph <<= one
            mh <<= one
            if hin < 0:
                mh |= one
            elif hin > 0:
                ph |= one
            pv[w] = mh | ~(xv | ph)
            mv[w] = ph & xv
            hin = hout
        score += hin
    return score


def _codepoints(s: str) -> np.ndarray:
    return np.frombuffer(s.encode("utf-32-le"), dtype=np.uint32)


def banded_levenshtein(a: str, b: str, band: int) -> int:
    """Edit distance restricted to a diagonal band of half-width ``band``.

    The band follows the scaled diagonal from (0, 0) to (len(a), len(b)).
    Paths leaving the band are discarded, so the result is never below the
    exact distance and equals it whenever the optimal path stays inside.
    """
    n, m = len(a), len(b)
    if n == 0 or m == 0:
        return max(n, m)
    # consecutive row windows must overlap, whatever the aspect ratio
    w = max(band, math.ceil(m / n) + 1)
    return int(_banded(_codepoints(a).astype(np.int64), _codepoints(b).astype(np.int64), w))


@numba.njit(cache=True)
def _banded(A, B, w):  # pragma: no cover - compiled
    n, m = A.shape[0], B.shape[0]
    inf = np.int64(1) << 40
    width = 2 * w + 2
    prev = np.full(width, inf, dtype=np.int64)
    cur = np.full(width, inf, dtype=np.int64)
    prev_lo, prev_hi = 0, min(m, w)
    for j in range(prev_lo, prev_hi + 1):
        prev[j] = j
    for i in range(1, n + 1):
        c = (i * m) // n
        lo, hi = max(0, c - w), min(m, c + w)
        for j in range(lo, hi + 1):
            best = inf
            if prev_lo <= j <= prev_hi:
                best = prev[j - prev_lo] + 1
            if j == 0:
                best = i
            else:
                if prev_lo <= j - 1 <= prev_hi:
                    d = prev[j - 1 - prev_lo] + (1 if A[i - 1] != B[j - 1] else 0)
                    if d < best:
                        best = d
                if j - 1 >= lo:
                    d = cur[j - 1 - lo] + 1
                    if d < best:
                        best = d
            cur[j - lo] = best
        prev, cur = cur, prev
        prev_lo, prev_hi = lo, hi
    if prev_hi != m:
        raise AssertionError("band does not reach the final cell")
    return prev[m - prev_lo]


def car(candidate: str, reference: str, cfg: MetricConfig = DEFAULT_CONFIG) -> float:
    """Character accuracy rate, 1 - distance / max(len).

    Two empty texts score 1.0. Texts longer than ``4 * car_band_width`` use
    the banded distance, which makes the score a lower bound.
    """
    longest = max(len(candidate), len(reference))
    if longest == 0:
        return 1.0
    if longest > 4 * cfg.car_band_width:
        dist = banded_levenshtein(candidate, reference, cfg.car_band_width)
        logger.debug("car: banded approximation used (len=%d, band=%d)", longest, cfg.car_band_width)
    else:
        dist = levenshtein(candidate, reference)
    return max(0.0, 1.0 - dist / longest)


# ---------------------------------------------------------------- n-gram metrics


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(candidate: str, reference: str, cfg: MetricConfig = DEFAULT_CONFIG) -> float:
    return bleu_tokens(tokenize(candidate), tokenize(reference), cfg)


def bleu_tokens(cand: Sequence[str], ref: Sequence[str], cfg: MetricConfig = DEFAULT_CONFIG) -> float:
    if not cand or not ref:
        return 0.0
    log_sum = 0.0
    for n in range(1, cfg.bleu_max_ngram + 1):
        total = max(len(cand) - n + 1, 0)
        matched = sum((_ngrams(cand, n) & _ngrams(ref, n)).values()) if total else 0
        if cfg.bleu_smoothing == "add_one" and n > 1:
            p = (matched + 1) / (total + 1)
        else:
            if matched == 0:
                return 0.0
            p = matched / total
        log_sum += math.log(p)
    c, r = len(cand), len(ref)
    bp = 1.0 if c >= r else math.exp(1.0 - r / c)
    return min(1.0, max(0.0, bp * math.exp(log_sum / cfg.bleu_max_ngram)))


def _lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    vocab: dict[str, int] = {}
    A = np.array([vocab.setdefault(t, len(vocab)) for t in a], dtype=np.int64)
    B = np.array([vocab.setdefault(t, len(vocab)) for t in b], dtype=np.int64)
    prev = np.zeros(len(B) + 1, dtype=np.int64)
    for x in A:
        tmp = np.empty_like(prev)
        tmp[0] = 0
        np.maximum(prev[1:], prev[:-1] + (B == x), out=tmp[1:])
        prev = np.maximum.accumulate(tmp)
    return int(prev[-1])


def rouge(candidate: str, reference: str, cfg: MetricConfig = DEFAULT_CONFIG) -> float:
    return rouge_tokens(tokenize(candidate), tokenize(reference), cfg)


def rouge_tokens(cand: Sequence[str], ref: Sequence[str], cfg: MetricConfig = DEFAULT_CONFIG) -> float:
    if not cand or not ref:
        return 0.0
    if cfg.rouge_variant == "rouge1_f":
        overlap = sum((Counter(cand) & Counter(ref)).values())
    else:
        overlap = _lcs_length(cand, ref)
    if overlap == 0:
        return 0.0
    p, r = overlap / len(cand), overlap / len(ref)
    return 2 * p * r / (p + r)


# ---------------------------------------------------------------- document level


def coverage(parsed_pages: Sequence[str], total_pages: int) -> float:
    if total_pages < 1:
        raise ValueError("malformed document record: total_pages must be >= 1")
    nonempty = sum(1 for p in parsed_pages if p.strip())
    return min(nonempty, total_pages) / total_pages


def accepted_tokens(per_doc: Iterable[tuple[int, float]], tau: float) -> float:
    """Share of groundtruth tokens in documents whose BLEU reaches ``tau``."""
    per_doc = list(per_doc)
    if not per_doc:
        raise InsufficientDataError("accepted_tokens needs at least one document")
    total = passed = 0
    for count, score in per_doc:
        if count < 0:
            raise ValueError("token_count must be >= 0")
        total += count
        if score >= tau:
            passed += count
    if total == 0:
        raise InsufficientDataError("accepted_tokens: all documents have zero tokens")
    return passed / total


def quality_scores(
    candidate_pages: Sequence[str],
    reference: str,
    total_pages: int,
    cfg: MetricConfig = DEFAULT_CONFIG,
    page_sep: str = "\f",
) -> QualityScores:
    text = page_sep.join(candidate_pages)
    cand_tokens, ref_tokens = tokenize(text), tokenize(reference)
    b = bleu_tokens(cand_tokens, ref_tokens, cfg)
    return QualityScores(
        coverage=coverage(candidate_pages, total_pages),
        bleu=b,
        rouge=rouge_tokens(cand_tokens, ref_tokens, cfg),
        car=car(text, reference, cfg),
        accepted=b >= cfg.at_threshold,
    )


# ---------------------------------------------------------------- preferences


def win_rate(records: Iterable[PreferenceRecord], parser: str) -> float:
    """wins / (wins + losses); indifference judgements are ignored."""
    wins = losses = 0
    for rec in records:
        if rec.indifferent:
            continue
        if rec.winner_parser == parser:
            wins += 1
        elif rec.loser_parser == parser:
            losses += 1
    if wins + losses == 0:
        raise InsufficientDataError(f"parser {parser!r} has no decided comparisons")
    return wins / (wins + losses)


def consensus_rate(records: Iterable[PreferenceRecord]) -> float:
    """Fraction of multi-annotator (page, parser pair) groups that agree unanimously."""
    groups: dict[tuple[str, frozenset], dict[str, str]] = {}
    for rec in records:
        groups.setdefault((rec.page_id, rec.pair), {})[rec.annotator_id] = rec.choice
    multi = [choices for choices in groups.values() if len(choices) >= 2]
    if not multi:
        raise InsufficientDataError("no page was judged by more than one annotator")
    unanimous = sum(1 for choices in multi if len(set(choices.values())) == 1)
    return unanimous / len(multi)
