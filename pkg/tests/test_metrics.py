from __future__ import annotations

import math
import random
from collections import Counter

import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import dp_levenshtein
from parseroute.metrics import (
    NEITHER,
    InsufficientDataError,
    MetricConfig,
    PreferenceRecord,
    accepted_tokens,
    banded_levenshtein,
    bleu,
    car,
    consensus_rate,
    coverage,
    levenshtein,
    quality_scores,
    rouge,
    tokenize,
    win_rate,
)

REFERENCE = ("The gravitational force between two masses is directly proportional to the product of their "
             "masses and inversely proportional to the square of the distance between them.")
CANDIDATE = ("The gravitational force inversely masses the proportional distance between two products and is "
             "directly proportional to the square of objects.")

short_text = st.text(alphabet="abcde ", max_size=24)


def ref_bleu(cand: list[str], ref: list[str], max_n: int = 4) -> float:
    """Straight-line BLEU with add-one smoothing above unigrams, for cross-checking."""
    if not cand or not ref:
        return 0.0
    logs = 0.0
    for n in range(1, max_n + 1):
        cg = Counter(tuple(cand[i:i + n]) for i in range(len(cand) - n + 1))
        rg = Counter(tuple(ref[i:i + n]) for i in range(len(ref) - n + 1))
        hit = sum(min(c, rg[g]) for g, c in cg.items())
        tot = sum(cg.values())
        if n == 1:
            if hit == 0:
                return 0.0
            logs += math.log(hit / tot)
        else:
            logs += math.log((hit + 1) / (tot + 1))
    bp = 1.0 if len(cand) >= len(ref) else math.exp(1 - len(ref) / len(cand))
    return bp * math.exp(logs / max_n)


# ---------------------------------------------------------------- levenshtein


def test_levenshtein_medical_terms():
    assert levenshtein("hyperthyroidism", "hypothyroidism") == 2


def test_levenshtein_kitten_sitting_matches_table():
    assert dp_levenshtein("kitten", "sitting") == 3
    assert levenshtein("kitten", "sitting") == 3


@pytest.mark.parametrize("x", ["", "a", "abc", "x" * 300, "ünïcödé ∑"])
def test_levenshtein_identity(x):
    assert levenshtein(x, x) == 0


def test_levenshtein_empty():
    assert levenshtein("", "abc") == 3
    assert levenshtein("abcd", "") == 4


@given(short_text, short_text)
def test_levenshtein_matches_dp(a, b):
    assert levenshtein(a, b) == dp_levenshtein(a, b)


@given(short_text, short_text, short_text)
def test_levenshtein_is_a_metric(a, b, c):
    d = levenshtein
    assert d(a, b) == d(b, a) >= 0
    assert (d(a, b) == 0) == (a == b)
    assert d(a, c) <= d(a, b) + d(b, c)


@pytest.mark.parametrize("n,m", [(255, 260), (300, 700), (1000, 64), (700, 1500)])
def test_levenshtein_long_paths_match_dp(n, m):
    rng = random.Random(n * m)
    a = "".join(rng.choice("acgt") for _ in range(n))
    b = "".join(rng.choice("acgt") for _ in range(m))
    assert levenshtein(a, b) == dp_levenshtein(a, b)


@given(short_text, short_text, st.integers(1, 30))
def test_banded_never_below_exact(a, b, band):
    assert banded_levenshtein(a, b, band) >= levenshtein(a, b)


@given(short_text, short_text)
def test_banded_exact_when_band_covers(a, b):
    assert banded_levenshtein(a, b, max(len(a), len(b)) + 1) == levenshtein(a, b)


# ---------------------------------------------------------------- car


def test_car_anchor():
    assert car("hyperthyroidism", "hypothyroidism") == pytest.approx(13 / 15, abs=1e-12)
    assert abs(car("hyperthyroidism", "hypothyroidism") - 0.8667) <= 1e-4


def test_car_trivial_cases():
    assert car("same text", "same text") == 1.0
    assert car("", "abc") == 0.0
    assert car("", "") == 1.0


def test_car_banded_is_lower_bound():
    rng = random.Random(5)
    ref = " ".join(rng.choice(["alpha", "beta", "gamma", "delta"]) for _ in range(1200))
    cand = "".join(ch if rng.random() > 0.05 else "#" for ch in ref)
    cand = cand[:3000] + cand[3400:]
    tight = MetricConfig(car_band_width=16)
    exact = MetricConfig(car_band_width=10_000)
    assert len(ref) > 4 * tight.car_band_width
    assert car(cand, ref, tight) <= car(cand, ref, exact)


# ---------------------------------------------------------------- bleu / rouge


def test_sentence_pair_scores():
    assert 0.27 <= bleu(CANDIDATE, REFERENCE) <= 0.37
    assert 0.77 <= rouge(CANDIDATE, REFERENCE) <= 0.87


def test_sentence_pair_frozen_values():
    # measured once under MetricConfig() and frozen
    assert bleu(CANDIDATE, REFERENCE) == pytest.approx(0.3515, abs=1e-4)
    assert rouge(CANDIDATE, REFERENCE) == pytest.approx(0.7826, abs=1e-4)


def test_bleu_trivial_cases():
    assert bleu("one two three four", "one two three four") == 1.0
    assert bleu("aa bb", "cc dd") == 0.0
    assert bleu("", "cc dd") == 0.0


def test_rouge_trivial_cases():
    assert rouge("x y z", "x y z") == 1.0
    assert rouge("aa", "bb") == 0.0
    assert rouge("", "bb") == 0.0
    lcs = MetricConfig(rouge_variant="rougeL_f")
    assert rouge("a b c d", "a c b d", lcs) == pytest.approx(0.75)


words = st.lists(st.sampled_from(["a", "b", "c", "d", "e"]), max_size=15)


@given(words, words)
def test_bleu_matches_reference_implementation(c, r):
    assert bleu(" ".join(c), " ".join(r)) == pytest.approx(ref_bleu(c, r), abs=1e-12)


@given(st.text(max_size=60), st.text(max_size=60))
def test_scores_in_unit_interval(a, b):
    for f in (bleu, rouge, car):
        assert 0.0 <= f(a, b) <= 1.0


@given(st.text(max_size=60).filter(lambda s: tokenize(s)))
def test_identical_inputs_score_one(x):
    assert rouge(x, x) == 1.0
    assert car(x, x) == 1.0
    if len(tokenize(x)) >= 4:
        assert bleu(x, x) == pytest.approx(1.0)


@given(st.text(max_size=60), st.text(max_size=60))
def test_tokenizer_idempotent_under_render(a, b):
    ta, tb = tokenize(a), tokenize(b)
    assert tokenize(" ".join(ta)) == ta
    assert bleu(" ".join(ta), " ".join(tb)) == bleu(a, b)
    assert rouge(" ".join(ta), " ".join(tb)) == rouge(a, b)


def test_metric_config_validation():
    with pytest.raises(ValueError):
        MetricConfig(bleu_max_ngram=9)
    with pytest.raises(ValueError):
        MetricConfig(at_threshold=1.5)
    with pytest.raises(ValueError):
        MetricConfig(car_band_width=0)
    with pytest.raises(ValueError):
        MetricConfig(rouge_variant="rouge2")


# ---------------------------------------------------------------- coverage / accepted tokens


def test_coverage():
    assert coverage(["x"] * 10, 10) == 1.0
    assert coverage(["x"] * 9 + ["  "], 10) == 0.9
    with pytest.raises(ValueError):
        coverage([], 0)


def test_coverage_after_page_drop():
    from parseroute.corpus import PerturbationSpec, perturb_pages

    pages = [f"page {i} text" for i in range(7)]
    dropped = perturb_pages(pages, PerturbationSpec("page_drop", 1 / 7, seed=11))
    assert coverage(dropped, 7) == pytest.approx(6 / 7)


def test_accepted_tokens_examples():
    assert accepted_tokens([(100, 0.9), (100, 0.1)], 0.5) == 0.5
    assert accepted_tokens([(10, 0.9), (5, 0.6)], 0.5) == 1.0
    assert accepted_tokens([(30, 0.6), (70, 0.4), (100, 0.55)], 0.5) == pytest.approx(0.65)
    with pytest.raises(InsufficientDataError):
        accepted_tokens([], 0.5)


@given(st.lists(st.tuples(st.integers(1, 100), st.floats(0, 1)), min_size=1, max_size=20),
       st.floats(0, 1), st.floats(0, 1))
def test_accepted_tokens_monotone_in_tau(docs, t1, t2):
    lo, hi = sorted((t1, t2))
    assert accepted_tokens(docs, hi) <= accepted_tokens(docs, lo)


def test_quality_scores_accepted_flag():
    s = quality_scores(["one two three four"], "one two three four", 1)
    assert s.accepted and s.bleu == 1.0 and s.coverage == 1.0
    s = quality_scores(["zz"], "one two three four", 2, MetricConfig(at_threshold=0.5))
    assert not s.accepted and s.coverage == 0.5


# ---------------------------------------------------------------- preferences


def rec(w, l, page="p", ann="a", options=None):
    return PreferenceRecord(page, w, l, ann, options)


def test_preference_record_invariants():
    with pytest.raises(ValueError):
        rec("x", "x")
    with pytest.raises(ValueError):
        rec(NEITHER, NEITHER)
    with pytest.raises(ValueError):
        rec(NEITHER, "x")  # indifference must name what was shown
    assert rec(NEITHER, "x", options=("x", "y")).indifferent


def test_win_rate_examples():
    assert win_rate([rec("p", f"q{i}") for i in range(5)], "p") == 1.0
    records = [rec("p", "q")] * 3 + [rec("q", "p")] + [rec(NEITHER, "p", options=("p", "q"))] * 2
    assert win_rate(records, "p") == 0.75
    with pytest.raises(InsufficientDataError):
        win_rate([rec(NEITHER, "p", options=("p", "q"))], "p")


@given(st.lists(st.tuples(st.sampled_from("abcd"), st.sampled_from("abcd")).filter(lambda t: t[0] != t[1]),
                min_size=1, max_size=30))
def test_round_robin_wins_equal_losses(games):
    records = [rec(w, l) for w, l in games]
    wins = Counter(w for w, _ in games)
    losses = Counter(l for _, l in games)
    assert sum(wins.values()) == sum(losses.values())
    for p in set(wins) | set(losses):
        assert win_rate(records, p) == pytest.approx(wins[p] / (wins[p] + losses[p]))


def test_consensus_rate_examples():
    agree = [rec("x", "y", page=f"p{i}", ann=a) for i in range(3) for a in ("a1", "a2")]
    assert consensus_rate(agree) == 1.0
    half = [rec("x", "y", "p1", "a1"), rec("x", "y", "p1", "a2"),
            rec("x", "y", "p2", "a1"), rec("y", "x", "p2", "a2")]
    assert consensus_rate(half) == 0.5
    with pytest.raises(InsufficientDataError):
        consensus_rate([rec("x", "y")])


def test_consensus_rate_405_groups():
    # 333 unanimous groups out of 405 -> 0.822
    records = []
    for g in range(405):
        records.append(rec("x", "y", f"p{g}", "a1"))
        if g < 333:
            records.append(rec("x", "y", f"p{g}", "a2"))
        elif g % 2:
            records.append(rec("y", "x", f"p{g}", "a2"))
        else:
            records.append(rec(NEITHER, "x", f"p{g}", "a2", options=("x", "y")))
    assert consensus_rate(records) == pytest.approx(333 / 405)
    assert round(consensus_rate(records), 3) == 0.822
