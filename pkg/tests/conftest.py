from __future__ import annotations

import os

import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=60)
settings.register_profile("ci", deadline=None, max_examples=200)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def dp_levenshtein(a: str, b: str) -> int:
    """Textbook full-table edit distance, used as the reference for the fast paths."""
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


@pytest.fixture(scope="session")
def small_corpus():
    from parseroute.corpus import synth_corpus

    return synth_corpus(40, seed=3)


@pytest.fixture(scope="session")
def trained_selector():
    """The cascade trained once on a 500-document synthetic corpus."""
    from parseroute.harness import train_selector

    from parseroute.corpus import synth_corpus

    return train_selector(synth_corpus(500, seed=101))


@pytest.fixture(scope="session")
def regime_tables(trained_selector):
    """Comparison tables for the three regimes on a held-out 300-document corpus."""
    from parseroute.harness import REGIMES, regime, run_regime

    return {name: run_regime(regime(name, corpus_seed=7, n_docs=300), predictor=trained_selector.stage3,
                             cls2=trained_selector.cls2, preferences=trained_selector.records)
            for name in REGIMES}
