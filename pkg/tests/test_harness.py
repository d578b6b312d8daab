from __future__ import annotations

import numpy as np
import pytest

from parseroute.corpus import synth_corpus
from parseroute.harness import (
    REGIMES,
    ComparisonTable,
    Row,
    bench_throughput,
    build_corpus,
    difficulty_rank,
    regime,
    run_regime,
    score_matrix,
    simulate_preferences,
    training_data,
    write_bench_csv,
    write_difficulty_csv,
)
from parseroute.metrics import NEITHER
from parseroute.parsers import parse_matrix, reference_parsers
from parseroute.training import r_squared

SINGLES = ("extract", "extract_lite", "ocr", "vit", "vit_layout", "grobid")


def singles(table):
    return [r for r in table.rows if r.name in SINGLES]


# ---------------------------------------------------------------- regimes


def test_regime_names():
    assert REGIMES == ("unmodified", "image", "text_layer")
    with pytest.raises(ValueError):
        regime("blurry")


def test_text_layer_changes_a_subset_only():
    base = build_corpus(regime("unmodified", corpus_seed=5, n_docs=80))
    pert = build_corpus(regime("text_layer", corpus_seed=5, n_docs=80))
    changed = [a.pages != b.pages for a, b in zip(base, pert)]
    assert sum(changed) == round(0.15 * 80)
    assert all(a.groundtruth == b.groundtruth for a, b in zip(base, pert))


def test_image_regime_degrades_subset():
    docs = build_corpus(regime("image", corpus_seed=5, n_docs=80))
    levels = [d.image_degradation for d in docs]
    assert levels.count(1.0) == 12
    assert all(v in (0.0, 1.0) for v in levels)


def test_alpha_zero_matches_extract_row():
    table, _ = run_regime(regime("unmodified", corpus_seed=4, n_docs=40, alpha=0.0))
    a, e = table.row("adaptive_oracle"), table.row("extract")
    assert (a.coverage, a.bleu, a.rouge, a.car, a.at) == (e.coverage, e.bleu, e.rouge, e.car, e.at)
    assert a.heavy_fraction == 0.0


@pytest.mark.parametrize("name", REGIMES)
@pytest.mark.parametrize("seed", [1, 2, 3])
def test_oracle_adaptive_beats_singles_small(name, seed):
    table, _ = run_regime(regime(name, corpus_seed=seed, n_docs=60))
    best = max(r.bleu for r in singles(table))
    assert table.row("adaptive_oracle").bleu >= best


@pytest.mark.parametrize("name", REGIMES)
def test_regime_table_orderings(regime_tables, name):
    table, _ = regime_tables[name]
    rows = singles(table)
    assert len(rows) == 6
    assert table.row("adaptive_oracle").bleu >= max(r.bleu for r in rows)
    assert table.row("adaptive_trained").bleu >= table.row("random").bleu
    top = table.row("bleu_max").bleu
    assert all(r.bleu <= top + 1e-12 for r in table.rows)
    assert table.row("random").bleu == pytest.approx(np.mean([r.bleu for r in rows]), abs=1e-12)
    assert table.row("adaptive_oracle").heavy_fraction <= 0.05 + 1e-12


def test_trained_predictor_fits_first_pages(regime_tables, trained_selector):
    _, matrix = regime_tables["unmodified"]
    ids = [d.doc_id for d in matrix.docs]
    y = np.array([matrix.bleu_vector(i) for i in ids])
    pred = trained_selector.stage3.predict(ids, [matrix.first_pages[i] for i in ids])
    r2 = dict(zip(matrix.parser_ids, r_squared(y, pred)))
    assert r2["extract"] >= 0.3
    assert r2["vit"] >= 0.3


def test_table_render_and_csv():
    t = ComparisonTable("x", [Row("extract", 1.0, 0.5, 0.6, 0.9, 0.8), Row("vit", 1.0, 0.4, 0.5, 0.9, 0.7, wr=0.25)])
    text = t.render()
    assert text.splitlines()[0] == "[x]"
    assert "--" in text.splitlines()[2]
    assert "25.0" in text.splitlines()[3]
    csv_lines = t.to_csv().splitlines()
    assert csv_lines[0].startswith("regime,parser")
    assert csv_lines[1].split(",")[6] == ""


# ---------------------------------------------------------------- difficulty


def test_difficulty_rank_basic(tmp_path):
    table = {
        "easy": {"a": 1.0, "b": 1.0},
        "hard": {"a": 0.1, "b": 0.2},
        "mid": {"a": 0.5, "b": 0.6},
    }
    ranked = difficulty_rank(table)
    assert [r[1] for r in ranked] == ["hard", "mid", "easy"]
    assert [r[0] for r in ranked] == [1, 2, 3]
    out = tmp_path / "rank.csv"
    write_difficulty_csv(ranked, out)
    lines = out.read_text().splitlines()
    assert lines[0] == "rank,doc_id,mean_bleu,a,b"
    assert lines[1].startswith("1,hard,0.150000")


def test_difficulty_single_doc_and_missing():
    assert difficulty_rank({"d": {"a": 0.3}})[0][0] == 1
    assert difficulty_rank({}) == []
    with pytest.raises(ValueError, match="no parse"):
        difficulty_rank({"d": {"a": 0.3}, "e": {"b": 0.1}}, ["a", "b"])


def test_difficulty_invariant_to_constant_parser(small_corpus):
    matrix = score_matrix(small_corpus[:15], reference_parsers())
    table = {d.doc_id: dict(zip(matrix.parser_ids, matrix.bleu_vector(d.doc_id))) for d in matrix.docs}
    before = [r[1] for r in difficulty_rank(table)]
    for row in table.values():
        row["const"] = 0.42
    after = [r[1] for r in difficulty_rank(table)]
    assert before == after


# ---------------------------------------------------------------- training data and preferences


def test_training_data_shapes(small_corpus):
    docs = small_corpus[:6]
    parsers = reference_parsers()
    pages, documents, _ = training_data(docs, parsers)
    assert len(documents) == 6
    assert len(pages) >= 6
    assert all(len(ex.target) == len(parsers) for ex in pages + documents)
    assert all(0.0 <= v <= 1.0 for ex in pages for v in ex.target)


def test_simulated_preferences_are_valid(small_corpus):
    docs = small_corpus[:20]
    parsers = reference_parsers()
    pids = [p.parser_id for p in parsers]
    results = parse_matrix(parsers, docs)
    records, texts = simulate_preferences(docs, results, pids, n_pages=10, seed=1)
    assert len(records) == 20
    for r in records:
        if r.winner_parser == NEITHER:
            assert len(r.options) == 2
        else:
            assert r.winner_parser != r.loser_parser
            assert {r.winner_parser, r.loser_parser} <= set(pids)
            assert (r.page_id, r.winner_parser) in texts
    again, _ = simulate_preferences(docs, results, pids, n_pages=10, seed=1)
    assert again == records


# ---------------------------------------------------------------- throughput


def test_bench_sleep_mode_scales(tmp_path):
    rows = bench_throughput([1, 2], n_docs=16, seconds_per_doc=0.02, cost_mode="sleep")
    assert [r["workers"] for r in rows] == [1, 2]
    assert rows[0]["efficiency"] == pytest.approx(1.0)
    assert rows[1]["throughput"] > rows[0]["throughput"]
    path = write_bench_csv(rows, tmp_path / "bench.csv")
    assert path.read_text().splitlines()[0] == "workers,seconds,throughput,efficiency"


def test_score_matrix_first_pages_come_from_default(small_corpus):
    docs = synth_corpus(3, seed=9)
    m = score_matrix(docs, reference_parsers())
    assert set(m.first_pages) == {d.doc_id for d in docs}
    assert m.parser_ids == SINGLES
