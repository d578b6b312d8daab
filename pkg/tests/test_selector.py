from __future__ import annotations

import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from parseroute.corpus import DocumentMetadata, PerturbationSpec, SynthProfile, perturb, synth_corpus
from parseroute.selector import (
    Cls1Thresholds,
    Cls2Model,
    EmbeddingConfig,
    MetadataFeaturizer,
    OraclePredictor,
    PredictorModel,
    RoutingDecision,
    cls1_validity,
    cls2_improvement,
    embed,
    heavy_cap,
    predict_accuracy,
    route_ft,
    route_llm,
    text_stats,
)

PIDS = ("extract", "extract_lite", "ocr", "vit", "vit_layout", "grobid")
SMALL = EmbeddingConfig(bucket_count=4096, dim=4)


def meta(tool="Word", year=2015, pages=3):
    return DocumentMetadata(tool, year, pages, "arXiv", "physics", "1.5")


def oracle_with_improvements(improvements):
    table = {f"d{i}": [0.5, 0, 0, 0.5 + imp, 0, 0] for i, imp in enumerate(improvements)}
    return OraclePredictor(table, PIDS)


def clean_text():
    return "Sentences of ordinary prose " * 20


# ---------------------------------------------------------------- CLS I


def test_text_stats_examples():
    s = text_stats("")
    assert (s.char_count, s.word_count, s.alpha_ratio, s.whitespace_ratio) == (0, 0, 0.0, 0.0)
    s = text_stats("ab cd")
    assert s.char_count == 5 and s.word_count == 2 and s.whitespace_ratio == pytest.approx(0.2)
    assert text_stats("a" * 100 + "\\" * 100).backslash_density == 0.5


@given(st.text(max_size=300))
def test_text_stats_ranges(t):
    s = text_stats(t)
    assert 0 <= s.alpha_ratio <= 1 and 0 <= s.whitespace_ratio <= 1 and 0 <= s.backslash_density <= 1
    assert s.char_count >= 0 and s.word_count >= 0 and s.replacement_char_count >= 0


def test_cls1_empty_is_invalid():
    assert not cls1_validity(text_stats(""))


def test_cls1_clean_pages_valid():
    docs = synth_corpus(300, SynthProfile(ocr_layer_fraction=0.0), seed=21)
    pages = [p for d in docs for p in d.groundtruth_pages]
    valid = sum(cls1_validity(text_stats(p)) for p in pages)
    assert valid / len(pages) >= 0.99


def test_cls1_scrambled_page_invalid():
    for d in synth_corpus(20, SynthProfile(ocr_layer_fraction=0.0), seed=4):
        page = d.groundtruth_pages[0]
        assert not cls1_validity(text_stats(perturb(page, PerturbationSpec("char_scramble", 0.8, 1))))


# ---------------------------------------------------------------- CLS II


def test_cls2_zero_weights_never_fire():
    feat = MetadataFeaturizer.fit([meta(), meta("legacy-ocr", 1995)])
    model = Cls2Model.zeros(feat)
    assert model.score(meta()) == 0.5
    assert not cls2_improvement(meta(), model)
    assert not cls2_improvement(meta("never-seen-tool"), model)


def test_cls2_constructed_weight():
    feat = MetadataFeaturizer.fit([meta(), meta("legacy-ocr", 1995)])
    model = Cls2Model.zeros(feat)
    model.set_weight("authoring_tool", "legacy-ocr", 10.0)
    assert cls2_improvement(meta("legacy-ocr"), model)
    assert not cls2_improvement(meta("Word"), model)


def test_cls2_unseen_value_maps_to_oov():
    feat = MetadataFeaturizer.fit([meta()])
    x = feat.transform(meta("brand-new"))
    assert x[feat.names.index("authoring_tool=<oov>")] == 1.0
    model = Cls2Model.zeros(feat)
    assert Cls2Model.from_dict(json.loads(json.dumps(model.to_dict()))).score(meta("x")) == 0.5


def test_cls2_learns_year_rule():
    from parseroute.training import train_cls2

    docs = synth_corpus(600, seed=8)
    metas = [d.metadata for d in docs]
    labels = [m.year < 2000 for m in metas]
    model = train_cls2(metas[:400], labels[:400])
    acc = np.mean([model.predict(m) == y for m, y in zip(metas[400:], labels[400:])])
    assert acc >= 0.9


# ---------------------------------------------------------------- encoder


def test_embedding_config_validation():
    with pytest.raises(ValueError):
        EmbeddingConfig(ngram_min=2, ngram_max=1)
    with pytest.raises(ValueError):
        EmbeddingConfig(ngram_max=6)
    with pytest.raises(ValueError):
        EmbeddingConfig(bucket_count=1000)
    with pytest.raises(ValueError):
        EmbeddingConfig(bucket_count=2048)


def test_embed_properties():
    table = np.random.default_rng(0).normal(size=(SMALL.bucket_count, SMALL.dim))
    assert np.all(embed("", SMALL, table) == 0)
    assert np.array_equal(embed("a b c", SMALL, table), embed("a b c", SMALL, table))
    uni = EmbeddingConfig(ngram_min=1, ngram_max=1, bucket_count=4096, dim=4)
    assert np.allclose(embed("red green blue red", uni, table), embed("blue red red green", uni, table))
    with pytest.raises(ValueError):
        embed("x", SMALL, table[:10])


def test_hash_is_stable():
    from parseroute.selector import hash64

    # blake2b-64, little endian; fixed so weight files stay portable
    assert hash64("w:the") == int.from_bytes(__import__("hashlib").blake2b(b"w:the", digest_size=8).digest(), "little")


def test_predict_accuracy_zero_model_is_clamped_bias():
    model = PredictorModel.zeros(SMALL, PIDS, bias=[1.4, 0.2, -0.3, 0.5, 0.0, 1.0])
    assert np.allclose(predict_accuracy(model, "any text"), [1.0, 0.2, 0.0, 0.5, 0.0, 1.0])


def test_predict_is_text_only_and_pure():
    model = PredictorModel.init(SMALL, PIDS, seed=3)
    a = model.predict(["x"], ["some words here"])
    b = model.predict(["y"], ["some words here"])
    assert np.array_equal(a, b)
    assert np.all((a >= 0) & (a <= 1))


def test_model_roundtrip(tmp_path):
    model = PredictorModel.init(SMALL, PIDS, seed=1)
    model.stage = 2
    path = model.save(tmp_path / "m.json")
    back = PredictorModel.load(path)
    assert back.stage == 2 and back.parser_ids == PIDS and back.config == SMALL
    assert np.array_equal(back.embedding, model.embedding) and np.array_equal(back.head_w, model.head_w)


def test_model_rejects_bad_files(tmp_path):
    d = PredictorModel.init(SMALL, PIDS).to_dict()
    d["version"] = 99
    with pytest.raises(ValueError):
        PredictorModel.from_dict(d)
    d = PredictorModel.init(SMALL, PIDS).to_dict()
    d["head_b"][0] = float("nan")
    with pytest.raises(ValueError):
        PredictorModel.from_dict(d)


# ---------------------------------------------------------------- routing


def test_route_ft_cases():
    feat = MetadataFeaturizer.fit([meta(), meta("legacy-ocr")])
    no = Cls2Model.zeros(feat)
    yes = Cls2Model.zeros(feat)
    yes.bias = 3.0
    d = route_ft("a", text_stats(""), meta(), no, "extract", "vit")
    assert d.chosen_parser == "vit" and d.stage == "cls1_invalid"
    d = route_ft("a", text_stats(clean_text()), meta(), no, "extract", "vit")
    assert d.chosen_parser == "extract" and d.stage == "cls2_accept"
    d = route_ft("a", text_stats(clean_text()), meta(), yes, "extract", "vit")
    assert d.chosen_parser == "vit"


def test_route_llm_hand_sorted_example():
    model = oracle_with_improvements([0.3, 0.2, -0.1, 0.4])
    batch = [(f"d{i}", clean_text()) for i in range(4)]
    out = route_llm(batch, model, 0.5, "extract", "vit")
    assert [d.chosen_parser for d in out] == ["vit", "extract", "extract", "vit"]


def test_route_llm_alpha_zero_and_negative():
    batch = [(f"d{i}", clean_text()) for i in range(4)]
    out = route_llm(batch, oracle_with_improvements([0.3, 0.2, 0.1, 0.4]), 0.0, "extract", "vit")
    assert all(d.chosen_parser == "extract" for d in out)
    out = route_llm(batch, oracle_with_improvements([-0.3, -0.2, -0.1, -0.4]), 1.0, "extract", "vit")
    assert all(d.chosen_parser == "extract" for d in out)


def test_route_llm_invalid_docs_take_slots_first():
    batch = [("d0", clean_text()), ("d1", ""), ("d2", clean_text()), ("d3", "")]
    out = route_llm(batch, oracle_with_improvements([0.9, 0.0, 0.8, 0.0]), 0.5, "extract", "vit")
    assert [d.chosen_parser for d in out] == ["extract", "vit", "extract", "vit"]
    assert out[1].stage == "cls1_invalid"


def test_route_llm_rejects_bad_alpha():
    with pytest.raises(ValueError):
        route_llm([("d0", "x")], oracle_with_improvements([0.1]), 1.5, "extract", "vit")


def test_routing_decision_stage_checked():
    with pytest.raises(ValueError):
        RoutingDecision("d", "vit", (), "cls9")


@given(st.lists(st.floats(-1, 1), min_size=1, max_size=40), st.floats(0, 1), st.randoms())
def test_route_llm_cap_and_order_invariance(imps, alpha, rnd):
    model = oracle_with_improvements(imps)
    batch = [(f"d{i}", clean_text()) for i in range(len(imps))]
    out = route_llm(batch, model, alpha, "extract", "vit")
    heavy = {d.doc_id for d in out if d.chosen_parser == "vit"}
    assert len(heavy) <= heavy_cap(alpha, len(imps)) == math.floor(alpha * len(imps) + 1e-9)
    shuffled = list(batch)
    rnd.shuffle(shuffled)
    again = route_llm(shuffled, model, alpha, "extract", "vit")
    assert {d.doc_id for d in again if d.chosen_parser == "vit"} == heavy


def test_route_llm_matches_brute_force_small():
    rng = np.random.default_rng(0)
    for _ in range(50):
        k = int(rng.integers(1, 9))
        alpha = float(rng.uniform())
        imps = rng.uniform(-0.5, 0.5, k)
        out = route_llm([(f"d{i}", clean_text()) for i in range(k)], oracle_with_improvements(imps), alpha,
                        "extract", "vit")
        got = sum(imps[i] for i, d in enumerate(out) if d.chosen_parser == "vit")
        cap = heavy_cap(alpha, k)
        best = max(sum(imps[i] for i in S) for r in range(cap + 1) for S in itertools.combinations(range(k), r))
        assert got == pytest.approx(best, abs=1e-12)
