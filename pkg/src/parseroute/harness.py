"""Experiment regimes, comparison tables and difficulty ranking.

Every parser is run on every document once; each table row is then a
per-document distribution over parsers (a single parser, the capped adaptive
plan, uniform random choice, or the per-document best), so all rows are
computed from the same score matrix.
"""

from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .corpus import PAGE_BREAK, DocumentRecord, PerturbationSpec, perturb_pages, synth_corpus
from .metrics import (
    DEFAULT_CONFIG,
    NEITHER,
    InsufficientDataError,
    MetricConfig,
    PreferenceRecord,
    QualityScores,
    accepted_tokens,
    bleu,
    quality_scores,
    win_rate,
)
from .parsers import (
    DEFAULT_PARSER,
    HEAVY_PARSER,
    ParserProfile,
    parse_matrix,
    perfect_mock,
    reference_parsers,
    stable_seed,
)
from .scheduler import DEFAULT_BATCH_SIZE, plan_batch, run_campaign
from .selector import Cls1Thresholds, Cls2Model, OraclePredictor, Predictor, route_ft, route_llm, text_stats
from .training import PreferencePair, RegressionExample, TrainConfig, pairs_from_records, train_cls2, train_pipeline

logger = logging.getLogger(__name__)

REGIMES = ("unmodified", "image", "text_layer")
COLUMNS = ("Coverage", "BLEU", "ROUGE", "CAR", "WR", "AT")


@dataclass(frozen=True)
class ExperimentSpec:
    corpus_seed: int = 0
    n_docs: int = 300
    perturbation_plan: tuple[tuple[PerturbationSpec, float], ...] = ()
    # (fraction of documents, severity) whose page images are degraded
    image_plan: tuple[float, float] | None = None
    strategies: tuple[str, ...] = ()
    alpha: float = 0.05
    batch_size: int = DEFAULT_BATCH_SIZE
    name: str = "unmodified"

    def __post_init__(self) -> None:
        for _, frac in self.perturbation_plan:
            if not 0.0 <= frac <= 1.0:
                raise ValueError("subset fractions must lie in [0, 1]")
        if self.image_plan and not 0.0 <= self.image_plan[0] <= 1.0:
            raise ValueError("image subset fraction must lie in [0, 1]")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must be in [0, 1]")


def regime(name: str, corpus_seed: int = 0, n_docs: int = 300, alpha: float = 0.05, fraction: float = 0.15,
           batch_size: int = DEFAULT_BATCH_SIZE) -> ExperimentSpec:
    """The three evaluation regimes: unmodified, degraded page images, degraded text layers."""
    if name == "unmodified":
        return ExperimentSpec(corpus_seed, n_docs, alpha=alpha, batch_size=batch_size, name=name)
    if name == "image":
        return ExperimentSpec(corpus_seed, n_docs, image_plan=(fraction, 1.0), alpha=alpha,
                              batch_size=batch_size, name=name)
    if name == "text_layer":
        plan = ((PerturbationSpec("char_scramble", 0.3, corpus_seed), fraction),)
        return ExperimentSpec(corpus_seed, n_docs, perturbation_plan=plan, alpha=alpha,
                              batch_size=batch_size, name=name)
    raise ValueError(f"unknown regime {name!r}; expected one of {REGIMES}")


def _subset(n: int, fraction: float, seed: int, salt: int) -> set[int]:
    rng = np.random.default_rng([seed, salt])
    return set(rng.choice(n, size=round(fraction * n), replace=False).tolist())


def build_corpus(spec: ExperimentSpec) -> list[DocumentRecord]:
    """Synthetic corpus with the configured perturbations applied to uniform random subsets.

    Only the text layer (or the image-degradation level) changes; groundtruth
    is never touched.
    """
    docs = synth_corpus(spec.n_docs, seed=spec.corpus_seed)
    for salt, (pspec, frac) in enumerate(spec.perturbation_plan):
        for i in sorted(_subset(len(docs), frac, spec.corpus_seed, salt)):
            d = docs[i]
            layer = perturb_pages(d.pages, replace(pspec, seed=stable_seed(pspec.seed, d.doc_id) & (2**63 - 1)))
            docs[i] = replace(d, pages=tuple(layer))
    if spec.image_plan:
        frac, severity = spec.image_plan
        for i in sorted(_subset(len(docs), frac, spec.corpus_seed, 1000)):
            docs[i] = replace(docs[i], image_degradation=severity)
    return docs


# ---------------------------------------------------------------- score matrix


@dataclass
class ScoreMatrix:
    docs: list[DocumentRecord]
    parser_ids: tuple[str, ...]
    scores: dict[str, dict[str, QualityScores]]
    first_pages: dict[str, str]
    metric_cfg: MetricConfig = DEFAULT_CONFIG

    def bleu_vector(self, doc_id: str) -> list[float]:
        return [self.scores[doc_id][p].bleu for p in self.parser_ids]

    def oracle(self) -> OraclePredictor:
        return OraclePredictor({d.doc_id: self.bleu_vector(d.doc_id) for d in self.docs}, self.parser_ids)


def score_matrix(docs: Sequence[DocumentRecord], parsers: Sequence[ParserProfile],
                 metric_cfg: MetricConfig = DEFAULT_CONFIG, default_parser: str = DEFAULT_PARSER) -> ScoreMatrix:
    results = parse_matrix(parsers, docs)
    scores = {
        d.doc_id: {pid: quality_scores(r.pages, d.groundtruth, len(d.pages), metric_cfg)
                   for pid, r in results[d.doc_id].items()}
        for d in docs
    }
    first = {d.doc_id: (results[d.doc_id][default_parser].pages or ("",))[0] for d in docs}
    return ScoreMatrix(list(docs), tuple(p.parser_id for p in parsers), scores, first, metric_cfg)


# ---------------------------------------------------------------- rows


@dataclass
class Row:
    name: str
    coverage: float
    bleu: float
    rouge: float
    car: float
    at: float
    wr: float | None = None
    heavy_fraction: float | None = None

    def cells(self) -> list[str]:
        pct = lambda v: f"{100 * v:.1f}"
        return [pct(self.coverage), pct(self.bleu), pct(self.rouge), pct(self.car),
                "--" if self.wr is None else pct(self.wr), pct(self.at)]


@dataclass
class ComparisonTable:
    regime: str
    rows: list[Row] = field(default_factory=list)

    def row(self, name: str) -> Row:
        return next(r for r in self.rows if r.name == name)

    def render(self) -> str:
        header = ["Parser", *COLUMNS]
        body = [[r.name, *r.cells()] for r in self.rows]
        widths = [max(len(x[i]) for x in [header, *body]) for i in range(len(header))]
        fmt = lambda cells: "  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(cells, widths)))
        return "\n".join([f"[{self.regime}]", fmt(header), *(fmt(b) for b in body)])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["regime", "parser", "coverage", "bleu", "rouge", "car", "wr", "at"])
        for r in self.rows:
            w.writerow([self.regime, r.name, r.coverage, r.bleu, r.rouge, r.car, "" if r.wr is None else r.wr, r.at])
        return buf.getvalue()


def aggregate(matrix: ScoreMatrix, choice: Mapping[str, Mapping[str, float]], name: str,
              wr: float | None = None, heavy: str | None = None) -> Row:
    """Mean metrics when document ``d`` goes to parser ``p`` with probability ``choice[d][p]``."""
    n = len(matrix.docs)
    cov = bl = ro = ca = 0.0
    at_pass = at_total = 0.0
    heavy_mass = 0.0
    for d in matrix.docs:
        dist = choice[d.doc_id]
        for pid, w in dist.items():
            s = matrix.scores[d.doc_id][pid]
            cov += w * s.coverage
            bl += w * s.bleu
            ro += w * s.rouge
            ca += w * s.car
            at_pass += w * d.token_count * s.accepted
            if pid == heavy:
                heavy_mass += w
        at_total += d.token_count
    return Row(name, cov / n, bl / n, ro / n, ca / n, at_pass / at_total if at_total else 0.0, wr,
               heavy_mass / n if heavy else None)


def adaptive_choice(matrix: ScoreMatrix, predictor: Predictor, alpha: float, batch_size: int,
                    default_parser: str = DEFAULT_PARSER, heavy_parser: str = HEAVY_PARSER,
                    thresholds: Cls1Thresholds | None = Cls1Thresholds()) -> dict[str, dict[str, float]]:
    out = {}
    docs = matrix.docs
    for b in range(0, len(docs), batch_size):
        batch = docs[b:b + batch_size]
        decisions = route_llm([(d.doc_id, matrix.first_pages[d.doc_id]) for d in batch], predictor, alpha,
                              default_parser, heavy_parser, thresholds)
        plan = plan_batch(decisions, alpha, default_parser=default_parser, heavy_parser=heavy_parser, batch_id=b)
        out.update({doc_id: {pid: 1.0} for doc_id, pid in plan.assignments})
    return out


def ft_choice(matrix: ScoreMatrix, cls2: Cls2Model | None, alpha: float, batch_size: int,
              default_parser: str = DEFAULT_PARSER, heavy_parser: str = HEAVY_PARSER,
              thresholds: Cls1Thresholds = Cls1Thresholds()) -> dict[str, dict[str, float]]:
    out = {}
    docs = matrix.docs
    for b in range(0, len(docs), batch_size):
        batch = docs[b:b + batch_size]
        decisions = [route_ft(d.doc_id, text_stats(matrix.first_pages[d.doc_id]), d.metadata, cls2,
                              default_parser, heavy_parser, thresholds) for d in batch]
        plan = plan_batch(decisions, alpha, default_parser=default_parser, heavy_parser=heavy_parser, batch_id=b)
        out.update({doc_id: {pid: 1.0} for doc_id, pid in plan.assignments})
    return out


def run_regime(
    spec: ExperimentSpec,
    parsers: Sequence[ParserProfile] | None = None,
    predictor: Predictor | None = None,
    cls2: Cls2Model | None = None,
    preferences: Sequence[PreferenceRecord] = (),
    metric_cfg: MetricConfig = DEFAULT_CONFIG,
    matrix: ScoreMatrix | None = None,
) -> tuple[ComparisonTable, ScoreMatrix]:
    """One comparison table: single parsers, adaptive (oracle/trained), FT, random, BLEU-max."""
    parsers = list(parsers or reference_parsers())
    if matrix is None:
        matrix = score_matrix(build_corpus(spec), parsers, metric_cfg)
    pids = matrix.parser_ids
    table = ComparisonTable(spec.name)

    def wr_of(pid: str) -> float | None:
        if not preferences:
            return None
        try:
            return win_rate(preferences, pid)
        except InsufficientDataError:
            return None

    for pid in pids:
        table.rows.append(aggregate(matrix, {d.doc_id: {pid: 1.0} for d in matrix.docs}, pid, wr_of(pid)))
    kw = dict(heavy=HEAVY_PARSER)
    table.rows.append(aggregate(matrix, adaptive_choice(matrix, matrix.oracle(), spec.alpha, spec.batch_size),
                                "adaptive_oracle", **kw))
    if predictor is not None:
        table.rows.append(aggregate(matrix, adaptive_choice(matrix, predictor, spec.alpha, spec.batch_size),
                                    "adaptive_trained", **kw))
    table.rows.append(aggregate(matrix, ft_choice(matrix, cls2, spec.alpha, spec.batch_size), "adaptive_ft", **kw))
    uniform = {p: 1.0 / len(pids) for p in pids}
    table.rows.append(aggregate(matrix, {d.doc_id: uniform for d in matrix.docs}, "random"))
    best = {}
    for d in matrix.docs:
        v = matrix.bleu_vector(d.doc_id)
        best[d.doc_id] = {pids[int(np.argmax(v))]: 1.0}
    table.rows.append(aggregate(matrix, best, "bleu_max"))
    return table, matrix


# ---------------------------------------------------------------- difficulty


def difficulty_rank(bleu_table: Mapping[str, Mapping[str, float]], parser_ids: Sequence[str] | None = None):
    """Documents ordered hardest first: ascending mean BLEU over parsers, ties by doc_id.

    Returns ``[(rank, doc_id, mean_bleu, {parser: bleu})]`` with rank starting at 1.
    """
    if not bleu_table:
        return []
    parser_ids = list(parser_ids or sorted(next(iter(bleu_table.values()))))
    rows = []
    for doc_id, row in bleu_table.items():
        missing = [p for p in parser_ids if p not in row]
        if missing:
            raise ValueError(f"document {doc_id} has no parse from {missing}")
        rows.append((float(np.mean([row[p] for p in parser_ids])), doc_id, {p: row[p] for p in parser_ids}))
    rows.sort(key=lambda r: (r[0], r[1]))
    return [(i + 1, doc_id, mean, per) for i, (mean, doc_id, per) in enumerate(rows)]


def write_difficulty_csv(ranked, path: str | Path | None = None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    parsers = list(ranked[0][3]) if ranked else []
    w.writerow(["rank", "doc_id", "mean_bleu", *parsers])
    for rank, doc_id, mean, per in ranked:
        w.writerow([rank, doc_id, f"{mean:.6f}", *(f"{per[p]:.6f}" for p in parsers)])
    text = buf.getvalue()
    if path:
        Path(path).write_text(text, encoding="utf-8")
    return text


# ---------------------------------------------------------------- training data


def training_data(docs: Sequence[DocumentRecord], parsers: Sequence[ParserProfile],
                  default_parser: str = DEFAULT_PARSER, metric_cfg: MetricConfig = DEFAULT_CONFIG):
    """Page-level and document-level regression examples from the default parser's text.

    Page targets: per-parser BLEU of page i against groundtruth page i, input
    the default parser's page i. Document targets: per-parser document BLEU,
    input the default parser's first page.
    """
    results = parse_matrix(parsers, docs)
    pids = [p.parser_id for p in parsers]
    pages, documents = [], []
    for d in docs:
        row = results[d.doc_id]
        truth = d.groundtruth_pages
        base = row[default_parser].pages
        for i, ref in enumerate(truth):
            if i < len(base):
                tgt = []
                for p in pids:
                    out = row[p].pages
                    tgt.append(bleu(out[i], ref, metric_cfg) if i < len(out) else 0.0)
                pages.append(RegressionExample(base[i], tuple(tgt)))
        documents.append(RegressionExample(base[0] if base else "",
                                           tuple(bleu(PAGE_BREAK.join(row[p].pages), d.groundtruth, metric_cfg)
                                                 for p in pids)))
    return pages, documents, results


def simulate_preferences(docs: Sequence[DocumentRecord], results, parser_ids: Sequence[str], n_pages: int,
                         annotators: int = 2, noise: float = 0.08, indifference: float = 0.03, seed: int = 0,
                         metric_cfg: MetricConfig = DEFAULT_CONFIG):
    """Simulated side-by-side judgements of first pages.

    Each annotator prefers the page with the higher BLEU after adding Gaussian
    noise, and says NEITHER when the noisy gap is below ``indifference``.
    Returns (records, texts) where texts maps (page_id, parser_id) to the page.
    """
    rng = np.random.default_rng(seed)
    records: list[PreferenceRecord] = []
    texts: dict[tuple[str, str], str] = {}
    order = rng.permutation(len(docs))[:n_pages]
    for i in order:
        d = docs[int(i)]
        a, b = rng.choice(len(parser_ids), size=2, replace=False)
        pa, pb = parser_ids[int(a)], parser_ids[int(b)]
        page_id = f"{d.doc_id}/p1"
        ta = (results[d.doc_id][pa].pages or ("",))[0]
        tb = (results[d.doc_id][pb].pages or ("",))[0]
        texts[(page_id, pa)], texts[(page_id, pb)] = ta, tb
        ref = d.groundtruth_pages[0]
        qa, qb = bleu(ta, ref, metric_cfg), bleu(tb, ref, metric_cfg)
        for k in range(annotators):
            gap = qa - qb + rng.normal(0.0, noise)
            if abs(gap) < indifference:
                records.append(PreferenceRecord(page_id, NEITHER, pa, f"a{k}", (pa, pb)))
            elif gap > 0:
                records.append(PreferenceRecord(page_id, pa, pb, f"a{k}"))
            else:
                records.append(PreferenceRecord(page_id, pb, pa, f"a{k}"))
    return records, texts


@dataclass
class TrainedSelector:
    stage1: object
    stage2: object
    stage3: object
    cls2: Cls2Model
    records: list[PreferenceRecord]


def train_selector(train_docs: Sequence[DocumentRecord], parsers: Sequence[ParserProfile] | None = None,
                   cfg: TrainConfig = TrainConfig(), seed: int = 0, n_pref_pages: int = 200,
                   cls2_margin: float = 0.05, embedding=None) -> TrainedSelector:
    """Train the whole cascade on a synthetic training corpus."""
    from .selector import EmbeddingConfig, PredictorModel

    parsers = list(parsers or reference_parsers())
    pids = [p.parser_id for p in parsers]
    pages, documents, results = training_data(train_docs, parsers)
    records, texts = simulate_preferences(train_docs, results, pids, n_pref_pages, seed=seed)
    pairs = pairs_from_records(records, texts)
    model = PredictorModel.init(embedding or EmbeddingConfig(), pids, seed=seed)
    s1, s2, s3 = train_pipeline(model, pages, pairs, documents, cfg)
    h, dflt = pids.index(HEAVY_PARSER), pids.index(DEFAULT_PARSER)
    labels = [ex.target[h] > ex.target[dflt] + cls2_margin for ex in documents]
    cls2 = train_cls2([d.metadata for d in train_docs], labels)
    return TrainedSelector(s1, s2, s3, cls2, records)


# ---------------------------------------------------------------- throughput


def bench_throughput(worker_counts: Sequence[int], n_docs: int = 64, seconds_per_doc: float = 0.02,
                     cost_mode: str = "spin", backend: str = "process", seed: int = 0) -> list[dict]:
    """Campaign throughput of one CPU-bound mock parser for each worker count."""
    docs = synth_corpus(n_docs, seed=seed)
    mean_pages = float(np.mean([len(d.pages) for d in docs]))
    mock = perfect_mock("bench", avg_cost_seconds=seconds_per_doc, cost_mode=cost_mode)
    rows = []
    base = None
    for w in worker_counts:
        report = run_campaign(docs, [mock], "single:bench", 0.0, w, backend=backend)
        base = base or report.throughput / w
        rows.append({"workers": w, "seconds": report.wall_seconds, "throughput": report.throughput,
                     "efficiency": report.throughput / (w * base), "mean_pages": mean_pages})
    return rows


def write_bench_csv(rows: Sequence[dict], path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=["workers", "seconds", "throughput", "efficiency"], extrasaction="ignore",
                           lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return path
