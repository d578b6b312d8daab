"""Budget arithmetic, batch planning and the parallel campaign runner."""

from __future__ import annotations

import json
import logging
import math
import queue
import threading
import time
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .corpus import Corpus, DocumentRecord
from .metrics import MetricConfig, accepted_tokens
from .parsers import HEAVY_PARSER, ParseResult, ParserProfile, cheapest
from .pool import PoolResult, WorkerPool
from .selector import (
    Cls1Thresholds,
    Cls2Model,
    OraclePredictor,
    Predictor,
    RoutingDecision,
    heavy_cap,
    route_ft,
    route_llm,
    select_heavy,
    text_stats,
)

logger = logging.getLogger(__name__)

STRATEGIES = ("adaparse_ft", "adaparse_llm")
DEFAULT_BATCH_SIZE = 256


def compute_alpha(budget_total: float, n: int, cheap: ParserProfile | float, heavy: ParserProfile | float) -> float:
    """Largest heavy fraction whose average-cost total stays within ``budget_total``."""
    c = cheap.avg_cost_seconds if isinstance(cheap, ParserProfile) else float(cheap)
    h = heavy.avg_cost_seconds if isinstance(heavy, ParserProfile) else float(heavy)
    if c <= 0 or h <= c:
        raise ValueError(f"need heavy cost > cheap cost > 0, got cheap={c}, heavy={h}")
    if n < 1:
        raise ValueError("n must be >= 1")
    if budget_total <= n * c:
        return 0.0
    if budget_total >= n * h:
        return 1.0
    return (budget_total - n * c) / (n * (h - c))


@dataclass(frozen=True)
class Budget:
    total_seconds: float
    n_docs: int
    alpha: float

    def __post_init__(self) -> None:
        if self.total_seconds <= 0:
            raise ValueError("total_seconds must be positive")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must be in [0, 1]")

    @classmethod
    def from_costs(cls, total_seconds: float, n_docs: int, cheap, heavy) -> "Budget":
        return cls(total_seconds, n_docs, compute_alpha(total_seconds, n_docs, cheap, heavy))


@dataclass(frozen=True)
class NodePartition:
    node_id: int
    doc_ids: tuple[str, ...]
    budget_seconds: float


def partition(docs: Sequence, L: int, budget: Budget) -> list[NodePartition]:
    """Contiguous near-equal split; the first ``n % L`` nodes get one extra document."""
    ids = [d.doc_id if isinstance(d, DocumentRecord) else str(d) for d in docs]
    n = len(ids)
    if L < 1:
        raise ValueError("L must be >= 1")
    if L > n:
        raise ValueError(f"cannot split {n} documents over {L} nodes")
    base, extra = divmod(n, L)
    out, start = [], 0
    for node in range(L):
        size = base + (node < extra)
        out.append(NodePartition(node, tuple(ids[start:start + size]), budget.total_seconds * size / n))
        start += size
    return out


# ---------------------------------------------------------------- planning


@dataclass(frozen=True)
class BatchPlan:
    batch_id: int
    assignments: tuple[tuple[str, str], ...]
    heavy_count: int
    cap: int
    heavy_parser: str
    decisions: tuple[RoutingDecision, ...] = ()

    def __post_init__(self) -> None:
        if self.heavy_count > self.cap:
            raise AssertionError(f"batch {self.batch_id}: {self.heavy_count} heavy > cap {self.cap}")

    def expected_accuracy(self, parser_ids: Sequence[str]) -> float:
        """Sum of predicted accuracies of the chosen parsers (decisions with predictions only)."""
        total = 0.0
        for d in self.decisions:
            if d.predicted_accuracy:
                total += d.predicted_accuracy[list(parser_ids).index(d.chosen_parser)]
        return total


def plan_batch(
    batch: Sequence[RoutingDecision] | Sequence[tuple[str, Sequence[float]]],
    alpha: float,
    *,
    parser_ids: Sequence[str] | None = None,
    default_parser: str | None = None,
    heavy_parser: str = HEAVY_PARSER,
    batch_id: int = 0,
) -> BatchPlan:
    """Assign each document of one batch to the default or the heavy parser.

    ``batch`` is either routing decisions (from ``route_ft`` or ``route_llm``)
    or ``(doc_id, predicted accuracy vector)`` pairs, in which case the
    ranking is done here with ``parser_ids`` naming the vector entries.
    Decisions that route more documents to the heavy parser than the cap
    allows are trimmed: invalid extractions keep priority, then higher score.
    """
    if not batch:
        raise ValueError("empty batch")
    k = len(batch)
    cap = heavy_cap(alpha, k)
    if isinstance(batch[0], RoutingDecision):
        decisions = list(batch)
        if default_parser is None:
            default_parser = next((d.chosen_parser for d in decisions if d.chosen_parser != heavy_parser), "")
        want = [i for i, d in enumerate(decisions) if d.chosen_parser == heavy_parser]
        want.sort(key=lambda i: (decisions[i].stage != "cls1_invalid", -decisions[i].score, decisions[i].doc_id))
        for i in want[cap:]:
            d = decisions[i]
            decisions[i] = RoutingDecision(d.doc_id, default_parser, d.predicted_accuracy, d.stage, d.score)
    else:
        if parser_ids is None or default_parser is None:
            raise ValueError("prediction input needs parser_ids and default_parser")
        table = {doc_id: list(pred) for doc_id, pred in batch}
        if len(table) != k:
            raise ValueError("duplicate doc_id in batch")
        oracle = OraclePredictor(table, tuple(parser_ids))
        decisions = route_llm([(doc_id, "") for doc_id, _ in batch], oracle, alpha, default_parser, heavy_parser,
                              thresholds=None)
    heavy = sum(d.chosen_parser == heavy_parser for d in decisions)
    return BatchPlan(batch_id, tuple((d.doc_id, d.chosen_parser) for d in decisions), heavy, cap, heavy_parser,
                     tuple(decisions))


def global_plan_value(ids: Sequence[str], invalid: Sequence[bool], preds: Sequence[Sequence[float] | None],
                      d_idx: int, h_idx: int, alpha: float) -> float:
    """Expected accuracy of planning the whole corpus as one batch (valid documents only)."""
    improvement = [0.0 if p is None else p[h_idx] - p[d_idx] for p in preds]
    heavy = select_heavy(ids, invalid, improvement, heavy_cap(alpha, len(ids)))
    return sum(p[h_idx] if i in heavy else p[d_idx] for i, p in enumerate(preds) if p is not None)


# ---------------------------------------------------------------- campaign


@dataclass
class CampaignReport:
    strategy: str
    alpha: float
    batch_size: int
    n_docs: int
    wall_seconds: float
    throughput: float
    parser_counts: dict[str, int]
    status_counts: dict[str, int]
    heavy_parser: str | None
    heavy_fraction: float
    batch_heavy_counts: list[int]
    batch_caps: list[int]
    probe_seconds: float
    parse_seconds: dict[str, float]
    realized_cost_seconds: float
    budget_seconds: float | None = None
    expected_accuracy_batched: float | None = None
    expected_accuracy_global: float | None = None
    optimality_gap: float | None = None
    mean_scores: dict[str, float] = field(default_factory=dict)
    accepted_tokens: float | None = None
    pool_stats: dict[str, dict] = field(default_factory=dict)
    manifest_path: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def table(self) -> str:
        rows = [
            ("strategy", self.strategy), ("documents", self.n_docs), ("alpha", f"{self.alpha:.4f}"),
            ("wall seconds", f"{self.wall_seconds:.3f}"), ("throughput (docs/s)", f"{self.throughput:.2f}"),
            ("heavy fraction", f"{self.heavy_fraction:.4f}"), ("probe seconds", f"{self.probe_seconds:.3f}"),
            ("realized cost (s)", f"{self.realized_cost_seconds:.3f}"),
        ]
        if self.budget_seconds is not None:
            rows.append(("budget (s)", f"{self.budget_seconds:.3f}"))
        if self.optimality_gap is not None:
            rows.append(("per-batch vs global gap", f"{self.optimality_gap:.6f}"))
        for pid, n in sorted(self.parser_counts.items()):
            rows.append((f"docs -> {pid}", n))
        for name, v in self.mean_scores.items():
            rows.append((f"mean {name}", f"{v:.4f}"))
        w = max(len(r[0]) for r in rows)
        return "\n".join(f"{a:<{w}}  {b}" for a, b in rows)


class _ManifestWriter:
    """Single writer that emits records in corpus order via a reorder buffer."""

    def __init__(self, order: Sequence[str], manifest: Path | None, texts: Path | None):
        self.pos = {d: i for i, d in enumerate(order)}
        self.order = list(order)
        self.buffer: dict[int, tuple[dict, dict | None]] = {}
        self.next = 0
        self.seen: set[str] = set()
        self.records: list[dict] = []
        self._fh = manifest.open("w", encoding="utf-8") if manifest else None
        self._th = texts.open("w", encoding="utf-8") if texts else None

    def add(self, record: dict, text_record: dict | None) -> None:
        doc_id = record["doc_id"]
        if doc_id in self.seen:
            raise RuntimeError(f"duplicate result for {doc_id}")
        self.seen.add(doc_id)
        self.buffer[self.pos[doc_id]] = (record, text_record)
        while self.next in self.buffer:
            rec, txt = self.buffer.pop(self.next)
            self.records.append(rec)
            if self._fh:
                self._fh.write(json.dumps(rec, sort_keys=True) + "\n")
                self._fh.flush()
            if self._th and txt is not None:
                self._th.write(json.dumps(txt, sort_keys=True, ensure_ascii=False) + "\n")
                self._th.flush()
            self.next += 1

    def close(self) -> None:
        for fh in (self._fh, self._th):
            if fh:
                fh.close()


def _record(res: PoolResult, stage: str, reproducible: bool) -> tuple[dict, dict]:
    r: ParseResult = res.result
    rec = {
        "doc_id": r.doc_id, "parser_id": r.parser_id, "stage": stage, "status": r.status,
        "wall_seconds": 0.0 if reproducible else round(r.wall_seconds, 6), "pages_emitted": r.pages_emitted,
    }
    if res.scores is not None:
        rec.update(bleu=res.scores.bleu, rouge=res.scores.rouge, car=res.scores.car, coverage=res.scores.coverage)
    return rec, {"doc_id": r.doc_id, "parser_id": r.parser_id, "pages": list(r.pages)}


def _parse_strategy(strategy: str, parsers: Mapping[str, ParserProfile]) -> tuple[str, str | None]:
    if strategy.startswith("single:"):
        pid = strategy.split(":", 1)[1]
        if pid not in parsers:
            raise ValueError(f"unknown parser {pid!r} in strategy {strategy!r}")
        return "single", pid
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; expected single:<parser_id>, {', '.join(STRATEGIES)}")
    return strategy, None


def run_campaign(
    corpus: Corpus | Sequence[DocumentRecord],
    parsers: Sequence[ParserProfile],
    strategy: str,
    alpha: float,
    workers: int | Mapping[str, int] = 1,
    *,
    batch_size: int = DEFAULT_BATCH_SIZE,
    out_dir: str | Path | None = None,
    predictor: Predictor | None = None,
    cls2: Cls2Model | None = None,
    thresholds: Cls1Thresholds = Cls1Thresholds(),
    default_parser: str | None = None,
    heavy_parser: str = HEAVY_PARSER,
    metric_cfg: MetricConfig | None = None,
    backend: str = "process",
    queue_capacity: int | None = None,
    reproducible: bool = False,
    budget_seconds: float | None = None,
) -> CampaignReport:
    """Parse every document exactly once under the chosen strategy.

    Adaptive strategies probe each document's first page with the default
    parser, route one batch of ``batch_size`` documents at a time under the
    ``floor(alpha * k)`` heavy cap, and prefetch the next batch's probes while
    the current batch parses. Results go to ``out_dir/manifest.jsonl`` (and
    ``texts.jsonl``) in corpus order through a single writer.
    """
    docs = list(corpus.docs if isinstance(corpus, Corpus) else corpus)
    if not docs:
        raise ValueError("empty corpus")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    heavy_cap(alpha, 1)  # validates alpha
    by_id = {p.parser_id: p for p in parsers}
    mode, single = _parse_strategy(strategy, by_id)
    default_parser = default_parser or cheapest(parsers).parser_id
    if mode != "single":
        for pid in (default_parser, heavy_parser):
            if pid not in by_id:
                raise ValueError(f"strategy {strategy} needs parser {pid!r}")
        if mode == "adaparse_llm" and predictor is None:
            raise ValueError("adaparse_llm needs a predictor")

    def count(key: str) -> int:
        if isinstance(workers, int):
            return workers
        return workers.get(key, workers.get("default", 1))

    out = Path(out_dir) if out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    writer = _ManifestWriter([d.doc_id for d in docs], out / "manifest.jsonl" if out else None,
                             out / "texts.jsonl" if out else None)

    needed = [single] if mode == "single" else sorted({default_parser, heavy_parser})
    pools = {pid: WorkerPool(by_id[pid], count(pid), queue_capacity, backend, metric_cfg) for pid in needed}
    probe_pool = None
    if mode != "single":
        probe_pool = WorkerPool(by_id[default_parser], count("probe"), queue_capacity, backend)

    stage_of: dict[str, str] = {}
    submitted = Counter()
    done_submitting = threading.Event()
    results: queue.Queue = queue.Queue()
    errors: list[BaseException] = []

    def collect(pid: str, pool: WorkerPool) -> None:
        got = 0
        try:
            while not (done_submitting.is_set() and got >= submitted[pid]):
                try:
                    res = pool.get(timeout=0.05)
                except queue.Empty:
                    continue
                got += 1
                results.put(res)
        except BaseException as exc:
            errors.append(exc)
        finally:
            results.put(None)

    # probes: one thread walks the batches; a one-slot queue gives a prefetch depth of one batch
    batches = [docs[i:i + batch_size] for i in range(0, len(docs), batch_size)]
    probe_q: queue.Queue = queue.Queue(maxsize=1)
    probe_seconds = [0.0]
    stop = threading.Event()

    def probe() -> None:
        try:
            for b, batch in enumerate(batches):
                texts = {}
                for res in probe_pool.map(batch, mode="first_page"):
                    texts[res.doc_id] = res.first_page or ""
                    probe_seconds[0] += res.seconds
                while not stop.is_set():
                    try:
                        probe_q.put((b, texts), timeout=0.1)
                        break
                    except queue.Full:
                        continue
        except BaseException as exc:
            errors.append(exc)
            probe_q.put(None)

    start = time.perf_counter()
    collectors = [threading.Thread(target=collect, args=(pid, p), daemon=True) for pid, p in pools.items()]
    for t in collectors:
        t.start()
    prober = threading.Thread(target=probe, daemon=True) if probe_pool else None
    if prober:
        prober.start()

    batch_heavy, batch_caps = [], []
    planned: list[tuple[str, bool, list[float] | None]] = []
    batched_value = 0.0

    def drain_ready() -> int:
        finished = 0
        while True:
            try:
                res = results.get_nowait()
            except queue.Empty:
                return finished
            if res is None:
                finished += 1
                continue
            writer.add(*_record(res, stage_of[res.doc_id], reproducible))

    ended = 0
    try:
        for b, batch in enumerate(batches):
            if errors:
                raise errors[0]
            if mode == "single":
                plan = BatchPlan(b, tuple((d.doc_id, single) for d in batch),
                                 0, heavy_cap(alpha, len(batch)), heavy_parser)
                for d in batch:
                    stage_of[d.doc_id] = "single"
            else:
                item = probe_q.get()
                if item is None:
                    raise errors[0]
                _, texts = item
                if mode == "adaparse_llm":
                    decisions = route_llm([(d.doc_id, texts[d.doc_id]) for d in batch], predictor, alpha,
                                          default_parser, heavy_parser, thresholds)
                else:
                    decisions = [route_ft(d.doc_id, text_stats(texts[d.doc_id]), d.metadata, cls2,
                                          default_parser, heavy_parser, thresholds) for d in batch]
                plan = plan_batch(decisions, alpha, default_parser=default_parser, heavy_parser=heavy_parser,
                                  batch_id=b)
                for dec in plan.decisions:
                    stage_of[dec.doc_id] = dec.stage
                if mode == "adaparse_llm":
                    pids = list(predictor.parser_ids)
                    batched_value += plan.expected_accuracy(pids)
                    planned.extend((dec.doc_id, dec.stage == "cls1_invalid",
                                    list(dec.predicted_accuracy) or None) for dec in plan.decisions)
            batch_heavy.append(plan.heavy_count)
            batch_caps.append(plan.cap)
            doc_of = {d.doc_id: d for d in batch}
            for doc_id, pid in plan.assignments:
                submitted[pid] += 1
                pools[pid].submit(doc_of[doc_id])
                ended += drain_ready()
        done_submitting.set()
        while ended < len(collectors):
            res = results.get()
            if res is None:
                ended += 1
                continue
            writer.add(*_record(res, stage_of[res.doc_id], reproducible))
        if errors:
            raise errors[0]
    finally:
        done_submitting.set()
        stop.set()
        writer.close()
        for p in pools.values():
            p.close(wait=not errors)
        if probe_pool:
            probe_pool.close(wait=not errors)
    wall = time.perf_counter() - start

    if len(writer.records) != len(docs):
        raise RuntimeError(f"manifest has {len(writer.records)} records for {len(docs)} documents")

    records = writer.records
    parser_counts = Counter(r["parser_id"] for r in records)
    status_counts = Counter(r["status"] for r in records)
    parse_seconds: dict[str, float] = {}
    for r in records:
        parse_seconds[r["parser_id"]] = parse_seconds.get(r["parser_id"], 0.0) + r["wall_seconds"]
    heavy_n = parser_counts.get(heavy_parser, 0) if mode != "single" else 0
    realized = sum(parse_seconds.values()) + (0.0 if reproducible else probe_seconds[0])

    report = CampaignReport(
        strategy=strategy, alpha=alpha, batch_size=batch_size, n_docs=len(docs),
        wall_seconds=0.0 if reproducible else wall, throughput=0.0 if reproducible else len(docs) / wall,
        parser_counts=dict(sorted(parser_counts.items())), status_counts=dict(sorted(status_counts.items())),
        heavy_parser=heavy_parser if mode != "single" else None, heavy_fraction=heavy_n / len(docs),
        batch_heavy_counts=batch_heavy, batch_caps=batch_caps,
        probe_seconds=0.0 if reproducible else probe_seconds[0], parse_seconds=parse_seconds,
        realized_cost_seconds=realized, budget_seconds=budget_seconds,
        # pool counters depend on thread timing, so reproducible reports leave them out
        pool_stats={} if reproducible else {pid: asdict(p.stats) for pid, p in pools.items()},
        manifest_path=("manifest.jsonl" if reproducible else str(out / "manifest.jsonl")) if out else None,
    )
    if mode == "adaparse_llm" and planned:
        pids = list(predictor.parser_ids)
        ids, invalid, preds = zip(*planned)
        global_value = global_plan_value(ids, invalid, preds, pids.index(default_parser), pids.index(heavy_parser),
                                         alpha)
        report.expected_accuracy_batched = batched_value
        report.expected_accuracy_global = global_value
        report.optimality_gap = (global_value - batched_value) / len(docs)
    if metric_cfg is not None and records and "bleu" in records[0]:
        report.mean_scores = {k: float(np.mean([r[k] for r in records])) for k in ("coverage", "bleu", "rouge", "car")}
        tokens = {d.doc_id: d.token_count for d in docs}
        if sum(tokens.values()) > 0:
            report.accepted_tokens = accepted_tokens([(tokens[r["doc_id"]], r["bleu"]) for r in records],
                                                     metric_cfg.at_threshold)
    if out:
        (out / "report.json").write_text(report.to_json() + "\n", encoding="utf-8")
    logger.info("campaign %s: %d docs in %.2fs (heavy fraction %.4f)", strategy, len(docs), wall,
                report.heavy_fraction)
    return report
