"""Uniform parser interface.

Three adapter families sit behind ``parse``:

* built-in extraction: returns the document's embedded text layer;
* mock parsers: an error model (a chain of perturbations whose rates depend on
  the document) applied to the text layer or to the clean page content;
* external commands: ``command`` is a template with ``{input}`` and
  ``{output}`` placeholders; the child reads the staged JSON record and writes
  UTF-8 text (pages separated by form feeds). Exit code 0 means success.
"""

from __future__ import annotations

import hashlib
import logging
import shlex
import subprocess
import tempfile
import time
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Sequence

from .corpus import PAGE_BREAK, DocumentRecord, PerturbationSpec, perturb_pages

logger = logging.getLogger(__name__)

PARSER_KINDS = ("extractor", "ocr", "vit", "mock", "external")
STATUSES = ("ok", "partial", "failed", "timeout")


class SimulatedCrash(RuntimeError):
    """Raised by a mock parser configured to crash on a document."""


def stable_seed(*parts: object) -> int:
    h = hashlib.blake2b("\x1f".join(map(str, parts)).encode("utf-8"), digest_size=8)
    return int.from_bytes(h.digest(), "little") >> 1


def stable_uniform(*parts: object) -> float:
    return stable_seed(*parts) / float(1 << 63)


@dataclass(frozen=True)
class ErrorStep:
    """One perturbation whose rate grows with document difficulty.

    rate = base + per_latex * latex_share + per_image * image_degradation,
    clipped to [0, 1]; the step fires on a document with probability ``prob``.
    """

    mode: str
    base: float = 0.0
    per_latex: float = 0.0
    per_image: float = 0.0
    prob: float = 1.0
    char_policy: str = "confusable"


@dataclass(frozen=True)
class ErrorModel:
    source: str = "text_layer"  # or "image": start from the clean page content
    steps: tuple[ErrorStep, ...] = ()
    crash_rate: float = 0.0


@dataclass(frozen=True)
class ParserProfile:
    parser_id: str
    kind: str
    avg_cost_seconds: float
    page_batch_size: int = 1
    warm_start: bool = False
    error_model: ErrorModel | None = None
    command: str | None = None
    timeout_seconds: float = 120.0
    # simulated work per document: "none", "sleep" (latency) or "spin" (CPU time)
    cost_mode: str = "none"
    time_scale: float = 1.0
    init_seconds: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in PARSER_KINDS:
            raise ValueError(f"unknown parser kind {self.kind!r}")
        if self.avg_cost_seconds <= 0:
            raise ValueError("avg_cost_seconds must be > 0")
        if self.page_batch_size < 1:
            raise ValueError("page_batch_size must be >= 1")
        if self.cost_mode not in ("none", "sleep", "spin"):
            raise ValueError(f"unknown cost_mode {self.cost_mode!r}")


@dataclass(frozen=True)
class ParseResult:
    doc_id: str
    parser_id: str
    text: str
    pages_emitted: int
    wall_seconds: float
    status: str
    pages: tuple[str, ...] = field(default=(), repr=False)
    error: str = ""

    def __post_init__(self) -> None:
        if self.status not in STATUSES:
            raise ValueError(f"unknown status {self.status!r}")
        if self.status == "ok" and self.pages_emitted < 1:
            raise ValueError("status ok requires at least one emitted page")


def latex_share(doc: DocumentRecord) -> float:
    """Fraction of whitespace tokens carrying LaTeX markup."""
    text = doc.groundtruth if doc.groundtruth is not None else PAGE_BREAK.join(doc.pages)
    tokens = text.split()
    if not tokens:
        return 0.0
    return sum(1 for t in tokens if "\\" in t or "$" in t) / len(tokens)


def iter_page_batches(pages: Sequence[str], batch_size: int):
    """Greedy fixed-size page batches; the last partial batch is flushed."""
    for i in range(0, len(pages), batch_size):
        yield list(pages[i:i + batch_size])


def _burn(seconds: float, mode: str) -> None:
    if seconds <= 0 or mode == "none":
        return
    if mode == "sleep":
        time.sleep(seconds)
        return
    # CPU-bound: consume thread CPU time, not wall time
    end = time.thread_time() + seconds
    x = 0
    while time.thread_time() < end:
        for i in range(2000):
            x += i * i


def _result(doc: DocumentRecord, profile: ParserProfile, pages: list[str], elapsed: float) -> ParseResult:
    emitted = sum(1 for p in pages if p.strip())
    if emitted == 0:
        status = "failed"
    elif emitted < len(doc.pages):
        status = "partial"
    else:
        status = "ok"
    return ParseResult(doc.doc_id, profile.parser_id, PAGE_BREAK.join(pages), emitted, elapsed, status, tuple(pages))


class ParserAdapter:
    def __init__(self, profile: ParserProfile):
        self.profile = profile
        self.initializations = 0

    def initialize(self) -> None:
        """Load expensive state (model weights, external process)."""
        _burn(self.profile.init_seconds, "sleep")
        self.initializations += 1

    def pages_for(self, doc: DocumentRecord) -> list[str]:
        raise NotImplementedError

    def parse(self, doc: DocumentRecord) -> ParseResult:
        start = time.perf_counter()
        try:
            pages = self.pages_for(doc)
        except SimulatedCrash:
            raise
        except TimeoutError as exc:
            return ParseResult(doc.doc_id, self.profile.parser_id, "", 0,
                               time.perf_counter() - start, "timeout", (), str(exc))
        except Exception as exc:  # parsers must report, not raise
            logger.warning("%s failed on %s: %s", self.profile.parser_id, doc.doc_id, exc)
            return ParseResult(doc.doc_id, self.profile.parser_id, "", 0,
                               time.perf_counter() - start, "failed", (), str(exc))
        return _result(doc, self.profile, pages, time.perf_counter() - start)

    def parse_first_page(self, doc: DocumentRecord) -> str:
        pages = self.pages_for(doc)
        return pages[0] if pages else ""


class TextLayerExtractor(ParserAdapter):
    def pages_for(self, doc: DocumentRecord) -> list[str]:
        _burn(self.profile.avg_cost_seconds * self.profile.time_scale, self.profile.cost_mode)
        return list(doc.pages)


class MockParser(ParserAdapter):
    def _simulate(self, doc: DocumentRecord, fraction: float = 1.0) -> None:
        p = self.profile
        total = p.avg_cost_seconds * p.time_scale * fraction
        batches = max(1, -(-len(doc.pages) // p.page_batch_size))
        if p.timeout_seconds and total > p.timeout_seconds:
            raise TimeoutError(f"simulated cost {total:.3f}s exceeds timeout")
        for _ in range(batches):
            _burn(total / batches, p.cost_mode)

    def _apply(self, doc: DocumentRecord) -> list[str]:
        model = self.profile.error_model or ErrorModel()
        pid = self.profile.parser_id
        if model.crash_rate and stable_uniform(pid, doc.doc_id, "crash") < model.crash_rate:
            raise SimulatedCrash(f"{pid} crashed on {doc.doc_id}")
        if model.source == "image" and doc.groundtruth is not None:
            pages = doc.groundtruth_pages
            if len(pages) != len(doc.pages):
                pages = list(doc.pages)
        else:
            pages = list(doc.pages)
        share = latex_share(doc) if any(s.per_latex for s in model.steps) else 0.0
        for idx, step in enumerate(model.steps):
            seed = stable_seed(pid, doc.doc_id, idx)
            if step.prob < 1.0 and stable_uniform(seed, "fires") >= step.prob:
                continue
            rate = step.base + step.per_latex * share
            if model.source == "image":
                rate += step.per_image * doc.image_degradation
            rate = min(1.0, max(0.0, rate))
            if rate > 0:
                pages = perturb_pages(pages, PerturbationSpec(step.mode, rate, seed, step.char_policy))
        return pages

    def pages_for(self, doc: DocumentRecord) -> list[str]:
        self._simulate(doc)
        return self._apply(doc)

    def parse_first_page(self, doc: DocumentRecord) -> str:
        self._simulate(doc, 1.0 / len(doc.pages))
        return self._apply(doc)[0]


class ExternalParser(ParserAdapter):
    def _input_path(self, doc: DocumentRecord, tmp: Path) -> Path:
        if doc.source_path and Path(doc.source_path).exists():
            return Path(doc.source_path)
        path = tmp / f"{doc.doc_id}.json"
        path.write_text(doc.to_json(), encoding="utf-8")
        return path

    def parse(self, doc: DocumentRecord) -> ParseResult:
        start = time.perf_counter()
        pid = self.profile.parser_id
        with tempfile.TemporaryDirectory(prefix="parseroute-") as tmpdir:
            tmp = Path(tmpdir)
            out = tmp / f"{doc.doc_id}.txt"
            cmd = self.profile.command.format(input=shlex.quote(str(self._input_path(doc, tmp))),
                                              output=shlex.quote(str(out)))
            try:
                proc = subprocess.run(shlex.split(cmd), stdin=subprocess.DEVNULL, stdout=subprocess.DEVNULL,
                                      stderr=subprocess.PIPE, timeout=self.profile.timeout_seconds)
            except subprocess.TimeoutExpired:
                return ParseResult(doc.doc_id, pid, "", 0, time.perf_counter() - start, "timeout", (), "timeout")
            except OSError as exc:
                return ParseResult(doc.doc_id, pid, "", 0, time.perf_counter() - start, "failed", (), str(exc))
            elapsed = time.perf_counter() - start
            if proc.returncode != 0:
                err = proc.stderr.decode("utf-8", "replace").strip()[-500:]
                return ParseResult(doc.doc_id, pid, "", 0, elapsed, "failed", (),
                                   f"exit code {proc.returncode}: {err}")
            try:
                text = out.read_text(encoding="utf-8")
            except (OSError, UnicodeDecodeError) as exc:
                return ParseResult(doc.doc_id, pid, "", 0, elapsed, "failed", (), str(exc))
        return _result(doc, self.profile, text.split(PAGE_BREAK), elapsed)

    def pages_for(self, doc: DocumentRecord) -> list[str]:
        return list(self.parse(doc).pages)


def make_adapter(profile: ParserProfile) -> ParserAdapter:
    if profile.command is not None or profile.kind == "external":
        if not profile.command:
            raise ValueError(f"external parser {profile.parser_id!r} needs a command template")
        return ExternalParser(profile)
    if profile.error_model is not None or profile.kind == "mock":
        return MockParser(profile)
    return TextLayerExtractor(profile)


@lru_cache(maxsize=64)
def _shared_adapter(profile: ParserProfile) -> ParserAdapter:
    adapter = make_adapter(profile)
    adapter.initialize()
    return adapter


def parse(parser: ParserProfile, doc: DocumentRecord) -> ParseResult:
    return _shared_adapter(parser).parse(doc)


def parse_first_page(parser: ParserProfile, doc: DocumentRecord) -> str:
    return _shared_adapter(parser).parse_first_page(doc)


# ---------------------------------------------------------------- reference parser set

DEFAULT_PARSER = "extract"
HEAVY_PARSER = "vit"


def reference_parsers(cost_mode: str = "none", time_scale: float = 1.0, crash_rate: float = 0.0) -> list[ParserProfile]:
    """Six mock parsers with crossing quality profiles.

    ``extract`` is cheap and strong on clean born-digital text but loses all
    math markup and inherits a bad text layer. ``vit`` reads the page image,
    keeps math markup but hallucinates more words on math-dense documents, is
    expensive, and now and then drops pages.
    """
    S = ErrorStep
    specs = [
        ("extract", "extractor", 0.01, 1, False, ErrorModel("text_layer", (
            S("latex_flatten", 1.0),
            S("whitespace_injection", 0.002),
        ))),
        ("extract_lite", "extractor", 0.1, 1, False, ErrorModel("text_layer", (
            S("latex_flatten", 1.0),
            S("whitespace_injection", 0.02),
            S("word_substitution", 0.04),
        ))),
        ("ocr", "ocr", 0.5, 1, False, ErrorModel("image", (
            S("latex_flatten", 1.0),
            S("char_substitution", 0.03, per_image=0.3),
            S("whitespace_injection", 0.004),
        ))),
        ("vit", "vit", 1.0, 10, True, ErrorModel("image", (
            S("char_substitution", 0.006, per_image=0.05),
            # hallucinated words grow with math density
            S("word_substitution", 0.02, per_latex=3.0),
            S("identifier_corruption", 0.3),
            S("page_drop", 0.34, prob=0.05),
        ))),
        ("vit_layout", "vit", 2.0, 10, True, ErrorModel("image", (
            S("latex_flatten", 0.5),
            S("char_substitution", 0.02, per_image=0.1),
            S("word_substitution", 0.06),
        ))),
        ("grobid", "ocr", 0.3, 1, False, ErrorModel("image", (
            S("latex_flatten", 1.0),
            S("word_substitution", 0.05),
            S("page_drop", 0.3, prob=0.6),
        ))),
    ]
    out = []
    for pid, kind, cost, bp, warm, model in specs:
        if crash_rate:
            model = ErrorModel(model.source, model.steps, crash_rate)
        out.append(ParserProfile(pid, kind, cost, bp, warm, model, cost_mode=cost_mode, time_scale=time_scale))
    return out


def perfect_mock(parser_id: str = "perfect", **kw) -> ParserProfile:
    return ParserProfile(parser_id, "mock", kw.pop("avg_cost_seconds", 0.01),
                         error_model=ErrorModel("image", ()), **kw)


def cheapest(parsers: Sequence[ParserProfile]) -> ParserProfile:
    return min(parsers, key=lambda p: (p.avg_cost_seconds, p.parser_id))


def parse_matrix(parsers: Sequence[ParserProfile], docs: Sequence[DocumentRecord]) -> dict[str, dict[str, ParseResult]]:
    """Run every parser on every document in-process: {doc_id: {parser_id: result}}."""
    adapters = [make_adapter(p) for p in parsers]
    out: dict[str, dict[str, ParseResult]] = {}
    for doc in docs:
        row = {}
        for a in adapters:
            try:
                row[a.profile.parser_id] = a.parse(doc)
            except SimulatedCrash as exc:
                row[a.profile.parser_id] = ParseResult(doc.doc_id, a.profile.parser_id, "", 0, 0.0, "failed", (), str(exc))
        out[doc.doc_id] = row
    return out

