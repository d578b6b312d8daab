"""Document records, archive staging, text-layer perturbations and synthetic corpora.

Archive format: a ZIP whose members are ``<doc_id>.json`` files::

    {"pages": ["...", ...],
     "metadata": {"authoring_tool": ..., "year": ..., "page_count": ...,
                  "publisher": ..., "category": ..., "format_version": ...},
     "groundtruth": "..." | null}

Pages inside a groundtruth string are separated by a form feed (``PAGE_BREAK``).
"""

from __future__ import annotations

import json
import logging
import math
import re
import zipfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .metrics import tokenize

logger = logging.getLogger(__name__)

PAGE_BREAK = "\f"

METADATA_KEYS = ("authoring_tool", "year", "page_count", "publisher", "category", "format_version")

PERTURBATION_MODES = (
    "whitespace_injection",
    "word_substitution",
    "char_scramble",
    "char_substitution",
    "identifier_corruption",
    "latex_flatten",
    "page_drop",
)


class CorruptRecordError(ValueError):
    pass


class StagingError(RuntimeError):
    pass


@dataclass(frozen=True)
class DocumentMetadata:
    authoring_tool: str
    year: int
    page_count: int
    publisher: str
    category: str
    format_version: str

    def __post_init__(self) -> None:
        if not 1900 <= self.year <= 2100:
            raise CorruptRecordError(f"year {self.year} outside [1900, 2100]")
        if self.page_count < 1:
            raise CorruptRecordError("page_count must be >= 1")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in METADATA_KEYS}

    @classmethod
    def from_dict(cls, d: dict) -> "DocumentMetadata":
        missing = [k for k in METADATA_KEYS if k not in d]
        if missing:
            raise CorruptRecordError(f"metadata missing keys {missing}")
        try:
            return cls(
                authoring_tool=str(d["authoring_tool"]),
                year=int(d["year"]),
                page_count=int(d["page_count"]),
                publisher=str(d["publisher"]),
                category=str(d["category"]),
                format_version=str(d["format_version"]),
            )
        except (TypeError, ValueError) as exc:
            raise CorruptRecordError(str(exc)) from exc


@dataclass(frozen=True)
class DocumentRecord:
    doc_id: str
    pages: tuple[str, ...]
    metadata: DocumentMetadata
    groundtruth: str | None = None
    token_count: int = 0
    # image-layer degradation seen by OCR/ViT style parsers (0 = clean scan)
    image_degradation: float = 0.0
    source_path: str | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        if not self.pages:
            raise CorruptRecordError(f"{self.doc_id}: pages must be non-empty")
        if self.metadata.page_count != len(self.pages):
            raise CorruptRecordError(
                f"{self.doc_id}: page_count {self.metadata.page_count} != {len(self.pages)} pages"
            )

    @classmethod
    def create(
        cls,
        doc_id: str,
        pages: Sequence[str],
        metadata: DocumentMetadata,
        groundtruth: str | None,
        image_degradation: float = 0.0,
        source_path: str | None = None,
    ) -> "DocumentRecord":
        count = len(tokenize(groundtruth)) if groundtruth is not None else 0
        return cls(doc_id, tuple(pages), metadata, groundtruth, count, image_degradation, source_path)

    @property
    def groundtruth_pages(self) -> list[str]:
        if self.groundtruth is None:
            return []
        return self.groundtruth.split(PAGE_BREAK)

    def to_dict(self) -> dict:
        d = {"pages": list(self.pages), "metadata": self.metadata.to_dict(), "groundtruth": self.groundtruth}
        if self.image_degradation:
            d["image_degradation"] = self.image_degradation
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False)

    @classmethod
    def from_dict(cls, doc_id: str, d: dict, source_path: str | None = None) -> "DocumentRecord":
        if not isinstance(d, dict):
            raise CorruptRecordError("record is not a JSON object")
        pages = d.get("pages")
        if not isinstance(pages, list) or not pages or not all(isinstance(p, str) for p in pages):
            raise CorruptRecordError("pages must be a non-empty array of strings")
        gt = d.get("groundtruth")
        if gt is not None and not isinstance(gt, str):
            raise CorruptRecordError("groundtruth must be a string or null")
        meta = DocumentMetadata.from_dict(d.get("metadata") or {})
        try:
            degradation = float(d.get("image_degradation", 0.0))
        except (TypeError, ValueError) as exc:
            raise CorruptRecordError("image_degradation must be a number") from exc
        return cls.create(doc_id, pages, meta, gt, degradation, source_path)

    @classmethod
    def from_json(cls, doc_id: str, raw: str | bytes, source_path: str | None = None) -> "DocumentRecord":
        try:
            d = json.loads(raw)
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise CorruptRecordError(f"invalid JSON: {exc}") from exc
        return cls.from_dict(doc_id, d, source_path)


# ---------------------------------------------------------------- perturbations


@dataclass(frozen=True)
class PerturbationSpec:
    mode: str
    rate: float
    seed: int = 0
    # char_substitution only: "confusable" (OCR look-alikes) or "case" (swap case)
    char_policy: str = "confusable"

    def __post_init__(self) -> None:
        if self.mode not in PERTURBATION_MODES:
            raise ValueError(f"unknown perturbation mode {self.mode!r}")
        if not 0.0 <= self.rate <= 1.0:
            raise ValueError("rate must be in [0, 1]")
        if self.char_policy not in ("confusable", "case"):
            raise ValueError(f"unknown char_policy {self.char_policy!r}")


_WORD = re.compile(r"\S+")
_LATEX = re.compile(r"\\[A-Za-z]+\*?|\\.|[{}$]")
_IDENTIFIER = re.compile(r"\S*(?:\d|[()\[\]=#])\S*")

JUNK_GLYPHS = "\ufffd§¤¶†‡•#@%&*~^|¦¬°±"

_CONFUSABLE = {
    "l": "1", "1": "l", "I": "l", "O": "0", "0": "O", "o": "0", "e": "c", "c": "e",
    "S": "5", "5": "S", "B": "8", "8": "B", "a": "o", "i": "j", "u": "v", "v": "u",
    "n": "h", "h": "n", "t": "f", "f": "t", "m": "n", "g": "q", "q": "g", "Z": "2",
}

SUBSTITUTE_WORDS = (
    "the", "and", "of", "model", "result", "method", "data", "value", "system",
    "analysis", "process", "function", "figure", "table", "effect", "sample",
)


def _n_units(rate: float, units: int) -> int:
    if rate <= 0 or units == 0:
        return 0
    return min(units, math.ceil(rate * units - 1e-9))


def _pick(rng: np.random.Generator, units: int, rate: float) -> list[int]:
    k = _n_units(rate, units)
    if k == 0:
        return []
    return sorted(rng.choice(units, size=k, replace=False).tolist())


def _swap_word(rng, word: str) -> str:
    choice = SUBSTITUTE_WORDS[int(rng.integers(len(SUBSTITUTE_WORDS)))]
    if choice == word.lower():
        choice = SUBSTITUTE_WORDS[(SUBSTITUTE_WORDS.index(choice) + 1) % len(SUBSTITUTE_WORDS)]
    return choice


def _scramble_word(rng, word: str) -> str:
    return "".join(JUNK_GLYPHS[int(rng.integers(len(JUNK_GLYPHS)))] for _ in word)


def _corrupt_identifier(rng, token: str) -> str:
    pos = int(rng.integers(len(token)))
    op = int(rng.integers(3)) if len(token) > 1 else 0
    if op == 1:
        return token[:pos] + token[pos + 1:]
    alphabet = "CNOSHcnos123456()=#[]"
    ch = alphabet[int(rng.integers(len(alphabet)))]
    if op == 2:
        return token[:pos] + ch + token[pos:]
    if ch == token[pos]:
        ch = alphabet[(alphabet.index(ch) + 1) % len(alphabet)]
    return token[:pos] + ch + token[pos + 1:]


def _replace_spans(text: str, spans: list[tuple[int, int]], chosen: list[int], fn) -> str:
    out, last = [], 0
    for idx in chosen:
        s, e = spans[idx]
        out.append(text[last:s])
        out.append(fn(text[s:e]))
        last = e
    out.append(text[last:])
    return "".join(out)


def perturb(text: str, spec: PerturbationSpec) -> str:
    """Apply one failure mode to a text layer; deterministic in (text, spec)."""
    if spec.rate == 0 or not text:
        return text
    rng = np.random.default_rng(spec.seed)
    mode = spec.mode

    if mode == "page_drop":
        return PAGE_BREAK.join(perturb_pages(text.split(PAGE_BREAK), spec))

    if mode == "whitespace_injection":
        slots = [i for i in range(1, len(text)) if not text[i - 1].isspace() and not text[i].isspace()]
        chosen = set(slots[j] for j in _pick(rng, len(slots), spec.rate))
        return "".join((" " + ch) if i in chosen else ch for i, ch in enumerate(text))

    if mode in ("word_substitution", "char_scramble"):
        spans = [m.span() for m in _WORD.finditer(text)]
        fn = _swap_word if mode == "word_substitution" else _scramble_word
        return _replace_spans(text, spans, _pick(rng, len(spans), spec.rate), lambda w: fn(rng, w))

    if mode == "char_substitution":
        if spec.char_policy == "case":
            mixed = [m.span() for m in _WORD.finditer(text)
                     if any(c.isupper() for c in m.group()) and any(c.islower() for c in m.group())]
            positions = [i for s, e in mixed for i in range(s, e) if text[i].isalpha()]
            if not positions:
                positions = [i for i, c in enumerate(text) if c.isalpha()]
            sub = str.swapcase
        else:
            positions = [i for i, c in enumerate(text) if c.isalnum()]
            sub = lambda c: _CONFUSABLE.get(c, c.swapcase() if c.isalpha() and c.swapcase() != c else "#")
        chars = list(text)
        for j in _pick(rng, len(positions), spec.rate):
            i = positions[j]
            chars[i] = sub(chars[i])
        return "".join(chars)

    if mode == "identifier_corruption":
        spans = [m.span() for m in _IDENTIFIER.finditer(text)]
        return _replace_spans(text, spans, _pick(rng, len(spans), spec.rate),
                              lambda t: _corrupt_identifier(rng, t))

    if mode == "latex_flatten":
        spans = [m.span() for m in _LATEX.finditer(text)]
        return _replace_spans(text, spans, _pick(rng, len(spans), spec.rate), lambda _: "")

    raise ValueError(mode)


def perturb_pages(pages: Sequence[str], spec: PerturbationSpec) -> list[str]:
    """Page-wise perturbation. ``page_drop`` blanks whole pages in place."""
    if spec.mode == "page_drop":
        rng = np.random.default_rng(spec.seed)
        dropped = set(_pick(rng, len(pages), spec.rate))
        return ["" if i in dropped else p for i, p in enumerate(pages)]
    return [perturb(p, replace(spec, seed=spec.seed + i)) for i, p in enumerate(pages)]


# ---------------------------------------------------------------- synthetic corpora

_VOCAB = (
    "we observe that the proposed model yields a significant improvement over baseline methods "
    "experimental results show protein binding energy temperature pressure sample measurement "
    "analysis of variance data set network layer training loss gradient optimization convergence "
    "theorem lemma proof assume let consider function space bounded operator spectrum eigenvalue "
    "cell tissue expression gene pathway patient cohort clinical trial dose response outcome "
    "market price demand supply equilibrium policy growth rate inflation estimate regression "
    "signal noise frequency spectrum circuit voltage current material stress strain fracture "
    "reaction catalyst solvent yield compound synthesis molecule structure crystal lattice"
).split()

_MATH = (
    r"$\alpha_{i} + \beta^{2}$", r"$\frac{x}{y}$", r"$\sum_{k=1}^{n} x_k$", r"$\sqrt{\lambda}$",
    r"$\int_0^1 f(t) dt$", r"$\mathbb{E}[X]$", r"$\nabla \cdot u = 0$", r"$\hat{\theta}_{n}$",
)

_IDENTIFIERS = ("C6H12O6", "CC(=O)O", "c1ccccc1", "NaCl", "H2SO4", "CO2", "CH3OH", "pH")

_TOOLS = ("pdfTeX", "LaTeX", "Word", "InDesign", "Acrobat", "legacy-ocr")
_PUBLISHERS = ("arXiv", "bioRxiv", "BMC", "MDPI", "medRxiv", "Nature")
_CATEGORIES = ("mathematics", "biology", "chemistry", "physics", "engineering",
               "medicine", "economics", "computer science")


@dataclass(frozen=True)
class SynthProfile:
    """Generator knobs for desk-scale synthetic corpora."""

    pages_min: int = 1
    pages_max: int = 6
    words_min: int = 60
    words_max: int = 120
    latex_density: float = 0.15  # probability a sentence carries inline math
    identifier_density: float = 0.05
    ocr_layer_fraction: float = 0.1  # documents whose embedded text came from poor OCR
    year_min: int = 1990
    year_max: int = 2024
    doc_prefix: str = "doc"


def _sentence(rng, profile: SynthProfile, latex_density: float) -> str:
    n = int(rng.integers(8, 18))
    words = [_VOCAB[int(rng.integers(len(_VOCAB)))] for _ in range(n)]
    if rng.random() < profile.identifier_density:
        words.insert(int(rng.integers(n)), _IDENTIFIERS[int(rng.integers(len(_IDENTIFIERS)))])
    if rng.random() < latex_density:
        words.insert(int(rng.integers(n)), _MATH[int(rng.integers(len(_MATH)))])
    words[0] = words[0].capitalize()
    return " ".join(words) + "."


def _page(rng, profile: SynthProfile, latex_density: float) -> str:
    target = int(rng.integers(profile.words_min, profile.words_max + 1))
    sentences, count = [], 0
    while count < target:
        s = _sentence(rng, profile, latex_density)
        sentences.append(s)
        count += len(s.split())
    return " ".join(sentences)


def synth_document(index: int, profile: SynthProfile, seed: int) -> DocumentRecord:
    rng = np.random.default_rng([seed, index])
    n_pages = int(rng.integers(profile.pages_min, profile.pages_max + 1))
    # per-document math density varies widely so parser rankings cross
    latex = min(1.0, profile.latex_density * float(rng.exponential(1.0)) * 2) if profile.latex_density else 0.0
    clean = [_page(rng, profile, latex) for _ in range(n_pages)]
    ocr_layer = rng.random() < profile.ocr_layer_fraction
    year = int(rng.integers(profile.year_min, profile.year_max + 1))
    tool = _TOOLS[int(rng.integers(len(_TOOLS) - 1))]
    if ocr_layer:
        tool = "legacy-ocr" if rng.random() < 0.7 else tool
        year = min(year, int(rng.integers(profile.year_min, 2006)))
        layer = [degrade_text_layer(p, int(rng.integers(2**31)), severity=float(rng.uniform(0.1, 0.4)))
                 for p in clean]
    else:
        layer = list(clean)
    meta = DocumentMetadata(
        authoring_tool=tool,
        year=year,
        page_count=n_pages,
        publisher=_PUBLISHERS[int(rng.integers(len(_PUBLISHERS)))],
        category=_CATEGORIES[int(rng.integers(len(_CATEGORIES)))],
        format_version=f"1.{int(rng.integers(3, 8))}",
    )
    return DocumentRecord.create(f"{profile.doc_prefix}{index:06d}", layer, meta, PAGE_BREAK.join(clean))


def degrade_text_layer(page: str, seed: int, severity: float = 0.2) -> str:
    """Simulate a text layer produced by poor OCR."""
    out = perturb(page, PerturbationSpec("char_substitution", severity * 0.3, seed))
    out = perturb(out, PerturbationSpec("char_scramble", severity * 0.5, seed + 1))
    out = perturb(out, PerturbationSpec("whitespace_injection", severity * 0.1, seed + 2))
    return perturb(out, PerturbationSpec("latex_flatten", 1.0, seed + 3))


def synth_corpus(n: int, profile: SynthProfile | None = None, seed: int = 0) -> list[DocumentRecord]:
    if n < 1:
        raise ValueError("n must be >= 1")
    profile = profile or SynthProfile()
    return [synth_document(i, profile, seed) for i in range(n)]


# ---------------------------------------------------------------- archives and staging


def write_archive(docs: Sequence[DocumentRecord], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        for doc in docs:
            info = zipfile.ZipInfo(f"{doc.doc_id}.json", date_time=(1980, 1, 1, 0, 0, 0))
            info.compress_type = zipfile.ZIP_DEFLATED
            zf.writestr(info, doc.to_json())
    return path


@dataclass(frozen=True)
class Corpus:
    """Immutable handle over staged documents."""

    docs: tuple[DocumentRecord, ...]
    local_dir: Path | None = None
    log: tuple[dict, ...] = ()

    def __iter__(self) -> Iterator[DocumentRecord]:
        return iter(self.docs)

    def __len__(self) -> int:
        return len(self.docs)

    @property
    def doc_ids(self) -> list[str]:
        return [d.doc_id for d in self.docs]

    def by_id(self) -> dict[str, DocumentRecord]:
        return {d.doc_id: d for d in self.docs}

    @classmethod
    def load(cls, local_dir: str | Path) -> "Corpus":
        local_dir = Path(local_dir)
        docs, log = [], []
        for p in sorted(local_dir.glob("*.json")):
            try:
                docs.append(DocumentRecord.from_json(p.stem, p.read_bytes(), str(p)))
            except CorruptRecordError as exc:
                log.append({"doc_id": p.stem, "status": "skipped", "reason": str(exc)})
                logger.warning("skipping %s: %s", p, exc)
        if not docs:
            raise StagingError(f"no readable documents in {local_dir}")
        return cls(tuple(docs), local_dir, tuple(log))


def _stage_one(archive: Path, local_dir: Path) -> tuple[list[DocumentRecord], list[dict]]:
    docs, log = [], []
    try:
        zf = zipfile.ZipFile(archive)
    except (OSError, zipfile.BadZipFile) as exc:
        return [], [{"archive": str(archive), "status": "error", "reason": f"unreadable archive: {exc}"}]
    with zf:
        for name in sorted(zf.namelist()):
            if name.endswith("/"):
                continue
            doc_id = Path(name).stem
            if not name.endswith(".json"):
                log.append({"doc_id": doc_id, "status": "skipped", "reason": "not a .json member"})
                continue
            try:
                raw = zf.read(name)
                target = local_dir / f"{doc_id}.json"
                doc = DocumentRecord.from_json(doc_id, raw, str(target))
            except (CorruptRecordError, zipfile.BadZipFile, OSError, EOFError, ValueError) as exc:
                log.append({"doc_id": doc_id, "status": "skipped", "reason": str(exc)})
                logger.warning("skipping %s in %s: %s", name, archive, exc)
                continue
            target.write_bytes(raw)
            docs.append(doc)
            log.append({"doc_id": doc_id, "status": "ok", "reason": ""})
    return docs, log


def stage_archives(archive_paths: Sequence[str | Path], local_dir: str | Path, workers: int = 4) -> Corpus:
    """Decompress document archives into ``local_dir``.

    Corrupt members and unreadable archives are logged and skipped. The log
    is written to ``local_dir/staging_log.jsonl``. Raises StagingError when
    nothing readable remains.
    """
    local_dir = Path(local_dir)
    local_dir.mkdir(parents=True, exist_ok=True)
    paths = [Path(p) for p in archive_paths]
    with ThreadPoolExecutor(max_workers=max(1, min(workers, len(paths) or 1))) as ex:
        results = list(ex.map(lambda p: _stage_one(p, local_dir), paths))

    docs, log, seen = [], [], set()
    for archive_docs, archive_log in results:
        for entry in archive_log:
            if entry.get("status") == "ok" and entry["doc_id"] in seen:
                entry = {"doc_id": entry["doc_id"], "status": "skipped", "reason": "duplicate doc_id"}
            log.append(entry)
        for doc in archive_docs:
            if doc.doc_id not in seen:
                seen.add(doc.doc_id)
                docs.append(doc)
    with open(local_dir / "staging_log.jsonl", "w", encoding="utf-8") as fh:
        for entry in log:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
    if not docs:
        raise StagingError("staging produced zero readable documents")
    return Corpus(tuple(docs), local_dir, tuple(log))
