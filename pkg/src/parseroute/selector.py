"""Parser selection cascade.

CLS I   cheap validity check on aggregate text statistics.
CLS II  logistic model over document metadata: is another parser likely better?
CLS III per-parser accuracy regression from the default parser's first page,
        followed by budgeted routing of a whole batch.

The text encoder is a bag of hashed n-grams averaged into an embedding
(fastText style). Hash: BLAKE2b with an 8-byte digest over the UTF-8 bytes of
``"w:" + " ".join(word_ngram)`` for word n-grams and ``"c:" + char_ngram`` for
sub-word character n-grams of ``"<" + word + ">"``; the little-endian integer
value modulo ``bucket_count`` is the bucket.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .corpus import DocumentMetadata

FORMAT = "parseroute.predictor"
FORMAT_VERSION = 1

STAGES = ("cls1_invalid", "cls2_accept", "cls3_routed")


# ---------------------------------------------------------------- CLS I


@dataclass(frozen=True)
class TextStats:
    char_count: int
    word_count: int
    alpha_ratio: float
    whitespace_ratio: float
    replacement_char_count: int
    mean_word_len: float
    backslash_density: float


def text_stats(text: str) -> TextStats:
    n = len(text)
    words = text.split()
    if n == 0:
        return TextStats(0, 0, 0.0, 0.0, 0, 0.0, 0.0)
    return TextStats(
        char_count=n,
        word_count=len(words),
        alpha_ratio=sum(c.isalpha() for c in text) / n,
        whitespace_ratio=sum(c.isspace() for c in text) / n,
        replacement_char_count=text.count("�"),
        mean_word_len=sum(map(len, words)) / len(words) if words else 0.0,
        backslash_density=text.count("\\") / n,
    )


@dataclass(frozen=True)
class Cls1Thresholds:
    min_chars_per_page: int = 200
    min_alpha: float = 0.5
    max_repl: int = 20


def cls1_validity(stats: TextStats, thresholds: Cls1Thresholds = Cls1Thresholds(), pages: int = 1) -> bool:
    return (
        stats.char_count >= thresholds.min_chars_per_page * pages
        and stats.alpha_ratio >= thresholds.min_alpha
        and stats.replacement_char_count <= thresholds.max_repl
    )


# ---------------------------------------------------------------- CLS II

_CATEGORICAL = ("authoring_tool", "publisher", "category", "format_version")
OOV = "<oov>"


@dataclass(frozen=True)
class MetadataFeaturizer:
    vocab: tuple[tuple[str, tuple[str, ...]], ...]

    @classmethod
    def fit(cls, metas: Sequence[DocumentMetadata]) -> "MetadataFeaturizer":
        return cls(tuple((f, tuple(sorted({str(getattr(m, f)) for m in metas}))) for f in _CATEGORICAL))

    @property
    def names(self) -> list[str]:
        out = []
        for f, values in self.vocab:
            out += [f"{f}={v}" for v in values] + [f"{f}={OOV}"]
        return out + ["year", "log_pages"]

    @property
    def size(self) -> int:
        return len(self.names)

    def transform(self, meta: DocumentMetadata) -> np.ndarray:
        x = np.zeros(self.size)
        offset = 0
        for f, values in self.vocab:
            v = str(getattr(meta, f))
            idx = values.index(v) if v in values else len(values)
            x[offset + idx] = 1.0
            offset += len(values) + 1
        x[offset] = (meta.year - 2000) / 20.0
        x[offset + 1] = math.log1p(meta.page_count) / 2.0
        return x

    def to_dict(self) -> dict:
        return {f: list(v) for f, v in self.vocab}

    @classmethod
    def from_dict(cls, d: dict) -> "MetadataFeaturizer":
        return cls(tuple((f, tuple(d[f])) for f in _CATEGORICAL))


@dataclass
class Cls2Model:
    featurizer: MetadataFeaturizer
    weights: np.ndarray
    bias: float = 0.0

    @classmethod
    def zeros(cls, featurizer: MetadataFeaturizer) -> "Cls2Model":
        return cls(featurizer, np.zeros(featurizer.size), 0.0)

    def set_weight(self, field_name: str, value: str, weight: float) -> None:
        self.weights[self.featurizer.names.index(f"{field_name}={value}")] = weight

    def score(self, meta: DocumentMetadata) -> float:
        z = float(self.featurizer.transform(meta) @ self.weights + self.bias)
        return 1.0 / (1.0 + math.exp(-z)) if z >= 0 else math.exp(z) / (1.0 + math.exp(z))

    def predict(self, meta: DocumentMetadata) -> bool:
        return self.score(meta) > 0.5

    def to_dict(self) -> dict:
        return {"format": "parseroute.cls2", "version": 1, "featurizer": self.featurizer.to_dict(),
                "weights": self.weights.tolist(), "bias": self.bias}

    @classmethod
    def from_dict(cls, d: dict) -> "Cls2Model":
        return cls(MetadataFeaturizer.from_dict(d["featurizer"]), np.array(d["weights"], dtype=float), float(d["bias"]))


def cls2_improvement(meta: DocumentMetadata, weights: Cls2Model) -> bool:
    return weights.predict(meta)


# ---------------------------------------------------------------- CLS III encoder


@dataclass(frozen=True)
class EmbeddingConfig:
    ngram_min: int = 1
    ngram_max: int = 2
    bucket_count: int = 1 << 15
    dim: int = 16
    # sub-word character n-grams; subword_min = 0 disables them
    subword_min: int = 3
    subword_max: int = 4

    def __post_init__(self) -> None:
        if not 1 <= self.ngram_min <= self.ngram_max <= 5:
            raise ValueError("need 1 <= ngram_min <= ngram_max <= 5")
        if self.bucket_count < 4096 or self.bucket_count & (self.bucket_count - 1):
            raise ValueError("bucket_count must be a power of two >= 4096")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.subword_min and not 1 <= self.subword_min <= self.subword_max:
            raise ValueError("need 1 <= subword_min <= subword_max")

    def to_dict(self) -> dict:
        return dict(ngram_min=self.ngram_min, ngram_max=self.ngram_max, bucket_count=self.bucket_count,
                    dim=self.dim, subword_min=self.subword_min, subword_max=self.subword_max)


def hash64(s: str) -> int:
    return int.from_bytes(hashlib.blake2b(s.encode("utf-8"), digest_size=8).digest(), "little")


@lru_cache(maxsize=1 << 18)
def _token_keys(token: str, smin: int, smax: int) -> tuple[int, ...]:
    keys = [hash64("w:" + token)]
    if smin:
        w = f"<{token}>"
        for n in range(smin, smax + 1):
            keys.extend(hash64("c:" + w[i:i + n]) for i in range(len(w) - n + 1))
    return tuple(keys)


def embed_tokens(text: str) -> list[str]:
    return text.lower().split()


def featurize(text: str, cfg: EmbeddingConfig) -> tuple[np.ndarray, np.ndarray]:
    """Sparse bag of hashed n-grams: (bucket indices, weights summing to 1)."""
    tokens = embed_tokens(text)
    keys: list[int] = []
    for t in tokens:
        if cfg.ngram_min == 1:
            keys.extend(_token_keys(t, cfg.subword_min, cfg.subword_max))
        elif cfg.subword_min:
            keys.extend(_token_keys(t, cfg.subword_min, cfg.subword_max)[1:])
    for n in range(max(2, cfg.ngram_min), cfg.ngram_max + 1):
        keys.extend(hash64("w:" + " ".join(tokens[i:i + n])) for i in range(len(tokens) - n + 1))
    if not keys:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    idx, counts = np.unique(np.array(keys, dtype=np.uint64) % np.uint64(cfg.bucket_count), return_counts=True)
    return idx.astype(np.int64), counts / counts.sum()


def embed(text: str, cfg: EmbeddingConfig, table: np.ndarray) -> np.ndarray:
    if table.shape != (cfg.bucket_count, cfg.dim):
        raise ValueError(f"embedding table shape {table.shape} does not match config")
    idx, w = featurize(text, cfg)
    if idx.size == 0:
        return np.zeros(cfg.dim)
    return w @ table[idx]


# ---------------------------------------------------------------- predictor


@dataclass
class PredictorModel:
    """Embedding table + linear accuracy head (+ scalar preference head)."""

    config: EmbeddingConfig
    parser_ids: tuple[str, ...]
    embedding: np.ndarray
    head_w: np.ndarray
    head_b: np.ndarray
    pref_w: np.ndarray
    pref_b: float = 0.0
    stage: int = 0

    @property
    def m(self) -> int:
        return len(self.parser_ids)

    @classmethod
    def init(cls, config: EmbeddingConfig, parser_ids: Sequence[str], seed: int = 0,
             scale: float = 0.1) -> "PredictorModel":
        rng = np.random.default_rng(seed)
        m = len(parser_ids)
        return cls(
            config, tuple(parser_ids),
            rng.normal(0.0, scale, (config.bucket_count, config.dim)),
            rng.normal(0.0, scale, (config.dim, m)),
            np.full(m, 0.5),
            np.zeros(config.dim),
        )

    @classmethod
    def zeros(cls, config: EmbeddingConfig, parser_ids: Sequence[str], bias: Sequence[float] | None = None):
        m = len(parser_ids)
        return cls(config, tuple(parser_ids), np.zeros((config.bucket_count, config.dim)),
                   np.zeros((config.dim, m)), np.array(bias if bias is not None else np.zeros(m), dtype=float),
                   np.zeros(config.dim))

    def copy(self) -> "PredictorModel":
        return PredictorModel(self.config, self.parser_ids, self.embedding.copy(), self.head_w.copy(),
                              self.head_b.copy(), self.pref_w.copy(), self.pref_b, self.stage)

    def encode(self, text: str) -> np.ndarray:
        return embed(text, self.config, self.embedding)

    def preference_score(self, text: str) -> float:
        """g(text) = sigmoid(pref_w . Enc(text) + pref_b), strictly inside (0, 1)."""
        s = float(self.encode(text) @ self.pref_w + self.pref_b)
        return 1.0 / (1.0 + math.exp(-s)) if s >= 0 else math.exp(s) / (1.0 + math.exp(s))

    def raw(self, text: str) -> np.ndarray:
        return self.encode(text) @ self.head_w + self.head_b

    def predict(self, doc_ids: Sequence[str], texts: Sequence[str]) -> np.ndarray:
        if not texts:
            return np.zeros((0, self.m))
        return np.clip(np.stack([self.raw(t) for t in texts]), 0.0, 1.0)

    def index(self, parser_id: str) -> int:
        return self.parser_ids.index(parser_id)

    # serialization: JSON, floats written with repr so a round trip is exact

    def to_dict(self) -> dict:
        return {
            "format": FORMAT, "version": FORMAT_VERSION, "stage": self.stage,
            "config": self.config.to_dict(), "parser_ids": list(self.parser_ids),
            "embedding": self.embedding.tolist(), "head_w": self.head_w.tolist(),
            "head_b": self.head_b.tolist(), "pref_w": self.pref_w.tolist(), "pref_b": self.pref_b,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PredictorModel":
        if d.get("format") != FORMAT or d.get("version") != FORMAT_VERSION:
            raise ValueError("not a predictor weight file of a supported version")
        cfg = EmbeddingConfig(**d["config"])
        model = cls(cfg, tuple(d["parser_ids"]), np.array(d["embedding"], dtype=float),
                    np.array(d["head_w"], dtype=float).reshape(cfg.dim, -1), np.array(d["head_b"], dtype=float),
                    np.array(d["pref_w"], dtype=float), float(d["pref_b"]), int(d["stage"]))
        if not all(np.isfinite(a).all() for a in (model.embedding, model.head_w, model.head_b, model.pref_w)):
            raise ValueError("weight file contains non-finite values")
        return model

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), separators=(",", ":")), encoding="utf-8")
        return path

    @classmethod
    def load(cls, path: str | Path) -> "PredictorModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def predict_accuracy(model: PredictorModel, first_page_text: str) -> np.ndarray:
    return np.clip(model.raw(first_page_text), 0.0, 1.0)


class Predictor(Protocol):
    parser_ids: tuple[str, ...]

    def predict(self, doc_ids: Sequence[str], texts: Sequence[str]) -> np.ndarray: ...


@dataclass
class OraclePredictor:
    """Looks up known per-parser accuracies by document id."""

    table: dict[str, Sequence[float]]
    parser_ids: tuple[str, ...]

    def predict(self, doc_ids: Sequence[str], texts: Sequence[str]) -> np.ndarray:
        return np.array([self.table[d] for d in doc_ids], dtype=float).reshape(len(doc_ids), len(self.parser_ids))


# ---------------------------------------------------------------- routing


@dataclass(frozen=True)
class RoutingDecision:
    doc_id: str
    chosen_parser: str
    predicted_accuracy: tuple[float, ...]
    stage: str
    # routing priority: predicted improvement (CLS III) or CLS II probability
    score: float = 0.0

    def __post_init__(self) -> None:
        if self.stage not in STAGES:
            raise ValueError(f"unknown stage {self.stage!r}")


def heavy_cap(alpha: float, k: int) -> int:
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    return min(k, math.floor(alpha * k + 1e-9))


def select_heavy(ids: Sequence[str], invalid: Sequence[bool], improvement: Sequence[float], cap: int) -> set[int]:
    """Indices routed to the heavy parser: invalid first (by id), then best positive improvements."""
    heavy: set[int] = set()
    for i in sorted((i for i in range(len(ids)) if invalid[i]), key=lambda i: ids[i]):
        if len(heavy) < cap:
            heavy.add(i)
    valid = [i for i in range(len(ids)) if not invalid[i]]
    for i in sorted(valid, key=lambda i: (-improvement[i], ids[i])):
        if len(heavy) >= cap or improvement[i] <= 0:
            break
        heavy.add(i)
    return heavy


def route_ft(
    doc_id: str,
    stats: TextStats,
    meta: DocumentMetadata,
    cls2: Cls2Model | None,
    default_parser: str,
    heavy_parser: str,
    thresholds: Cls1Thresholds = Cls1Thresholds(),
) -> RoutingDecision:
    """CLS I then CLS II; without a CLS II model no improvement is ever predicted."""
    if not cls1_validity(stats, thresholds):
        return RoutingDecision(doc_id, heavy_parser, (), "cls1_invalid", 1.0)
    p = cls2.score(meta) if cls2 is not None else 0.5
    if p > 0.5:
        return RoutingDecision(doc_id, heavy_parser, (), "cls3_routed", p)
    return RoutingDecision(doc_id, default_parser, (), "cls2_accept", p)


def route_llm(
    batch: Sequence[tuple[str, str]],
    model: Predictor,
    alpha: float,
    default_parser: str,
    heavy_parser: str,
    thresholds: Cls1Thresholds | None = Cls1Thresholds(),
) -> list[RoutingDecision]:
    """Route one batch of (doc_id, first_page_text) under the heavy-parser cap.

    Invalid first pages (CLS I) take cap slots first, in doc_id order. The
    remaining slots go to documents with the largest positive predicted
    improvement of the heavy over the default parser; ties break on doc_id.
    Decisions come back in input order.
    """
    k = len(batch)
    if k == 0:
        raise ValueError("empty batch")
    cap = heavy_cap(alpha, k)
    ids = [d for d, _ in batch]
    invalid = [thresholds is not None and not cls1_validity(text_stats(t), thresholds) for _, t in batch]

    valid = [i for i in range(k) if not invalid[i]]
    preds = model.predict([ids[i] for i in valid], [batch[i][1] for i in valid])
    d_idx, h_idx = model.parser_ids.index(default_parser), model.parser_ids.index(heavy_parser)
    improvement = {i: float(preds[r, h_idx] - preds[r, d_idx]) for r, i in enumerate(valid)}
    heavy = select_heavy(ids, invalid, [improvement.get(i, 0.0) for i in range(k)], cap)

    row = {i: tuple(float(x) for x in preds[r]) for r, i in enumerate(valid)}
    out = []
    for i in range(k):
        chosen = heavy_parser if i in heavy else default_parser
        if invalid[i]:
            out.append(RoutingDecision(ids[i], chosen, (), "cls1_invalid", math.inf))
        else:
            out.append(RoutingDecision(ids[i], chosen, row[i], "cls3_routed", improvement[i]))
    return out
