"""Three-stage predictor training.

Stage 1  regression of per-parser accuracy from default-parser page text (L2 loss).
Stage 2  preference post-training of the shared encoder and a scalar
         preference head g(x) = sigmoid(w . Enc(x) + b) against a frozen copy
         of the stage-1 model.
Stage 3  regression again at a lower learning rate, on document-level targets.

All gradients are analytic. The encoder is a sparse bag-of-buckets matrix X
(rows sum to one) times the embedding table, so Enc = X @ E.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.optimize
import scipy.sparse as sp

from .corpus import DocumentMetadata
from .metrics import NEITHER, PreferenceRecord
from .selector import Cls2Model, EmbeddingConfig, MetadataFeaturizer, PredictorModel, featurize

logger = logging.getLogger(__name__)

LN2 = math.log(2.0)


@dataclass(frozen=True)
class RegressionExample:
    input_text: str
    target: tuple[float, ...]

    def __post_init__(self) -> None:
        if not all(0.0 <= t <= 1.0 for t in self.target):
            raise ValueError("targets must lie in [0, 1]")


@dataclass(frozen=True)
class PreferencePair:
    preferred_text: str
    rejected_text: str
    page_id: str = ""

    def __post_init__(self) -> None:
        if self.preferred_text == self.rejected_text:
            raise ValueError("preferred and rejected texts are identical")


@dataclass(frozen=True)
class TrainConfig:
    lr_stage1: float = 1e-2
    lr_dpo: float = 1e-3
    lr_stage3: float = 1e-3
    dpo_beta: float = 0.1
    epochs_stage1: int = 40
    epochs_dpo: int = 10
    epochs_stage3: int = 30
    seed: int = 0
    # 0 means full batch
    batch_size: int = 128
    optimizer: str = "adam"
    l2: float = 0.0
    # use the one-sided coefficient form of the preference loss
    dpo_printed_form: bool = False

    def __post_init__(self) -> None:
        if self.lr_stage1 <= 0 or self.lr_dpo < 0 or self.lr_stage3 < 0:
            raise ValueError("learning rates must be positive (stage 3 / dpo may be 0)")
        if self.lr_stage3 >= self.lr_stage1:
            raise ValueError("lr_stage3 must be below lr_stage1")
        if self.dpo_beta <= 0:
            raise ValueError("dpo_beta must be positive")
        if self.optimizer not in ("adam", "gd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if min(self.epochs_stage1, self.epochs_dpo, self.epochs_stage3, self.batch_size) < 0:
            raise ValueError("epochs and batch_size must be >= 0")


# ---------------------------------------------------------------- data


def bag_matrix(texts: Sequence[str], cfg: EmbeddingConfig) -> sp.csr_matrix:
    indptr, indices, data = [0], [], []
    for t in texts:
        idx, w = featurize(t, cfg)
        indices.append(idx)
        data.append(w)
        indptr.append(indptr[-1] + idx.size)
    if texts:
        indices_arr, data_arr = np.concatenate(indices), np.concatenate(data)
    else:
        indices_arr, data_arr = np.zeros(0, dtype=np.int64), np.zeros(0)
    return sp.csr_matrix((data_arr, indices_arr, np.array(indptr)), shape=(len(texts), cfg.bucket_count))


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _log_sigmoid(z):
    return -np.logaddexp(0.0, -z)


# ---------------------------------------------------------------- losses


def regression_loss(model: PredictorModel, X: sp.csr_matrix, Y: np.ndarray, l2: float = 0.0,
                    grad: bool = True):
    """Mean over examples of the squared L2 error; returns (loss, grads)."""
    n = X.shape[0]
    enc = X @ model.embedding
    R = enc @ model.head_w + model.head_b - Y
    loss = float((R * R).sum() / n)
    if l2:
        loss += l2 * float((model.embedding ** 2).sum() + (model.head_w ** 2).sum())
    if not grad:
        return loss, None
    G = 2.0 * R / n
    g = {
        "head_w": enc.T @ G,
        "head_b": G.sum(axis=0),
        "embedding": np.asarray(X.T @ (G @ model.head_w.T)),
    }
    if l2:
        g["head_w"] += 2 * l2 * model.head_w
        g["embedding"] += 2 * l2 * model.embedding
    return loss, g


def preference_log_scores(model: PredictorModel, X: sp.csr_matrix) -> np.ndarray:
    return _log_sigmoid(X @ model.embedding @ model.pref_w + model.pref_b)


def _as_scorer(s):
    if isinstance(s, PredictorModel):
        return s.preference_score
    return s


def dpo_loss(scorer, ref_scorer, pair: PreferencePair, beta: float, printed_form: bool = False) -> float:
    """Pairwise preference loss for one pair.

    ``scorer``/``ref_scorer`` are models or callables text -> g(text) in (0, 1).
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    f, fr = _as_scorer(scorer), _as_scorer(ref_scorer)
    vals = [f(pair.preferred_text), fr(pair.preferred_text), f(pair.rejected_text), fr(pair.rejected_text)]
    if any(not v > 0 for v in vals):
        raise ValueError(f"scorer output must be strictly positive, got {vals}")
    gp, rp, gn, rn = (math.log(v) for v in vals)
    if printed_form:
        z = beta * (gp - rp) - (gn - rn)
    else:
        z = beta * ((gp - rp) - (gn - rn))
    return float(-_log_sigmoid(z))


def dpo_batch_loss(model: PredictorModel, Xp: sp.csr_matrix, Xn: sp.csr_matrix, ref_p: np.ndarray,
                   ref_n: np.ndarray, beta: float, printed_form: bool = False, grad: bool = True):
    """Mean preference loss over pairs and its gradient w.r.t. encoder + preference head."""
    n = Xp.shape[0]
    enc_p, enc_n = Xp @ model.embedding, Xn @ model.embedding
    sp_, sn_ = enc_p @ model.pref_w + model.pref_b, enc_n @ model.pref_w + model.pref_b
    lp, ln_ = _log_sigmoid(sp_), _log_sigmoid(sn_)
    cp, cn = beta, (1.0 if printed_form else beta)
    z = cp * (lp - ref_p) - cn * (ln_ - ref_n)
    loss = float(-_log_sigmoid(z).mean())
    if not grad:
        return loss, None
    dz = (_sigmoid(z) - 1.0) / n
    gp = dz * cp * (1.0 - _sigmoid(sp_))
    gn = -dz * cn * (1.0 - _sigmoid(sn_))
    g = {
        "pref_w": enc_p.T @ gp + enc_n.T @ gn,
        "pref_b": np.array(gp.sum() + gn.sum()),
        "embedding": np.asarray(Xp.T @ np.outer(gp, model.pref_w) + Xn.T @ np.outer(gn, model.pref_w)),
    }
    return loss, g


# ---------------------------------------------------------------- optimizer


class _Optimizer:
    def __init__(self, kind: str, lr: float, b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8):
        self.kind, self.lr, self.b1, self.b2, self.eps = kind, lr, b1, b2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, model: PredictorModel, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        for name, g in grads.items():
            p = getattr(model, name)
            if self.kind == "gd":
                upd = self.lr * g
            else:
                m = self.m.setdefault(name, np.zeros_like(g))
                v = self.v.setdefault(name, np.zeros_like(g))
                m *= self.b1
                m += (1 - self.b1) * g
                v *= self.b2
                v += (1 - self.b2) * g * g
                mhat = m / (1 - self.b1 ** self.t)
                vhat = v / (1 - self.b2 ** self.t)
                upd = self.lr * mhat / (np.sqrt(vhat) + self.eps)
            if name == "pref_b":
                model.pref_b = float(model.pref_b - upd)
            else:
                p -= upd


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    if batch_size == 0 or batch_size >= n:
        yield np.arange(n)
        return
    order = rng.permutation(n)
    for s in range(0, n, batch_size):
        yield order[s:s + batch_size]


# ---------------------------------------------------------------- stages


def _check_targets(model: PredictorModel, data: Sequence[RegressionExample]) -> np.ndarray:
    if not data:
        raise ValueError("no training examples")
    Y = np.array([ex.target for ex in data], dtype=float)
    if Y.ndim != 2 or Y.shape[1] != model.m:
        raise ValueError(f"target dimension {Y.shape[-1] if Y.ndim == 2 else '?'} != model m={model.m}")
    return Y


def _fit_regression(model: PredictorModel, data, lr: float, epochs: int, cfg: TrainConfig, seed_tag: int,
                    history: list[float] | None):
    Y = _check_targets(model, data)
    X = bag_matrix([ex.input_text for ex in data], model.config)
    rng = np.random.default_rng([cfg.seed, seed_tag])
    opt = _Optimizer(cfg.optimizer, lr)
    if history is not None:
        history.append(regression_loss(model, X, Y, cfg.l2, grad=False)[0])
    for _ in range(epochs):
        for rows in _batches(len(data), cfg.batch_size, rng):
            _, g = regression_loss(model, X[rows], Y[rows], cfg.l2)
            opt.step(model, g)
        if history is not None:
            history.append(regression_loss(model, X, Y, cfg.l2, grad=False)[0])
    return model


def train_regression(model: PredictorModel, data: Sequence[RegressionExample], cfg: TrainConfig = TrainConfig(),
                     history: list[float] | None = None) -> PredictorModel:
    """Stage 1. Returns a new model tagged stage 1; ``history`` collects per-epoch loss."""
    out = model.copy()
    _fit_regression(out, data, cfg.lr_stage1, cfg.epochs_stage1, cfg, 1, history)
    out.pref_w = out.head_w.mean(axis=1).copy()
    out.pref_b = float(out.head_b.mean())
    out.stage = 1
    return out


def train_dpo(model: PredictorModel, pairs: Sequence[PreferencePair], cfg: TrainConfig = TrainConfig(),
              history: list[float] | None = None) -> PredictorModel:
    """Stage 2: preference post-training against the frozen stage-1 model."""
    if model.stage != 1:
        raise ValueError(f"preference training needs a stage-1 model, got stage {model.stage}")
    if not pairs:
        raise ValueError("no preference pairs")
    ref = model.copy()
    out = model.copy()
    Xp = bag_matrix([p.preferred_text for p in pairs], model.config)
    Xn = bag_matrix([p.rejected_text for p in pairs], model.config)
    ref_p, ref_n = preference_log_scores(ref, Xp), preference_log_scores(ref, Xn)
    rng = np.random.default_rng([cfg.seed, 2])
    opt = _Optimizer(cfg.optimizer, cfg.lr_dpo)
    args = (cfg.dpo_beta, cfg.dpo_printed_form)
    if history is not None:
        history.append(dpo_batch_loss(out, Xp, Xn, ref_p, ref_n, *args, grad=False)[0])
    for _ in range(cfg.epochs_dpo):
        for rows in _batches(len(pairs), cfg.batch_size, rng):
            _, g = dpo_batch_loss(out, Xp[rows], Xn[rows], ref_p[rows], ref_n[rows], *args)
            opt.step(out, g)
        if history is not None:
            history.append(dpo_batch_loss(out, Xp, Xn, ref_p, ref_n, *args, grad=False)[0])
    out.stage = 2
    return out


def train_final(model: PredictorModel, data: Sequence[RegressionExample], cfg: TrainConfig = TrainConfig(),
                history: list[float] | None = None) -> PredictorModel:
    """Stage 3: low-learning-rate regression on document-level targets."""
    if model.stage != 2:
        raise ValueError(f"final regression needs a stage-2 model, got stage {model.stage}")
    out = model.copy()
    _fit_regression(out, data, cfg.lr_stage3, cfg.epochs_stage3, cfg, 3, history)
    out.stage = 3
    return out


def train_pipeline(model: PredictorModel, page_data: Sequence[RegressionExample], pairs: Sequence[PreferencePair],
                   doc_data: Sequence[RegressionExample], cfg: TrainConfig = TrainConfig()):
    """Run all three stages; returns (stage1, stage2, stage3) models."""
    s1 = train_regression(model, page_data, cfg)
    s2 = train_dpo(s1, pairs, cfg)
    s3 = train_final(s2, doc_data, cfg)
    return s1, s2, s3


# ---------------------------------------------------------------- evaluation helpers


def r_squared(y_true: np.ndarray, y_pred: np.ndarray) -> np.ndarray:
    """Per-column coefficient of determination."""
    y_true, y_pred = np.atleast_2d(y_true), np.atleast_2d(y_pred)
    ss_res = ((y_true - y_pred) ** 2).sum(axis=0)
    ss_tot = ((y_true - y_true.mean(axis=0)) ** 2).sum(axis=0)
    return 1.0 - ss_res / np.where(ss_tot > 0, ss_tot, np.nan)


def ranking_accuracy(model: PredictorModel, pairs: Sequence[PreferencePair]) -> float:
    Xp = bag_matrix([p.preferred_text for p in pairs], model.config)
    Xn = bag_matrix([p.rejected_text for p in pairs], model.config)
    return float(np.mean(preference_log_scores(model, Xp) > preference_log_scores(model, Xn)))


# ---------------------------------------------------------------- CLS II


def train_cls2(metas: Sequence[DocumentMetadata], labels: Sequence[bool], l2: float = 1e-3) -> Cls2Model:
    """Logistic regression over metadata features, fitted with L-BFGS."""
    if not metas or len(metas) != len(labels):
        raise ValueError("need matching, non-empty metadata and labels")
    feat = MetadataFeaturizer.fit(metas)
    X = np.stack([feat.transform(m) for m in metas])
    y = np.asarray(labels, dtype=float)
    n, d = X.shape

    def f(theta):
        w, b = theta[:d], theta[d]
        z = X @ w + b
        loss = np.mean(np.logaddexp(0.0, z) - y * z) + l2 * w @ w
        r = (_sigmoid(z) - y) / n
        return loss, np.append(X.T @ r + 2 * l2 * w, r.sum())

    res = scipy.optimize.minimize(f, np.zeros(d + 1), jac=True, method="L-BFGS-B")
    return Cls2Model(feat, res.x[:d].copy(), float(res.x[d]))


# ---------------------------------------------------------------- files


def write_regression_jsonl(path: str | Path, data: Iterable[RegressionExample]) -> Path:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for ex in data:
            fh.write(json.dumps({"text": ex.input_text, "targets": list(ex.target)}) + "\n")
    return path


def read_regression_jsonl(path: str | Path) -> list[RegressionExample]:
    out = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                d = json.loads(line)
                out.append(RegressionExample(d["text"], tuple(float(x) for x in d["targets"])))
    return out


def write_pairs_jsonl(path: str | Path, pairs: Iterable[PreferencePair]) -> Path:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for p in pairs:
            fh.write(json.dumps({"page_id": p.page_id, "preferred": p.preferred_text,
                                 "rejected": p.rejected_text}) + "\n")
    return path


def read_pairs_jsonl(path: str | Path) -> list[PreferencePair]:
    out = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                d = json.loads(line)
                out.append(PreferencePair(d["preferred"], d["rejected"], d.get("page_id", "")))
    return out


def pairs_from_records(records: Sequence[PreferenceRecord], texts: dict[tuple[str, str], str]) -> list[PreferencePair]:
    """Turn annotation records into training pairs; indifference records are dropped.

    ``texts`` maps (page_id, parser_id) to that parser's output for the page.
    """
    out = []
    for r in records:
        if r.indifferent or NEITHER in (r.winner_parser, r.loser_parser):
            continue
        win, lose = texts.get((r.page_id, r.winner_parser)), texts.get((r.page_id, r.loser_parser))
        if win is None or lose is None or win == lose:
            continue
        out.append(PreferencePair(win, lose, r.page_id))
    return out
