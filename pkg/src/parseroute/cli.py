"""Command-line driver: stage, train, run, eval and bench.

The config file is YAML with three required keys::

    pdf_dir: /path/to/zipped/documents
    out_dir: /path/to/output
    parser_settings:
      name: pymupdf

Everything else has a default. ``ADAPARSE_PDF_DIR`` and ``ADAPARSE_OUT_DIR``
override the two paths.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import yaml

from .corpus import Corpus, StagingError, synth_corpus, write_archive
from .harness import (
    ComparisonTable,
    Row,
    bench_throughput,
    score_matrix,
    simulate_preferences,
    training_data,
    write_bench_csv,
)
from .metrics import (
    InsufficientDataError,
    MetricConfig,
    PreferenceRecord,
    accepted_tokens,
    quality_scores,
    win_rate,
)
from .parsers import DEFAULT_PARSER, HEAVY_PARSER, ParserProfile, perfect_mock, reference_parsers
from .scheduler import DEFAULT_BATCH_SIZE, STRATEGIES, run_campaign
from .selector import Cls2Model, EmbeddingConfig, PredictorModel, heavy_cap
from .training import (
    TrainConfig,
    pairs_from_records,
    r_squared,
    ranking_accuracy,
    read_pairs_jsonl,
    read_regression_jsonl,
    train_cls2,
    train_pipeline,
    write_pairs_jsonl,
    write_regression_jsonl,
)

logger = logging.getLogger("parseroute")

REQUIRED = ("pdf_dir", "out_dir", "parser_settings.name")
TOP_KEYS = {"pdf_dir", "out_dir", "parser_settings", "strategy", "alpha", "batch_size", "workers", "metric",
            "seed", "backend", "reproducible", "training", "embedding"}
PARSER_KEYS = {"name", "default", "heavy", "predictor", "cls2", "cost_mode", "time_scale", "crash_rate",
               "external"}

# tool names people actually type, mapped to the mock parser playing that role
ALIASES = {
    "pymupdf": "extract",
    "pypdf": "extract_lite",
    "tesseract": "ocr",
    "nougat": "vit",
    "marker": "vit_layout",
    "grobid": "grobid",
    "adaparse": "adaparse_llm",
}


class ConfigError(ValueError):
    pass


def resolve_strategy(name: str) -> str:
    name = ALIASES.get(name.lower(), name)
    if name in STRATEGIES or name.startswith("single:"):
        return name
    return f"single:{name}"


@dataclass
class CampaignConfig:
    pdf_dir: Path
    out_dir: Path
    parser_settings: dict
    strategy: str
    alpha: float = 0.05
    batch_size: int = DEFAULT_BATCH_SIZE
    workers: dict[str, int] = field(default_factory=lambda: {"default": 1})
    metric: MetricConfig = field(default_factory=MetricConfig)
    seed: int = 0
    backend: str = "process"
    reproducible: bool = False
    training: dict = field(default_factory=dict)
    embedding: dict = field(default_factory=dict)

    @property
    def default_parser(self) -> str:
        return self.parser_settings.get("default", DEFAULT_PARSER)

    @property
    def heavy_parser(self) -> str:
        return self.parser_settings.get("heavy", HEAVY_PARSER)

    def to_dict(self) -> dict:
        return {
            "pdf_dir": str(self.pdf_dir), "out_dir": str(self.out_dir),
            "parser_settings": dict(self.parser_settings), "strategy": self.strategy, "alpha": self.alpha,
            "batch_size": self.batch_size, "workers": dict(self.workers), "metric": self.metric.to_dict(),
            "seed": self.seed, "backend": self.backend, "reproducible": self.reproducible,
            "training": dict(self.training), "embedding": dict(self.embedding),
        }


def parse_workers(value: Any) -> dict[str, int]:
    """``4`` or ``{extract: 2, vit: 1}`` or ``"extract=2,vit=1"``."""
    if isinstance(value, bool):
        raise ConfigError(f"bad workers value {value!r}")
    if isinstance(value, int):
        out = {"default": value}
    elif isinstance(value, str):
        value = value.strip()
        if value.isdigit():
            out = {"default": int(value)}
        else:
            out = {}
            for part in filter(None, value.split(",")):
                key, sep, n = part.partition("=")
                if not sep or not n.strip().isdigit():
                    raise ConfigError(f"bad workers entry {part!r}; expected parser=count")
                out[key.strip()] = int(n)
    elif isinstance(value, dict):
        out = {str(k): v for k, v in value.items()}
    else:
        raise ConfigError(f"bad workers value {value!r}")
    for k, n in out.items():
        if not isinstance(n, int) or isinstance(n, bool) or n < 1:
            raise ConfigError(f"workers[{k}] must be a positive integer, got {n!r}")
    return out


def config_from_dict(raw: dict, *, require_pdf_dir: bool = True, env: dict | None = None) -> CampaignConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    env = os.environ if env is None else env
    raw = dict(raw)
    if env.get("ADAPARSE_PDF_DIR"):
        raw["pdf_dir"] = env["ADAPARSE_PDF_DIR"]
    if env.get("ADAPARSE_OUT_DIR"):
        raw["out_dir"] = env["ADAPARSE_OUT_DIR"]
    for key in ("pdf_dir", "out_dir", "parser_settings"):
        if raw.get(key) in (None, ""):
            raise ConfigError(f"missing required key: {key if key != 'parser_settings' else 'parser_settings.name'}")
    ps = raw["parser_settings"]
    if not isinstance(ps, dict) or not ps.get("name"):
        raise ConfigError("missing required key: parser_settings.name")
    for key in sorted(set(raw) - TOP_KEYS):
        logger.warning("ignoring unknown config key %r", key)
    for key in sorted(set(ps) - PARSER_KEYS):
        logger.warning("ignoring unknown parser_settings key %r", key)

    alpha = raw.get("alpha", 0.05)
    if isinstance(alpha, bool) or not isinstance(alpha, (int, float)) or not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must be a number in [0, 1], got {alpha!r}")
    batch_size = raw.get("batch_size", DEFAULT_BATCH_SIZE)
    if isinstance(batch_size, bool) or not isinstance(batch_size, int) or batch_size < 1:
        raise ConfigError(f"batch_size must be a positive integer, got {batch_size!r}")
    try:
        metric = MetricConfig(**(raw.get("metric") or {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad metric section: {exc}") from exc
    backend = raw.get("backend", "process")
    if backend not in ("process", "thread"):
        raise ConfigError(f"backend must be process or thread, got {backend!r}")

    cfg = CampaignConfig(
        pdf_dir=Path(raw["pdf_dir"]),
        out_dir=Path(raw["out_dir"]),
        parser_settings=dict(ps),
        strategy=resolve_strategy(str(raw.get("strategy") or ps["name"])),
        alpha=float(alpha),
        batch_size=batch_size,
        workers=parse_workers(raw.get("workers", 1)),
        metric=metric,
        seed=int(raw.get("seed", 0)),
        backend=backend,
        reproducible=bool(raw.get("reproducible", False)),
        training=dict(raw.get("training") or {}),
        embedding=dict(raw.get("embedding") or {}),
    )
    if require_pdf_dir and not cfg.pdf_dir.is_dir():
        raise ConfigError(f"pdf_dir does not exist: {cfg.pdf_dir}")
    return cfg


def load_config(path: str | Path, *, require_pdf_dir: bool = True, env: dict | None = None) -> CampaignConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    cfg = config_from_dict(raw or {}, require_pdf_dir=require_pdf_dir, env=env)
    logger.info("effective config:\n%s", dump_config(cfg).rstrip())
    return cfg


def dump_config(cfg: CampaignConfig, path: str | Path | None = None) -> str:
    text = yaml.safe_dump(cfg.to_dict(), sort_keys=False)
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


# ---------------------------------------------------------------- shared helpers


def build_parsers(cfg: CampaignConfig) -> list[ParserProfile]:
    ps = cfg.parser_settings
    parsers = reference_parsers(ps.get("cost_mode", "none"), float(ps.get("time_scale", 1.0)),
                                float(ps.get("crash_rate", 0.0)))
    parsers.append(perfect_mock("perfect"))
    for pid, spec in (ps.get("external") or {}).items():
        spec = {"command": spec} if isinstance(spec, str) else dict(spec)
        parsers.append(ParserProfile(pid, "external", float(spec.get("avg_cost_seconds", 1.0)),
                                     command=spec["command"],
                                     timeout_seconds=float(spec.get("timeout_seconds", 120.0))))
    return parsers


def staged_dir(cfg: CampaignConfig) -> Path:
    return cfg.out_dir / "staged"


def stage(cfg: CampaignConfig) -> Corpus:
    archives = sorted(cfg.pdf_dir.glob("*.zip"))
    if archives:
        from .corpus import stage_archives

        return stage_archives(archives, staged_dir(cfg))
    if any(cfg.pdf_dir.glob("*.json")):
        return Corpus.load(cfg.pdf_dir)
    raise StagingError(f"no .zip archives or .json documents in {cfg.pdf_dir}")


def load_corpus(cfg: CampaignConfig) -> Corpus:
    """The staged corpus, staging first when nothing is staged yet."""
    if staged_dir(cfg).is_dir() and any(staged_dir(cfg).glob("*.json")):
        return Corpus.load(staged_dir(cfg))
    return stage(cfg)


def models_dir(cfg: CampaignConfig) -> Path:
    return cfg.out_dir / "models"


def load_predictor(cfg: CampaignConfig, corpus: Corpus, parsers: Sequence[ParserProfile]):
    spec = cfg.parser_settings.get("predictor")
    if spec == "oracle":
        pool = [p for p in parsers if p.parser_id != "perfect"]
        logger.info("scoring %d documents with %d parsers for the oracle predictor", len(corpus), len(pool))
        return score_matrix(list(corpus.docs), pool, cfg.metric, cfg.default_parser).oracle()
    path = Path(spec) if spec else models_dir(cfg) / "predictor.json"
    if not path.is_file():
        raise FileNotFoundError(f"no predictor at {path}; run `train` or set parser_settings.predictor")
    return PredictorModel.load(path)


def load_cls2(cfg: CampaignConfig) -> Cls2Model | None:
    spec = cfg.parser_settings.get("cls2")
    path = Path(spec) if spec else models_dir(cfg) / "cls2.json"
    if not path.is_file():
        if spec:
            raise FileNotFoundError(f"no CLS II model at {path}")
        logger.warning("no CLS II model found; every valid document stays on the default parser")
        return None
    return Cls2Model.from_dict(json.loads(path.read_text(encoding="utf-8")))


def read_jsonl(path: Path) -> list[dict]:
    with path.open(encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


# ---------------------------------------------------------------- subcommands


def cmd_stage(args, cfg: CampaignConfig) -> int:
    if args.synthesize:
        docs = synth_corpus(args.synthesize, seed=cfg.seed)
        per = max(1, args.archive_size)
        for i in range(0, len(docs), per):
            write_archive(docs[i:i + per], cfg.pdf_dir / f"docs-{i // per:04d}.zip")
        logger.info("wrote %d synthetic documents to %s", len(docs), cfg.pdf_dir)
    corpus = stage(cfg)
    skipped = sum(1 for e in corpus.log if e.get("status") != "ok")
    print(f"staged {len(corpus)} documents ({skipped} skipped) into {corpus.local_dir}")
    return 0


def cmd_train(args, cfg: CampaignConfig) -> int:
    corpus = load_corpus(cfg)
    docs = list(corpus.docs)
    missing = [d.doc_id for d in docs if d.groundtruth is None]
    if missing:
        raise ValueError(f"training needs groundtruth; {len(missing)} documents lack it (first: {missing[0]})")
    parsers = [p for p in build_parsers(cfg) if p.parser_id != "perfect" and p.command is None]
    pids = [p.parser_id for p in parsers]
    try:
        tcfg = TrainConfig(**{"seed": cfg.seed, **cfg.training})
        ecfg = EmbeddingConfig(**cfg.embedding)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad training or embedding section: {exc}") from exc
    data_dir = cfg.out_dir / "train_data"
    data_dir.mkdir(parents=True, exist_ok=True)

    pages, documents, results = training_data(docs, parsers, cfg.default_parser, cfg.metric)
    if args.pages:
        pages = read_regression_jsonl(args.pages)
    if args.pairs:
        pairs = read_pairs_jsonl(args.pairs)
    else:
        records, texts = simulate_preferences(docs, results, pids, args.pref_pages, seed=cfg.seed,
                                              metric_cfg=cfg.metric)
        with (data_dir / "preferences.jsonl").open("w", encoding="utf-8") as fh:
            for rec in records:
                fh.write(json.dumps({"page_id": rec.page_id, "winner_parser": rec.winner_parser,
                                     "loser_parser": rec.loser_parser, "annotator_id": rec.annotator_id,
                                     "options": list(rec.options) if rec.options else None}) + "\n")
        pairs = pairs_from_records(records, texts)
    write_regression_jsonl(data_dir / "pages.jsonl", pages)
    write_regression_jsonl(data_dir / "documents.jsonl", documents)
    write_pairs_jsonl(data_dir / "pairs.jsonl", pairs)

    model = PredictorModel.init(ecfg, pids, seed=cfg.seed)
    s1, s2, s3 = train_pipeline(model, pages, pairs, documents, tcfg)
    out = models_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    for i, m in enumerate((s1, s2, s3), start=1):
        m.save(out / f"predictor_stage{i}.json")
    s3.save(out / "predictor.json")

    h, d = pids.index(cfg.heavy_parser), pids.index(cfg.default_parser)
    labels = [ex.target[h] > ex.target[d] + args.cls2_margin for ex in documents]
    cls2 = train_cls2([doc.metadata for doc in docs], labels)
    (out / "cls2.json").write_text(json.dumps(cls2.to_dict(), sort_keys=True) + "\n", encoding="utf-8")

    y = np.array([ex.target for ex in documents])
    pred = s3.predict([doc.doc_id for doc in docs], [ex.input_text for ex in documents])
    summary = {"documents": len(docs), "pages": len(pages), "pairs": len(pairs),
               "train_r2": dict(zip(pids, np.round(r_squared(y, pred), 4).tolist())),
               "pair_accuracy_stage2": ranking_accuracy(s2, pairs) if pairs else None}
    (out / "train_summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    print(json.dumps(summary, indent=2))
    return 0


def cmd_run(args, cfg: CampaignConfig) -> int:
    corpus = load_corpus(cfg)
    parsers = build_parsers(cfg)
    predictor = load_predictor(cfg, corpus, parsers) if cfg.strategy == "adaparse_llm" else None
    cls2 = load_cls2(cfg) if cfg.strategy == "adaparse_ft" else None
    report = run_campaign(
        corpus, parsers, cfg.strategy, cfg.alpha, cfg.workers, batch_size=cfg.batch_size,
        out_dir=cfg.out_dir / "run", predictor=predictor, cls2=cls2, default_parser=cfg.default_parser,
        heavy_parser=cfg.heavy_parser, metric_cfg=cfg.metric, backend=cfg.backend,
        reproducible=cfg.reproducible,
    )
    dump_config(cfg, cfg.out_dir / "run" / "config.yaml")
    print(report.table())
    return 0


def evaluate_manifest(manifest: Path, texts: Path, corpus: Corpus, metric: MetricConfig, name: str,
                      preferences: Sequence[PreferenceRecord] = ()) -> ComparisonTable:
    """Quality table for one campaign: an overall row plus one row per parser used."""
    by_id = corpus.by_id()
    pages_of = {r["doc_id"]: r["pages"] for r in read_jsonl(texts)}
    rows: dict[str, list] = {}
    for rec in read_jsonl(manifest):
        doc_id = rec["doc_id"]
        if doc_id not in by_id:
            raise KeyError(f"manifest document {doc_id} is not in the corpus")
        doc = by_id[doc_id]
        if doc.groundtruth is None:
            raise ValueError(f"document {doc_id} has no groundtruth")
        if doc_id not in pages_of:
            raise KeyError(f"no parsed text for {doc_id} in {texts}")
        s = quality_scores(pages_of[doc_id], doc.groundtruth, len(doc.pages), metric)
        rows.setdefault(rec["parser_id"], []).append((doc, s))

    def row(label: str, items: list, wr_parser: str | None) -> Row:
        n = len(items)
        wr = None
        if preferences and wr_parser:
            try:
                wr = win_rate(preferences, wr_parser)
            except InsufficientDataError:
                wr = None
        try:
            at = accepted_tokens([(d.token_count, s.bleu) for d, s in items], metric.at_threshold)
        except InsufficientDataError:
            at = 0.0
        return Row(label, sum(s.coverage for _, s in items) / n, sum(s.bleu for _, s in items) / n,
                   sum(s.rouge for _, s in items) / n, sum(s.car for _, s in items) / n, at, wr)

    if not rows:
        raise ValueError(f"manifest {manifest} is empty")
    table = ComparisonTable(name)
    everything = [x for items in rows.values() for x in items]
    single = name.split(":", 1)[1] if name.startswith("single:") else None
    table.rows.append(row(name, everything, single))
    if len(rows) > 1:
        for pid in sorted(rows):
            table.rows.append(row(f"  {pid} ({len(rows[pid])} docs)", rows[pid], pid))
    return table


def cmd_eval(args, cfg: CampaignConfig) -> int:
    run_dir = Path(args.run_dir) if args.run_dir else cfg.out_dir / "run"
    manifest, texts = run_dir / "manifest.jsonl", run_dir / "texts.jsonl"
    for p in (manifest, texts):
        if not p.is_file():
            raise FileNotFoundError(f"{p} not found; run the campaign first")
    prefs = [PreferenceRecord.from_dict(d) for d in read_jsonl(Path(args.preferences))] if args.preferences else []
    strategy = cfg.strategy
    report_path = run_dir / "report.json"
    if report_path.is_file():
        strategy = json.loads(report_path.read_text(encoding="utf-8")).get("strategy", strategy)
    table = evaluate_manifest(manifest, texts, load_corpus(cfg), cfg.metric, strategy, prefs)
    out = cfg.out_dir / "eval"
    out.mkdir(parents=True, exist_ok=True)
    (out / "table.txt").write_text(table.render() + "\n", encoding="utf-8")
    (out / "table.csv").write_text(table.to_csv(), encoding="utf-8")
    print(table.render())
    return 0


def write_bench_svg(rows: Sequence[dict], path: Path) -> Path:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "parseroute"
    fig, ax = plt.subplots(figsize=(5, 3.5))
    w = [r["workers"] for r in rows]
    ax.plot(w, [r["throughput"] for r in rows], marker="o", label="measured")
    ax.plot(w, [rows[0]["throughput"] * x / rows[0]["workers"] for x in w], ls="--", color="grey", label="linear")
    ax.set_xlabel("workers")
    ax.set_ylabel("documents / second")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def cmd_bench(args, cfg: CampaignConfig | None) -> int:
    counts = [int(x) for x in args.worker_counts.split(",") if x.strip()]
    if not counts or min(counts) < 1:
        raise ValueError(f"bad --worker-counts {args.worker_counts!r}")
    rows = bench_throughput(counts, n_docs=args.docs, seconds_per_doc=args.seconds_per_doc,
                            cost_mode=args.cost_mode, backend=cfg.backend if cfg else "process",
                            seed=cfg.seed if cfg else 0)
    out = (cfg.out_dir if cfg else Path(args.out)) / "bench"
    out.mkdir(parents=True, exist_ok=True)
    write_bench_csv(rows, out / "bench.csv")
    if args.svg:
        write_bench_svg(rows, out / "bench.svg")
    for r in rows:
        print(f"workers={r['workers']:<3d} throughput={r['throughput']:8.2f} docs/s  efficiency={r['efficiency']:.3f}")
    return 0


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML campaign config")
    common.add_argument("--strategy", help="adaparse_llm, adaparse_ft, single:<parser> or a parser alias")
    common.add_argument("--alpha", type=float, help="per-batch heavy-parser fraction")
    common.add_argument("--workers", help="worker count, or per-parser counts like extract=2,vit=1,probe=1")
    common.add_argument("--seed", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="parseroute", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stage", parents=[common], help="unpack document archives into out_dir/staged")
    p.add_argument("--synthesize", type=int, default=0, metavar="N",
                   help="first write N synthetic documents as archives into pdf_dir")
    p.add_argument("--archive-size", type=int, default=100, help="documents per synthetic archive")

    p = sub.add_parser("train", parents=[common], help="train the parser-choice predictor and CLS II")
    p.add_argument("--pages", help="page-level regression JSONL (default: derived from the corpus)")
    p.add_argument("--pairs", help="preference pairs JSONL (default: simulated judgements)")
    p.add_argument("--pref-pages", type=int, default=200, help="pages to simulate judgements for")
    p.add_argument("--cls2-margin", type=float, default=0.05)

    sub.add_parser("run", parents=[common], help="run a parsing campaign")

    p = sub.add_parser("eval", parents=[common], help="score a campaign against groundtruth")
    p.add_argument("--run-dir", help="campaign directory (default: out_dir/run)")
    p.add_argument("--preferences", help="preference records JSONL for the WR column")

    p = sub.add_parser("bench", parents=[common], help="throughput versus worker count")
    p.add_argument("--worker-counts", default="1,2,4,8")
    p.add_argument("--docs", type=int, default=64)
    p.add_argument("--seconds-per-doc", type=float, default=0.02)
    p.add_argument("--cost-mode", choices=("sleep", "spin"), default="sleep",
                   help="sleep models latency-bound parsers, spin burns CPU")
    p.add_argument("--svg", action="store_true", help="also write bench.svg")
    p.add_argument("--out", default=".", help="output directory when no --config is given")
    return ap


def apply_overrides(cfg: CampaignConfig, args) -> CampaignConfig:
    changes: dict[str, Any] = {}
    if args.strategy:
        changes["strategy"] = resolve_strategy(args.strategy)
    if args.alpha is not None:
        heavy_cap(args.alpha, 1)
        changes["alpha"] = args.alpha
    if args.workers:
        changes["workers"] = parse_workers(args.workers)
    if args.seed is not None:
        changes["seed"] = args.seed
    return replace(cfg, **changes) if changes else cfg


COMMANDS = {"stage": cmd_stage, "train": cmd_train, "run": cmd_run, "eval": cmd_eval, "bench": cmd_bench}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = None
        if args.config:
            cfg = load_config(args.config, require_pdf_dir=not (args.command == "stage" and args.synthesize))
            cfg = apply_overrides(cfg, args)
            if args.command == "stage" and args.synthesize:
                cfg.pdf_dir.mkdir(parents=True, exist_ok=True)
        elif args.command != "bench":
            raise ConfigError(f"{args.command} needs --config")
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"parseroute: config error: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        print("parseroute: interrupted", file=sys.stderr)
        return 130
    except Exception as exc:  # surface any module error with its message
        logger.debug("failure", exc_info=True)
        print(f"parseroute {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
