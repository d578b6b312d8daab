from __future__ import annotations

import json
import logging
from pathlib import Path

import pytest
import yaml

from parseroute.cli import (
    ConfigError,
    config_from_dict,
    dump_config,
    load_config,
    main,
    parse_workers,
    resolve_strategy,
)


def write_cfg(tmp_path: Path, **extra) -> Path:
    raw = {"pdf_dir": str(tmp_path / "pdfs"), "out_dir": str(tmp_path / "out"),
           "parser_settings": {"name": "pymupdf"}, **extra}
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(raw))
    return path


@pytest.fixture(scope="module")
def staged(tmp_path_factory):
    """A config pointing at 30 synthetic documents staged from archives."""
    tmp = tmp_path_factory.mktemp("cli")
    cfg = write_cfg(tmp, reproducible=True, batch_size=10)
    assert main(["stage", "--config", str(cfg), "--synthesize", "30", "--archive-size", "12"]) == 0
    return tmp, cfg


# ---------------------------------------------------------------- config


def test_minimal_config_defaults(tmp_path):
    (tmp_path / "pdfs").mkdir()
    cfg = load_config(write_cfg(tmp_path), env={})
    assert cfg.strategy == "single:extract"
    assert cfg.alpha == 0.05
    assert cfg.batch_size == 256
    assert cfg.workers == {"default": 1}
    assert cfg.metric.rouge_variant == "rouge1_f"


@pytest.mark.parametrize("alpha", [1.5, -0.1, "lots"])
def test_bad_alpha(tmp_path, alpha):
    with pytest.raises(ConfigError, match="alpha"):
        config_from_dict({"pdf_dir": "x", "out_dir": "y", "parser_settings": {"name": "pymupdf"}, "alpha": alpha},
                         require_pdf_dir=False, env={})


@pytest.mark.parametrize("drop, key", [("pdf_dir", "pdf_dir"), ("out_dir", "out_dir"),
                                       ("parser_settings", "parser_settings.name")])
def test_missing_key_is_named(drop, key):
    raw = {"pdf_dir": "x", "out_dir": "y", "parser_settings": {"name": "pymupdf"}}
    del raw[drop]
    with pytest.raises(ConfigError, match=f"missing required key: {key}"):
        config_from_dict(raw, require_pdf_dir=False, env={})


def test_unknown_keys_warn(caplog):
    raw = {"pdf_dir": "x", "out_dir": "y", "parser_settings": {"name": "pymupdf", "colour": 1}, "speed": 9}
    with caplog.at_level(logging.WARNING, logger="parseroute"):
        config_from_dict(raw, require_pdf_dir=False, env={})
    text = caplog.text
    assert "'speed'" in text and "'colour'" in text


def test_env_overrides_paths(tmp_path):
    (tmp_path / "elsewhere").mkdir()
    env = {"ADAPARSE_PDF_DIR": str(tmp_path / "elsewhere"), "ADAPARSE_OUT_DIR": str(tmp_path / "o2")}
    cfg = load_config(write_cfg(tmp_path), env=env)
    assert cfg.pdf_dir == tmp_path / "elsewhere"
    assert cfg.out_dir == tmp_path / "o2"


def test_missing_pdf_dir_is_an_error(tmp_path):
    with pytest.raises(ConfigError, match="does not exist"):
        load_config(write_cfg(tmp_path), env={})


def test_dump_round_trip(tmp_path):
    (tmp_path / "pdfs").mkdir()
    cfg = load_config(write_cfg(tmp_path, alpha=0.1, workers="extract=2,vit=1", strategy="adaparse"), env={})
    out = tmp_path / "again.yaml"
    dump_config(cfg, out)
    assert load_config(out, env={}) == cfg


def test_aliases_and_workers():
    assert resolve_strategy("pymupdf") == "single:extract"
    assert resolve_strategy("Nougat") == "single:vit"
    assert resolve_strategy("adaparse") == "adaparse_llm"
    assert resolve_strategy("adaparse_ft") == "adaparse_ft"
    assert resolve_strategy("single:ocr") == "single:ocr"
    assert parse_workers(3) == {"default": 3}
    assert parse_workers("extract=2,vit=1") == {"extract": 2, "vit": 1}
    with pytest.raises(ConfigError):
        parse_workers("extract=0")
    with pytest.raises(ConfigError):
        parse_workers("extract")


# ---------------------------------------------------------------- subcommands


def test_stage_writes_json(staged):
    tmp, _ = staged
    assert len(list((tmp / "pdfs").glob("*.zip"))) == 3
    assert len(list((tmp / "out" / "staged").glob("*.json"))) == 30


def test_run_then_eval_perfect(staged, capsys):
    tmp, cfg = staged
    assert main(["run", "--config", str(cfg), "--strategy", "single:perfect"]) == 0
    assert main(["eval", "--config", str(cfg)]) == 0
    out = capsys.readouterr().out
    table = (tmp / "out" / "eval" / "table.txt").read_text()
    assert table in out
    row = table.splitlines()[2].split()
    assert row[0] == "single:perfect"
    assert row[1:5] == ["100.0", "100.0", "100.0", "100.0"]
    csv_row = (tmp / "out" / "eval" / "table.csv").read_text().splitlines()[1].split(",")
    assert float(csv_row[3]) == 1.0


def test_run_adaptive_oracle_respects_cap(staged):
    tmp, cfg = staged
    assert main(["run", "--config", str(cfg), "--strategy", "adaparse", "--alpha", "0.1"]) != 0  # no model yet
    raw = yaml.safe_load(cfg.read_text())
    raw["parser_settings"]["predictor"] = "oracle"
    raw["batch_size"] = 256
    ocfg = tmp / "oracle.yaml"
    ocfg.write_text(yaml.safe_dump(raw))
    assert main(["run", "--config", str(ocfg), "--strategy", "adaparse"]) == 0
    report = json.loads((tmp / "out" / "run" / "report.json").read_text())
    assert report["strategy"] == "adaparse_llm"
    assert report["heavy_fraction"] <= 0.05
    assert report["status_counts"].get("ok") == 30


def test_reproducible_runs_are_identical(staged):
    tmp, cfg = staged
    run = tmp / "out" / "run"
    blobs = []
    for _ in range(2):
        assert main(["run", "--config", str(cfg), "--strategy", "pymupdf", "--workers", "2"]) == 0
        blobs.append({name: (run / name).read_bytes() for name in ("manifest.jsonl", "texts.jsonl", "report.json")})
    assert blobs[0] == blobs[1]


def test_train_writes_models(staged):
    tmp, cfg = staged
    raw = yaml.safe_load(cfg.read_text())
    raw["training"] = {"epochs_stage1": 2, "epochs_dpo": 1, "epochs_stage3": 2}
    tcfg = tmp / "train.yaml"
    tcfg.write_text(yaml.safe_dump(raw))
    assert main(["train", "--config", str(tcfg), "--pref-pages", "10"]) == 0
    models = tmp / "out" / "models"
    for name in ("predictor_stage1.json", "predictor_stage2.json", "predictor_stage3.json", "predictor.json",
                 "cls2.json"):
        assert (models / name).is_file()
    summary = json.loads((models / "train_summary.json").read_text())
    assert summary["documents"] == 30
    raw["training"] = {"epochs_final": 2}
    tcfg.write_text(yaml.safe_dump(raw))
    assert main(["train", "--config", str(tcfg)]) == 2
    assert main(["run", "--config", str(cfg), "--strategy", "adaparse_ft"]) == 0
    assert main(["run", "--config", str(cfg), "--strategy", "adaparse"]) == 0


def test_bench_rows_and_svg(tmp_path):
    rc = main(["bench", "--worker-counts", "1,2,4", "--docs", "16", "--seconds-per-doc", "0.02", "--svg",
               "--out", str(tmp_path)])
    assert rc == 0
    lines = (tmp_path / "bench" / "bench.csv").read_text().splitlines()
    assert len(lines) == 4
    tput = [float(line.split(",")[2]) for line in lines[1:]]
    assert tput == sorted(tput)
    assert (tmp_path / "bench" / "bench.svg").read_text().lstrip().startswith("<?xml")


def test_error_exit_codes(tmp_path, capsys):
    assert main(["run"]) == 2
    assert main(["run", "--config", str(tmp_path / "nope.yaml")]) == 2
    (tmp_path / "pdfs").mkdir()
    cfg = write_cfg(tmp_path)
    assert main(["run", "--config", str(cfg)]) == 1  # nothing to stage
    assert main(["eval", "--config", str(cfg)]) == 1
    assert main(["bench", "--worker-counts", "0"]) == 1
    err = capsys.readouterr().err
    assert "config error" in err
    with pytest.raises(SystemExit):
        main(["frobnicate"])
