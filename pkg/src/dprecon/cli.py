"""Command-line pipeline: sanitize -> attack -> evaluate -> sweep -> report.

One JSON config file drives every command; flags override the common knobs.
Each run writes its artifacts plus a manifest (config snapshot, seeds,
model ids, template hashes, input/output content hashes) into a run
directory, which together with a warm gateway cache is enough to replay the
run byte for byte.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .attacks import (
    DEFAULT_ATTACK_TEMPLATE,
    DEFAULT_SEPARATOR,
    InstructionTemplate,
    build_finetune_pairs,
    read_results_jsonl,
    run_blackbox_attack,
    run_generation_eval,
    write_pairs_jsonl,
    write_results_jsonl,
)
from .corpus import load_corpus, truncate_doc
from .embeddings import load_embeddings
from .errors import ConfigError, DpreconError
from .gateway import ChatGateway, EndpointConfig, RetryPolicy
from .judge import DEFAULT_JUDGE_TEMPLATE, JudgeConfig
from .metrics import aggregate, per_class_breakdown
from .mocks import CannedTransport, EchoTransport, MemorizingTransport
from .pii import BuiltinRuleTagger, ExternalNerTagger, load_label_map, pii_set
from .records import read_records_jsonl, write_records_jsonl
from .sentence_dp import api_paraphrase, template_hash
from .word_dp import WordDpConfig, sanitize_word_level

COMMANDS = (
    "sanitize",
    "attack-blackbox",
    "finetune-export",
    "attack-whitebox-eval",
    "evaluate",
    "sweep",
    "report",
)


def _sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _config_hash(config: dict) -> str:
    canon = json.dumps(config, sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:12]


def _load_config(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file {path} does not exist") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc


def build_tagger(cfg: dict):
    mode = cfg.get("mode", "builtin")
    if mode == "builtin":
        gazetteers = dict(cfg.get("gazetteers", {}))
        if cfg.get("gazetteer_file"):
            with open(cfg["gazetteer_file"], "r", encoding="utf-8") as fh:
                gazetteers.update(json.load(fh))
        return BuiltinRuleTagger(gazetteers)
    if mode == "external":
        label_map = None
        if cfg.get("label_map_file"):
            label_map = load_label_map(cfg["label_map_file"])
        return ExternalNerTagger(cfg["url"], label_map=label_map)
    raise ConfigError(f"unknown tagger mode {mode!r}")


def _make_transport(spec: dict):
    kind = spec["transport"]
    if kind == "echo":
        return EchoTransport()
    if kind == "canned":
        return CannedTransport(spec.get("reply", ""))
    if kind == "memorizing":
        docs = load_corpus(spec["corpus"])
        return MemorizingTransport([d.text for d in docs], min_score=spec.get("min_score", 0.0))
    raise ConfigError(f"unknown mock transport {kind!r}")


def build_gateway(cfg: dict) -> ChatGateway:
    endpoints = {}
    for model_id, spec in cfg.get("models", {}).items():
        transport = _make_transport(spec) if "transport" in spec else None
        endpoints[model_id] = EndpointConfig(
            base_url=spec.get("base_url", ""),
            api_key_env=spec.get("api_key_env", ""),
            transport=transport,
        )
    retry = RetryPolicy(**cfg.get("retry", {}))
    return ChatGateway(
        endpoints,
        cache_dir=cfg.get("cache_dir", ".dprecon_cache"),
        retry=retry,
        concurrency=cfg.get("concurrency", 8),
    )


def _run_dir(config: dict, out: str | None, command: str) -> Path:
    if out:
        run_dir = Path(out)
    else:
        stamp = _dt.datetime.now(_dt.timezone.utc).strftime("%Y%m%dT%H%M%S")
        run_dir = Path(config.get("out_dir", "runs")) / f"{stamp}-{command}-{_config_hash(config)}"
    run_dir.mkdir(parents=True, exist_ok=True)
    return run_dir


def _write_manifest(run_dir: Path, command: str, config: dict, inputs: list, outputs: list, extra: dict):
    manifest = {
        "command": command,
        "version": __version__,
        "config": config,
        "inputs": {str(p): _sha256_file(Path(p)) for p in inputs},
        "outputs": {str(p): _sha256_file(Path(p)) for p in outputs},
        "created_at": _dt.datetime.now(_dt.timezone.utc).isoformat(),
    }
    manifest.update(extra)
    path = run_dir / "manifest.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, ensure_ascii=False, default=str)
    return path


def _section(config: dict, name: str) -> dict:
    section = config.get(name)
    if section is None:
        raise ConfigError(f"config lacks a {name!r} section")
    return dict(section)


def _sanitize_docs(config: dict, cfg: dict, docs, budget: float, seed: int, model: str | None):
    mechanism = cfg.get("mechanism", "word_level")
    timestamp = cfg.get("timestamp", _dt.datetime.now(_dt.timezone.utc).isoformat())
    if mechanism == "word_level":
        table = load_embeddings(cfg["embeddings"], int(cfg.get("dim", 50)))
        word_cfg = WordDpConfig(epsilon=budget, dim=table.dim, seed=seed)
        return [
            sanitize_word_level(d.text, table, word_cfg, doc_id=d.id, timestamp=timestamp)
            for d in docs
        ]
    if mechanism == "sentence_level_api":
        gateway = build_gateway(_section(config, "gateway"))
        return [
            api_paraphrase(
                d.text,
                gateway,
                temperature=budget,
                template=cfg.get("template", "Paraphrase the following text: {text}"),
                model=model or cfg["model"],
                doc_id=d.id,
                max_tokens=cfg.get("max_tokens"),
                timestamp=timestamp,
            )
            for d in docs
        ]
    raise ConfigError(f"sanitize does not support mechanism {mechanism!r} from the CLI")


def cmd_sanitize(config: dict, args, out: Path | None = None) -> Path:
    cfg = _section(config, "sanitize")
    if args.budget is not None:
        cfg["budget"] = args.budget
    if args.mechanism:
        cfg["mechanism"] = args.mechanism
    seed = args.seed if args.seed is not None else config.get("seed", 0)
    run_dir = out or _run_dir(config, args.out, "sanitize")
    docs = load_corpus(cfg["input"])
    if cfg.get("max_words"):
        docs = [truncate_doc(d, int(cfg["max_words"])) for d in docs]
    records = _sanitize_docs(config, cfg, docs, float(cfg["budget"]), seed, args.model)
    records_path = run_dir / "records.jsonl"
    write_records_jsonl(records, records_path)
    _write_manifest(
        run_dir,
        "sanitize",
        config,
        inputs=[cfg["input"]],
        outputs=[records_path],
        extra={"seed": seed, "mechanism": cfg.get("mechanism", "word_level"), "budget": cfg["budget"]},
    )
    return records_path


def _judge_config(cfg: dict) -> JudgeConfig | None:
    model = cfg.get("judge_model")
    if not model:
        return None
    return JudgeConfig(
        model=model,
        system_template=cfg.get("judge_template", DEFAULT_JUDGE_TEMPLATE),
        max_retries=int(cfg.get("judge_retries", 2)),
    )


def _pick_demos(demo_records, count: int, seed: int):
    if count < 1:
        raise ConfigError("demo_count must be at least 1")
    if count > len(demo_records):
        raise ConfigError(f"demo split has only {len(demo_records)} records")
    order = np.random.default_rng(seed).permutation(len(demo_records))
    return [demo_records[i] for i in order[:count]]


def _template_from_cfg(cfg: dict) -> InstructionTemplate:
    if "template_file" in cfg:
        with open(cfg["template_file"], "r", encoding="utf-8") as fh:
            spec = json.load(fh)
        return InstructionTemplate(**spec)
    return DEFAULT_ATTACK_TEMPLATE


def cmd_attack_blackbox(config: dict, args, out: Path | None = None, records_path=None) -> Path:
    cfg = _section(config, "attack")
    run_dir = out or _run_dir(config, args.out, "attack-blackbox")
    seed = args.seed if args.seed is not None else config.get("seed", 0)
    records_source = records_path or cfg.get("records")
    if not records_source:
        raise ConfigError("attack config needs a records path")
    records = read_records_jsonl(records_source)
    if not records:
        raise ConfigError("no sanitization records to attack")
    if cfg.get("demo_records"):
        demo_records = read_records_jsonl(cfg["demo_records"])
    elif cfg.get("demo_input"):
        # Demo pairs are sanitized at the targets' own mechanism and budget.
        demo_docs = load_corpus(cfg["demo_input"])
        demo_records = _sanitize_docs(
            config, _section(config, "sanitize"), demo_docs, records[0].budget, seed + 1, args.model
        )
    else:
        raise ConfigError("attack config needs demo_records or demo_input")
    demos = _pick_demos(demo_records, int(cfg.get("demo_count", 1)), seed)
    gateway = build_gateway(_section(config, "gateway"))
    tagger = build_tagger(_section(config, "tagger"))
    template = _template_from_cfg(cfg)
    model = args.model or cfg["model"]
    results = run_blackbox_attack(
        records,
        gateway,
        model=model,
        demos=demos,
        template=template,
        tagger=tagger,
        judge_config=_judge_config(cfg),
        temperature=float(cfg.get("temperature", 0.0)),
        max_tokens=cfg.get("max_tokens"),
        max_error_fraction=float(cfg.get("max_error_fraction", 0.1)),
    )
    results_path = run_dir / "results.jsonl"
    write_results_jsonl(results, results_path)
    demo_source = cfg.get("demo_records") or cfg.get("demo_input")
    _write_manifest(
        run_dir,
        "attack-blackbox",
        config,
        inputs=[records_source, demo_source],
        outputs=[results_path],
        extra={
            "seed": seed,
            "model": model,
            "demo_ids": [d.doc_id for d in demos],
            "template_hash": template_hash(template.system + template.demo_user + template.demo_assistant),
            "tagger": config.get("tagger", {}),
        },
    )
    return results_path


def cmd_finetune_export(config: dict, args, out: Path | None = None) -> Path:
    cfg = _section(config, "finetune_export")
    run_dir = out or _run_dir(config, args.out, "finetune-export")
    seed = args.seed if args.seed is not None else config.get("seed", 0)
    budget = args.budget if args.budget is not None else cfg["budget"]
    docs = load_corpus(cfg["input"])
    if cfg.get("max_words"):
        docs = [truncate_doc(d, int(cfg["max_words"])) for d in docs]
    table = load_embeddings(cfg["embeddings"], int(cfg.get("dim", 50)))
    pairs = build_finetune_pairs(
        docs,
        table,
        WordDpConfig(epsilon=float(budget), dim=table.dim, seed=seed),
        separator=cfg.get("separator", DEFAULT_SEPARATOR),
    )
    pairs_path = run_dir / "pairs.jsonl"
    write_pairs_jsonl(pairs, pairs_path)
    _write_manifest(
        run_dir,
        "finetune-export",
        config,
        inputs=[cfg["input"]],
        outputs=[pairs_path],
        extra={"seed": seed, "budget": budget, "separator": pairs[0].separator if pairs else ""},
    )
    return pairs_path


def cmd_attack_whitebox_eval(config: dict, args, out: Path | None = None) -> Path:
    cfg = _section(config, "whitebox")
    run_dir = out or _run_dir(config, args.out, "attack-whitebox-eval")
    records = read_records_jsonl(cfg["records"])
    gateway = build_gateway(_section(config, "gateway"))
    tagger = build_tagger(_section(config, "tagger"))
    model = args.model or cfg["model"]
    results = run_generation_eval(
        records,
        gateway,
        model=model,
        separator=cfg.get("separator", DEFAULT_SEPARATOR),
        tagger=tagger,
        judge_config=_judge_config(cfg),
        temperature=float(cfg.get("temperature", 0.0)),
        max_tokens=cfg.get("max_tokens"),
        max_error_fraction=float(cfg.get("max_error_fraction", 0.1)),
    )
    results_path = run_dir / "results.jsonl"
    write_results_jsonl(results, results_path)
    _write_manifest(
        run_dir,
        "attack-whitebox-eval",
        config,
        inputs=[cfg["records"]],
        outputs=[results_path],
        extra={"model": model, "separator": cfg.get("separator", DEFAULT_SEPARATOR)},
    )
    return results_path


_REPORT_FIELDS = [
    "model", "mechanism", "budget", "n_docs", "succ_pct", "recall_pct",
    "precision_pct", "score_mean", "n_recall_defined", "n_precision_defined",
    "n_score_defined", "n_errors",
]


def _report_csv_row(report: dict) -> dict:
    return {k: report.get(k) for k in _REPORT_FIELDS}


def cmd_evaluate(config: dict, args, out: Path | None = None, results_path=None) -> Path:
    cfg = _section(config, "evaluate")
    run_dir = out or _run_dir(config, args.out, "evaluate")
    path = results_path or cfg["results"]
    results = read_results_jsonl(path)
    if not results:
        raise ConfigError(f"no attack results found in {path}")
    scored = [r for r in results if r.metrics is not None]
    if not scored:
        raise ConfigError(f"all documents in {path} are errored")
    report = aggregate(
        [r.metrics for r in scored],
        scores=[r.score for r in scored],
        model=args.model or cfg.get("model", scored[0].model),
        mechanism=cfg.get("mechanism", ""),
        budget=float(cfg["budget"]) if cfg.get("budget") is not None else scored[0].budget,
        n_errors=len(results) - len(scored),
    )
    if cfg.get("records"):
        tagger = build_tagger(_section(config, "tagger"))
        by_id = {r.doc_id: r for r in read_records_jsonl(cfg["records"])}
        triples = []
        for res in scored:
            rec = by_id.get(res.doc_id)
            if rec is None:
                continue
            triples.append(
                (
                    pii_set(tagger.tag(rec.original)),
                    pii_set(tagger.tag(rec.sanitized)),
                    pii_set(tagger.tag(res.reconstructed)),
                )
            )
        report.per_class = per_class_breakdown(triples)
    report_json = run_dir / "report.json"
    with open(report_json, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, ensure_ascii=False)
    report_csv = run_dir / "report.csv"
    with open(report_csv, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=_REPORT_FIELDS)
        writer.writeheader()
        writer.writerow(_report_csv_row(report.to_dict()))
    _write_manifest(
        run_dir,
        "evaluate",
        config,
        inputs=[path],
        outputs=[report_json, report_csv],
        extra={},
    )
    return report_json


def cmd_sweep(config: dict, args) -> Path:
    cfg = _section(config, "sweep")
    run_dir = _run_dir(config, args.out, "sweep")
    budgets = cfg.get("budgets") or [1.0, 4.0, 8.0, 12.0, 32.0]
    rows = []
    report_paths = []
    for budget in budgets:
        point_dir = run_dir / f"budget_{budget}"
        point_dir.mkdir(parents=True, exist_ok=True)
        point_args = argparse.Namespace(
            out=None, seed=args.seed, budget=budget, mechanism=args.mechanism,
            model=args.model, config=args.config,
        )
        records_path = cmd_sanitize(config, point_args, out=point_dir)
        results_path = cmd_attack_blackbox(config, point_args, out=point_dir, records_path=records_path)
        report_path = cmd_evaluate(config, point_args, out=point_dir, results_path=results_path)
        report_paths.append(report_path)
        with open(report_path, "r", encoding="utf-8") as fh:
            rows.append(_report_csv_row(json.load(fh)))
    combined = run_dir / "combined.csv"
    with open(combined, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=_REPORT_FIELDS)
        writer.writeheader()
        writer.writerows(rows)
    _write_manifest(
        run_dir,
        "sweep",
        config,
        inputs=[],
        outputs=[combined, *report_paths],
        extra={"budgets": list(budgets)},
    )
    return combined


def cmd_report(config: dict, args) -> Path:
    cfg = _section(config, "report")
    run_dir = _run_dir(config, args.out, "report")
    reports = []
    for path in cfg["reports"]:
        with open(path, "r", encoding="utf-8") as fh:
            reports.append(json.load(fh))
    budgets = sorted({r["budget"] for r in reports})
    models = sorted({r["model"] for r in reports})
    fields = ["model"]
    for budget in budgets:
        fields += [f"succ@{budget}", f"recall@{budget}", f"prec@{budget}", f"score@{budget}"]
    table_path = run_dir / "table.csv"
    with open(table_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for model in models:
            row: dict = {"model": model}
            for report in reports:
                if report["model"] != model:
                    continue
                budget = report["budget"]
                row[f"succ@{budget}"] = report.get("succ_pct")
                row[f"recall@{budget}"] = report.get("recall_pct")
                row[f"prec@{budget}"] = report.get("precision_pct")
                row[f"score@{budget}"] = report.get("score_mean")
            writer.writerow(row)
    _write_manifest(
        run_dir, "report", config, inputs=list(cfg["reports"]), outputs=[table_path], extra={}
    )
    return table_path


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dprecon",
        description="Sanitize text under word- or sentence-level DP, attack the output, and report.",
    )
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="JSON config file")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--budget", type=float, default=None)
    parser.add_argument("--mechanism", default=None)
    parser.add_argument("--model", default=None)
    parser.add_argument("--out", default=None, help="run directory (default: timestamp + config hash)")
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        config = _load_config(args.config)
        if args.command == "sanitize":
            artifact = cmd_sanitize(config, args)
        elif args.command == "attack-blackbox":
            artifact = cmd_attack_blackbox(config, args)
        elif args.command == "finetune-export":
            artifact = cmd_finetune_export(config, args)
        elif args.command == "attack-whitebox-eval":
            artifact = cmd_attack_whitebox_eval(config, args)
        elif args.command == "evaluate":
            artifact = cmd_evaluate(config, args)
        elif args.command == "sweep":
            artifact = cmd_sweep(config, args)
        else:
            artifact = cmd_report(config, args)
    except DpreconError as exc:
        json.dump(
            {"error": {"type": type(exc).__name__, "message": str(exc)}},
            sys.stderr,
        )
        sys.stderr.write("\n")
        return 1
    except FileNotFoundError as exc:
        json.dump(
            {"error": {"type": "FileNotFoundError", "message": str(exc)}}, sys.stderr
        )
        sys.stderr.write("\n")
        return 1
    print(artifact)
    return 0


if __name__ == "__main__":
    sys.exit(main())
