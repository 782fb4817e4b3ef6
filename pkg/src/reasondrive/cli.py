"""Command-line interface: ``reasondrive <subcommand> ...``.

Exit codes: 0 success, 1 validation or runtime errors, 2 usage errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

from .chains import (
    GenerationSettings,
    assemble_examples,
    export_training_file,
    generate_chains,
    generation_summary,
    load_outcomes,
    save_outcomes,
)
from .config import ToolkitConfig, load_config
from .errors import ToolkitError
from .evaluation import evaluate, judge_pairs, load_predictions, load_run, render_markdown, write_run
from .gateway import Gateway, HttpTransport, MockTransport, RecordingTransport, ReplayTransport
from .ingest import Dataset, dataset_report, load_dataset, split_dataset, validate_dataset
from .prompts import DEFAULT_PROMPTS, PromptSet, Variant, load_prompt_set

logger = logging.getLogger("reasondrive")

DEFAULT_MOCK_RESPONSE = "<think>The camera views support the provided answer.</think>"


def _emit(args: argparse.Namespace, data: Any, text: str) -> None:
    if args.format == "json":
        print(json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False))
    else:
        print(text)


def _prompts(cfg: ToolkitConfig) -> PromptSet:
    return load_prompt_set(cfg.prompts_dir) if cfg.prompts_dir else DEFAULT_PROMPTS


def _gateway(args: argparse.Namespace, cfg: ToolkitConfig) -> Gateway:
    ep = cfg.endpoint
    if args.transport == "mock":
        transport = MockTransport(script=args.mock_response or [DEFAULT_MOCK_RESPONSE])
    elif args.transport == "replay":
        if not args.fixtures:
            raise ToolkitError("USAGE", "--transport replay needs --fixtures DIR")
        transport = ReplayTransport(args.fixtures)
    else:
        transport = HttpTransport(ep.url, ep.api_key, ep.timeout)
        if args.transport == "record":
            if not args.fixtures:
                raise ToolkitError("USAGE", "--transport record needs --fixtures DIR")
            transport = RecordingTransport(transport, args.fixtures)
    cache_dir = None if args.no_cache else (args.cache_dir or ep.cache_dir)
    return Gateway(
        transport,
        cache_dir=cache_dir,
        max_retries=ep.max_retries,
        rate_limit=ep.rate_limit,
        token_budget=ep.token_budget,
    )


def _select(dataset: Dataset, ids_file: str | None) -> list:
    if not ids_file:
        return list(dataset.records)
    text = Path(ids_file).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
        wanted = set(data["train"] if isinstance(data, dict) else data)
    except (json.JSONDecodeError, KeyError, TypeError):
        wanted = {line.strip() for line in text.splitlines() if line.strip()}
    return [r for r in dataset.records if r.qa_id in wanted]


def cmd_ingest(args: argparse.Namespace, cfg: ToolkitConfig) -> int:
    dataset = load_dataset(args.dataset)
    report = dataset_report(dataset.manifest, validate_dataset(dataset))
    if args.out:
        Path(args.out).write_text(report.to_json() + "\n", encoding="utf-8")
    _emit(args, report.to_dict(), report.to_text())
    return 1 if any(f.severity == "error" for f in report.findings) else 0


def cmd_split(args: argparse.Namespace, cfg: ToolkitConfig) -> int:
    dataset = load_dataset(args.dataset)
    train, held_out = split_dataset(dataset.records, args.train_fraction, args.seed)
    data = {
        "seed": args.seed,
        "train_fraction": args.train_fraction,
        "train": [r.qa_id for r in train],
        "eval": [r.qa_id for r in held_out],
    }
    if args.out:
        Path(args.out).write_text(json.dumps(data, indent=2) + "\n", encoding="utf-8")
    _emit(args, data, f"train: {len(train)} QA, eval: {len(held_out)} QA")
    return 0


def cmd_gen_reason(args: argparse.Namespace, cfg: ToolkitConfig) -> int:
    dataset = load_dataset(args.dataset)
    records = _select(dataset, args.ids)
    out = Path(args.out)
    previous = {o.qa_id: o for o in load_outcomes(out)} if out.is_file() else {}
    todo = [r for r in records if not (r.qa_id in previous and previous[r.qa_id].ok)]
    g = cfg.generation
    settings = GenerationSettings(g.model, g.temperature, g.max_tokens, g.retries, args.max_in_flight or g.max_in_flight)
    fresh = generate_chains(
        todo, dataset.frame_index(), _gateway(args, cfg), settings, dataset.root, _prompts(cfg)
    ) if todo else []
    merged = {**previous, **{o.qa_id: o for o in fresh}}
    outcomes = [merged[r.qa_id] for r in records if r.qa_id in merged]
    save_outcomes(outcomes, out)
    summary = generation_summary(records, outcomes)
    summary["resumed"] = len(records) - len(todo)
    out.with_suffix(".summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    c = summary["counts"]
    _emit(args, summary, f"ok={c['ok']} retried={c['retried']} failed={c['failed']} resumed={summary['resumed']}")
    return 0


def cmd_export(args: argparse.Namespace, cfg: ToolkitConfig) -> int:
    dataset = load_dataset(args.dataset)
    records = _select(dataset, args.ids)
    variant = Variant(args.variant)
    outcomes = None
    if variant is Variant.REASON:
        chains = Path(args.chains)
        if not chains.is_file():
            raise ToolkitError(
                "MISSING_CHAIN", f"no chains file at {chains}; run gen-reason first",
                qa_ids=[r.qa_id for r in records],
            )
        outcomes = load_outcomes(chains)
    examples = assemble_examples(
        records, dataset.frame_index(), outcomes, variant, _prompts(cfg).system_prompt, drop_failed=True
    )
    kept = {e.qa_id for e in examples}
    excluded = [r.qa_id for r in records if r.qa_id not in kept]
    summary = export_training_file(examples, variant, args.out, excluded)
    _emit(args, summary.to_dict(), f"wrote {summary.lines} {variant.value} examples to {summary.path} "
          f"({summary.digest}); excluded {len(excluded)}")
    return 0


def _parse_weights(text: str) -> dict[str, float]:
    try:
        if text.strip().startswith("{"):
            return {k: float(v) for k, v in json.loads(text).items()}
        values = [float(v) for v in text.split(",")]
    except (ValueError, json.JSONDecodeError) as exc:
        raise ToolkitError("WEIGHTS_INVALID", f"cannot parse weights {text!r}") from exc
    if len(values) != 4:
        raise ToolkitError("WEIGHTS_INVALID", "expected four weights: judge,language,match,accuracy")
    return dict(zip(("judge", "language", "match", "accuracy"), values))


def cmd_eval(args: argparse.Namespace, cfg: ToolkitConfig) -> int:
    metrics = cfg.metrics
    if args.weights:
        metrics = type(metrics).from_dict({**metrics.to_dict(), "final_weights": _parse_weights(args.weights)})
    dataset = load_dataset(args.dataset)
    predictions = load_predictions(args.predictions, dataset.records)
    verdicts = None
    if args.judge == "on":
        verdicts = judge_pairs(predictions.pairs, _gateway(args, cfg), cfg.judge, _prompts(cfg))
    report = evaluate(predictions.pairs, metrics, verdicts, predictions)
    run = write_run(args.run_dir, report, verdicts)
    _emit(args, report.to_dict(), render_markdown(report) + f"\nresults written to {run}")
    return 0


def cmd_report(args: argparse.Namespace, cfg: ToolkitConfig) -> int:
    report = load_run(args.run_dir)
    _emit(args, report.to_dict(), render_markdown(report).rstrip("\n"))
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--format", choices=("text", "json"), default="text")
    common.add_argument("-v", "--verbose", action="store_true")

    llm = argparse.ArgumentParser(add_help=False)
    llm.add_argument("--transport", choices=("http", "mock", "replay", "record"), default="http")
    llm.add_argument("--mock-response", action="append", help="scripted mock reply (repeatable)")
    llm.add_argument("--fixtures", help="record/replay fixture directory")
    llm.add_argument("--cache-dir", help="override the response cache directory")
    llm.add_argument("--no-cache", action="store_true")

    dataset = argparse.ArgumentParser(add_help=False)
    dataset.add_argument("--dataset", required=True, help="dataset root or index file")

    parser = argparse.ArgumentParser(prog="reasondrive", description="Reasoning-augmented driving VQA toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common, dataset], help="validate a dataset and print its manifest")
    p.add_argument("--out", help="write the JSON report here")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("split", parents=[common, dataset], help="frame-level train/eval split")
    p.add_argument("--train-fraction", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write the split ids here")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("gen-reason", parents=[common, dataset, llm], help="generate reasoning chains (resumable)")
    p.add_argument("--out", default="chains.jsonl")
    p.add_argument("--ids", help="restrict to ids from a split file or id list")
    p.add_argument("--max-in-flight", type=int)
    p.set_defaults(func=cmd_gen_reason)

    p = sub.add_parser("export", parents=[common, dataset], help="write a reason/simple training file")
    p.add_argument("--variant", choices=[v.value for v in Variant], required=True)
    p.add_argument("--chains", default="chains.jsonl")
    p.add_argument("--ids", help="restrict to ids from a split file or id list")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("eval", parents=[common, dataset, llm], help="score predictions")
    p.add_argument("--predictions", required=True)
    p.add_argument("--judge", choices=("on", "off"), default="off")
    p.add_argument("--weights", help="judge,language,match,accuracy (or a JSON object)")
    p.add_argument("--run-dir", default="runs/latest")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", parents=[common], help="re-render a saved run")
    p.add_argument("--run-dir", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except ToolkitError as exc:
        if exc.code == "USAGE":
            parser.print_usage(sys.stderr)
            print(f"error: {exc.message}", file=sys.stderr)
            return 2
        if args.format == "json":
            print(json.dumps({"error": exc.to_dict()}, indent=2, sort_keys=True), file=sys.stderr)
        else:
            print(f"error: {exc}", file=sys.stderr)
            ids = exc.details.get("qa_ids")
            if ids:
                for qa_id in ids:
                    print(f"  {qa_id}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
