"""Command-line entry point.

Every subcommand is config-driven and rerunnable; API keys are read from the
environment variables named in the config, never from config values.
"""

import csv
import json
import os
import sys
import time
from pathlib import Path

import click
import numpy as np

from . import describe as describe_mod
from . import openset as openset_mod
from .classify import LlmKind
from .config import (
    EngineConfig,
    load_config,
    load_normalization_sidecar,
    save_normalization_sidecar,
    split_windows,
)
from .embed import ProviderKind
from .errors import ActrecError, ConfigInvalid, DimensionMismatch
from .evaluation import CostLedger, cost_report, cost_report_text, run_benchmark
from .ingest import SourceRole, synth_dataset
from .optimize import ChatInstructionClient, MockInstructionClient, optimize_prompt
from .store import VectorStore


def _fail(message: str, code: int = 1):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _load_engine_config(ctx) -> EngineConfig:
    path = ctx.obj.get("config")
    if not path:
        _fail("--config is required for this command", 2)
    try:
        config = load_config(path)
    except ActrecError as exc:
        _fail(str(exc), 2)
    if ctx.obj.get("seed") is not None:
        config.seed = ctx.obj["seed"]
        config.optimizer = type(config.optimizer)(
            m=config.optimizer.m,
            r=config.optimizer.r,
            max_iterations=config.optimizer.max_iterations,
            patience=config.optimizer.patience,
            exemplar_count=config.optimizer.exemplar_count,
            seed=config.seed,
            subsample_fraction=config.optimizer.subsample_fraction,
        )
    return config


def _dry_run_check(ctx, config: EngineConfig) -> bool:
    """Validate config and provider reachability without cost-incurring calls."""
    if not ctx.obj.get("dry_run"):
        return False
    problems = []
    if config.embed.kind is ProviderKind.REMOTE_HTTP:
        if not os.environ.get(config.embed.api_key_env_var or ""):
            problems.append(
                f"embedding API key env var {config.embed.api_key_env_var!r} not set"
            )
    if config.llm.kind is LlmKind.REMOTE_CHAT:
        if not os.environ.get(config.llm.api_key_env_var or ""):
            problems.append(
                f"llm API key env var {config.llm.api_key_env_var!r} not set"
            )
    if not Path(config.dataset_path).exists():
        problems.append(f"dataset not found: {config.dataset_path}")
    if problems:
        for p in problems:
            click.echo(f"dry-run: {p}", err=True)
        sys.exit(2)
    click.echo("dry-run: config valid, providers reachable")
    return True


@click.group()
@click.option("--config", type=click.Path(), help="engine config file (YAML)")
@click.option("--seed", type=int, default=None, help="override the config seed")
@click.option("--jobs", type=int, default=1, show_default=True, help="parallel pipeline workers")
@click.option("--dry-run", is_flag=True, help="validate config and providers, then exit")
@click.option("--force", is_flag=True, help="overwrite existing output files")
@click.pass_context
def main(ctx, config, seed, jobs, dry_run, force):
    """Training-free activity recognition over a multi-vector store."""
    ctx.obj = {
        "config": config,
        "seed": seed,
        "jobs": jobs,
        "dry_run": dry_run,
        "force": force,
    }


def _guard_overwrite(ctx, path: str):
    if Path(path).exists() and not ctx.obj.get("force"):
        _fail(f"{path} exists; re-run with --force to overwrite", 3)


@main.command()
@click.option("--classes", "n_classes", type=int, default=3, show_default=True)
@click.option("--windows-per-class", type=int, default=50, show_default=True)
@click.option("--channels", "m", type=int, default=6, show_default=True)
@click.option("--length", "window_len", type=int, default=40, show_default=True)
@click.option("--out", required=True, type=click.Path())
@click.option("--write-config", type=click.Path(), default=None,
              help="also emit a matching engine config")
@click.pass_context
def synth(ctx, n_classes, windows_per_class, m, window_len, out, write_config):
    """Generate a deterministic synthetic dataset CSV."""
    seed = ctx.obj.get("seed") or 0
    _guard_overwrite(ctx, out)
    windows = synth_dataset(n_classes, windows_per_class, m, window_len, seed)
    channel_names = [f"ch{c}" for c in range(m)]
    with open(out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([*channel_names, "label", "subject"])
        for w in windows:
            for t in range(window_len):
                writer.writerow(
                    [*(f"{v:.9g}" for v in w.samples[:, t]), w.label, w.subject_id]
                )
    click.echo(f"wrote {len(windows)} windows x {window_len} samples to {out}")
    if write_config:
        _guard_overwrite(ctx, write_config)
        config_text = "\n".join(
            [
                "dataset:",
                f"  path: {out}",
                f"  channel_columns: [{', '.join(channel_names)}]",
                "  label_column: label",
                "  subject_column: subject",
                "  sampling_rate_hz: 20.0",
                f"  window_len: {window_len}",
                f"  step: {window_len}",
                "retrieval:",
                "  weights: [0.4, 0.2, 0.2, 0.2]",
                "  q: 10",
                "  threshold: 0.75",
                "embedding:",
                "  kind: local",
                "  d: 256",
                "llm:",
                "  kind: majority",
                "split:",
                "  test_fraction: 0.2",
                "  validation_fraction: 0.1",
                f"seed: {seed}",
                "",
            ]
        )
        Path(write_config).write_text(config_text, encoding="utf-8")
        click.echo(f"wrote config to {write_config}")


def _index_command(ctx, out, descriptor_mode: bool):
    config = _load_engine_config(ctx)
    if _dry_run_check(ctx, config):
        return
    _guard_overwrite(ctx, out)
    started = time.perf_counter()
    try:
        windows = config.load_windows()
        if not windows:
            raise ConfigInvalid("dataset produced no windows")
        pipeline = config.build_pipeline(descriptor_mode=descriptor_mode)
        pipeline.index(windows)
        pipeline.store.save(out)
        config.descriptor_mode = descriptor_mode
        save_normalization_sidecar(f"{out}.norm.json", pipeline.normalization, config)
    except ActrecError as exc:
        _fail(str(exc))
    summary = {
        "segments": pipeline.store.n_segments,
        "records": len(pipeline.store),
        "labels": pipeline.store.labels(),
        "store": str(out),
        "wall_time_s": round(time.perf_counter() - started, 3),
    }
    click.echo(json.dumps(summary, sort_keys=True))


@main.command()
@click.option("--out", required=True, type=click.Path(), help="store file to write")
@click.pass_context
def index(ctx, out):
    """Build the vector store from the configured dataset."""
    _index_command(ctx, out, descriptor_mode=False)


@main.command("describe-index")
@click.option("--out", required=True, type=click.Path(), help="store file to write")
@click.pass_context
def describe_index(ctx, out):
    """Build a descriptor-mode vector store (narrative texts, not templates)."""
    _index_command(ctx, out, descriptor_mode=True)


@main.command()
@click.option("--store", "store_path", required=True, type=click.Path(exists=True))
@click.option("--input", "input_path", type=click.Path(exists=True), default=None,
              help="CSV to classify; defaults to the configured dataset path")
@click.option("--output", type=click.Path(), default="-", show_default=True)
@click.pass_context
def classify(ctx, store_path, input_path, output):
    """Classify windows against an existing store; emits JSON lines."""
    config = _load_engine_config(ctx)
    if _dry_run_check(ctx, config):
        return
    try:
        store = VectorStore.load(store_path)
        if store.d != config.embed.d:
            raise DimensionMismatch(
                f"store has d={store.d}, config expects d={config.embed.d}"
            )
        stats, sidecar = None, {}
        sidecar_path = f"{store_path}.norm.json"
        if Path(sidecar_path).exists():
            stats, sidecar = load_normalization_sidecar(sidecar_path)
        pipeline = config.build_pipeline(
            descriptor_mode=sidecar.get("descriptor_mode", config.descriptor_mode)
        )
        pipeline.store = store
        pipeline.normalization = stats
        if config.q > store.n_segments:
            click.echo(
                f"warning: q={config.q} exceeds {store.n_segments} indexed segments; "
                "using all of them",
                err=True,
            )
        windows = config.load_windows(path=input_path, role=SourceRole.TEST)
        sink = sys.stdout if output == "-" else open(output, "w", encoding="utf-8")
        try:
            for window in windows:
                contexts = pipeline.retrieve(window)
                prediction = pipeline.classify_window(window)
                line = {
                    "segment_id": window.segment_id,
                    "label": prediction.label,
                    "parse_status": prediction.parse_status.value,
                    "context_scores": [round(c.fused_score, 6) for c in contexts],
                }
                sink.write(json.dumps(line, sort_keys=True) + "\n")
        finally:
            if sink is not sys.stdout:
                sink.close()
    except ActrecError as exc:
        _fail(str(exc))


@main.command()
@click.option("--out", required=True, type=click.Path(), help="report JSON path")
@click.option("--retrieval-only", is_flag=True, help="evaluate the vote baseline instead")
@click.pass_context
def evaluate(ctx, out, retrieval_only):
    """Split the dataset, run the benchmark, write report JSON + confusion CSV."""
    config = _load_engine_config(ctx)
    if _dry_run_check(ctx, config):
        return
    _guard_overwrite(ctx, out)
    try:
        windows = config.load_windows()
        indexing, _, test = split_windows(
            windows, config.split.test_fraction, config.split.validation_fraction,
            config.seed,
        )
        ledger = CostLedger()
        pipeline = config.build_pipeline(ledger=ledger)
        report = run_benchmark(
            pipeline,
            indexing,
            test,
            rates=config.costs,
            jobs=ctx.obj.get("jobs", 1),
            retrieval_only=retrieval_only,
            threshold=config.threshold,
        )
    except ActrecError as exc:
        _fail(str(exc))
    Path(out).write_text(report.to_json(), encoding="utf-8")
    csv_path = str(Path(out).with_suffix(".confusion.csv"))
    Path(csv_path).write_text(report.confusion_csv(), encoding="utf-8")
    click.echo(report.to_text())
    click.echo(f"report: {out}\nconfusion: {csv_path}")


@main.command("optimize-prompt")
@click.option("--out", type=click.Path(), default=None,
              help="optimizer log path; defaults to optlog-<run>-seed<seed>.jsonl")
@click.option("--best-out", type=click.Path(), default=None,
              help="write the winning instruction text here")
@click.pass_context
def optimize_prompt_cmd(ctx, out, best_out):
    """Search for a better system instruction on the validation split."""
    config = _load_engine_config(ctx)
    if _dry_run_check(ctx, config):
        return
    if config.split.validation_fraction <= 0:
        _fail("optimize-prompt needs split.validation_fraction > 0", 2)
    try:
        windows = config.load_windows()
        indexing, validation, _ = split_windows(
            windows, config.split.test_fraction, config.split.validation_fraction,
            config.seed,
        )
        pipeline = config.build_pipeline()
        pipeline.index(indexing)
        if config.llm.kind is LlmKind.REMOTE_CHAT:
            opt_client = ChatInstructionClient(pipeline.llm_client)
        else:
            opt_client = MockInstructionClient(seed=config.seed)
        run_id = f"opt-seed{config.seed}"
        best, log = optimize_prompt(
            config.optimizer, pipeline, validation, opt_client, run_id=run_id
        )
    except ActrecError as exc:
        _fail(str(exc))
    out = out or f"optlog-{run_id}.jsonl"
    _guard_overwrite(ctx, out)
    log.save(out)
    if best_out:
        Path(best_out).write_text(best.instruction_text + "\n", encoding="utf-8")
    click.echo(
        json.dumps(
            {
                "best_fitness": best.fitness,
                "best_instruction": best.instruction_text,
                "iterations": len(log.iterations),
                "log": str(out),
            },
            sort_keys=True,
        )
    )


@main.command("openset")
@click.option("--openness", type=float, default=0.3, show_default=True)
@click.option("--mode", type=click.Choice(["available", "hidden"]), default="hidden",
              show_default=True)
@click.option("--label-unseen", is_flag=True,
              help="also generate free-text labels for withheld-class windows")
@click.option("--out", required=True, type=click.Path())
@click.pass_context
def openset_cmd(ctx, openness, mode, label_unseen, out):
    """Withhold classes, classify the rest, and report open-set metrics."""
    config = _load_engine_config(ctx)
    if _dry_run_check(ctx, config):
        return
    _guard_overwrite(ctx, out)
    mode = (
        openset_mod.LabelSpaceMode.TRUE_LABEL_AVAILABLE
        if mode == "available"
        else openset_mod.LabelSpaceMode.TRUE_LABEL_HIDDEN
    )
    try:
        windows = config.load_windows()
        split = openset_mod.make_openset_split(windows, openness, config.seed)
        by_id = {w.segment_id: w for w in windows}
        pipeline = config.build_pipeline()
        pipeline.index([by_id[i] for i in split.indexing_ids])
        true_labels, predicted = [], []
        labeling: dict[str, dict] = {}
        for sid in split.test_ids:
            window = by_id[sid]
            prediction = openset_mod.openset_classify(pipeline, split, mode, window)
            true_labels.append(window.label)
            predicted.append(prediction.label)
            if label_unseen and window.label in split.withheld_classes:
                contexts = pipeline.retrieve(window)
                labeler = (
                    pipeline.llm_client
                    if config.llm.kind is LlmKind.REMOTE_CHAT
                    else openset_mod.NearestContextLabeler()
                )
                generated = openset_mod.generate_unseen_label(
                    labeler, contexts, pipeline.bundle_for(window)
                )
                mapped, score = openset_mod.map_label_semantic(
                    generated, split.label_space(openset_mod.LabelSpaceMode.TRUE_LABEL_AVAILABLE),
                    config.embed,
                )
                entry = labeling.setdefault(
                    window.label, {"generated": [], "mapped": [], "correct": 0, "total": 0}
                )
                entry["generated"].append(generated)
                entry["mapped"].append([mapped, round(score, 4)])
                entry["total"] += 1
                entry["correct"] += int(mapped == window.label)
        labeling_results = None
        if labeling:
            for entry in labeling.values():
                entry["accuracy"] = entry["correct"] / entry["total"]
            labeling_results = labeling
        report = openset_mod.openset_report(
            true_labels, predicted, split, mode, labeling_results=labeling_results
        )
    except ActrecError as exc:
        _fail(str(exc))
    Path(out).write_text(json.dumps(report, indent=2, sort_keys=True), encoding="utf-8")
    click.echo(
        json.dumps(
            {
                "withheld": list(split.withheld_classes),
                "macro_f1": report["macro_f1"],
                "accuracy": report["accuracy"],
                "report": str(out),
            },
            sort_keys=True,
        )
    )


@main.command("cost-report")
@click.option("--ledger", "ledger_path", required=True, type=click.Path(exists=True))
@click.option("--samples", type=int, default=None, help="amortize over this many predictions")
@click.pass_context
def cost_report_cmd(ctx, ledger_path, samples):
    """Replay a request ledger and price it with the configured rates."""
    config = _load_engine_config(ctx)
    try:
        ledger = CostLedger.load(ledger_path)
        report = cost_report(ledger, config.costs, n_samples=samples)
    except (ActrecError, OSError, json.JSONDecodeError) as exc:
        _fail(str(exc))
    click.echo(cost_report_text(report))
    click.echo(json.dumps(report, sort_keys=True))


if __name__ == "__main__":
    main()
