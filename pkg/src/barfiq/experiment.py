"""End-to-end experiment orchestration and run artifacts.

A run takes one configuration to: synthetic stream -> per-shot phase
reconstruction -> window assembly -> time-ordered split -> normalization ->
training -> artifacts. Serialized artifacts are byte-reproducible for a
fixed config (wall-clock timing is reported on stdout only).
"""
from __future__ import annotations

import csv
import dataclasses
import json
import os

from .config import ExperimentConfig
from .dataio import (
    DatasetSplit,
    build_windows,
    generate_stream,
    normalize,
    split_windows,
    write_manifest,
)
from .errors import DataError
from .forecaster import Forecaster
from .fringe import reconstruct_stream
from .head import LossConfig
from .training import (
    RunReport,
    circular_mean_baseline,
    evaluate,
    persistence_baseline,
    train,
)

CHECKPOINT_FILE = "checkpoint.barq"
METRICS_FILE = "metrics.json"
EPOCHS_FILE = "epochs.csv"
SWEEP_FILE = "sweep.csv"
SWEEP_COLUMNS = ["window_len", "variant", "status", "mse", "mae", "rmse", "best_epoch", "n_epochs"]


def build_dataset(cfg: ExperimentConfig) -> tuple[DatasetSplit, DatasetSplit]:
    """Returns (raw split, normalized split) for the configured stream."""
    shots, _ = generate_stream(cfg.generator)
    phases = reconstruct_stream(shots)
    pairs = build_windows(shots, phases, cfg.train.window_len)
    if not pairs:
        raise DataError("the configured stream yields no usable windows")
    raw = split_windows(pairs)
    return raw, normalize(raw)


def metrics_document(report: RunReport, baselines: dict) -> dict:
    return {
        "test": report.test_metrics,
        "baselines": baselines,
        "best_epoch": report.best_epoch,
        "n_epochs": report.n_epochs,
        "stopped_early": report.stopped_early,
        "aborted": report.aborted,
    }


def write_metrics(path, doc: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_epochs_csv(path, report: RunReport) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "train_loss", "val_mae"])
        for i, (loss, mae) in enumerate(zip(report.train_losses, report.val_maes)):
            writer.writerow([i, repr(loss), repr(mae)])


def run_experiment(cfg: ExperimentConfig, out_dir) -> tuple[Forecaster, RunReport, dict]:
    """Full pipeline run; writes checkpoint, metrics, epoch log, manifest."""
    cfg.validate()
    os.makedirs(out_dir, exist_ok=True)
    raw, normed = build_dataset(cfg)
    baselines = {
        "persistence": persistence_baseline(raw),
        "circular_mean": circular_mean_baseline(raw),
    }
    fc, report = train(normed, cfg.model, cfg.fusion, cfg.qfm, cfg.train)
    fc.save(os.path.join(out_dir, CHECKPOINT_FILE))
    write_manifest(os.path.join(out_dir, "manifest.json"), normed)
    doc = metrics_document(report, baselines)
    write_metrics(os.path.join(out_dir, METRICS_FILE), doc)
    write_epochs_csv(os.path.join(out_dir, EPOCHS_FILE), report)
    return fc, report, doc


def evaluate_run(cfg: ExperimentConfig, out_dir) -> dict:
    """Rebuild the dataset, load the run checkpoint, and re-score the test split."""
    checkpoint = os.path.join(out_dir, CHECKPOINT_FILE)
    if not os.path.exists(checkpoint):
        raise DataError(f"missing checkpoint: {checkpoint}")
    raw, normed = build_dataset(cfg)
    fc = Forecaster(
        cfg.model,
        cfg.fusion,
        cfg.qfm,
        LossConfig(cosine_weight=cfg.train.cosine_weight),
        n_channels=len(normed.channel_names),
        init_seed=cfg.train.seed,
    )
    fc.load(checkpoint)
    return {
        "test": evaluate(fc, normed.test),
        "baselines": {
            "persistence": persistence_baseline(raw),
            "circular_mean": circular_mean_baseline(raw),
        },
    }


def sweep(
    cfg: ExperimentConfig,
    out_dir,
    window_lens: list[int] | None = None,
    variants: list[str] | None = None,
) -> list[dict]:
    """Grid of runs over window lengths and fusion variants; one CSV row each.

    Individual cell failures are recorded as rows and the sweep continues.
    """
    cfg.validate()
    os.makedirs(out_dir, exist_ok=True)
    window_lens = window_lens or [8, 16, 32, 64, 128]
    variants = variants or ["ca_sa", "sa", "ca", "none"]
    rows: list[dict] = []
    for window_len in window_lens:
        for variant in variants:
            cell = ExperimentConfig(
                generator=dataclasses.replace(cfg.generator),
                model=dataclasses.replace(cfg.model),
                fusion=dataclasses.replace(cfg.fusion),
                qfm=dataclasses.replace(cfg.qfm),
                train=dataclasses.replace(cfg.train),
            )
            cell.train.window_len = int(window_len)
            cell.set_variant(variant)
            row = {"window_len": int(window_len), "variant": variant}
            try:
                raw, normed = build_dataset(cell)
                _, report = train(normed, cell.model, cell.fusion, cell.qfm, cell.train)
                row.update(
                    status="ok" if not report.aborted else "aborted",
                    mse=report.test_metrics["mse"],
                    mae=report.test_metrics["mae"],
                    rmse=report.test_metrics["rmse"],
                    best_epoch=report.best_epoch,
                    n_epochs=report.n_epochs,
                )
            except Exception as exc:  # cell isolation: record and move on
                row.update(status=f"failed: {type(exc).__name__}", mse="", mae="", rmse="",
                           best_epoch="", n_epochs="")
            rows.append(row)
    with open(os.path.join(out_dir, SWEEP_FILE), "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    return rows
