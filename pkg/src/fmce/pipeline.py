"""End-to-end desk-scale run: data, original task, analysis, FMCS data, FMCE-Net."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import List

import numpy as np

from . import fmcs_dataset
from .errors import FmceError
from .fmce_net import FmceModel, FmceTrainConfig, evaluate, grad_cam, train_fmce
from .loss_analysis import CqiConfig, SmoothingConfig, write_loss_csv
from .nn import OptimizerConfig
from .parallel import deterministic_blas
from .original_task import TrainConfig, generate_dataset, train_original
from .phases import PhaseConfig
from .report import analyze, file_digest, partial_analysis, tree_digest, write_curves, write_json, write_pgm

log = logging.getLogger(__name__)

STAGES = {
    "generate_dataset": 10,
    "train_original": 11,
    "analyze": 12,
    "build_fmcs_dataset": 13,
    "train_fmce": 14,
    "evaluate": 15,
    "grad_cam": 16,
}

# desk-scale losses flatten out near 1e-3 per epoch within 60 epochs
PIPELINE_MU = 1e-3


class StageError(FmceError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage} failed: {cause}")
        self.stage = stage
        self.exit_code = STAGES[stage]
        self.cause = cause


@dataclass
class PipelineConfig:
    seed: int = 7
    k: int = 5
    epochs: int = 60
    n_per_class: int = 500
    batch_size: int = 64
    learning_rate: float = 1e-3
    alpha: float = 0.85
    mode: str = "recursive"
    window: int = 10
    mu: float = PIPELINE_MU
    fmce_epochs: int = 20
    fmce_batch_size: int = 64
    fmce_learning_rate: float = 1e-3
    normalise: bool = True
    figures: bool = True

    def validate(self):
        SmoothingConfig(self.alpha, self.mode)
        CqiConfig(self.window, self.mu)
        PhaseConfig(self.k)
        TrainConfig(self.epochs, self.batch_size, self.seed, OptimizerConfig("adam", self.learning_rate))
        FmceTrainConfig(self.fmce_epochs, self.fmce_batch_size, self.seed,
                        OptimizerConfig("adam", self.fmce_learning_rate))
        if self.n_per_class < 50:
            raise ValueError(f"n_per_class must be >= 50, got {self.n_per_class}")
        return self


@dataclass
class PipelineResult:
    summary: dict
    out_dir: Path
    stage_seconds: dict = field(default_factory=dict)


class _Stage:
    def __init__(self, name, timings):
        self.name = name
        self.timings = timings

    def __enter__(self):
        log.info("stage %s", self.name)
        self.start = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        self.timings[self.name] = round(time.perf_counter() - self.start, 3)
        if exc is not None and not isinstance(exc, StageError):
            raise StageError(self.name, exc) from exc
        return False


def gradcam_samples(model: FmceModel, ds, out_dir: Path, indices: List[int], figures=True, targets=None) -> dict:
    """One PGM per sample plus ``index.json``; target defaults to the sample's label."""
    out_dir.mkdir(parents=True, exist_ok=True)
    entries, maps, captions = [], [], []
    for j, i in enumerate(indices):
        i = int(i)
        if not 0 <= i < len(ds):
            raise IndexError(f"sample index {i} outside 0..{len(ds) - 1}")
        target = int(targets[j]) if targets is not None else int(ds.labels[i])
        hm = grad_cam(model, ds.features[i], target)
        pgm = write_pgm(out_dir / f"sample_{i:06d}_score{target}.pgm", hm)
        entries.append({
            "index": i,
            "label": int(ds.labels[i]),
            "target": target,
            "source_index": int(ds.source_index[i]),
            "marker_epoch": int(ds.marker_epoch[i]),
            "pgm": pgm.name,
            "shape": list(hm.shape),
            "heatmap": [[float(v) for v in row] for row in hm],
        })
        maps.append(hm)
        captions.append(f"FMCS {int(ds.labels[i])} (ep {int(ds.marker_epoch[i])})")
    index = {"samples": entries}
    write_json(out_dir / "index.json", index)
    if figures and maps:
        from .plotting import plot_heatmaps

        plot_heatmaps(maps, captions, out_dir / "gradcam.png")
    return index


def same_image_across_scores(ds) -> List[int]:
    """Indices of one source image at every score, picked from the test split."""
    src = int(ds.source_index[ds.test_idx[0]])
    return [int(np.flatnonzero((ds.source_index == src) & (ds.labels == k))[0]) for k in range(1, ds.k + 1)]


def run_pipeline(cfg: PipelineConfig, out_dir) -> PipelineResult:
    """Run every stage in order; a failing stage raises ``StageError``."""
    cfg.validate()
    with deterministic_blas():
        return _run(cfg, out_dir)


def _run(cfg: PipelineConfig, out_dir) -> PipelineResult:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    timings: dict = {}
    opt = OptimizerConfig("adam", cfg.learning_rate)

    with _Stage("generate_dataset", timings):
        data = generate_dataset(cfg.seed, cfg.n_per_class)

    with _Stage("train_original", timings):
        trace = train_original(data, out / "trace", TrainConfig(cfg.epochs, cfg.batch_size, cfg.seed, opt))

    with _Stage("analyze", timings):
        smoothing = SmoothingConfig(cfg.alpha, cfg.mode)
        cqi_cfg = CqiConfig(cfg.window, cfg.mu)
        phase_cfg = PhaseConfig(cfg.k)
        try:
            analysis = analyze(trace.loss_series, smoothing, cqi_cfg, phase_cfg)
        except FmceError:
            # keep the curves for diagnosis before failing the stage
            write_curves(partial_analysis(trace.loss_series, smoothing, cqi_cfg, phase_cfg),
                         out / "analysis", cfg.figures)
            raise
        report = analysis.report()
        plan_path = write_json(out / "analysis" / "plan.json", report)
        write_curves(analysis, out / "analysis", cfg.figures)

    with _Stage("build_fmcs_dataset", timings):
        ds = fmcs_dataset.build_fmcs_dataset(trace, analysis.plan.markers, data, plan_info=report)
        fmcs_dataset.split(ds, cfg.seed)
        ds_path = out / "fmcs" / "dataset.fmcs"
        ds_path.parent.mkdir(parents=True, exist_ok=True)
        manifest = fmcs_dataset.save(ds, ds_path)

    with _Stage("train_fmce", timings):
        fcfg = FmceTrainConfig(cfg.fmce_epochs, cfg.fmce_batch_size, cfg.seed,
                               OptimizerConfig("adam", cfg.fmce_learning_rate), cfg.normalise)
        model, fmce_losses = train_fmce(ds, fcfg)
        model_path = out / "fmce" / "model.fmck"
        model_path.parent.mkdir(parents=True, exist_ok=True)
        model.save(model_path, {"train": fcfg.to_dict(), "dataset_hash": manifest["content_hash"]})
        if fmce_losses:
            write_loss_csv(out / "fmce" / "loss.csv", fmce_losses)
            if cfg.figures:
                from .plotting import plot_training_loss

                plot_training_loss(fmce_losses, out / "fmce" / "loss.png")

    with _Stage("evaluate", timings):
        metrics = evaluate(model, ds)
        metrics_doc = metrics.to_dict()
        metrics_doc.update({"seed": cfg.seed, "dataset_digest": manifest["content_hash"]})
        metrics_path = write_json(out / "fmce" / "metrics.json", metrics_doc)
        if cfg.figures:
            from .plotting import plot_confusion

            plot_confusion(metrics.confusion, out / "fmce" / "confusion.png")

    with _Stage("grad_cam", timings):
        gc_dir = out / "gradcam"
        gradcam_samples(model, ds, gc_dir, same_image_across_scores(ds), cfg.figures)

    summary = {
        "config": cfg.__dict__.copy(),
        "plan": report,
        "per_label_counts": manifest["per_label_counts"],
        "split": manifest["split"],
        "metrics": {k: metrics_doc[k] for k in ("accuracy", "precision", "recall", "f1")},
        "confusion": metrics_doc["confusion"],
        "original_final_loss": trace.losses[-1],
        "paths": {
            "trace": str(out / "trace"),
            "plan": str(plan_path),
            "dataset": str(ds_path),
            "manifest": str(fmcs_dataset.manifest_path(ds_path)),
            "model": str(model_path),
            "metrics": str(metrics_path),
            "gradcam": str(gc_dir),
        },
        "digests": {
            "trace": tree_digest(out / "trace"),
            "plan": file_digest(plan_path),
            "dataset": manifest["content_hash"],
            "model": file_digest(model_path),
            "metrics": file_digest(metrics_path),
            "gradcam_index": file_digest(gc_dir / "index.json"),
        },
        "stage_seconds": timings,
        "generated_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    write_json(out / "summary.json", summary)
    return PipelineResult(summary, out, timings)
