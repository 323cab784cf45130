"""Report writers: phase-plan JSON, curve tables, graymaps and figures."""
from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .loss_analysis import CqiConfig, CqiSeries, LossSeries, SmoothedSeries, SmoothingConfig, cqi, smooth
from .phases import PhaseConfig, PhasePlan, plan_phases


@dataclass
class Analysis:
    raw: LossSeries
    smoothed: SmoothedSeries
    cqi: CqiSeries
    smoothing: SmoothingConfig
    phase_cfg: PhaseConfig
    plan: Optional[PhasePlan] = None

    def report(self) -> dict:
        if self.plan is None:
            raise ValueError("analysis has no phase plan")
        out = {
            "run_id": self.raw.run_id,
            "alpha": self.smoothing.alpha,
            "mode": self.smoothing.mode.value,
            "window": self.cqi.config.window,
            "mu": self.cqi.config.threshold,
            "k": self.phase_cfg.k,
        }
        out.update(self.plan.to_dict())
        return out


def analyze(raw: LossSeries, smoothing=SmoothingConfig(), cqi_cfg=CqiConfig(), phase_cfg=PhaseConfig()) -> Analysis:
    """Smooth, compute CQI and place markers.

    Segmentation errors propagate; ``partial_analysis`` gives the curves
    without a plan for reporting on failure.
    """
    result = partial_analysis(raw, smoothing, cqi_cfg, phase_cfg)
    result.plan = plan_phases(raw, result.smoothed, result.cqi, phase_cfg)
    return result


def partial_analysis(raw, smoothing=SmoothingConfig(), cqi_cfg=CqiConfig(), phase_cfg=PhaseConfig()) -> Analysis:
    sm = smooth(raw, smoothing)
    return Analysis(raw, sm, cqi(sm, cqi_cfg), smoothing, phase_cfg)


def dumps_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_json(obj))
    return path


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def tree_digest(root) -> str:
    """SHA-256 over relative paths and contents of every file under ``root``."""
    h = hashlib.sha256()
    root = Path(root)
    for p in sorted(q for q in root.rglob("*") if q.is_file()):
        h.update(p.relative_to(root).as_posix().encode() + b"\0")
        h.update(hashlib.sha256(p.read_bytes()).digest())
    return h.hexdigest()


def write_curves(analysis: Analysis, out_dir, figures: bool = True) -> dict:
    """``curves.csv`` (epoch, raw, smoothed, log_smoothed, cqi) plus a figure."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    raw = analysis.raw.values
    sm = analysis.smoothed.values
    logs = np.log(sm) if (sm > 0).all() else np.full(sm.shape, np.nan)
    path = out_dir / "curves.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "raw", "smoothed", "log_smoothed", "cqi"])
        for m in range(1, raw.size + 1):
            c = repr(float(analysis.cqi.cqi[m - 2])) if m >= 2 else ""
            w.writerow([m, repr(float(raw[m - 1])), repr(float(sm[m - 1])), repr(float(logs[m - 1])), c])
    written = {"curves": str(path)}
    if analysis.plan is not None:
        mp = out_dir / "markers.csv"
        with mp.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["score", "epoch", "log_drop"])
            base = analysis.plan.log_series[analysis.plan.baseline_epoch - 1]
            for k, m in enumerate(analysis.plan.markers, 1):
                w.writerow([k, m, repr(float(abs(analysis.plan.log_series[m - 1] - base)))])
        written["markers"] = str(mp)
    if figures:
        from .plotting import plot_loss_analysis

        fig = plot_loss_analysis(
            raw, sm, analysis.cqi.cqi, analysis.cqi.config.threshold, analysis.plan,
            out_dir / "curves.png", title=analysis.raw.run_id,
        )
        written["figure"] = str(fig)
    return written


def write_pgm(path, heatmap) -> Path:
    """8-bit binary PGM of a [0, 1] heatmap."""
    hm = np.clip(np.asarray(heatmap, dtype=np.float64), 0.0, 1.0)
    h, w = hm.shape
    pixels = np.round(hm * 255).astype(np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(f"P5\n{w} {h}\n255\n".encode() + pixels.tobytes())
    return path


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h = (int(v) for v in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w)
