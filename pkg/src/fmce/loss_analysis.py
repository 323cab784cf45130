"""Smoothing, differencing and windowed fluctuation of per-epoch loss curves.

The convergence indicator (CQI) of an epoch is the mean absolute change of
the smoothed loss over the last ``window`` epochs.  A run is declared
converged at the first epoch whose CQI is at or below the threshold.

Epochs are 1-based throughout: ``values[0]`` is the loss of epoch 1.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import LossLogError

DEFAULT_ALPHA = 0.85
DEFAULT_WINDOW = 10
DEFAULT_MU = 1e-4


class SmoothingMode(str, Enum):
    RECURSIVE = "recursive"
    # previous RAW loss in the recurrence, as the formula is usually printed
    PAPER_LITERAL = "paper_literal"

    @classmethod
    def parse(cls, text: Union[str, "SmoothingMode"]) -> "SmoothingMode":
        if isinstance(text, cls):
            return text
        key = str(text).strip().lower().replace("-", "_")
        try:
            return cls(key)
        except ValueError:
            raise ValueError(
                f"unknown smoothing mode {text!r}; expected 'recursive' or 'paper-literal'"
            ) from None


@dataclass(frozen=True)
class LossSeries:
    values: np.ndarray
    run_id: str = "run"

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64).copy()
        if arr.ndim != 1:
            raise LossLogError("loss series must be one-dimensional")
        if arr.size < 2:
            raise LossLogError(f"loss series needs at least 2 epochs, got {arr.size}")
        bad = np.flatnonzero(~np.isfinite(arr))
        if bad.size:
            raise LossLogError(f"non-finite loss at epoch {bad[0] + 1}")
        neg = np.flatnonzero(arr < 0)
        if neg.size:
            raise LossLogError(f"negative loss {arr[neg[0]]!r} at epoch {neg[0] + 1}")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    def __len__(self):
        return self.values.size


@dataclass(frozen=True)
class SmoothingConfig:
    alpha: float = DEFAULT_ALPHA
    mode: SmoothingMode = SmoothingMode.RECURSIVE

    def __post_init__(self):
        if not (0.0 < self.alpha <= 1.0):
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        object.__setattr__(self, "mode", SmoothingMode.parse(self.mode))


@dataclass(frozen=True)
class SmoothedSeries:
    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64).copy()
        if arr.ndim != 1 or arr.size < 1:
            raise ValueError("smoothed series must be a non-empty 1-D sequence")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    def __len__(self):
        return self.values.size


@dataclass(frozen=True)
class CqiConfig:
    window: int = DEFAULT_WINDOW
    threshold: float = DEFAULT_MU

    def __post_init__(self):
        if int(self.window) != self.window or self.window < 1:
            raise ValueError(f"window must be an integer >= 1, got {self.window}")
        if not (self.threshold > 0 and math.isfinite(self.threshold)):
            raise ValueError(f"threshold must be positive, got {self.threshold}")
        object.__setattr__(self, "window", int(self.window))


@dataclass(frozen=True)
class CqiSeries:
    """First differences and windowed CQI, both indexed from epoch 2.

    ``diffs[j]`` and ``cqi[j]`` belong to epoch ``j + 2``.
    """

    diffs: np.ndarray
    cqi: np.ndarray
    converged_epoch: Optional[int] = None
    config: CqiConfig = field(default_factory=CqiConfig)

    @property
    def epochs(self) -> np.ndarray:
        return np.arange(2, self.cqi.size + 2)

    def at(self, epoch: int) -> float:
        if not 2 <= epoch <= self.cqi.size + 1:
            raise IndexError(f"no CQI value for epoch {epoch}")
        return float(self.cqi[epoch - 2])


def smooth(series: LossSeries, cfg: SmoothingConfig = SmoothingConfig()) -> SmoothedSeries:
    """Exponentially smooth a loss series, seeding with the first raw value.

    recursive:      s[m] = alpha * s[m-1] + (1 - alpha) * L[m]
    paper_literal:  s[m] = alpha * L[m-1] + (1 - alpha) * L[m]
    """
    raw = series.values
    alpha = cfg.alpha
    out = np.empty_like(raw)
    out[0] = raw[0]
    # written as prev + (1 - alpha) * (cur - prev) so constant runs stay exact
    if cfg.mode is SmoothingMode.PAPER_LITERAL:
        out[1:] = raw[:-1] + (1.0 - alpha) * (raw[1:] - raw[:-1])
    else:
        prev = raw[0]
        for m in range(1, raw.size):
            prev = prev + (1.0 - alpha) * (raw[m] - prev)
            out[m] = prev
    return SmoothedSeries(out)


def first_difference(series: SmoothedSeries) -> np.ndarray:
    values = series.values
    if values.size < 2:
        raise ValueError("first difference needs at least 2 values")
    return np.diff(values)


def windowed_mean_abs(diffs: np.ndarray, window: int) -> np.ndarray:
    """Trailing mean of |diffs| over ``window`` entries, truncated at the head."""
    absd = np.abs(np.asarray(diffs, dtype=np.float64))
    n = absd.size
    out = np.empty(n)
    head = min(window, n)
    for j in range(head):
        out[j] = absd[: j + 1].sum() / (j + 1)
    if n > window:
        out[window:] = sliding_window_view(absd, window)[1:].sum(axis=1) / window
    return out


def cqi(series: SmoothedSeries, cfg: CqiConfig = CqiConfig()) -> CqiSeries:
    diffs = first_difference(series)
    ind = windowed_mean_abs(diffs, cfg.window)
    hits = np.flatnonzero(ind <= cfg.threshold)
    converged = int(hits[0]) + 2 if hits.size else None
    diffs.setflags(write=False)
    ind.setflags(write=False)
    return CqiSeries(diffs=diffs, cqi=ind, converged_epoch=converged, config=cfg)


# -- loss-log files ---------------------------------------------------------

def parse_loss_log(text: str, run_id: str = "run") -> LossSeries:
    """Parse ``epoch,loss`` CSV (with header) or JSON-lines records."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise LossLogError("empty loss log")
    if lines[0].lstrip().startswith("{"):
        records = []
        for lineno, ln in enumerate(lines, 1):
            try:
                obj = json.loads(ln)
                records.append((obj["epoch"], obj["loss"]))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise LossLogError(f"line {lineno}: bad JSON record ({exc})") from None
    else:
        reader = csv.reader(io.StringIO("\n".join(lines)))
        header = [h.strip().lower() for h in next(reader)]
        try:
            ie, il = header.index("epoch"), header.index("loss")
        except ValueError:
            raise LossLogError(f"header must name 'epoch' and 'loss' columns, got {header}") from None
        records = []
        for lineno, row in enumerate(reader, 2):
            try:
                records.append((row[ie].strip(), row[il].strip()))
            except IndexError:
                raise LossLogError(f"line {lineno}: missing column") from None

    epochs, losses = [], []
    for lineno, (e, v) in enumerate(records, 1):
        try:
            ef = float(e)
            if isinstance(e, bool) or ef != int(ef):
                raise ValueError
            epochs.append(int(ef))
            losses.append(float(v))
        except (TypeError, ValueError):
            raise LossLogError(f"record {lineno}: cannot parse epoch={e!r} loss={v!r}") from None
    if epochs != list(range(1, len(epochs) + 1)):
        raise LossLogError("epochs must be contiguous and ascending starting at 1")
    return LossSeries(np.array(losses), run_id=run_id)


def read_loss_log(path: Union[str, Path], run_id: Optional[str] = None) -> LossSeries:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise LossLogError(f"cannot read {path}: {exc}") from None
    return parse_loss_log(text, run_id=run_id or path.stem)


def format_loss_csv(values: Sequence[float]) -> str:
    rows = ["epoch,loss"]
    rows += [f"{m},{float(v)!r}" for m, v in enumerate(values, 1)]
    return "\n".join(rows) + "\n"


def write_loss_csv(path: Union[str, Path], values: Sequence[float]) -> None:
    Path(path).write_text(format_loss_csv(values))
