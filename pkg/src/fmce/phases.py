"""Segmentation of a converged run into K equal log-loss phases.

The total drop of the log-smoothed loss between the baseline epoch (raw loss
maximum) and the convergence epoch is split into K equal shares.  Marker
``E_k`` is the first epoch whose net log-loss drop from the baseline reaches
``k`` shares; ``E_K`` is always the convergence epoch.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import (
    DegenerateCurveError,
    InfeasibleSegmentationError,
    NotConvergedError,
)
from .loss_analysis import CqiSeries, LossSeries, SmoothedSeries

DEFAULT_K = 10

# Relative slack on the crossing test.  A drop that equals k shares in exact
# arithmetic must count as reached even when rounding lands it an ulp short.
CROSSING_RTOL = 1e-12


@dataclass(frozen=True)
class PhaseConfig:
    k: int = DEFAULT_K

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 2:
            raise ValueError(f"number of phases must be an integer >= 2, got {self.k}")
        object.__setattr__(self, "k", int(self.k))


@dataclass(frozen=True)
class PhasePlan:
    baseline_epoch: int
    convergence_epoch: int
    markers: tuple
    total_drop: float
    per_phase_drop: float
    log_series: np.ndarray

    @property
    def k(self) -> int:
        return len(self.markers)

    def to_dict(self) -> dict:
        return {
            "baseline_epoch": self.baseline_epoch,
            "convergence_epoch": self.convergence_epoch,
            "markers": list(self.markers),
            "total_drop": self.total_drop,
            "per_phase_drop": self.per_phase_drop,
        }


def log_transform(series: SmoothedSeries) -> np.ndarray:
    values = series.values
    bad = np.flatnonzero(~(values > 0))
    if bad.size:
        m = int(bad[0])
        raise ValueError(
            f"log transform needs positive smoothed loss; epoch {m + 1} has {values[m]!r}"
        )
    return np.log(values)


def baseline_epoch(raw: LossSeries) -> int:
    # np.argmax returns the first maximum, which is the tie rule we want
    return int(np.argmax(raw.values)) + 1


def plan_phases(
    raw: LossSeries,
    smoothed: SmoothedSeries,
    cqi: CqiSeries,
    cfg: PhaseConfig = PhaseConfig(),
    convergence_epoch: Optional[int] = None,
) -> PhasePlan:
    """Place K epoch markers on the log-smoothed loss.

    ``convergence_epoch`` overrides the epoch taken from ``cqi``; it exists so
    callers can pin E_K when comparing transformed curves.
    """
    ek = convergence_epoch if convergence_epoch is not None else cqi.converged_epoch
    if ek is None:
        raise NotConvergedError(
            f"not yet converged: CQI never reached {cqi.config.threshold:g} "
            f"within {len(smoothed)} epochs"
        )
    if not 1 <= ek <= len(smoothed):
        raise ValueError(f"convergence epoch {ek} outside 1..{len(smoothed)}")
    if len(raw) != len(smoothed):
        raise ValueError("raw and smoothed series differ in length")

    logs = log_transform(smoothed)
    e0 = baseline_epoch(raw)
    k_phases = cfg.k
    total = float(abs(logs[ek - 1] - logs[e0 - 1]))
    if total == 0.0:
        raise DegenerateCurveError(
            f"degenerate curve: log-smoothed loss is identical at baseline epoch {e0} "
            f"and convergence epoch {ek}"
        )
    share = total / k_phases
    drop = np.abs(logs - logs[e0 - 1])
    markers = []
    prev = e0
    for k in range(1, k_phases):
        target = k * share * (1.0 - CROSSING_RTOL)
        # candidates strictly after the previous marker and strictly before E_K
        window = drop[prev:ek - 1]
        hit = np.flatnonzero(window >= target)
        if hit.size == 0:
            raise InfeasibleSegmentationError(
                f"infeasible segmentation: phase {k} threshold is not reached strictly "
                f"between epoch {prev} and convergence epoch {ek}",
                phase=k,
            )
        prev = prev + 1 + int(hit[0])
        markers.append(prev)
    markers.append(ek)
    logs.setflags(write=False)
    return PhasePlan(
        baseline_epoch=e0,
        convergence_epoch=ek,
        markers=tuple(markers),
        total_drop=total,
        per_phase_drop=share,
        log_series=logs,
    )


def assign_fmcs(plan: PhasePlan, epoch: int) -> Optional[int]:
    """Convergence score of ``epoch``: k when it is marker E_k, else None."""
    try:
        return plan.markers.index(epoch) + 1
    except ValueError:
        return None
