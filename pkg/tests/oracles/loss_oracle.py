"""Straight-line reference for the loss analysis: plain floats and loops only.

Deliberately shares no code with the package.  Run as a script to regenerate
``tests/fixtures/*_oracle.json`` from the CSV fixtures next to it.
"""
import json
import math
import sys
from pathlib import Path

RTOL = 1e-12


def smooth(losses, alpha, literal=False):
    out = [losses[0]]
    for m in range(1, len(losses)):
        prev = losses[m - 1] if literal else out[m - 1]
        out.append(alpha * prev + (1 - alpha) * losses[m])
    return out


def cqi(smoothed, window):
    diffs = [smoothed[m] - smoothed[m - 1] for m in range(1, len(smoothed))]
    values = []
    for j in range(len(diffs)):
        w = min(window, j + 1)
        total = 0.0
        for i in range(j - w + 1, j + 1):
            total += abs(diffs[i])
        values.append(total / w)
    return values


def analyze(losses, alpha=0.85, window=10, mu=1e-4, k=10, literal=False, converged=None):
    """Return ``{"converged_epoch", "baseline_epoch", "markers", "error"}``."""
    sm = smooth(losses, alpha, literal)
    ind = cqi(sm, window)
    result = {"converged_epoch": None, "baseline_epoch": None, "markers": None, "error": None}
    if converged is None:
        for j, v in enumerate(ind):
            if v <= mu:
                converged = j + 2
                break
    result["converged_epoch"] = converged
    if converged is None:
        result["error"] = "not_converged"
        return result

    best = 0
    for m in range(len(losses)):
        if losses[m] > losses[best]:
            best = m
    e0 = best + 1
    result["baseline_epoch"] = e0

    logs = [math.log(v) for v in sm]
    g = abs(logs[converged - 1] - logs[e0 - 1])
    if g == 0.0:
        result["error"] = "degenerate"
        return result
    dg = g / k

    markers = []
    last = e0
    for phase in range(1, k):
        need = phase * dg * (1 - RTOL)
        found = None
        m = last + 1
        while m < converged:
            if abs(logs[m - 1] - logs[e0 - 1]) >= need:
                found = m
                break
            m += 1
        if found is None:
            result["error"] = "infeasible"
            return result
        markers.append(found)
        last = found
    markers.append(converged)
    result["markers"] = markers
    return result


def read_csv(path):
    rows = Path(path).read_text().strip().splitlines()[1:]
    return [float(r.split(",")[1]) for r in rows]


if __name__ == "__main__":
    here = Path(__file__).resolve().parent.parent / "fixtures"
    for name in sys.argv[1:] or ["exp_decay"]:
        res = analyze(read_csv(here / f"{name}.csv"))
        (here / f"{name}_oracle.json").write_text(json.dumps(res, indent=2) + "\n")
        print(name, res)
