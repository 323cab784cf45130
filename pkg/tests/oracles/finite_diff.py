"""Central finite differences, one coordinate at a time."""
import numpy as np


def numeric_grad(f, x, h):
    """d f / d x for scalar ``f`` of array ``x`` (perturbed in place, restored)."""
    g = np.zeros(x.shape, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f()
        flat[i] = old - h
        down = f()
        flat[i] = old
        # the perturbation actually applied may differ from h after rounding
        step = (np.float64(old + np.asarray(h, dtype=x.dtype)) - np.float64(old - np.asarray(h, dtype=x.dtype)))
        gflat[i] = (up - down) / step
    return g


def rel_error(analytic, numeric):
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    scale = max(np.linalg.norm(a), np.linalg.norm(n), 1e-12)
    return float(np.linalg.norm(a - n) / scale)
