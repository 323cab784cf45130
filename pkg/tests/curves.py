"""Synthetic loss curves shared by the test modules."""
import numpy as np


def noisy_exponential(seed, epochs=200):
    """floor + A*exp(-rate*m) with multiplicative noise on the decaying part."""
    rng = np.random.default_rng(seed)
    floor = rng.uniform(0.01, 0.1)
    amp = rng.uniform(1.0, 3.0)
    rate = rng.uniform(0.05, 0.1)
    noise = rng.uniform(0.01, 0.08)
    m = np.arange(1, epochs + 1)
    decay = amp * np.exp(-rate * m)
    return floor + decay * (1 + noise * rng.standard_normal(epochs))


def exact_exponential(epochs=200, scale=2.0, rate=0.05):
    m = np.arange(1, epochs + 1)
    return scale * np.exp(-rate * m)
