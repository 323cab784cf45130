"""Minibatch training loop shared by both networks."""
import math

import numpy as np

from ..errors import DivergenceError
from .loss import softmax_cross_entropy
from .optim import make_optimizer, step


def run_epochs(model, images, labels, cfg, shuffle_rng, on_epoch=None, transform=None):
    """Minibatch cross-entropy training; returns the mean loss of every epoch.

    ``cfg`` needs ``epochs``, ``batch_size`` and ``optimizer``.  ``labels`` are
    0-based class indices.  Aborts when an epoch loss is non-finite or exceeds
    ten times the first epoch's loss.
    """
    state = make_optimizer(cfg.optimizer, model.parameters())
    stop = model.logits_stop()
    n = images.shape[0]
    losses = []
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            batch = images[idx] if transform is None else transform(images[idx])
            logits, cache = model.forward(batch, stop=stop)
            loss, dlogits = softmax_cross_entropy(logits, labels[idx])
            grads, _ = model.backward(cache, dlogits)
            step(state, model.parameters(), grads)
            total += loss * idx.size
        epoch_loss = total / n
        if not math.isfinite(epoch_loss) or (losses and epoch_loss > 10 * losses[0]):
            raise DivergenceError(
                f"training diverged at epoch {epoch}: loss {epoch_loss:g} "
                f"(initial {losses[0] if losses else float('nan'):g})"
            )
        losses.append(epoch_loss)
        if on_epoch is not None:
            on_epoch(epoch, epoch_loss)
    return losses
