import numpy as np

from .layers import softmax_rows


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy of integer ``labels`` under ``softmax(logits)``.

    ``logits`` may be (N, K) or (N, K, 1, 1).  Returns ``(loss, dlogits)`` with
    ``dlogits`` shaped like ``logits`` and equal to ``(p - onehot) / N``.
    """
    logits = np.asarray(logits)
    shape = logits.shape
    z = logits.reshape(shape[0], -1)
    n, k = z.shape
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (n,):
        raise ValueError(f"expected {n} labels, got shape {labels.shape}")
    if n and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels must lie in [0, {k}), got range [{labels.min()}, {labels.max()}]")
    shifted = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(n)
    loss = float(np.mean(log_norm - shifted[rows, labels]))
    grad = softmax_rows(z)
    grad[rows, labels] -= 1
    grad /= n
    return loss, grad.reshape(shape).astype(logits.dtype, copy=False)
