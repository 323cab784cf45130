"""Reference classification metrics by explicit counting, no numpy."""


def metrics(true, pred, k):
    counts = [[0] * k for _ in range(k)]
    for t, p in zip(true, pred):
        counts[t - 1][p - 1] += 1
    n = len(true)
    correct = sum(1 for t, p in zip(true, pred) if t == p)
    precisions, recalls, f1s = [], [], []
    for c in range(1, k + 1):
        tp = sum(1 for t, p in zip(true, pred) if t == c and p == c)
        fp = sum(1 for t, p in zip(true, pred) if t != c and p == c)
        fn = sum(1 for t, p in zip(true, pred) if t == c and p != c)
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        precisions.append(prec)
        recalls.append(rec)
        f1s.append(f1)
    return {
        "accuracy": correct / n,
        "precision": sum(precisions) / k,
        "recall": sum(recalls) / k,
        "f1": sum(f1s) / k,
        "confusion": counts,
    }
