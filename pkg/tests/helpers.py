"""Independent reference implementations used as test oracles.

Everything here is straight-line numpy, written without the package's
tape machinery so the checks stay independent of the code under test.
"""

import numpy as np


def leaky(x, slope=0.2):
    return np.where(x > 0, x, slope * x)


def gcn_reference(features, adjacency, weight, slope=0.2):
    """Brute-force per-node graph update: stack neighbours, embed, mix by
    the adjacency row, add the self term, apply the leaky ReLU."""
    n, d = features.shape
    out = np.zeros((n, d))
    for i in range(n):
        others = [j for j in range(n) if j != i]
        stacked = features[others, :]
        messages = stacked @ weight
        row = adjacency[i, others]
        pre = row @ messages + adjacency[i, i] * (features[i] @ weight)
        out[i] = leaky(pre, slope)
    return out


def birnn_reference(inputs, embed_fwd, embed_bwd, project_fwd, project_bwd, bias):
    """Sequential reference of the gateless bidirectional cell."""
    n, d = inputs.shape

    def sigmoid(z):
        return 1.0 / (1.0 + np.exp(-z))

    fwd = np.zeros((n, d))
    state = np.zeros(d)
    for i in range(n):
        h = sigmoid(embed_fwd @ np.concatenate([state, inputs[i]]))
        state = project_fwd @ h
        fwd[i] = state
    bwd = np.zeros((n, d))
    state = np.zeros(d)
    for i in reversed(range(n)):
        h = sigmoid(embed_bwd @ np.concatenate([state, inputs[i]]))
        state = project_bwd @ h
        bwd[i] = state
    return np.tanh(fwd + bwd + bias)


def nearest_centroid_accuracy(x_train, y_train, x_test, y_test):
    """Classify mean-pooled pixel vectors by the closest class centroid."""
    train_flat = x_train.mean(axis=1).reshape(len(x_train), -1)
    test_flat = x_test.mean(axis=1).reshape(len(x_test), -1)
    classes = np.unique(y_train)
    centroids = np.stack([train_flat[y_train == k].mean(axis=0) for k in classes])
    dists = ((test_flat[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    preds = classes[np.argmin(dists, axis=1)]
    return float((preds == y_test).mean())


def spearman(x, y):
    """Spearman rank correlation via average ranks and Pearson on ranks."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)

    def ranks(v):
        order = np.argsort(v, kind="stable")
        r = np.empty(len(v))
        r[order] = np.arange(1, len(v) + 1)
        # average ranks over ties
        for val in np.unique(v):
            mask = v == val
            if mask.sum() > 1:
                r[mask] = r[mask].mean()
        return r

    rx, ry = ranks(x), ranks(y)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = np.sqrt((rx**2).sum() * (ry**2).sum())
    return float((rx * ry).sum() / denom) if denom else 0.0
