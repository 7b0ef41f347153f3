"""Hilbert-Schmidt independence criterion on minibatches.

The biased estimator trace(Ka H Kb H) / (m-1)^2 over Gram matrices of a
batch, differentiable end to end so it can serve as a loss term.  The
centering is folded in as sum((H Ka H) * Kb), which equals the trace
form for symmetric Kb.  Bandwidths chosen by the median heuristic are
treated as constants: no gradient flows through sigma.

Scores are minibatch quantities; no correction toward a population value
is attempted anywhere.
"""

from dataclasses import dataclass

import numpy as np

from .autodiff import (Tensor, exp, flatten, matmul, multiply, pairwise_sq_dist,
                       tsum)


@dataclass(frozen=True)
class KernelConfig:
    """Kernel family plus bandwidth rule.

    kind: "gaussian" or "linear".
    bandwidth: "median" for the per-batch median heuristic, or a fixed
    positive float.  Ignored by the linear kernel.
    """

    kind: str = "gaussian"
    bandwidth: object = "median"

    def __post_init__(self):
        if self.kind not in ("gaussian", "linear"):
            raise ValueError(f"KernelConfig: unknown kernel kind {self.kind!r}")
        if self.bandwidth != "median":
            bw = float(self.bandwidth)
            if not bw > 0:
                raise ValueError(f"KernelConfig: bandwidth must be positive, got {bw}")
            object.__setattr__(self, "bandwidth", bw)


def activation_kernel():
    """Default kernel for inputs and hidden activations."""
    return KernelConfig("gaussian", "median")


def label_kernel():
    """Default kernel for one-hot labels (fixed unit bandwidth)."""
    return KernelConfig("gaussian", 1.0)


def one_hot(labels, classes, dtype=np.float64):
    y = np.asarray(labels)
    out = np.zeros((y.shape[0], classes), dtype=dtype)
    out[np.arange(y.shape[0]), y] = 1.0
    return out


def median_bandwidth(sq_dists):
    """Median off-diagonal Euclidean distance; 1.0 for a constant batch."""
    m = sq_dists.shape[0]
    off = ~np.eye(m, dtype=bool)
    med = float(np.median(np.sqrt(sq_dists[off])))
    return med if med > 0 else 1.0


def gram(batch, config):
    """Gram matrix of a batch; rows are examples, trailing axes flatten."""
    a = batch if isinstance(batch, Tensor) else Tensor(batch)
    if a.ndim == 1:
        raise ValueError(f"gram: expected (m, features), got {a.shape}")
    if a.ndim > 2:
        a = flatten(a)
    m = a.shape[0]
    if m < 2:
        raise ValueError(f"gram: need at least 2 examples, got {m}")
    if config.kind == "linear":
        return matmul(a, a.T)
    sq = pairwise_sq_dist(a)
    sigma = config.bandwidth if config.bandwidth != "median" else median_bandwidth(sq.data)
    return exp(multiply(sq, -1.0 / (2.0 * sigma * sigma)))


def hsic(a, b, config_a=None, config_b=None):
    """Dependence between two views of one batch, as a scalar Tensor.

    Differentiable into both arguments; nonnegative up to float noise.
    """
    config_a = config_a or activation_kernel()
    config_b = config_b or activation_kernel()
    ka = gram(a, config_a)
    kb = gram(b, config_b)
    m = ka.shape[0]
    if kb.shape[0] != m:
        raise ValueError(f"hsic: batches disagree, {m} vs {kb.shape[0]} examples")
    h = Tensor(np.eye(m, dtype=ka.dtype) - 1.0 / m)
    centered = matmul(matmul(h, ka), h)
    return multiply(tsum(multiply(centered, kb)), 1.0 / (m - 1) ** 2)


def channel_hsic(channel_stack, labels_onehot, config_channel=None, config_label=None):
    """Per-channel dependence scores against the labels.

    channel_stack has shape (C, m, features); returns a float array of C
    plain (non-graph) HSIC values.
    """
    config_channel = config_channel or activation_kernel()
    config_label = config_label or label_kernel()
    stack = channel_stack.data if isinstance(channel_stack, Tensor) else np.asarray(channel_stack)
    if stack.ndim != 3 or stack.shape[0] == 0:
        raise ValueError(f"channel_hsic: expected (C, m, features) with C >= 1, got {stack.shape}")
    y = labels_onehot.data if isinstance(labels_onehot, Tensor) else np.asarray(labels_onehot)
    return np.array([
        hsic(Tensor(stack[c]), Tensor(y), config_channel, config_label).item()
        for c in range(stack.shape[0])
    ])
