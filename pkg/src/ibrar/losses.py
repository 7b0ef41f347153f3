"""Training objectives: cross-entropy, the dependence-regularized loss,
and its combinations with adversarial training.

The regularized objective is

    L = L_CE + alpha * sum_l I(X, T_l) - beta * sum_l I(Y, T_l)

with HSIC standing in for mutual information, summed over a configurable
set of hidden layers.  Adversarial variants take the cross-entropy term
on perturbed inputs while (by default) keeping the dependence terms on
the clean batch.  TRADES and MART follow their source formulations with
lambda defaulting to 6.

The inner maximizations need the attack module; those imports happen
inside the functions to keep the layering acyclic (attacks build on the
plain losses here).
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff import (Tensor, amax, clamp, exp, kl_div, log, log_softmax,
                       matmul, multiply, negative, softmax_cross_entropy,
                       subtract, tmean, tsum)
from .hsic import (KernelConfig, activation_kernel, gram, label_kernel,
                   one_hot)


@dataclass(frozen=True)
class IBLossConfig:
    """Weights and scope of the dependence terms.

    layers: "all", or a tuple of 1-based hidden-layer indices (a single
    index is accepted and normalized to a one-element tuple).
    mi_on_clean: under adversarial training, compute the dependence
    terms on the clean batch (default) or on the perturbed one.
    """

    alpha: float = 0.01
    beta: float = 0.1
    layers: object = "all"
    mi_on_clean: bool = True
    kernel_x: KernelConfig = field(default_factory=activation_kernel)
    kernel_t: KernelConfig = field(default_factory=activation_kernel)
    kernel_y: KernelConfig = field(default_factory=label_kernel)

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError(f"IBLossConfig: alpha and beta must be >= 0, "
                             f"got {self.alpha}, {self.beta}")
        if self.layers != "all":
            idx = (self.layers,) if isinstance(self.layers, int) else tuple(self.layers)
            if not idx or any(int(i) != i or i < 1 for i in idx):
                raise ValueError(f"IBLossConfig: layers must be 'all' or 1-based indices, "
                                 f"got {self.layers!r}")
            object.__setattr__(self, "layers", tuple(int(i) for i in idx))


def ib_preset(name):
    """Named weight presets: 'mini' for the reference desk net, 'vgg16'
    for the full-scale recipe the fraction rule was derived from."""
    presets = {"mini": IBLossConfig(alpha=0.01, beta=0.1),
               "vgg16": IBLossConfig(alpha=1.0, beta=0.1)}
    if name not in presets:
        raise ValueError(f"ib_preset: unknown preset {name!r}")
    return presets[name]


def alpha_for_beta(beta):
    """The fixed alpha = 0.1 * beta coupling used by the sweep grid."""
    return 0.1 * beta


@dataclass(frozen=True)
class AdvTrainKind:
    """Adversarial-training flavor plus its inner attack.

    kind: none | pgd_at | trades | mart.  lam weighs the robustness term
    of trades/mart and must be positive there.  attack is the inner
    AttackConfig (required for every kind but none).
    """

    kind: str = "none"
    lam: float = 6.0
    attack: object = None

    def __post_init__(self):
        if self.kind not in ("none", "pgd_at", "trades", "mart"):
            raise ValueError(f"AdvTrainKind: unknown kind {self.kind!r}")
        if self.kind in ("trades", "mart") and not self.lam > 0:
            raise ValueError(f"AdvTrainKind: lambda must be positive, got {self.lam}")
        if self.kind != "none" and self.attack is None:
            raise ValueError(f"AdvTrainKind: {self.kind} needs an inner attack config")


class LossOut:
    """A scalar loss with its reported components and the traced forward."""

    __slots__ = ("total", "parts", "trace")

    def __init__(self, total, parts, trace):
        self.total = total
        self.parts = parts
        self.trace = trace


def ce_loss(logits, labels):
    """Mean softmax cross-entropy; ln(classes) on uniform logits."""
    return softmax_cross_entropy(logits, labels)


def _labels_and_onehot(y, classes, dtype):
    """Accept integer labels or one-hot rows; return both forms."""
    arr = y.data if isinstance(y, Tensor) else np.asarray(y)
    if arr.ndim == 2:
        return arr.argmax(axis=1), np.asarray(arr, dtype=dtype)
    labels = arr.astype(np.int64)
    return labels, one_hot(labels, classes, dtype=dtype)


def _selected_layers(cfg, trace):
    count = len(trace.layers)
    if cfg.layers == "all":
        return list(range(1, count + 1))
    bad = [i for i in cfg.layers if i > count]
    if bad:
        raise ValueError(f"IBLossConfig: layer indices {bad} out of range, "
                         f"network has {count} hidden layers")
    return list(cfg.layers)


def ib_terms(x, trace, y_onehot, cfg):
    """Dependence sums over the selected layers of one traced forward.

    Returns (sum hsic(X,T_l), sum hsic(Y,T_l), per-layer values); each
    sum is None when its weight is zero and the graph was skipped.
    Centered input/label Grams are shared across layers.
    """
    m = x.shape[0]
    layers = _selected_layers(cfg, trace)
    scale = 1.0 / (m - 1) ** 2
    h = Tensor(np.eye(m, dtype=x.dtype) - 1.0 / m)

    def centered(k):
        return matmul(matmul(h, k), h)

    sum_x = sum_y = None
    per_layer = []
    cx = centered(gram(x, cfg.kernel_x)) if cfg.alpha > 0 else None
    cy = centered(gram(Tensor(y_onehot), cfg.kernel_y)) if cfg.beta > 0 else None
    for l in layers:
        kt = gram(trace.layers[l - 1], cfg.kernel_t)
        hx = hy = None
        if cx is not None:
            hx = multiply(tsum(multiply(cx, kt)), scale)
            sum_x = hx if sum_x is None else sum_x + hx
        if cy is not None:
            hy = multiply(tsum(multiply(cy, kt)), scale)
            sum_y = hy if sum_y is None else sum_y + hy
        per_layer.append((l, None if hx is None else hx.item(),
                          None if hy is None else hy.item()))
    return sum_x, sum_y, per_layer


def ib_rar_loss(net, x, y, cfg, use_mask=True):
    """The regularized objective on a clean batch.

    Returns a LossOut; with alpha=beta=0 the total is bitwise the plain
    cross-entropy.  The trace honors any attached mask, so masked
    channels contribute nothing to the dependence sums.
    """
    x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=net.dtype))
    if x.shape[0] < 2:
        raise ValueError(f"ib_rar_loss: need a batch of at least 2, got {x.shape[0]}")
    labels, y1h = _labels_and_onehot(y, net.config.classes, net.dtype)
    logits, trace = net.forward_with_trace(x, use_mask=use_mask)
    ce = ce_loss(logits, labels)
    total = ce
    parts = {"ce": ce.item(), "mi_x": 0.0, "mi_y": 0.0, "per_layer": []}
    if cfg.alpha > 0 or cfg.beta > 0:
        sum_x, sum_y, per_layer = ib_terms(x, trace, y1h, cfg)
        parts["per_layer"] = per_layer
        if sum_x is not None:
            total = total + multiply(sum_x, cfg.alpha)
            parts["mi_x"] = sum_x.item()
        if sum_y is not None:
            total = subtract(total, multiply(sum_y, cfg.beta))
            parts["mi_y"] = sum_y.item()
    parts["total"] = total.item()
    return LossOut(total, parts, trace)


def adv_ib_rar_loss(net, x, y, cfg, adv, rng=None):
    """Adversarial-training objective per the configured flavor.

    pgd_at: cross-entropy on X+delta from a CE-PGD inner maximization,
    plus the dependence terms on the clean batch (or the perturbed one
    when mi_on_clean is off).  trades/mart dispatch to their own forms.
    """
    if adv.kind == "none":
        return ib_rar_loss(net, x, y, cfg)
    if adv.kind == "trades":
        return trades_loss(net, x, y, adv.lam, adv.attack, ib_cfg=cfg, rng=rng)
    if adv.kind == "mart":
        return mart_loss(net, x, y, adv.lam, adv.attack, ib_cfg=cfg, rng=rng)

    from . import attacks
    x_arr = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=net.dtype)
    labels, y1h = _labels_and_onehot(y, net.config.classes, net.dtype)
    x_adv = attacks.pgd(net, x_arr, labels, replace(adv.attack, loss_kind="ce"), rng=rng)
    logits_adv, trace_adv = net.forward_with_trace(Tensor(x_adv))
    ce = ce_loss(logits_adv, labels)
    total = ce
    parts = {"ce": ce.item(), "mi_x": 0.0, "mi_y": 0.0, "per_layer": []}
    trace = trace_adv
    if cfg.alpha > 0 or cfg.beta > 0:
        if cfg.mi_on_clean:
            x_t = Tensor(x_arr)
            _, trace = net.forward_with_trace(x_t)
            sum_x, sum_y, per_layer = ib_terms(x_t, trace, y1h, cfg)
        else:
            sum_x, sum_y, per_layer = ib_terms(Tensor(x_adv), trace_adv, y1h, cfg)
        parts["per_layer"] = per_layer
        if sum_x is not None:
            total = total + multiply(sum_x, cfg.alpha)
            parts["mi_x"] = sum_x.item()
        if sum_y is not None:
            total = subtract(total, multiply(sum_y, cfg.beta))
            parts["mi_y"] = sum_y.item()
    parts["total"] = total.item()
    return LossOut(total, parts, trace)


def _ib_extras(total, parts, x_t, trace, y1h, cfg):
    """Fold clean-batch dependence terms into an adversarial objective."""
    if cfg is None or (cfg.alpha == 0 and cfg.beta == 0):
        return total
    sum_x, sum_y, per_layer = ib_terms(x_t, trace, y1h, cfg)
    parts["per_layer"] = per_layer
    if sum_x is not None:
        total = total + multiply(sum_x, cfg.alpha)
        parts["mi_x"] = sum_x.item()
    if sum_y is not None:
        total = subtract(total, multiply(sum_y, cfg.beta))
        parts["mi_y"] = sum_y.item()
    return total


def trades_loss(net, x, y, lam, inner_cfg, ib_cfg=None, rng=None):
    """Clean cross-entropy plus lam * mean KL(f(X+delta*) || f(X)),
    where delta* maximizes that KL within the attack ball."""
    if not lam > 0:
        raise ValueError(f"trades_loss: lambda must be positive, got {lam}")
    from . import attacks
    x_arr = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=net.dtype)
    labels, y1h = _labels_and_onehot(y, net.config.classes, net.dtype)
    x_t = Tensor(x_arr)
    logits_c, trace = net.forward_with_trace(x_t)
    ref = log_softmax(logits_c).data  # fixed reference inside the inner loop

    def kl_to_clean(xt):
        return kl_div(log_softmax(net.forward(xt)), Tensor(ref))

    x_adv = attacks.ascend(net, x_arr, inner_cfg, kl_to_clean, rng=rng)
    logits_a = net.forward(Tensor(x_adv))
    kl = kl_div(log_softmax(logits_a), log_softmax(logits_c))
    ce = ce_loss(logits_c, labels)
    total = ce + multiply(kl, lam)
    parts = {"ce": ce.item(), "kl": kl.item(), "mi_x": 0.0, "mi_y": 0.0, "per_layer": []}
    total = _ib_extras(total, parts, x_t, trace, y1h, ib_cfg)
    parts["total"] = total.item()
    return LossOut(total, parts, trace)


def mart_loss(net, x, y, lam, inner_cfg, ib_cfg=None, rng=None):
    """Boosted cross-entropy on X+delta* plus the misclassification-aware
    KL term, delta* from a CE-PGD inner maximization.

    The boost adds -log(1 - p_topwrong) on the perturbed output; the KL
    between perturbed and clean predictions is weighted per example by
    (1 - p_true(clean)).
    """
    if not lam > 0:
        raise ValueError(f"mart_loss: lambda must be positive, got {lam}")
    from . import attacks
    x_arr = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=net.dtype)
    labels, y1h = _labels_and_onehot(y, net.config.classes, net.dtype)
    x_adv = attacks.pgd(net, x_arr, labels, replace(inner_cfg, loss_kind="ce"), rng=rng)

    x_t = Tensor(x_arr)
    logits_c, trace = net.forward_with_trace(x_t)
    logits_a = net.forward(Tensor(x_adv))
    oh = Tensor(y1h)

    lp_a = log_softmax(logits_a)
    p_a = exp(lp_a)
    p_topwrong = amax(subtract(p_a, oh), axis=1)  # true class pushed below 0
    boost = tmean(negative(log(clamp(subtract(1.0, p_topwrong), 1e-12, None))))
    ce_adv = ce_loss(logits_a, labels)
    boosted = ce_adv + boost

    lp_c = log_softmax(logits_c)
    kl_per = tsum(multiply(p_a, subtract(lp_a, lp_c)), axis=1)
    p_true = tsum(multiply(exp(lp_c), oh), axis=1)
    robust = tmean(multiply(subtract(1.0, p_true), kl_per))

    total = boosted + multiply(robust, lam)
    parts = {"ce": ce_adv.item(), "boost": boost.item(), "kl_weighted": robust.item(),
             "mi_x": 0.0, "mi_y": 0.0, "per_layer": []}
    total = _ib_extras(total, parts, x_t, trace, y1h, ib_cfg)
    parts["total"] = total.item()
    return LossOut(total, parts, trace)
