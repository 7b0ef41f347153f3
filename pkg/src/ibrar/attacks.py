"""White-box L-infinity gradient attacks.

All attacks share one ascent loop: differentiate a scalar objective
w.r.t. the current input, step by the gradient sign, project onto the
eps-ball around the original batch, clamp to the valid range.  They
differentiate w.r.t. inputs only, so network parameter state (values
and .grad fields) is bit-identical before and after any attack.

Randomness (the PGD random start) comes from an injected Generator;
omitting it falls back to a fresh unseeded one, so pass an rng anywhere
determinism matters.
"""

from dataclasses import dataclass, replace

import numpy as np

from .autodiff import Tensor, grad, log_softmax, multiply, subtract, tmean, tsum
from .autodiff import amax as t_amax
from .autodiff import clamp as t_clamp
from .hsic import one_hot
from .losses import ib_rar_loss


@dataclass(frozen=True)
class AttackConfig:
    """L-infinity attack parameters.

    loss_kind selects the ascent objective: "ce", "margin" (the CW
    surrogate), or "ib_rar" (the adaptive attack; requires `ib`, the
    defender's IBLossConfig).  clamp is the valid input range.
    """

    eps: float
    step: float
    steps: int = 10
    random_start: bool = True
    loss_kind: str = "ce"
    ib: object = None
    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self):
        if not (0 <= self.step <= self.eps <= self.hi - self.lo):
            raise ValueError(f"AttackConfig: need 0 <= step <= eps <= hi-lo, "
                             f"got step={self.step}, eps={self.eps}, "
                             f"range=[{self.lo}, {self.hi}]")
        if self.steps < 1:
            raise ValueError(f"AttackConfig: steps must be >= 1, got {self.steps}")
        if self.loss_kind not in ("ce", "margin", "ib_rar"):
            raise ValueError(f"AttackConfig: unknown loss_kind {self.loss_kind!r}")


def mnist_attack(eps=0.1, step=0.02, steps=10, **kw):
    """Defaults for inputs on the [0,1] grayscale scale."""
    return AttackConfig(eps=eps, step=step, steps=steps, **kw)


def cifar_attack(eps=8 / 255, step=2 / 255, steps=10, **kw):
    return AttackConfig(eps=eps, step=step, steps=steps, **kw)


def cw_attack(eps=0.1, step=0.02, steps=200, **kw):
    kw.setdefault("random_start", False)
    return AttackConfig(eps=eps, step=step, steps=steps, loss_kind="margin", **kw)


def _loss_builder(net, labels, cfg):
    """The ascent objective as a closure over the current input tensor."""
    if cfg.loss_kind == "ce":
        from .autodiff import softmax_cross_entropy

        def build(xt):
            return softmax_cross_entropy(net.forward(xt), labels)
    elif cfg.loss_kind == "margin":
        oh = one_hot(labels, net.config.classes, dtype=net.dtype)

        def build(xt):
            return margin_loss(net.forward(xt), oh)
    else:
        if cfg.ib is None:
            raise ValueError("AttackConfig: loss_kind 'ib_rar' needs the defender's IBLossConfig")

        def build(xt):
            return ib_rar_loss(net, xt, labels, cfg.ib).total
    return build


def margin_loss(logits, labels_onehot, kappa=0.0):
    """Mean of min(z_bestwrong - z_true, kappa).

    Ascending this pushes inputs across the decision boundary and
    saturates once the misclassification margin reaches kappa, the
    standard margin surrogate behavior.
    """
    oh = labels_onehot if isinstance(labels_onehot, Tensor) else Tensor(labels_onehot)
    z_true = tsum(multiply(logits, oh), axis=1)
    z_wrong = t_amax(subtract(logits, multiply(oh, 1e9)), axis=1)
    return tmean(t_clamp(subtract(z_wrong, z_true), None, kappa))


def ascend(net, x, cfg, loss_fn, rng=None, momentum_decay=None):
    """Shared projected-gradient ascent loop.

    loss_fn maps the current input Tensor to a scalar objective.  With
    momentum_decay set, gradients are L1-normalized per example into a
    momentum buffer and steps are taken at the Nesterov look-ahead
    point.
    """
    x0 = np.asarray(x, dtype=net.dtype)
    cur = x0.copy()
    if cfg.random_start and cfg.eps > 0:
        r = rng if rng is not None else np.random.default_rng()
        cur = np.clip(cur + r.uniform(-cfg.eps, cfg.eps, size=x0.shape),
                      cfg.lo, cfg.hi).astype(net.dtype)
    g_mom = np.zeros_like(x0) if momentum_decay is not None else None
    reduce_axes = tuple(range(1, x0.ndim))
    for _ in range(cfg.steps):
        at = cur if g_mom is None else cur + cfg.step * momentum_decay * g_mom
        xt = Tensor(at, requires_grad=True)
        (gx,) = grad(loss_fn(xt), [xt])
        if g_mom is None:
            direction = np.sign(gx)
        else:
            norm = np.mean(np.abs(gx), axis=reduce_axes, keepdims=True)
            norm[norm == 0] = 1.0
            g_mom = momentum_decay * g_mom + gx / norm
            direction = np.sign(g_mom)
        cur = np.clip(cur + cfg.step * direction, x0 - cfg.eps, x0 + cfg.eps)
        np.clip(cur, cfg.lo, cfg.hi, out=cur)
    return cur


def fgsm(net, x, y, cfg):
    """Single signed-gradient step of size eps on the cross-entropy."""
    x0 = np.asarray(x, dtype=net.dtype)
    labels = np.asarray(y)
    build = _loss_builder(net, labels, replace(cfg, loss_kind="ce"))
    xt = Tensor(x0.copy(), requires_grad=True)
    (gx,) = grad(build(xt), [xt])
    return np.clip(x0 + cfg.eps * np.sign(gx), cfg.lo, cfg.hi)


def pgd(net, x, y, cfg, rng=None):
    """Projected gradient ascent on the configured objective."""
    labels = np.asarray(y)
    return ascend(net, x, cfg, _loss_builder(net, labels, cfg), rng=rng)


def nifgsm(net, x, y, cfg, decay=1.0, rng=None):
    """Nesterov momentum variant; no random start by convention."""
    if decay < 0:
        raise ValueError(f"nifgsm: decay must be >= 0, got {decay}")
    labels = np.asarray(y)
    return ascend(net, x, replace(cfg, random_start=False),
                  _loss_builder(net, labels, cfg), rng=rng, momentum_decay=decay)


def cw_margin(net, x, y, cfg, rng=None):
    """PGD on the margin surrogate (the CW objective's L-infinity stand-in)."""
    labels = np.asarray(y)
    return ascend(net, x, cfg, _loss_builder(net, labels, replace(cfg, loss_kind="margin")),
                  rng=rng)


def adaptive_pgd(net, x, y, cfg, rng=None):
    """PGD ascending the defender's full regularized loss.

    The dependence terms are computed on the current adversarial batch,
    so the attacker differentiates through the same objective the
    defender trained with.  Needs a batch of at least 2.
    """
    if cfg.loss_kind != "ib_rar":
        raise ValueError("adaptive_pgd: cfg.loss_kind must be 'ib_rar'")
    if np.asarray(x).shape[0] < 2:
        raise ValueError("adaptive_pgd: needs a batch of at least 2 examples")
    labels = np.asarray(y)
    return ascend(net, x, cfg, _loss_builder(net, labels, cfg), rng=rng)
