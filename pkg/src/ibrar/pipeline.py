"""Training and evaluation orchestration.

`train` runs the per-batch loop: traced forward (mask applied once its
schedule fires), dependence sums, loss, SGD step with weight decay and
the step schedule.  Everything random (shuffling, attack starts) runs
off streams spawned from the config seed, so identical configs replay
bit-identically on the same backend.  `select_robust_layers` reproduces
the one-layer-at-a-time screening experiment, `compute_channel_mask`
scores last-conv channels on training batches, `evaluate` measures
natural and per-attack accuracy, and `tendency_table` tallies where
adversarial examples land.
"""

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .attacks import adaptive_pgd, cw_margin, fgsm, nifgsm, pgd
from .autodiff import Tensor
from .hsic import channel_hsic, hsic, one_hot
from .losses import AdvTrainKind, IBLossConfig, adv_ib_rar_loss
from .network import Network, mask_from_scores

INFO_PLANE_STRIDE = 50


class TrainingDiverged(RuntimeError):
    """Raised when the loss stops being finite; carries the iteration."""

    def __init__(self, iteration, value):
        super().__init__(f"training diverged at iteration {iteration}: loss = {value}")
        self.iteration = iteration


@dataclass(frozen=True)
class TrainConfig:
    """Optimization schedule and mask timing.

    mask_after_epoch: "auto" resolves to max(1, epochs//6) once at the
    start; None disables masking; an integer E computes the mask after
    epoch E.  The mask is frozen after computation unless
    mask_recompute_each_epoch is set.  warm_start_ib_first_epoch keeps
    the dependence terms only during the first epoch.
    """

    epochs: int = 60
    batch_size: int = 100
    lr: float = 0.01
    weight_decay: float = 1e-2
    lr_step: int = 20
    lr_gamma: float = 0.2
    seed: int = 0
    mask_after_epoch: object = "auto"
    mask_recompute_each_epoch: bool = False
    mask_batches: int = 10
    mask_fraction: float = 0.05
    warm_start_ib_first_epoch: bool = False

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"TrainConfig: epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 2:
            raise ValueError(f"TrainConfig: batch size must be >= 2, got {self.batch_size}")
        if not self.lr > 0:
            raise ValueError(f"TrainConfig: lr must be positive, got {self.lr}")
        if self.mask_after_epoch not in ("auto", None) and int(self.mask_after_epoch) < 1:
            raise ValueError(f"TrainConfig: mask_after_epoch must be 'auto', None, or >= 1, "
                             f"got {self.mask_after_epoch}")

    def resolved_mask_epoch(self):
        if self.mask_after_epoch == "auto":
            return max(1, self.epochs // 6)
        return None if self.mask_after_epoch is None else int(self.mask_after_epoch)


@dataclass
class RunReport:
    """What a run produced: accuracy history, final metrics, provenance."""

    seed: int
    config: dict
    epoch_natural_acc: list = field(default_factory=list)
    natural_acc: float = 0.0
    adv_acc: dict = field(default_factory=dict)
    wall_clock_s: float = 0.0


@dataclass
class InfoPlaneLog:
    """(iteration, layer, hsic(X,T_l), hsic(Y,T_l)) every 50 iterations."""

    records: list = field(default_factory=list)

    def add(self, iteration, layer, hx, hy):
        self.records.append((int(iteration), int(layer), float(hx), float(hy)))

    def sum_hy_series(self):
        """Sum of hsic(Y,T_l) over layers, per logged iteration."""
        byiter = {}
        for it, _, _, hy in self.records:
            byiter[it] = byiter.get(it, 0.0) + hy
        its = sorted(byiter)
        return its, [byiter[i] for i in its]


@dataclass
class EvalAttack:
    """A named attack for evaluation: kind selects the algorithm."""

    name: str
    kind: str  # fgsm | pgd | nifgsm | cw | adaptive
    cfg: object
    decay: float = 1.0

    def run(self, net, x, y, rng):
        if self.kind == "fgsm":
            return fgsm(net, x, y, self.cfg)
        if self.kind == "pgd":
            return pgd(net, x, y, self.cfg, rng=rng)
        if self.kind == "nifgsm":
            return nifgsm(net, x, y, self.cfg, decay=self.decay, rng=rng)
        if self.kind == "cw":
            return cw_margin(net, x, y, self.cfg, rng=rng)
        if self.kind == "adaptive":
            return adaptive_pgd(net, x, y, self.cfg, rng=rng)
        raise ValueError(f"EvalAttack: unknown kind {self.kind!r}")


def _accuracy(net, images, labels, batch_size=200):
    hits = 0
    for i in range(0, len(labels), batch_size):
        hits += int((net.predict(images[i:i + batch_size]) == labels[i:i + batch_size]).sum())
    return 100.0 * hits / len(labels)


def _batches(n, batch_size, order):
    """Full batches plus any tail of at least 2 (dependence terms need pairs)."""
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        if len(idx) >= 2:
            yield idx


def _log_info_plane(log, iteration, x_batch, y1h, trace, cfg):
    for l, t in enumerate(trace.layers, start=1):
        hx = hsic(Tensor(x_batch), Tensor(t.data), cfg.kernel_x, cfg.kernel_t).item()
        hy = hsic(Tensor(t.data), Tensor(y1h), cfg.kernel_t, cfg.kernel_y).item()
        log.add(iteration, l, hx, hy)


def train(net, dataset, train_cfg, ib_cfg=None, adv=None, test_set=None):
    """Run the training loop; returns (net, RunReport, InfoPlaneLog).

    With alpha=beta=0 and no adversarial component this is bitwise a
    plain cross-entropy trainer.  Divergence (non-finite loss) raises
    TrainingDiverged with the global iteration index.
    """
    ib_cfg = ib_cfg or IBLossConfig(alpha=0.0, beta=0.0)
    adv = adv or AdvTrainKind(kind="none")
    t0 = time.perf_counter()
    images = np.asarray(dataset.images, dtype=net.dtype)
    labels = np.asarray(dataset.labels)
    n = len(labels)
    if n == 0:
        raise ValueError("train: empty dataset")

    ss = np.random.SeedSequence(train_cfg.seed)
    shuffle_rng, attack_rng = [np.random.default_rng(s) for s in ss.spawn(2)]
    report = RunReport(seed=train_cfg.seed, config={})
    log = InfoPlaneLog()
    mask_epoch = train_cfg.resolved_mask_epoch()
    iteration = 0

    for epoch in range(1, train_cfg.epochs + 1):
        lr = train_cfg.lr * train_cfg.lr_gamma ** ((epoch - 1) // train_cfg.lr_step)
        cfg_now = ib_cfg
        if train_cfg.warm_start_ib_first_epoch and epoch > 1:
            cfg_now = replace(ib_cfg, alpha=0.0, beta=0.0)
        order = shuffle_rng.permutation(n)
        for idx in _batches(n, train_cfg.batch_size, order):
            x_batch, y_batch = images[idx], labels[idx]
            out = adv_ib_rar_loss(net, x_batch, y_batch, cfg_now, adv, rng=attack_rng)
            value = out.total.item()
            if not np.isfinite(value):
                raise TrainingDiverged(iteration, value)
            if iteration % INFO_PLANE_STRIDE == 0:
                y1h = one_hot(y_batch, net.config.classes, dtype=net.dtype)
                _log_info_plane(log, iteration, x_batch, y1h, out.trace, cfg_now)
            out.total.backward()
            for w in net.weights():
                w.data -= lr * (w.grad + train_cfg.weight_decay * w.data)
            for b in net.biases():
                b.data -= lr * b.grad
            net.zero_grad()
            iteration += 1
        if mask_epoch is not None and (epoch == mask_epoch or
                                       (train_cfg.mask_recompute_each_epoch and epoch > mask_epoch)):
            mask = compute_channel_mask(net, dataset, batches=train_cfg.mask_batches,
                                        batch_size=train_cfg.batch_size,
                                        kernel_cfg=ib_cfg.kernel_t,
                                        label_cfg=ib_cfg.kernel_y,
                                        fraction=train_cfg.mask_fraction,
                                        meta={"epoch": epoch})
            net.attach_mask(mask)
        if test_set is not None:
            report.epoch_natural_acc.append(
                round(_accuracy(net, np.asarray(test_set.images, dtype=net.dtype),
                                np.asarray(test_set.labels)), 4))
    if test_set is not None and report.epoch_natural_acc:
        report.natural_acc = report.epoch_natural_acc[-1]
    report.wall_clock_s = time.perf_counter() - t0
    return net, report, log


def compute_channel_mask(net, dataset, batches=10, batch_size=100, kernel_cfg=None,
                         label_cfg=None, fraction=0.05, meta=None):
    """Score last-conv channels by label dependence, mask the weakest 5%.

    Scores are channel_hsic values averaged over the first `batches`
    training batches (unshuffled, so the mask is a pure function of net
    and dataset).  The mask is returned, not attached.
    """
    if batches < 1:
        raise ValueError(f"compute_channel_mask: batches must be >= 1, got {batches}")
    images = np.asarray(dataset.images, dtype=net.dtype)
    labels = np.asarray(dataset.labels)
    total = None
    used = 0
    for b in range(batches):
        lo = b * batch_size
        if lo + 2 > len(labels):
            break
        x = images[lo:lo + batch_size]
        y1h = one_hot(labels[lo:lo + batch_size], net.config.classes, dtype=net.dtype)
        _, trace = net.forward_with_trace(Tensor(x), use_mask=False)
        scores = channel_hsic(trace.channel_stack(), y1h, kernel_cfg, label_cfg)
        total = scores if total is None else total + scores
        used += 1
    if total is None:
        raise ValueError("compute_channel_mask: dataset smaller than one batch")
    scores = total / used
    return mask_from_scores(scores, fraction=fraction,
                            meta=dict(meta or {}, batches=used, source="train"))


def select_robust_layers(net_config, dataset, test_set, train_cfg, ib_template,
                         attack, margin=2.0):
    """Screen hidden layers by single-layer regularization.

    Trains one network per hidden layer with the dependence terms on
    that layer alone (seed = base seed + layer index), plus a plain-CE
    baseline (layer 0 in the table), all without adversarial training.
    A layer is robust when its attacked accuracy beats the baseline's by
    at least `margin` points.  Returns (robust layer list, table), table
    rows being (layer, adv_acc, test_acc).
    """
    if margin < 0:
        raise ValueError(f"select_robust_layers: margin must be >= 0, got {margin}")
    n_hidden = net_config.hidden_layers
    table = []
    eval_seed = train_cfg.seed + 10_000

    def run_one(layer_index):
        cfg = (replace(ib_template, alpha=0.0, beta=0.0) if layer_index == 0
               else replace(ib_template, layers=(layer_index,)))
        seeded = replace(train_cfg, seed=train_cfg.seed + layer_index)
        net = Network(net_config, seed=seeded.seed)
        train(net, dataset, seeded, cfg, AdvTrainKind(kind="none"))
        rep = evaluate(net, test_set, [attack], seed=eval_seed)
        return rep.natural_acc, rep.adv_acc[attack.name]

    base_nat, base_adv = run_one(0)
    table.append((0, base_adv, base_nat))
    robust = []
    for layer in range(1, n_hidden + 1):
        nat, adv_acc = run_one(layer)
        table.append((layer, adv_acc, nat))
        if adv_acc >= base_adv + margin:
            robust.append(layer)
    return robust, table


def evaluate(net, test_set, eval_attacks=(), seed=0, batch_size=100):
    """Natural accuracy plus per-attack adversarial accuracy.

    Adversarial examples are generated per batch against the frozen
    network; each attack gets its own RNG stream spawned from `seed`.
    """
    images = np.asarray(test_set.images, dtype=net.dtype)
    labels = np.asarray(test_set.labels)
    report = RunReport(seed=seed, config={})
    report.natural_acc = round(_accuracy(net, images, labels), 4)
    streams = np.random.SeedSequence(seed).spawn(max(1, len(eval_attacks)))
    for atk, stream in zip(eval_attacks, streams):
        rng = np.random.default_rng(stream)
        hits = 0
        for i in range(0, len(labels), batch_size):
            x, y = images[i:i + batch_size], labels[i:i + batch_size]
            x_adv = atk.run(net, x, y, rng)
            hits += int((net.predict(x_adv) == y).sum())
        report.adv_acc[atk.name] = round(100.0 * hits / len(labels), 4)
    return report


def tendency_table(net, test_set, attack, top_k=4, seed=0, batch_size=100):
    """Per true class: the top-k classes its adversarial examples get
    predicted as, correct predictions excluded.

    Returns {true class index: [(predicted class, count), ...]} sorted
    by count descending, ties by class index.
    """
    images = np.asarray(test_set.images, dtype=net.dtype)
    labels = np.asarray(test_set.labels)
    classes = net.config.classes
    counts = np.zeros((classes, classes), dtype=np.int64)
    rng = np.random.default_rng(seed)
    for i in range(0, len(labels), batch_size):
        x, y = images[i:i + batch_size], labels[i:i + batch_size]
        pred = net.predict(attack.run(net, x, y, rng))
        for t, p in zip(y, pred):
            if t != p:
                counts[t, p] += 1
    out = {}
    for t in range(classes):
        row = [(p, int(counts[t, p])) for p in range(classes) if counts[t, p] > 0]
        row.sort(key=lambda e: (-e[1], e[0]))
        out[t] = row[:top_k]
    return out
