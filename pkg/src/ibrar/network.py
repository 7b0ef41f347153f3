"""Small convolutional classifiers with activation tracing and channel masks.

Architectures are conv blocks (conv -> relu -> optional 2x2 pool)
followed by fully-connected hidden layers and a linear output head.
`forward_with_trace` returns the logits together with every hidden
activation, which is what the dependence-regularized losses consume;
hidden layers are numbered 1..L-1 in reporting, matching `trace.layers`
index + 1.

A `ChannelMask` zeroes channels of the last conv block's output inside
the graph, so downstream gradients through masked channels vanish and a
mask-free forward is bit-identical to `use_mask=False`.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, conv2d, flatten, matmul, maxpool2x2, multiply, relu


@dataclass(frozen=True)
class ConvBlock:
    out_channels: int
    kernel: int = 3
    pool: bool = True


@dataclass(frozen=True)
class Dense:
    width: int


@dataclass(frozen=True)
class NetworkConfig:
    """Input shape (C, H, W), hidden blocks in order, and the class count.

    At least one conv block is required and all conv blocks must precede
    the first dense layer; kernels are odd so same-padding keeps spatial
    dims until pooling.
    """

    input_shape: tuple
    blocks: tuple
    classes: int

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        object.__setattr__(self, "blocks", tuple(self.blocks))
        if len(self.input_shape) != 3:
            raise ValueError(f"NetworkConfig: input_shape must be (C, H, W), got {self.input_shape}")
        if self.classes < 2:
            raise ValueError(f"NetworkConfig: need at least 2 classes, got {self.classes}")
        convs = [b for b in self.blocks if isinstance(b, ConvBlock)]
        if not convs:
            raise ValueError("NetworkConfig: at least one conv block is required")
        seen_dense = False
        for b in self.blocks:
            if isinstance(b, Dense):
                seen_dense = True
                if b.width < 1:
                    raise ValueError(f"NetworkConfig: dense width must be positive, got {b.width}")
            elif isinstance(b, ConvBlock):
                if seen_dense:
                    raise ValueError("NetworkConfig: conv blocks must precede dense layers")
                if b.kernel % 2 == 0 or b.kernel < 1:
                    raise ValueError(f"NetworkConfig: conv kernels must be odd, got {b.kernel}")
                if b.out_channels < 1:
                    raise ValueError(f"NetworkConfig: out_channels must be positive, got {b.out_channels}")
            else:
                raise ValueError(f"NetworkConfig: unknown block {b!r}")
        c, h, w = self.input_shape
        for b in convs:
            if b.pool:
                h, w = h // 2, w // 2
            if h < 1 or w < 1:
                raise ValueError("NetworkConfig: spatial dims collapse to zero; "
                                 "too many pooled blocks for this input")

    @property
    def last_conv_channels(self):
        return [b for b in self.blocks if isinstance(b, ConvBlock)][-1].out_channels

    @property
    def hidden_layers(self):
        return len(self.blocks)


def mini_conv_net(input_shape=(1, 16, 16), classes=10):
    """Reference architecture: 3 pooled conv blocks, two dense layers."""
    return NetworkConfig(input_shape,
                         (ConvBlock(16), ConvBlock(32), ConvBlock(64),
                          Dense(128), Dense(64)), classes)


def tiny_conv_net(input_shape=(1, 8, 8), classes=10):
    """Cut-down twin for gradient checks: 2 conv blocks, one dense layer."""
    return NetworkConfig(input_shape,
                         (ConvBlock(8), ConvBlock(16), Dense(32)), classes)


@dataclass
class ChannelMask:
    """Keep/remove flags over the last conv block's channels.

    phi is a {0,1} float vector; threshold is the score that defined the
    cut; meta records where the scores came from.
    """

    phi: np.ndarray
    threshold: float
    meta: dict = field(default_factory=dict)

    @property
    def removed(self):
        return int((self.phi == 0).sum())

    @property
    def removed_indices(self):
        return [int(i) for i in np.flatnonzero(self.phi == 0)]


def mask_from_scores(scores, fraction=0.05, meta=None):
    """Remove the `fraction` of channels with the lowest dependence scores.

    k = floor(fraction*C + 0.5), at least 1.  The threshold is the k-th
    smallest score; channels strictly below it go first, then ties at
    the threshold in ascending channel index until exactly k are gone.
    """

    scores = np.asarray(scores, dtype=np.float64)
    c = scores.shape[0]
    if c < 1:
        raise ValueError("mask_from_scores: no channels to score")
    k = max(1, int(math.floor(fraction * c + 0.5)))
    if k >= c:
        raise ValueError(f"mask_from_scores: fraction {fraction} would remove all {c} channels")
    order = np.argsort(scores, kind="stable")
    thr = float(scores[order[k - 1]])
    phi = np.ones(c)
    removed = [i for i in range(c) if scores[i] < thr]
    for i in range(c):
        if len(removed) == k:
            break
        if scores[i] == thr and i not in removed:
            removed.append(i)
    phi[removed] = 0.0
    return ChannelMask(phi, thr, dict(meta or {}, k=k))


class ActivationTrace:
    """Hidden activations of one forward pass, in layer order."""

    def __init__(self, layers, last_conv_index):
        self.layers = layers
        self.last_conv_index = last_conv_index

    @property
    def last_conv(self):
        """The last conv block's (masked) output tensor."""
        return self.layers[self.last_conv_index]

    def channel_stack(self):
        """Last conv block output as a (C, m, h*w) float array."""
        t = self.last_conv.data
        n, c = t.shape[0], t.shape[1]
        return np.ascontiguousarray(t.transpose(1, 0, 2, 3)).reshape(c, n, -1)


class Network:
    """A classifier with parameters drawn deterministically from a seed.

    He fan-in initialization (std sqrt(2/fan_in)) for weights, zero
    biases.  Parameters are Tensors with requires_grad set; their
    declaration order (per layer: weight, bias) is the serialization
    order.
    """

    def __init__(self, config, seed=0, dtype=np.float64):
        self.config = config
        self.seed = int(seed)
        self.dtype = np.dtype(dtype)
        self.mask = None
        rng = np.random.default_rng(self.seed)
        c, h, w = config.input_shape
        self._layers = []
        self._last_conv_index = max(i for i, b in enumerate(config.blocks)
                                    if isinstance(b, ConvBlock))
        for b in config.blocks:
            if isinstance(b, ConvBlock):
                fan_in = c * b.kernel * b.kernel
                wt = rng.normal(0.0, math.sqrt(2.0 / fan_in),
                                size=(b.out_channels, c, b.kernel, b.kernel))
                bs = np.zeros(b.out_channels)
                self._layers.append(("conv", Tensor(wt.astype(self.dtype), requires_grad=True),
                                     Tensor(bs.astype(self.dtype), requires_grad=True),
                                     b.kernel // 2, b.pool))
                c = b.out_channels
                if b.pool:
                    h, w = h // 2, w // 2
            else:
                fan_in = c * h * w
                wt = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(fan_in, b.width))
                bs = np.zeros(b.width)
                self._layers.append(("dense", Tensor(wt.astype(self.dtype), requires_grad=True),
                                     Tensor(bs.astype(self.dtype), requires_grad=True)))
                c, h, w = b.width, 1, 1
        fan_in = c * h * w
        wt = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(fan_in, config.classes))
        self._layers.append(("dense", Tensor(wt.astype(self.dtype), requires_grad=True),
                             Tensor(np.zeros(config.classes, dtype=self.dtype), requires_grad=True)))

    # ---- parameter access -------------------------------------------------

    def parameters(self):
        out = []
        for layer in self._layers:
            out.extend([layer[1], layer[2]])
        return out

    def biases(self):
        """Bias vectors in declaration order (excluded from weight decay)."""
        return [layer[2] for layer in self._layers]

    def weights(self):
        """Weight tensors only (what weight decay applies to)."""
        return [layer[1] for layer in self._layers]

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    # ---- mask -------------------------------------------------------------

    def attach_mask(self, mask):
        if mask is not None and mask.phi.shape != (self.config.last_conv_channels,):
            raise ValueError(
                f"attach_mask: mask covers {mask.phi.shape[0]} channels, "
                f"last conv block has {self.config.last_conv_channels}")
        self.mask = mask

    # ---- forward ----------------------------------------------------------

    def forward_with_trace(self, x, use_mask=True):
        """Logits plus all hidden activations; the mask (when attached and
        enabled) zeroes last-conv channels inside the graph."""
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=self.dtype))
        if x.ndim != 4 or x.shape[1:] != self.config.input_shape:
            raise ValueError(f"forward: expected (m, {', '.join(map(str, self.config.input_shape))}), "
                             f"got {x.shape}")
        trace = []
        t = x
        flat = False
        for i, layer in enumerate(self._layers[:-1]):
            if layer[0] == "conv":
                _, wt, bs, pad, pool = layer
                t = relu(conv2d(t, wt, bs, padding=pad))
                if pool:
                    t = maxpool2x2(t)
                if i == self._last_conv_index and self.mask is not None and use_mask:
                    phi = self.mask.phi.astype(self.dtype).reshape(1, -1, 1, 1)
                    t = multiply(t, Tensor(phi))
            else:
                if not flat:
                    t = flatten(t)
                    flat = True
                t = relu(matmul(t, layer[1]) + layer[2])
            trace.append(t)
        if not flat:
            t = flatten(t)
        logits = matmul(t, self._layers[-1][1]) + self._layers[-1][2]
        return logits, ActivationTrace(trace, self._last_conv_index)

    def forward(self, x, use_mask=True):
        return self.forward_with_trace(x, use_mask)[0]

    def predict(self, x, use_mask=True):
        """Class labels by argmax; ties resolve to the smallest index."""
        logits = self.forward(x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=self.dtype)),
                              use_mask).data
        return logits.argmax(axis=1)
