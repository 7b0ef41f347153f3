"""Dataset generation and file-backed loading.

Three sources: a seeded synthetic generator (smooth per-class patterns
plus pixel noise), IDX image/label pairs (big-endian dimension header,
magic 0x00000803 for images and 0x00000801 for labels), and the
CIFAR-10 binary record layout (one label byte followed by 3072 channel
bytes).  Images normalize to [0,1]; labels must lie in [0, classes).
Malformed files raise DataError with a message naming what was wrong.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD = 3073  # 1 label byte + 3 * 32 * 32 pixel bytes


class DataError(ValueError):
    """A dataset file violated its format contract."""


@dataclass(frozen=True)
class Dataset:
    """Images (n, c, h, w) as floats in [0,1], integer labels, class count."""

    images: np.ndarray
    labels: np.ndarray
    classes: int

    def __len__(self):
        return len(self.labels)

    @property
    def image_shape(self):
        return tuple(self.images.shape[1:])


@dataclass(frozen=True)
class DatasetSource:
    """Where data comes from: kind is synthetic | idx | cifar.

    synthetic uses (classes, per_class, size, noise, seed); idx uses
    (images_path, labels_path, classes); cifar uses (path,).  File-backed
    sources holding a single file pair are split 80/20 train/test in file
    order.
    """

    kind: str
    classes: int = 10
    per_class: int = 1000
    size: int = 16
    noise: float = 0.15
    seed: int = 0
    images_path: str = ""
    labels_path: str = ""
    path: str = ""

    def __post_init__(self):
        if self.kind not in ("synthetic", "idx", "cifar"):
            raise ValueError(f"DatasetSource: unknown kind {self.kind!r}")
        if self.kind == "synthetic":
            if self.classes < 2:
                raise ValueError(f"DatasetSource: classes must be >= 2, got {self.classes}")
            if self.per_class < 1:
                raise ValueError(f"DatasetSource: per_class must be >= 1, got {self.per_class}")
            if self.size < 4:
                raise ValueError(f"DatasetSource: size must be >= 4, got {self.size}")
            if self.noise < 0:
                raise ValueError(f"DatasetSource: noise must be >= 0, got {self.noise}")
        if self.kind == "idx" and (not self.images_path or not self.labels_path):
            raise ValueError("DatasetSource: idx needs images_path and labels_path")
        if self.kind == "cifar" and not self.path:
            raise ValueError("DatasetSource: cifar needs path")


def _class_template(size, rng):
    """A bright irregular region on a dark ground, distinct per class.

    A few random low-frequency cosine modes are pushed through a sharp
    sigmoid at their median, giving a high-contrast shape whose
    identity survives small shifts and pixel noise."""
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    t = np.zeros((size, size))
    for _ in range(4):
        fy, fx = rng.integers(0, 3, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        t += rng.uniform(0.5, 1.0) * np.cos(2 * np.pi * (fy * yy + fx * xx) / size + phase)
    lo, hi = t.min(), t.max()
    if hi - lo < 1e-12:
        return np.full((size, size), 0.5)
    t = (t - np.median(t)) / (hi - lo)
    return 0.1 + 0.8 / (1.0 + np.exp(-12.0 * t))


def _quantize(x):
    """Snap to the 8-bit grid so IDX round trips are exact."""
    return np.round(np.clip(x, 0.0, 1.0) * 255.0).astype(np.uint8)


def synthetic_blobs(classes=10, per_class=1000, size=16, noise=0.15, seed=0):
    """Generate (train, test) of jittered, noisy per-class patterns.

    Train holds classes*per_class images, test classes*max(1, per_class//5).
    Each image is its class template rolled by a random offset of up to
    round(2*size*noise) pixels per axis, plus Gaussian pixel noise, then
    snapped to the 8-bit grid.  With noise 0 both the jitter and the
    noise vanish and every image equals its class template.  Both splits
    are shuffled.  Same seed gives byte-identical arrays.
    """
    src = DatasetSource(kind="synthetic", classes=classes, per_class=per_class,
                        size=size, noise=noise, seed=seed)
    streams = np.random.SeedSequence(src.seed).spawn(classes + 2)
    rngs = [np.random.default_rng(s) for s in streams[:classes]]
    templates = [_class_template(size, rngs[c]) for c in range(classes)]
    shift = int(round(2 * size * noise))
    per_test = max(1, per_class // 5)

    def make_split(count, shuffle_rng):
        images = np.empty((classes * count, 1, size, size), dtype=np.float32)
        labels = np.empty(classes * count, dtype=np.int64)
        for c in range(classes):
            rng = rngs[c]
            for i in range(count):
                dy, dx = rng.integers(-shift, shift + 1, size=2)
                img = np.roll(np.roll(templates[c], dy, axis=0), dx, axis=1)
                img = img + rng.normal(0.0, noise, (size, size))
                u8 = _quantize(img)
                images[c * count + i, 0] = u8.astype(np.float32) / 255.0
                labels[c * count + i] = c
        order = shuffle_rng.permutation(len(labels))
        return images[order], labels[order]

    train_images, train_labels = make_split(per_class, np.random.default_rng(streams[classes]))
    test_images, test_labels = make_split(per_test, np.random.default_rng(streams[classes + 1]))
    train = Dataset(train_images, train_labels, classes)
    test = Dataset(test_images, test_labels, classes)
    return train, test


def _read_exact(f, n, path, what):
    buf = f.read(n)
    if len(buf) < n:
        raise DataError(f"{path}: {what} truncated: expected {n} bytes, found {len(buf)}")
    return buf


def read_idx(path):
    """Read one IDX file into an unsigned-byte array of its declared shape."""
    with open(path, "rb") as f:
        head = f.read(4)
        if len(head) < 4:
            raise DataError(f"{path}: IDX header truncated: magic needs 4 bytes, found {len(head)}")
        magic = struct.unpack(">I", head)[0]
        if magic not in (IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC):
            raise DataError(f"{path}: bad IDX magic 0x{magic:08x} "
                            f"(expected 0x{IDX_IMAGES_MAGIC:08x} for images or "
                            f"0x{IDX_LABELS_MAGIC:08x} for labels)")
        ndim = magic & 0xFF
        dims_raw = _read_exact(f, 4 * ndim, path, "IDX dimension header")
        dims = struct.unpack(f">{ndim}I", dims_raw)
        count = int(np.prod(dims, dtype=np.int64))
        payload = f.read()
    if len(payload) < count:
        raise DataError(f"{path}: IDX payload truncated: shape {dims} needs {count} bytes, "
                        f"found {len(payload)}")
    if len(payload) > count:
        raise DataError(f"{path}: IDX payload has {len(payload) - count} trailing bytes "
                        f"beyond shape {dims}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(dims), magic


def write_idx_images(path, images_u8):
    """Write (n, h, w) unsigned bytes in the IDX image layout."""
    arr = np.ascontiguousarray(images_u8, dtype=np.uint8)
    if arr.ndim != 3:
        raise ValueError(f"write_idx_images: expected (n, h, w), got shape {arr.shape}")
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, *arr.shape))
        f.write(arr.tobytes())


def write_idx_labels(path, labels):
    arr = np.asarray(labels)
    if arr.ndim != 1:
        raise ValueError(f"write_idx_labels: expected (n,), got shape {arr.shape}")
    if arr.min(initial=0) < 0 or arr.max(initial=0) > 255:
        raise ValueError("write_idx_labels: labels must fit in one unsigned byte")
    with open(path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, len(arr)))
        f.write(arr.astype(np.uint8).tobytes())


def load_idx_pair(images_path, labels_path, classes=10):
    """Read an IDX image/label pair into one Dataset."""
    images_u8, magic_i = read_idx(images_path)
    if magic_i != IDX_IMAGES_MAGIC:
        raise DataError(f"{images_path}: expected IDX images (magic 0x{IDX_IMAGES_MAGIC:08x}), "
                        f"found labels magic 0x{magic_i:08x}")
    labels_u8, magic_l = read_idx(labels_path)
    if magic_l != IDX_LABELS_MAGIC:
        raise DataError(f"{labels_path}: expected IDX labels (magic 0x{IDX_LABELS_MAGIC:08x}), "
                        f"found images magic 0x{magic_l:08x}")
    if len(images_u8) != len(labels_u8):
        raise DataError(f"{images_path} / {labels_path}: image/label count mismatch: "
                        f"{len(images_u8)} images vs {len(labels_u8)} labels")
    labels = labels_u8.astype(np.int64)
    bad = labels >= classes
    if bad.any():
        i = int(np.argmax(bad))
        raise DataError(f"{labels_path}: label {labels[i]} at index {i} "
                        f"outside [0, {classes})")
    images = images_u8.astype(np.float32)[:, None, :, :] / 255.0
    return Dataset(images, labels, classes)


def load_cifar_binary(path, classes=10):
    """Read CIFAR-10 binary records (1 label byte + 3072 pixel bytes)."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) == 0:
        raise DataError(f"{path}: CIFAR binary file is empty")
    if len(raw) % CIFAR_RECORD != 0:
        raise DataError(f"{path}: CIFAR binary size {len(raw)} is not a multiple of "
                        f"the {CIFAR_RECORD}-byte record")
    records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = records[:, 0].astype(np.int64)
    bad = labels >= classes
    if bad.any():
        i = int(np.argmax(bad))
        raise DataError(f"{path}: record {i}: label {labels[i]} outside [0, {classes})")
    images = records[:, 1:].reshape(-1, 3, 32, 32).astype(np.float32) / 255.0
    return Dataset(images, labels, classes)


def _split_80_20(ds):
    if len(ds) < 2:
        raise DataError(f"dataset holds {len(ds)} record(s); need at least 2 to split")
    cut = max(1, (len(ds) * 4) // 5)
    train = Dataset(ds.images[:cut], ds.labels[:cut], ds.classes)
    test = Dataset(ds.images[cut:], ds.labels[cut:], ds.classes)
    return train, test


def load_dataset(src):
    """Resolve a DatasetSource into (train, test).

    Single-file sources are split 80/20 in file order; the synthetic
    generator produces its own held-out split.
    """
    if src.kind == "synthetic":
        return synthetic_blobs(src.classes, src.per_class, src.size, src.noise, src.seed)
    if src.kind == "idx":
        return _split_80_20(load_idx_pair(src.images_path, src.labels_path, src.classes))
    if src.kind == "cifar":
        return _split_80_20(load_cifar_binary(src.path, src.classes))
    raise ValueError(f"load_dataset: unknown kind {src.kind!r}")
