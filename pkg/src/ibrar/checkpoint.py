"""Network persistence.

Layout: magic "IBRAR1", format version as a little-endian u16, a u32
byte length, a canonical JSON header (network architecture, seed,
epoch, optional channel mask, and a hash of the architecture block),
then every parameter array as little-endian 32-bit floats in
declaration order.  The header JSON is serialized with sorted keys and
no whitespace, so saving the same state twice produces identical bytes,
and save -> load -> save is a fixed point.  Loading verifies the
architecture hash unless strict=False.
"""

import hashlib
import json
import struct

import numpy as np

from .network import ChannelMask, ConvBlock, Dense, Network, NetworkConfig

MAGIC = b"IBRAR1"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """A checkpoint file violated the format contract."""


def _canonical(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _config_dict(config):
    blocks = []
    for b in config.blocks:
        if isinstance(b, ConvBlock):
            blocks.append({"kind": "conv", "out_channels": b.out_channels,
                           "kernel": b.kernel, "pool": b.pool})
        else:
            blocks.append({"kind": "dense", "width": b.width})
    return {"input_shape": list(config.input_shape), "blocks": blocks,
            "classes": config.classes}


def _config_from_dict(d):
    blocks = []
    for b in d["blocks"]:
        if b["kind"] == "conv":
            blocks.append(ConvBlock(b["out_channels"], kernel=b["kernel"], pool=b["pool"]))
        else:
            blocks.append(Dense(b["width"]))
    return NetworkConfig(input_shape=tuple(d["input_shape"]), blocks=tuple(blocks),
                         classes=d["classes"])


def config_hash(config):
    """Hex digest identifying a network architecture."""
    return hashlib.sha256(_canonical(_config_dict(config)).encode()).hexdigest()


def save_checkpoint(net, path, seed=None, epoch=None):
    """Write the network to `path`.

    seed/epoch default to what a previous load recorded on the network
    (checkpoint_meta), else 0, so save -> load -> save round trips
    byte-identically without re-supplying metadata.
    """
    meta = getattr(net, "checkpoint_meta", {})
    seed = int(meta.get("seed", 0) if seed is None else seed)
    epoch = int(meta.get("epoch", 0) if epoch is None else epoch)
    cfg = _config_dict(net.config)
    mask = None
    if net.mask is not None:
        mask = {"phi": [int(v) for v in net.mask.phi],
                "threshold": float(net.mask.threshold),
                "meta": net.mask.meta}
    header = {"config": cfg, "config_hash": config_hash(net.config),
              "seed": seed, "epoch": epoch, "mask": mask, "params_dtype": "float32"}
    blob = _canonical(header).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<H", FORMAT_VERSION))
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for p in net.parameters():
            f.write(np.ascontiguousarray(p.data, dtype="<f4").tobytes())


def load_checkpoint(path, strict=True):
    """Read a checkpoint back into a Network.

    strict verifies the stored architecture hash against the embedded
    architecture; a mismatch means the header was edited after saving.
    Forward outputs of the restored network match the saved one within
    the 32-bit quantization bound.  seed/epoch land in
    net.checkpoint_meta.
    """
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < len(MAGIC):
        raise CheckpointError(f"{path}: file too short for magic ({len(raw)} bytes)")
    if raw[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:len(MAGIC)]!r} (expected {MAGIC!r})")
    off = len(MAGIC)
    if len(raw) < off + 6:
        raise CheckpointError(f"{path}: header truncated before version/length fields")
    version = struct.unpack_from("<H", raw, off)[0]
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version} "
                              f"(supported: {FORMAT_VERSION})")
    hlen = struct.unpack_from("<I", raw, off + 2)[0]
    off += 6
    if len(raw) < off + hlen:
        raise CheckpointError(f"{path}: header declares {hlen} bytes, file holds "
                              f"{len(raw) - off}")
    try:
        header = json.loads(raw[off:off + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: header is not valid JSON: {e}") from None
    off += hlen
    try:
        config = _config_from_dict(header["config"])
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"{path}: bad architecture block: {e}") from None
    if strict and header.get("config_hash") != config_hash(config):
        raise CheckpointError(f"{path}: architecture hash mismatch: header records "
                              f"{header.get('config_hash')!r} but the architecture "
                              f"block hashes to {config_hash(config)!r}")
    net = Network(config, seed=0)
    params = net.parameters()
    need = sum(p.data.size for p in params) * 4
    if len(raw) - off < need:
        raise CheckpointError(f"{path}: parameter payload truncated: need {need} bytes, "
                              f"found {len(raw) - off}")
    if len(raw) - off > need:
        raise CheckpointError(f"{path}: {len(raw) - off - need} trailing bytes after "
                              f"parameter payload")
    for p in params:
        n = p.data.size
        arr = np.frombuffer(raw, dtype="<f4", count=n, offset=off)
        p.data = arr.reshape(p.data.shape).astype(net.dtype)
        off += n * 4
    if header.get("mask") is not None:
        m = header["mask"]
        net.attach_mask(ChannelMask(phi=np.asarray(m["phi"], dtype=np.float64),
                                    threshold=float(m["threshold"]),
                                    meta=dict(m.get("meta") or {})))
    net.checkpoint_meta = {"seed": int(header.get("seed", 0)),
                           "epoch": int(header.get("epoch", 0))}
    return net
