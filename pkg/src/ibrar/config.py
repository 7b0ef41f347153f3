"""Experiment configuration: flat dotted key-value files.

One `key = value` per line, `#` comments, blank lines ignored.  Keys
use section prefixes (train.lr, ib.beta, attack.pgd.steps).  Every key
is checked against the schema and every value parsed and validated
before any compute starts; unknown keys are errors.  CLI --set
overrides take the same key=value shape.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .attacks import AttackConfig, cw_attack, mnist_attack
from .data import DatasetSource
from .hsic import KernelConfig
from .losses import AdvTrainKind, IBLossConfig, alpha_for_beta, ib_preset
from .network import ConvBlock, Dense, NetworkConfig, mini_conv_net, tiny_conv_net
from .pipeline import EvalAttack, TrainConfig


class ConfigError(ValueError):
    """A config file or override was malformed or out of schema."""


ATTACK_KINDS = ("fgsm", "pgd", "nifgsm", "cw", "adaptive")

# Schema: key -> parser name.  attack.<kind>.<field> keys are matched
# separately.
_SCHEMA = {
    "seed": "int",
    "dataset.kind": "str",
    "dataset.classes": "int",
    "dataset.per_class": "int",
    "dataset.size": "int",
    "dataset.noise": "float",
    "dataset.seed": "int",
    "dataset.images": "str",
    "dataset.labels": "str",
    "dataset.path": "str",
    "network.preset": "str",
    "network.input": "str",
    "network.blocks": "str",
    "network.classes": "int",
    "train.epochs": "int",
    "train.batch_size": "int",
    "train.lr": "float",
    "train.weight_decay": "float",
    "train.lr_step": "int",
    "train.lr_gamma": "float",
    "train.mask_after_epoch": "str",
    "train.mask_recompute": "bool",
    "train.mask_batches": "int",
    "train.mask_fraction": "float",
    "train.warm_start": "bool",
    "ib.preset": "str",
    "ib.alpha": "float",
    "ib.beta": "float",
    "ib.layers": "str",
    "ib.mi_on_clean": "bool",
    "ib.kernel_x": "str",
    "ib.kernel_t": "str",
    "ib.kernel_y": "str",
    "adv.kind": "str",
    "adv.lambda": "float",
    "adv.eps": "float",
    "adv.step": "float",
    "adv.steps": "int",
    "eval.attacks": "str",
    "eval.tendency": "bool",
    "select.margin": "float",
    "sweep.betas": "str",
    "out.dir": "str",
    "report.plots": "bool",
    "report.source": "str",
}
_ATTACK_FIELDS = {"eps": "float", "step": "float", "steps": "int", "decay": "float"}


def parse_config_text(text, origin="<config>"):
    """Parse key=value lines into an ordered dict of raw strings."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{origin}:{lineno}: empty key")
        if key in out:
            raise ConfigError(f"{origin}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def _parser_for(key):
    if key in _SCHEMA:
        return _SCHEMA[key]
    parts = key.split(".")
    if len(parts) == 3 and parts[0] == "attack":
        if parts[1] not in ATTACK_KINDS:
            raise ConfigError(f"unknown attack name {parts[1]!r} in key {key!r} "
                              f"(known: {', '.join(ATTACK_KINDS)})")
        if parts[2] not in _ATTACK_FIELDS:
            raise ConfigError(f"unknown attack field {parts[2]!r} in key {key!r} "
                              f"(known: {', '.join(sorted(_ATTACK_FIELDS))})")
        return _ATTACK_FIELDS[parts[2]]
    raise ConfigError(f"unknown config key {key!r}")


def _convert(key, value):
    kind = _parser_for(key)
    try:
        if kind == "int":
            return int(value)
        if kind == "float":
            return float(value)
        if kind == "bool":
            v = value.lower()
            if v in ("true", "yes", "on", "1"):
                return True
            if v in ("false", "no", "off", "0"):
                return False
            raise ValueError(f"not a boolean: {value!r}")
        return value
    except ValueError as e:
        raise ConfigError(f"config key {key!r}: {e}") from None


def _parse_kernel(spec, key):
    if spec == "linear":
        return KernelConfig(kind="linear")
    if spec.startswith("gaussian:"):
        arg = spec.split(":", 1)[1]
        if arg == "median":
            return KernelConfig(kind="gaussian", bandwidth="median")
        try:
            bw = float(arg)
        except ValueError:
            raise ConfigError(f"{key}: bandwidth must be 'median' or a number, "
                              f"got {arg!r}") from None
        return KernelConfig(kind="gaussian", bandwidth=bw)
    raise ConfigError(f"{key}: expected 'linear', 'gaussian:median', or 'gaussian:<sigma>', "
                      f"got {spec!r}")


def _parse_blocks(spec, key):
    blocks = []
    for item in spec.split(","):
        item = item.strip()
        if item.startswith("conv:"):
            parts = item.split(":")
            kernel, pool = 3, True
            for extra in parts[2:]:
                if extra.startswith("k"):
                    kernel = int(extra[1:])
                elif extra == "nopool":
                    pool = False
                else:
                    raise ConfigError(f"{key}: unknown conv option {extra!r} in {item!r}")
            blocks.append(ConvBlock(int(parts[1]), kernel=kernel, pool=pool))
        elif item.startswith("dense:"):
            blocks.append(Dense(int(item.split(":", 1)[1])))
        else:
            raise ConfigError(f"{key}: expected conv:<c>[...] or dense:<w>, got {item!r}")
    return tuple(blocks)


@dataclass
class ExperimentSpec:
    """Everything a subcommand needs, fully validated."""

    seed: int
    source: DatasetSource
    net_config: NetworkConfig
    train: TrainConfig
    ib: IBLossConfig
    adv: AdvTrainKind
    attacks: list
    tendency: bool
    select_margin: float
    sweep_betas: list
    out_dir: str
    plots: bool
    report_source: str
    raw: dict = field(default_factory=dict)


def _build_attack(kind, overrides, seed_cfg):
    cfg = cw_attack(eps=seed_cfg.eps) if kind == "cw" else seed_cfg
    decay = 1.0
    fields = {}
    for fname, value in overrides.items():
        if fname == "decay":
            decay = value
        else:
            fields[fname] = value
    if kind == "adaptive":
        fields.setdefault("loss_kind", "ib_rar")
    if fields:
        cfg = replace(cfg, **fields)
    return kind, cfg, decay


def build_spec(kv, ib_for_adaptive=None):
    """Turn raw key->string pairs into a validated ExperimentSpec.

    Every dataclass constructor involved runs its own validation, so a
    value violating any module's invariants is rejected here, before
    any dataset is read or network built.
    """
    vals = {}
    for key, raw in kv.items():
        vals[key] = _convert(key, raw)

    def take(key, default=None):
        return vals.get(key, default)

    seed = take("seed", 0)
    try:
        kind = take("dataset.kind", "synthetic")
        source = DatasetSource(
            kind=kind,
            classes=take("dataset.classes", 10),
            per_class=take("dataset.per_class", 1000),
            size=take("dataset.size", 16),
            noise=take("dataset.noise", 0.15),
            seed=take("dataset.seed", seed),
            images_path=take("dataset.images", ""),
            labels_path=take("dataset.labels", ""),
            path=take("dataset.path", ""),
        )

        input_shape = ((1, source.size, source.size) if kind == "synthetic"
                       else (3, 32, 32) if kind == "cifar" else (1, 28, 28))
        if "network.input" in vals:
            dims = tuple(int(d) for d in vals["network.input"].split(","))
            if len(dims) != 3:
                raise ConfigError(f"network.input: expected c,h,w, got {vals['network.input']!r}")
            input_shape = dims
        classes = take("network.classes", source.classes)
        if "network.blocks" in vals:
            net_config = NetworkConfig(input_shape=input_shape,
                                       blocks=_parse_blocks(vals["network.blocks"],
                                                            "network.blocks"),
                                       classes=classes)
        else:
            preset = take("network.preset", "mini")
            if preset == "mini":
                net_config = mini_conv_net(input_shape=input_shape, classes=classes)
            elif preset == "tiny":
                net_config = tiny_conv_net(input_shape=input_shape, classes=classes)
            else:
                raise ConfigError(f"network.preset: expected mini or tiny, got {preset!r}")

        mask_raw = take("train.mask_after_epoch", "auto")
        if mask_raw in ("auto", "off"):
            mask_after = None if mask_raw == "off" else "auto"
        else:
            try:
                mask_after = int(mask_raw)
            except ValueError:
                raise ConfigError(f"train.mask_after_epoch: expected auto, off, or an "
                                  f"integer, got {mask_raw!r}") from None
        train_cfg = TrainConfig(
            epochs=take("train.epochs", 10),
            batch_size=take("train.batch_size", 100),
            lr=take("train.lr", 0.01),
            weight_decay=take("train.weight_decay", 1e-2),
            lr_step=take("train.lr_step", 20),
            lr_gamma=take("train.lr_gamma", 0.2),
            seed=seed,
            mask_after_epoch=mask_after,
            mask_recompute_each_epoch=take("train.mask_recompute", False),
            mask_batches=take("train.mask_batches", 10),
            mask_fraction=take("train.mask_fraction", 0.05),
            warm_start_ib_first_epoch=take("train.warm_start", False),
        )

        if "ib.preset" in vals:
            ib = ib_preset(vals["ib.preset"])
        else:
            ib = IBLossConfig()
        fields = {}
        if "ib.alpha" in vals:
            fields["alpha"] = vals["ib.alpha"]
        if "ib.beta" in vals:
            fields["beta"] = vals["ib.beta"]
            if "ib.alpha" not in vals and "ib.preset" not in vals:
                fields["alpha"] = alpha_for_beta(vals["ib.beta"])
        if "ib.layers" in vals:
            spec = vals["ib.layers"]
            fields["layers"] = ("all" if spec == "all"
                               else tuple(int(s) for s in spec.split(",")))
        if "ib.mi_on_clean" in vals:
            fields["mi_on_clean"] = vals["ib.mi_on_clean"]
        for kname in ("kernel_x", "kernel_t", "kernel_y"):
            ck = f"ib.{kname}"
            if ck in vals:
                fields[kname] = _parse_kernel(vals[ck], ck)
        if fields:
            ib = replace(ib, **fields)

        inner = AttackConfig(eps=take("adv.eps", 0.1), step=take("adv.step", 0.02),
                             steps=take("adv.steps", 10))
        adv_kind = take("adv.kind", "none")
        if adv_kind == "none":
            adv = AdvTrainKind(kind="none")
        else:
            adv = AdvTrainKind(kind=adv_kind, lam=take("adv.lambda", 6.0), attack=inner)

        base_attack = mnist_attack()
        for fname in ("eps", "step", "steps"):
            if f"adv.{fname}" in vals:
                base_attack = replace(base_attack, **{fname: vals[f"adv.{fname}"]})
        names = [s.strip() for s in take("eval.attacks", "pgd").split(",") if s.strip()]
        attacks = []
        for name in names:
            if name not in ATTACK_KINDS:
                raise ConfigError(f"eval.attacks: unknown attack {name!r} "
                                  f"(known: {', '.join(ATTACK_KINDS)})")
            overrides = {f: vals[f"attack.{name}.{f}"] for f in _ATTACK_FIELDS
                         if f"attack.{name}.{f}" in vals}
            kind, cfg, decay = _build_attack(name, overrides, base_attack)
            if name == "adaptive":
                cfg = replace(cfg, ib=ib_for_adaptive or ib)
            attacks.append(EvalAttack(name=name, kind=kind, cfg=cfg, decay=decay))

        betas_raw = take("sweep.betas", "")
        sweep_betas = [float(s) for s in betas_raw.split(",") if s.strip()] if betas_raw else []
        if any(b <= 0 for b in sweep_betas):
            raise ConfigError(f"sweep.betas: all values must be positive, got {betas_raw!r}")

        return ExperimentSpec(
            seed=seed,
            source=source,
            net_config=net_config,
            train=train_cfg,
            ib=ib,
            adv=adv,
            attacks=attacks,
            tendency=take("eval.tendency", False),
            select_margin=take("select.margin", 2.0),
            sweep_betas=sweep_betas,
            out_dir=take("out.dir", "runs"),
            plots=take("report.plots", False),
            report_source=take("report.source", ""),
            raw=dict(kv),
        )
    except ConfigError:
        raise
    except ValueError as e:
        raise ConfigError(str(e)) from None


def load_spec(path=None, overrides=(), seed=None, out_dir=None):
    """Read a config file, apply --set overrides and flag overrides."""
    kv = {}
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as f:
                text = f.read()
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from None
        kv = parse_config_text(text, origin=str(path))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = (part.strip() for part in item.split("=", 1))
        _parser_for(key)
        kv[key] = value
    if seed is not None:
        kv["seed"] = str(seed)
    if out_dir is not None:
        kv["out.dir"] = str(out_dir)
    return build_spec(kv)
