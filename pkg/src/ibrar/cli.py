"""Command-line front end.

Subcommands: train, attack, evaluate, select-layers, compute-mask,
sweep, report.  All read the same flat key-value config (--config),
with --set key=value overrides and --seed/--out shortcuts.  Exit codes:
0 success, 1 runtime failure, 2 configuration error.  Reruns with the
same config and seed overwrite outputs with identical bytes; sweep fans
runs out across up to IBRAR_THREADS worker threads.
"""

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, load_spec
from .data import DataError, load_dataset, write_idx_images, write_idx_labels
from .losses import alpha_for_beta
from .network import Network
from .pipeline import (TrainingDiverged, compute_channel_mask, evaluate,
                       select_robust_layers, tendency_table, train)
from .reports import (emit_report, plot_accuracy, plot_infoplane, report_payload,
                      write_epochs_csv, write_infoplane_csv, write_json,
                      write_run_csv, write_sweep_csv, write_tendency)


def _parser():
    p = argparse.ArgumentParser(prog="ibrar",
                                description="Dependence-regularized training and "
                                            "adversarial evaluation.")
    sub = p.add_subparsers(dest="command", required=True)
    for name, helptext in [
        ("train", "train a network and checkpoint it"),
        ("attack", "craft adversarial test sets against a checkpoint"),
        ("evaluate", "natural and adversarial accuracy of a checkpoint"),
        ("select-layers", "screen hidden layers by single-layer regularization"),
        ("compute-mask", "score and mask low-dependence channels of a checkpoint"),
        ("sweep", "train/evaluate across a list of beta values"),
        ("report", "re-render report files from a stored run JSON"),
    ]:
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("--config", default=None, help="key-value config file")
        sp.add_argument("--seed", type=int, default=None, help="override the seed")
        sp.add_argument("--out", default=None, help="override the output directory")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key")
        sp.add_argument("--checkpoint", default=None, help="checkpoint to operate on")
    return p


def _report_config(spec):
    """The config block stored in reports: everything except where the
    files land, so identical runs emit identical bytes regardless of
    output directory."""
    return {k: v for k, v in spec.raw.items() if k != "out.dir"}


def _require_checkpoint(args):
    if not args.checkpoint:
        raise ConfigError(f"{args.command} needs --checkpoint")
    return load_checkpoint(args.checkpoint)


def _attack_streams(seed, attacks):
    return [np.random.default_rng(s)
            for s in np.random.SeedSequence(seed).spawn(max(1, len(attacks)))]


def _cmd_train(args, spec):
    train_set, test_set = load_dataset(spec.source)
    net = Network(spec.net_config, seed=spec.seed)
    net, report, log = train(net, train_set, spec.train, spec.ib, spec.adv,
                             test_set=test_set)
    report.config = _report_config(spec)
    os.makedirs(spec.out_dir, exist_ok=True)
    save_checkpoint(net, os.path.join(spec.out_dir, "model.ckpt"),
                    seed=spec.seed, epoch=spec.train.epochs)
    emit_report(report, log, spec.out_dir, "run", plots=spec.plots)
    print(f"trained {spec.train.epochs} epochs; natural accuracy {report.natural_acc}")
    return 0


def _cmd_evaluate(args, spec):
    net = _require_checkpoint(args)
    _, test_set = load_dataset(spec.source)
    report = evaluate(net, test_set, spec.attacks, seed=spec.seed)
    report.config = _report_config(spec)
    emit_report(report, None, spec.out_dir, "eval", plots=False)
    if spec.tendency and spec.attacks:
        table = tendency_table(net, test_set, spec.attacks[0], seed=spec.seed)
        write_tendency(table, os.path.join(spec.out_dir, "eval_tendency.txt"))
    parts = " ".join(f"{k} {v}" for k, v in report.adv_acc.items())
    print(f"natural {report.natural_acc} {parts}".rstrip())
    return 0


def _cmd_attack(args, spec):
    net = _require_checkpoint(args)
    _, test_set = load_dataset(spec.source)
    images = np.asarray(test_set.images, dtype=net.dtype)
    labels = np.asarray(test_set.labels)
    os.makedirs(spec.out_dir, exist_ok=True)
    accs = {}
    for atk, rng in zip(spec.attacks, _attack_streams(spec.seed, spec.attacks)):
        chunks, hits = [], 0
        for i in range(0, len(labels), 100):
            x, y = images[i:i + 100], labels[i:i + 100]
            x_adv = atk.run(net, x, y, rng)
            hits += int((net.predict(x_adv) == y).sum())
            chunks.append(x_adv)
        adv = np.concatenate(chunks, axis=0)
        accs[atk.name] = round(100.0 * hits / len(labels), 4)
        if adv.shape[1] == 1:
            u8 = np.round(np.clip(adv[:, 0], 0.0, 1.0) * 255.0).astype(np.uint8)
            write_idx_images(os.path.join(spec.out_dir, f"adv_{atk.name}_images.idx"), u8)
            write_idx_labels(os.path.join(spec.out_dir, f"adv_{atk.name}_labels.idx"), labels)
    payload = {"seed": spec.seed, "config": _report_config(spec), "adv_acc": accs}
    write_json(payload, os.path.join(spec.out_dir, "attack.json"))
    print(" ".join(f"{k} {v}" for k, v in accs.items()))
    return 0


def _cmd_select_layers(args, spec):
    train_set, test_set = load_dataset(spec.source)
    if not spec.attacks:
        raise ConfigError("select-layers needs at least one attack in eval.attacks")
    robust, table = select_robust_layers(spec.net_config, train_set, test_set,
                                         spec.train, spec.ib, spec.attacks[0],
                                         margin=spec.select_margin)
    os.makedirs(spec.out_dir, exist_ok=True)
    write_json({"robust_layers": robust,
                "table": [list(row) for row in table],
                "config": _report_config(spec)},
               os.path.join(spec.out_dir, "select_layers.json"))
    with open(os.path.join(spec.out_dir, "select_layers.csv"), "w",
              encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["layer", "adv_acc", "test_acc"])
        for row in table:
            w.writerow(list(row))
    print("robust layers: " + (",".join(map(str, robust)) if robust else "(none)"))
    return 0


def _cmd_compute_mask(args, spec):
    net = _require_checkpoint(args)
    train_set, _ = load_dataset(spec.source)
    mask = compute_channel_mask(net, train_set, batches=spec.train.mask_batches,
                                batch_size=spec.train.batch_size,
                                kernel_cfg=spec.ib.kernel_t,
                                label_cfg=spec.ib.kernel_y,
                                fraction=spec.train.mask_fraction,
                                meta={"source": "compute-mask"})
    net.attach_mask(mask)
    os.makedirs(spec.out_dir, exist_ok=True)
    save_checkpoint(net, os.path.join(spec.out_dir, "model_masked.ckpt"))
    write_json({"removed": mask.removed,
                "indices": mask.removed_indices,
                "threshold": mask.threshold,
                "phi": [int(v) for v in mask.phi]},
               os.path.join(spec.out_dir, "mask.json"))
    print(f"masked channels: {','.join(map(str, mask.removed_indices))}")
    return 0


def _cmd_sweep(args, spec):
    if not spec.sweep_betas:
        raise ConfigError("sweep needs sweep.betas (comma-separated list)")
    train_set, test_set = load_dataset(spec.source)

    def run_one(beta):
        ib = replace(spec.ib, alpha=alpha_for_beta(beta), beta=beta)
        net = Network(spec.net_config, seed=spec.seed)
        net, report, log = train(net, train_set, spec.train, ib, spec.adv,
                                 test_set=test_set)
        eval_report = evaluate(net, test_set, spec.attacks, seed=spec.seed)
        report.natural_acc = eval_report.natural_acc
        report.adv_acc = eval_report.adv_acc
        report.config = _report_config(spec)
        name = f"run_beta{beta:g}"
        emit_report(report, log, spec.out_dir, name, plots=spec.plots)
        return {"alpha": ib.alpha, "beta": beta, "seed": spec.seed,
                "natural_acc": report.natural_acc, "adv_acc": report.adv_acc}

    os.makedirs(spec.out_dir, exist_ok=True)
    workers = max(1, int(os.environ.get("IBRAR_THREADS", "1") or "1"))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=min(workers, len(spec.sweep_betas))) as pool:
            rows = list(pool.map(run_one, spec.sweep_betas))
    else:
        rows = [run_one(b) for b in spec.sweep_betas]
    write_sweep_csv(rows, os.path.join(spec.out_dir, "sweep.csv"))
    write_json({"rows": rows, "config": _report_config(spec)},
               os.path.join(spec.out_dir, "sweep.json"))
    for r in rows:
        parts = " ".join(f"{k} {v}" for k, v in r["adv_acc"].items())
        print(f"beta {r['beta']} alpha {r['alpha']} natural {r['natural_acc']} {parts}".rstrip())
    return 0


def _cmd_report(args, spec):
    src = spec.report_source
    if not src:
        raise ConfigError("report needs report.source (path to a run JSON)")
    try:
        with open(src, "r", encoding="utf-8") as f:
            payload = json.load(f)
    except OSError as e:
        raise RuntimeError(f"cannot read {src}: {e}") from None
    except json.JSONDecodeError as e:
        raise RuntimeError(f"{src} is not valid JSON: {e}") from None
    os.makedirs(spec.out_dir, exist_ok=True)

    def out(suffix):
        return os.path.join(spec.out_dir, "report" + suffix)

    write_json(payload, out(".json"))
    write_run_csv(payload, out(".csv"))
    write_epochs_csv(payload, out("_epochs.csv"))
    if "info_plane" in payload:
        write_infoplane_csv(payload, out("_infoplane.csv"))
    if spec.plots:
        plot_accuracy(payload, out("_accuracy.png"))
        if "info_plane" in payload:
            plot_infoplane(payload, out("_infoplane.png"))
    print(f"re-rendered {src} into {spec.out_dir}")
    return 0


_COMMANDS = {
    "train": _cmd_train,
    "attack": _cmd_attack,
    "evaluate": _cmd_evaluate,
    "select-layers": _cmd_select_layers,
    "compute-mask": _cmd_compute_mask,
    "sweep": _cmd_sweep,
    "report": _cmd_report,
}


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        spec = load_spec(args.config, overrides=args.set, seed=args.seed,
                         out_dir=args.out)
        return _COMMANDS[args.command](args, spec)
    except ConfigError as e:
        print(f"ibrar: config error: {e}", file=sys.stderr)
        return 2
    except (DataError, CheckpointError, RuntimeError, OSError, ValueError) as e:
        print(f"ibrar: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
