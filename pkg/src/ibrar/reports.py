"""Report files: JSON, CSV, tendency text, optional plots.

Emitted bytes are a pure function of the report contents — no
timestamps, no environment details — so identical runs overwrite
identical files.  Wall-clock time is kept on the in-memory RunReport
only and never serialized.  The CSV schema: run files have columns
seed, natural_acc, then one column per attack in evaluation order;
epoch files have epoch, natural_acc; info-plane files have iteration,
layer, hsic_x, hsic_y.
"""

import csv
import json
import os


def report_payload(report, log=None):
    """The JSON-serializable view of a run (wall clock excluded)."""
    payload = {
        "seed": report.seed,
        "config": report.config,
        "natural_acc": report.natural_acc,
        "adv_acc": report.adv_acc,
        "epoch_natural_acc": report.epoch_natural_acc,
    }
    if log is not None:
        payload["info_plane"] = [list(r) for r in log.records]
    return payload


def write_json(payload, path):
    with open(path, "w", encoding="utf-8", newline="") as f:
        json.dump(payload, f, sort_keys=True, indent=2)
        f.write("\n")


def write_run_csv(payload, path):
    names = list(payload["adv_acc"])
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["seed", "natural_acc"] + names)
        w.writerow([payload["seed"], payload["natural_acc"]]
                   + [payload["adv_acc"][n] for n in names])


def write_epochs_csv(payload, path):
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["epoch", "natural_acc"])
        for i, acc in enumerate(payload["epoch_natural_acc"], start=1):
            w.writerow([i, acc])


def write_infoplane_csv(payload, path):
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["iteration", "layer", "hsic_x", "hsic_y"])
        for it, layer, hx, hy in payload.get("info_plane", []):
            w.writerow([it, layer, repr(float(hx)), repr(float(hy))])


def render_tendency(table):
    """Rows of 'true : predicted-count ...' for each true class."""
    lines = []
    for true_class in sorted(table):
        cells = " ".join(f"{p}-{n}" for p, n in table[true_class])
        lines.append(f"{true_class} : {cells}".rstrip())
    return "\n".join(lines) + "\n"


def write_tendency(table, path):
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(render_tendency(table))


def write_sweep_csv(rows, path):
    """One row per (alpha, beta) sweep run; attack columns from the first row."""
    names = list(rows[0]["adv_acc"]) if rows else []
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["alpha", "beta", "seed", "natural_acc"] + names)
        for r in rows:
            w.writerow([r["alpha"], r["beta"], r["seed"], r["natural_acc"]]
                       + [r["adv_acc"][n] for n in names])


def _require_matplotlib():
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
        return plt
    except ImportError:
        raise RuntimeError("plot output needs matplotlib; install the [plots] extra") from None


def plot_infoplane(payload, path):
    """Per-layer trajectories in the (hsic_x, hsic_y) plane, plus both
    series against iteration."""
    plt = _require_matplotlib()
    records = payload.get("info_plane", [])
    layers = sorted({r[1] for r in records})
    fig, (ax0, ax1) = plt.subplots(1, 2, figsize=(9, 4))
    for layer in layers:
        pts = [(r[2], r[3]) for r in records if r[1] == layer]
        its = [r[0] for r in records if r[1] == layer]
        ax0.plot([p[0] for p in pts], [p[1] for p in pts], marker=".", label=f"layer {layer}")
        ax1.plot(its, [p[1] for p in pts], marker=".", label=f"layer {layer}")
    ax0.set_xlabel("dependence on X")
    ax0.set_ylabel("dependence on Y")
    ax1.set_xlabel("iteration")
    ax1.set_ylabel("dependence on Y")
    ax0.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def plot_accuracy(payload, path):
    plt = _require_matplotlib()
    fig, ax = plt.subplots(figsize=(5, 4))
    accs = payload["epoch_natural_acc"]
    ax.plot(range(1, len(accs) + 1), accs, marker=".")
    ax.set_xlabel("epoch")
    ax.set_ylabel("natural test accuracy (%)")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def emit_report(report, log, out_dir, name, plots=False):
    """Write the full file set for one run; returns the paths written."""
    os.makedirs(out_dir, exist_ok=True)
    payload = report_payload(report, log)
    paths = []

    def out(suffix):
        p = os.path.join(out_dir, name + suffix)
        paths.append(p)
        return p

    write_json(payload, out(".json"))
    write_run_csv(payload, out(".csv"))
    write_epochs_csv(payload, out("_epochs.csv"))
    if log is not None:
        write_infoplane_csv(payload, out("_infoplane.csv"))
    if plots:
        plot_accuracy(payload, out("_accuracy.png"))
        if log is not None:
            plot_infoplane(payload, out("_infoplane.png"))
    return paths
