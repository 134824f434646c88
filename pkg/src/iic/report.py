"""Evaluation reports: a tab-separated summary plus matplotlib figures."""

import os

import numpy as np
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .data import read_metrics  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def write_report_tsv(path, report):
    """One row per sub-head, then summary rows; the best sub-head is flagged."""
    with open(path, "w") as f:
        f.write("subhead\tloss\taccuracy\tbest\n")
        for i, (loss, acc) in enumerate(zip(report["subhead_loss"], report["subhead_acc"])):
            f.write(f"{i}\t{loss!r}\t{acc!r}\t{int(i == report['best_subhead'])}\n")
        f.write(f"#protocol\t{report['protocol']}\n")
        f.write(f"#heads\t{report['heads']}\n")
        f.write(f"#epoch\t{report['epoch']}\n")
        f.write(f"#acc_best\t{report['acc_best']!r}\n")
        f.write(f"#acc_avg\t{report['acc_avg']!r}\n")
        f.write(f"#acc_std\t{report['acc_std']!r}\t{report['std_note']}\n")
    return path


def plot_training_curves(metrics_csv, path):
    m = read_metrics(metrics_csv)
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.4))
    ax1.plot(m["epoch"], m["loss_main"], label="main")
    if np.any(m["loss_aux"]):
        ax1.plot(m["epoch"], m["loss_aux"], label="aux")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("IIC loss (nats)")
    ax1.legend(frameon=False)
    ax2.plot(m["epoch"], m["acc_best"], label="best sub-head")
    ax2.fill_between(m["epoch"], m["acc_avg"] - m["acc_std"], m["acc_avg"] + m["acc_std"],
                     alpha=0.25, label="avg $\\pm$ std")
    ax2.set_ylim(0, 1.02)
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("accuracy")
    ax2.legend(frameon=False, loc="lower right")
    return _save(fig, path)


def plot_subhead_accuracy(report, path):
    accs = report["subhead_acc"]
    fig, ax = plt.subplots(figsize=(4, 3))
    colors = ["C1" if i == report["best_subhead"] else "C0" for i in range(len(accs))]
    ax.bar(range(len(accs)), accs, color=colors)
    ax.set_xticks(range(len(accs)))
    ax.set_xlabel("sub-head")
    ax.set_ylabel("accuracy")
    ax.set_ylim(0, 1)
    ax.set_title(f"{report['protocol']} ({report['heads']} heads)", fontsize=9)
    return _save(fig, path)


def plot_confusion(counts, path):
    counts = np.asarray(counts)
    fig, ax = plt.subplots(figsize=(1 + 0.4 * counts.shape[1], 1 + 0.3 * counts.shape[0]))
    im = ax.imshow(counts, cmap="Blues", aspect="auto")
    ax.set_xlabel("ground-truth class")
    ax.set_ylabel("predicted cluster")
    fig.colorbar(im, ax=ax)
    return _save(fig, path)


def render_report(report, out_dir, metrics_csv=None):
    os.makedirs(out_dir, exist_ok=True)
    tag = report["protocol"]
    paths = [
        write_report_tsv(os.path.join(out_dir, f"report_{tag}.tsv"), report),
        plot_subhead_accuracy(report, os.path.join(out_dir, f"subheads_{tag}.png")),
        plot_confusion(report["confusion_best"], os.path.join(out_dir, f"confusion_{tag}.png")),
    ]
    if metrics_csv and os.path.exists(metrics_csv):
        paths.append(plot_training_curves(metrics_csv, os.path.join(out_dir, "training_curves.png")))
    return paths
