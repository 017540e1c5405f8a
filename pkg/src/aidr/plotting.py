import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .channel import theoretical_ber
from .evaluation import COLUMNS

RC = {
    "font.size": 10,
    "axes.titlesize": 11,
    "axes.labelsize": 10,
    "legend.fontsize": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
    # keep SVG/PDF output free of timestamps so reruns are byte-stable
    "svg.hashsalt": "aidr",
}


def _save(fig, path):
    meta = {"Software": None} if str(path).endswith(".png") else {"Creator": None}
    if str(path).endswith(".pdf"):
        meta["CreationDate"] = None
    fig.savefig(path, bbox_inches="tight", metadata=meta)
    plt.close(fig)


def plot_metrics(reports, labels, path):
    """Grouped bars of the four table metrics, in percent."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(6.4, 3.6))
        values = np.array([[r.a_acc, r.bleu1, r.rouge_l, r.similarity] for r in reports]) * 100
        width = 0.8 / len(reports)
        x = np.arange(len(COLUMNS))
        for i, (lab, row) in enumerate(zip(labels, values)):
            ax.bar(x + (i - (len(reports) - 1) / 2) * width, row, width, label=lab)
        ax.set_xticks(x)
        ax.set_xticklabels(COLUMNS)
        ax.set_ylabel("score (%)")
        ax.set_ylim(0, 105)
        ax.legend(loc="lower right", frameon=False)
        _save(fig, path)


def plot_ber_curve(snr_db, empirical, path, title="4-FSK over AWGN"):
    """Empirical BER points against the closed-form noncoherent curve."""
    snr_db = np.asarray(snr_db, dtype=float)
    fine = np.linspace(snr_db.min(), snr_db.max(), 200)
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(5, 3.6))
        ax.semilogy(fine, [theoretical_ber(s) for s in fine], "-", color="0.3", label="closed form")
        emp = np.asarray(empirical, dtype=float)
        mask = emp > 0
        ax.semilogy(snr_db[mask], emp[mask], "o", color="C3", label="Monte Carlo")
        ax.set_xlabel("Es/N0 (dB)")
        ax.set_ylabel("bit error rate")
        ax.set_title(title)
        ax.grid(True, which="both", alpha=0.3)
        ax.legend(frameon=False)
        _save(fig, path)
