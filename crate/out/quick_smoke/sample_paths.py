"""Prelimit fast/slow trajectories next to one glued limit path."""
import csv
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

HERE = os.path.dirname(os.path.abspath(__file__))


def load(name):
    with open(os.path.join(HERE, name), newline="") as f:
        return list(csv.DictReader(f))


def col(rows, name):
    return [float(r[name]) for r in rows]

pre = load("prelimit_path.csv")
lim = load("limit_path.csv")
fig, axes = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
axes[0].plot(col(pre, "time"), col(pre, "x"), lw=0.6, label="prelimit X")
axes[0].plot(col(lim, "time"), col(lim, "x"), lw=0.8, alpha=0.8, label="limit X")
axes[0].axhline(0.0, color="k", lw=0.4)
axes[0].set_ylabel("fast component")
axes[0].legend(loc="upper right")
axes[1].plot(col(pre, "time"), col(pre, "zeta1"), lw=0.8, label="prelimit zeta")
axes[1].plot(col(lim, "time"), col(lim, "zeta1"), lw=0.8, label="limit zeta")
axes[1].set_xlabel("time")
axes[1].set_ylabel("slow component 1")
axes[1].legend(loc="upper right")
fig.tight_layout()
fig.savefig(os.path.join(HERE, "sample_paths.png"), dpi=150)
