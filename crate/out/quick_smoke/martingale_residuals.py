"""Martingale-problem residuals per test function, in z units."""
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

rows = load("martingale.csv")
names = [r["function"] for r in rows]
z = col(rows, "z")
fig, ax = plt.subplots(figsize=(7, 4))
ax.bar(range(len(z)), z, color=["tab:red" if n == "control" else "tab:blue" for n in names])
for lvl in (-3, 3):
    ax.axhline(lvl, color="k", lw=0.6, ls="--")
ax.set_xticks(range(len(names)))
ax.set_xticklabels(names, rotation=45, ha="right")
ax.set_ylabel("z score of mean residual")
ax.set_title("generator residuals (control should break the band)")
fig.tight_layout()
fig.savefig(os.path.join(HERE, "martingale_residuals.png"), dpi=150)
