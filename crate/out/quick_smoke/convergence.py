"""Marginal distance to the limit law as the scale parameter shrinks."""
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

rows = load("ks_table.csv")
fig, ax = plt.subplots(figsize=(6, 4))
for obs in sorted({r["observable"] for r in rows}):
    sub = [r for r in rows if r["observable"] == obs]
    eps = col(sub, "epsilon")
    ax.loglog(eps, col(sub, "d_stat"), "o-", label=f"distance ({obs})")
    ax.loglog(eps, col(sub, "floor"), ":", color="gray")
ax.set_xlabel("epsilon")
ax.set_ylabel("KS distance")
ax.invert_xaxis()
ax.legend()
ax.set_title("marginal convergence (dotted: sampling floor)")
fig.tight_layout()
fig.savefig(os.path.join(HERE, "convergence.png"), dpi=150)
