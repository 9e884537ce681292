"""Limit slow path flat off the interface: the local-time staircase."""
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

lim = load("limit_path.csv")
t = col(lim, "time")
fig, ax = plt.subplots(figsize=(7, 4))
ax.plot(t, col(lim, "zeta1"), lw=0.9, label="slow component 1")
ax.plot(t, col(lim, "l"), lw=0.9, label="local time at 0")
ax2 = ax.twinx()
ax2.plot(t, col(lim, "x"), lw=0.4, color="gray", alpha=0.6)
ax2.set_ylabel("fast component", color="gray")
ax.set_xlabel("time")
ax.set_ylabel("slow / local time")
ax.legend(loc="upper left")
ax.set_title("slow motion accrues only on the interface")
fig.tight_layout()
fig.savefig(os.path.join(HERE, "local_time_staircase.png"), dpi=150)
