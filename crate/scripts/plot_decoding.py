"""Plot a decoding curve from `eegdecode decode` output.

usage: python scripts/plot_decoding.py OUT_DIR [more OUT_DIRs...] [-o fig.png]

Each OUT_DIR contributes one line (labelled by directory name); significant
timepoints are marked by a bar under the curve. Needs matplotlib.
"""

import argparse
import csv
from pathlib import Path

import matplotlib.pyplot as plt


def read_mean(path):
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    t = [float(r["timepoint_ms"]) for r in rows]
    auc = [float(r["mean_auc"]) for r in rows]
    sig = [r["significant"] == "true" for r in rows]
    return t, auc, sig


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("dirs", nargs="+", type=Path)
    ap.add_argument("-o", "--output", default="decoding.png")
    args = ap.parse_args()

    fig, ax = plt.subplots(figsize=(7, 3.5))
    for k, d in enumerate(args.dirs):
        t, auc, sig = read_mean(d / "decoding_mean.csv")
        (line,) = ax.plot(t, auc, label=d.name)
        y = 0.42 - 0.01 * k
        ax.scatter([x for x, s in zip(t, sig) if s], [y] * sum(sig), marker="s", s=8, color=line.get_color())
    ax.axhline(0.5, color="grey", lw=0.8, ls="--")
    ax.axvline(0.0, color="grey", lw=0.8)
    ax.set_xlabel("time (ms)")
    ax.set_ylabel("AUC")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(args.output, dpi=150)


if __name__ == "__main__":
    main()
