#!/usr/bin/env python3
"""Plot accuracy against removed fraction from one or more curve.csv files."""
import argparse

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import pandas as pd


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("csv", nargs="+", help="curve.csv files written by `kvzap sweep`")
    ap.add_argument("-o", "--output", default="curve.png")
    args = ap.parse_args()

    fig, ax = plt.subplots(figsize=(6, 4))
    for path in args.csv:
        df = pd.read_csv(path).sort_values("removed_fraction")
        for policy, g in df.groupby("policy"):
            ax.plot(g["removed_fraction"], g["accuracy"], marker="o", label=f"{policy} ({path})")
    ax.set_xlabel("removed fraction")
    ax.set_ylabel("accuracy")
    ax.set_ylim(-0.02, 1.02)
    ax.grid(alpha=0.3)
    ax.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(args.output, dpi=120)


if __name__ == "__main__":
    main()
