#!/usr/bin/env python3
"""Plot decision-boundary grids written by `airl export-boundary`.

Each grid CSV (`x1,x2,pred`) is drawn as a filled contour in its own panel,
titled from the JSON sidecar next to it. With --data, the samples of the
grid's domain are overlaid from a sequence CSV written by `airl generate`.
"""

import argparse
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd


def load_grid(path):
    df = pd.read_csv(path)
    xs = np.sort(df["x1"].unique())
    ys = np.sort(df["x2"].unique())
    pred = df.pivot(index="x2", columns="x1", values="pred").loc[ys, xs].to_numpy()
    side = json.loads(Path(path).with_suffix(".json").read_text())
    return xs, ys, pred, side


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("grids", nargs="+", type=Path, help="grid CSV files")
    ap.add_argument("--data", type=Path, help="sequence CSV to overlay samples from")
    ap.add_argument("--radius", type=float, default=1.0, help="true boundary radius to draw")
    ap.add_argument("--out", type=Path, default=Path("boundary.png"))
    args = ap.parse_args()

    data = pd.read_csv(args.data) if args.data else None
    fig, axes = plt.subplots(1, len(args.grids), figsize=(4 * len(args.grids), 4), squeeze=False)
    for ax, path in zip(axes[0], args.grids):
        xs, ys, pred, side = load_grid(path)
        ax.contourf(xs, ys, pred, levels=[-0.5, 0.5, 1.5], colors=["#f2d0c4", "#c4d8f2"])
        ax.contour(xs, ys, pred, levels=[0.5], colors="k", linewidths=1)
        ax.add_patch(plt.Circle((0, 0), np.sqrt(args.radius), fill=False, ls="--", color="gray"))
        if data is not None:
            d = data[data["domain"] == side["domain"]]
            ax.scatter(d["x1"], d["x2"], c=d["y"], cmap="coolwarm", s=4, alpha=0.6)
        ax.set_title(f"{side['model_id']}\ndomain {side['domain']}", fontsize=9)
        ax.set_aspect("equal")
        ax.set_xlim(xs[0], xs[-1])
        ax.set_ylim(ys[0], ys[-1])
    fig.tight_layout()
    fig.savefig(args.out, dpi=120)
    print(args.out)


if __name__ == "__main__":
    main()
