#!/usr/bin/env python3
"""Render learning curves, entropy curves and the transfer summary from the
CSV reports written by `tapd report`.

usage: python3 plot_reports.py [REPORT_DIR]
"""
import csv
import json
import os
import sys
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def read_rows(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def curve_dirs(root):
    if os.path.exists(os.path.join(root, "scores.csv")):
        return [("run", root)]
    return sorted(
        (name, os.path.join(root, name))
        for name in os.listdir(root)
        if os.path.exists(os.path.join(root, name, "scores.csv"))
    )


def plot_series(root, runs, file, column, ylabel, out):
    tasks = sorted({r["task"] for _, d in runs for r in read_rows(os.path.join(d, file))})
    if not tasks:
        return
    fig, axes = plt.subplots(1, len(tasks), figsize=(4 * len(tasks), 3), squeeze=False)
    for ax, task in zip(axes[0], tasks):
        for label, d in runs:
            series = defaultdict(list)
            for r in read_rows(os.path.join(d, file)):
                if r["task"] == task:
                    series[r["visit"]].append((int(r["step"]), float(r[column])))
            for visit, pts in sorted(series.items()):
                xs = [p[0] - pts[0][0] for p in pts]
                ax.plot(xs, [p[1] for p in pts], label=f"{label} v{visit}", lw=1)
        ax.set_title(task)
        ax.set_xlabel("steps into phase")
        ax.set_ylabel(ylabel)
    axes[0][-1].legend(fontsize=6)
    fig.tight_layout()
    fig.savefig(os.path.join(root, out), dpi=120)
    plt.close(fig)


def plot_summary(root):
    table_path = os.path.join(root, "transfer_table.csv")
    report_path = os.path.join(root, "variance_report.json")
    if not (os.path.exists(table_path) and os.path.exists(report_path)):
        return
    with open(report_path) as f:
        report = json.load(f)["algorithms"]
    algs = sorted(report)
    fig, axes = plt.subplots(1, 2, figsize=(9, 3))
    width = 0.35
    xs = range(len(algs))
    axes[0].bar([x - width / 2 for x in xs], [report[a]["across_visits"] for a in algs], width, label="across visits")
    axes[0].bar([x + width / 2 for x in xs], [report[a]["across_tasks"] for a in algs], width, label="across tasks")
    axes[0].set_xticks(list(xs), algs, fontsize=7)
    axes[0].set_ylabel("variance")
    axes[0].legend(fontsize=7)
    axes[1].bar(list(xs), [report[a]["mean_normalized"] for a in algs])
    axes[1].set_xticks(list(xs), algs, fontsize=7)
    axes[1].set_ylabel("mean normalized score")
    fig.tight_layout()
    fig.savefig(os.path.join(root, "variance.png"), dpi=120)
    plt.close(fig)


def main():
    root = sys.argv[1] if len(sys.argv) > 1 else os.path.dirname(os.path.abspath(__file__))
    runs = curve_dirs(root)
    plot_series(root, runs, "scores.csv", "score", "rolling score", "scores.png")
    plot_series(root, runs, "entropy.csv", "entropy", "policy entropy", "entropy.png")
    plot_summary(root)


if __name__ == "__main__":
    main()
