"""Figure rendering for the pipeline stages.

Each plot kind writes a pair of files next to each other: an SVG figure and
a CSV carrying the exact plotted numbers. Matplotlib output is pinned (hash
salt, no date metadata) so reruns produce identical files.
"""

from __future__ import annotations

import csv
import json
import os
from typing import List, Tuple

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "bfiki"

import matplotlib.pyplot as plt
import numpy as np

from .errors import BadInput
from .segmenter import read_segments_jsonl
from .series import read_series_csv

PLOT_KINDS = ("series", "segments", "topn")


def render(kind: str, in_path: str, out_base: str) -> Tuple[str, str]:
    """Render one figure; returns the (svg, csv) paths written."""
    if kind == "series":
        return plot_series(in_path, out_base)
    if kind == "segments":
        return plot_segments(in_path, out_base)
    if kind == "topn":
        return plot_topn(in_path, out_base)
    raise BadInput(f"unknown plot kind {kind!r}; choose from {PLOT_KINDS}")


def _save(fig, out_base: str) -> str:
    svg_path = out_base + ".svg"
    fig.savefig(svg_path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return svg_path


def plot_series(in_path: str, out_base: str) -> Tuple[str, str]:
    try:
        series = read_series_csv(in_path)
    except Exception as exc:
        raise BadInput(f"{in_path}: {exc}") from exc
    t = np.arange(len(series)) / series.fs_hz
    shown = np.where(series.gap_mask, np.nan, series.values)

    fig, ax = plt.subplots(figsize=(8, 3))
    ax.plot(t, shown, lw=0.9, color="tab:blue")
    if series.gap_mask.any():
        ax.plot(t[series.gap_mask], np.zeros(series.gap_mask.sum()), "|",
                color="tab:red", ms=6, label="missing")
        ax.legend(loc="upper right", frameon=False)
    ax.set_xlabel("time (s)")
    ax.set_ylabel("normalized BFI feature")
    fig.tight_layout()
    svg_path = _save(fig, out_base)

    csv_path = out_base + ".csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t_s", "value", "gap"])
        for ti, v, g in zip(t, series.values, series.gap_mask):
            writer.writerow([repr(float(ti)), repr(float(v)), int(g)])
    return svg_path, csv_path


def plot_segments(in_path: str, out_base: str) -> Tuple[str, str]:
    try:
        segments = read_segments_jsonl(in_path)
    except Exception as exc:
        raise BadInput(f"{in_path}: {exc}") from exc
    if not segments:
        raise BadInput(f"{in_path}: no segments to plot")

    fig, ax = plt.subplots(figsize=(8, 3))
    for i, seg in enumerate(segments):
        idx = np.arange(seg.left, seg.right + 1)
        ax.plot(idx, seg.samples, lw=0.9)
        ax.axvline(seg.peak_index, color="tab:red", lw=0.8, ls="--")
    ax.set_xlabel("sample index")
    ax.set_ylabel("normalized BFI feature")
    ax.set_title(f"{len(segments)} keystroke segments")
    fig.tight_layout()
    svg_path = _save(fig, out_base)

    csv_path = out_base + ".csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["segment", "kind", "index", "value"])
        for i, seg in enumerate(segments):
            writer.writerow([i, "peak", seg.peak_index,
                             repr(float(seg.samples[seg.peak_index - seg.left]))])
            for j, v in enumerate(seg.samples):
                writer.writerow([i, "sample", seg.left + j, repr(float(v))])
    return svg_path, csv_path


def plot_topn(in_path: str, out_base: str) -> Tuple[str, str]:
    try:
        with open(in_path, "r", encoding="utf-8") as fh:
            evaluation = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise BadInput(f"{in_path}: {exc}") from exc
    table = evaluation.get("top_n_accuracy") if isinstance(evaluation, dict) else None
    if not table:
        raise BadInput(f"{in_path}: no top_n_accuracy table (run `bfiki eval` first)")
    ns = sorted(int(k) for k in table)
    accs = [float(table[str(n)]) for n in ns]

    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(ns, accs, marker="o", color="tab:blue")
    ax.set_xlabel("number of candidates N")
    ax.set_ylabel("top-N accuracy")
    ax.set_ylim(0.0, 1.05)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    svg_path = _save(fig, out_base)

    csv_path = out_base + ".csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n", "accuracy"])
        for n, acc in zip(ns, accs):
            writer.writerow([n, repr(acc)])
    return svg_path, csv_path
