"""Scalar BFI time series: feature extraction, resampling, viability.

The pipeline reduces each beamforming report to one real scalar, resamples
the scalar stream onto a uniform grid, normalizes to [0, 1], and tags
unobserved grid points with the -1 sentinel.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .errors import EmptyInput, SeriesTooShort
from .frames import BfiFrame, SteeringMatrix, angle_dequantize

GAP = -1.0
DEFAULT_FS_HZ = 40.0
DEFAULT_VIABILITY_WINDOW_S = 1.0


@dataclass
class BfiSeries:
    """Uniformly sampled scalar series with a gap mask (the pipeline's x_t)."""

    fs_hz: float
    values: np.ndarray          # float64, GAP sentinel at missing samples
    t0_us: int
    gap_mask: np.ndarray        # bool, True = missing

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.gap_mask = np.asarray(self.gap_mask, dtype=bool)
        if self.values.shape != self.gap_mask.shape or self.values.ndim != 1:
            raise ValueError("values and gap_mask must be equal-length 1-D arrays")
        if len(self.values) < 1:
            raise ValueError("series must hold at least one sample")

    def __len__(self) -> int:
        return len(self.values)

    @property
    def is_gapless(self) -> bool:
        return not self.gap_mask.any()

    def copy(self) -> "BfiSeries":
        return BfiSeries(self.fs_hz, self.values.copy(), self.t0_us,
                         self.gap_mask.copy())


class Viability(enum.Enum):
    VIABLE = "viable"
    ATTACK_FAILED = "attack_failed"


SELECTORS = ("first_phi_q", "v00mag", "phi_mean")
DEFAULT_SELECTOR = "first_phi_q"


def extract_feature(v: SteeringMatrix, frame: BfiFrame,
                    selector: str = DEFAULT_SELECTOR) -> float:
    """Reduce one report to a scalar sample.

    Which scalar of V carries the keystroke signal best is an open choice,
    so three candidates are exposed: the first quantized phi, |V[0,0]|, and
    the mean dequantized phi.
    """
    if selector == "first_phi_q":
        return float(frame.phi_q[0]) if frame.phi_q else 0.0
    if selector == "v00mag":
        return float(abs(v[0, 0]))
    if selector == "phi_mean":
        if not frame.phi_q:
            return 0.0
        bits = frame.codebook.phi_bits
        return float(np.mean([angle_dequantize(q, bits, "phi")
                              for q in frame.phi_q]))
    raise ValueError(f"unknown selector {selector!r}; choose from {SELECTORS}")


def resample(samples: Sequence[Tuple[int, float]],
             fs_hz: float = DEFAULT_FS_HZ) -> BfiSeries:
    """Resample irregular (timestamp_us, value) pairs onto a uniform grid.

    A grid point is interpolated only when it has an observed neighbor within
    one sampling period on each side; otherwise it becomes a gap. Non-gap
    values are then min-max normalized to [0, 1] (all zeros for a constant
    series).
    """
    if fs_hz <= 0:
        raise ValueError("fs_hz must be positive")
    samples = sorted(samples)
    if not samples:
        raise EmptyInput("no samples to resample")
    ts = np.array([s[0] for s in samples], dtype=np.float64)
    vs = np.array([s[1] for s in samples], dtype=np.float64)
    t0 = samples[0][0]
    if len(samples) == 1:
        return BfiSeries(fs_hz, np.zeros(1), int(t0), np.zeros(1, dtype=bool))

    step_us = 1e6 / fs_hz
    span = ts[-1] - ts[0]
    n = int(math.floor(span * fs_hz / 1e6 + 1e-9)) + 1
    grid = ts[0] + np.arange(n) * step_us

    right = np.searchsorted(ts, grid, side="left")
    left = np.searchsorted(ts, grid, side="right") - 1
    right = np.clip(right, 0, len(ts) - 1)
    left = np.clip(left, 0, len(ts) - 1)
    # the last grid point may overshoot ts[-1] by float error; tolerate that
    tol = step_us * (1.0 + 1e-9)
    edge_eps = step_us * 1e-6
    ok = ((grid - ts[left]) <= tol) & ((ts[right] - grid) <= tol) \
        & ((ts[right] - grid) >= -edge_eps)

    values = np.full(n, GAP)
    dt = ts[right] - ts[left]
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = np.where(dt > 0, (grid - ts[left]) / np.where(dt > 0, dt, 1.0), 0.0)
    interp = vs[left] + frac * (vs[right] - vs[left])
    values[ok] = interp[ok]
    gap_mask = ~ok

    observed = values[ok]
    lo, hi = observed.min(), observed.max()
    if hi > lo:
        values[ok] = (observed - lo) / (hi - lo)
    else:
        values[ok] = 0.0
    return BfiSeries(fs_hz, values, int(t0), gap_mask)


def normalize(series: BfiSeries) -> BfiSeries:
    """Return a copy with observed samples min-max normalized to [0, 1]."""
    out = series.copy()
    obs = ~out.gap_mask
    if obs.any():
        vals = out.values[obs]
        lo, hi = vals.min(), vals.max()
        out.values[obs] = (vals - lo) / (hi - lo) if hi > lo else 0.0
    return out


def viability_check(series: BfiSeries,
                    window_s: float = DEFAULT_VIABILITY_WINDOW_S) -> Viability:
    """Fail the attack when any sliding window holds a contiguous gap run
    covering at least half the window."""
    w = int(math.floor(series.fs_hz * window_s))
    if w < 1 or len(series) < w:
        raise SeriesTooShort(
            f"need at least {w} samples for a {window_s}s window, have {len(series)}")
    longest = _longest_gap_run(series.gap_mask)
    # A run of r gaps fits inside some length-w window iff r >= w/2 (the series
    # is at least w long), so the sliding-window rule reduces to the longest run.
    if longest >= 0.5 * w:
        return Viability.ATTACK_FAILED
    return Viability.VIABLE


def _longest_gap_run(mask: np.ndarray) -> int:
    longest = run = 0
    for g in mask:
        run = run + 1 if g else 0
        if run > longest:
            longest = run
    return longest


def frames_to_series(frames: Sequence[BfiFrame], selector: str = DEFAULT_SELECTOR,
                     fs_hz: float = DEFAULT_FS_HZ) -> BfiSeries:
    """Feature-extract and resample a window's frames in one step."""
    from .frames import reconstruct_v
    samples = [(f.timestamp_us, extract_feature(reconstruct_v(f), f, selector))
               for f in frames]
    return resample(samples, fs_hz)


# ---------------------------------------------------------------------------
# CSV persistence: header t_s,value,gap
# ---------------------------------------------------------------------------

def write_series_csv(path: str, series: BfiSeries) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t_s", "value", "gap"])
        t0_s = series.t0_us / 1e6
        for i, (v, g) in enumerate(zip(series.values, series.gap_mask)):
            writer.writerow([repr(t0_s + i / series.fs_hz), repr(float(v)), int(g)])


def read_series_csv(path: str) -> BfiSeries:
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["t_s", "value", "gap"]:
            raise ValueError(f"{path}: not a series CSV (header {header})")
        t, v, g = [], [], []
        for row in reader:
            if not row:
                continue
            t.append(float(row[0]))
            v.append(float(row[1]))
            g.append(bool(int(row[2])))
    if len(t) == 0:
        raise EmptyInput(f"{path}: series CSV has no rows")
    if len(t) > 1:
        fs = (len(t) - 1) / (t[-1] - t[0])
    else:
        fs = DEFAULT_FS_HZ
    values = np.array(v, dtype=np.float64)
    mask = np.array(g, dtype=bool)
    values[mask] = GAP
    return BfiSeries(float(round(fs, 6)), values, int(round(t[0] * 1e6)), mask)
