"""CFAR peak detection and overlapping keystroke segmentation.

Peaks are detected on a derivative envelope with cell-averaging CFAR, the
top-K peaks are kept subject to a minimum spacing W = alpha*L/K, and each
keystroke segment spans from the preceding to the succeeding peak (boundary
segments extend N = beta*L/K points outward).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import InsufficientPeaks, SeriesTooShort
from .series import BfiSeries

DomainId = Tuple[Optional[str], str, Optional[str]]


@dataclass(frozen=True)
class SegmentationParams:
    alpha: float = 0.6
    beta: float = 0.5
    k_keys: int = 6
    cfar_train: int = 16
    cfar_guard: int = 4
    cfar_pfa: float = 1e-3
    detection_signal: str = "derivative"   # or "raw"
    smooth_window: int = 5

    def __post_init__(self):
        if not (0 < self.alpha <= 1 and 0 < self.beta <= 1):
            raise ValueError("alpha and beta must lie in (0, 1]")
        if self.k_keys < 1 or self.cfar_train < 1 or self.cfar_guard < 0:
            raise ValueError("bad CFAR geometry")
        if self.detection_signal not in ("derivative", "raw"):
            raise ValueError("detection_signal must be 'derivative' or 'raw'")


@dataclass
class KeystrokeSegment:
    samples: np.ndarray
    peak_index: int
    left: int
    right: int
    key_label: Optional[str] = None
    domain_label: Optional[DomainId] = None

    def __len__(self) -> int:
        return len(self.samples)


def detection_signal(values: np.ndarray, params: SegmentationParams) -> np.ndarray:
    """First-difference magnitude smoothed by a short moving average.

    Keystrokes show up as rapid variation, so the derivative envelope matches
    the CFAR noise-floor model better than the raw series does. Raw mode is
    kept behind the params flag.
    """
    if params.detection_signal == "raw":
        return np.asarray(values, dtype=np.float64)
    d = np.zeros(len(values))
    d[1:] = np.abs(np.diff(values))
    return _moving_average(d, params.smooth_window)


def _moving_average(x: np.ndarray, window: int) -> np.ndarray:
    if window <= 1:
        return x.copy()
    half = window // 2
    csum = np.concatenate([[0.0], np.cumsum(x)])
    n = len(x)
    lo = np.maximum(np.arange(n) - half, 0)
    hi = np.minimum(np.arange(n) + half + 1, n)
    return (csum[hi] - csum[lo]) / (hi - lo)


def cfar_peaks(series: BfiSeries, params: SegmentationParams) -> List[int]:
    """Cell-averaging CFAR candidates on the detection signal.

    Index i is a candidate iff signal[i] > tau*mean(training cells), with
    tau = N*(Pfa^(-1/N) - 1) for the N training cells actually available
    (edge windows shrink rather than zero-pad), and signal[i] is a local
    maximum over its guard span (plateaus resolve to their leftmost index).
    """
    min_len = 2 * (params.cfar_train + params.cfar_guard) + 1
    if len(series) <= min_len:
        raise SeriesTooShort(f"need more than {min_len} samples, have {len(series)}")
    sig = detection_signal(series.values, params)
    n = len(sig)
    guard, train = params.cfar_guard, params.cfar_train

    csum = np.concatenate([[0.0], np.cumsum(sig)])
    idx = np.arange(n)
    l_lo = np.maximum(idx - guard - train, 0)
    l_hi = np.maximum(idx - guard, 0)
    r_lo = np.minimum(idx + guard + 1, n)
    r_hi = np.minimum(idx + guard + train + 1, n)
    counts = (l_hi - l_lo) + (r_hi - r_lo)
    sums = (csum[l_hi] - csum[l_lo]) + (csum[r_hi] - csum[r_lo])
    with np.errstate(divide="ignore", invalid="ignore"):
        noise = np.where(counts > 0, sums / np.maximum(counts, 1), np.inf)
        tau = counts * (params.cfar_pfa ** (-1.0 / np.maximum(counts, 1)) - 1.0)
    above = sig > tau * noise

    # local maximum over the guard span; exact ties resolve to the leftmost
    # plateau index (strictly above everything left, at least everything right)
    span = 2 * guard + 1
    padded = np.full(n + 2 * guard, -np.inf)
    padded[guard:guard + n] = sig
    windows = np.lib.stride_tricks.sliding_window_view(padded, span)
    win_max = windows.max(axis=1)
    left_max = windows[:, :guard].max(axis=1) if guard else \
        np.full(n, -np.inf)
    local_max = (sig >= win_max) & (sig > left_max)

    return [int(i) for i in np.nonzero(above & local_max)[0]]


def select_topk(candidates: Sequence[int], series: BfiSeries, k: int,
                params: SegmentationParams) -> List[int]:
    """Greedy top-K by detection-signal amplitude with spacing >= W."""
    length = len(series)
    w = math.floor(params.alpha * length / k)
    if w < 1:
        raise ValueError(f"spacing W={w}; series too short for K={k}")
    sig = detection_signal(series.values, params)
    ranked = sorted(candidates, key=lambda i: (-sig[i], i))
    accepted: List[int] = []
    for i in ranked:
        if all(abs(i - j) >= w for j in accepted):
            accepted.append(i)
            if len(accepted) == k:
                break
    if len(accepted) < k:
        raise InsufficientPeaks(
            f"only {len(accepted)} of {k} peaks survive spacing W={w}")
    return sorted(accepted)


def segment(series: BfiSeries, peaks: Sequence[int],
            params: SegmentationParams) -> List[KeystrokeSegment]:
    """Cut one overlapping segment per peak.

    Interior segments run from the previous to the next peak; the first and
    last segments extend N = beta*L/K points outward, clamped to the series.
    """
    k = len(peaks)
    length = len(series)
    if k == 0:
        return []
    if list(peaks) != sorted(peaks) or peaks[0] < 0 or peaks[-1] >= length:
        raise ValueError("peaks must be sorted indices inside the series")
    n_ext = math.floor(params.beta * length / k)
    segments = []
    for j, p in enumerate(peaks):
        left = peaks[j - 1] if j > 0 else max(0, p - n_ext)
        right = peaks[j + 1] if j < k - 1 else min(length - 1, p + n_ext)
        segments.append(KeystrokeSegment(
            samples=series.values[left:right + 1].copy(),
            peak_index=int(p), left=int(left), right=int(right)))
    return segments


def segment_pipeline(series: BfiSeries, params: SegmentationParams,
                     take_last: bool = False) -> List[KeystrokeSegment]:
    """cfar_peaks -> select_topk -> segment in one call.

    ``take_last`` keeps the last K CFAR candidates before spacing selection,
    for sessions where extra keys precede the password.
    """
    candidates = cfar_peaks(series, params)
    if take_last:
        spaced = _spacing_filter(candidates, series, params)
        candidates = spaced[-params.k_keys:]
        if len(candidates) < params.k_keys:
            raise InsufficientPeaks(
                f"only {len(candidates)} spaced candidates for K={params.k_keys}")
        peaks = sorted(candidates)
    else:
        peaks = select_topk(candidates, series, params.k_keys, params)
    return segment(series, peaks, params)


def _spacing_filter(candidates: Sequence[int], series: BfiSeries,
                    params: SegmentationParams) -> List[int]:
    """Greedy amplitude-ordered spacing filter without the K cutoff."""
    length = len(series)
    w = math.floor(params.alpha * length / params.k_keys)
    sig = detection_signal(series.values, params)
    ranked = sorted(candidates, key=lambda i: (-sig[i], i))
    accepted: List[int] = []
    for i in ranked:
        if all(abs(i - j) >= w for j in accepted):
            accepted.append(i)
    return sorted(accepted)


# ---------------------------------------------------------------------------
# JSONL persistence
# ---------------------------------------------------------------------------

def segment_to_dict(seg: KeystrokeSegment) -> dict:
    return {
        "peak_index": seg.peak_index,
        "left": seg.left,
        "right": seg.right,
        "samples": [float(v) for v in seg.samples],
        "key_label": seg.key_label,
        "domain_label": list(seg.domain_label) if seg.domain_label else None,
    }


def segment_from_dict(obj: dict) -> KeystrokeSegment:
    domain = obj.get("domain_label")
    return KeystrokeSegment(
        samples=np.asarray(obj["samples"], dtype=np.float64),
        peak_index=int(obj["peak_index"]),
        left=int(obj["left"]),
        right=int(obj["right"]),
        key_label=obj.get("key_label"),
        domain_label=tuple(domain) if domain else None,
    )


def write_segments_jsonl(path: str, segments: Sequence[KeystrokeSegment]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for seg in segments:
            fh.write(json.dumps(segment_to_dict(seg), sort_keys=True) + "\n")


def read_segments_jsonl(path: str) -> List[KeystrokeSegment]:
    segments = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                segments.append(segment_from_dict(json.loads(line)))
    return segments
