"""Physically-motivated synthetic BFI generator.

Each keystroke contributes a per-key pulse (a smooth ~120 ms bump whose shape
is fixed by a signature seed), each key-to-key transition adds band-limited
fluctuation whose amplitude grows with the travel distance between the keys,
and typing speed, device scale, and additive noise act as nuisance factors.
The output is labeled with ground-truth press instants and domain triples, so
every downstream stage can be scored against planted truth.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import BadRatio, UnknownKey
from .inference import KeyboardLayout, numeric_layout
from .segmenter import DomainId, KeystrokeSegment, SegmentationParams, segment
from .series import BfiSeries
from .sra import TrafficMask, corrupt, gen_poisson_mask

PULSE_WIDTH_S = 0.12            # main-lobe width of a press pulse
MISS_HALF_WIDTH = 2             # samples around a peak that must all be lost


@dataclass(frozen=True)
class SynthConfig:
    layout: KeyboardLayout = field(default_factory=numeric_layout)
    cps_range: Tuple[float, float] = (0.5, 2.0)
    fs_hz: float = 40.0
    key_signature_seed: int = 7
    transition_gain: float = 0.10
    noise_sigma: float = 0.008
    device_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.cps_range
        if not (0 < lo <= hi < 10):
            raise ValueError("cps_range must sit inside (0, 10)")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")


@dataclass
class LabeledSeries:
    series: BfiSeries
    password: str
    peak_indices: np.ndarray
    domains: List[DomainId]

    def __post_init__(self):
        self.peak_indices = np.asarray(self.peak_indices, dtype=int)
        if not (len(self.password) == len(self.peak_indices) == len(self.domains)):
            raise ValueError("password, peaks, and domains must align")
        if len(self.peak_indices) > 1 and (np.diff(self.peak_indices) <= 0).any():
            raise ValueError("peak indices must be strictly increasing")


def password_domains(password: str) -> List[DomainId]:
    out: List[DomainId] = []
    for i, key in enumerate(password):
        prev = password[i - 1] if i > 0 else None
        nxt = password[i + 1] if i < len(password) - 1 else None
        out.append((prev, key, nxt))
    return out


# ---------------------------------------------------------------------------
# deterministic per-key / per-pair waveform shapes
# ---------------------------------------------------------------------------

def _key_pulse_params(config: SynthConfig, key: str):
    """Per-key press shape: fast attack, slower release, plus release-side
    bumps. Candidates are redrawn until the composite stays unimodal, so a
    noise-free press always yields exactly one local maximum."""
    idx = config.layout.index(key)
    rng = np.random.default_rng([config.key_signature_seed, 1, idx])
    n_comp = 3
    while True:
        signs = rng.choice([-1.0, 1.0], n_comp)
        params = {
            "tau_rise": float(rng.uniform(0.16, 0.28)) * PULSE_WIDTH_S,
            "tau_fall": float(rng.uniform(0.26, 0.46)) * PULSE_WIDTH_S,
            "amps": signs * rng.uniform(0.2, 0.45, n_comp),
            "offsets": rng.uniform(0.15, 1.05, n_comp) * PULSE_WIDTH_S,
            "widths": rng.uniform(0.20, 0.45, n_comp) * PULSE_WIDTH_S,
        }
        if _is_unimodal_pulse(params):
            return params


def _is_unimodal_pulse(params: dict, resolution_s: float = 1e-3) -> bool:
    horizon = 4.0 * PULSE_WIDTH_S
    t = np.arange(-horizon, horizon, resolution_s)
    values = _eval_pulse(params, t)
    rising = np.diff(values) > 0
    flips = int(np.count_nonzero(np.diff(rising.astype(int))))
    apex = t[int(np.argmax(values))]
    return flips == 1 and abs(apex) <= 0.015


def _eval_pulse(params: dict, t: np.ndarray) -> np.ndarray:
    tau = np.where(t < 0, params["tau_rise"], params["tau_fall"])
    out = np.exp(-((t / tau) ** 2))
    for a, c, w in zip(params["amps"], params["offsets"], params["widths"]):
        out = out + a * np.exp(-(((t - c) / w) ** 2))
    return out


def _transition_params(config: SynthConfig, a: str, b: str):
    ia, ib = config.layout.index(a), config.layout.index(b)
    rng = np.random.default_rng([config.key_signature_seed, 2, ia, ib])
    n_comp = 4
    amps = rng.uniform(0.4, 1.0, n_comp)
    return {
        # slow fluctuation: carries context shape without derivative energy
        "freqs": rng.uniform(0.4, 1.6, n_comp),
        "phases": rng.uniform(0.0, 2.0 * math.pi, n_comp),
        "amps": amps / np.abs(amps).sum(),
    }


def _eval_transition(params: dict, u: np.ndarray) -> np.ndarray:
    out = np.zeros_like(u)
    for a, f, ph in zip(params["amps"], params["freqs"], params["phases"]):
        out = out + a * np.sin(2.0 * math.pi * f * u + ph)
    return out * np.sin(math.pi * np.clip(u, 0.0, 1.0))


# ---------------------------------------------------------------------------
# series synthesis
# ---------------------------------------------------------------------------

def synth_keystroke_series(password: str, config: SynthConfig,
                           seed: int) -> LabeledSeries:
    """Generate one dense, normalized series for a typed password."""
    if not password:
        raise ValueError("password must be non-empty")
    for key in password:
        if key not in config.layout.positions:
            raise UnknownKey(f"key {key!r} not in layout {config.layout.name!r}")

    rng = np.random.default_rng([config.seed, seed])
    cps = rng.uniform(*config.cps_range)
    interval = 1.0 / cps
    margin = 0.75 * interval

    press_times = [margin]
    for _ in range(len(password) - 1):
        press_times.append(press_times[-1] + interval * rng.uniform(0.8, 1.2))
    total = press_times[-1] + margin
    n = int(round(total * config.fs_hz)) + 1
    t = np.arange(n) / config.fs_hz

    x = np.zeros(n)
    peaks = []
    for key, tp in zip(password, press_times):
        params = _key_pulse_params(config, key)
        pulse = config.device_scale * _eval_pulse(params, t - tp)
        x += pulse
        peaks.append(int(np.argmax(pulse)))   # press instant on the grid
    for (a, tp_a), (b, tp_b) in zip(zip(password, press_times),
                                    zip(password[1:], press_times[1:])):
        gain = config.transition_gain * config.layout.distance(a, b)
        if gain == 0.0:
            continue
        u = (t - tp_a) / (tp_b - tp_a)
        inside = (u > 0.0) & (u < 1.0)
        x[inside] += gain * _eval_transition(_transition_params(config, a, b),
                                             u[inside])
    if config.noise_sigma > 0:
        x += rng.normal(0.0, config.noise_sigma, n)

    lo, hi = x.min(), x.max()
    x = (x - lo) / (hi - lo) if hi > lo else np.zeros_like(x)
    peaks = np.array(peaks)
    series = BfiSeries(config.fs_hz, x, 0, np.zeros(n, dtype=bool))
    return LabeledSeries(series=series, password=password, peak_indices=peaks,
                         domains=password_domains(password))


def synth_dataset(counts: Dict[int, int], config: SynthConfig,
                  seed: int) -> List[LabeledSeries]:
    """Uniform random passwords at the requested lengths (e.g. {4: n, 6: n})."""
    rng = np.random.default_rng([config.seed, seed, 3])
    out: List[LabeledSeries] = []
    keys = config.layout.keys
    i = 0
    for length in sorted(counts):
        for _ in range(counts[length]):
            password = "".join(keys[int(j)] for j in
                               rng.integers(len(keys), size=length))
            out.append(synth_keystroke_series(password, config, seed=seed * 100003 + i))
            i += 1
    return out


def apply_traffic(labeled: LabeledSeries, ratio: float,
                  seed: int) -> Tuple[LabeledSeries, List[int]]:
    """Sparsify a dense series at the given traffic ratio.

    Ratio 1.0 is the saturated case and keeps every sample. Returns the
    gapped series plus the list of keystroke positions whose entire
    +-2-sample press neighborhood fell into gaps ("missed keystrokes").
    """
    if not 0 < ratio <= 1:
        raise BadRatio(f"traffic ratio {ratio} outside (0, 1]")
    n = len(labeled.series)
    if ratio == 1.0:
        mask = TrafficMask(keep=np.ones(n, dtype=bool), ratio=1.0)
    else:
        mask = gen_poisson_mask(n, ratio, labeled.series.fs_hz, seed)
    sparse = corrupt(labeled.series, mask)
    missed = []
    for pos, peak in enumerate(labeled.peak_indices):
        lo = max(0, int(peak) - MISS_HALF_WIDTH)
        hi = min(n, int(peak) + MISS_HALF_WIDTH + 1)
        if not mask.keep[lo:hi].any():
            missed.append(pos)
    gapped = LabeledSeries(series=sparse, password=labeled.password,
                           peak_indices=labeled.peak_indices.copy(),
                           domains=list(labeled.domains))
    return gapped, missed


# ---------------------------------------------------------------------------
# smooth series for recovery training and evaluation
# ---------------------------------------------------------------------------

def synth_sine_mixture(length: int, fs_hz: float = 40.0, seed: int = 0,
                       n_components: int = 4,
                       freq_range: Tuple[float, float] = (0.3, 3.0)) -> BfiSeries:
    """Band-limited sinusoid mixture, normalized to [0, 1], gapless.

    The smooth stand-in family for exercising sparse recovery: mixtures live
    in the keystroke band but carry no irreducible spike entropy.
    """
    rng = np.random.default_rng(seed)
    t = np.arange(length) / fs_hz
    x = np.zeros(length)
    for _ in range(n_components):
        freq = rng.uniform(*freq_range)
        amp = rng.uniform(0.3, 1.0)
        phase = rng.uniform(0.0, 2.0 * math.pi)
        x += amp * np.sin(2.0 * math.pi * freq * t + phase)
    lo, hi = x.min(), x.max()
    x = (x - lo) / (hi - lo) if hi > lo else np.zeros_like(x)
    return BfiSeries(fs_hz, x, 0, np.zeros(length, dtype=bool))


def synth_sine_dataset(count: int, length: int, fs_hz: float = 40.0,
                       seed: int = 0) -> List[BfiSeries]:
    return [synth_sine_mixture(length, fs_hz, seed=seed * 9176 + i)
            for i in range(count)]


# ---------------------------------------------------------------------------
# segment extraction with planted truth
# ---------------------------------------------------------------------------

def labeled_segments(labeled: LabeledSeries,
                     params: Optional[SegmentationParams] = None
                     ) -> List[KeystrokeSegment]:
    """Cut segments at the ground-truth peaks and attach key/domain labels."""
    if params is None:
        params = SegmentationParams(k_keys=len(labeled.password))
    else:
        params = replace(params, k_keys=len(labeled.password))
    segs = segment(labeled.series, list(labeled.peak_indices), params)
    for seg, key, dom in zip(segs, labeled.password, labeled.domains):
        seg.key_label = key
        seg.domain_label = dom
    return segs


# ---------------------------------------------------------------------------
# multi-domain benchmark for the adversarial-benefit study
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DomainStyle:
    """One typing style: a restricted context vocabulary per key, a speed
    lane, a device amplitude, and an environment drift band, mirroring the
    leave-one-out factors of the evaluation (subject, device, environment)."""
    context_offsets: tuple          # (prev_offset, next_offset) choices
    cps: Tuple[float, float]
    device_scale: float
    wander_freq: Tuple[float, float]    # Hz band of environment drift
    wander_amp: float


def benchmark_styles(n_styles: int, n_keys: int, seed: int,
                     contexts_per_style: int = 3) -> List[DomainStyle]:
    """Per-style context vocabularies and nuisance lanes; the held-out style
    (last entry) gets a middle speed lane so unseen-domain evaluation
    interpolates rather than extrapolates in typing speed."""
    rng = np.random.default_rng([seed, 11])
    lanes = list(np.linspace(0.6, 1.7, n_styles))
    heldout_lane = lanes.pop(len(lanes) // 2)
    lanes.append(heldout_lane)
    wander_centers = list(np.linspace(0.2, 0.7, n_styles))
    heldout_wander = wander_centers.pop(len(wander_centers) // 2)
    wander_centers.append(heldout_wander)
    styles = []
    for s in range(n_styles):
        offsets = []
        while len(offsets) < contexts_per_style:
            po = int(rng.integers(1, n_keys))
            no = int(rng.integers(1, n_keys))
            if (po, no) not in offsets:
                offsets.append((po, no))
        styles.append(DomainStyle(
            context_offsets=tuple(offsets),
            cps=(float(lanes[s]) * 0.92, float(lanes[s]) * 1.08),
            device_scale=float(rng.uniform(0.85, 1.15)),
            wander_freq=(wander_centers[s] - 0.04, wander_centers[s] + 0.04),
            wander_amp=0.25,
        ))
    return styles


def make_domain_segments(config: SynthConfig, style: DomainStyle, key: str,
                         count: int, seed: int) -> List[KeystrokeSegment]:
    """Segments of one key typed inside contexts drawn from the style's
    vocabulary, flanked by random keys so the window normalization does not
    leak the context. Style-band drift is added across the whole series to
    model environment interference; it carries no key information."""
    keys = config.layout.keys
    idx = config.layout.index(key)
    cfg = replace(config, cps_range=style.cps, device_scale=style.device_scale)
    rng = np.random.default_rng([config.seed, seed, 13])
    out = []
    for rep in range(count):
        po, no = style.context_offsets[int(rng.integers(len(style.context_offsets)))]
        prev = keys[(idx + po) % len(keys)]
        nxt = keys[(idx + no) % len(keys)]
        flanks = [keys[int(j)] for j in rng.integers(len(keys), size=2)]
        password = flanks[0] + prev + key + nxt + flanks[1]
        labeled = synth_keystroke_series(password, cfg, seed=seed * 1009 + rep)
        if style.wander_amp > 0:
            series = labeled.series
            freq = rng.uniform(*style.wander_freq)
            phase = rng.uniform(0.0, 2.0 * math.pi)
            t = np.arange(len(series)) / series.fs_hz
            drift = style.wander_amp * np.sin(2.0 * math.pi * freq * t + phase)
            # fixed affine map back into [0, 1]: identical for every series,
            # so it cannot leak the domain the way a per-series min-max would
            series.values = (series.values + drift + style.wander_amp) \
                / (1.0 + 2.0 * style.wander_amp)
        out.append(labeled_segments(labeled)[2])
    return out


@dataclass
class DomainBenchmark:
    train: List[KeystrokeSegment]
    seen_test: List[KeystrokeSegment]        # same styles as train
    heldout: List[KeystrokeSegment]          # the unseen style


def make_domain_benchmark(config: SynthConfig, n_train_domains: int = 4,
                          per_key_domain: int = 40, seen_per_key_domain: int = 10,
                          heldout_per_key: int = 40,
                          seed: int = 0) -> DomainBenchmark:
    """Benchmark over n_train_domains + 1 styles, split per (key, style)."""
    keys = config.layout.keys
    styles = benchmark_styles(n_train_domains + 1, len(keys), seed)
    bench = DomainBenchmark(train=[], seen_test=[], heldout=[])
    for ki, key in enumerate(keys):
        for si, style in enumerate(styles[:-1]):
            segs = make_domain_segments(
                config, style, key, per_key_domain + seen_per_key_domain,
                seed=seed + 131 * ki + 17 * si + 1)
            bench.train.extend(segs[:per_key_domain])
            bench.seen_test.extend(segs[per_key_domain:])
        bench.heldout.extend(make_domain_segments(
            config, styles[-1], key, heldout_per_key,
            seed=seed + 131 * ki + 997))
    return bench


# ---------------------------------------------------------------------------
# dataset directory layout: series/NNNN.csv + labels.json
# ---------------------------------------------------------------------------

def save_dataset(directory: str, dataset: Sequence[LabeledSeries]) -> None:
    from .series import write_series_csv
    series_dir = os.path.join(directory, "series")
    os.makedirs(series_dir, exist_ok=True)
    labels = {"fs_hz": dataset[0].series.fs_hz if dataset else 40.0, "files": {}}
    for i, item in enumerate(dataset):
        name = f"{i:04d}.csv"
        write_series_csv(os.path.join(series_dir, name), item.series)
        labels["files"][name] = {
            "password": item.password,
            "peaks": [int(p) for p in item.peak_indices],
            "domains": [list(d) for d in item.domains],
        }
    with open(os.path.join(directory, "labels.json"), "w", encoding="utf-8") as fh:
        json.dump(labels, fh, indent=1, sort_keys=True)


def load_dataset(directory: str) -> List[LabeledSeries]:
    from .series import read_series_csv
    with open(os.path.join(directory, "labels.json"), "r", encoding="utf-8") as fh:
        labels = json.load(fh)
    out = []
    for name in sorted(labels["files"]):
        meta = labels["files"][name]
        series = read_series_csv(os.path.join(directory, "series", name))
        out.append(LabeledSeries(
            series=series,
            password=meta["password"],
            peak_indices=np.asarray(meta["peaks"], dtype=int),
            domains=[tuple(d) for d in meta["domains"]],
        ))
    return out
