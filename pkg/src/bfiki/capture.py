"""Synthetic monitor-mode captures built from generated keystroke series.

The series value at each sampling instant is quantized into the first phi
angle of a 2x1 beamforming report, so parsing the capture back through the
first_phi_q selector reproduces the series up to codebook quantization.
Data frames toward a payment IP bracket the typing period so the window
detector has something to trigger on.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .frames import BfiFrame, Codebook, encode_capture
from .orchestrator import encode_data_frame
from .pcap import CaptureRecord, write_pcap
from .synth import LabeledSeries

DEFAULT_VICTIM_MAC = bytes.fromhex("a4c3f0120001")
DEFAULT_AP_MAC = bytes.fromhex("020000000001")
DEFAULT_PAYMENT_IP = "43.156.222.205"


@dataclass(frozen=True)
class CaptureFixture:
    records: List[CaptureRecord]
    password: str
    victim_mac: bytes
    payment_ip: str


def series_to_bfi_records(labeled: LabeledSeries, victim_mac: bytes,
                          ap_mac: bytes = DEFAULT_AP_MAC,
                          codebook: Codebook = Codebook.SU_HI,
                          t0_us: int = 1_700_000_000_000_000,
                          keep: Optional[np.ndarray] = None) -> List[CaptureRecord]:
    """One beamforming report per (kept) series sample."""
    step_us = 1e6 / labeled.series.fs_hz
    qmax = (1 << codebook.phi_bits) - 1
    records = []
    for i, value in enumerate(labeled.series.values):
        if keep is not None and not keep[i]:
            continue
        q = int(round(float(value) * qmax))
        frame = BfiFrame(
            timestamp_us=t0_us + int(round(i * step_us)),
            src_mac=victim_mac, n_rows=2, n_cols=1, codebook=codebook,
            phi_q=(q,), psi_q=(0,), stream_snr_db=(30.0,))
        records.append(encode_capture(frame, dst_mac=ap_mac, seq=i & 0xFFF))
    return records


def make_attack_capture(labeled: LabeledSeries,
                        victim_mac: bytes = DEFAULT_VICTIM_MAC,
                        ap_mac: bytes = DEFAULT_AP_MAC,
                        payment_ip: str = DEFAULT_PAYMENT_IP,
                        request_hz: float = 5.0,
                        t0_us: int = 1_700_000_000_000_000,
                        keep: Optional[np.ndarray] = None) -> CaptureFixture:
    """Interleave BFI reports with payment-IP requests covering the series."""
    records = series_to_bfi_records(labeled, victim_mac, ap_mac,
                                    t0_us=t0_us, keep=keep)
    duration_us = int((len(labeled.series) - 1) * 1e6 / labeled.series.fs_hz)
    n_requests = max(2, int(duration_us / 1e6 * request_hz) + 1)
    for j in range(n_requests):
        ts = t0_us + int(j * duration_us / (n_requests - 1))
        records.append(encode_data_frame(ts, victim_mac, payment_ip, bssid=ap_mac))
    records.sort(key=lambda r: r.timestamp_us)
    return CaptureFixture(records=records, password=labeled.password,
                          victim_mac=victim_mac, payment_ip=payment_ip)


def write_fixture(path: str, fixture: CaptureFixture) -> None:
    write_pcap(path, fixture.records)
