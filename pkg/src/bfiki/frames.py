"""802.11ac VHT compressed beamforming report decoding.

Locates Action No-ACK frames carrying VHT compressed beamforming reports in
radiotap-prefixed captures, unpacks the quantized Givens angles, and
reconstructs the steering matrix V. A mirrored encoder is included so the
parser can be fuzzed round-trip and synthetic captures can be generated.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import reduce
from typing import Optional, Sequence

import numpy as np

from .errors import MalformedReport, QOutOfRange
from .pcap import CaptureRecord

MAX_ANTENNAS = 4

# 802.11 management constants
_FT_MGMT = 0
_SUBTYPE_ACTION_NOACK = 14
_CATEGORY_VHT = 21
_VHT_ACTION_COMPRESSED_BF = 0


class Codebook(enum.Enum):
    """VHT codebook selected by (Feedback Type, Codebook Information)."""

    SU_LO = ("SU_LO", 4, 2)
    SU_HI = ("SU_HI", 6, 4)
    MU_LO = ("MU_LO", 7, 5)
    MU_HI = ("MU_HI", 9, 7)

    def __init__(self, label: str, phi_bits: int, psi_bits: int):
        self.label = label
        self.phi_bits = phi_bits
        self.psi_bits = psi_bits

    @property
    def is_mu(self) -> bool:
        return self in (Codebook.MU_LO, Codebook.MU_HI)


_CODEBOOK_BY_BITS = {(0, 0): Codebook.SU_LO, (0, 1): Codebook.SU_HI,
                     (1, 0): Codebook.MU_LO, (1, 1): Codebook.MU_HI}


@dataclass(frozen=True)
class BfiFrame:
    """One decoded VHT compressed beamforming report."""

    timestamp_us: int
    src_mac: bytes
    n_rows: int                 # Nr, Tx antennas at the AP side
    n_cols: int                 # Nc, spatial streams
    codebook: Codebook
    phi_q: tuple
    psi_q: tuple
    stream_snr_db: tuple


SteeringMatrix = np.ndarray


def mac_parse(text: str) -> bytes:
    parts = text.strip().split(":")
    if len(parts) != 6:
        raise ValueError(f"bad MAC address {text!r}")
    return bytes(int(p, 16) for p in parts)


def mac_format(mac: bytes) -> str:
    return ":".join(f"{b:02x}" for b in mac)


def angle_layout(n_rows: int, n_cols: int):
    """Per-Givens-stage angle counts in the standard feedback order.

    Stage i (1-based) carries Nr-i phi angles followed by Nr-i psi angles,
    for i = 1 .. min(Nc, Nr-1).
    """
    m = min(n_cols, n_rows - 1)
    return [n_rows - i for i in range(1, m + 1)]


def angle_count(n_rows: int, n_cols: int) -> int:
    """Number of phi angles (equal to the number of psi angles)."""
    return sum(angle_layout(n_rows, n_cols))


def angle_dequantize(q: int, bits: int, kind: str) -> float:
    """Map a quantized angle index to radians per the VHT codebook.

    phi: q*pi/2^(bits-1) + pi/2^bits        (0, 2*pi)
    psi: q*pi/2^(bits+1) + pi/2^(bits+2)    (0, pi/2)
    """
    if not 0 <= q < (1 << bits):
        raise QOutOfRange(f"q={q} outside [0, 2^{bits})")
    if kind == "phi":
        return q * math.pi / (1 << (bits - 1)) + math.pi / (1 << bits)
    if kind == "psi":
        return q * math.pi / (1 << (bits + 1)) + math.pi / (1 << (bits + 2))
    raise ValueError(f"kind must be 'phi' or 'psi', got {kind!r}")


def reconstruct_v(frame: BfiFrame) -> SteeringMatrix:
    """Rebuild the steering matrix V from the quantized Givens angles.

    V = [prod over stages i of D_i(phi) * prod_l G_li(psi)^T] * I(Nr x Nc),
    which always has orthonormal columns.
    """
    nr, nc = frame.n_rows, frame.n_cols
    cb = frame.codebook
    phis = iter(frame.phi_q)
    psis = iter(frame.psi_q)
    acc = np.eye(nr, dtype=complex)
    for stage, n_angles in enumerate(angle_layout(nr, nc), start=1):
        d = np.ones(nr, dtype=complex)
        for row in range(stage, stage + n_angles):       # rows stage..Nr-1, 1-based
            phi = angle_dequantize(next(phis), cb.phi_bits, "phi")
            d[row - 1] = np.exp(1j * phi)
        m = np.diag(d)
        for row in range(stage + 1, stage + n_angles + 1):   # rows stage+1..Nr
            psi = angle_dequantize(next(psis), cb.psi_bits, "psi")
            g = np.eye(nr, dtype=complex)
            c, s = math.cos(psi), math.sin(psi)
            g[stage - 1, stage - 1] = c
            g[stage - 1, row - 1] = s
            g[row - 1, stage - 1] = -s
            g[row - 1, row - 1] = c
            m = m @ g.T
        acc = acc @ m
    return acc[:, :nc]


# ---------------------------------------------------------------------------
# bit packing helpers (angles are packed LSB-first, phi-then-psi per stage)
# ---------------------------------------------------------------------------

def _pack_angles(frame: BfiFrame) -> bytes:
    total_bits = angle_count(frame.n_rows, frame.n_cols) * (
        frame.codebook.phi_bits + frame.codebook.psi_bits)
    buf = bytearray((total_bits + 7) // 8)
    pos = 0
    phis = iter(frame.phi_q)
    psis = iter(frame.psi_q)
    for n_angles in angle_layout(frame.n_rows, frame.n_cols):
        for _ in range(n_angles):
            pos = _put_bits(buf, pos, next(phis), frame.codebook.phi_bits)
        for _ in range(n_angles):
            pos = _put_bits(buf, pos, next(psis), frame.codebook.psi_bits)
    return bytes(buf)


def _put_bits(buf: bytearray, pos: int, value: int, nbits: int) -> int:
    for j in range(nbits):
        if (value >> j) & 1:
            buf[pos >> 3] |= 1 << (pos & 7)
        pos += 1
    return pos


def _get_bits(data: bytes, pos: int, nbits: int) -> int:
    value = 0
    for j in range(nbits):
        value |= ((data[pos >> 3] >> (pos & 7)) & 1) << j
        pos += 1
    return value


# ---------------------------------------------------------------------------
# frame parsing
# ---------------------------------------------------------------------------

def _radiotap_body(payload: bytes) -> Optional[bytes]:
    """Strip the radiotap header; None if the prefix is not radiotap-shaped."""
    if len(payload) < 4 or payload[0] != 0:
        return None
    rt_len = payload[2] | (payload[3] << 8)
    if rt_len < 8 or rt_len > len(payload):
        return None
    return payload[rt_len:]


def parse_action_noack(record: CaptureRecord) -> Optional[BfiFrame]:
    """Decode one capture record into a BfiFrame.

    Returns None unless the record holds an Action No-ACK management frame
    whose category/action declare a VHT compressed beamforming report.
    Raises MalformedReport when such a frame is too short for the angle
    payload implied by its own MIMO control field.
    """
    body = _radiotap_body(record.payload)
    if body is None or len(body) < 24 + 2:
        return None
    fc0 = body[0]
    if fc0 & 0x03 != 0:                       # protocol version
        return None
    if (fc0 >> 2) & 0x03 != _FT_MGMT or (fc0 >> 4) & 0x0F != _SUBTYPE_ACTION_NOACK:
        return None
    if body[24] != _CATEGORY_VHT or body[25] != _VHT_ACTION_COMPRESSED_BF:
        return None

    # From here on the frame claims to be a compressed beamforming report,
    # so every shortfall is a malformed report rather than a foreign frame.
    if len(body) < 24 + 2 + 3:
        raise MalformedReport("VHT MIMO control field truncated")
    mimo = body[26] | (body[27] << 8) | (body[28] << 16)
    n_cols = (mimo & 0x7) + 1
    n_rows = ((mimo >> 3) & 0x7) + 1
    codebook_info = (mimo >> 10) & 0x1
    feedback_type = (mimo >> 11) & 0x1
    if n_rows > MAX_ANTENNAS or n_cols > MAX_ANTENNAS:
        raise MalformedReport(f"unsupported antenna setup {n_rows}x{n_cols}")
    if n_cols > n_rows:
        raise MalformedReport(f"Nc={n_cols} exceeds Nr={n_rows}")
    codebook = _CODEBOOK_BY_BITS[(feedback_type, codebook_info)]

    n_angles = angle_count(n_rows, n_cols)
    angle_bytes = (n_angles * (codebook.phi_bits + codebook.psi_bits) + 7) // 8
    report_off = 24 + 2 + 3
    need = report_off + n_cols + angle_bytes
    if len(body) < need:
        raise MalformedReport(
            f"report needs {need - report_off} bytes, frame carries "
            f"{max(0, len(body) - report_off)}")

    snr = tuple(22.0 + _to_signed8(body[report_off + i]) / 4.0
                for i in range(n_cols))
    angles = body[report_off + n_cols: need]
    pos = 0
    phi_q, psi_q = [], []
    for per_stage in angle_layout(n_rows, n_cols):
        for _ in range(per_stage):
            phi_q.append(_get_bits(angles, pos, codebook.phi_bits))
            pos += codebook.phi_bits
        for _ in range(per_stage):
            psi_q.append(_get_bits(angles, pos, codebook.psi_bits))
            pos += codebook.psi_bits
    # Any remaining bytes are later subcarriers or the MU delta-SNR tail;
    # both are skipped without interpretation.
    return BfiFrame(timestamp_us=record.timestamp_us, src_mac=bytes(body[10:16]),
                    n_rows=n_rows, n_cols=n_cols, codebook=codebook,
                    phi_q=tuple(phi_q), psi_q=tuple(psi_q), stream_snr_db=snr)


def _to_signed8(b: int) -> int:
    return b - 256 if b >= 128 else b


# ---------------------------------------------------------------------------
# frame encoding (round-trip fuzzing and synthetic captures)
# ---------------------------------------------------------------------------

_PLAIN_RADIOTAP = bytes([0, 0, 8, 0, 0, 0, 0, 0])


def encode_bfi_frame(frame: BfiFrame, dst_mac: bytes = b"\x02\0\0\0\0\x01",
                     seq: int = 0) -> bytes:
    """Build the 802.11 body of an Action No-ACK carrying the given report."""
    n_angles = angle_count(frame.n_rows, frame.n_cols)
    if len(frame.phi_q) != n_angles or len(frame.psi_q) != n_angles:
        raise ValueError(f"expected {n_angles} phi and psi angles")
    for q in frame.phi_q:
        if not 0 <= q < (1 << frame.codebook.phi_bits):
            raise QOutOfRange(f"phi_q={q}")
    for q in frame.psi_q:
        if not 0 <= q < (1 << frame.codebook.psi_bits):
            raise QOutOfRange(f"psi_q={q}")
    if len(frame.stream_snr_db) != frame.n_cols:
        raise ValueError("one SNR byte per stream required")

    hdr = bytearray()
    hdr += bytes([(_SUBTYPE_ACTION_NOACK << 4) | (_FT_MGMT << 2), 0])
    hdr += b"\x00\x00"                       # duration
    hdr += dst_mac                           # RA (the AP)
    hdr += frame.src_mac                     # TA (the beamformee)
    hdr += dst_mac                           # BSSID
    hdr += bytes([(seq << 4) & 0xFF, (seq >> 4) & 0xFF])
    hdr += bytes([_CATEGORY_VHT, _VHT_ACTION_COMPRESSED_BF])

    cb = frame.codebook
    mimo = (frame.n_cols - 1) & 0x7
    mimo |= ((frame.n_rows - 1) & 0x7) << 3
    mimo |= (1 if cb in (Codebook.SU_HI, Codebook.MU_HI) else 0) << 10
    mimo |= (1 if cb.is_mu else 0) << 11
    hdr += bytes([mimo & 0xFF, (mimo >> 8) & 0xFF, (mimo >> 16) & 0xFF])

    for snr in frame.stream_snr_db:
        q = max(-128, min(127, round((snr - 22.0) * 4)))
        hdr += bytes([q & 0xFF])
    hdr += _pack_angles(frame)
    return bytes(hdr)


def encode_capture(frame: BfiFrame, dst_mac: bytes = b"\x02\0\0\0\0\x01",
                   seq: int = 0) -> CaptureRecord:
    """Radiotap-wrap an encoded report into a CaptureRecord."""
    return CaptureRecord(timestamp_us=frame.timestamp_us,
                         payload=_PLAIN_RADIOTAP + encode_bfi_frame(frame, dst_mac, seq))


# ---------------------------------------------------------------------------
# JSONL serialization of decoded frames
# ---------------------------------------------------------------------------

def frame_to_dict(frame: BfiFrame) -> dict:
    return {
        "timestamp_us": frame.timestamp_us,
        "src_mac": mac_format(frame.src_mac),
        "n_rows": frame.n_rows,
        "n_cols": frame.n_cols,
        "codebook": frame.codebook.label,
        "phi_q": list(frame.phi_q),
        "psi_q": list(frame.psi_q),
        "stream_snr_db": list(frame.stream_snr_db),
    }


def frame_from_dict(obj: dict) -> BfiFrame:
    return BfiFrame(
        timestamp_us=int(obj["timestamp_us"]),
        src_mac=mac_parse(obj["src_mac"]),
        n_rows=int(obj["n_rows"]),
        n_cols=int(obj["n_cols"]),
        codebook=Codebook[obj["codebook"]],
        phi_q=tuple(int(q) for q in obj["phi_q"]),
        psi_q=tuple(int(q) for q in obj["psi_q"]),
        stream_snr_db=tuple(float(s) for s in obj["stream_snr_db"]),
    )
