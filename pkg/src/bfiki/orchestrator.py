"""Victim identification and attack-window detection.

Watches the victim MAC's data traffic for destination IPs found in a
payment-service database, opens an attack window at the first match, and
closes it after an idle timeout. BFI frames are then clipped to the windows.
"""

from __future__ import annotations

import ipaddress
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple

from .frames import BfiFrame
from .pcap import CaptureRecord

DEFAULT_IDLE_TIMEOUT_S = 2.0


@dataclass(frozen=True)
class VictimProfile:
    mac: bytes
    ip_database: frozenset = field(default_factory=frozenset)
    idle_timeout_s: float = DEFAULT_IDLE_TIMEOUT_S


@dataclass(frozen=True)
class AttackWindow:
    start_us: int
    end_us: int
    trigger_ip: str


def load_ip_database(path: str) -> frozenset:
    """Read a payment-IP database: one address per line, '#' comments."""
    addresses = set()
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if line:
                addresses.add(str(ipaddress.ip_address(line)))
    return frozenset(addresses)


def detect_windows(packets: Iterable[Tuple[int, bytes, str]],
                   profile: VictimProfile,
                   pre_pad_s: float = 0.0) -> List[AttackWindow]:
    """Cluster the victim's database-matching packets into attack windows.

    A window opens at the first victim packet toward a database IP and closes
    at the last match followed by >= idle_timeout_s of silence; traffic to any
    database IP within the timeout keeps the window alive. ``pre_pad_s``
    extends each window backwards to catch typing that precedes the first
    request; padded windows are merged if they would overlap.
    """
    if profile.idle_timeout_s <= 0:
        raise ValueError("idle_timeout_s must be positive")
    db = {str(ipaddress.ip_address(ip)) for ip in profile.ip_database}
    matches = sorted(
        (ts, ip) for ts, mac, ip in packets
        if mac == profile.mac and str(ipaddress.ip_address(ip)) in db
    )
    timeout_us = int(profile.idle_timeout_s * 1e6)
    pad_us = int(pre_pad_s * 1e6)

    windows: List[AttackWindow] = []
    for ts, ip in matches:
        if windows and ts - windows[-1].end_us <= timeout_us:
            last = windows[-1]
            windows[-1] = AttackWindow(last.start_us, ts, last.trigger_ip)
        else:
            windows.append(AttackWindow(ts, ts, ip))
    if pad_us:
        padded: List[AttackWindow] = []
        for w in windows:
            start = w.start_us - pad_us
            if padded and start <= padded[-1].end_us:
                prev = padded[-1]
                padded[-1] = AttackWindow(prev.start_us, w.end_us, prev.trigger_ip)
            else:
                padded.append(AttackWindow(start, w.end_us, w.trigger_ip))
        windows = padded
    return windows


def clip_frames(frames: Sequence[BfiFrame], windows: Sequence[AttackWindow],
                mac: Optional[bytes] = None) -> List[List[BfiFrame]]:
    """Assign frames to windows (closed intervals); frames outside all
    windows, or from other MACs when ``mac`` is given, are dropped."""
    out: List[List[BfiFrame]] = [[] for _ in windows]
    for f in frames:
        if mac is not None and f.src_mac != mac:
            continue
        for i, w in enumerate(windows):
            if w.start_us <= f.timestamp_us <= w.end_us:
                out[i].append(f)
                break
    for bucket in out:
        bucket.sort(key=lambda f: f.timestamp_us)
    return out


# ---------------------------------------------------------------------------
# packet metadata extraction from monitor-mode captures
# ---------------------------------------------------------------------------

_LLC_SNAP = bytes([0xAA, 0xAA, 0x03, 0x00, 0x00, 0x00])
_ETHERTYPE_IPV4 = 0x0800
_ETHERTYPE_IPV6 = 0x86DD


def extract_ip_packets(records: Iterable[CaptureRecord]):
    """Yield (timestamp_us, src_mac, dst_ip) for decodable 802.11 data frames."""
    for rec in records:
        meta = _data_frame_meta(rec)
        if meta is not None:
            yield meta


def _data_frame_meta(rec: CaptureRecord):
    payload = rec.payload
    if len(payload) < 4 or payload[0] != 0:
        return None
    rt_len = payload[2] | (payload[3] << 8)
    if rt_len < 8 or rt_len > len(payload):
        return None
    body = payload[rt_len:]
    if len(body) < 24:
        return None
    fc0, fc1 = body[0], body[1]
    if fc0 & 0x03 != 0 or (fc0 >> 2) & 0x03 != 2:     # data frames only
        return None
    to_ds, from_ds = fc1 & 0x01, (fc1 >> 1) & 0x01
    if from_ds and to_ds:                              # 4-address WDS: skip
        return None
    src = bytes(body[16:22]) if (from_ds and not to_ds) else bytes(body[10:16])
    off = 24
    if (fc0 >> 4) & 0x08:                              # QoS data: +2 bytes
        off += 2
    if body[off:off + 6] != _LLC_SNAP or len(body) < off + 8:
        return None
    ethertype = (body[off + 6] << 8) | body[off + 7]
    ip = body[off + 8:]
    if ethertype == _ETHERTYPE_IPV4:
        if len(ip) < 20 or ip[0] >> 4 != 4:
            return None
        dst = str(ipaddress.IPv4Address(bytes(ip[16:20])))
    elif ethertype == _ETHERTYPE_IPV6:
        if len(ip) < 40 or ip[0] >> 4 != 6:
            return None
        dst = str(ipaddress.IPv6Address(bytes(ip[24:40])))
    else:
        return None
    return rec.timestamp_us, src, dst


def encode_data_frame(timestamp_us: int, src_mac: bytes, dst_ip: str,
                      bssid: bytes = b"\x02\0\0\0\0\x01") -> CaptureRecord:
    """Build a radiotap-wrapped 802.11 data frame toward dst_ip (fixtures)."""
    addr = ipaddress.ip_address(dst_ip)
    body = bytearray()
    body += bytes([0x08, 0x01])               # data, to-DS
    body += b"\x00\x00"
    body += bssid                             # addr1 = BSSID
    body += src_mac                           # addr2 = SA
    body += b"\x02\0\0\0\0\x02"               # addr3 = DA
    body += b"\x00\x00"
    body += _LLC_SNAP
    if addr.version == 4:
        body += bytes([_ETHERTYPE_IPV4 >> 8, _ETHERTYPE_IPV4 & 0xFF])
        ip = bytearray(20)
        ip[0] = 0x45
        ip[2:4] = (28).to_bytes(2, "big")
        ip[8] = 64
        ip[9] = 17                            # UDP
        ip[12:16] = bytes([10, 0, 0, 2])
        ip[16:20] = addr.packed
        body += ip + bytes(8)
    else:
        body += bytes([_ETHERTYPE_IPV6 >> 8, _ETHERTYPE_IPV6 & 0xFF])
        ip = bytearray(40)
        ip[0] = 0x60
        ip[4:6] = (8).to_bytes(2, "big")
        ip[6] = 17
        ip[7] = 64
        ip[8:24] = ipaddress.ip_address("fd00::2").packed
        ip[24:40] = addr.packed
        body += ip + bytes(8)
    radiotap = bytes([0, 0, 8, 0, 0, 0, 0, 0])
    return CaptureRecord(timestamp_us=timestamp_us, payload=radiotap + bytes(body))
