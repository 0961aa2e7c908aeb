"""Classic pcap reading and writing.

Only the classic (libpcap) format with microsecond timestamps is supported,
in both byte orders. Nanosecond-magic and pcapng files are rejected.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Iterator

from .errors import BadMagic, Truncated

MAGIC_US = 0xA1B2C3D4
MAGIC_US_SWAPPED = 0xD4C3B2A1
MAGIC_NS = 0xA1B23C4D
MAGIC_NS_SWAPPED = 0x4D3CB2A1

LINKTYPE_IEEE802_11_RADIOTAP = 127

_GLOBAL_HDR_LEN = 24
_RECORD_HDR_LEN = 16


@dataclass(frozen=True)
class CaptureRecord:
    """One captured link-layer frame (radiotap-prefixed in monitor captures)."""

    timestamp_us: int
    payload: bytes


def read_pcap(path: str) -> Iterator[CaptureRecord]:
    """Yield CaptureRecords from a classic pcap file, in file order.

    Raises BadMagic for anything that is not a classic microsecond pcap
    (including the nanosecond variants) and Truncated when a record header
    declares more bytes than the file holds.
    """
    with open(path, "rb") as fh:
        header = fh.read(_GLOBAL_HDR_LEN)
        if len(header) < 4:
            raise BadMagic("file shorter than a pcap magic number")
        (magic,) = struct.unpack("<I", header[:4])
        if magic == MAGIC_US:
            endian = "<"
        elif magic == MAGIC_US_SWAPPED:
            endian = ">"
        elif magic in (MAGIC_NS, MAGIC_NS_SWAPPED):
            raise BadMagic("nanosecond pcap variant not supported")
        else:
            raise BadMagic(f"not a pcap file (magic 0x{magic:08x})")
        if len(header) < _GLOBAL_HDR_LEN:
            raise Truncated("pcap global header cut short")

        rec_fmt = endian + "IIII"
        while True:
            rec_hdr = fh.read(_RECORD_HDR_LEN)
            if not rec_hdr:
                return
            if len(rec_hdr) < _RECORD_HDR_LEN:
                raise Truncated("pcap record header cut short")
            ts_sec, ts_usec, incl_len, _orig_len = struct.unpack(rec_fmt, rec_hdr)
            payload = fh.read(incl_len)
            if len(payload) < incl_len:
                raise Truncated(
                    f"record declares {incl_len} bytes, file has {len(payload)}"
                )
            yield CaptureRecord(timestamp_us=ts_sec * 1_000_000 + ts_usec,
                                payload=payload)


def write_pcap(path: str, records, linktype: int = LINKTYPE_IEEE802_11_RADIOTAP,
               snaplen: int = 65535) -> None:
    """Write CaptureRecords as a little-endian classic pcap file."""
    with open(path, "wb") as fh:
        fh.write(struct.pack("<IHHiIII", MAGIC_US, 2, 4, 0, 0, snaplen, linktype))
        for rec in records:
            ts_sec, ts_usec = divmod(rec.timestamp_us, 1_000_000)
            fh.write(struct.pack("<IIII", ts_sec, ts_usec,
                                 len(rec.payload), len(rec.payload)))
            fh.write(rec.payload)
