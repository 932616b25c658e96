"""Streaming reader for classic pcap captures and IPv4 address extraction.

Only the classic (libpcap) container is handled; pcapng is rejected at the
magic-number check. Records are read one at a time, so memory use is bounded
by the capture's snap length rather than by file size.
"""

from __future__ import annotations

import logging
import struct
from array import array
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Callable, Iterable, Iterator, NamedTuple

import numpy as np

log = logging.getLogger(__name__)

LINKTYPE_ETHERNET = 1
LINKTYPE_RAW = 101
SUPPORTED_LINK_TYPES = frozenset({LINKTYPE_ETHERNET, LINKTYPE_RAW})

ETHERTYPE_IPV4 = 0x0800
VLAN_ETHERTYPES = (0x8100, 0x88A8)

# magic as read in little-endian byte order -> (endianness, resolution)
_MAGICS = {
    0xA1B2C3D4: ("little", "microsecond"),
    0xD4C3B2A1: ("big", "microsecond"),
    0xA1B23C4D: ("little", "nanosecond"),
    0x4D3CB2A1: ("big", "nanosecond"),
}
_FRACTION_LIMIT = {"microsecond": 10**6, "nanosecond": 10**9}

GLOBAL_HEADER_LEN = 24
RECORD_HEADER_LEN = 16

_U32 = "I" if array("I").itemsize == 4 else "L"


class PcapError(Exception):
    """Base class for capture-format errors."""


class UnknownMagic(PcapError):
    pass


class TruncatedHeader(PcapError):
    pass


class UnsupportedLinkType(PcapError):
    pass


class CorruptRecord(PcapError):
    """A record that cannot be trusted; the rest of the file is abandoned."""


class TruncatedRecord(CorruptRecord):
    pass


class OversizedRecord(CorruptRecord):
    pass


class TruncatedPacket(Exception):
    """Payload too short for the headers needed to locate the IPv4 addresses."""


class IngestError(Exception):
    pass


@dataclass(frozen=True)
class CaptureHeader:
    endianness: str
    timestamp_resolution: str
    version_major: int
    version_minor: int
    snap_length: int
    link_type: int

    @property
    def _prefix(self) -> str:
        return "<" if self.endianness == "little" else ">"


@dataclass(frozen=True, slots=True)
class PacketRecord:
    ts_seconds: int
    ts_fraction: int
    captured_length: int
    original_length: int
    payload: bytes


class IpPair(NamedTuple):
    """Source and destination IPv4 addresses as big-endian 32-bit integers."""

    src: int
    dst: int


@dataclass
class IngestReport:
    packets_read: int = 0
    pairs_extracted: int = 0
    skipped_non_ipv4: int = 0
    skipped_truncated: int = 0
    files_processed: int = 0
    files_failed: int = 0
    files_truncated: int = 0

    def as_dict(self) -> dict[str, int]:
        return {
            "packets_read": self.packets_read,
            "pairs_extracted": self.pairs_extracted,
            "skipped_non_ipv4": self.skipped_non_ipv4,
            "skipped_truncated": self.skipped_truncated,
            "files_processed": self.files_processed,
            "files_failed": self.files_failed,
            "files_truncated": self.files_truncated,
        }


def open_capture(source: BinaryIO) -> CaptureHeader:
    """Read and validate the 24-byte global header.

    Leaves ``source`` positioned at the first record.
    """
    raw = source.read(GLOBAL_HEADER_LEN)
    if len(raw) < 4:
        raise TruncatedHeader(f"capture header needs {GLOBAL_HEADER_LEN} bytes, got {len(raw)}")
    (magic,) = struct.unpack("<I", raw[:4])
    try:
        endianness, resolution = _MAGICS[magic]
    except KeyError:
        raise UnknownMagic(f"unrecognised capture magic {raw[:4].hex()}") from None
    if len(raw) < GLOBAL_HEADER_LEN:
        raise TruncatedHeader(f"capture header needs {GLOBAL_HEADER_LEN} bytes, got {len(raw)}")
    prefix = "<" if endianness == "little" else ">"
    major, minor, _zone, _sigfigs, snaplen, linktype = struct.unpack(prefix + "HHiIII", raw[4:])
    if linktype not in SUPPORTED_LINK_TYPES:
        raise UnsupportedLinkType(f"link type {linktype} not supported (expected 1 or 101)")
    if snaplen == 0:
        raise PcapError("snap length is zero")
    return CaptureHeader(endianness, resolution, major, minor, snaplen, linktype)


def next_packet(source: BinaryIO, header: CaptureHeader) -> PacketRecord | None:
    """Return the next record, or None at a clean end of stream."""
    raw = source.read(RECORD_HEADER_LEN)
    if not raw:
        return None
    if len(raw) < RECORD_HEADER_LEN:
        raise TruncatedRecord(f"record header cut short ({len(raw)} of {RECORD_HEADER_LEN} bytes)")
    ts_sec, ts_frac, incl, orig = struct.unpack(header._prefix + "IIII", raw)
    if incl > header.snap_length:
        raise OversizedRecord(f"captured length {incl} exceeds snap length {header.snap_length}")
    if incl > orig:
        raise CorruptRecord(f"captured length {incl} exceeds original length {orig}")
    if ts_frac >= _FRACTION_LIMIT[header.timestamp_resolution]:
        raise CorruptRecord(f"timestamp fraction {ts_frac} out of range")
    payload = source.read(incl)
    if len(payload) < incl:
        raise TruncatedRecord(f"record payload cut short ({len(payload)} of {incl} bytes)")
    return PacketRecord(ts_sec, ts_frac, incl, orig, payload)


def iter_packets(source: BinaryIO, header: CaptureHeader) -> Iterator[PacketRecord]:
    while (record := next_packet(source, header)) is not None:
        yield record


def extract_ip_pair(record: PacketRecord | bytes, link_type: int) -> IpPair | None:
    """Pull the IPv4 source/destination out of a link-layer frame.

    Returns None for frames that do not carry IPv4. Raises TruncatedPacket
    when the frame is too short to reach the address fields.
    """
    data = record.payload if isinstance(record, PacketRecord) else record
    if link_type == LINKTYPE_ETHERNET:
        offset = 12
        if len(data) < offset + 2:
            raise TruncatedPacket("ethernet header")
        ethertype = (data[offset] << 8) | data[offset + 1]
        while ethertype in VLAN_ETHERTYPES:
            offset += 4
            if len(data) < offset + 2:
                raise TruncatedPacket("vlan tag")
            ethertype = (data[offset] << 8) | data[offset + 1]
        if ethertype != ETHERTYPE_IPV4:
            return None
        ip = offset + 2
    elif link_type == LINKTYPE_RAW:
        if not data:
            raise TruncatedPacket("empty raw-ip frame")
        if data[0] >> 4 != 4:
            return None
        ip = 0
    else:
        raise UnsupportedLinkType(f"link type {link_type} not supported")
    if len(data) < ip + 20:
        raise TruncatedPacket("ipv4 header")
    src, dst = struct.unpack_from(">II", data, ip + 12)
    return IpPair(src, dst)


_READ_BLOCK = 1 << 20


def _scan_pairs(fh: BinaryIO, header: CaptureHeader, report: IngestReport) -> Iterator[tuple[int, int]]:
    """Block-buffered equivalent of ``next_packet`` + ``extract_ip_pair``.

    Holds at most one read block plus one record in memory.
    """
    rec = struct.Struct(header._prefix + "IIII")
    addrs = struct.Struct(">II").unpack_from
    unpack_rec = rec.unpack_from
    snap = header.snap_length
    frac_limit = _FRACTION_LIMIT[header.timestamp_resolution]
    ethernet = header.link_type == LINKTYPE_ETHERNET
    buf = b""
    pos = 0
    while True:
        if len(buf) - pos < RECORD_HEADER_LEN:
            buf = buf[pos:] + fh.read(_READ_BLOCK)
            pos = 0
            if len(buf) < RECORD_HEADER_LEN:
                if buf:
                    raise TruncatedRecord(f"record header cut short ({len(buf)} of {RECORD_HEADER_LEN} bytes)")
                return
        _sec, frac, incl, orig = unpack_rec(buf, pos)
        if incl > snap:
            raise OversizedRecord(f"captured length {incl} exceeds snap length {snap}")
        if incl > orig:
            raise CorruptRecord(f"captured length {incl} exceeds original length {orig}")
        if frac >= frac_limit:
            raise CorruptRecord(f"timestamp fraction {frac} out of range")
        p = pos + RECORD_HEADER_LEN
        end = p + incl
        if end > len(buf):
            buf = buf[pos:] + fh.read(max(_READ_BLOCK, end - len(buf)))
            end -= pos
            p -= pos
            pos = 0
            if end > len(buf):
                raise TruncatedRecord(f"record payload cut short ({len(buf) - p} of {incl} bytes)")
        pos = end
        report.packets_read += 1

        if ethernet:
            off = p + 12
            if end < off + 2:
                report.skipped_truncated += 1
                continue
            ethertype = (buf[off] << 8) | buf[off + 1]
            while ethertype == 0x8100 or ethertype == 0x88A8:
                off += 4
                if end < off + 2:
                    ethertype = -1
                    break
                ethertype = (buf[off] << 8) | buf[off + 1]
            if ethertype == -1:
                report.skipped_truncated += 1
                continue
            if ethertype != ETHERTYPE_IPV4:
                report.skipped_non_ipv4 += 1
                continue
            ip = off + 2
        else:
            if incl == 0:
                report.skipped_truncated += 1
                continue
            if buf[p] >> 4 != 4:
                report.skipped_non_ipv4 += 1
                continue
            ip = p
        if end < ip + 20:
            report.skipped_truncated += 1
            continue
        report.pairs_extracted += 1
        yield addrs(buf, ip + 12)


def iter_pairs(paths: Iterable[str | Path], report: IngestReport | None = None) -> Iterator[IpPair]:
    """Yield IpPairs from each capture in order, updating ``report`` as it goes.

    Files that cannot be opened are logged and skipped; a corrupt record ends
    its file early but keeps everything read before it.
    """
    for src, dst in _iter_raw_pairs(paths, report):
        yield IpPair(src, dst)


def _iter_raw_pairs(paths: Iterable[str | Path], report: IngestReport | None) -> Iterator[tuple[int, int]]:
    paths = list(paths)
    if not paths:
        raise IngestError("no input captures given")
    if report is None:
        report = IngestReport()
    for path in paths:
        try:
            fh = open(path, "rb")
        except OSError as exc:
            log.warning("skipping %s: %s", path, exc.strerror or exc)
            report.files_failed += 1
            continue
        with fh:
            try:
                header = open_capture(fh)
            except PcapError as exc:
                log.warning("skipping %s: %s", path, exc)
                report.files_failed += 1
                continue
            report.files_processed += 1
            try:
                yield from _scan_pairs(fh, header, report)
            except CorruptRecord as exc:
                log.warning("%s: stopping after %s: %s", path, type(exc).__name__, exc)
                report.files_truncated += 1
    if report.files_processed == 0:
        raise IngestError("none of the input captures could be opened")


def ingest_files(paths: Iterable[str | Path], sink: Callable[[IpPair], object]) -> IngestReport:
    """Feed every extracted pair to ``sink`` in file order, then packet order."""
    report = IngestReport()
    for pair in iter_pairs(paths, report):
        sink(pair)
    return report


def iter_pair_batches(
    paths: Iterable[str | Path], report: IngestReport, batch_size: int
) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Group the pair stream into (src, dst) uint32 arrays of ``batch_size``.

    The last batch may be shorter. Empty batches are never yielded.
    """
    src = array(_U32)
    dst = array(_U32)
    for s, d in _iter_raw_pairs(paths, report):
        src.append(s)
        dst.append(d)
        if len(src) == batch_size:
            yield np.frombuffer(src, dtype=np.uint32).copy(), np.frombuffer(dst, dtype=np.uint32).copy()
            src = array(_U32)
            dst = array(_U32)
    if src:
        yield np.frombuffer(src, dtype=np.uint32).copy(), np.frombuffer(dst, dtype=np.uint32).copy()
