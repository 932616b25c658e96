"""TMX matrix files and their grouping into reproducible tar archives.

TMX layout (all fields little-endian)::

    offset  size  field
    0       4     magic "TMX1"
    4       4     format_version (u32) = 1
    8       4     flags (u32) = 0
    12      4     reserved (u32) = 0
    16      8     window_index (u64), 0xFFFFFFFFFFFFFFFF for an aggregate
    24      8     nnz (u64)
    32      16*n  nnz triples (row u32, col u32, count u64), ascending (row, col)

A file is exactly ``32 + 16 * nnz`` bytes long.
"""

from __future__ import annotations

import io
import logging
import os
import re
import struct
import tarfile
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .matrix import InvalidMatrix, TrafficMatrix

log = logging.getLogger(__name__)

MAGIC = b"TMX1"
FORMAT_VERSION = 1
HEADER = struct.Struct("<4sIIIQQ")
HEADER_LEN = HEADER.size
TRIPLE = np.dtype([("row", "<u4"), ("col", "<u4"), ("count", "<u8")])
AGGREGATE_INDEX = 0xFFFFFFFFFFFFFFFF
DEFAULT_PER_TAR = 1 << 6

_MEMBER_RE = re.compile(r"(?:.*/)?tm_(\d+)\.tmx$")


class MatrixFormatError(ValueError):
    pass


class BadMagic(MatrixFormatError):
    pass


class UnsupportedVersion(MatrixFormatError):
    pass


class Malformed(MatrixFormatError):
    pass


class MemberError(MatrixFormatError):
    """A TMX member inside an archive failed to decode."""

    def __init__(self, archive: str | Path, member: str, cause: Exception):
        super().__init__(f"{archive}: {member}: {cause}")
        self.archive = str(archive)
        self.member = member
        self.cause = cause


class NonContiguousWindows(UserWarning):
    pass


assert HEADER_LEN == 32 and TRIPLE.itemsize == 16


def write_matrix(m: TrafficMatrix) -> bytes:
    index = AGGREGATE_INDEX if m.window_index is None else m.window_index
    header = HEADER.pack(MAGIC, FORMAT_VERSION, 0, 0, index, m.nnz)
    body = np.empty(m.nnz, dtype=TRIPLE)
    body["row"] = m.rows
    body["col"] = m.cols
    body["count"] = m.counts
    return header + body.tobytes()


def read_header(data: bytes) -> tuple[int | None, int]:
    """Decode and check a TMX header; returns (window_index, nnz)."""
    if len(data) < HEADER_LEN:
        if data[:4] != MAGIC[: len(data[:4])]:
            raise BadMagic(f"bad magic {data[:4]!r}")
        raise Malformed(f"header truncated at {len(data)} bytes")
    magic, version, flags, reserved, index, nnz = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise BadMagic(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise UnsupportedVersion(f"format version {version}")
    if flags or reserved:
        raise Malformed("nonzero flags/reserved fields")
    return (None if index == AGGREGATE_INDEX else index), nnz


def read_matrix(data: bytes) -> TrafficMatrix:
    index, nnz = read_header(data)
    expected = HEADER_LEN + TRIPLE.itemsize * nnz
    if len(data) < expected:
        raise Malformed(f"header claims {nnz} entries but only {len(data) - HEADER_LEN} body bytes follow")
    if len(data) > expected:
        raise Malformed(f"{len(data) - expected} trailing bytes after {nnz} entries")
    body = np.frombuffer(data, dtype=TRIPLE, offset=HEADER_LEN, count=nnz)
    m = TrafficMatrix(
        body["row"].astype(np.uint32),
        body["col"].astype(np.uint32),
        body["count"].astype(np.uint64),
        index,
    )
    try:
        m.validate()
    except InvalidMatrix as exc:
        raise Malformed(str(exc)) from None
    return m


def member_name(window_index: int) -> str:
    return f"tm_{window_index:08d}.tmx"


def archive_name(first: int, last: int) -> str:
    return f"tm_{first:08d}_{last:08d}.tar"


@dataclass(frozen=True)
class StoreLayout:
    output_directory: Path
    matrices_per_tar: int = DEFAULT_PER_TAR

    def __post_init__(self):
        if self.matrices_per_tar < 1:
            raise ValueError("matrices_per_tar must be at least 1")
        object.__setattr__(self, "output_directory", Path(self.output_directory))


def _tarinfo(name: str, size: int) -> tarfile.TarInfo:
    info = tarfile.TarInfo(name)
    info.size = size
    info.mtime = 0
    info.mode = 0o644
    info.uid = info.gid = 0
    info.uname = info.gname = ""
    info.type = tarfile.REGTYPE
    return info


def _write_tar(path: Path, group: list[TrafficMatrix]) -> None:
    with open(path, "wb") as fh, tarfile.open(fileobj=fh, mode="w", format=tarfile.USTAR_FORMAT) as tar:
        for m in group:
            data = write_matrix(m)
            tar.addfile(_tarinfo(member_name(m.window_index), len(data)), io.BytesIO(data))


def write_group(
    matrices: Iterable[TrafficMatrix], layout: StoreLayout, written: list[Path] | None = None
) -> list[Path]:
    """Write window matrices into tar archives of ``layout.matrices_per_tar``.

    Input is consumed lazily, so a generator keeps only one archive's worth
    of matrices in memory. Paths are appended to ``written`` as each archive
    lands, which lets callers clean up after a failure partway through.
    """
    out_dir = layout.output_directory
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = [] if written is None else written
    start = len(paths)
    group: list[TrafficMatrix] = []
    last_index = -1

    def flush():
        final = out_dir / archive_name(group[0].window_index, group[-1].window_index)
        partial = final.with_name(final.name + ".partial")
        paths.append(partial)
        _write_tar(partial, group)
        os.replace(partial, final)
        paths[-1] = final
        group.clear()

    for m in matrices:
        if m.window_index is None:
            raise ValueError("aggregate matrices are not stored in window archives")
        if m.window_index <= last_index:
            raise ValueError("matrices must arrive in increasing window order")
        last_index = m.window_index
        group.append(m)
        if len(group) == layout.matrices_per_tar:
            flush()
    if group:
        flush()
    if len(paths) == start:
        raise ValueError("no matrices to write")
    return paths[start:]


def _order_key(tar: tarfile.TarFile, info: tarfile.TarInfo) -> int | None:
    match = _MEMBER_RE.match(info.name)
    if match:
        return int(match.group(1))
    fh = tar.extractfile(info)
    try:
        index, _ = read_header(fh.read(HEADER_LEN))
    except MatrixFormatError:
        return None
    return index


def list_members(paths: Iterable[str | Path]) -> list[tuple[int, Path, str]]:
    """Index every TMX member across archives as (window_index, archive, name), sorted."""
    found = []
    for path in paths:
        path = Path(path)
        with tarfile.open(path, mode="r:") as tar:
            for info in tar.getmembers():
                if not info.isfile():
                    continue
                key = _order_key(tar, info)
                if key is None:
                    raise MemberError(path, info.name, Malformed("cannot determine window index"))
                found.append((key, path, info.name))
    found.sort(key=lambda t: (t[0], str(t[1]), t[2]))
    return found


def read_group(paths: Iterable[str | Path]) -> Iterator[TrafficMatrix]:
    """Yield stored matrices in window order across all archives.

    Archives may be given in any order. One member is held in memory at a
    time. Gaps or repeats in the window sequence raise a
    NonContiguousWindows warning.
    """
    members = list_members(paths)
    tar = None
    open_path = None
    previous = None
    try:
        for index, path, name in members:
            if path != open_path:
                if tar is not None:
                    tar.close()
                tar = tarfile.open(path, mode="r:")
                open_path = path
            data = tar.extractfile(name).read()
            try:
                m = read_matrix(data)
                if m.window_index != index:
                    raise Malformed(f"header window {m.window_index} disagrees with member name")
            except MatrixFormatError as exc:
                raise MemberError(path, name, exc) from exc
            if previous is not None and index != previous + 1:
                warnings.warn(f"window {index} follows {previous}", NonContiguousWindows, stacklevel=2)
            previous = index
            yield m
    finally:
        if tar is not None:
            tar.close()
