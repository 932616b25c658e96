"""End-to-end runs: captures -> anonymized windows -> archives -> statistics.

Windows are cut from the raw pair stream by a single reader, anonymized and
tallied by a pool of workers, and handed to the writer strictly in window
order. At most ``2 * workers`` windows are in flight, so a slow writer
throttles the reader. Any worker count gives the single-worker output
byte for byte.
"""

from __future__ import annotations

import json
import logging
import time
import warnings
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator, TypeVar

import numpy as np

from .anonymize import Anonymizer
from .matrix import (
    EmptyInput,
    TrafficMatrix,
    WindowConfig,
    accumulate,
    iter_windows,
    sum_matrices,
    tally_window,
)
from .pcap import IngestReport, iter_pair_batches, iter_pairs
from .stats import NetStats, compute_stats, oracle_stats
from .store import FORMAT_VERSION, NonContiguousWindows, StoreLayout, list_members, read_group, write_group

log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"

T = TypeVar("T")
R = TypeVar("R")


class _ArrayPair:
    """Raw (src, dst) columns; sliceable so iter_windows can cut them."""

    __slots__ = ("src", "dst")

    def __init__(self, src: np.ndarray, dst: np.ndarray):
        self.src = src
        self.dst = dst

    def __len__(self) -> int:
        return len(self.src)

    def __getitem__(self, index: slice) -> _ArrayPair:
        return _ArrayPair(self.src[index], self.dst[index])

    @staticmethod
    def concat(parts: list[_ArrayPair]) -> _ArrayPair:
        if len(parts) == 1:
            return parts[0]
        return _ArrayPair(np.concatenate([p.src for p in parts]), np.concatenate([p.dst for p in parts]))


def ordered_map(fn: Callable[[T], R], items: Iterable[T], workers: int) -> Iterator[R]:
    """Like ``map`` but fanned out over threads, with bounded look-ahead."""
    if workers <= 1:
        yield from map(fn, items)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        pending = deque()
        for item in items:
            pending.append(pool.submit(fn, item))
            if len(pending) >= 2 * workers:
                yield pending.popleft().result()
        while pending:
            yield pending.popleft().result()


@dataclass
class ProcessResult:
    report: IngestReport
    archives: list[Path]
    matrix_count: int
    elapsed: float
    manifest: Path | None = None

    @property
    def packets_per_second(self) -> float:
        return self.report.packets_read / self.elapsed if self.elapsed > 0 else float("inf")


def plan_layout(n_pairs: int, window: int, per_tar: int) -> tuple[int, list[int]]:
    """Matrix count and per-archive member counts for a run of ``n_pairs``."""
    n_matrices = -(-n_pairs // window)
    sizes = [per_tar] * (n_matrices // per_tar)
    if n_matrices % per_tar:
        sizes.append(n_matrices % per_tar)
    return n_matrices, sizes


def window_matrices(
    paths: Iterable[str | Path],
    anonymizer: Anonymizer,
    window: int,
    report: IngestReport,
    workers: int = 1,
    progress_every: int = 1 << 20,
) -> Iterator[TrafficMatrix]:
    """Stream window matrices for the given captures in window order."""
    batch = min(window, 1 << 16)

    def windows():
        chunks = (_ArrayPair(s, d) for s, d in iter_pair_batches(paths, report, batch))
        next_mark = progress_every
        for index, w in enumerate(iter_windows(chunks, window)):
            if progress_every and report.packets_read >= next_mark:
                log.info("read %d packets, %d windows", report.packets_read, index)
                next_mark = (report.packets_read // progress_every + 1) * progress_every
            yield index, w

    def build(job: tuple[int, _ArrayPair]) -> TrafficMatrix:
        index, w = job
        return tally_window(anonymizer.anonymize_batch(w.src, w.dst), index)

    yield from ordered_map(build, windows(), workers)


def write_manifest(path: Path, *, window: int, per_tar: int, matrix_count: int,
                   fingerprint: str, archives: list[Path]) -> None:
    doc = {
        "format": "TMX1",
        "format_version": FORMAT_VERSION,
        "window_size": window,
        "matrices_per_tar": per_tar,
        "matrix_count": matrix_count,
        "key_fingerprint": fingerprint,
        "archives": [p.name for p in archives],
    }
    path.write_text(json.dumps(doc, indent=2) + "\n")


def process(
    paths: list[str | Path],
    anonymizer: Anonymizer,
    window: WindowConfig | int,
    layout: StoreLayout,
    workers: int = 1,
    progress_every: int = 1 << 20,
) -> ProcessResult:
    """Ingest, anonymize, window and archive. Removes its outputs on failure."""
    size = window if isinstance(window, int) else window.packets_per_window
    if size < 1:
        raise ValueError("window size must be at least 1")
    report = IngestReport()
    written: list[Path] = []
    counted = [0]
    manifest = layout.output_directory / MANIFEST_NAME
    started = time.perf_counter()

    def counting(ms):
        for m in ms:
            counted[0] += 1
            yield m

    try:
        matrices = window_matrices(paths, anonymizer, size, report, workers, progress_every)
        try:
            write_group(counting(matrices), layout, written)
        except ValueError as exc:
            if counted[0] == 0:
                raise EmptyInput("no IPv4 packets found in the input captures") from exc
            raise
        write_manifest(manifest, window=size, per_tar=layout.matrices_per_tar, matrix_count=counted[0],
                       fingerprint=anonymizer.key_fingerprint, archives=written)
    except BaseException:
        for p in [*written, manifest]:
            p.unlink(missing_ok=True)
        raise
    elapsed = time.perf_counter() - started
    return ProcessResult(report, list(written), counted[0], elapsed, manifest)


def resolve_archives(inputs: Iterable[str | Path]) -> tuple[list[Path], dict]:
    """Expand directories to their ``*.tar`` files and pick up any manifest."""
    archives: list[Path] = []
    manifest: dict = {}
    for item in inputs:
        item = Path(item)
        folder = item if item.is_dir() else item.parent
        if item.is_dir():
            archives.extend(sorted(item.glob("*.tar")))
        else:
            archives.append(item)
        candidate = folder / MANIFEST_NAME
        if not manifest and candidate.is_file():
            manifest = json.loads(candidate.read_text())
    return archives, manifest


def aggregate(archives: list[Path], workers: int = 1) -> tuple[TrafficMatrix, int]:
    """Sum every stored matrix; returns (aggregate, matrix count)."""
    if not archives:
        raise EmptyInput("no archives to read")
    if workers <= 1:
        count = [0]

        def counting():
            for m in read_group(archives):
                count[0] += 1
                yield m

        return sum_matrices(counting()), count[0]

    members = list_members(archives)
    for (a, *_), (b, *_) in zip(members, members[1:]):
        if b != a + 1:
            warnings.warn(f"window {b} follows {a}", NonContiguousWindows, stacklevel=2)

    def partial(path: Path) -> tuple[TrafficMatrix, int]:
        ms = list(read_group([path]))
        return sum_matrices(ms) if ms else TrafficMatrix.empty(), len(ms)

    parts = list(ordered_map(partial, archives, workers))
    if not any(n for _, n in parts):
        raise EmptyInput("archives hold no matrices")
    return sum_matrices(m for m, _ in parts), sum(n for _, n in parts)


def stats_report(stats: NetStats, *, window_size, matrix_count: int, key_fingerprint) -> str:
    doc = stats.as_dict()
    doc["meta"] = {
        "window_size": window_size,
        "matrix_count": matrix_count,
        "key_fingerprint": key_fingerprint,
    }
    return json.dumps(doc, indent=2) + "\n"


@dataclass
class VerifyResult:
    pipeline: NetStats
    oracle: NetStats
    report: IngestReport = field(default_factory=IngestReport)

    @property
    def ok(self) -> bool:
        return self.pipeline == self.oracle

    def diff(self) -> dict[str, tuple[int, int]]:
        return self.pipeline.diff(self.oracle)


def verify(
    paths: list[str | Path],
    anonymizer: Anonymizer,
    window: int,
    archives: list[Path] | None = None,
) -> VerifyResult:
    """Pipeline statistics against the brute-force oracle on the same captures.

    With ``archives`` the pipeline side is read back from disk; otherwise the
    windows are rebuilt in memory.
    """
    report = IngestReport()
    raw = list(iter_pairs(paths, report))
    anonymized = anonymizer.anonymize_pairs(raw) if raw else None
    expected = oracle_stats(anonymized.pairs()) if anonymized is not None else oracle_stats([])

    if archives is not None:
        total, _ = aggregate(archives)
    elif anonymized is not None:
        total = sum_matrices(accumulate([anonymized], window))
    else:
        total = TrafficMatrix.empty()
    return VerifyResult(compute_stats(total), expected, report)
