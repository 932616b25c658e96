"""Network statistics over an aggregate traffic matrix.

``compute_stats`` works on sorted coordinate arrays: one row-grouped pass
over the entries as stored, and one column-grouped pass after a stable
argsort on the column index. ``oracle_stats`` recomputes the same fields by
plain dictionary tallies over the pair list and shares nothing with it.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import asdict, dataclass, fields
from typing import Iterable

import numpy as np

from .matrix import TrafficMatrix


@dataclass(frozen=True)
class NetStats:
    valid_packets: int = 0
    unique_links: int = 0
    unique_sources: int = 0
    unique_destinations: int = 0
    max_link_packets: int = 0
    max_source_packets: int = 0
    max_source_fanout: int = 0
    max_destination_packets: int = 0
    max_destination_fanin: int = 0
    links_with_one_packet: int = 0
    sources_with_one_packet: int = 0
    destinations_with_one_packet: int = 0
    sources_with_fanout_one: int = 0
    destinations_with_fanin_one: int = 0

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def as_dict(self) -> dict[str, int]:
        return asdict(self)

    def violations(self) -> list[str]:
        """Internal inequalities that fail for this instance (empty when consistent)."""
        s = self
        checks = [
            ("unique_links <= valid_packets", s.unique_links <= s.valid_packets),
            ("unique_sources <= unique_links", s.unique_sources <= s.unique_links),
            ("unique_destinations <= unique_links", s.unique_destinations <= s.unique_links),
            ("max_source_fanout <= unique_destinations", s.max_source_fanout <= s.unique_destinations),
            ("max_destination_fanin <= unique_sources", s.max_destination_fanin <= s.unique_sources),
            ("max_link_packets <= max_source_packets", s.max_link_packets <= s.max_source_packets),
            ("max_link_packets <= max_destination_packets", s.max_link_packets <= s.max_destination_packets),
            ("sources_with_one_packet <= sources_with_fanout_one",
             s.sources_with_one_packet <= s.sources_with_fanout_one),
            ("destinations_with_one_packet <= destinations_with_fanin_one",
             s.destinations_with_one_packet <= s.destinations_with_fanin_one),
        ]
        return [name for name, ok in checks if not ok]

    def diff(self, other: NetStats) -> dict[str, tuple[int, int]]:
        a, b = self.as_dict(), other.as_dict()
        return {k: (a[k], b[k]) for k in a if a[k] != b[k]}


def _group(keys: np.ndarray, counts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-run (entry count, count sum) for runs of equal values in sorted ``keys``."""
    starts = np.flatnonzero(np.concatenate(([True], keys[1:] != keys[:-1])))
    degree = np.diff(np.append(starts, len(keys)))
    mass = np.add.reduceat(counts, starts)
    return degree, mass


def compute_stats(m: TrafficMatrix) -> NetStats:
    if m.nnz == 0:
        return NetStats()
    counts = m.counts
    row_degree, row_mass = _group(m.rows, counts)
    order = np.argsort(m.cols, kind="stable")
    col_degree, col_mass = _group(m.cols[order], counts[order])
    return NetStats(
        valid_packets=m.mass(),
        unique_links=m.nnz,
        unique_sources=len(row_degree),
        unique_destinations=len(col_degree),
        max_link_packets=int(counts.max()),
        max_source_packets=int(row_mass.max()),
        max_source_fanout=int(row_degree.max()),
        max_destination_packets=int(col_mass.max()),
        max_destination_fanin=int(col_degree.max()),
        links_with_one_packet=int(np.count_nonzero(counts == 1)),
        sources_with_one_packet=int(np.count_nonzero(row_mass == 1)),
        destinations_with_one_packet=int(np.count_nonzero(col_mass == 1)),
        sources_with_fanout_one=int(np.count_nonzero(row_degree == 1)),
        destinations_with_fanin_one=int(np.count_nonzero(col_degree == 1)),
    )


def oracle_stats(pairs: Iterable[tuple[int, int]]) -> NetStats:
    """Brute-force reference: tally links, sources and destinations directly."""
    links = Counter()
    for src, dst in pairs:
        links[(src, dst)] += 1

    src_packets = Counter()
    dst_packets = Counter()
    src_peers: dict[int, set] = {}
    dst_peers: dict[int, set] = {}
    for (src, dst), n in links.items():
        src_packets[src] += n
        dst_packets[dst] += n
        src_peers.setdefault(src, set()).add(dst)
        dst_peers.setdefault(dst, set()).add(src)

    def biggest(values):
        return max(values, default=0)

    def how_many_equal_one(values):
        return sum(1 for v in values if v == 1)

    return NetStats(
        valid_packets=sum(links.values()),
        unique_links=len(links),
        unique_sources=len(src_packets),
        unique_destinations=len(dst_packets),
        max_link_packets=biggest(links.values()),
        max_source_packets=biggest(src_packets.values()),
        max_source_fanout=biggest(len(p) for p in src_peers.values()),
        max_destination_packets=biggest(dst_packets.values()),
        max_destination_fanin=biggest(len(p) for p in dst_peers.values()),
        links_with_one_packet=how_many_equal_one(links.values()),
        sources_with_one_packet=how_many_equal_one(src_packets.values()),
        destinations_with_one_packet=how_many_equal_one(dst_packets.values()),
        sources_with_fanout_one=how_many_equal_one(len(p) for p in src_peers.values()),
        destinations_with_fanin_one=how_many_equal_one(len(p) for p in dst_peers.values()),
    )


def format_table(stats: NetStats) -> str:
    d = stats.as_dict()
    width = max(map(len, d))
    return "\n".join(f"{name:<{width}}  {value:>20,}" for name, value in d.items())
