"""Seeded synthetic darknet-style traffic, written out as classic pcap.

Randomness comes from SplitMix64 (Steele, Lea & Flood; Vigna's reference
code). Output k of a stream seeded with ``s`` is ``mix(s + (k + 1) * GAMMA)``,
so the whole stream is computed in one vectorized step. Reference outputs for
seed 42: ``0xbdd732262feb6e95``, ``0x28efe333b266f103``, ``0x47526757130f9f52``.

Streams used by :func:`generate_pairs` (all seeded from ``config.seed``):

* address pool: seed ^ POOL_SALT, top 32 bits of each output, first-seen
  distinct values; the first ``n_sources`` are sources, the rest destinations
* pair draws: seed itself; output 2i picks the source of packet i and
  output 2i+1 its destination, via ``(x >> 11) * 2**-53`` pushed through the
  Zipf inverse CDF
* noise positions (pcap writer only): seed ^ NOISE_SALT
"""

from __future__ import annotations

import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .pcap import LINKTYPE_ETHERNET, LINKTYPE_RAW, IpPair

GAMMA = 0x9E3779B97F4A7C15
POOL_SALT = 0x5EEDADD50FA1100C
NOISE_SALT = 0xA7B0_0015_E000_0001
_M64 = (1 << 64) - 1

LINK_TYPES = {"ethernet": LINKTYPE_ETHERNET, "raw_ip": LINKTYPE_RAW}
SNAPLEN = 65535

_SRC_MAC = bytes.fromhex("020000000001")
_DST_MAC = bytes.fromhex("020000000002")


class SplitMix64:
    """Scalar SplitMix64; the vectorized :func:`splitmix64` must agree with it."""

    def __init__(self, seed: int):
        self.state = seed & _M64

    def next(self) -> int:
        self.state = (self.state + GAMMA) & _M64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _M64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _M64
        return z ^ (z >> 31)


def splitmix64(seed: int, count: int, start: int = 0) -> np.ndarray:
    """Outputs ``start .. start + count - 1`` of the SplitMix64 stream for ``seed``."""
    k = np.arange(start + 1, start + count + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = np.uint64(seed & _M64) + k * np.uint64(GAMMA)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def unit_floats(bits: np.ndarray) -> np.ndarray:
    """Map 64-bit outputs to doubles in [0, 1) using the top 53 bits."""
    return (bits >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))


def zipf_cdf(n: int, exponent: float) -> np.ndarray:
    weights = np.arange(1, n + 1, dtype=np.float64) ** -float(exponent)
    cdf = np.cumsum(weights)
    return cdf / cdf[-1]


def zipf_indices(u: np.ndarray, n: int, exponent: float) -> np.ndarray:
    """Rank index in [0, n) for each uniform draw; rank 0 is the most popular."""
    if n == 1:
        return np.zeros(len(u), dtype=np.int64)
    idx = np.searchsorted(zipf_cdf(n, exponent), u, side="right")
    return np.minimum(idx, n - 1)


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 42
    n_packets: int = 1 << 13
    n_sources: int = 1 << 10
    n_destinations: int = 1 << 12
    source_exponent: float = 1.2
    destination_exponent: float = 1.0
    link_type: str = "ethernet"
    timestamp_start: int = 1_700_000_000
    inter_packet_micros: int = 1000
    noise_fraction: float = 0.0

    def __post_init__(self):
        if self.n_sources < 1 or self.n_destinations < 1:
            raise ValueError("address pools need at least one address each")
        if self.n_sources + self.n_destinations > 1 << 32:
            raise ValueError("address pools exceed the IPv4 space")
        if self.n_packets < 0:
            raise ValueError("n_packets must be nonnegative")
        if self.source_exponent < 0 or self.destination_exponent < 0:
            raise ValueError("Zipf exponents must be nonnegative")
        if self.link_type not in LINK_TYPES:
            raise ValueError(f"link_type must be one of {sorted(LINK_TYPES)}")
        if not 0.0 <= self.noise_fraction < 1.0:
            raise ValueError("noise_fraction must lie in [0, 1)")

    def as_dict(self) -> dict:
        return asdict(self)


def address_pools(config: SynthConfig) -> tuple[np.ndarray, np.ndarray]:
    """Disjoint source and destination pools, fully determined by the seed."""
    need = config.n_sources + config.n_destinations
    seen: dict[int, None] = {}
    drawn = 0
    while len(seen) < need:
        batch = max(2 * (need - len(seen)), 1024)
        values = splitmix64(config.seed ^ POOL_SALT, batch, start=drawn) >> np.uint64(32)
        drawn += batch
        for v in values.tolist():
            seen.setdefault(v)
            if len(seen) == need:
                break
    pool = np.fromiter(seen, dtype=np.uint32, count=need)
    return pool[: config.n_sources], pool[config.n_sources:]


def generate_pair_arrays(config: SynthConfig) -> tuple[np.ndarray, np.ndarray]:
    sources, destinations = address_pools(config)
    n = config.n_packets
    draws = unit_floats(splitmix64(config.seed, 2 * n))
    src = sources[zipf_indices(draws[0::2], len(sources), config.source_exponent)]
    dst = destinations[zipf_indices(draws[1::2], len(destinations), config.destination_exponent)]
    return src, dst


def generate_pairs(config: SynthConfig) -> list[IpPair]:
    src, dst = generate_pair_arrays(config)
    return [IpPair(s, d) for s, d in zip(src.tolist(), dst.tolist())]


def _ipv4_header(src: int, dst: int) -> bytes:
    # version 4 / IHL 5, total length 20, TTL 64, protocol 253 (experimental), checksum left zero
    return struct.pack(">BBHHHBBHII", 0x45, 0, 20, 0, 0, 64, 253, 0, src, dst)


def _frame(src: int, dst: int, link_type: int) -> bytes:
    ip = _ipv4_header(src, dst)
    if link_type == LINKTYPE_ETHERNET:
        return _DST_MAC + _SRC_MAC + b"\x08\x00" + ip
    return ip


def _noise_frame(link_type: int) -> bytes:
    if link_type == LINKTYPE_ETHERNET:
        # ARP who-has between two private addresses
        arp = struct.pack(">HHBBH6s4s6s4s", 1, 0x0800, 6, 4, 1, _SRC_MAC, bytes(4), bytes(6), bytes(4))
        return b"\xff" * 6 + _SRC_MAC + b"\x08\x06" + arp
    # bare IPv6 header, no payload
    return struct.pack(">IHBB16s16s", 0x60000000, 0, 59, 64, bytes(16), bytes(16))


def noise_positions(config: SynthConfig, n_pairs: int) -> np.ndarray:
    """Mask over pair slots; a True slot is preceded by one non-IPv4 frame."""
    if config.noise_fraction == 0.0 or n_pairs == 0:
        return np.zeros(n_pairs, dtype=bool)
    return unit_floats(splitmix64(config.seed ^ NOISE_SALT, n_pairs)) < config.noise_fraction


def write_pcap(pairs, config: SynthConfig, path: str | Path) -> Path:
    """Write pairs as a little-endian, microsecond-resolution classic pcap.

    ``pairs`` is a list of (src, dst) or a (src, dst) tuple of arrays. Every
    record, noise included, advances the clock by ``inter_packet_micros``
    from ``timestamp_start``.
    """
    path = Path(path)
    link_type = LINK_TYPES[config.link_type]
    if isinstance(pairs, tuple) and len(pairs) == 2 and isinstance(pairs[0], np.ndarray):
        pair_list = list(zip(pairs[0].tolist(), pairs[1].tolist()))
    else:
        pair_list = [(int(s), int(d)) for s, d in pairs]
    noise = noise_positions(config, len(pair_list)).tolist()

    record = struct.Struct("<IIII")
    micros = config.timestamp_start * 1_000_000
    step = config.inter_packet_micros
    chunks: list[bytes] = []

    def emit(frame: bytes) -> None:
        nonlocal micros
        sec, frac = divmod(micros, 1_000_000)
        chunks.append(record.pack(sec, frac, len(frame), len(frame)))
        chunks.append(frame)
        micros += step

    with open(path, "wb") as fh:
        fh.write(struct.pack("<IHHiIII", 0xA1B2C3D4, 2, 4, 0, 0, SNAPLEN, link_type))
        for (src, dst), noisy in zip(pair_list, noise):
            if noisy:
                emit(_noise_frame(link_type))
            emit(_frame(src, dst, link_type))
            if len(chunks) >= 1 << 14:
                fh.write(b"".join(chunks))
                chunks.clear()
        fh.write(b"".join(chunks))
    return path
