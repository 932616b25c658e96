from __future__ import annotations

import struct
import sys

import numpy as np
import pytest

from netsense.anonymize import AnonKey, Anonymizer

TEST_KEY_HEX = "000102030405060708090a0b0c0d0e0f101112131415161718191a1b1c1d1e1f"

MAC_A = bytes.fromhex("001122334455")
MAC_B = bytes.fromhex("66778899aabb")


def ipv4_header(src: int, dst: int, ihl: int = 5) -> bytes:
    options = b"\x00" * (4 * (ihl - 5))
    return struct.pack(">BBHHHBBHII", 0x40 | ihl, 0, 20 + len(options), 1, 0, 64, 17, 0, src, dst) + options


def ether(ethertype: int, payload: bytes, vlans: tuple[tuple[int, int], ...] = ()) -> bytes:
    """Ethernet frame; ``vlans`` is a sequence of (tpid, tci) tags."""
    tags = b"".join(struct.pack(">HH", tpid, tci) for tpid, tci in vlans)
    return MAC_A + MAC_B + tags + struct.pack(">H", ethertype) + payload


def arp_frame() -> bytes:
    arp = struct.pack(">HHBBH6s4s6s4s", 1, 0x0800, 6, 4, 1, MAC_A, bytes(4), bytes(6), bytes(4))
    return b"\xff" * 6 + MAC_A + b"\x08\x06" + arp


def build_pcap(
    frames: list[bytes],
    *,
    link_type: int = 1,
    big_endian: bool = False,
    nanosecond: bool = False,
    snaplen: int = 65535,
    timestamps: list[tuple[int, int]] | None = None,
) -> bytes:
    e = ">" if big_endian else "<"
    magic = 0xA1B23C4D if nanosecond else 0xA1B2C3D4
    out = [struct.pack(e + "IHHiIII", magic, 2, 4, 0, 0, snaplen, link_type)]
    for i, frame in enumerate(frames):
        sec, frac = timestamps[i] if timestamps else (1_600_000_000 + i, 0)
        out.append(struct.pack(e + "IIII", sec, frac, len(frame), len(frame)))
        out.append(frame)
    return b"".join(out)


@pytest.fixture
def key() -> AnonKey:
    return AnonKey.from_hex(TEST_KEY_HEX)


@pytest.fixture
def anonymizer(key) -> Anonymizer:
    return Anonymizer.derive(key)


@pytest.fixture
def key_file(tmp_path):
    path = tmp_path / "key.hex"
    path.write_text(TEST_KEY_HEX + "\n")
    return path


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


def random_addresses(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.integers(0, 1 << 32, size=n, dtype=np.uint64).astype(np.uint32)


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    if acceptance is None or not acceptance.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(acceptance.RESULTS):
        terminalreporter.write_line(acceptance.RESULTS[number])
