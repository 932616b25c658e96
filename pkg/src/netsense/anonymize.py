"""Prefix-preserving IPv4 anonymization (Crypto-PAn).

Output bit ``i`` (most significant first) of an anonymized address is the
input bit XOR the top bit of ``AES_K(block_i)``, where ``block_i`` is the
first ``i`` input bits followed by the trailing bits of the pad block
``AES_K(pad_seed)``. Two addresses sharing exactly a k-bit prefix therefore
map to addresses sharing exactly a k-bit prefix.

All 32 blocks for a batch of addresses are laid out in one buffer and pushed
through a single ECB call, which keeps the per-address cost low enough for
full-rate pipelines.
"""

from __future__ import annotations

import hashlib
import os
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from .pcap import IpPair

KEY_BYTES = 32
KEY_HEX_CHARS = 2 * KEY_BYTES

# block i keeps the top i address bits; i = 0 keeps none
_PREFIX_MASKS = np.array([(0xFFFFFFFF << (32 - i)) & 0xFFFFFFFF for i in range(32)], dtype=np.uint32)
_BIT_WEIGHTS = np.array([1 << (31 - i) for i in range(32)], dtype=np.uint32)

_CHUNK = 1 << 14
_CACHE_LIMIT = 1 << 22


class KeyMaterialError(ValueError):
    pass


class KeyLength(KeyMaterialError):
    pass


class KeyFormat(KeyMaterialError):
    pass


@dataclass(frozen=True)
class AnonKey:
    cipher_key: bytes
    pad_seed: bytes

    @classmethod
    def from_bytes(cls, material: bytes) -> AnonKey:
        if len(material) != KEY_BYTES:
            raise KeyLength(f"key material must be {KEY_BYTES} bytes, got {len(material)}")
        return cls(bytes(material[:16]), bytes(material[16:]))

    @classmethod
    def from_hex(cls, text: str) -> AnonKey:
        if text.endswith("\r\n"):
            text = text[:-2]
        elif text.endswith("\n"):
            text = text[:-1]
        if len(text) != KEY_HEX_CHARS:
            raise KeyLength(f"key must be {KEY_HEX_CHARS} hex characters, got {len(text)}")
        try:
            material = bytes.fromhex(text)
        except ValueError:
            raise KeyFormat("key contains non-hex characters") from None
        return cls.from_bytes(material)

    @classmethod
    def from_file(cls, path: str | Path) -> AnonKey:
        raw = Path(path).read_bytes()
        try:
            text = raw.decode("ascii")
        except UnicodeDecodeError:
            raise KeyFormat("key file must hold 64 hex characters, not raw bytes") from None
        return cls.from_hex(text)

    @classmethod
    def from_env(cls, name: str) -> AnonKey:
        try:
            text = os.environ[name]
        except KeyError:
            raise KeyFormat(f"environment variable {name} is not set") from None
        return cls.from_hex(text)

    @property
    def material(self) -> bytes:
        return self.cipher_key + self.pad_seed

    def fingerprint(self) -> str:
        """First 8 hex digits of SHA-256 over the key material. Safe to publish."""
        return hashlib.sha256(self.material).hexdigest()[:8]

    def __repr__(self) -> str:
        return f"AnonKey(fingerprint={self.fingerprint()})"


_MINT = object()


class AnonBatch:
    """Anonymized (src, dst) address columns.

    Only an :class:`Anonymizer` can create one, which is what keeps raw
    addresses out of traffic-matrix construction.
    """

    __slots__ = ("src", "dst")

    def __init__(self, src: np.ndarray, dst: np.ndarray, *, _mint: object = None):
        if _mint is not _MINT:
            raise TypeError("AnonBatch is produced by Anonymizer.anonymize_batch only")
        if src.shape != dst.shape:
            raise ValueError("src and dst lengths differ")
        self.src = src
        self.dst = dst

    def __len__(self) -> int:
        return len(self.src)

    def __getitem__(self, index: slice) -> AnonBatch:
        return AnonBatch(self.src[index], self.dst[index], _mint=_MINT)

    @staticmethod
    def concat(batches: list[AnonBatch]) -> AnonBatch:
        if len(batches) == 1:
            return batches[0]
        return AnonBatch(
            np.concatenate([b.src for b in batches]),
            np.concatenate([b.dst for b in batches]),
            _mint=_MINT,
        )

    def pairs(self) -> list[IpPair]:
        return [IpPair(s, d) for s, d in zip(self.src.tolist(), self.dst.tolist())]


class Anonymizer:
    """Keyed prefix-preserving bijection on 32-bit addresses.

    Immutable apart from an optional memo of already-seen addresses, which
    never changes results. Safe to share between threads.
    """

    def __init__(self, key: AnonKey, *, cache: bool = True):
        self._cipher = Cipher(algorithms.AES(key.cipher_key), modes.ECB())
        enc = self._cipher.encryptor()
        pad = enc.update(key.pad_seed) + enc.finalize()
        self._pad_head = np.uint32(int.from_bytes(pad[:4], "big"))
        self._pad_tail = np.frombuffer(pad[4:], dtype=np.uint8)
        self._fingerprint = key.fingerprint()
        self._cache: dict[int, int] | None = {} if cache else None
        self._lock = threading.Lock()

    @classmethod
    def derive(cls, key: AnonKey | bytes, *, cache: bool = True) -> Anonymizer:
        if not isinstance(key, AnonKey):
            key = AnonKey.from_bytes(key)
        return cls(key, cache=cache)

    @property
    def key_fingerprint(self) -> str:
        return self._fingerprint

    def _compute(self, addrs: np.ndarray) -> np.ndarray:
        out = np.empty_like(addrs)
        for lo in range(0, len(addrs), _CHUNK):
            a = addrs[lo:lo + _CHUNK]
            n = len(a)
            heads = (a[:, None] & _PREFIX_MASKS) | (self._pad_head & ~_PREFIX_MASKS)
            blocks = np.empty((n, 32, 16), dtype=np.uint8)
            blocks[:, :, :4] = heads.astype(">u4").view(np.uint8).reshape(n, 32, 4)
            blocks[:, :, 4:] = self._pad_tail
            enc = self._cipher.encryptor()
            cipher = np.frombuffer(enc.update(blocks.tobytes()), dtype=np.uint8).reshape(n, 32, 16)
            bits = (cipher[:, :, 0] >> 7).astype(np.uint32)
            out[lo:lo + n] = a ^ (bits * _BIT_WEIGHTS).sum(axis=1, dtype=np.uint32)
        return out

    def anonymize_array(self, addrs: np.ndarray) -> np.ndarray:
        """Anonymize a uint32 array of addresses; returns a new uint32 array."""
        addrs = np.asarray(addrs, dtype=np.uint32)
        if addrs.size == 0:
            return addrs.copy()
        uniq, inverse = np.unique(addrs, return_inverse=True)
        if self._cache is None:
            return self._compute(uniq)[inverse]
        cache = self._cache
        keys = uniq.tolist()
        mapped = [cache.get(k) for k in keys]
        missing = [i for i, v in enumerate(mapped) if v is None]
        if missing:
            fresh = self._compute(uniq[missing]).tolist()
            for i, v in zip(missing, fresh):
                mapped[i] = v
            with self._lock:
                if len(cache) < _CACHE_LIMIT:
                    cache.update(zip((keys[i] for i in missing), fresh))
        return np.array(mapped, dtype=np.uint32)[inverse]

    def anonymize_ip(self, address: int) -> int:
        if not 0 <= address <= 0xFFFFFFFF:
            raise ValueError("address outside the 32-bit range")
        return int(self._compute(np.array([address], dtype=np.uint32))[0])

    def anonymize_pair(self, pair: IpPair) -> IpPair:
        src, dst = self.anonymize_array(np.array([pair.src, pair.dst], dtype=np.uint32)).tolist()
        return IpPair(src, dst)

    def anonymize_batch(self, src: np.ndarray, dst: np.ndarray) -> AnonBatch:
        src = np.asarray(src, dtype=np.uint32)
        dst = np.asarray(dst, dtype=np.uint32)
        both = self.anonymize_array(np.concatenate([src, dst]))
        return AnonBatch(both[: len(src)], both[len(src):], _mint=_MINT)

    def anonymize_pairs(self, pairs: list[IpPair]) -> AnonBatch:
        arr = np.array(pairs, dtype=np.uint32).reshape(-1, 2)
        return self.anonymize_batch(arr[:, 0], arr[:, 1])
