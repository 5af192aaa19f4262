"""Keyed 128-bit hashing and probe-slot generation.

The digest is MurmurHash3_x64_128.  A 64-bit seed is folded to the 32-bit
seed the algorithm takes (``(seed ^ (seed >> 32)) & 0xffffffff``).  The
128-bit value is ``h1 | h2 << 64``, i.e. the little-endian reading of the
16 output bytes, and probe words are taken most-significant first.
"""
from __future__ import annotations

from dataclasses import dataclass

from rjch._backend import murmur3_x64_128
from rjch.errors import ConfigurationError

DEFAULT_BITS = 20
_AUX_TAG = b"\x00bias\x00"


def fold_seed(seed: int) -> int:
    """Fold a 64-bit seed into MurmurHash3's 32-bit seed."""
    seed &= (1 << 64) - 1
    return (seed ^ (seed >> 32)) & 0xFFFFFFFF


@dataclass(frozen=True)
class Digest128:
    value: int

    def words(self) -> tuple[int, int, int, int]:
        """Four 32-bit words, most significant first."""
        v = self.value
        return (v >> 96) & 0xFFFFFFFF, (v >> 64) & 0xFFFFFFFF, (v >> 32) & 0xFFFFFFFF, v & 0xFFFFFFFF


@dataclass(frozen=True)
class ProbeKey:
    base: bytes
    attempt: int = 0

    def encode(self) -> bytes:
        if self.attempt < 0:
            raise ValueError("attempt must be non-negative")
        return self.base + str(self.attempt).encode("ascii")


def digest(seed: int, data: bytes) -> Digest128:
    h1, h2 = murmur3_x64_128(bytes(data), fold_seed(seed))
    return Digest128(h1 | (h2 << 64))


def check_bits(bits: int) -> int:
    if not 1 <= bits <= 32:
        raise ConfigurationError(f"address bits must be in [1, 32], got {bits}")
    return bits


def slots_from_digest(d: Digest128, bits: int) -> list[int]:
    shift = 32 - check_bits(bits)
    return [w >> shift for w in d.words()]


def probe_slots(key: ProbeKey, bits: int = DEFAULT_BITS, seed: int = 0) -> list[int]:
    """The four slots (top ``bits`` of each word) for one placement round."""
    check_bits(bits)
    return slots_from_digest(digest(seed, key.encode()), bits)


def bias_hit(seed: int, data: bytes, bias_p: float) -> bool:
    """Deterministic per-input coin with success probability ``bias_p``."""
    if not 0.0 <= bias_p <= 1.0:
        raise ValueError("bias_p must be in [0, 1]")
    if bias_p == 0.0:
        return False
    if bias_p == 1.0:
        return True
    u = (digest(seed, _AUX_TAG + bytes(data)).value >> 75) / float(1 << 53)
    return u < bias_p


def biased_digest(seed: int, data: bytes, hotspot: int, bias_p: float, bits: int = DEFAULT_BITS) -> Digest128:
    """Like :func:`digest`, but a ``bias_p`` fraction of inputs have their
    first probe slot forced to ``hotspot``.

    Only the top ``bits`` of the first word are replaced; the rest of the
    digest is left as is.
    """
    check_bits(bits)
    if not 0 <= hotspot < (1 << bits):
        raise ValueError("hotspot outside the address space")
    d = digest(seed, data)
    if not bias_hit(seed, data, bias_p):
        return d
    shift = 32 - bits
    low_mask = (1 << (96 + shift)) - 1
    return Digest128((d.value & low_mask) | (hotspot << (96 + shift)))
