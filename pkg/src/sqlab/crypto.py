"""Single-bit private-key encryption with two interchangeable schemes.

``PseudorandomStream`` XORs the message with one bit of a keyed-hash
stream (BLAKE2b in counter mode, 512 bits per block); ``OneTimePad``
XORs with the next unused pad bit and refuses to exceed its budget.
Nonces are sequential per key so transcripts replay byte-for-byte.
Decryption under a wrong key is permitted and simply returns whatever
the scheme computes; correct-key decryption is exact, always.

Also provides the two security-game encryption oracles: world 1 encrypts
the submitted message, world 0 encrypts the zero bit under the same key.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import BudgetError, FormatError, ParameterError

_BLOCK_BITS = 512  # one BLAKE2b-64 digest per counter block


@dataclass(frozen=True)
class PseudorandomStream:
    """Keyed-stream scheme; key length equals the security parameter."""

    bits: int = 128

    def __post_init__(self):
        if not 16 <= self.bits <= 512:
            raise ParameterError(f"stream key size must be in [16, 512], got {self.bits}")

    @property
    def key_bits(self) -> int:
        return self.bits

    tag = "prs"


@dataclass(frozen=True)
class OneTimePad:
    """Information-theoretic scheme; key length equals the message budget."""

    budget: int = 1

    def __post_init__(self):
        if self.budget < 1:
            raise ParameterError(f"pad budget must be >= 1, got {self.budget}")

    @property
    def key_bits(self) -> int:
        return self.budget

    tag = "otp"


SchemeKind = Union[PseudorandomStream, OneTimePad]


@dataclass
class SecretKey:
    kind: SchemeKind
    material: bytes = b""  # stream scheme key bytes
    pad: np.ndarray | None = None  # one-time pad bits (uint8 0/1)
    used: int = 0  # encryptions performed so far

    @property
    def key_bits(self) -> int:
        return self.kind.key_bits

    def bit(self, position: int) -> int:
        """Key-stream / pad bit at a position (wrong-key reads included)."""
        if isinstance(self.kind, OneTimePad):
            return int(self.pad[position % self.pad.size])
        return _stream_bit(self.material, position)


@dataclass(frozen=True)
class Ciphertext:
    payload: int  # 0 or 1
    position: int  # sequential nonce: which stream/pad bit was consumed

    def __post_init__(self):
        if self.payload not in (0, 1):
            raise ParameterError(f"payload must be a bit, got {self.payload}")
        if self.position < 0:
            raise ParameterError(f"position must be nonnegative, got {self.position}")


def _stream_bit(key_material: bytes, position: int) -> int:
    block, offset = divmod(position, _BLOCK_BITS)
    digest = hashlib.blake2b(
        block.to_bytes(8, "little"), key=key_material, digest_size=64
    ).digest()
    return (digest[offset >> 3] >> (offset & 7)) & 1


def stream_bits(key_material: bytes, start: int, count: int) -> np.ndarray:
    """Vector of consecutive key-stream bits (bulk-table construction)."""
    out = np.empty(count, dtype=np.uint8)
    pos = start
    done = 0
    while done < count:
        block, offset = divmod(pos, _BLOCK_BITS)
        digest = hashlib.blake2b(
            block.to_bytes(8, "little"), key=key_material, digest_size=64
        ).digest()
        take = min(_BLOCK_BITS - offset, count - done)
        bits = np.unpackbits(
            np.frombuffer(digest, dtype=np.uint8), bitorder="little"
        )[offset : offset + take]
        out[done : done + take] = bits
        done += take
        pos += take
    return out


def key_gen(kind: SchemeKind, rng: np.random.Generator) -> SecretKey:
    """Uniformly random key of the kind-determined length, counter at 0."""
    if isinstance(kind, OneTimePad):
        pad = (rng.integers(0, 256, size=kind.budget, dtype=np.uint8) & 1).astype(np.uint8)
        return SecretKey(kind=kind, pad=pad)
    nbytes = (kind.bits + 7) // 8
    raw = bytearray(rng.integers(0, 256, size=nbytes, dtype=np.uint8).tobytes())
    extra = 8 * nbytes - kind.bits
    if extra:
        raw[-1] &= (1 << (8 - extra)) - 1
    return SecretKey(kind=kind, material=bytes(raw))


def pad_key_from_bits(bits: np.ndarray) -> SecretKey:
    """Wrap an existing 0/1 vector as a one-time-pad key (shares storage)."""
    bits = np.asarray(bits, dtype=np.uint8)
    return SecretKey(kind=OneTimePad(budget=bits.size), pad=bits)


def encrypt(key: SecretKey, message: int, rng=None) -> Ciphertext:
    """XOR the message with the next unused stream/pad bit."""
    if message not in (0, 1):
        raise ParameterError(f"message must be a bit, got {message}")
    position = key.used
    if isinstance(key.kind, OneTimePad):
        if position >= key.kind.budget:
            raise BudgetError(
                f"pad budget {key.kind.budget} exhausted; "
                "size the key to the experiment's ciphertext count"
            )
        mask = int(key.pad[position])
    else:
        mask = _stream_bit(key.material, position)
    key.used = position + 1
    return Ciphertext(payload=message ^ mask, position=position)


def decrypt(key: SecretKey, cipher: Ciphertext) -> int:
    """Recover the encrypted bit; exact under the generating key."""
    if not isinstance(cipher, Ciphertext):
        raise FormatError(f"expected a Ciphertext, got {type(cipher).__name__}")
    return cipher.payload ^ key.bit(cipher.position)


def e_oracle(world: int, keys, index: int, message: int) -> Ciphertext:
    """Security-game oracle: world 1 encrypts the message, world 0 a zero."""
    if world not in (0, 1):
        raise ParameterError(f"world must be 0 or 1, got {world}")
    if not 0 <= index < len(keys):
        raise ParameterError(f"key index {index} outside [0, {len(keys)})")
    return encrypt(keys[index], message if world == 1 else 0)


# ----------------------------------------------------------------------
# Hex serialization for transcript logs


def key_to_hex(key: SecretKey) -> str:
    if isinstance(key.kind, OneTimePad):
        packed = np.packbits(key.pad, bitorder="little").tobytes()
        return f"otp:{key.kind.budget}:{packed.hex()}"
    return f"prs:{key.kind.bits}:{key.material.hex()}"


def key_from_hex(text: str) -> SecretKey:
    try:
        tag, length, payload = text.split(":")
        length = int(length)
        raw = bytes.fromhex(payload)
    except ValueError as exc:
        raise FormatError(f"malformed key string {text!r}") from exc
    if tag == "otp":
        bits = np.unpackbits(np.frombuffer(raw, dtype=np.uint8), bitorder="little")
        if bits.size < length:
            raise FormatError("pad payload shorter than declared length")
        return SecretKey(kind=OneTimePad(budget=length), pad=bits[:length].copy())
    if tag == "prs":
        if len(raw) != (length + 7) // 8:
            raise FormatError("stream key payload has wrong size")
        return SecretKey(kind=PseudorandomStream(bits=length), material=raw)
    raise FormatError(f"unknown scheme tag {tag!r}")


def cipher_to_hex(cipher: Ciphertext) -> str:
    return f"{cipher.position}:{cipher.payload:x}"


def cipher_from_hex(text: str) -> Ciphertext:
    try:
        position, payload = text.split(":")
        return Ciphertext(payload=int(payload, 16), position=int(position))
    except (ValueError, ParameterError) as exc:
        raise FormatError(f"malformed ciphertext string {text!r}") from exc
