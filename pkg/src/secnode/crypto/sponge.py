"""Sponge engine model: Keccak-f[400] and a duplex-style authenticated cipher.

State is 25 lanes of 16 bits, lane ``x + 5*y`` stored at bytes ``2*(x+5y)``
little-endian. Message bits are taken LSB-first within each byte, so rates
below 8 bits work on sub-byte chunks.

Construction (model convention, not claimed silicon-identical):

* init: state = key || iv || 0*, then one permutation call.
* encrypt: for each rate-sized chunk p, c = p ^ rate_bits(state); the rate
  bits are overwritten by c; one permutation call per chunk.
* MAC: a second instance keyed with iv || 0x01 absorbs the ciphertext padded
  with a single 1 bit then zeros (pad10*), and squeezes ``tag_bits``.
"""

from __future__ import annotations

import hmac
from dataclasses import dataclass, field
from typing import List, Sequence

from ..errors import AuthenticationFailure, KeyIvOverflow, RoundIndexOutOfRange

LANE_BITS = 16
LANE_MASK = 0xFFFF
STATE_BYTES = 50
MAX_ROUNDS = 20
VALID_RATES = (1, 2, 4, 8, 16, 32, 64, 128)

# rotation offsets r[x][y] for Keccak-p, reduced mod 16; indexed x + 5*y
_RHO_1600 = (
    0, 1, 62, 28, 27,
    36, 44, 6, 55, 20,
    3, 10, 43, 25, 39,
    41, 45, 15, 21, 8,
    18, 2, 61, 56, 14,
)
RHO = tuple(r % LANE_BITS for r in _RHO_1600)

_RC_1600 = (
    0x0000000000000001, 0x0000000000008082, 0x800000000000808A, 0x8000000080008000,
    0x000000000000808B, 0x0000000080000001, 0x8000000080008081, 0x8000000000008009,
    0x000000000000008A, 0x0000000000000088, 0x0000000080008009, 0x000000008000000A,
    0x000000008000808B, 0x800000000000008B, 0x8000000000008089, 0x8000000000008003,
    0x8000000000008002, 0x8000000000000080, 0x000000000000800A, 0x800000008000000A,
)
ROUND_CONSTANTS = tuple(rc & LANE_MASK for rc in _RC_1600)

# pi: B[y, 2x+3y] = A[x, y]
_PI_DEST = tuple(y + 5 * ((2 * x + 3 * y) % 5) for y in range(5) for x in range(5))
_PI_SRC = tuple(x + 5 * y for y in range(5) for x in range(5))


def _rotl(v: int, n: int) -> int:
    return ((v << n) | (v >> (LANE_BITS - n))) & LANE_MASK if n else v


def _round(a: List[int], rc: int) -> List[int]:
    c = [a[x] ^ a[x + 5] ^ a[x + 10] ^ a[x + 15] ^ a[x + 20] for x in range(5)]
    d = [c[(x - 1) % 5] ^ _rotl(c[(x + 1) % 5], 1) for x in range(5)]
    a = [a[i] ^ d[i % 5] for i in range(25)]
    b = [0] * 25
    for src, dst in zip(_PI_SRC, _PI_DEST):
        b[dst] = _rotl(a[src], RHO[src])
    out = [0] * 25
    for y in range(0, 25, 5):
        for x in range(5):
            out[y + x] = b[y + x] ^ ((~b[y + (x + 1) % 5]) & b[y + (x + 2) % 5])
    out[0] ^= rc
    return out


def state_from_bytes(data: bytes) -> List[int]:
    if len(data) != STATE_BYTES:
        raise ValueError(f"state must be {STATE_BYTES} bytes")
    return [int.from_bytes(data[2 * i:2 * i + 2], "little") for i in range(25)]


def state_to_bytes(lanes: Sequence[int]) -> bytes:
    return b"".join(v.to_bytes(2, "little") for v in lanes)


def keccak_f400(state: Sequence[int], n_rounds: int = MAX_ROUNDS, first_round_index: int = 0) -> List[int]:
    """Apply rounds ``[first_round_index, first_round_index + n_rounds)`` to 25 lanes."""
    if len(state) != 25:
        raise ValueError("state must have exactly 25 lanes")
    if n_rounds < 0 or first_round_index < 0 or first_round_index + n_rounds > MAX_ROUNDS:
        raise RoundIndexOutOfRange(
            f"rounds [{first_round_index}, {first_round_index + n_rounds}) outside [0, {MAX_ROUNDS})"
        )
    a = [v & LANE_MASK for v in state]
    for i in range(first_round_index, first_round_index + n_rounds):
        a = _round(a, ROUND_CONSTANTS[i])
    return a


@dataclass(frozen=True)
class SpongeConfig:
    key: bytes
    iv: bytes = b""
    rate_bits: int = 128
    rounds_per_call: int = 20
    tag_bits: int = 128

    def __post_init__(self):
        if self.rate_bits not in VALID_RATES:
            raise ValueError(f"rate_bits must be one of {VALID_RATES}")
        r = self.rounds_per_call
        if r <= 0 or r > MAX_ROUNDS or (r % 3 and r != MAX_ROUNDS):
            raise ValueError("rounds_per_call must be a multiple of 3 up to 18, or 20")
        if len(self.key) != 16:
            raise ValueError("key must be 16 bytes")
        if len(self.key) + len(self.iv) > STATE_BYTES:
            raise KeyIvOverflow(f"key+iv is {8 * (len(self.key) + len(self.iv))} bits, max 400")
        if self.tag_bits <= 0 or self.tag_bits % 8:
            raise ValueError("tag_bits must be a positive multiple of 8")

    @property
    def first_round(self) -> int:
        # reduced-round calls use the last rounds of the schedule
        return MAX_ROUNDS - self.rounds_per_call

    def mac_config(self) -> "SpongeConfig":
        return SpongeConfig(self.key, self.iv + b"\x01", self.rate_bits, self.rounds_per_call, self.tag_bits)


@dataclass(frozen=True)
class AuthCiphertext:
    ciphertext: bytes
    tag: bytes


@dataclass
class SpongeContext:
    """Streaming sponge instance. Owned by one caller at a time."""

    cfg: SpongeConfig
    lanes: List[int] = field(init=False)
    permutation_calls: int = field(init=False, default=0)
    data_calls: int = field(init=False, default=0)

    def __post_init__(self):
        raw = self.cfg.key + self.cfg.iv
        self.lanes = state_from_bytes(raw + bytes(STATE_BYTES - len(raw)))
        self._permute()

    def _permute(self) -> None:
        self.lanes = keccak_f400(self.lanes, self.cfg.rounds_per_call, self.cfg.first_round)
        self.permutation_calls += 1

    def _rate_value(self) -> int:
        v = 0
        for i in range(8):
            v |= self.lanes[i] << (LANE_BITS * i)
        return v

    def _set_rate_value(self, v: int) -> None:
        for i in range(8):
            self.lanes[i] = (v >> (LANE_BITS * i)) & LANE_MASK

    def _duplex(self, data: bytes, decrypt: bool) -> bytes:
        r = self.cfg.rate_bits
        nbits = 8 * len(data)
        msg = int.from_bytes(data, "little")
        out = 0
        for pos in range(0, nbits, r):
            used = min(r, nbits - pos)
            mask = (1 << used) - 1
            rate = self._rate_value()
            chunk = (msg >> pos) & mask
            res = chunk ^ (rate & mask)
            ct = chunk if decrypt else res
            self._set_rate_value((rate & ~mask) | ct)
            out |= res << pos
            self._permute()
            self.data_calls += 1
        return out.to_bytes(len(data), "little")

    def encrypt(self, plaintext: bytes) -> bytes:
        return self._duplex(bytes(plaintext), decrypt=False)

    def decrypt(self, ciphertext: bytes) -> bytes:
        return self._duplex(bytes(ciphertext), decrypt=True)

    def absorb(self, data: bytes) -> None:
        """Absorb ``data`` with pad10* (XOR into the rate, one call per block)."""
        r = self.cfg.rate_bits
        nbits = 8 * len(data)
        msg = int.from_bytes(bytes(data), "little") | (1 << nbits)
        total = nbits + 1
        for pos in range(0, total, r):
            chunk = (msg >> pos) & ((1 << r) - 1)
            self._set_rate_value(self._rate_value() ^ chunk)
            self._permute()
            self.data_calls += 1

    def squeeze(self, nbits: int) -> bytes:
        r = self.cfg.rate_bits
        out = 0
        got = 0
        while got < nbits:
            if got:
                self._permute()
            take = min(r, nbits - got)
            out |= (self._rate_value() & ((1 << take) - 1)) << got
            got += take
        return out.to_bytes((nbits + 7) // 8, "little")


def sponge_init(cfg: SpongeConfig) -> List[int]:
    return list(SpongeContext(cfg).lanes)


def sponge_encrypt(cfg: SpongeConfig, plaintext: bytes) -> bytes:
    return SpongeContext(cfg).encrypt(plaintext)


def sponge_decrypt(cfg: SpongeConfig, ciphertext: bytes) -> bytes:
    return SpongeContext(cfg).decrypt(ciphertext)


def _tag(cfg: SpongeConfig, ciphertext: bytes) -> bytes:
    mac = SpongeContext(cfg.mac_config())
    mac.absorb(ciphertext)
    return mac.squeeze(cfg.tag_bits)


def auth_encrypt(cfg: SpongeConfig, plaintext: bytes) -> AuthCiphertext:
    ct = sponge_encrypt(cfg, plaintext)
    return AuthCiphertext(ct, _tag(cfg, ct))


def auth_decrypt(cfg: SpongeConfig, msg: AuthCiphertext) -> bytes:
    expected = _tag(cfg, msg.ciphertext)
    if not hmac.compare_digest(expected, bytes(msg.tag)):
        raise AuthenticationFailure("tag mismatch")
    return sponge_decrypt(cfg, msg.ciphertext)
