"""AES-128 engine model: key schedule, single round primitive, ECB and XTS/XEX.

Bit-exact with FIPS-197 and (for block-aligned data) IEEE 1619 XTS-AES.
No ciphertext stealing: XTS messages must be a multiple of 16 bytes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, List

from ..errors import NonBlockAlignedLength

BLOCK = 16
ENCRYPT = "encrypt"
DECRYPT = "decrypt"


def _xtime(b: int) -> int:
    b <<= 1
    return (b ^ 0x11B) if b & 0x100 else b


def _gmul(a: int, b: int) -> int:
    r = 0
    while b:
        if b & 1:
            r ^= a
        a = _xtime(a)
        b >>= 1
    return r


def _build_sbox() -> tuple[bytes, bytes]:
    # multiplicative inverse followed by the affine transform
    inv = [0] * 256
    for x in range(1, 256):
        for y in range(1, 256):
            if _gmul(x, y) == 1:
                inv[x] = y
                break
    sbox = bytearray(256)
    for x in range(256):
        b = inv[x]
        s = b
        for i in range(1, 5):
            s ^= ((b << i) | (b >> (8 - i))) & 0xFF
        sbox[x] = s ^ 0x63
    inv_sbox = bytearray(256)
    for x, s in enumerate(sbox):
        inv_sbox[s] = x
    return bytes(sbox), bytes(inv_sbox)


SBOX, INV_SBOX = _build_sbox()
_MUL2 = bytes(_gmul(x, 2) for x in range(256))
_MUL3 = bytes(_gmul(x, 3) for x in range(256))
_MUL9 = bytes(_gmul(x, 9) for x in range(256))
_MUL11 = bytes(_gmul(x, 11) for x in range(256))
_MUL13 = bytes(_gmul(x, 13) for x in range(256))
_MUL14 = bytes(_gmul(x, 14) for x in range(256))

# column-major state: byte index = 4*col + row
_SHIFT_ROWS = [(4 * ((c + r) % 4) + r) for c in range(4) for r in range(4)]
_INV_SHIFT_ROWS = [0] * 16
for _dst, _src in enumerate(_SHIFT_ROWS):
    _INV_SHIFT_ROWS[_src] = _dst

_RCON = (0x01, 0x02, 0x04, 0x08, 0x10, 0x20, 0x40, 0x80, 0x1B, 0x36)


def _check_block(b: bytes, what: str = "block") -> bytes:
    b = bytes(b)
    if len(b) != BLOCK:
        raise ValueError(f"{what} must be exactly 16 bytes, got {len(b)}")
    return b


def _xor(a: bytes, b: bytes) -> bytes:
    return (int.from_bytes(a, "little") ^ int.from_bytes(b, "little")).to_bytes(len(a), "little")


def expand_key(key: bytes) -> List[bytes]:
    """AES-128 key schedule; returns 11 round keys, the first equal to ``key``."""
    key = _check_block(key, "key")
    w = [list(key[4 * i:4 * i + 4]) for i in range(4)]
    for i in range(4, 44):
        t = list(w[i - 1])
        if i % 4 == 0:
            t = t[1:] + t[:1]
            t = [SBOX[x] for x in t]
            t[0] ^= _RCON[i // 4 - 1]
        w.append([a ^ b for a, b in zip(w[i - 4], t)])
    return [bytes(sum(w[4 * r:4 * r + 4], [])) for r in range(11)]


def _mix_columns(s: bytes) -> bytes:
    out = bytearray(16)
    for c in range(0, 16, 4):
        a0, a1, a2, a3 = s[c:c + 4]
        out[c] = _MUL2[a0] ^ _MUL3[a1] ^ a2 ^ a3
        out[c + 1] = a0 ^ _MUL2[a1] ^ _MUL3[a2] ^ a3
        out[c + 2] = a0 ^ a1 ^ _MUL2[a2] ^ _MUL3[a3]
        out[c + 3] = _MUL3[a0] ^ a1 ^ a2 ^ _MUL2[a3]
    return bytes(out)


def _inv_mix_columns(s: bytes) -> bytes:
    out = bytearray(16)
    for c in range(0, 16, 4):
        a0, a1, a2, a3 = s[c:c + 4]
        out[c] = _MUL14[a0] ^ _MUL11[a1] ^ _MUL13[a2] ^ _MUL9[a3]
        out[c + 1] = _MUL9[a0] ^ _MUL14[a1] ^ _MUL11[a2] ^ _MUL13[a3]
        out[c + 2] = _MUL13[a0] ^ _MUL9[a1] ^ _MUL14[a2] ^ _MUL11[a3]
        out[c + 3] = _MUL11[a0] ^ _MUL13[a1] ^ _MUL9[a2] ^ _MUL14[a3]
    return bytes(out)


def aes_round(state: bytes, round_key: bytes, is_last: bool = False) -> bytes:
    """One forward cipher round (SubBytes, ShiftRows, MixColumns, AddRoundKey).

    MixColumns is skipped when ``is_last``. This is the same primitive the
    engine exposes to software for building other round-based ciphers.
    """
    state = _check_block(state, "state")
    round_key = _check_block(round_key, "round key")
    s = bytes(SBOX[state[i]] for i in _SHIFT_ROWS)
    if not is_last:
        s = _mix_columns(s)
    return _xor(s, round_key)


def aes_inv_round(state: bytes, round_key: bytes, is_last: bool = False) -> bytes:
    """Inverse of :func:`aes_round` for the same key and flag."""
    s = _xor(_check_block(state, "state"), _check_block(round_key, "round key"))
    if not is_last:
        s = _inv_mix_columns(s)
    return bytes(INV_SBOX[s[i]] for i in _INV_SHIFT_ROWS)


def _encrypt_with_schedule(rk: List[bytes], pt: bytes) -> bytes:
    s = _xor(pt, rk[0])
    for r in range(1, 10):
        s = aes_round(s, rk[r])
    return aes_round(s, rk[10], is_last=True)


def _decrypt_with_schedule(rk: List[bytes], ct: bytes) -> bytes:
    s = aes_inv_round(ct, rk[10], is_last=True)
    for r in range(9, 0, -1):
        s = aes_inv_round(s, rk[r])
    return _xor(s, rk[0])


def encrypt_block(key: bytes, pt: bytes) -> bytes:
    return _encrypt_with_schedule(expand_key(key), _check_block(pt))


def decrypt_block(key: bytes, ct: bytes) -> bytes:
    return _decrypt_with_schedule(expand_key(key), _check_block(ct))


def _blocks(data: bytes) -> Iterator[bytes]:
    if len(data) % BLOCK:
        raise NonBlockAlignedLength(f"length {len(data)} is not a multiple of {BLOCK}")
    for i in range(0, len(data), BLOCK):
        yield data[i:i + BLOCK]


def _check_direction(direction: str) -> None:
    if direction not in (ENCRYPT, DECRYPT):
        raise ValueError(f"direction must be {ENCRYPT!r} or {DECRYPT!r}, got {direction!r}")


def ecb(key: bytes, data: bytes, direction: str = ENCRYPT) -> bytes:
    """ECB over block-aligned ``data``; the schedule is expanded once and reused."""
    _check_direction(direction)
    data = bytes(data)
    rk = expand_key(key)
    fn = _encrypt_with_schedule if direction == ENCRYPT else _decrypt_with_schedule
    return b"".join(fn(rk, b) for b in _blocks(data))


def gf_mul2(t: bytes) -> bytes:
    """Double a GF(2^128) element in the IEEE 1619 little-endian byte convention."""
    t = _check_block(t, "tweak")
    v = int.from_bytes(t, "little") << 1
    if v >> 128:
        v = (v & ((1 << 128) - 1)) ^ 0x87
    return v.to_bytes(16, "little")


def sector_from_address(base_address: int, sector_size: int = 4096) -> bytes:
    """Sector number for data at ``base_address``, as a 16-byte little-endian value."""
    if sector_size <= 0:
        raise ValueError("sector_size must be positive")
    return (base_address // sector_size).to_bytes(16, "little")


@dataclass(frozen=True)
class XtsContext:
    key1: bytes  # tweak key
    key2: bytes  # data key
    sector_number: bytes

    def __post_init__(self):
        _check_block(self.key1, "key1")
        _check_block(self.key2, "key2")
        _check_block(self.sector_number, "sector_number")

    @property
    def is_xex(self) -> bool:
        return self.key1 == self.key2


def tweaks(ctx: XtsContext, n: int) -> Iterator[bytes]:
    """Yield T_0 .. T_{n-1}, computed sequentially by repeated doubling."""
    t = encrypt_block(ctx.key1, ctx.sector_number)
    for _ in range(n):
        yield t
        t = gf_mul2(t)


def xts(ctx: XtsContext, data: bytes, direction: str = ENCRYPT) -> bytes:
    _check_direction(direction)
    data = bytes(data)
    blocks = list(_blocks(data))
    rk = expand_key(ctx.key2)
    fn = _encrypt_with_schedule if direction == ENCRYPT else _decrypt_with_schedule
    out = []
    for blk, t in zip(blocks, tweaks(ctx, len(blocks))):
        out.append(_xor(fn(rk, _xor(blk, t)), t))
    return b"".join(out)
