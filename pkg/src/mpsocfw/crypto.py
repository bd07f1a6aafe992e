"""Word-granular AES-GCM datapath of the crypto firewall, on a local AES-128 and GHASH.

Every 32-bit word is zero-padded to a 128-bit block before it enters the
counter-mode stage, so one keystream block (one ``Ek`` pass) is spent per word.
The counter block is ``timestamp(64) || block_address(32) || counter(32)``,
which is the 96-bit-IV layout of standard GCM; with both modes enabled the
result is bit-identical to stock AES-GCM over the padded words.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

__all__ = [
    "AuthFailure",
    "KeyMissingError",
    "GcmContext",
    "ProtectedBlock",
    "aes128_encrypt_block",
    "expand_key",
    "gf128_mul",
    "ghash",
    "crypto_latency",
    "gcm_protect",
    "gcm_unprotect",
    "PIPELINE_FILL",
    "ENCRYPT_CYCLES",
    "TAG_CYCLES",
]

# Eq-1 cycle constants: latency(N) = 10 + (10 + 2) * N
PIPELINE_FILL = 10
ENCRYPT_CYCLES = 10
TAG_CYCLES = 2

MASK128 = (1 << 128) - 1
# x^128 + x^7 + x^2 + x + 1 in GCM's reflected bit order
_R = 0xE1 << 120


class AuthFailure(Exception):
    """Tag or timestamp mismatch on a protected block."""


class KeyMissingError(ValueError):
    pass


# --------------------------------------------------------------------------
# AES-128


def _build_sbox() -> tuple[list[int], list[int]]:
    sbox = [0] * 256
    p = q = 1
    # walk the multiplicative group with generator 3; q tracks the inverse of p
    while True:
        p = p ^ ((p << 1) & 0xFF) ^ (0x1B if p & 0x80 else 0)
        q ^= q << 1
        q ^= q << 2
        q ^= q << 4
        q &= 0xFF
        if q & 0x80:
            q ^= 0x09
        x = q ^ _rotl8(q, 1) ^ _rotl8(q, 2) ^ _rotl8(q, 3) ^ _rotl8(q, 4)
        sbox[p] = (x ^ 0x63) & 0xFF
        if p == 1:
            break
    sbox[0] = 0x63
    inv = [0] * 256
    for i, v in enumerate(sbox):
        inv[v] = i
    return sbox, inv


def _rotl8(x: int, s: int) -> int:
    return ((x << s) | (x >> (8 - s))) & 0xFF


def _xtime(b: int) -> int:
    b <<= 1
    return (b ^ 0x11B) if b & 0x100 else b


SBOX, INV_SBOX = _build_sbox()

# T-tables: column contribution of one state byte after SubBytes+MixColumns
_T0: list[int] = []
for _s in SBOX:
    _s2 = _xtime(_s)
    _s3 = _s2 ^ _s
    _T0.append((_s2 << 24) | (_s << 16) | (_s << 8) | _s3)
_T1 = [((t >> 8) | (t << 24)) & 0xFFFFFFFF for t in _T0]
_T2 = [((t >> 16) | (t << 16)) & 0xFFFFFFFF for t in _T0]
_T3 = [((t >> 24) | (t << 8)) & 0xFFFFFFFF for t in _T0]
_RCON = [0x01, 0x02, 0x04, 0x08, 0x10, 0x20, 0x40, 0x80, 0x1B, 0x36]


def expand_key(key: bytes) -> list[int]:
    """Return the 44 round-key words of an AES-128 key schedule."""
    if len(key) != 16:
        raise ValueError(f"AES-128 key must be 16 bytes, got {len(key)}")
    w = [int.from_bytes(key[i:i + 4], "big") for i in range(0, 16, 4)]
    for i in range(4, 44):
        t = w[i - 1]
        if i % 4 == 0:
            t = ((t << 8) | (t >> 24)) & 0xFFFFFFFF
            t = (
                (SBOX[t >> 24] << 24)
                | (SBOX[(t >> 16) & 0xFF] << 16)
                | (SBOX[(t >> 8) & 0xFF] << 8)
                | SBOX[t & 0xFF]
            )
            t ^= _RCON[i // 4 - 1] << 24
        w.append(w[i - 4] ^ t)
    return w


_SCHEDULE_CACHE: dict[bytes, list[int]] = {}


def _schedule(key: bytes) -> list[int]:
    rk = _SCHEDULE_CACHE.get(key)
    if rk is None:
        rk = expand_key(key)
        if len(_SCHEDULE_CACHE) > 256:
            _SCHEDULE_CACHE.clear()
        _SCHEDULE_CACHE[key] = rk
    return rk


def aes128_encrypt_block(key: bytes, block: bytes) -> bytes:
    """FIPS-197 AES-128 encryption of one 16-byte block."""
    if len(block) != 16:
        raise ValueError(f"AES block must be 16 bytes, got {len(block)}")
    rk = _schedule(bytes(key))
    s0 = int.from_bytes(block[0:4], "big") ^ rk[0]
    s1 = int.from_bytes(block[4:8], "big") ^ rk[1]
    s2 = int.from_bytes(block[8:12], "big") ^ rk[2]
    s3 = int.from_bytes(block[12:16], "big") ^ rk[3]
    for r in range(1, 10):
        k = 4 * r
        t0 = _T0[s0 >> 24] ^ _T1[(s1 >> 16) & 0xFF] ^ _T2[(s2 >> 8) & 0xFF] ^ _T3[s3 & 0xFF] ^ rk[k]
        t1 = _T0[s1 >> 24] ^ _T1[(s2 >> 16) & 0xFF] ^ _T2[(s3 >> 8) & 0xFF] ^ _T3[s0 & 0xFF] ^ rk[k + 1]
        t2 = _T0[s2 >> 24] ^ _T1[(s3 >> 16) & 0xFF] ^ _T2[(s0 >> 8) & 0xFF] ^ _T3[s1 & 0xFF] ^ rk[k + 2]
        t3 = _T0[s3 >> 24] ^ _T1[(s0 >> 16) & 0xFF] ^ _T2[(s1 >> 8) & 0xFF] ^ _T3[s2 & 0xFF] ^ rk[k + 3]
        s0, s1, s2, s3 = t0, t1, t2, t3
    out = bytearray(16)
    cols = (s0, s1, s2, s3)
    for c in range(4):
        # ShiftRows picks byte row j from column (c + j) % 4
        out[4 * c] = SBOX[cols[c] >> 24]
        out[4 * c + 1] = SBOX[(cols[(c + 1) % 4] >> 16) & 0xFF]
        out[4 * c + 2] = SBOX[(cols[(c + 2) % 4] >> 8) & 0xFF]
        out[4 * c + 3] = SBOX[cols[(c + 3) % 4] & 0xFF]
    last = rk[40:44]
    for c in range(4):
        v = int.from_bytes(out[4 * c:4 * c + 4], "big") ^ last[c]
        out[4 * c:4 * c + 4] = v.to_bytes(4, "big")
    return bytes(out)


# --------------------------------------------------------------------------
# GHASH


def gf128_mul(x: int, y: int) -> int:
    """Multiply two field elements given as 128-bit big-endian integers."""
    z = 0
    v = y
    for i in range(127, -1, -1):
        if (x >> i) & 1:
            z ^= v
        v = (v >> 1) ^ _R if v & 1 else v >> 1
    return z


def ghash(h: bytes, data: bytes) -> bytes:
    """GHASH of ``data`` under subkey ``h``; a trailing partial block is zero-padded."""
    hv = int.from_bytes(h, "big")
    y = 0
    for i in range(0, len(data), 16):
        chunk = data[i:i + 16]
        if len(chunk) < 16:
            chunk = chunk + bytes(16 - len(chunk))
        y = gf128_mul(y ^ int.from_bytes(chunk, "big"), hv)
    return y.to_bytes(16, "big")


def _pad16(b: bytes) -> bytes:
    r = len(b) % 16
    return b if r == 0 else b + bytes(16 - r)


def _inc32(block: bytes) -> bytes:
    ctr = (int.from_bytes(block[12:], "big") + 1) & 0xFFFFFFFF
    return block[:12] + ctr.to_bytes(4, "big")


# --------------------------------------------------------------------------
# word datapath


@dataclass
class GcmContext:
    """Key material and anti-replay state for one protect/unprotect call.

    ``aad`` of ``None`` means "authenticate the 32-bit block address".
    """

    key: bytes
    timestamp: int = 0
    aad: Optional[bytes] = None
    hash_subkey: bytes = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.key is None:
            raise KeyMissingError("crypto mode enabled without a key")
        self.key = bytes(self.key)
        if len(self.key) != 16:
            raise ValueError("GCM key must be 128-bit")
        if not 0 <= self.timestamp < 1 << 64:
            raise ValueError("timestamp must fit in 64 bits")
        self.hash_subkey = aes128_encrypt_block(self.key, bytes(16))

    def iv(self, address: int) -> bytes:
        return self.timestamp.to_bytes(8, "big") + (address & 0xFFFFFFFF).to_bytes(4, "big")

    def aad_for(self, address: int) -> bytes:
        if self.aad is not None:
            return self.aad
        return (address & 0xFFFFFFFF).to_bytes(4, "big")


@dataclass(frozen=True)
class ProtectedBlock:
    words: tuple[int, ...]
    tag: Optional[bytes]
    timestamp: int
    address: int = 0


def crypto_latency(n_words: int, cmode: bool, imode: bool) -> int:
    """Cycles spent in the crypto module for ``n_words`` 32-bit words."""
    if n_words < 0:
        raise ValueError("word count must be non-negative")
    if not (cmode or imode):
        return 0
    per_word = (ENCRYPT_CYCLES if cmode else 0) + (TAG_CYCLES if imode else 0)
    return PIPELINE_FILL + per_word * n_words


def _keystream(ctx: GcmContext, address: int, n: int) -> list[bytes]:
    cb = ctx.iv(address) + b"\x00\x00\x00\x01"
    out = []
    for _ in range(n):
        cb = _inc32(cb)
        out.append(aes128_encrypt_block(ctx.key, cb))
    return out


def _tag(ctx: GcmContext, address: int, cipher_blocks: bytes) -> bytes:
    aad = ctx.aad_for(address)
    lengths = (len(aad) * 8).to_bytes(8, "big") + (len(cipher_blocks) * 8).to_bytes(8, "big")
    s = ghash(ctx.hash_subkey, _pad16(aad) + _pad16(cipher_blocks) + lengths)
    ek0 = aes128_encrypt_block(ctx.key, ctx.iv(address) + b"\x00\x00\x00\x01")
    return bytes(a ^ b for a, b in zip(s, ek0))


def _check_words(words: Sequence[int]) -> None:
    for w in words:
        if not 0 <= w <= 0xFFFFFFFF:
            raise ValueError(f"not a 32-bit word: {w!r}")


def gcm_protect(
    ctx: GcmContext, words: Sequence[int], cmode: bool, imode: bool, address: int = 0
) -> tuple[ProtectedBlock, int]:
    """Encrypt and/or authenticate ``words``; return the block and its cycle cost."""
    _check_words(words)
    cycles = crypto_latency(len(words), cmode, imode)
    if not (cmode or imode):
        return ProtectedBlock(tuple(words), None, ctx.timestamp, address), 0
    stream = _keystream(ctx, address, len(words)) if cmode else []
    out_words = []
    blocks = bytearray()
    for i, w in enumerate(words):
        padded = w.to_bytes(4, "big") + bytes(12)
        if cmode:
            c = bytes(a ^ b for a, b in zip(padded, stream[i]))
        else:
            c = padded
        blocks += c
        out_words.append(int.from_bytes(c[:4], "big"))
    tag = _tag(ctx, address, bytes(blocks)) if imode else None
    return ProtectedBlock(tuple(out_words), tag, ctx.timestamp, address), cycles


def gcm_unprotect(
    ctx: GcmContext,
    block: ProtectedBlock,
    cmode: bool,
    imode: bool,
    expected_timestamp: Optional[int] = None,
) -> tuple[list[int], int]:
    """Invert :func:`gcm_protect`.

    ``ctx.timestamp`` must be the trusted timestamp recorded for the block;
    a block carrying any other timestamp is a replay and fails authentication.
    Raises :class:`AuthFailure` on any mismatch when ``imode`` is set.
    """
    _check_words(block.words)
    cycles = crypto_latency(len(block.words), cmode, imode)
    if not (cmode or imode):
        return list(block.words), 0
    want_ts = ctx.timestamp if expected_timestamp is None else expected_timestamp
    if imode and block.timestamp != want_ts:
        raise AuthFailure(f"stale timestamp {block.timestamp} (expected {want_ts})")
    address = block.address
    stream = _keystream(ctx, address, len(block.words)) if cmode else []
    plain = []
    blocks = bytearray()
    for i, cw in enumerate(block.words):
        head = cw.to_bytes(4, "big")
        if cmode:
            # zero padding encrypts to the keystream tail, so the full block is recoverable
            blocks += head + stream[i][4:]
            plain.append(cw ^ int.from_bytes(stream[i][:4], "big"))
        else:
            blocks += head + bytes(12)
            plain.append(cw)
    if imode:
        if block.tag is None or _tag(ctx, address, bytes(blocks)) != block.tag:
            raise AuthFailure(f"tag mismatch at block 0x{address:08x}")
    return plain, cycles
