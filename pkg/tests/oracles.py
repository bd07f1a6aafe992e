"""Reference implementations used only by the tests."""

from __future__ import annotations

from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

_P = (1 << 128) | 0x87  # x^128 + x^7 + x^2 + x + 1


def _reflect(x: int) -> int:
    return int(f"{x:0128b}"[::-1], 2)


def gf_mul_schoolbook(a: int, b: int) -> int:
    """GCM field product via plain polynomial multiply-then-reduce on bit-reflected values."""
    pa, pb = _reflect(a), _reflect(b)
    prod = 0
    for i in range(128):
        if (pb >> i) & 1:
            prod ^= pa << i
    for deg in range(254, 127, -1):
        if (prod >> deg) & 1:
            prod ^= _P << (deg - 128)
    return _reflect(prod)


def ghash_schoolbook(h: bytes, data: bytes) -> bytes:
    hv = int.from_bytes(h, "big")
    y = 0
    for i in range(0, len(data), 16):
        y = gf_mul_schoolbook(y ^ int.from_bytes(data[i:i + 16].ljust(16, b"\0"), "big"), hv)
    return y.to_bytes(16, "big")


def aes_ecb(key: bytes, block: bytes) -> bytes:
    enc = Cipher(algorithms.AES(key), modes.ECB()).encryptor()
    return enc.update(block) + enc.finalize()


def ghash_via_gcm(key: bytes, aad: bytes) -> bytes:
    """GHASH(H, pad(aad) || lengths) recovered from a library GCM tag over an empty message."""
    iv = bytes(12)
    tag = AESGCM(key).encrypt(iv, b"", aad)
    ek_j0 = aes_ecb(key, iv + b"\x00\x00\x00\x01")
    return bytes(a ^ b for a, b in zip(tag, ek_j0))


def gcm_reference(key: bytes, iv: bytes, plaintext: bytes, aad: bytes) -> tuple[bytes, bytes]:
    out = AESGCM(key).encrypt(iv, plaintext, aad)
    return out[:-16], out[-16:]
