"""ECDSA over :mod:`provchain.curve` with public-key recovery.

Nonces follow RFC 6979 (HMAC-SHA256), signatures are kept in low-s form and
carry a one-bit recovery id ``v`` (the parity of the nonce point's y), so a
verifier can rebuild the signer's public key and compare addresses instead
of storing keys.
"""

from __future__ import annotations

import hashlib
import hmac
from dataclasses import dataclass
from functools import lru_cache

from .curve import (
    INFINITY,
    SECP256K1,
    CurveParams,
    InvalidPointError,
    Point,
    encode_point,
    inverse_mod,
    is_on_curve,
    mul_add,
    scalar_mul,
    sqrt_mod,
)
from .keccak import keccak256

SIGNATURE_SIZE = 65
ADDRESS_SIZE = 20


class RecoveryError(ValueError):
    """No public key corresponds to the given signature."""


@dataclass(frozen=True)
class Signature:
    r: int
    s: int
    v: int

    def to_bytes(self) -> bytes:
        return self.r.to_bytes(32, "big") + self.s.to_bytes(32, "big") + bytes([self.v])

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Signature":
        # Structural parse only; range checks belong to verification.
        if len(raw) != SIGNATURE_SIZE:
            raise ValueError(f"signature must be {SIGNATURE_SIZE} bytes, got {len(raw)}")
        return cls(int.from_bytes(raw[:32], "big"), int.from_bytes(raw[32:64], "big"), raw[64])

    def hex(self) -> str:
        return self.to_bytes().hex()

    @classmethod
    def fromhex(cls, text: str) -> "Signature":
        return cls.from_bytes(bytes.fromhex(text))


def _bits2int(data: bytes, qlen: int) -> int:
    value = int.from_bytes(data, "big")
    excess = 8 * len(data) - qlen
    return value >> excess if excess > 0 else value


def _digest_scalar(digest: bytes, curve: CurveParams) -> int:
    return _bits2int(digest, curve.n.bit_length())


def _rfc6979_nonces(k: int, digest: bytes, curve: CurveParams):
    """Yield the RFC 6979 candidate nonces for (k, digest), in order."""
    n = curve.n
    qlen = n.bit_length()
    rlen = (qlen + 7) // 8
    x = k.to_bytes(rlen, "big")
    h1 = (_bits2int(digest, qlen) % n).to_bytes(rlen, "big")

    key = b"\x00" * 32
    val = b"\x01" * 32
    key = hmac.new(key, val + b"\x00" + x + h1, hashlib.sha256).digest()
    val = hmac.new(key, val, hashlib.sha256).digest()
    key = hmac.new(key, val + b"\x01" + x + h1, hashlib.sha256).digest()
    val = hmac.new(key, val, hashlib.sha256).digest()
    while True:
        t = b""
        while len(t) < rlen:
            val = hmac.new(key, val, hashlib.sha256).digest()
            t += val
        candidate = _bits2int(t[:rlen], qlen)
        if 1 <= candidate < n:
            yield candidate
        key = hmac.new(key, val + b"\x00", hashlib.sha256).digest()
        val = hmac.new(key, val, hashlib.sha256).digest()


def ecdsa_sign(k: int, digest: bytes, curve: CurveParams = SECP256K1) -> Signature:
    """Sign a 32-byte digest with private scalar ``k``. Deterministic."""
    n = curve.n
    if not 1 <= k < n:
        raise ValueError("private scalar out of range")
    z = _digest_scalar(digest, curve)
    for nonce in _rfc6979_nonces(k, digest, curve):
        big_r = scalar_mul(nonce, curve.g, curve)
        r = big_r.x % n
        if r == 0 or big_r.x >= n:
            # x >= n would need recovery ids 2/3; take the next nonce instead
            continue
        s = inverse_mod(nonce, n) * (z + r * k) % n
        if s == 0:
            continue
        v = big_r.y & 1
        if s > n // 2:
            s, v = n - s, v ^ 1
        return Signature(r, s, v)
    raise AssertionError("unreachable")  # pragma: no cover


def _well_formed(sig: Signature, curve: CurveParams) -> bool:
    return (1 <= sig.r < curve.n and 1 <= sig.s <= curve.n // 2 and sig.v in (0, 1))


def ecdsa_verify(q: Point, digest: bytes, sig: Signature, curve: CurveParams = SECP256K1) -> bool:
    """True iff ``sig`` signs ``digest`` under public point ``q``.

    High-s signatures are rejected, and ``v`` must match the parity of the
    reconstructed nonce point, so every bit of the 65-byte encoding is
    covered by the check.
    """
    if not _well_formed(sig, curve):
        return False
    if q.is_infinity or not is_on_curve(q, curve):
        return False
    n = curve.n
    w = inverse_mod(sig.s, n)
    z = _digest_scalar(digest, curve)
    big_r = mul_add(z * w % n, curve.g, sig.r * w % n, q, curve)
    if big_r.is_infinity:
        return False
    return big_r.x % n == sig.r and (big_r.y & 1) == sig.v


@lru_cache(maxsize=65536)
def ecdsa_recover(digest: bytes, sig: Signature, curve: CurveParams = SECP256K1) -> Point:
    """Rebuild the public point that produced ``sig`` over ``digest``."""
    if not _well_formed(sig, curve):
        raise RecoveryError("signature out of range")
    p, n = curve.p, curve.n
    x = sig.r
    if x >= p:
        raise RecoveryError("r is not a field element")
    y = sqrt_mod(x ** 3 + curve.a * x + curve.b, p)
    if y is None:
        raise RecoveryError("r is not the x-coordinate of any curve point")
    if y & 1 != sig.v:
        y = p - y
    big_r = Point(x, y)
    if curve.h_cof != 1 and not scalar_mul(n, big_r, curve).is_infinity:
        raise RecoveryError("nonce point is outside the prime-order subgroup")
    r_inv = inverse_mod(sig.r, n)
    z = _digest_scalar(digest, curve)
    q = mul_add(sig.s * r_inv % n, big_r, (-z * r_inv) % n, curve.g, curve)
    if q == INFINITY:
        raise RecoveryError("recovered the point at infinity")
    return q


def derive_address(q: Point, curve: CurveParams = SECP256K1) -> bytes:
    """Low 20 bytes of keccak256 over the 64-byte uncompressed point."""
    if q.is_infinity:
        raise InvalidPointError("the point at infinity has no address")
    if not is_on_curve(q, curve):
        raise InvalidPointError(f"{q!r} is not on {curve.name}")
    return keccak256(encode_point(q, curve))[-ADDRESS_SIZE:]
