"""Prime-field elliptic curve arithmetic in affine coordinates.

Curves are short Weierstrass ``y^2 = x^3 + ax + b`` over ``Z_p``. Points are
immutable; the point at infinity is the module constant :data:`INFINITY`.
Two curves ship with the package: :data:`SECP256K1` for real keys and
:data:`TOY_CURVE` (19 points) for exhaustive tests.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional

from .keccak import keccak256


class InvalidPointError(ValueError):
    """A point does not satisfy the curve equation."""


class EntropyError(RuntimeError):
    """The entropy source ran dry before a valid scalar was drawn."""


@dataclass(frozen=True)
class Point:
    x: Optional[int]
    y: Optional[int]

    @property
    def is_infinity(self) -> bool:
        return self.x is None

    def __repr__(self) -> str:
        if self.is_infinity:
            return "Point(INFINITY)"
        return f"Point({self.x:#x}, {self.y:#x})"


INFINITY = Point(None, None)


@dataclass(frozen=True)
class CurveParams:
    name: str
    p: int
    a: int
    b: int
    g: Point
    n: int
    h_cof: int = 1

    def __post_init__(self) -> None:
        if (4 * self.a ** 3 + 27 * self.b ** 2) % self.p == 0:
            raise ValueError(f"{self.name}: singular curve")
        if not is_on_curve(self.g, self):
            raise InvalidPointError(f"{self.name}: generator not on curve")

    @property
    def byte_length(self) -> int:
        return (self.n.bit_length() + 7) // 8


def inverse_mod(value: int, modulus: int) -> int:
    # CPython's three-argument pow runs the extended Euclidean algorithm.
    if value % modulus == 0:
        raise ZeroDivisionError("no inverse of 0")
    return pow(value, -1, modulus)


def sqrt_mod(value: int, p: int) -> Optional[int]:
    """Square root modulo an odd prime (Tonelli-Shanks), or None."""
    value %= p
    if value == 0:
        return 0
    if pow(value, (p - 1) // 2, p) != 1:
        return None
    if p % 4 == 3:
        return pow(value, (p + 1) // 4, p)
    q, s = p - 1, 0
    while q % 2 == 0:
        q //= 2
        s += 1
    z = 2
    while pow(z, (p - 1) // 2, p) != p - 1:
        z += 1
    m, c, t, r = s, pow(z, q, p), pow(value, q, p), pow(value, (q + 1) // 2, p)
    while t != 1:
        i, t2 = 0, t
        while t2 != 1:
            t2 = t2 * t2 % p
            i += 1
        b = pow(c, 1 << (m - i - 1), p)
        m, c, t, r = i, b * b % p, t * b * b % p, r * b % p
    return r


def is_on_curve(pt: Point, curve: CurveParams) -> bool:
    if pt.is_infinity:
        return True
    x, y = pt.x, pt.y
    if not (0 <= x < curve.p and 0 <= y < curve.p):
        return False
    return (y * y - (x * x * x + curve.a * x + curve.b)) % curve.p == 0


def _check(pt: Point, curve: CurveParams) -> None:
    if not is_on_curve(pt, curve):
        raise InvalidPointError(f"{pt!r} is not on {curve.name}")


SECP256K1 = CurveParams(
    name="secp256k1",
    p=0xFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFEFFFFFC2F,
    a=0,
    b=7,
    g=Point(
        0x79BE667EF9DCBBAC55A06295CE870B07029BFCDB2DCE28D959F2815B16F81798,
        0x483ADA7726A3C4655DA4FBFC0E1108A8FD17B448A68554199C47D08FFB10D4B8,
    ),
    n=0xFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFEBAAEDCE6AF48A03BBFD25E8CD0364141,
)

TOY_CURVE = CurveParams(name="toy17", p=17, a=2, b=2, g=Point(5, 1), n=19)


def negate(pt: Point, curve: CurveParams) -> Point:
    if pt.is_infinity:
        return pt
    return Point(pt.x, (-pt.y) % curve.p)


def _add(p1: Point, p2: Point, curve: CurveParams) -> Point:
    if p1.is_infinity:
        return p2
    if p2.is_infinity:
        return p1
    p = curve.p
    if p1.x == p2.x:
        if (p1.y + p2.y) % p == 0:
            return INFINITY
        return _double(p1, curve)
    lam = (p2.y - p1.y) * inverse_mod(p2.x - p1.x, p) % p
    x3 = (lam * lam - p1.x - p2.x) % p
    return Point(x3, (lam * (p1.x - x3) - p1.y) % p)


def _double(pt: Point, curve: CurveParams) -> Point:
    if pt.is_infinity or pt.y == 0:
        return INFINITY
    p = curve.p
    lam = (3 * pt.x * pt.x + curve.a) * inverse_mod(2 * pt.y, p) % p
    x3 = (lam * lam - 2 * pt.x) % p
    return Point(x3, (lam * (pt.x - x3) - pt.y) % p)


def point_add(p1: Point, p2: Point, curve: CurveParams) -> Point:
    """Group sum of two points; infinity is the identity."""
    _check(p1, curve)
    _check(p2, curve)
    return _add(p1, p2, curve)


def point_double(pt: Point, curve: CurveParams) -> Point:
    """Tangent doubling; a vertical tangent (y = 0) yields infinity."""
    _check(pt, curve)
    return _double(pt, curve)


# Scalar multiplication runs in Jacobian coordinates (X, Y, Z) ~ (X/Z^2, Y/Z^3)
# so the ladder needs one inversion at the end instead of one per step.
_J_INF = (1, 1, 0)


def _to_jacobian(pt: Point) -> tuple:
    return _J_INF if pt.is_infinity else (pt.x, pt.y, 1)


def _from_jacobian(jp: tuple, curve: CurveParams) -> Point:
    x, y, z = jp
    if z == 0:
        return INFINITY
    p = curve.p
    zi = inverse_mod(z, p)
    zi2 = zi * zi % p
    return Point(x * zi2 % p, y * zi2 * zi % p)


def _jdouble(jp: tuple, curve: CurveParams) -> tuple:
    x, y, z = jp
    if z == 0 or y == 0:
        return _J_INF
    p = curve.p
    yy = y * y % p
    s = 4 * x * yy % p
    m = 3 * x * x
    if curve.a:
        m += curve.a * pow(z, 4, p)
    m %= p
    x3 = (m * m - 2 * s) % p
    return x3, (m * (s - x3) - 8 * yy * yy) % p, 2 * y * z % p


def _jadd(j1: tuple, j2: tuple, curve: CurveParams) -> tuple:
    if j1[2] == 0:
        return j2
    if j2[2] == 0:
        return j1
    p = curve.p
    x1, y1, z1 = j1
    x2, y2, z2 = j2
    z1z1 = z1 * z1 % p
    z2z2 = z2 * z2 % p
    u1 = x1 * z2z2 % p
    u2 = x2 * z1z1 % p
    s1 = y1 * z2 * z2z2 % p
    s2 = y2 * z1 * z1z1 % p
    if u1 == u2:
        return _jdouble(j1, curve) if s1 == s2 else _J_INF
    h = (u2 - u1) % p
    r = (s2 - s1) % p
    hh = h * h % p
    hhh = h * hh % p
    v = u1 * hh % p
    x3 = (r * r - hhh - 2 * v) % p
    return x3, (r * (v - x3) - s1 * hhh) % p, h * z1 * z2 % p


_COMB_BITS = 4


@lru_cache(maxsize=8)
def _base_comb(curve: CurveParams) -> tuple:
    """rows[i][j] = j * 16^i * g, for the fixed-base windowed method."""
    rows = []
    base = _to_jacobian(curve.g)
    for _ in range((curve.n.bit_length() + _COMB_BITS - 1) // _COMB_BITS):
        row = [_J_INF]
        for _ in range((1 << _COMB_BITS) - 1):
            row.append(_jadd(row[-1], base, curve))
        rows.append(tuple(row))
        base = _jadd(row[-1], base, curve)
    return tuple(rows)


def _jmul_base(k: int, curve: CurveParams) -> tuple:
    acc = _J_INF
    mask = (1 << _COMB_BITS) - 1
    for row in _base_comb(curve):
        if k == 0:
            break
        acc = _jadd(acc, row[k & mask], curve)
        k >>= _COMB_BITS
    return acc


def _jmul(k: int, pt: Point, curve: CurveParams) -> tuple:
    if pt == curve.g:
        return _jmul_base(k % curve.n, curve)
    acc = _J_INF
    base = _to_jacobian(pt)
    for bit in bin(k)[2:] if k else "":
        acc = _jdouble(acc, curve)
        if bit == "1":
            acc = _jadd(acc, base, curve)
    return acc


def scalar_mul(k: int, pt: Point, curve: CurveParams) -> Point:
    """Compute ``k * pt`` by double-and-add."""
    if k < 0:
        raise ValueError("scalar must be non-negative")
    _check(pt, curve)
    if pt.is_infinity or k == 0:
        return INFINITY
    return _from_jacobian(_jmul(k, pt, curve), curve)


def mul_add(u1: int, p1: Point, u2: int, p2: Point, curve: CurveParams) -> Point:
    """``u1 * p1 + u2 * p2``; inputs are assumed to be on the curve."""
    return _from_jacobian(_jadd(_jmul(u1, p1, curve), _jmul(u2, p2, curve), curve), curve)


def enumerate_points(curve: CurveParams) -> list:
    """Every point of a small curve, infinity first. Brute force over Z_p^2."""
    if curve.p > 1 << 16:
        raise ValueError("enumeration is only meant for toy curves")
    pts = [INFINITY]
    for x in range(curve.p):
        rhs = (x ** 3 + curve.a * x + curve.b) % curve.p
        for y in range(curve.p):
            if y * y % curve.p == rhs:
                pts.append(Point(x, y))
    return pts


# -- keys --------------------------------------------------------------------

EntropySource = Callable[[int], bytes]


class SeededEntropy:
    """Deterministic byte stream: keccak256(seed || counter) blocks."""

    def __init__(self, seed: bytes, limit: Optional[int] = None):
        self._seed = bytes(seed)
        self._counter = 0
        self._buffer = b""
        self._remaining = limit

    def __call__(self, size: int) -> bytes:
        if self._remaining is not None:
            size = min(size, self._remaining)
            self._remaining -= size
        while len(self._buffer) < size:
            self._buffer += keccak256(self._seed + self._counter.to_bytes(8, "big"))
            self._counter += 1
        out, self._buffer = self._buffer[:size], self._buffer[size:]
        return out


@dataclass(frozen=True)
class KeyPair:
    k: int
    q: Point

    def __repr__(self) -> str:
        # keep private scalars out of logs and tracebacks
        return f"KeyPair(q={self.q!r})"


def keygen(entropy: EntropySource = os.urandom, curve: CurveParams = SECP256K1,
           max_attempts: int = 256) -> KeyPair:
    """Draw a private scalar uniformly from [1, n-1] by rejection sampling."""
    size = curve.byte_length
    bits = curve.n.bit_length()
    for _ in range(max_attempts):
        chunk = entropy(size)
        if len(chunk) < size:
            raise EntropyError(f"needed {size} bytes, got {len(chunk)}")
        k = int.from_bytes(chunk, "big") >> (8 * size - bits)
        if 1 <= k < curve.n:
            return KeyPair(k, scalar_mul(k, curve.g, curve))
    raise EntropyError(f"no scalar in range after {max_attempts} draws")


def keypair_from_scalar(k: int, curve: CurveParams = SECP256K1) -> KeyPair:
    if not 1 <= k < curve.n:
        raise ValueError("private scalar out of range")
    return KeyPair(k, scalar_mul(k, curve.g, curve))


def encode_point(pt: Point, curve: CurveParams = SECP256K1) -> bytes:
    """Uncompressed x || y, each big-endian and 32 bytes wide, no prefix."""
    if pt.is_infinity:
        raise InvalidPointError("cannot encode the point at infinity")
    width = max(32, (curve.p.bit_length() + 7) // 8)
    return pt.x.to_bytes(width, "big") + pt.y.to_bytes(width, "big")
