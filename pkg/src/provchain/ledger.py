"""Product transactions, their hash chain, and audit/trace queries.

A product's journey is a list of :class:`SignedTransaction` records, each
committing to the digest of its predecessor. Records persist as
newline-delimited JSON with hex byte fields.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

from .curve import SECP256K1
from .keccak import keccak256
from .roles import ActorRole
from .signing import RecoveryError, Signature, derive_address, ecdsa_recover, ecdsa_sign

ZERO_HASH = b"\x00" * 32
SIGNED_MESSAGE_PREFIX = b"\x19ProvChain Signed Message:\n32"
ENCODED_SIZE = 144
RECORD_FIELDS = ("a_id", "p_id", "p_inf", "p_intime", "p_outtime", "prev_hash",
                 "tx_hash", "sig", "sender")


class LedgerError(ValueError):
    pass


class ProductMismatchError(LedgerError):
    pass


class BrokenLinkError(LedgerError):
    pass


@dataclass(frozen=True)
class Transaction:
    a_id: bytes
    p_id: bytes
    p_inf: bytes
    p_intime: int
    p_outtime: int
    prev_hash: bytes = ZERO_HASH

    def __post_init__(self) -> None:
        for name in ("a_id", "p_id", "prev_hash"):
            if len(getattr(self, name)) != 32:
                raise LedgerError(f"{name} must be 32 bytes")
        for name in ("p_intime", "p_outtime"):
            if not 0 <= getattr(self, name) < 1 << 64:
                raise LedgerError(f"{name} must fit an unsigned 64-bit integer")

    def is_well_formed(self) -> bool:
        """Nonzero ids and a hand-off time that does not predate receipt."""
        return (any(self.a_id) and any(self.p_id)
                and (self.p_outtime == 0 or self.p_outtime >= self.p_intime))


@lru_cache(maxsize=65536)
def encode_tx_canonical(tx: Transaction) -> bytes:
    """144 bytes: a_id | p_id | keccak(p_inf) | p_intime | p_outtime | prev_hash."""
    return b"".join((
        tx.a_id,
        tx.p_id,
        keccak256(tx.p_inf),
        tx.p_intime.to_bytes(8, "big"),
        tx.p_outtime.to_bytes(8, "big"),
        tx.prev_hash,
    ))


@lru_cache(maxsize=65536)
def tx_hash(tx: Transaction) -> bytes:
    return keccak256(encode_tx_canonical(tx))


def sig_h(digest: bytes) -> bytes:
    """The domain-separated digest that actors actually sign."""
    if len(digest) != 32:
        raise LedgerError("sig_h takes a 32-byte digest")
    return keccak256(SIGNED_MESSAGE_PREFIX + digest)


def address_to_id(address: bytes) -> bytes:
    """Left-pad a 20-byte address to the 32-byte actor id."""
    return address.rjust(32, b"\x00")


def make_p_inf(to: bytes, pcount: int, desc: str, **extra) -> bytes:
    """Canonical product-information payload; ``to`` names the recipient."""
    body = {"desc": desc, "pcount": pcount, "to": to.hex(), **extra}
    return json.dumps(body, sort_keys=True, separators=(",", ":")).encode()


def transfer_target(p_inf: bytes) -> Optional[bytes]:
    """The recipient address declared in ``p_inf``, if it parses."""
    try:
        to = bytes.fromhex(json.loads(p_inf)["to"])
    except (ValueError, KeyError, TypeError, UnicodeDecodeError):
        return None
    return to if len(to) == 20 else None


@dataclass(frozen=True)
class SignedTransaction:
    tx: Transaction
    tx_hash: bytes
    sig: Signature
    sender: bytes

    def to_record(self) -> dict:
        return {
            "a_id": self.tx.a_id.hex(),
            "p_id": self.tx.p_id.hex(),
            "p_inf": self.tx.p_inf.hex(),
            "p_intime": self.tx.p_intime,
            "p_outtime": self.tx.p_outtime,
            "prev_hash": self.tx.prev_hash.hex(),
            "tx_hash": self.tx_hash.hex(),
            "sig": self.sig.hex(),
            "sender": self.sender.hex(),
        }

    @classmethod
    def from_record(cls, record: Mapping) -> "SignedTransaction":
        try:
            if set(record) != set(RECORD_FIELDS):
                raise LedgerError(f"record keys must be {', '.join(RECORD_FIELDS)}")
            for name in ("p_intime", "p_outtime"):
                if type(record[name]) is not int:
                    raise LedgerError(f"{name} must be an integer")
            tx = Transaction(
                a_id=bytes.fromhex(record["a_id"]),
                p_id=bytes.fromhex(record["p_id"]),
                p_inf=bytes.fromhex(record["p_inf"]),
                p_intime=record["p_intime"],
                p_outtime=record["p_outtime"],
                prev_hash=bytes.fromhex(record["prev_hash"]),
            )
            stx = cls(tx, bytes.fromhex(record["tx_hash"]), Signature.fromhex(record["sig"]),
                      bytes.fromhex(record["sender"]))
        except (TypeError, ValueError) as exc:
            raise LedgerError(f"malformed record: {exc}") from exc
        if len(stx.tx_hash) != 32 or len(stx.sender) != 20:
            raise LedgerError("malformed record: tx_hash/sender width")
        return stx

    def to_line(self) -> str:
        return json.dumps(self.to_record(), separators=(", ", ": "))


def sign_transaction(tx: Transaction, private_key: int, curve=SECP256K1) -> SignedTransaction:
    """Off-chain signing: hash, domain-separate, sign, attach sender address."""
    digest = tx_hash(tx)
    sig = ecdsa_sign(private_key, sig_h(digest), curve)
    sender = derive_address(ecdsa_recover(sig_h(digest), sig, curve), curve)
    return SignedTransaction(tx, digest, sig, sender)


@lru_cache(maxsize=65536)
def recover_sender(digest: bytes, sig: Signature, curve=SECP256K1) -> Optional[bytes]:
    """Address that signed ``sig_h(digest)``, or None if unrecoverable."""
    try:
        return derive_address(ecdsa_recover(sig_h(digest), sig, curve), curve)
    except RecoveryError:
        return None


@dataclass
class ProductChain:
    p_id: bytes
    entries: list = field(default_factory=list)

    @property
    def tip(self) -> bytes:
        return self.entries[-1].tx_hash if self.entries else ZERO_HASH

    def __len__(self) -> int:
        return len(self.entries)


def append(chain: ProductChain, stx: SignedTransaction) -> ProductChain:
    """Extend ``chain`` in place (and return it) if ``stx`` links to the tip."""
    if stx.tx.p_id != chain.p_id:
        raise ProductMismatchError(f"record is for product {stx.tx.p_id.hex()}")
    if stx.tx.prev_hash != chain.tip:
        raise BrokenLinkError(
            f"prev_hash {stx.tx.prev_hash.hex()} does not match tip {chain.tip.hex()}")
    if tx_hash(stx.tx) != stx.tx_hash:
        raise LedgerError("tx_hash does not match the transaction body")
    chain.entries.append(stx)
    return chain


class ChainStore:
    """All product chains plus the global commit order.

    Single writer: callers serialize :meth:`append`. Reads never mutate.
    """

    def __init__(self):
        self.records: list = []
        self.chains: dict = {}

    def append(self, stx: SignedTransaction) -> None:
        chain = self.chains.get(stx.tx.p_id)
        if chain is None:
            chain = ProductChain(stx.tx.p_id)
        append(chain, stx)
        self.chains[stx.tx.p_id] = chain
        self.records.append(stx)

    def tip(self, p_id: bytes) -> bytes:
        chain = self.chains.get(p_id)
        return chain.tip if chain else ZERO_HASH

    def to_ndjson(self) -> str:
        return dump_ndjson(self.records)

    def __len__(self) -> int:
        return len(self.records)


def _records_of(store) -> Sequence:
    return store.records if isinstance(store, ChainStore) else list(store)


def trace(store, p_id: bytes) -> list:
    """Every record for ``p_id`` in commit order; empty if unknown."""
    return [stx for stx in _records_of(store) if stx.tx.p_id == p_id]


def product_ids(store) -> list:
    """Distinct product ids in order of first appearance."""
    seen = {}
    for stx in _records_of(store):
        seen.setdefault(stx.tx.p_id, None)
    return list(seen)


# -- audit -------------------------------------------------------------------

@dataclass(frozen=True)
class HopResult:
    index: int
    hash_ok: bool
    link_ok: bool
    signature_ok: bool
    custody_ok: bool
    recovered_sender: Optional[bytes]
    reasons: tuple = ()

    @property
    def ok(self) -> bool:
        return self.hash_ok and self.link_ok and self.signature_ok and self.custody_ok


@dataclass(frozen=True)
class AuditReport:
    p_id: bytes
    hops: tuple
    reason: str = ""

    @property
    def verdict(self) -> bool:
        return bool(self.hops) and all(h.ok for h in self.hops)

    def first_failure(self) -> Optional[HopResult]:
        return next((h for h in self.hops if not h.ok), None)


def audit_chain(store, p_id: bytes, roles: Optional[Mapping] = None,
                curve=SECP256K1) -> AuditReport:
    """Re-verify one product's journey hop by hop.

    ``roles`` maps address to :class:`ActorRole`.
    Without it, custody is checked structurally only: hop 0 is a self-issued
    genesis and each later sender is the previous hop's declared recipient.
    """
    hops = trace(store, p_id)
    if not hops:
        return AuditReport(p_id, (), reason="unknown product")

    results = []
    prev_digest = ZERO_HASH
    prev_to: Optional[bytes] = None
    for i, stx in enumerate(hops):
        reasons = []
        recomputed = tx_hash(stx.tx)
        hash_ok = recomputed == stx.tx_hash
        if not hash_ok:
            reasons.append("hash mismatch")
        link_ok = stx.tx.prev_hash == prev_digest
        if not link_ok:
            reasons.append("broken link")

        recovered = recover_sender(recomputed, stx.sig, curve)
        signature_ok = (recovered is not None and recovered == stx.sender
                        and stx.tx.a_id == address_to_id(stx.sender))
        if not signature_ok:
            reasons.append("sender mismatch")

        to = transfer_target(stx.tx.p_inf)
        custody_ok = to is not None
        if i == 0:
            custody_ok = custody_ok and to == stx.sender
        else:
            custody_ok = custody_ok and stx.sender == prev_to
        if custody_ok and roles is not None:
            sender_role, to_role = roles.get(stx.sender), roles.get(to)
            if i == 0:
                custody_ok = sender_role is ActorRole.SUPPLIER
            else:
                custody_ok = (sender_role is not None and to_role is not None
                              and sender_role.successor() is to_role)
        if not custody_ok:
            reasons.append("custody order")

        results.append(HopResult(i, hash_ok, link_ok, signature_ok, custody_ok,
                                 recovered, tuple(reasons)))
        prev_digest = stx.tx_hash
        prev_to = to
    return AuditReport(p_id, tuple(results))


# -- persistence -------------------------------------------------------------

def dump_ndjson(records: Iterable[SignedTransaction]) -> str:
    return "".join(stx.to_line() + "\n" for stx in records)


def parse_ndjson(text: str) -> list:
    records = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            records.append(SignedTransaction.from_record(json.loads(line)))
        except (json.JSONDecodeError, LedgerError) as exc:
            raise LedgerError(f"line {lineno}: {exc}") from exc
    return records


def load_ledger(path) -> list:
    return parse_ndjson(Path(path).read_text(encoding="utf-8"))


def atomic_write(path, data) -> None:
    """Write to a sibling temp file, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def save_ledger(path, records: Iterable[SignedTransaction]) -> None:
    atomic_write(path, dump_ndjson(records))
