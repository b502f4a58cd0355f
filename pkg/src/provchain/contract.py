"""In-process stand-in for the on-chain custody contract.

The contract checks each signed hand-off (sign_actor / verify_actor), applies
the fixed custody order, and records accepted transfers either in storage
slots or as log events, charging gas from a :class:`GasSchedule`.
"""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional

from .curve import SECP256K1
from .keccak import keccak256
from .ledger import (
    ZERO_HASH,
    SignedTransaction,
    Transaction,
    address_to_id,
    encode_tx_canonical,
    recover_sender,
    transfer_target,
    tx_hash,
)
from .roles import ActorRole
from .signing import Signature

TRANSFER_TOPIC = keccak256(b"ProductTransfer")
SLOT_SIZE = 32
MAX_TOPICS = 4


class Mode(str, enum.Enum):
    STORAGE = "storage"
    EVENT = "event"


class RejectReason(str, enum.Enum):
    BAD_SIGNATURE = "bad-signature"
    WRONG_CUSTODIAN = "wrong-custodian"
    WRONG_ROLE_ORDER = "wrong-role-order"
    UNKNOWN_ROLE = "unknown-role"
    BROKEN_LINK = "broken-link"
    RECIPIENT_MISMATCH = "recipient-mismatch"


@dataclass(frozen=True)
class GasSchedule:
    base_call: int = 21000
    sstore_new: int = 20000
    sstore_update: int = 5000
    log_base: int = 375
    log_topic: int = 375
    log_data_byte: int = 8

    def __post_init__(self) -> None:
        for name, value in asdict(self).items():
            if type(value) is not int or value < 0:
                raise ValueError(f"gas constant {name} must be a non-negative integer")

    @property
    def schedule_id(self) -> str:
        text = ",".join(f"{k}={v}" for k, v in asdict(self).items())
        return keccak256(text.encode()).hex()[:8]


DEFAULT_SCHEDULE = GasSchedule()


@dataclass(frozen=True)
class Event:
    topics: tuple
    data: bytes

    def __post_init__(self) -> None:
        if len(self.topics) > MAX_TOPICS:
            raise ValueError("an event carries at most 4 topics")


@dataclass(frozen=True)
class Receipt:
    accepted: bool
    gas_used: int
    reason: Optional[RejectReason] = None


def gas_cost(mode: Mode, record_size_bytes: int, n_topics: int, n_new_slots: int,
             schedule: GasSchedule = DEFAULT_SCHEDULE, n_updated_slots: int = 0) -> int:
    if min(record_size_bytes, n_topics, n_new_slots, n_updated_slots) < 0:
        raise ValueError("sizes must be non-negative")
    if Mode(mode) is Mode.STORAGE:
        return (schedule.base_call + n_new_slots * schedule.sstore_new
                + n_updated_slots * schedule.sstore_update)
    return (schedule.base_call + schedule.log_base + n_topics * schedule.log_topic
            + record_size_bytes * schedule.log_data_byte)


# -- the two entry points ----------------------------------------------------

def _checked_signer(tx: Transaction, sig: Signature, now: int, curve) -> Optional[bytes]:
    """Ids, timing and signature checks in order; the recovered signer, or None."""
    if not any(tx.a_id):
        return None
    if not any(tx.p_id):
        return None
    digest = tx_hash(tx)
    if not tx.p_intime < now:
        return None
    if tx.p_outtime and tx.p_outtime < tx.p_intime:
        return None
    return recover_sender(digest, sig, curve)


def sign_actor(tx: Transaction, sig: Signature, now: int, curve=SECP256K1) -> bool:
    """Ids set, received before ``now``, and a canonical recoverable signature."""
    return _checked_signer(tx, sig, now, curve) is not None


def verify_actor(tx: Transaction, sig: Signature, sender: bytes, now: int,
                 curve=SECP256K1) -> bool:
    """:func:`sign_actor`, and the recovered signer's address is ``sender``."""
    signer = _checked_signer(tx, sig, now, curve)
    return signer is not None and signer == sender


# -- state -------------------------------------------------------------------

def _slot_key(p_id: bytes, hop: int, slot: int) -> bytes:
    return keccak256(p_id + hop.to_bytes(8, "big") + slot.to_bytes(8, "big"))


def storage_payload(stx: SignedTransaction) -> bytes:
    """Canonical encoding, tx_hash and signature, zero-padded to whole slots."""
    raw = encode_tx_canonical(stx.tx) + stx.tx_hash + stx.sig.to_bytes()
    return raw.ljust(-(-len(raw) // SLOT_SIZE) * SLOT_SIZE, b"\x00")


def event_payload(stx: SignedTransaction) -> bytes:
    return encode_tx_canonical(stx.tx) + stx.sig.to_bytes()


@dataclass
class ContractState:
    roles: dict = field(default_factory=dict)
    mode: Mode = Mode.EVENT
    schedule: GasSchedule = DEFAULT_SCHEDULE
    custody: dict = field(default_factory=dict)
    tips: dict = field(default_factory=dict)
    hops: dict = field(default_factory=dict)
    storage: dict = field(default_factory=dict)
    events: list = field(default_factory=list)
    gas_total: int = 0
    last_gas: int = 0

    def register(self, address: bytes, role: ActorRole) -> None:
        """Deployer-side enrollment; the only way roles enter the registry."""
        self.roles[address] = role

    def evaluate(self, stx: SignedTransaction, to: bytes, now: int,
                 curve=SECP256K1) -> Optional[RejectReason]:
        """Why ``stx`` would be rejected, or None if it would commit. Pure."""
        tx = stx.tx
        if (not verify_actor(tx, stx.sig, stx.sender, now, curve)
                or stx.tx_hash != tx_hash(tx) or tx.a_id != address_to_id(stx.sender)):
            return RejectReason.BAD_SIGNATURE
        sender_role = self.roles.get(stx.sender)
        to_role = self.roles.get(to)
        if sender_role is None or to_role is None:
            return RejectReason.UNKNOWN_ROLE
        if transfer_target(tx.p_inf) != to:
            return RejectReason.RECIPIENT_MISMATCH

        holder = self.custody.get(tx.p_id)
        if holder is None:
            # genesis: a supplier registers a new product to itself
            if sender_role is not ActorRole.SUPPLIER:
                return RejectReason.WRONG_CUSTODIAN
            if to != stx.sender:
                return RejectReason.WRONG_ROLE_ORDER
            if tx.prev_hash != ZERO_HASH:
                return RejectReason.BROKEN_LINK
            return None
        if holder != stx.sender:
            return RejectReason.WRONG_CUSTODIAN
        if sender_role.successor() is not to_role:
            return RejectReason.WRONG_ROLE_ORDER
        if tx.prev_hash != self.tips[tx.p_id]:
            return RejectReason.BROKEN_LINK
        return None

    def apply(self, stx: SignedTransaction, to: bytes) -> int:
        """Commit a transfer that :meth:`evaluate` accepted; returns gas used."""
        p_id = stx.tx.p_id
        hop = self.hops.get(p_id, 0)
        if self.mode is Mode.STORAGE:
            payload = storage_payload(stx)
            new = updated = 0
            for i in range(0, len(payload), SLOT_SIZE):
                key = _slot_key(p_id, hop, i // SLOT_SIZE)
                if key in self.storage:
                    updated += 1
                else:
                    new += 1
                self.storage[key] = payload[i:i + SLOT_SIZE]
            gas = gas_cost(Mode.STORAGE, len(payload), 0, new, self.schedule, updated)
        else:
            event = Event((TRANSFER_TOPIC, p_id), event_payload(stx))
            self.events.append(event)
            gas = gas_cost(Mode.EVENT, len(event.data), len(event.topics), 0, self.schedule)
        self.custody[p_id] = to
        self.tips[p_id] = stx.tx_hash
        self.hops[p_id] = hop + 1
        self._charge(gas)
        return gas

    def reject(self) -> int:
        self._charge(self.schedule.base_call)
        return self.schedule.base_call

    def _charge(self, gas: int) -> None:
        self.gas_total += gas
        self.last_gas = gas

    def fingerprint(self) -> bytes:
        """Digest of registry, custody, storage and events (gas excluded)."""
        h = bytearray()
        for addr, role in sorted(self.roles.items()):
            h += b"R" + addr + bytes([role.value])
        for p_id, holder in sorted(self.custody.items()):
            h += b"C" + p_id + holder + self.tips[p_id] + self.hops[p_id].to_bytes(8, "big")
        for key, value in sorted(self.storage.items()):
            h += b"S" + key + value
        for event in self.events:
            h += b"E" + b"".join(event.topics) + len(event.data).to_bytes(4, "big") + event.data
        return keccak256(bytes(h))

    def state_hash(self) -> bytes:
        return keccak256(self.fingerprint() + self.gas_total.to_bytes(16, "big"))


def submit(state: ContractState, stx: SignedTransaction, to: bytes, now: int,
           mode: Optional[Mode] = None, curve=SECP256K1) -> Receipt:
    """Validate and, if accepted, commit one signed custody hand-off."""
    if mode is not None and Mode(mode) is not state.mode:
        raise ValueError(f"contract runs in {state.mode.value} mode")
    reason = state.evaluate(stx, to, now, curve)
    if reason is not None:
        return Receipt(False, state.reject(), reason)
    return Receipt(True, state.apply(stx, to))


# -- reporting ---------------------------------------------------------------

@dataclass(frozen=True)
class GasRow:
    n: int
    mode: Mode
    total_gas: int


def gas_report(roles: dict, submissions: Iterable, schedule: GasSchedule = DEFAULT_SCHEDULE,
               modes: Iterable[Mode] = (Mode.STORAGE, Mode.EVENT)) -> list:
    """Replay ``(stx, to, now)`` submissions against a fresh contract per mode.

    Returns cumulative gas after each prefix, starting with n = 0.
    """
    submissions = list(submissions)
    rows = []
    for mode in modes:
        state = ContractState(roles=dict(roles), mode=Mode(mode), schedule=schedule)
        rows.append(GasRow(0, state.mode, 0))
        for n, (stx, to, now) in enumerate(submissions, 1):
            submit(state, stx, to, now)
            rows.append(GasRow(n, state.mode, state.gas_total))
    return rows


GAS_CSV_HEADER = "n,mode,total_gas,schedule_id"


def gas_csv(rows: Iterable[GasRow], schedule: GasSchedule = DEFAULT_SCHEDULE) -> str:
    lines = [GAS_CSV_HEADER]
    lines += [f"{r.n},{r.mode.value},{r.total_gas},{schedule.schedule_id}" for r in rows]
    return "\n".join(lines) + "\n"
