"""Supply-chain provenance on a simulated smart-contract ledger."""

from .contract import ContractState, GasSchedule, Mode, RejectReason, sign_actor, submit, verify_actor
from .curve import INFINITY, SECP256K1, TOY_CURVE, CurveParams, KeyPair, Point, keygen, scalar_mul
from .keccak import keccak256
from .ledger import (
    AuditReport,
    ChainStore,
    SignedTransaction,
    Transaction,
    audit_chain,
    product_ids,
    sign_transaction,
    trace,
    tx_hash,
)
from .network import run_scenario
from .roles import ActorRole
from .signing import Signature, derive_address, ecdsa_recover, ecdsa_sign, ecdsa_verify

__version__ = "0.1.0"
