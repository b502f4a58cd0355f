"""Deterministic simulation of a small permissioned network.

Every signed hand-off is broadcast to all nodes, every node validates it
against its own replica and clock, and the transfer commits only on a
unanimous vote. Nodes count the work they do so scaling can be measured.
"""

from __future__ import annotations

import json
import logging
import random
import time
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

from .contract import DEFAULT_SCHEDULE, ContractState, GasRow, GasSchedule, Mode, gas_csv
from .curve import SECP256K1, KeyPair, SeededEntropy, keygen
from .keccak import keccak256
from .ledger import (
    ZERO_HASH,
    ChainStore,
    SignedTransaction,
    Transaction,
    address_to_id,
    atomic_write,
    make_p_inf,
    sign_transaction,
)
from .roles import CUSTODY_ORDER, ActorRole, dump_roles
from .signing import derive_address

log = logging.getLogger(__name__)

EPOCH = 1_700_000_000
TICK = 10
COMPLEXITY_HEADER = "tx_count,A_k,S_k,V_k,wall_ms"


class ConfigError(ValueError):
    pass


class InsufficientDataError(ValueError):
    pass


@dataclass
class Counters:
    transactions: int = 0   # A_k
    signatures: int = 0     # S_k
    verifications: int = 0  # V_k


@dataclass
class Node:
    node_id: int
    contract: ContractState
    store: ChainStore = field(default_factory=ChainStore)
    clock_offset: int = 0
    counters: Counters = field(default_factory=Counters)

    def state_hash(self) -> bytes:
        return keccak256(self.contract.state_hash() + keccak256(self.store.to_ndjson().encode()))


@dataclass(frozen=True)
class Message:
    seq: int
    stx: SignedTransaction
    to: bytes


@dataclass(frozen=True)
class DeliveryRecord:
    seq: int
    tx_hash: bytes
    node_ids: tuple


@dataclass(frozen=True)
class Consensus:
    accepted: bool
    votes: tuple
    reasons: tuple = ()


@dataclass
class Network:
    nodes: list
    seed: int = 0
    clock: int = EPOCH
    pending: deque = field(default_factory=deque)
    divergences: int = 0
    _seq: int = 0

    @classmethod
    def create(cls, n_nodes: int, roles: dict, mode: Mode = Mode.EVENT,
               schedule: GasSchedule = DEFAULT_SCHEDULE, clock_skew: Optional[dict] = None,
               seed: int = 0) -> "Network":
        if n_nodes < 1:
            raise ConfigError("a network needs at least one node")
        skew = clock_skew or {}
        nodes = [Node(i, ContractState(roles=dict(roles), mode=Mode(mode), schedule=schedule),
                      clock_offset=skew.get(i, 0))
                 for i in range(n_nodes)]
        return cls(nodes, seed=seed)

    def state_hashes(self) -> list:
        return [node.state_hash() for node in self.nodes]

    def converged(self) -> bool:
        return len(set(self.state_hashes())) == 1


def broadcast(net: Network, stx: SignedTransaction, to: bytes) -> DeliveryRecord:
    """Queue a hand-off for every node; queue order is the global order."""
    if not net.nodes:
        raise ConfigError("a network needs at least one node")
    net.pending.append(Message(net._seq, stx, to))
    net._seq += 1
    return DeliveryRecord(net._seq - 1, stx.tx_hash, tuple(n.node_id for n in net.nodes))


def validate_all(net: Network, stx: SignedTransaction, to: bytes, curve=SECP256K1) -> Consensus:
    """Deliver the pending broadcast of ``stx`` to every node and tally votes."""
    for i, msg in enumerate(net.pending):
        if msg.stx == stx and msg.to == to:
            break
    else:
        raise ValueError("transaction was never broadcast")
    if i != 0:
        raise ValueError("deliveries must follow broadcast order")
    net.pending.popleft()

    reasons = []
    for node in net.nodes:
        node.counters.transactions += 1
        node.counters.verifications += 1
        reasons.append(node.contract.evaluate(stx, to, net.clock + node.clock_offset, curve))
    votes = tuple(r is None for r in reasons)
    accepted = all(votes)
    for node in net.nodes:
        if accepted:
            node.contract.apply(stx, to)
            node.store.append(stx)
        else:
            node.contract.reject()
    if any(votes) and not accepted:
        net.divergences += 1
        log.warning("split vote on %s: %s", stx.tx_hash.hex(), votes)
    return Consensus(accepted, votes, tuple(r.value if r else "" for r in reasons))


def process_pending(net: Network, curve=SECP256K1) -> list:
    out = []
    while net.pending:
        msg = net.pending[0]
        out.append(validate_all(net, msg.stx, msg.to, curve))
    return out


# -- scenarios ---------------------------------------------------------------

@dataclass(frozen=True)
class ScenarioConfig:
    n_nodes: int = 5
    n_products: int = 10
    rng_seed: int = 0
    mode: Mode = Mode.EVENT
    schedule: GasSchedule = DEFAULT_SCHEDULE
    clock_skew: tuple = ()  # ((node_id, offset_seconds), ...)
    per_product_actors: bool = False

    def __post_init__(self) -> None:
        for name in ("n_nodes", "n_products", "rng_seed"):
            if type(getattr(self, name)) is not int:
                raise ConfigError(f"{name} must be an integer")
        if self.n_nodes < 1:
            raise ConfigError("n_nodes must be >= 1")
        if self.n_products < 1:
            raise ConfigError("n_products must be >= 1")
        for node_id, offset in self.clock_skew:
            if not (type(node_id) is int and 0 <= node_id < self.n_nodes and type(offset) is int):
                raise ConfigError(f"bad clock_skew entry {node_id}: {offset}")
        try:
            object.__setattr__(self, "mode", Mode(self.mode))
        except ValueError:
            raise ConfigError(f"unknown mode {self.mode!r}") from None


_INT_KEYS = ("n_nodes", "n_products", "rng_seed")


def _parse_bool(value) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {value!r}")


def _parse_int(key: str, value) -> int:
    if isinstance(value, bool):
        raise ConfigError(f"{key} must be an integer")
    try:
        return int(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key} must be an integer, got {value!r}") from None


def config_from_mapping(raw: dict) -> ScenarioConfig:
    kwargs = {}
    gas = {}
    skew = {}
    for key, value in raw.items():
        if key in _INT_KEYS:
            kwargs[key] = _parse_int(key, value)
        elif key == "mode":
            try:
                kwargs["mode"] = Mode(str(value).strip().lower())
            except ValueError:
                raise ConfigError(f"mode must be storage or event, got {value!r}") from None
        elif key == "per_product_actors":
            kwargs["per_product_actors"] = _parse_bool(value)
        elif key == "gas" and isinstance(value, dict):
            gas.update({k: _parse_int(f"gas.{k}", v) for k, v in value.items()})
        elif key.startswith("gas."):
            gas[key[4:]] = _parse_int(key, value)
        elif key == "clock_skew" and isinstance(value, dict):
            skew.update({_parse_int("clock_skew node", k): _parse_int("clock_skew", v)
                         for k, v in value.items()})
        elif key.startswith("clock_skew."):
            skew[_parse_int("clock_skew node", key[11:])] = _parse_int(key, value)
        else:
            raise ConfigError(f"unknown config key {key!r}")
    if gas:
        try:
            kwargs["schedule"] = GasSchedule(**gas)
        except TypeError as exc:
            raise ConfigError(f"unknown gas constant: {exc}") from None
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    kwargs["clock_skew"] = tuple(sorted(skew.items()))
    return ScenarioConfig(**kwargs)


def parse_config(text: str) -> ScenarioConfig:
    """JSON object, or ``key = value`` lines with ``#`` comments."""
    stripped = text.strip()
    if stripped.startswith("{"):
        try:
            raw = json.loads(stripped)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON config: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        return config_from_mapping(raw)
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        raw[key] = value
    return config_from_mapping(raw)


def load_config(path) -> ScenarioConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    return parse_config(text)


@dataclass(frozen=True)
class Actor:
    role: ActorRole
    keys: KeyPair
    address: bytes
    home_node: int


@dataclass(frozen=True)
class ComplexityReport:
    n_nodes: int
    tx_count: int
    committed: int
    transactions: int
    signatures: int
    verifications: int
    wall_ms: float
    divergences: int
    per_node: tuple

    @property
    def work(self) -> int:
        return self.transactions + self.signatures + self.verifications

    @property
    def work_per_tx(self) -> float:
        return self.work / self.tx_count if self.tx_count else 0.0

    def csv_row(self) -> str:
        return (f"{self.tx_count},{self.transactions},{self.signatures},"
                f"{self.verifications},{self.wall_ms:.3f}")


@dataclass
class ScenarioResult:
    config: ScenarioConfig
    network: Network
    report: ComplexityReport
    roles: dict
    actors: list
    submissions: list  # (stx, to, now)
    gas_rows: list

    @property
    def ledgers(self) -> dict:
        return {node.node_id: node.store.to_ndjson() for node in self.network.nodes}

    def complexity_csv(self) -> str:
        return f"{COMPLEXITY_HEADER}\n{self.report.csv_row()}\n"

    def gas_csv(self) -> str:
        return gas_csv(self.gas_rows, self.config.schedule)


def _make_actors(cfg: ScenarioConfig, lane: Optional[int], first_index: int) -> list:
    actors = []
    for offset, role in enumerate(CUSTODY_ORDER):
        seed = b"|".join((b"actor", str(cfg.rng_seed).encode(), str(lane).encode(),
                          role.name.encode()))
        keys = keygen(SeededEntropy(keccak256(seed)))
        actors.append(Actor(role, keys, derive_address(keys.q),
                            (first_index + offset) % cfg.n_nodes))
    return actors


def run_scenario(n_nodes: int = 5, n_products: int = 10, rng_seed: int = 0,
                 config: Optional[ScenarioConfig] = None, **overrides) -> ScenarioResult:
    """Drive ``n_products`` through the full custody order on ``n_nodes`` replicas.

    Each product takes five hops: the supplier's self-issued genesis record,
    then one transfer per successor role. Within a round the product order is
    shuffled by the seeded RNG; hops of one product stay in order.
    """
    cfg = config or ScenarioConfig(n_nodes=n_nodes, n_products=n_products,
                                   rng_seed=rng_seed, **overrides)
    started = time.perf_counter()
    rng = random.Random(cfg.rng_seed)

    if cfg.per_product_actors:
        lanes = [_make_actors(cfg, j, 5 * j) for j in range(cfg.n_products)]
        all_actors = [a for lane in lanes for a in lane]
    else:
        shared = _make_actors(cfg, None, 0)
        lanes = [shared] * cfg.n_products
        all_actors = shared
    roles = {a.address: a.role for a in all_actors}

    net = Network.create(cfg.n_nodes, roles, cfg.mode, cfg.schedule, dict(cfg.clock_skew),
                         seed=cfg.rng_seed)
    products = [keccak256(b"product|%d|%d" % (cfg.rng_seed, j)) for j in range(cfg.n_products)]
    pcounts = [rng.randint(1, 1000) for _ in products]
    alive = [True] * cfg.n_products
    acquired_at = [0] * cfg.n_products
    tips = [ZERO_HASH] * cfg.n_products

    submissions = []
    gas_rows = [GasRow(0, cfg.mode, 0)]
    committed = 0
    for hop in range(len(CUSTODY_ORDER)):
        order = list(range(cfg.n_products))
        rng.shuffle(order)
        for j in order:
            if not alive[j]:
                continue
            net.clock += TICK
            now = net.clock
            lane = lanes[j]
            sender = lane[max(hop - 1, 0)]
            recipient = lane[hop]
            if hop == 0:
                p_intime, p_outtime = now - TICK // 2, 0
            else:
                p_intime, p_outtime = acquired_at[j], now
            tx = Transaction(
                a_id=address_to_id(sender.address),
                p_id=products[j],
                p_inf=make_p_inf(recipient.address, pcounts[j], f"product {j}"),
                p_intime=p_intime,
                p_outtime=p_outtime,
                prev_hash=tips[j],
            )
            stx = sign_transaction(tx, sender.keys.k)
            net.nodes[sender.home_node].counters.signatures += 1
            broadcast(net, stx, recipient.address)
            result = validate_all(net, stx, recipient.address)
            submissions.append((stx, recipient.address, now))
            gas_rows.append(GasRow(len(submissions), cfg.mode, net.nodes[0].contract.gas_total))
            if result.accepted:
                committed += 1
                tips[j] = stx.tx_hash
                acquired_at[j] = now
            else:
                log.warning("product %d stalled at hop %d: %s", j, hop, result.reasons)
                alive[j] = False

    per_node = tuple(Counters(**vars(n.counters)) for n in net.nodes)
    report = ComplexityReport(
        n_nodes=cfg.n_nodes,
        tx_count=len(submissions),
        committed=committed,
        transactions=sum(c.transactions for c in per_node),
        signatures=sum(c.signatures for c in per_node),
        verifications=sum(c.verifications for c in per_node),
        wall_ms=(time.perf_counter() - started) * 1000.0,
        divergences=net.divergences,
        per_node=per_node,
    )
    return ScenarioResult(cfg, net, report, roles, all_actors, submissions, gas_rows)


def write_outputs(result: ScenarioResult, out_dir) -> list:
    """Write per-node ledgers, roles.json, complexity.csv and gas.csv."""
    out = Path(out_dir)
    written = []
    for node_id, text in result.ledgers.items():
        written.append(out / f"node_{node_id}.ndjson")
        atomic_write(written[-1], text)
    files = {
        "ledger.ndjson": result.ledgers[0],
        "roles.json": dump_roles(result.roles),
        "complexity.csv": result.complexity_csv(),
        "gas.csv": result.gas_csv(),
    }
    for name, text in files.items():
        written.append(out / name)
        atomic_write(written[-1], text)
    return written


# -- scaling -----------------------------------------------------------------

@dataclass(frozen=True)
class FitSummary:
    slope: float
    intercept: float
    r_squared: float
    points: tuple

    @property
    def exact(self) -> bool:
        return self.r_squared == 1.0


def least_squares(xs: Sequence[int], ys: Sequence[int]) -> tuple:
    """Exact rational (slope, intercept, r_squared) for integer data."""
    n = len(xs)
    mx = Fraction(sum(xs), n)
    my = Fraction(sum(ys), n)
    sxx = sum((x - mx) ** 2 for x in xs)
    sxy = sum((x - mx) * (y - my) for x, y in zip(xs, ys))
    syy = sum((y - my) ** 2 for y in ys)
    if sxx == 0:
        raise InsufficientDataError("need at least two distinct sizes")
    slope = sxy / sxx
    intercept = my - slope * mx
    ss_res = sum((y - (slope * x + intercept)) ** 2 for x, y in zip(xs, ys))
    r_squared = Fraction(1) if syy == 0 else 1 - ss_res / syy
    return slope, intercept, r_squared


def measure_complexity(reports: Sequence[ComplexityReport]) -> FitSummary:
    """Fit counted work against transaction count over several runs."""
    points = sorted((r.tx_count, r.work) for r in reports if r.tx_count > 0)
    if len(points) < 3:
        raise InsufficientDataError(f"need at least 3 non-empty runs, got {len(points)}")
    slope, intercept, r2 = least_squares([p[0] for p in points], [p[1] for p in points])
    return FitSummary(float(slope), float(intercept), float(r2), tuple(points))
