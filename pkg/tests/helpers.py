from provchain.curve import SeededEntropy, keygen
from provchain.ledger import ZERO_HASH, Transaction, address_to_id, make_p_inf, sign_transaction
from provchain.roles import ActorRole
from provchain.signing import derive_address


def make_actors(tag=b"ledger-actor"):
    """(role, keypair, address) for each of the five roles."""
    out = []
    for i, role in enumerate(ActorRole):
        kp = keygen(SeededEntropy(tag + b"-%d" % i))
        out.append((role, kp, derive_address(kp.q)))
    return out


def make_hop(sender, recipient, p_id, prev, p_intime, p_outtime, pcount=3):
    tx = Transaction(address_to_id(sender[2]), p_id, make_p_inf(recipient[2], pcount, "widget"),
                     p_intime, p_outtime, prev)
    return sign_transaction(tx, sender[1].k)


def build_chain(actors, p_id=b"\x00" * 31 + b"\x09", t0=1000):
    """Five hops: supplier genesis, then one transfer per successor role.

    Hop h is committed at t0 + 10 * (h + 1); returns the signed records.
    """
    records, prev, acquired = [], ZERO_HASH, t0
    for hop in range(5):
        sender = actors[max(hop - 1, 0)]
        recipient = actors[hop]
        t = t0 + 10 * (hop + 1)
        stx = make_hop(sender, recipient, p_id, prev, acquired if hop else t - 5, t if hop else 0)
        records.append(stx)
        prev, acquired = stx.tx_hash, t
    return records


def commit_time(hop, t0=1000):
    return t0 + 10 * (hop + 1)


# result lines from the acceptance suite, printed by the terminal summary hook
CRITERIA_LINES = []
