"""The five supply-chain roles and the role-registry file."""

from __future__ import annotations

import enum
import json
from pathlib import Path
from typing import Mapping, Optional


class ActorRole(enum.Enum):
    SUPPLIER = 0
    PRODUCER = 1
    RETAILER = 2
    DEALER = 3
    CUSTOMER = 4

    def successor(self) -> Optional["ActorRole"]:
        """Next custodian in the fixed order, None after CUSTOMER."""
        if self is ActorRole.CUSTOMER:
            return None
        return ActorRole(self.value + 1)


CUSTODY_ORDER = tuple(ActorRole)


def dump_roles(roles: Mapping[bytes, ActorRole]) -> str:
    body = {addr.hex(): role.name for addr, role in sorted(roles.items())}
    return json.dumps(body, indent=2, sort_keys=True) + "\n"


def parse_roles(text: str) -> dict:
    try:
        return {bytes.fromhex(addr): ActorRole[name] for addr, name in json.loads(text).items()}
    except (ValueError, KeyError, AttributeError) as exc:
        raise ValueError(f"malformed role registry: {exc}") from exc


def load_roles(path) -> dict:
    return parse_roles(Path(path).read_text(encoding="utf-8"))
