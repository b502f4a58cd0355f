"""``provchain`` command line: keygen, run, trace, audit, gasreport.

Exit codes: 0 success, 2 usage/config, 3 divergence, 4 not found,
5 audit failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional

from .contract import Mode
from .curve import SeededEntropy, keygen
from .ledger import (
    LedgerError,
    audit_chain,
    load_ledger,
    product_ids,
    recover_sender,
    trace,
    transfer_target,
)
from .network import ConfigError, least_squares, load_config, run_scenario, write_outputs
from .roles import load_roles
from .signing import derive_address

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DIVERGENCE = 3
EXIT_NOT_FOUND = 4
EXIT_AUDIT_FAILED = 5


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_USAGE):
        super().__init__(message)
        self.code = code


def _hex_bytes(text: str, size: int, what: str) -> bytes:
    try:
        raw = bytes.fromhex(text.removeprefix("0x"))
    except ValueError:
        raise CliError(f"{what} must be hex") from None
    if len(raw) != size:
        raise CliError(f"{what} must be {size} bytes, got {len(raw)}")
    return raw


def _read_ledger(path: str):
    if not Path(path).is_file():
        raise CliError(f"ledger not found: {path}")
    try:
        return load_ledger(path)
    except LedgerError as exc:
        raise CliError(f"unreadable ledger {path}: {exc}", EXIT_AUDIT_FAILED) from None


def _read_roles(ledger_path: str, roles_path: Optional[str]):
    path = Path(roles_path) if roles_path else Path(ledger_path).with_name("roles.json")
    if not path.is_file():
        if roles_path:
            raise CliError(f"role registry not found: {roles_path}")
        return None
    try:
        return load_roles(path)
    except ValueError as exc:
        raise CliError(str(exc)) from None


# -- subcommands -------------------------------------------------------------

def cmd_keygen(args) -> int:
    if args.seed is None:
        keys = keygen()
    else:
        keys = keygen(SeededEntropy(_hex_bytes(args.seed, 32, "seed")))
    print(f"private: {keys.k:064x}")
    print(f"public.x: {keys.q.x:064x}")
    print(f"public.y: {keys.q.y:064x}")
    print(f"address: {derive_address(keys.q).hex()}")
    return EXIT_OK


def cmd_run(args) -> int:
    try:
        config = load_config(args.config)
    except ConfigError as exc:
        raise CliError(f"config error: {exc}") from None
    if args.mode:
        config = replace(config, mode=Mode(args.mode))
    out = Path(args.out)
    if out.exists() and not out.is_dir():
        raise CliError(f"--out is not a directory: {out}")

    result = run_scenario(config=config)
    write_outputs(result, out)
    report = result.report
    print(f"nodes={report.n_nodes} transactions={report.tx_count} committed={report.committed} "
          f"mode={config.mode.value} gas={result.network.nodes[0].contract.gas_total}")
    if report.divergences or not result.network.converged():
        hashes = ", ".join(h.hex()[:16] for h in result.network.state_hashes())
        print(f"divergence: {report.divergences} split vote(s); node state hashes {hashes}",
              file=sys.stderr)
        return EXIT_DIVERGENCE
    print(f"converged: state hash {result.network.nodes[0].state_hash().hex()}")
    return EXIT_OK


def cmd_trace(args) -> int:
    records = _read_ledger(args.ledger)
    roles = _read_roles(args.ledger, args.roles)
    p_id = _hex_bytes(args.product, 32, "product id")
    hops = trace(records, p_id)
    if not hops:
        print("product not found", file=sys.stderr)
        return EXIT_NOT_FOUND
    if args.json:
        print(json.dumps([stx.to_record() for stx in hops], indent=2))
        return EXIT_OK
    print(f"product {p_id.hex()}: {len(hops)} hops")
    for i, stx in enumerate(hops):
        to = transfer_target(stx.tx.p_inf)
        role = roles.get(to).name if roles and to in roles else "?"
        sig_ok = recover_sender(stx.tx_hash, stx.sig) == stx.sender
        print(f"  hop {i}  {role:<8}  sender={stx.sender.hex()}  in={stx.tx.p_intime}  "
              f"out={stx.tx.p_outtime}  tx={stx.tx_hash.hex()}  sig={'ok' if sig_ok else 'FAIL'}")
    return EXIT_OK


def _report_json(report) -> dict:
    return {
        "p_id": report.p_id.hex(),
        "verdict": report.verdict,
        "reason": report.reason,
        "hops": [
            {
                "index": h.index,
                "hash_ok": h.hash_ok,
                "link_ok": h.link_ok,
                "signature_ok": h.signature_ok,
                "custody_ok": h.custody_ok,
                "recovered_sender": h.recovered_sender.hex() if h.recovered_sender else None,
                "reasons": list(h.reasons),
            }
            for h in report.hops
        ],
    }


def cmd_audit(args) -> int:
    records = _read_ledger(args.ledger)
    roles = _read_roles(args.ledger, args.roles)
    if args.all:
        targets = product_ids(records)
    else:
        targets = [_hex_bytes(args.product, 32, "product id")]
    reports = [audit_chain(records, p_id, roles) for p_id in targets]

    if args.json:
        print(json.dumps([_report_json(r) for r in reports], indent=2))
    else:
        for report in reports:
            print(f"product {report.p_id.hex()}: {'PASS' if report.verdict else 'FAIL'}")
            for h in report.hops:
                flags = " ".join(f"{name}={'ok' if ok else 'FAIL'}" for name, ok in (
                    ("hash", h.hash_ok), ("link", h.link_ok),
                    ("sig", h.signature_ok), ("custody", h.custody_ok)))
                print(f"  hop {h.index}  {flags}")
        print(f"{len(reports)} products audited")

    if not args.all and not reports[0].hops:
        print("product not found", file=sys.stderr)
        return EXIT_NOT_FOUND
    for report in reports:
        bad = report.first_failure()
        if bad is not None:
            print(f"audit failed: product {report.p_id.hex()} hop {bad.index}: "
                  f"{', '.join(bad.reasons)}", file=sys.stderr)
            return EXIT_AUDIT_FAILED
    return EXIT_OK


def _read_gas_csv(path: str):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}") from None
    rows = list(csv.DictReader(io.StringIO(text)))
    if not rows:
        raise CliError(f"{path}: no gas rows")
    try:
        parsed = [(int(r["n"]), r["mode"], int(r["total_gas"]), r["schedule_id"]) for r in rows]
    except (KeyError, TypeError, ValueError):
        raise CliError(f"{path}: expected columns n,mode,total_gas,schedule_id") from None
    return text, parsed


def cmd_gasreport(args) -> int:
    storage_text, storage = _read_gas_csv(args.storage)
    event_text, event = _read_gas_csv(args.event)
    if [r[0] for r in storage] != [r[0] for r in event]:
        raise CliError("inputs cover different scenarios (n values differ)")
    if {r[3] for r in storage} != {r[3] for r in event}:
        raise CliError("inputs use different gas schedules")
    if storage_text == event_text:
        print("warning: storage and event inputs are identical", file=sys.stderr)

    merged = io.StringIO()
    merged.write("n,storage_gas,event_gas,ratio\n")
    for (n, _, s_gas, _), (_, _, e_gas, _) in zip(storage, event):
        ratio = f"{e_gas / s_gas:.6f}" if s_gas else ""
        merged.write(f"{n},{s_gas},{e_gas},{ratio}\n")
    if args.out:
        Path(args.out).write_text(merged.getvalue(), encoding="utf-8")
    else:
        sys.stdout.write(merged.getvalue())

    ns = [r[0] for r in storage]
    s_fit = least_squares(ns, [r[2] for r in storage]) if len(set(ns)) > 1 else None
    e_fit = least_squares(ns, [r[2] for r in event]) if len(set(ns)) > 1 else None
    if s_fit and e_fit:
        print(f"storage slope: {float(s_fit[0]):.1f} gas/tx (R^2={float(s_fit[2]):.6f})")
        print(f"event slope: {float(e_fit[0]):.1f} gas/tx (R^2={float(e_fit[2]):.6f})")
    s_total, e_total = storage[-1][2], event[-1][2]
    ratio = e_total / s_total if s_total else float("nan")
    print(f"event/storage ratio at n={ns[-1]}: {ratio:.4f}")
    below = all(e[2] < s[2] for s, e in zip(storage, event) if s[0] >= 1)
    print(f"event below storage at every n >= 1: {'yes' if below else 'no'}")
    if not below:
        print("warning: event cost is not below storage cost at every point", file=sys.stderr)
    return EXIT_OK


# -- entry point -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="provchain", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("keygen", help="generate a secp256k1 keypair and address")
    p.add_argument("--seed", help="32-byte hex seed for a reproducible keypair")
    p.set_defaults(func=cmd_keygen)

    p = sub.add_parser("run", help="run a simulated network scenario")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=[m.value for m in Mode])
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("trace", help="show a product's journey")
    p.add_argument("--ledger", required=True)
    p.add_argument("--product", required=True)
    p.add_argument("--roles", help="role registry (default: roles.json beside the ledger)")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("audit", help="re-verify product chains")
    p.add_argument("--ledger", required=True)
    which = p.add_mutually_exclusive_group(required=True)
    which.add_argument("--product")
    which.add_argument("--all", action="store_true")
    p.add_argument("--roles", help="role registry (default: roles.json beside the ledger)")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("gasreport", help="compare storage-mode and event-mode gas")
    p.add_argument("--storage", required=True)
    p.add_argument("--event", required=True)
    p.add_argument("--out", help="write the merged CSV here instead of stdout")
    p.set_defaults(func=cmd_gasreport)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
