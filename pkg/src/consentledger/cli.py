"""``consentledger`` command-line interface.

Every subcommand is a thin wrapper over :class:`~consentledger.workspace.Workspace`.
Results go to stdout as canonical JSON (or a plain table with
``--format table``); errors go to stderr as canonical JSON with an exit code
chosen by error family.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from .auditchain import DEFAULT_MAX_BATCH
from .bench import DEFAULT_COUNTS, NOTE, bench_consents
from .config import Config, resolve
from .domain import FixedClock, Purpose, SystemClock, canonical_bytes
from .errors import ConsentLedgerError
from .poc import AuditorNode, Behavior, Role
from .provenance import ConsentFilter, Orientation, render_table
from .workspace import Workspace

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2
EXIT_DENY = 3
EXIT_FAULTS = 4
EXIT_BY_FAMILY = {
    "invalid": 10,
    "conflict": 11,
    "not_found": 12,
    "integrity": 13,
    "unavailable": 14,
    "internal": EXIT_INTERNAL,
}

FIXED_CLOCK_START = 1_700_000_000


class CliError(Exception):
    """Bad command input that argparse cannot catch (unreadable files and the like)."""


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _read_json(path: str) -> Any:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise CliError(f"{path} is not valid JSON: {exc.msg}") from None


def _emit(value: Any, cfg: Config, columns: Sequence[str] | None = None) -> None:
    if cfg.format == "table":
        rows = value if isinstance(value, list) else [{"field": k, "value": v} for k, v in value.items()]
        print(render_table([r if isinstance(r, dict) else {"value": r} for r in rows], columns))
    else:
        sys.stdout.write(canonical_bytes(value).decode("utf-8") + "\n")


def _workspace(cfg: Config) -> Workspace:
    clock = FixedClock(FIXED_CLOCK_START) if cfg.clock == "fixed" else SystemClock()
    return Workspace(cfg.data_dir, clock=clock, max_batch=cfg.max_batch, fsync=True)


def parse_counts(text: str, step: int = 4) -> list[int]:
    """``"4..48"`` (stepped by ``step``) or a comma list such as ``"4,8,12"``."""
    try:
        if ".." in text:
            lo, hi = (int(x) for x in text.split("..", 1))
            counts = list(range(lo, hi + 1, step))
        else:
            counts = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise CliError(f"bad --counts value {text!r}") from None
    if not counts or any(c < 1 for c in counts):
        raise CliError("--counts must list positive integers")
    return counts


def _filter(args: argparse.Namespace) -> ConsentFilter | None:
    for attr, orientation in (
        ("sender", Orientation.SENDER),
        ("receiver", Orientation.RECEIVER),
        ("phi", Orientation.PHI),
        ("purpose", Orientation.PURPOSE),
    ):
        if getattr(args, attr, None):
            return ConsentFilter(orientation, getattr(args, attr))
    return None


def _scenario_nodes(spec: Any) -> list[AuditorNode]:
    try:
        return [
            AuditorNode(
                n["node_id"],
                frozenset(Role(r) for r in n.get("roles", [Role.AUDIT.value])),
                Behavior(n.get("behavior", Behavior.HONEST.value)),
            )
            for n in spec
        ]
    except (KeyError, TypeError, ValueError) as exc:
        raise CliError(f"bad scenario node list: {exc}") from None


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_ppa_create(args, cfg) -> int:
    ppa = _workspace(cfg).create_ppa(args.patient, _read_json(args.file))
    _emit({"ppa_id": ppa.ppa_id, "patient_id": ppa.patient_id,
           "composite_digest": ppa.composite_digest,
           "component_digests": dict(ppa.component_digests)}, cfg)
    return EXIT_OK


def cmd_ppa_verify(args, cfg) -> int:
    result = _workspace(cfg).verify_ppa(args.ppa)
    _emit({"ppa_id": args.ppa, **result.to_dict()}, cfg)
    return EXIT_OK if result.ok else EXIT_BY_FAMILY["integrity"]


def cmd_consent_deploy(args, cfg) -> int:
    address = _workspace(cfg).deploy_contract(args.patient)
    _emit({"patient_id": args.patient, "address": address}, cfg)
    return EXIT_OK


def cmd_consent_add(args, cfg) -> int:
    consents = None if args.file is None else _read_json(args.file)
    address, added = _workspace(cfg).add_consents(args.patient, consents, args.ppa)
    _emit({"patient_id": args.patient, "address": address, "added": added}, cfg)
    return EXIT_OK


def cmd_consent_list(args, cfg) -> int:
    ws = _workspace(cfg)
    if args.executed:
        _emit([v.to_dict() for v in ws.executed(args.patient, _filter(args))], cfg,
              ["trail_id", "sic_id", "sender", "receiver", "phi_id", "purpose", "broker_verdict", "executed_at", "compliance"])
    else:
        _emit([c.to_dict() for c in ws.given(args.patient, _filter(args))], cfg,
              ["sic_id", "sender", "receiver", "phi_id", "purpose", "granted_at"])
    return EXIT_OK


def cmd_share_request(args, cfg) -> int:
    decision, trail_id = _workspace(cfg).share(
        sender=args.sender, receiver=args.receiver, patient_id=args.patient,
        phi_id=args.phi, purpose=args.purpose, protection=_read_json(args.protection),
    )
    _emit({**decision.to_dict(), "trail_id": trail_id}, cfg)
    return EXIT_OK if decision.permitted else EXIT_DENY


def cmd_audit_run(args, cfg) -> int:
    ws = _workspace(cfg)
    scenario = _read_json(args.scenario) if args.scenario else {}
    block_range = None
    if args.from_block is not None or args.to_block is not None:
        lo = args.from_block or 0
        hi = args.to_block if args.to_block is not None else len(ws.chain) - 1
        block_range = range(lo, hi + 1)
    faulty = args.faulty if args.faulty is not None else scenario.get("faulty", 0)
    node_list = _scenario_nodes(scenario["nodes"]) if "nodes" in scenario else None
    report = ws.audit(
        block_range=block_range,
        nodes=cfg.nodes,
        faulty=faulty,
        seed=cfg.seed,
        drop_rate=scenario.get("drop_rate", cfg.drop_rate) if args.drop_rate is None else cfg.drop_rate,
        max_delay=scenario.get("max_delay", 0),
        drop_to=scenario.get("drop_to"),
        node_list=node_list,
    )
    if args.out:
        Path(args.out).write_bytes(report.to_json())
    if cfg.format == "table":
        _emit([r.to_dict() | {"verdicts": len(r.verdicts)} for r in report.results], cfg,
              ["txn_id", "block_id", "verdicts", "final"])
    else:
        _emit(report, cfg)
    return EXIT_OK


def cmd_chain_verify(args, cfg) -> int:
    faults = _workspace(cfg).verify_chain()
    _emit([{"block_id": f.block_id, "fault": f.fault.value} for f in faults], cfg)
    return EXIT_OK if not faults else EXIT_FAULTS


def cmd_bench_consents(args, cfg) -> int:
    counts = parse_counts(args.counts, args.step) if args.counts else list(DEFAULT_COUNTS)
    rows = bench_consents(counts, repeats=args.repeats, fsync=not args.no_fsync)
    if cfg.format == "table":
        print(f"# {NOTE}")
        _emit([r.to_dict() for r in rows], cfg)
    else:
        _emit({"note": NOTE, "rows": [r.to_dict() for r in rows]}, cfg)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _globals() -> argparse.ArgumentParser:
    # defaults are SUPPRESS so the options work before or after the subcommand
    g = argparse.ArgumentParser(add_help=False)
    s = argparse.SUPPRESS
    g.add_argument("--data-dir", dest="data_dir", default=s, help="directory holding all persisted state")
    g.add_argument("--config", default=s, help="JSON config file")
    g.add_argument("--format", choices=("json", "table"), default=s)
    g.add_argument("--clock", choices=("real", "fixed"), default=s, help="'fixed' makes timestamps reproducible")
    g.add_argument("--seed", type=int, default=s, help="network simulation seed")
    g.add_argument("--max-batch", dest="max_batch", type=int, default=s,
                   help=f"trails per audit block (default {DEFAULT_MAX_BATCH})")
    return g


def build_parser() -> argparse.ArgumentParser:
    common = _globals()
    parser = argparse.ArgumentParser(prog="consentledger", parents=[common],
                                     description="Tamper-evident consent management for PHI sharing.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    groups = parser.add_subparsers(dest="group", required=True)

    def command(group, name, func, help):
        p = group.add_parser(name, parents=[common], help=help)
        p.set_defaults(func=func)
        return p

    ppa = groups.add_parser("ppa", help="patient-provider agreements").add_subparsers(dest="command", required=True)
    p = command(ppa, "create", cmd_ppa_create, "form and anchor an agreement")
    p.add_argument("--patient", required=True)
    p.add_argument("--file", required=True, help="JSON with pc, prc, tic, sic and roc lists")
    p = command(ppa, "verify", cmd_ppa_verify, "check an agreement against its anchor")
    p.add_argument("--ppa", required=True)

    consent = groups.add_parser("consent", help="consent contracts").add_subparsers(dest="command", required=True)
    p = command(consent, "deploy", cmd_consent_deploy, "deploy a patient's consent contract")
    p.add_argument("--patient", required=True)
    p = command(consent, "add", cmd_consent_add, "push an agreement's consents to the contract")
    p.add_argument("--patient", required=True)
    p.add_argument("--ppa", help="agreement id (default: the patient's latest)")
    p.add_argument("--file", help="consent list to submit instead of the agreement's own")
    p = command(consent, "list", cmd_consent_list, "list given or executed consents")
    p.add_argument("--patient", required=True)
    p.add_argument("--executed", action="store_true", help="list consents exercised by permitted shares")
    f = p.add_mutually_exclusive_group()
    f.add_argument("--sender")
    f.add_argument("--receiver")
    f.add_argument("--phi")
    f.add_argument("--purpose", choices=[x.value for x in Purpose])

    share = groups.add_parser("share", help="PHI sharing requests").add_subparsers(dest="command", required=True)
    p = command(share, "request", cmd_share_request, "authorize one sharing request")
    p.add_argument("--sender", required=True)
    p.add_argument("--receiver", required=True)
    p.add_argument("--patient", required=True)
    p.add_argument("--phi", required=True)
    p.add_argument("--purpose", required=True, choices=[x.value for x in Purpose])
    p.add_argument("--protection", required=True, help="JSON protection metadata")

    audit = groups.add_parser("audit", help="compliance audits").add_subparsers(dest="command", required=True)
    p = command(audit, "run", cmd_audit_run, "run one audit round")
    p.add_argument("--from-block", dest="from_block", type=int)
    p.add_argument("--to-block", dest="to_block", type=int)
    p.add_argument("--nodes", type=int)
    p.add_argument("--faulty", type=int)
    p.add_argument("--drop-rate", dest="drop_rate", type=float)
    p.add_argument("--scenario", help="JSON with nodes, faulty, drop_rate, drop_to, max_delay")
    p.add_argument("--out", help="also write the report to this file")

    chain = groups.add_parser("chain", help="audit chain").add_subparsers(dest="command", required=True)
    command(chain, "verify", cmd_chain_verify, "check every block against data, links and anchors")

    bench = groups.add_parser("bench", help="local benchmarks").add_subparsers(dest="command", required=True)
    p = command(bench, "consents", cmd_bench_consents, "time consent writes and reads")
    p.add_argument("--counts", help="'4..48' or '4,8,12'")
    p.add_argument("--step", type=int, default=4)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--no-fsync", dest="no_fsync", action="store_true")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    flags = {k: getattr(args, k, None) for k in ("data_dir", "config", "format", "clock", "seed", "max_batch")}
    flags["nodes"] = getattr(args, "nodes", None)
    flags["drop_rate"] = getattr(args, "drop_rate", None)
    try:
        cfg = resolve(flags)
        return args.func(args, cfg)
    except ConsentLedgerError as exc:
        _error(exc.code, exc.family, str(exc))
        return EXIT_BY_FAMILY.get(exc.family, EXIT_INTERNAL)
    except (CliError, ValueError, KeyError) as exc:
        _error(type(exc).__name__, "usage", str(exc))
        return EXIT_USAGE


def _error(code: str, family: str, message: str) -> None:
    sys.stderr.write(canonical_bytes({"error": code, "family": family, "message": message}).decode("utf-8") + "\n")


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
