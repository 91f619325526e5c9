from __future__ import annotations

import itertools
import json
from collections import Counter
from dataclasses import replace

import pytest
from hypothesis import given
from hypothesis import strategies as st

from consentledger.auditchain import AnchorKind
from consentledger.domain import digest_value, sign
from consentledger.errors import CommitterUnreachable, InsufficientAuditors
from consentledger.poc import (
    AuditorNode,
    Behavior,
    ComplianceReport,
    ComplianceStatus,
    Role,
    aggregate,
    apply_behavior,
    build_transactions,
    make_nodes,
    phase_compliance,
    run_audit,
)

from support import build_history

C, NC, ND = ComplianceStatus.COMPLIANT, ComplianceStatus.NON_COMPLIANT, ComplianceStatus.NON_DETERMINED


def oracle_aggregate(votes):
    for status in (C, NC, ND):
        if sum(v == status for v in votes) > len(votes) / 2:
            return status
    return ND


@given(st.lists(st.sampled_from([C, NC, ND]), max_size=9))
def test_aggregate_matches_majority_oracle(votes):
    assert aggregate(votes) == oracle_aggregate(votes)


def test_aggregate_exhaustive_small():
    for n in range(0, 6):
        for votes in itertools.product([C, NC, ND], repeat=n):
            assert aggregate(list(votes)) == oracle_aggregate(votes)


def test_behaviors():
    verdicts = {"t1": C, "t2": NC, "t3": ND}
    assert apply_behavior(Behavior.HONEST, verdicts) == verdicts
    assert apply_behavior(Behavior.INVERTER, verdicts) == {"t1": NC, "t2": C, "t3": C}
    assert apply_behavior(Behavior.ABSTAINER, verdicts) is None


def test_make_nodes_roles():
    nodes = make_nodes(5, 2)
    assert nodes[0].has(Role.COMMITTER) and nodes[0].has(Role.ORDER) and nodes[0].has(Role.VALIDATOR)
    assert [n.behavior for n in nodes] == [Behavior.HONEST] * 3 + [Behavior.INVERTER] * 2
    with pytest.raises(ValueError):
        make_nodes(2, 3)


@pytest.fixture(scope="module")
def history():
    return build_history(21, n_trails=60, anomalies=12, max_batch=10)


def test_honest_nodes_agree(history):
    ws = history.ws
    txns = build_transactions(ws.chain, ws.keyring)
    snapshots = [ws.registry.snapshot() for _ in range(3)]
    results = [phase_compliance(txns, s, ws.ppas.policies_for, ws.keyring) for s in snapshots]
    assert results[0] == results[1] == results[2]


def test_report_matches_ground_truth_and_is_anchored(history):
    ws = history.ws
    anchors_before = len(ws.anchors)
    report = ws.audit(nodes=5, seed=1)
    truth = {e.trail_id: e.expected for e in history.log}
    assert report.final_by_trail() == truth
    assert Counter(truth.values())[NC] > 0 and Counter(truth.values())[ND] > 0
    entry = ws.anchors.get(AnchorKind.COMPLIANCE_REPORT, len(ws.reports) - 1)
    assert entry.anchored_hash == digest_value(report)
    assert len(ws.anchors) == anchors_before + 1
    assert ComplianceReport.from_dict(json.loads(report.to_json())).to_json() == report.to_json()
    assert ws.reports.latest_status(history.log[0].trail_id) == truth[history.log[0].trail_id]


def test_block_range_limits_scope(history):
    report = history.ws.audit(block_range=range(1, 3), record=False)
    assert {r.block_id for r in report.results} == {1, 2}
    assert report.block_range == (1, 2)


def test_bad_submitter_signature_is_invalid(history):
    ws = history.ws
    txns = build_transactions(ws.chain, ws.keyring, range(0, 1))
    forged = replace(txns[0], submitter_signature=replace(txns[1].submitter_signature))
    report = run_audit(ws.chain, ws.registry, make_nodes(3), ws.keyring,
                       transactions=[forged] + txns[1:], policies_for=ws.ppas.policies_for)
    assert report.invalid == [forged.txn_id]
    assert next(r for r in report.results if r.txn_id == forged.txn_id).final == ND


def test_trail_not_in_block_is_rejected(history):
    ws = history.ws
    txns = build_transactions(ws.chain, ws.keyring, range(0, 1))
    moved = replace(txns[0], block_id=1)
    moved = replace(moved, submitter_signature=sign(ws.keyring.key(moved.submitter), moved.trail.to_dict()))
    report = run_audit(ws.chain, ws.registry, make_nodes(3), ws.keyring,
                       transactions=[moved], policies_for=ws.ppas.policies_for)
    assert report.rejected == [{"txn_id": moved.txn_id, "reason": "trail not found in referenced block"}]


def test_abstainers_and_unreachable_committer(history):
    ws = history.ws
    nodes = make_nodes(5, 2, Behavior.ABSTAINER)
    report = ws.audit(node_list=nodes, record=False)
    assert all(len(r.verdicts) == 3 for r in report.results if r.txn_id in report.accepted)
    with pytest.raises(CommitterUnreachable):
        ws.audit(nodes=5, drop_to={"auditor-01": 1.0}, record=False)


def test_dropped_messages_reduce_votes_deterministically(history):
    ws = history.ws
    a = ws.audit(nodes=7, seed=5, drop_rate=0.3, record=False)
    b = ws.audit(nodes=7, seed=5, drop_rate=0.3, record=False)
    # the shared clock moves on between rounds, so only the commit time may differ
    assert replace(a, committed_at=0).to_json() == replace(b, committed_at=0).to_json()
    assert a.dropped_messages > 0


def test_insufficient_auditors(history):
    with pytest.raises(InsufficientAuditors):
        history.ws.audit(nodes=2, record=False)
    no_committer = [AuditorNode(f"n{i}", frozenset({Role.AUDIT, Role.ORDER, Role.VALIDATOR})) for i in range(3)]
    with pytest.raises(InsufficientAuditors):
        history.ws.audit(node_list=no_committer, record=False)
