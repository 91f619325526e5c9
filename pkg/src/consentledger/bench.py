"""Local consent write/read timings over the same count grid as the testnet tables.

Numbers are wall-clock medians on this machine with durable (fsync'd) writes.
They are only meaningful relative to each other and are not comparable to
public-testnet seconds.
"""

from __future__ import annotations

import statistics
import tempfile
import time
from dataclasses import dataclass
from typing import Any, Sequence

from .domain import DEFAULT_CATALOGUE, FixedClock, Purpose, SharingConsent
from .registry import ConsentRegistry, consent_list_digest

DEFAULT_COUNTS = tuple(range(4, 49, 4))
NOTE = "local medians; not comparable to testnet timings"


@dataclass(frozen=True)
class BenchRow:
    count: int
    write_median_s: float
    read_median_s: float
    write_cost: int

    def to_dict(self) -> dict[str, Any]:
        # microsecond ints keep the output inside the canonical (float-free) encoding
        return {
            "count": self.count,
            "write_median_us": round(self.write_median_s * 1e6),
            "read_median_us": round(self.read_median_s * 1e6),
            "write_cost": self.write_cost,
        }


def synthetic_consents(patient_id: str, count: int) -> list[SharingConsent]:
    phis = DEFAULT_CATALOGUE.ids()
    purposes = list(Purpose)
    out = []
    for i in range(count):
        out.append(SharingConsent.create(
            patient_id, f"sender-{i % 7}", f"receiver-{i}", phis[i % len(phis)],
            purposes[i % len(purposes)], 1_700_000_000 + i,
        ))
    return out


def _one_run(count: int, fsync: bool) -> tuple[float, float, int]:
    with tempfile.TemporaryDirectory(prefix="consentledger-bench-") as tmp:
        registry = ConsentRegistry(tmp, clock=FixedClock(), fsync=fsync)
        consents = synthetic_consents("bench-patient", count)
        expected = consent_list_digest(consents)
        t0 = time.perf_counter()
        address = registry.deploy_contract("bench-patient")
        registry.add_consents(address, consents, expected)
        t1 = time.perf_counter()
        listed = registry.list_consents(address)
        t2 = time.perf_counter()
        assert len(listed) == count
        return t1 - t0, t2 - t1, sum(c.cost for c in registry.costs)


def bench_consents(counts: Sequence[int] = DEFAULT_COUNTS, repeats: int = 5, fsync: bool = True) -> list[BenchRow]:
    rows = []
    for count in counts:
        runs = [_one_run(count, fsync) for _ in range(repeats)]
        rows.append(BenchRow(
            count,
            statistics.median(r[0] for r in runs),
            statistics.median(r[1] for r in runs),
            runs[0][2],
        ))
    return rows
