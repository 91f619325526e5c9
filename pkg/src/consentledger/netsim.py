"""Seeded message-passing network used by the compliance auditors.

Delivery decisions (drop or delay) are drawn from a RNG seeded once per
``deliver_all`` call, after sorting the outbox, so the schedule depends only
on the configuration and the set of messages sent, never on thread timing.
"""

from __future__ import annotations

import random
import threading
from dataclasses import dataclass, field
from typing import Any, Mapping


@dataclass(frozen=True)
class NetConfig:
    seed: int = 0
    drop_rate: float = 0.0
    max_delay: int = 0
    # per-destination override of drop_rate
    drop_to: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for rate in (self.drop_rate, *self.drop_to.values()):
            if not 0.0 <= rate <= 1.0:
                raise ValueError(f"drop rate {rate} outside [0, 1]")
        if self.max_delay < 0:
            raise ValueError("max_delay must be >= 0")

    def rate_for(self, dst: str) -> float:
        return self.drop_to.get(dst, self.drop_rate)


@dataclass(frozen=True)
class Message:
    src: str
    dst: str
    seq: int
    payload: Any


class Network:
    def __init__(self, config: NetConfig | None = None) -> None:
        self.config = config or NetConfig()
        self._outbox: list[Message] = []
        self._per_src: dict[str, int] = {}
        self._lock = threading.Lock()
        self.trace: list[dict[str, Any]] = []

    def send(self, src: str, dst: str, payload: Any) -> None:
        with self._lock:
            seq = self._per_src.get(src, 0)
            self._per_src[src] = seq + 1
            self._outbox.append(Message(src, dst, seq, payload))

    def deliver_all(self) -> dict[str, list[Message]]:
        """Flush the outbox; returns delivered messages per destination in arrival order."""
        with self._lock:
            pending = sorted(self._outbox, key=lambda m: (m.src, m.seq, m.dst))
            self._outbox = []
        rng = random.Random(self.config.seed)
        scheduled: list[tuple[int, str, int, Message]] = []
        for msg in pending:
            # draw both numbers for every message so the stream stays aligned
            roll = rng.random()
            delay = rng.randint(0, self.config.max_delay)
            if roll < self.config.rate_for(msg.dst):
                self.trace.append({"event": "dropped", "src": msg.src, "dst": msg.dst, "seq": msg.seq})
                continue
            scheduled.append((delay, msg.src, msg.seq, msg))
        scheduled.sort(key=lambda s: s[:3])
        inbox: dict[str, list[Message]] = {}
        for delay, _, _, msg in scheduled:
            self.trace.append({"event": "delivered", "src": msg.src, "dst": msg.dst, "seq": msg.seq, "at": delay})
            inbox.setdefault(msg.dst, []).append(msg)
        return inbox

    def dropped(self) -> list[dict[str, Any]]:
        return [t for t in self.trace if t["event"] == "dropped"]
