"""Deterministic discrete-event message transport between overlay nodes.

Time is an integer tick counter. Every message becomes exactly one delivery
or one timeout event; events dequeue in (time, insertion sequence) order, so
a run with the same seed and the same call sequence replays bit-exactly.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Optional

from . import ids
from .errors import (
    DuplicateNodeError,
    LivelockSuspectedError,
    NoSuchNodeError,
)


class NodeStatus(Enum):
    JOINING = "JOINING"
    LIVE = "LIVE"
    DEPARTED = "DEPARTED"


class MessageKind(Enum):
    JOIN = "JOIN"
    JOIN_REPLY = "JOIN_REPLY"
    ANNOUNCE = "ANNOUNCE"
    ANNOUNCE_ACK = "ANNOUNCE_ACK"
    ROUTE_STEP = "ROUTE_STEP"
    PUBLISH = "PUBLISH"
    PUBLISH_ACK = "PUBLISH_ACK"
    LOOKUP = "LOOKUP"
    LOOKUP_REPLY = "LOOKUP_REPLY"
    FETCH = "FETCH"
    FETCH_REPLY = "FETCH_REPLY"
    REMOVE = "REMOVE"
    REMOVE_REPLY = "REMOVE_REPLY"
    TRANSFER = "TRANSFER"
    TRANSFER_ACK = "TRANSFER_ACK"
    HANDOFF = "HANDOFF"
    HANDOFF_DONE = "HANDOFF_DONE"
    GOODBYE = "GOODBYE"
    REPAIR = "REPAIR"
    REPAIR_REPLY = "REPAIR_REPLY"


@dataclass
class SimConfig:
    latency_min: int = 10
    latency_max: int = 100  # exclusive
    timeout: int = 500
    retries: int = 3
    maintenance_interval: int = 100

    def __post_init__(self):
        if self.latency_min < 0 or self.latency_max <= self.latency_min:
            raise ValueError("latency bounds must satisfy 0 <= min < max")
        if self.timeout <= self.latency_max:
            raise ValueError("timeout must exceed the maximum latency")


@dataclass
class Message:
    kind: MessageKind
    from_id: int
    to_id: int
    data: dict[str, Any] = field(default_factory=dict)
    op_id: Optional[int] = None
    # assigned when the message enters the network
    seq: int = -1
    sent_at: int = -1
    deadline: int = -1


class Operation:
    """Bookkeeping for one driven protocol exchange (route, publish, ...)."""

    kind = "op"

    def __init__(self):
        self.op_id: int | None = None
        self.done = False
        self.result: Any = None
        self.error: Exception | None = None
        self.retries = 0


DeliverHandler = Callable[["SimNetwork", Any, Message], None]
TimeoutHandler = Callable[["SimNetwork", Message], None]

_DELIVER: dict[MessageKind, DeliverHandler] = {}
_TIMEOUT: dict[MessageKind, TimeoutHandler] = {}


def on_deliver(kind: MessageKind):
    def wrap(fn: DeliverHandler) -> DeliverHandler:
        _DELIVER[kind] = fn
        return fn

    return wrap


def on_timeout(kind: MessageKind):
    def wrap(fn: TimeoutHandler) -> TimeoutHandler:
        _TIMEOUT[kind] = fn
        return fn

    return wrap


class Metrics:
    """Monotone counters plus point-in-time store snapshots."""

    def __init__(self):
        self.sent: dict[str, int] = {}
        self.delivered: dict[str, int] = {}
        self.timeouts: dict[str, int] = {}
        self.op_counts: dict[str, int] = {}
        self.op_failures: dict[str, int] = {}
        self.hop_histograms: dict[str, dict[int, int]] = {}
        self.events_processed = 0
        self.evictions = 0
        self.node_failures = 0
        self.dumps: list[dict[str, Any]] = []
        self.replica_samples: list[dict[str, Any]] = []
        self.assertions: list[dict[str, Any]] = []
        self.workloads: list[dict[str, Any]] = []

    @staticmethod
    def _bump(table: dict[str, int], key: str, by: int = 1) -> None:
        table[key] = table.get(key, 0) + by

    def count_sent(self, kind: MessageKind) -> None:
        self._bump(self.sent, kind.value)

    def count_delivered(self, kind: MessageKind) -> None:
        self._bump(self.delivered, kind.value)

    def count_timeout(self, kind: MessageKind) -> None:
        self._bump(self.timeouts, kind.value)

    def record_op(self, op_kind: str, hops: int | None = None, failed: bool = False) -> None:
        self._bump(self.op_counts, op_kind)
        if failed:
            self._bump(self.op_failures, op_kind)
        if hops is not None:
            hist = self.hop_histograms.setdefault(op_kind, {})
            hist[hops] = hist.get(hops, 0) + 1

    def to_document(self, net: "SimNetwork") -> dict[str, Any]:
        ops: dict[str, Any] = {}
        for op_kind in sorted(self.op_counts):
            hist = self.hop_histograms.get(op_kind, {})
            total = sum(hist.values())
            weighted = sum(h * c for h, c in hist.items())
            ops[op_kind] = {
                "count": self.op_counts[op_kind],
                "failures": self.op_failures.get(op_kind, 0),
                "hops": {
                    "histogram": {str(h): hist[h] for h in sorted(hist)},
                    "mean": round(weighted / total, 6) if total else 0.0,
                    "max": max(hist) if hist else 0,
                },
            }
        return {
            "clock": net.clock,
            "seed": net.seed,
            "config": {
                "latency_min": net.config.latency_min,
                "latency_max": net.config.latency_max,
                "timeout": net.config.timeout,
                "retries": net.config.retries,
                "maintenance_interval": net.config.maintenance_interval,
            },
            "messages": {
                "sent": dict(sorted(self.sent.items())),
                "delivered": dict(sorted(self.delivered.items())),
                "timeouts": dict(sorted(self.timeouts.items())),
            },
            "operations": ops,
            "events_processed": self.events_processed,
            "evictions": self.evictions,
            "node_failures": self.node_failures,
            "live_nodes": len(net.live_ids()),
            "dumps": self.dumps,
            "replica_samples": self.replica_samples,
            "assertions": self.assertions,
            "workloads": self.workloads,
        }


def serialize_metrics(document: dict[str, Any]) -> str:
    """Canonical JSON text: sorted keys, tight separators, one trailing newline."""
    return json.dumps(document, sort_keys=True, separators=(",", ":")) + "\n"


class SimNetwork:
    def __init__(self, seed: int = 0, config: SimConfig | None = None, store_config=None):
        self.seed = seed
        self.config = config or SimConfig()
        self.store_config = store_config
        self.clock = 0
        self.rng = random.Random(seed)
        self.nodes: dict[int, Any] = {}
        self.metrics = Metrics()
        self.ops: dict[int, Operation] = {}
        self._queue: list[tuple[int, int, str, Message]] = []
        self._seq = 0
        self._op_seq = 0
        self._pair_seq: dict[tuple[int, int], int] = {}

    # --- registry ---

    def register(self, node) -> None:
        existing = self.nodes.get(node.id)
        if existing is not None and existing.status is not NodeStatus.DEPARTED:
            raise DuplicateNodeError(f"node {ids.to_hex(node.id)} already present")
        self.nodes[node.id] = node

    def node(self, node_id: int):
        node = self.nodes.get(node_id)
        if node is None:
            raise NoSuchNodeError(f"unknown node {ids.to_hex(node_id)}")
        return node

    def live_ids(self) -> list[int]:
        return sorted(i for i, n in self.nodes.items() if n.status is NodeStatus.LIVE)

    def is_deliverable(self, node_id: int) -> bool:
        node = self.nodes.get(node_id)
        return node is not None and node.status is not NodeStatus.DEPARTED

    # --- operations ---

    def new_op(self, op: Operation) -> Operation:
        self._op_seq += 1
        op.op_id = self._op_seq
        self.ops[op.op_id] = op
        return op

    def complete_op(self, op: Operation, result: Any) -> None:
        op.result = result
        op.done = True

    def fail_op(self, op: Operation, error: Exception) -> None:
        op.error = error
        op.done = True

    def drive(self, op: Operation) -> Any:
        """Run the event loop until op finishes, then drain stragglers."""
        if op.op_id is None:
            self.new_op(op)
        while not op.done and self._queue:
            self._step()
        if not op.done:
            raise LivelockSuspectedError(f"{op.kind} stalled with an empty event queue")
        self.run_until_quiescent()
        self.ops.pop(op.op_id, None)
        if op.error is not None:
            raise op.error
        return op.result

    # --- transport ---

    def _latency(self, from_id: int, to_id: int) -> int:
        # Keyed by (seed, endpoints, per-pair sequence) so delivery times replay
        # regardless of unrelated rng consumption.
        n = self._pair_seq.get((from_id, to_id), 0) + 1
        self._pair_seq[(from_id, to_id)] = n
        material = f"{self.seed}:{from_id:032x}:{to_id:032x}:{n}".encode()
        h = hashlib.blake2b(material, digest_size=8).digest()
        span = self.config.latency_max - self.config.latency_min
        return self.config.latency_min + int.from_bytes(h, "big") % span

    def _push(self, time: int, tag: str, msg: Message) -> None:
        self._seq += 1
        heapq.heappush(self._queue, (time, self._seq, tag, msg))

    def send(self, msg: Message) -> Message:
        sender = self.node(msg.from_id)
        if sender.status is NodeStatus.DEPARTED:
            raise NoSuchNodeError("departed nodes cannot send")
        msg.seq = self._seq + 1
        msg.sent_at = self.clock
        msg.deadline = self.clock + self.config.timeout
        self.metrics.count_sent(msg.kind)
        if not self.is_deliverable(msg.to_id):
            self._push(msg.deadline, "timeout", msg)
        else:
            self._push(self.clock + self._latency(msg.from_id, msg.to_id), "deliver", msg)
        return msg

    def post(self, from_id: int, to_id: int, kind: MessageKind,
             data: dict[str, Any] | None = None, op: Operation | None = None) -> Message:
        return self.send(Message(kind=kind, from_id=from_id, to_id=to_id,
                                 data=data or {}, op_id=op.op_id if op else None))

    # --- event loop ---

    def _step(self) -> None:
        time, _, tag, msg = heapq.heappop(self._queue)
        if time > self.clock:
            self.clock = time
        self.metrics.events_processed += 1
        if tag == "deliver":
            target = self.nodes.get(msg.to_id)
            if target is None or target.status is NodeStatus.DEPARTED:
                # Receiver died while the message was in flight.
                self._push(max(msg.deadline, self.clock), "timeout", msg)
                return
            self.metrics.count_delivered(msg.kind)
            target.observe(self, msg.from_id)
            handler = _DELIVER.get(msg.kind)
            if handler is not None:
                handler(self, target, msg)
        else:
            self.metrics.count_timeout(msg.kind)
            sender = self.nodes.get(msg.from_id)
            if sender is not None and sender.status is not NodeStatus.DEPARTED:
                sender.repair(self, msg.to_id)
            handler = _TIMEOUT.get(msg.kind)
            if handler is not None:
                handler(self, msg)

    def run_until_quiescent(self, max_ticks: int | None = None) -> int:
        start = self.clock
        while self._queue:
            if max_ticks is not None and self.clock - start > max_ticks:
                raise LivelockSuspectedError(
                    f"queue still has {len(self._queue)} events after {max_ticks} ticks")
            self._step()
        return self.clock - start

    def advance(self, ticks: int) -> None:
        """Process everything due within `ticks`, sweeping eviction at each
        maintenance boundary, then move the clock to the target."""
        target = self.clock + ticks
        interval = self.config.maintenance_interval
        boundary = (self.clock // interval + 1) * interval
        while True:
            horizon = min(boundary, target)
            while self._queue and self._queue[0][0] <= horizon:
                self._step()
            if boundary > target:
                break
            if self.clock < boundary:
                self.clock = boundary
            self.sweep_eviction()
            boundary += interval
        if self.clock < target:
            self.clock = target

    def sweep_eviction(self) -> int:
        evicted = 0
        for node_id in self.live_ids():
            evicted += len(self.nodes[node_id].store.evict(self.clock))
        self.metrics.evictions += evicted
        return evicted

    # --- failure injection ---

    def fail(self, node_id: int) -> None:
        node = self.nodes.get(node_id)
        if node is None or node.status is NodeStatus.DEPARTED:
            raise NoSuchNodeError(f"no live node {ids.to_hex(node_id)}")
        node.status = NodeStatus.DEPARTED
        self.metrics.node_failures += 1


# Module-level forms of the network verbs, matching how the other layers
# expose their operations.

def send(net: SimNetwork, msg: Message) -> Message:
    return net.send(msg)


def run_until_quiescent(net: SimNetwork, max_ticks: int | None = None) -> int:
    return net.run_until_quiescent(max_ticks)


def fail(net: SimNetwork, node_id: int) -> None:
    net.fail(node_id)
