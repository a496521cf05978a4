"""Overlay membership and routing: routed paths, join, leave, lazy repair.

A node's view of the ring is its leaf set plus a prefix routing table; both
are repaired lazily when a timeout exposes a dead contact. stabilize() exists
for tests that want a converged view without replaying the repair traffic.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import ids
from .errors import (
    BootstrapUnreachableError,
    LivelockSuspectedError,
    NoSuchNodeError,
    RoutingFailureError,
)
from .ids import shared_prefix_len
from .routing import LeafSet, RoutingTable, next_hop_from_state
from .simnet import (
    Message,
    MessageKind,
    NodeStatus,
    Operation,
    SimNetwork,
    on_deliver,
    on_timeout,
)
from .store import NodeStore, StoreConfig, handoff_on_join, relinquish_roots


class OverlayNode:
    """One participant: routing state plus its component store."""

    def __init__(self, node_id: int, name: str | None = None,
                 store_config: StoreConfig | None = None):
        self.id = node_id
        self.name = name if name is not None else ids.to_hex(node_id)
        self.status = NodeStatus.JOINING
        self.leaf_set = LeafSet(node_id)
        self.routing_table = RoutingTable(node_id)
        self.store = NodeStore(store_config)

    def __repr__(self) -> str:
        return f"OverlayNode({self.name}, {self.status.value})"

    def next_hop(self, k: int) -> int:
        return next_hop_from_state(self.id, self.leaf_set, self.routing_table, k)

    def known_contacts(self) -> list[int]:
        return sorted(set(self.leaf_set.members()) | set(self.routing_table.entries()))

    def learn(self, candidate: int) -> bool:
        if candidate == self.id:
            return False
        in_leaf = self.leaf_set.insert(candidate)
        in_table = self.routing_table.insert(candidate)
        return in_leaf or in_table

    def forget(self, dead_id: int) -> bool:
        in_leaf = self.leaf_set.remove(dead_id)
        in_table = self.routing_table.remove(dead_id)
        return in_leaf or in_table

    def observe(self, net: SimNetwork, sender_id: int) -> None:
        """Passive learning: every delivered message advertises its sender."""
        if sender_id == self.id:
            return
        peer = net.nodes.get(sender_id)
        if peer is not None and peer.status is NodeStatus.LIVE:
            self.learn(sender_id)

    def repair(self, net: SimNetwork, dead_id: int) -> None:
        """Drop a contact that timed out; losing a leaf member triggers a
        refill request toward the remaining extremes."""
        was_member = self.leaf_set.remove(dead_id)
        self.routing_table.remove(dead_id)
        if not was_member or self.status is NodeStatus.DEPARTED:
            return
        targets = self.leaf_set.extremes()
        if not targets:
            # Whole leaf set gone; fall back on table contacts for a refill.
            targets = self.routing_table.entries()[:2]
        for target in targets:
            net.post(self.id, target, MessageKind.REPAIR)


def next_hop(node: OverlayNode, k: int) -> int:
    return node.next_hop(k)


def _require_live(net: SimNetwork, node_id: int) -> OverlayNode:
    node = net.node(node_id)
    if node.status is not NodeStatus.LIVE:
        raise NoSuchNodeError(f"node {ids.to_hex(node_id)} is not live")
    return node


# --------------------------------------------------------------------------
# route


class RouteOp(Operation):
    kind = "route"

    def __init__(self, key: int):
        super().__init__()
        self.key = key
        self.path: list[int] = []


def route(net: SimNetwork, start: int, k: int) -> list[int]:
    """Follow next_hop from start until some node names itself. The endpoint
    is the key's root. A mid-route timeout raises with the partial path; the
    caller decides whether to retry."""
    node = _require_live(net, start)
    op = net.new_op(RouteOp(k))
    _route_advance(net, node, op)
    path: list[int] = net.drive(op)
    net.metrics.record_op("route", hops=len(path) - 1)
    return path


def _route_advance(net: SimNetwork, node: OverlayNode, op: RouteOp) -> None:
    if not op.path or op.path[-1] != node.id:
        op.path.append(node.id)
    nh = node.next_hop(op.key)
    if nh == node.id:
        net.complete_op(op, list(op.path))
        return
    if nh in op.path:
        net.fail_op(op, RoutingFailureError(
            f"route for {ids.to_hex(op.key)} revisited {ids.to_hex(nh)}",
            partial_path=list(op.path)))
        return
    net.post(node.id, nh, MessageKind.ROUTE_STEP, op=op)


@on_deliver(MessageKind.ROUTE_STEP)
def _route_step_deliver(net: SimNetwork, node, msg: Message) -> None:
    op = net.ops.get(msg.op_id)
    if isinstance(op, RouteOp) and not op.done:
        _route_advance(net, node, op)


@on_timeout(MessageKind.ROUTE_STEP)
def _route_step_timeout(net: SimNetwork, msg: Message) -> None:
    op = net.ops.get(msg.op_id)
    if not isinstance(op, RouteOp) or op.done:
        return
    net.fail_op(op, RoutingFailureError(
        f"hop {ids.to_hex(msg.to_id)} unresponsive", partial_path=list(op.path)))


# --------------------------------------------------------------------------
# join


@dataclass
class JoinReport:
    new_id: int
    bootstrap: int | None
    path: list[int]  # nodes the join request crossed, bootstrap first
    announced: list[int]
    transferred: list[int]  # keys handed over to the joiner
    unresolved: list[int]  # keys whose handoff never completed


class JoinOp(Operation):
    kind = "join"

    def __init__(self, new_id: int, bootstrap: int):
        super().__init__()
        self.new_id = new_id
        self.bootstrap = bootstrap
        self.path: list[int] = []
        self.candidates: set[int] = set()
        self.pending_acks = 0
        self.announced: list[int] = []


def join(net: SimNetwork, new_id: int, bootstrap: int | None,
         name: str | None = None) -> JoinReport:
    """Bring a new node into the ring via one existing contact.

    The join request routes from the bootstrap toward the new id; every node
    it crosses contributes routing rows, the terminal contributes its leaf
    set. The joiner then announces itself to everyone it learned about, and
    finally its new leaf neighbours hand over the keys it now roots.
    """
    if bootstrap is None:
        if net.live_ids():
            raise BootstrapUnreachableError(
                "a bootstrap contact is required unless the network is empty")
        node = OverlayNode(new_id, name=name, store_config=net.store_config)
        net.register(node)
        node.status = NodeStatus.LIVE
        net.metrics.record_op("join", hops=0)
        return JoinReport(new_id, None, [], [], [], [])

    boot = net.nodes.get(bootstrap)
    if boot is None or boot.status is not NodeStatus.LIVE:
        raise BootstrapUnreachableError(f"bootstrap {ids.to_hex(bootstrap)} is not live")
    node = OverlayNode(new_id, name=name, store_config=net.store_config)
    net.register(node)
    op = net.new_op(JoinOp(new_id, bootstrap))
    net.post(new_id, bootstrap, MessageKind.JOIN, op=op)
    try:
        net.drive(op)
    except Exception:
        # The id never became LIVE; leave it departed so stale references
        # aimed at it clean up through the normal timeout path.
        node.status = NodeStatus.DEPARTED
        raise
    node.status = NodeStatus.LIVE
    transferred, unresolved = handoff_on_join(net, new_id)
    net.metrics.record_op("join", hops=len(op.path))
    return JoinReport(new_id, bootstrap, list(op.path), list(op.announced),
                      transferred, unresolved)


def _join_advance(net: SimNetwork, node: OverlayNode, op: JoinOp) -> None:
    if not op.path or op.path[-1] != node.id:
        op.path.append(node.id)
    op.candidates.add(node.id)
    # Rows 0..r of this node's table all hold ids agreeing with the joiner on
    # at least their row's prefix, so they seed the joiner's own rows.
    r = shared_prefix_len(node.id, op.new_id)
    for row in range(min(r + 1, ids.DIGITS)):
        op.candidates.update(node.routing_table.row_entries(row))
    nh = node.next_hop(op.new_id)
    if nh == op.new_id:
        # Stale reference from an earlier life of this id; the joiner cannot
        # be its own terminal.
        node.forget(op.new_id)
        nh = node.next_hop(op.new_id)
    if nh == node.id:
        op.candidates.update(node.leaf_set.members())
        net.post(node.id, op.new_id, MessageKind.JOIN_REPLY, op=op)
        return
    net.post(node.id, nh, MessageKind.JOIN, op=op)


@on_deliver(MessageKind.JOIN)
def _join_deliver(net: SimNetwork, node, msg: Message) -> None:
    op = net.ops.get(msg.op_id)
    if isinstance(op, JoinOp) and not op.done:
        _join_advance(net, node, op)


@on_timeout(MessageKind.JOIN)
def _join_timeout(net: SimNetwork, msg: Message) -> None:
    op = net.ops.get(msg.op_id)
    if not isinstance(op, JoinOp) or op.done:
        return
    sender = net.nodes.get(msg.from_id)
    if sender is None or sender.status is NodeStatus.DEPARTED:
        net.fail_op(op, RoutingFailureError(
            "join path node died", partial_path=list(op.path)))
        return
    op.retries += 1
    if op.retries > net.config.retries:
        if not op.path:
            net.fail_op(op, BootstrapUnreachableError(
                f"bootstrap {ids.to_hex(op.bootstrap)} never answered"))
        else:
            net.fail_op(op, RoutingFailureError(
                "join routing exhausted retries", partial_path=list(op.path)))
        return
    if sender.id == op.new_id:
        # First hop: the joiner itself re-contacts the bootstrap.
        net.post(op.new_id, op.bootstrap, MessageKind.JOIN, op=op)
    else:
        _join_advance(net, sender, op)


@on_deliver(MessageKind.JOIN_REPLY)
def _join_reply_deliver(net: SimNetwork, node, msg: Message) -> None:
    op = net.ops.get(msg.op_id)
    if not isinstance(op, JoinOp) or op.done:
        return
    joiner: OverlayNode = node
    for cand in sorted(op.candidates):
        peer = net.nodes.get(cand)
        if cand != joiner.id and peer is not None and peer.status is NodeStatus.LIVE:
            joiner.learn(cand)
    targets = joiner.known_contacts()
    op.announced = targets
    op.pending_acks = len(targets)
    if not targets:
        net.complete_op(op, None)
        return
    for target in targets:
        net.post(joiner.id, target, MessageKind.ANNOUNCE, op=op)


@on_timeout(MessageKind.JOIN_REPLY)
def _join_reply_timeout(net: SimNetwork, msg: Message) -> None:
    op = net.ops.get(msg.op_id)
    if isinstance(op, JoinOp) and not op.done:
        net.fail_op(op, RoutingFailureError(
            "joiner unreachable for its join reply", partial_path=list(op.path)))


@on_deliver(MessageKind.ANNOUNCE)
def _announce_deliver(net: SimNetwork, node, msg: Message) -> None:
    # The sender is still JOINING, so passive observation skipped it; an
    # announcement is the explicit instruction to adopt it.
    node.learn(msg.from_id)
    net.post(node.id, msg.from_id, MessageKind.ANNOUNCE_ACK,
             op=net.ops.get(msg.op_id))


@on_timeout(MessageKind.ANNOUNCE)
def _announce_timeout(net: SimNetwork, msg: Message) -> None:
    op = net.ops.get(msg.op_id)
    if not isinstance(op, JoinOp) or op.done:
        return
    op.pending_acks -= 1
    if op.pending_acks <= 0:
        net.complete_op(op, None)


@on_deliver(MessageKind.ANNOUNCE_ACK)
def _announce_ack_deliver(net: SimNetwork, node, msg: Message) -> None:
    op = net.ops.get(msg.op_id)
    if not isinstance(op, JoinOp) or op.done:
        return
    op.pending_acks -= 1
    if op.pending_acks <= 0:
        net.complete_op(op, None)


# --------------------------------------------------------------------------
# leave


@dataclass
class LeaveReport:
    node_id: int
    graceful: bool
    transferred: list[tuple[int, int]]  # (key, node that took the root role)
    unresolved: list[int]


def leave(net: SimNetwork, node_id: int, graceful: bool = True) -> LeaveReport:
    """Take a node out of the ring.

    Graceful departure first re-homes every ROOT entry onto the member that
    becomes the key's new root, then says goodbye to every known contact so
    leaf sets mend immediately. An abrupt departure just goes silent and
    leaves repair to timeouts.
    """
    node = net.nodes.get(node_id)
    if node is None or node.status is not NodeStatus.LIVE:
        raise NoSuchNodeError(f"no live node {ids.to_hex(node_id)}")
    if not graceful:
        net.fail(node_id)
        net.metrics.record_op("leave")
        return LeaveReport(node_id, False, [], [])
    transferred, unresolved = relinquish_roots(net, node)
    members = node.leaf_set.members()
    for contact in node.known_contacts():
        net.post(node_id, contact, MessageKind.GOODBYE, {"members": members})
    net.run_until_quiescent()
    node.status = NodeStatus.DEPARTED
    net.metrics.record_op("leave")
    return LeaveReport(node_id, True, transferred, unresolved)


@on_deliver(MessageKind.GOODBYE)
def _goodbye_deliver(net: SimNetwork, node, msg: Message) -> None:
    node.forget(msg.from_id)
    for member in msg.data.get("members", []):
        peer = net.nodes.get(member)
        if member != node.id and peer is not None and peer.status is NodeStatus.LIVE:
            node.learn(member)


# --------------------------------------------------------------------------
# leaf repair


@on_deliver(MessageKind.REPAIR)
def _repair_deliver(net: SimNetwork, node, msg: Message) -> None:
    net.post(node.id, msg.from_id, MessageKind.REPAIR_REPLY,
             {"members": node.leaf_set.members()})


@on_deliver(MessageKind.REPAIR_REPLY)
def _repair_reply_deliver(net: SimNetwork, node, msg: Message) -> None:
    for member in msg.data.get("members", []):
        peer = net.nodes.get(member)
        if member != node.id and peer is not None and peer.status is NodeStatus.LIVE:
            node.learn(member)


def stabilize(net: SimNetwork, max_rounds: int | None = None) -> int:
    """Pull leaf-set knowledge to a fixpoint, pruning dead contacts.

    Reads neighbour state directly instead of messaging, so it is a test and
    maintenance helper rather than part of the protocol. Returns the number
    of gossip rounds used.
    """
    live = net.live_ids()
    limit = max_rounds if max_rounds is not None else len(live) + 8
    rounds = 0
    while True:
        changed = False
        for nid in live:
            node = net.nodes[nid]
            for contact in node.known_contacts():
                peer = net.nodes.get(contact)
                if peer is None or peer.status is not NodeStatus.LIVE:
                    if node.forget(contact):
                        changed = True
            for member in node.leaf_set.members():
                peer = net.nodes.get(member)
                if peer is None:
                    continue
                for second in peer.leaf_set.members():
                    second_node = net.nodes.get(second)
                    if second != nid and second_node is not None \
                            and second_node.status is NodeStatus.LIVE:
                        if node.learn(second):
                            changed = True
        rounds += 1
        if not changed:
            return rounds
        if rounds >= limit:
            raise LivelockSuspectedError("leaf gossip failed to converge")
