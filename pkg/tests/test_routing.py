"""Leaf set, routing table, and forwarding rules.

next_hop is compared against a hex-string restatement of the same rules in
oracles.py, both on organically grown networks and on synthetic state.
"""

import random

from peerdeploy.ids import circular_distance, digit, shared_prefix_len
from peerdeploy.routing import (
    HALF_LEAF,
    LeafSet,
    RoutingTable,
    next_hop_from_state,
)
from peerdeploy.scenario import build_network
from oracles import oracle_next_hop

RING = 1 << 128


def make_state(owner: int, others: list[int]) -> tuple[LeafSet, RoutingTable]:
    leaf = LeafSet(owner)
    table = RoutingTable(owner)
    for other in others:
        leaf.insert(other)
        table.insert(other)
    return leaf, table


def snapshot_cells(table: RoutingTable) -> dict:
    return {(row, column): nid
            for row in range(32)
            for column, nid in table.rows[row].items()}


# -- leaf set mechanics


def test_leaf_set_keeps_nearest_per_side():
    owner = 1000
    leaf = LeafSet(owner)
    for other in range(1001, 1020):
        leaf.insert(other)
    for other in range(900, 990, 10):
        leaf.insert(other)
    members = leaf.members()
    assert len([m for m in members if (m - owner) % RING <= RING // 2]) == HALF_LEAF
    # nearest clockwise survivors
    assert set(range(1001, 1001 + HALF_LEAF)) <= set(members)
    assert 1019 not in members


def test_leaf_set_insert_reports_change():
    leaf = LeafSet(50)
    assert leaf.insert(60) is True
    assert leaf.insert(60) is False
    assert leaf.insert(50) is False  # self never enters


def test_leaf_set_remove():
    leaf = LeafSet(50)
    leaf.insert(60)
    assert leaf.remove(60) is True
    assert leaf.remove(60) is False
    assert leaf.members() == []


def test_leaf_set_closest_includes_owner():
    leaf = LeafSet(100)
    leaf.insert(200)
    assert leaf.closest_to(110) == 100
    assert leaf.closest_to(190) == 200


def test_leaf_set_in_range_covers_span():
    # enough distinct nodes that the two sides genuinely diverge
    owner = 0
    leaf = LeafSet(owner)
    for other in (10, 20, 30, 40, RING - 10, RING - 20, RING - 30, RING - 40):
        leaf.insert(other)
    assert leaf.in_range(35)
    assert leaf.in_range(RING - 35)
    assert not leaf.in_range(RING // 2)
    assert not leaf.in_range(50)


def test_leaf_set_wraps_ring_when_tiny():
    # with fewer members than a full side, both sides list everyone and the
    # covered range is the whole ring
    leaf = LeafSet(0)
    for other in (100, RING - 100):
        leaf.insert(other)
    assert leaf.in_range(RING // 2)
    assert leaf.closest_to(RING // 2) in (100, RING - 100)


# -- routing table mechanics


def test_routing_table_cell_placement():
    owner = int("a" * 32, 16)
    other = int("ab" + "0" * 30, 16)
    table = RoutingTable(owner)
    assert table.insert(other) is True
    row = shared_prefix_len(owner, other)
    assert table.get(row, digit(other, row)) == other


def test_routing_table_keeps_first_occupant():
    owner = 0
    first = int("f" + "0" * 31, 16)
    second = int("f" + "1" * 31, 16)
    table = RoutingTable(owner)
    assert table.insert(first)
    assert table.insert(second) is False  # same cell: row 0, digit f... no
    # second differs in row 0 digit? both start with f, so both land in
    # row 0 column f; the first stays
    assert table.get(0, 15) == first


def test_routing_table_rejects_self():
    table = RoutingTable(42)
    assert table.insert(42) is False


def test_routing_table_remove_only_exact():
    owner = 0
    first = int("f" + "0" * 31, 16)
    second = int("f" + "1" * 31, 16)
    table = RoutingTable(owner)
    table.insert(first)
    assert table.remove(second) is False  # occupies the same cell but is not stored
    assert table.remove(first) is True
    assert table.get(0, 15) is None


# -- forwarding rules against the oracle


def test_next_hop_self_key():
    leaf, table = make_state(7, [9, 11])
    assert next_hop_from_state(7, leaf, table, 7) == 7


def test_next_hop_matches_oracle_on_synthetic_state():
    rng = random.Random(4)
    for trial in range(300):
        owner = rng.getrandbits(128)
        others = [rng.getrandbits(128) for _ in range(rng.randrange(1, 24))]
        leaf, table = make_state(owner, others)
        key = rng.getrandbits(128)
        got = next_hop_from_state(owner, leaf, table, key)
        want = oracle_next_hop(owner, leaf.members(), snapshot_cells(table),
                               set(leaf.members()) | set(table.entries()), key)
        assert got == want, f"trial {trial}: {got:x} != {want:x}"


def test_next_hop_matches_oracle_on_grown_network():
    net, names = build_network(48, seed=13)
    rng = random.Random(5)
    live = net.live_ids()
    for _ in range(400):
        node = net.nodes[live[rng.randrange(len(live))]]
        key = rng.getrandbits(128)
        got = node.next_hop(key)
        want = oracle_next_hop(
            node.id, node.leaf_set.members(), snapshot_cells(node.routing_table),
            set(node.known_contacts()), key)
        assert got == want


def test_forwarding_chains_are_loop_free():
    """Every hop either lengthens the shared prefix without losing ground or
    moves strictly closer on the ring, so no id repeats along a chain and the
    chain ends at the key's true root."""
    from oracles import oracle_root

    net, _ = build_network(64, seed=21)
    live = net.live_ids()
    rng = random.Random(6)
    for _ in range(200):
        key = rng.getrandbits(128)
        current = live[rng.randrange(len(live))]
        seen = set()
        while True:
            assert current not in seen, "forwarding revisited a node"
            seen.add(current)
            nxt = net.nodes[current].next_hop(key)
            if nxt == current:
                break
            prefix_gain = (
                (shared_prefix_len(nxt, key), -circular_distance(nxt, key))
                > (shared_prefix_len(current, key), -circular_distance(current, key)))
            ring_gain = (
                (circular_distance(nxt, key), nxt)
                < (circular_distance(current, key), current))
            assert prefix_gain or ring_gain, "hop made no progress"
            current = nxt
        assert len(seen) <= 40
        assert current == oracle_root(live, key)
