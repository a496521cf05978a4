"""Component store: publish trails, lookup semantics, eviction, handoff."""

import random

import pytest
from hypothesis import given, settings, strategies as st

from peerdeploy import build_network, join, leave, lookup, publish, remove, replica_count
from peerdeploy.errors import (
    InvalidNameError,
    NotFoundError,
    NotOwnerError,
    UnavailableError,
    VersionConflictError,
)
from peerdeploy.ids import derive_key
from peerdeploy.overlay import route
from peerdeploy.simnet import SimNetwork
from peerdeploy.store import ComponentPayload, Role, StoreConfig, content_digest, evict
from oracles import oracle_root


def payload_of(text: str, repeat: int = 50) -> ComponentPayload:
    return ComponentPayload.from_bytes(text.encode() * repeat)


def holders_of(net, name, payload_only=True):
    key = derive_key(name)
    out = set()
    for nid in net.live_ids():
        entry = net.nodes[nid].store.get(key)
        if entry is not None and (entry.payload is not None or not payload_only):
            out.add(nid)
    return out


# -- publish


def test_publish_deposits_trail_on_every_path_node():
    net, names = build_network(48, seed=31)
    for i in range(20):
        name = f"p{i}.jar"
        trail = publish(net, net.live_ids()[i % 48], name, payload_of(name))
        key = derive_key(name)
        assert trail.path[0] == trail.source
        assert trail.path[-1] == trail.root
        assert trail.root == oracle_root(net.live_ids(), key)
        for nid in trail.path:
            assert net.nodes[nid].store.get(key) is not None, "hole in the trail"
        # roles: source keeps payload, intermediates keep the association only
        assert net.nodes[trail.source].store.get(key).role in (Role.SOURCE, Role.ROOT)
        assert net.nodes[trail.root].store.get(key).role is Role.ROOT
        for nid in trail.path[1:-1]:
            entry = net.nodes[nid].store.get(key)
            assert entry.role is Role.TRAIL
            assert entry.payload is None
            assert entry.locations


def test_publish_single_node_collapses_roles():
    net = SimNetwork(seed=0)
    join(net, 77, None, name="solo")
    trail = publish(net, 77, "solo.jar", payload_of("solo"))
    assert trail.source == trail.root == 77
    entry = net.nodes[77].store.get(derive_key("solo.jar"))
    assert entry.role is Role.ROOT
    assert entry.payload is not None


def test_publish_replica_count_is_two_when_source_differs():
    net, names = build_network(16, seed=1)
    key = derive_key("pair.jar")
    source = next(nid for nid in net.live_ids()
                  if nid != oracle_root(net.live_ids(), key))
    publish(net, source, "pair.jar", payload_of("pair"))
    assert replica_count(net, "pair.jar") == 2


def test_publish_version_conflict_rejected():
    net, names = build_network(8, seed=2)
    publish(net, names["n0"], "v.jar", payload_of("one"))
    with pytest.raises(VersionConflictError):
        publish(net, names["n1"], "v.jar", payload_of("two"))
    # republishing identical content is a refresh, not a conflict
    publish(net, names["n2"], "v.jar", payload_of("one"))


def test_publish_rejects_bad_names():
    net, names = build_network(2, seed=0)
    with pytest.raises(InvalidNameError):
        publish(net, names["n0"], "", payload_of("x"))


def test_content_digest_is_stable():
    data = b"digest me" * 10
    assert content_digest(data) == content_digest(data)
    assert content_digest(data) != content_digest(data + b"!")
    payload = ComponentPayload.from_bytes(data)
    assert payload.digest == content_digest(data)
    assert payload.size == len(data)
    assert payload.verify()


# -- lookup


def test_lookup_returns_bit_exact_payload():
    net, names = build_network(32, seed=3)
    blob = bytes(random.Random(0).randrange(256) for _ in range(3000))
    publish(net, names["n5"], "bits.jar", ComponentPayload.from_bytes(blob))
    got, served_by, hops = lookup(net, names["n20"], "bits.jar")
    assert got.data == blob
    assert got.digest == content_digest(blob)
    assert hops >= 0


def test_lookup_serves_from_first_entry_holder_on_path():
    net, _ = build_network(64, seed=5)
    live = net.live_ids()
    rng = random.Random(8)
    quiet = StoreConfig(cache_on_lookup=False)
    for nid in live:
        net.nodes[nid].store.config = quiet  # freeze state between lookups
    for i in range(10):
        name = f"首{i}.jar"
        publish(net, live[rng.randrange(len(live))], name, payload_of("x"))
    key_names = [f"首{i}.jar" for i in range(10)]
    for _ in range(60):
        name = key_names[rng.randrange(10)]
        key = derive_key(name)
        client = live[rng.randrange(len(live))]
        expected_path = route(net, client, key)
        first_holder = next(
            (nid for nid in expected_path
             if net.nodes[nid].store.get(key) is not None), None)
        _, served_by, hops = lookup(net, client, name)
        assert first_holder is not None
        assert served_by == first_holder or hops <= expected_path.index(first_holder)
        root_hops = len(expected_path) - 1
        assert hops <= root_hops, "short-circuit must not cost more than the root route"


def test_lookup_missing_name_not_found():
    net, names = build_network(8, seed=6)
    with pytest.raises(NotFoundError):
        lookup(net, names["n0"], "absent.jar")


def test_lookup_caching_grows_replicas_monotonically():
    net, _ = build_network(48, seed=7)
    live = net.live_ids()
    publish(net, live[0], "pop.jar", payload_of("pop"))
    rng = random.Random(2)
    seen = holders_of(net, "pop.jar")
    for _ in range(40):
        client = live[rng.randrange(len(live))]
        lookup(net, client, "pop.jar")
        now = holders_of(net, "pop.jar")
        assert now >= seen, "holder set shrank without an eviction"
        seen = now
    assert len(seen) >= 2


def test_lookup_unavailable_when_all_holders_dead_but_trail_survives():
    net, _ = build_network(64, seed=3)
    live = net.live_ids()
    # need a publish path with an intermediate, so a TRAIL outlives the holders
    chosen = None
    for i in range(60):
        name = f"gone{i}.jar"
        for publisher in live[:10]:
            if len(route(net, publisher, derive_key(name))) >= 3:
                chosen = (publisher, name)
                break
        if chosen:
            break
    assert chosen, "no multi-hop publish path found"
    publisher, name = chosen
    publish(net, publisher, name, payload_of(name))
    key = derive_key(name)
    trail_holders = [nid for nid in net.live_ids()
                     if (e := net.nodes[nid].store.get(key)) and e.role is Role.TRAIL]
    for holder in holders_of(net, name):
        leave(net, holder, graceful=False)
    assert trail_holders
    with pytest.raises(UnavailableError):
        lookup(net, trail_holders[0], name)
    # the stale trail was discarded; the network converges to not-found
    with pytest.raises(NotFoundError):
        lookup(net, trail_holders[0], name)


# -- remove


def test_publish_remove_single_node_not_found():
    net = SimNetwork(seed=0)
    join(net, 5, None)
    publish(net, 5, "one.jar", payload_of("one"))
    remove(net, 5, "one.jar")
    with pytest.raises(NotFoundError):
        lookup(net, 5, "one.jar")


def test_remove_requires_ownership():
    net, names = build_network(16, seed=9)
    publish(net, names["n3"], "own.jar", payload_of("own"))
    lookup(net, names["n7"], "own.jar")  # n7 now caches a copy
    thief = next(name for name in names
                 if names[name] in holders_of(net, "own.jar")
                 and names[name] != names["n3"])
    with pytest.raises(NotOwnerError):
        remove(net, names[thief], "own.jar")
    with pytest.raises(NotFoundError):
        remove(net, names["n9"], "never.jar")


def test_remove_then_expiry_makes_all_lookups_not_found():
    net, names = build_network(64, seed=10)
    publish(net, names["n8"], "temp.jar", payload_of("temp"))
    for client in list(names.values())[:10]:
        lookup(net, client, "temp.jar")
    remove(net, names["n8"], "temp.jar")
    ttl = net.nodes[net.live_ids()[0]].store.config.ttl
    net.advance(ttl + net.config.maintenance_interval)
    net.sweep_eviction()
    rng = random.Random(4)
    live = net.live_ids()
    for _ in range(20):
        client = live[rng.randrange(len(live))]
        with pytest.raises(NotFoundError):
            lookup(net, client, "temp.jar")
    assert replica_count(net, "temp.jar") == 0


# -- eviction


def test_evict_expires_untouched_cache_and_trail():
    net, names = build_network(24, seed=12)
    publish(net, names["n1"], "ttl.jar", payload_of("ttl"))
    lookup(net, names["n9"], "ttl.jar")
    key = derive_key("ttl.jar")
    transient = [nid for nid in net.live_ids()
                 if (e := net.nodes[nid].store.get(key))
                 and e.role in (Role.TRAIL, Role.CACHE)]
    assert transient, "scenario needs transient entries"
    ttl = net.nodes[transient[0]].store.config.ttl
    net.advance(ttl + net.config.maintenance_interval * 2)
    for nid in transient:
        entry = net.nodes[nid].store.get(key)
        assert entry is None, "transient entry outlived its ttl"
    # pinned entries survive unbounded idle time
    assert replica_count(net, "ttl.jar") == 2


def test_evict_lru_respects_capacity_and_pins():
    config = StoreConfig(cache_capacity=4, ttl=10_000_000)
    net = SimNetwork(seed=0, store_config=config)
    join(net, 9, None, name="solo")
    node = net.nodes[9]
    publish(net, 9, "mine.jar", payload_of("mine"))
    # manufacture cache pressure directly on the store
    for i in range(12):
        key = derive_key(f"c{i}.jar")
        node.store.put_payload(key, f"c{i}.jar", Role.CACHE, payload_of("c"),
                               origin=None, root_hint=None, now=net.clock + i)
    evict(net.nodes[9], now=net.clock + 100)
    assert node.store.non_pinned_count() <= 4
    # oldest transients went first
    assert node.store.get(derive_key("c11.jar")) is not None
    assert node.store.get(derive_key("c0.jar")) is None
    assert node.store.get(derive_key("mine.jar")) is not None


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=0, max_value=2 ** 32))
def test_evict_never_removes_pinned_fuzz(now):
    config = StoreConfig(cache_capacity=2, ttl=50)
    net = SimNetwork(seed=1, store_config=config)
    join(net, 3, None)
    node = net.nodes[3]
    publish(net, 3, "keep.jar", payload_of("keep"))
    rng = random.Random(now)
    for i in range(10):
        role = Role.CACHE if i % 2 else Role.TRAIL
        key = derive_key(f"f{i}.jar")
        if role is Role.CACHE:
            node.store.put_payload(key, f"f{i}.jar", role, payload_of("f"),
                                   origin=None, root_hint=None,
                                   now=rng.randrange(0, 1000))
        else:
            node.store.put_trail(key, f"f{i}.jar", origin=1, root_hint=2,
                                 now=rng.randrange(0, 1000))
    evict(net.nodes[3], now=now)
    assert node.store.get(derive_key("keep.jar")) is not None


# -- handoff on join


def test_join_handoff_moves_root_and_retains_payload():
    net, names = build_network(24, seed=14)
    keys = [f"h{i}.jar" for i in range(16)]
    for i, name in enumerate(keys):
        publish(net, net.live_ids()[i % 24], name, payload_of(name))
    old_roots = {name: oracle_root(net.live_ids(), derive_key(name)) for name in keys}
    report = join(net, derive_key("wedge-node"), net.live_ids()[0], name="wedge")
    live = net.live_ids()
    moved = 0
    for name in keys:
        key = derive_key(name)
        new_root = oracle_root(live, key)
        holders = [nid for nid in live
                   if (e := net.nodes[nid].store.get(key)) and e.role is Role.ROOT]
        assert holders == [new_root]
        if new_root != old_roots[name]:
            moved += 1
            demoted = net.nodes[old_roots[name]].store.get(key)
            assert demoted is not None and demoted.role is Role.RETAINED
            assert demoted.payload is not None, "retention means keeping the bytes"
            assert key in report.transferred
    if moved:
        assert report.transferred


def test_root_uniqueness_through_join_storm():
    net, _ = build_network(24, seed=16)
    keys = [f"s{i}.jar" for i in range(20)]
    rng = random.Random(5)
    for i, name in enumerate(keys):
        publish(net, net.live_ids()[i % 24], name, payload_of(name))
    for j in range(10):
        join(net, rng.getrandbits(128), net.live_ids()[0], name=f"storm{j}")
        live = net.live_ids()
        for name in keys:
            key = derive_key(name)
            holders = [nid for nid in live
                       if (e := net.nodes[nid].store.get(key)) and e.role is Role.ROOT]
            assert holders == [oracle_root(live, key)], f"{name} after join {j}"


def test_lookup_after_remove_with_source_departed_counts_zero():
    net, names = build_network(16, seed=18)
    source = names["n2"]
    publish(net, source, "fade.jar", payload_of("fade"))
    remove(net, source, "fade.jar")
    leave(net, source, graceful=True)
    ttl = net.nodes[net.live_ids()[0]].store.config.ttl
    net.advance(ttl * 2)
    assert replica_count(net, "fade.jar") == 0
