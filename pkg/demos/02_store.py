"""Publish a component, then watch lookups get cheaper as caches spread.

The publish walks from the source to the key's root and leaves a trail.
Every later lookup stops at the first node on its route that holds either
the payload or a trail pointer, and deposits a cache at the requester, so
popular components end up served in fewer and fewer hops.
"""

import random

from peerdeploy import build_network, lookup, publish, replica_count
from peerdeploy.ids import to_hex
from peerdeploy.store import ComponentPayload


def main() -> None:
    net, names = build_network(48, seed=11)
    live = net.live_ids()
    rng = random.Random(3)

    payload = ComponentPayload.from_bytes(rng.randbytes(2048))
    source = live[rng.randrange(len(live))]
    trail = publish(net, source, "demo.jar", payload)
    print(f"published demo.jar from {to_hex(source)}")
    print(f"  trail: {' -> '.join(to_hex(n) for n in trail.path)}")
    print(f"  replicas now: {replica_count(net, 'demo.jar')}\n")

    for round_no in range(1, 4):
        hops_seen = []
        for _ in range(16):
            client = live[rng.randrange(len(live))]
            got, served_by, hops = lookup(net, client, "demo.jar")
            assert got.digest == payload.digest
            hops_seen.append(hops)
        print(f"round {round_no}: mean hops "
              f"{sum(hops_seen) / len(hops_seen):.2f}, "
              f"replicas {replica_count(net, 'demo.jar')}")

    ttl = net.nodes[live[0]].store.config.ttl
    net.advance(10 * ttl)
    print(f"\nafter 10 ttl with no demand: "
          f"{replica_count(net, 'demo.jar')} replicas remain "
          f"(source and root are pinned)")


if __name__ == "__main__":
    main()
