"""The repository layer end to end: publish, resolve, install, lifecycle.

Three bundles with package-level dependencies are published from one
gateway. Another gateway installs the top of the chain by p2p URI; the
resolver pulls in providers before dependents, and the lifecycle guards
keep start/stop/uninstall honest.
"""

from peerdeploy import build_network
from peerdeploy.errors import LifecycleError
from peerdeploy.repo import (
    ComponentDescriptor,
    GatewayState,
    RepositoryIndex,
    install,
    publish_local,
    resolve,
    start,
    stop,
    uninstall,
)
from peerdeploy.store import ComponentPayload


def bundle(name, version, imports=(), exports=()):
    payload = ComponentPayload.from_bytes(f"{name}-{version}".encode() * 64)
    descriptor = ComponentDescriptor(
        name=name, version=version, digest=payload.digest,
        size=payload.size, imports=tuple(imports), exports=tuple(exports))
    return descriptor, payload


def main() -> None:
    net, names = build_network(12, seed=42)
    index = RepositoryIndex()
    publisher = GatewayState(names["n0"], index=index)
    client = GatewayState(names["n7"], index=index)

    chain = [
        bundle("base.jar", "1.2", exports=["org.base"]),
        bundle("util.jar", "1.0", imports=["org.base"], exports=["org.util"]),
        bundle("app.jar", "2.0", imports=["org.util", "org.base"]),
    ]
    for descriptor, payload in chain:
        publish_local(publisher, net, descriptor, payload)
        record = index.get(descriptor.name)
        print(f"published {record.name} {record.version} -> {record.source_uri}")

    groups = resolve(index, "app.jar")
    print("\ninstall order:",
          " | ".join(",".join(g.members) for g in groups))

    report = install(client, net, "p2p://app.jar")
    print(f"installed {report.installed} (skipped {report.skipped})")

    start(client, "app.jar")
    print("app.jar is", client.installed["app.jar"].value)
    try:
        uninstall(client, "util.jar")
    except LifecycleError as exc:
        print(f"uninstall util.jar while app is active: rejected ({exc})")
    stop(client, "app.jar")
    uninstall(client, "app.jar")
    uninstall(client, "util.jar")
    print("after stopping the app, util.jar uninstalls cleanly")


if __name__ == "__main__":
    main()
