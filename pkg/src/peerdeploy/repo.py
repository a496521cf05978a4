"""Repository layer: p2p:// URIs, bundle descriptors, dependency resolution,
and the per-gateway lifecycle over the distributed component store.

A gateway is one overlay node plus a local RepositoryIndex describing the
bundles it may install. Installing "p2p://x.jar" resolves x.jar's import
closure against the index, fetches every missing bundle through the store,
and verifies each payload against the digest its descriptor promised.
"""

from __future__ import annotations

import dataclasses
import heapq
import re
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Optional, Union

from . import store as _store
from .errors import (
    IndexParseError,
    InstallError,
    IntegrityError,
    LifecycleError,
    LookupFailedError,
    MalformedUriError,
    NotFoundError,
    UnavailableError,
    UnknownBundleError,
    UnresolvableError,
    UnsupportedUriError,
    VersionConflictError,
)
from .simnet import SimNetwork
from .store import ComponentPayload, PublishTrail


# --------------------------------------------------------------------------
# URIs


@dataclass(frozen=True)
class P2pUri:
    bundle_name: str

    def __str__(self) -> str:
        return f"p2p://{self.bundle_name}"


@dataclass(frozen=True)
class PassthroughUri:
    """Any non-p2p scheme; kept verbatim for whoever handles it upstream."""

    text: str
    scheme: str


def parse_uri(text: str) -> Union[P2pUri, PassthroughUri]:
    scheme, sep, rest = text.partition("://")
    if not sep or not scheme:
        raise MalformedUriError(f"not a scheme://name reference: {text!r}")
    if scheme != "p2p":
        return PassthroughUri(text=text, scheme=scheme)
    if not rest:
        raise MalformedUriError("p2p URI with an empty bundle name")
    if "/" in rest:
        raise MalformedUriError(f"bundle name may not contain '/': {rest!r}")
    return P2pUri(rest)


def format_uri(uri: P2pUri) -> str:
    return str(uri)


# --------------------------------------------------------------------------
# descriptors and the index

_DIGEST_RE = re.compile(r"^[0-9a-f]{32}$")
_VERSION_RE = re.compile(r"^\d+(\.\d+)*$")


def version_key(version: str) -> tuple[int, ...]:
    if not _VERSION_RE.match(version):
        raise ValueError(f"not a dotted numeric version: {version!r}")
    return tuple(int(part) for part in version.split("."))


@dataclass(frozen=True)
class ComponentDescriptor:
    name: str
    version: str
    digest: str
    size: int
    start_entry: Optional[str] = None
    imports: tuple[str, ...] = ()
    exports: tuple[str, ...] = ()
    source_uri: str = ""

    def __post_init__(self):
        if not self.name or "/" in self.name:
            raise ValueError(f"bad bundle name: {self.name!r}")
        version_key(self.version)
        if not _DIGEST_RE.match(self.digest):
            raise ValueError("digest must be 32 lowercase hex digits")
        if self.size < 0:
            raise ValueError("size must be >= 0")
        object.__setattr__(self, "imports", tuple(self.imports))
        object.__setattr__(self, "exports", tuple(self.exports))


def describe_payload(name: str, payload: ComponentPayload, version: str = "1.0",
                     start_entry: str | None = None,
                     imports: Iterable[str] = (), exports: Iterable[str] = ()) -> ComponentDescriptor:
    """Descriptor for a payload about to be published from this process."""
    return ComponentDescriptor(
        name=name, version=version, digest=payload.digest, size=payload.size,
        start_entry=start_entry, imports=tuple(imports), exports=tuple(exports),
        source_uri=f"p2p://{name}")


class RepositoryIndex:
    """Named bundle descriptors; one entry per name."""

    def __init__(self, entries: Iterable[ComponentDescriptor] = (), generated_at: int = 0):
        self.generated_at = generated_at
        self._by_name: dict[str, ComponentDescriptor] = {}
        for descriptor in entries:
            self.add(descriptor)

    def add(self, descriptor: ComponentDescriptor) -> None:
        existing = self._by_name.get(descriptor.name)
        if existing is not None and existing.digest != descriptor.digest:
            raise VersionConflictError(
                f"index already lists {descriptor.name!r} with different content")
        self._by_name[descriptor.name] = descriptor

    def get(self, name: str) -> Optional[ComponentDescriptor]:
        return self._by_name.get(name)

    def entries(self) -> list[ComponentDescriptor]:
        return [self._by_name[name] for name in sorted(self._by_name)]

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    def __len__(self) -> int:
        return len(self._by_name)

    def exporters_of(self, package: str) -> list[ComponentDescriptor]:
        return [d for d in self.entries() if package in d.exports]


# --------------------------------------------------------------------------
# descriptor file format

INDEX_FIELDS = ("name", "version", "digest", "size", "start", "imports", "exports", "uri")


def serialize_index(index: RepositoryIndex) -> str:
    """Byte-deterministic text form: entries sorted by name, fixed key order."""
    lines = [f"# generated_at: {index.generated_at}"]
    for d in index.entries():
        lines.append("")
        lines.append(f"name: {d.name}")
        lines.append(f"version: {d.version}")
        lines.append(f"digest: {d.digest}")
        lines.append(f"size: {d.size}")
        lines.append(f"start: {d.start_entry or ''}")
        lines.append(f"imports: {','.join(d.imports)}")
        lines.append(f"exports: {','.join(d.exports)}")
        lines.append(f"uri: {d.source_uri}")
    return "\n".join(lines) + "\n"


def _parse_packages(value: str, lineno: int, field: str) -> tuple[str, ...]:
    if not value:
        return ()
    parts = value.split(",")
    if any(not p for p in parts):
        raise IndexParseError(f"empty package name in {field} list", line=lineno, field=field)
    return tuple(parts)


def parse_index(text: str) -> RepositoryIndex:
    """Strict parser: all eight keys, fixed order, or a diagnostic error.

    Truncated or reordered files never yield a partial index.
    """
    lines = text.split("\n")
    generated_at = 0
    pos = 0
    while pos < len(lines) and lines[pos].startswith("#"):
        comment = lines[pos][1:].strip()
        if comment.startswith("generated_at:"):
            stamp = comment.partition(":")[2].strip()
            if not stamp.isdigit():
                raise IndexParseError("generated_at must be an integer",
                                      line=pos + 1, field="generated_at")
            generated_at = int(stamp)
        pos += 1

    index = RepositoryIndex(generated_at=generated_at)
    while True:
        while pos < len(lines) and not lines[pos]:
            pos += 1
        if pos >= len(lines):
            return index
        values: dict[str, str] = {}
        for field in INDEX_FIELDS:
            if pos >= len(lines) or not lines[pos]:
                raise IndexParseError(f"record truncated before {field!r}",
                                      line=pos + 1, field=field)
            line = lines[pos]
            key, sep, value = line.partition(": ")
            if not sep and line.endswith(":"):
                key, value = line[:-1], ""
                sep = ":"
            if not sep:
                raise IndexParseError(f"expected 'key: value', got {line!r}",
                                      line=pos + 1, field=field)
            if key != field:
                if key in INDEX_FIELDS:
                    raise IndexParseError(f"field {key!r} out of order, expected {field!r}",
                                          line=pos + 1, field=key)
                raise IndexParseError(f"unknown key {key!r}", line=pos + 1, field=key)
            values[field] = value
            pos += 1
        lineno = pos  # first line after the record, for whole-record diagnostics
        if not values["size"].isdigit():
            raise IndexParseError("size must be a non-negative integer",
                                  line=lineno, field="size")
        if not _DIGEST_RE.match(values["digest"]):
            raise IndexParseError("digest must be 32 lowercase hex digits",
                                  line=lineno, field="digest")
        if not _VERSION_RE.match(values["version"]):
            raise IndexParseError("version must be dotted numeric",
                                  line=lineno, field="version")
        if not values["name"] or "/" in values["name"]:
            raise IndexParseError(f"bad bundle name {values['name']!r}",
                                  line=lineno, field="name")
        # uri is blank until the bundle has been published somewhere
        if values["uri"]:
            try:
                parse_uri(values["uri"])
            except MalformedUriError as exc:
                raise IndexParseError(str(exc), line=lineno, field="uri") from exc
        descriptor = ComponentDescriptor(
            name=values["name"],
            version=values["version"],
            digest=values["digest"],
            size=int(values["size"]),
            start_entry=values["start"] or None,
            imports=_parse_packages(values["imports"], lineno, "imports"),
            exports=_parse_packages(values["exports"], lineno, "exports"),
            source_uri=values["uri"],
        )
        if descriptor.name in index:
            raise IndexParseError(f"duplicate record for {descriptor.name!r}",
                                  line=lineno, field="name")
        try:
            index.add(descriptor)
        except VersionConflictError as exc:
            raise IndexParseError(str(exc), line=lineno, field="name") from exc


def save_index(index: RepositoryIndex, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(serialize_index(index))


def load_index(path: str) -> RepositoryIndex:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_index(fh.read())


# --------------------------------------------------------------------------
# dependency resolution


@dataclass(frozen=True)
class InstallGroup:
    members: tuple[str, ...]
    cycle: bool


def _best_provider(index: RepositoryIndex, package: str) -> Optional[ComponentDescriptor]:
    best: Optional[ComponentDescriptor] = None
    best_key: Optional[tuple] = None
    for d in index.exporters_of(package):
        # highest version wins; ties go to the lexicographically smallest name
        key = (tuple(-part for part in version_key(d.version)), d.name)
        if best_key is None or key < best_key:
            best_key = key
            best = d
    return best


def resolve(index: RepositoryIndex, name: str,
            base_exports: Iterable[str] = ()) -> list[InstallGroup]:
    """Dependency-closed install order for one bundle.

    Providers come before dependents; mutually importing bundles come out
    together as one cycle group. Provider choice and ordering are both
    deterministic so resolve() replays identically.
    """
    base = frozenset(base_exports)
    if name not in index:
        raise UnknownBundleError(f"{name!r} is not in the repository index")

    providers: dict[str, set[str]] = {}
    worklist = [name]
    while worklist:
        current = worklist.pop()
        if current in providers:
            continue
        descriptor = index.get(current)
        assert descriptor is not None
        wanted: set[str] = set()
        for package in descriptor.imports:
            if package in descriptor.exports or package in base:
                continue  # self-provided or platform-provided
            provider = _best_provider(index, package)
            if provider is None:
                raise UnresolvableError(
                    f"{current!r} imports {package!r} which nothing exports",
                    package=package)
            if provider.name != current:
                wanted.add(provider.name)
        providers[current] = wanted
        worklist.extend(sorted(wanted - providers.keys(), reverse=True))

    groups = _condense(providers)
    return _order_groups(groups, providers)


def _condense(providers: dict[str, set[str]]) -> list[frozenset[str]]:
    """Strongly connected components of the dependency graph, found with an
    iterative Tarjan walk (recursion depth is unbounded otherwise)."""
    order: dict[str, int] = {}
    low: dict[str, int] = {}
    on_stack: set[str] = set()
    stack: list[str] = []
    sccs: list[frozenset[str]] = []
    counter = 0

    for start in sorted(providers):
        if start in order:
            continue
        work: list[tuple[str, list[str], int]] = [(start, sorted(providers[start]), 0)]
        order[start] = low[start] = counter
        counter += 1
        stack.append(start)
        on_stack.add(start)
        while work:
            node, edges, i = work.pop()
            advanced = False
            while i < len(edges):
                nxt = edges[i]
                i += 1
                if nxt not in order:
                    work.append((node, edges, i))
                    order[nxt] = low[nxt] = counter
                    counter += 1
                    stack.append(nxt)
                    on_stack.add(nxt)
                    work.append((nxt, sorted(providers[nxt]), 0))
                    advanced = True
                    break
                if nxt in on_stack:
                    low[node] = min(low[node], order[nxt])
            if advanced:
                continue
            if low[node] == order[node]:
                component = set()
                while True:
                    member = stack.pop()
                    on_stack.discard(member)
                    component.add(member)
                    if member == node:
                        break
                sccs.append(frozenset(component))
            if work:
                parent = work[-1][0]
                low[parent] = min(low[parent], low[node])
    return sccs


def _order_groups(sccs: list[frozenset[str]],
                  providers: dict[str, set[str]]) -> list[InstallGroup]:
    of_group: dict[str, int] = {}
    for gi, component in enumerate(sccs):
        for member in component:
            of_group[member] = gi
    indegree = [0] * len(sccs)
    dependents: list[set[int]] = [set() for _ in sccs]
    for bundle, wants in providers.items():
        for provider in wants:
            gp, gb = of_group[provider], of_group[bundle]
            if gp != gb and gb not in dependents[gp]:
                dependents[gp].add(gb)
                indegree[gb] += 1
    heap = [(min(sccs[gi]), gi) for gi in range(len(sccs)) if indegree[gi] == 0]
    heapq.heapify(heap)
    ordered: list[InstallGroup] = []
    while heap:
        _, gi = heapq.heappop(heap)
        members = tuple(sorted(sccs[gi]))
        ordered.append(InstallGroup(members=members, cycle=len(members) > 1))
        for gb in dependents[gi]:
            indegree[gb] -= 1
            if indegree[gb] == 0:
                heapq.heappush(heap, (min(sccs[gb]), gb))
    assert sum(len(g.members) for g in ordered) == len(providers)
    return ordered


# --------------------------------------------------------------------------
# gateway state and lifecycle


class LifecycleState(Enum):
    INSTALLED = "INSTALLED"
    ACTIVE = "ACTIVE"


class GatewayState:
    """Installed-bundle map for the gateway running on one overlay node."""

    def __init__(self, node_id: int, index: RepositoryIndex | None = None,
                 base_exports: Iterable[str] = ()):
        self.node_id = node_id
        self.index = index if index is not None else RepositoryIndex()
        self.base_exports = frozenset(base_exports)
        self.installed: dict[str, LifecycleState] = {}
        self.artifacts: dict[str, ComponentPayload] = {}

    def state_of(self, name: str) -> Optional[LifecycleState]:
        return self.installed.get(name)

    def _exports_besides(self, excluded: str | None = None) -> set[str]:
        available = set(self.base_exports)
        for name in self.installed:
            if name == excluded:
                continue
            descriptor = self.index.get(name)
            if descriptor is not None:
                available.update(descriptor.exports)
        return available


@dataclass
class InstallReport:
    requested: str
    order: list[InstallGroup]
    installed: list[str]  # newly fetched and installed by this call
    skipped: list[str]  # already present


def install(gw: GatewayState, net: SimNetwork, uri_text: str) -> InstallReport:
    """Fetch and install a bundle and everything it transitively imports."""
    uri = parse_uri(uri_text)
    if isinstance(uri, PassthroughUri):
        raise UnsupportedUriError(
            f"cannot install from {uri.scheme!r} URIs, only p2p://")
    order = resolve(gw.index, uri.bundle_name, gw.base_exports)
    newly: list[str] = []
    skipped: list[str] = []
    for group in order:
        for name in group.members:
            if name in gw.installed:
                skipped.append(name)
                continue
            descriptor = gw.index.get(name)
            assert descriptor is not None
            try:
                payload, _served_by, _hops = _store.lookup(net, gw.node_id, name)
            except (NotFoundError, UnavailableError, LookupFailedError) as exc:
                raise InstallError(
                    f"installing {uri.bundle_name!r} failed: dependency {name!r} "
                    f"could not be fetched ({exc})", failed_dependency=name) from exc
            if payload.digest != descriptor.digest:
                raise IntegrityError(
                    f"{name!r} arrived with digest {payload.digest}, "
                    f"descriptor promises {descriptor.digest}")
            gw.artifacts[name] = payload
            gw.installed[name] = LifecycleState.INSTALLED
            newly.append(name)
    return InstallReport(requested=uri.bundle_name, order=order,
                         installed=newly, skipped=skipped)


def start(gw: GatewayState, name: str) -> LifecycleState:
    state = gw.installed.get(name)
    if state is None:
        raise LifecycleError(f"{name!r} is not installed")
    if state is LifecycleState.ACTIVE:
        raise LifecycleError(f"{name!r} is already ACTIVE")
    descriptor = gw.index.get(name)
    if descriptor is None:
        raise LifecycleError(f"{name!r} has no descriptor in the index")
    available = gw._exports_besides(None) | set(descriptor.exports)
    for package in descriptor.imports:
        if package not in available:
            raise LifecycleError(
                f"cannot start {name!r}: import {package!r} is unsatisfied")
    gw.installed[name] = LifecycleState.ACTIVE
    return LifecycleState.ACTIVE


def stop(gw: GatewayState, name: str) -> LifecycleState:
    state = gw.installed.get(name)
    if state is None:
        raise LifecycleError(f"{name!r} is not installed")
    if state is not LifecycleState.ACTIVE:
        raise LifecycleError(f"{name!r} is {state.value}, not ACTIVE")
    gw.installed[name] = LifecycleState.INSTALLED
    return LifecycleState.INSTALLED


def uninstall(gw: GatewayState, name: str) -> None:
    state = gw.installed.get(name)
    if state is None:
        raise LifecycleError(f"{name!r} is not installed")
    if state is LifecycleState.ACTIVE:
        raise LifecycleError(f"{name!r} is ACTIVE; stop it first")
    descriptor = gw.index.get(name)
    exports = set(descriptor.exports) if descriptor is not None else set()
    if exports:
        remaining = gw._exports_besides(name)
        for other, other_state in gw.installed.items():
            if other == name or other_state is not LifecycleState.ACTIVE:
                continue
            other_desc = gw.index.get(other)
            if other_desc is None:
                continue
            for package in other_desc.imports:
                if package in exports and package not in remaining \
                        and package not in other_desc.exports:
                    raise LifecycleError(
                        f"cannot uninstall {name!r}: ACTIVE bundle {other!r} "
                        f"imports {package!r} from it")
    del gw.installed[name]
    gw.artifacts.pop(name, None)


def publish_local(gw: GatewayState, net: SimNetwork,
                  descriptor: ComponentDescriptor,
                  payload: ComponentPayload) -> PublishTrail:
    """Publish a bundle from this gateway and record it in the local index."""
    if descriptor.digest != payload.digest or not payload.verify():
        raise IntegrityError(
            f"descriptor for {descriptor.name!r} does not match the payload bytes")
    existing = gw.index.get(descriptor.name)
    if existing is not None and existing.digest != descriptor.digest:
        raise VersionConflictError(
            f"index already lists {descriptor.name!r} with different content")
    final = dataclasses.replace(descriptor, source_uri=f"p2p://{descriptor.name}")
    trail = _store.publish(net, gw.node_id, final.name, payload)
    gw.index.add(final)
    gw.artifacts[final.name] = payload
    return trail
