"""Multi-input address clustering over UTXO transactions.

All addresses used as inputs of one transaction are assumed to be
controlled by the same entity, so every transaction with two or more
distinct input addresses merges them into one cluster. Output-only
addresses stay singletons. Account-model addresses are never clustered;
they map to entities 1:1 through attribution tags.
"""

import csv
import io
from dataclasses import dataclass, field

from .errors import AddressUnknown, ClusterEntityConflict
from .ingest import ACCOUNT_LEDGER, TagSet


class ClusterIndex:
    """Disjoint-set partition over an address-interning table.

    Union by rank with path compression. After freeze() the structure is
    fully compressed and read-only; the representative of a cluster is the
    smallest interned id among its members, so representatives do not
    depend on merge order.
    """

    def __init__(self):
        self._ids: dict[str, int] = {}
        self._addresses: list[str] = []
        self._parent: list[int] = []
        self._rank: list[int] = []
        self._rep: dict[int, int] | None = None

    # -- construction ------------------------------------------------------

    def intern(self, address: str) -> int:
        if self._rep is not None:
            raise RuntimeError("index is frozen")
        existing = self._ids.get(address)
        if existing is not None:
            return existing
        node = len(self._addresses)
        self._ids[address] = node
        self._addresses.append(address)
        self._parent.append(node)
        self._rank.append(0)
        return node

    def find(self, node: int) -> int:
        parent = self._parent
        root = node
        while parent[root] != root:
            root = parent[root]
        while parent[node] != root:
            parent[node], node = root, parent[node]
        return root

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        if self._rank[ra] < self._rank[rb]:
            ra, rb = rb, ra
        self._parent[rb] = ra
        if self._rank[ra] == self._rank[rb]:
            self._rank[ra] += 1

    def freeze(self) -> None:
        """Finalize compression and fix cluster representatives."""
        parent = self._parent
        for node in range(len(parent)):
            self.find(node)
        rep: dict[int, int] = {}
        for node in range(len(parent)):
            rep.setdefault(parent[node], node)  # ascending scan: first is min
        self._rep = rep

    # -- queries -----------------------------------------------------------

    @property
    def address_count(self) -> int:
        return len(self._addresses)

    def __contains__(self, address: str) -> bool:
        return address in self._ids

    def cluster_of(self, address: str) -> int:
        """Stable representative id for a seen address."""
        cluster = self.cluster_of_or_none(address)
        if cluster is None:
            raise AddressUnknown(address)
        return cluster

    def cluster_of_or_none(self, address: str) -> int | None:
        node = self._ids.get(address)
        if node is None:
            return None
        root = self._parent[node] if self._rep is not None else self.find(node)
        if self._rep is not None:
            return self._rep[root]
        # unfrozen fallback: resolve the minimum on demand
        members = [n for n in range(len(self._parent)) if self.find(n) == root]
        return min(members)

    def address_of(self, node: int) -> str:
        return self._addresses[node]

    def clusters(self) -> dict[int, list[int]]:
        """Representative id -> sorted member node ids."""
        out: dict[int, list[int]] = {}
        for node in range(len(self._parent)):
            root = self.find(node)
            rep = self._rep[root] if self._rep is not None else None
            if rep is None:
                rep = root
            out.setdefault(rep, []).append(node)
        if self._rep is None:
            # normalize representatives to minimum ids
            out = {min(members): members for members in out.values()}
        return {rep: sorted(members) for rep, members in sorted(out.items())}

    def partition(self) -> set[frozenset]:
        """The partition as a set of address frozensets (order-free view)."""
        return {
            frozenset(self._addresses[n] for n in members)
            for members in self.clusters().values()
        }


@dataclass
class EntityMap:
    """Cluster-to-entity labeling joined from attribution tags."""

    cluster_to_entity: dict[int, str] = field(default_factory=dict)
    entity_to_clusters: dict[str, set[int]] = field(default_factory=dict)
    provenance: dict[int, list] = field(default_factory=dict)
    tagged_utxo_addresses: dict[str, set[str]] = field(default_factory=dict)
    account_addresses: dict[str, set[str]] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    def entities(self) -> list[str]:
        names = set(self.entity_to_clusters) | set(self.account_addresses)
        return sorted(names)

    def entity_of_cluster(self, cluster_id: int) -> str | None:
        return self.cluster_to_entity.get(cluster_id)


@dataclass
class ClusterStats:
    cluster_count: int
    address_count: int
    largest_cluster: int
    size_histogram: dict[int, int]


def build_clusters(txs) -> ClusterIndex:
    """Build the multi-input partition from validated transactions.

    The induced partition is independent of transaction order; coinbase
    transactions contribute no merges.
    """
    index = ClusterIndex()
    for tx in txs:
        first = None
        for address, _ in tx.inputs:
            node = index.intern(address)
            if first is None:
                first = node
            else:
                index.union(first, node)
        for address, _ in tx.outputs:
            index.intern(address)
    index.freeze()
    return index


def attribute_clusters(index: ClusterIndex, tags: TagSet) -> EntityMap:
    """Label clusters with entities from UTXO tags; collect account
    addresses per entity from ACCOUNT tags.

    Raises ClusterEntityConflict when one cluster carries tags of two
    different entities. Tags for addresses never seen on-chain leave the
    entity present with zero clusters and emit a warning.
    """
    entities = EntityMap()
    for tag in tags:
        if tag.ledger == ACCOUNT_LEDGER:
            entities.account_addresses.setdefault(tag.entity, set()).add(tag.address)
            continue
        entities.entity_to_clusters.setdefault(tag.entity, set())
        entities.tagged_utxo_addresses.setdefault(tag.entity, set()).add(tag.address)
        if tag.address not in index:
            entities.warnings.append(
                f"orphan-tag: {tag.entity} address {tag.address} never seen on-chain"
            )
            continue
        cluster = index.cluster_of(tag.address)
        existing = entities.cluster_to_entity.get(cluster)
        if existing is not None and existing != tag.entity:
            raise ClusterEntityConflict(cluster, [existing, tag.entity])
        entities.cluster_to_entity[cluster] = tag.entity
        entities.entity_to_clusters[tag.entity].add(cluster)
        entities.provenance.setdefault(cluster, []).append(tag)
    return entities


def cluster_stats(index: ClusterIndex) -> ClusterStats:
    """Deterministic read-only summary of the partition."""
    sizes = [len(members) for members in index.clusters().values()]
    histogram: dict[int, int] = {}
    for size in sizes:
        histogram[size] = histogram.get(size, 0) + 1
    return ClusterStats(
        cluster_count=len(sizes),
        address_count=index.address_count,
        largest_cluster=max(sizes, default=0),
        size_histogram=dict(sorted(histogram.items())),
    )


def dump_clusters_csv(index: ClusterIndex, entities: EntityMap | None = None) -> str:
    """CSV dump `address,cluster_id,entity` sorted by cluster then address."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["address", "cluster_id", "entity"])
    rows = []
    for rep, members in index.clusters().items():
        entity = ""
        if entities is not None:
            entity = entities.cluster_to_entity.get(rep, "")
        for node in members:
            rows.append((rep, index.address_of(node), entity))
    for rep, address, entity in sorted(rows, key=lambda r: (r[0], r[1])):
        writer.writerow([address, rep, entity])
    return buf.getvalue()
