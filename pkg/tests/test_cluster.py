import random

import pytest

from conftest import make_txs, txid
from oracles import coinput_components
from solvaudit.cluster import (
    attribute_clusters,
    build_clusters,
    cluster_stats,
    dump_clusters_csv,
)
from solvaudit.errors import AddressUnknown, ClusterEntityConflict
from solvaudit.ingest import parse_attribution_tags


def tags_csv(rows):
    return "address,ledger,entity,source,confidence\n" + "".join(
        f"{a},{ledger},{e},test,1.0\n" for a, ledger, e in rows
    )


class TestBuildClusters:
    def test_single_merge(self):
        index = build_clusters(make_txs([
            (txid(1), 1, 10, [("A", 5), ("B", 3)], [("C", 8)]),
        ]))
        assert index.cluster_of("A") == index.cluster_of("B")
        assert index.cluster_of("C") != index.cluster_of("A")

    def test_transitive_merge(self):
        index = build_clusters(make_txs([
            (txid(1), 1, 10, [("A", 5), ("B", 3)], [("X", 8)]),
            (txid(2), 2, 20, [("B", 4), ("D", 1)], [("Y", 5)]),
        ]))
        assert index.cluster_of("A") == index.cluster_of("B") == index.cluster_of("D")
        # oracle: brute-force transitive closure over the co-input graph
        parts = coinput_components(make_txs([
            (txid(1), 1, 10, [("A", 5), ("B", 3)], [("X", 8)]),
            (txid(2), 2, 20, [("B", 4), ("D", 1)], [("Y", 5)]),
        ]))
        assert frozenset({"A", "B", "D"}) in parts

    def test_coinbase_only_all_singletons(self):
        index = build_clusters(make_txs([
            (txid(1), 0, 0, [], [("A", 50), ("B", 25)]),
            (txid(2), 1, 0, [], [("C", 50)]),
        ]))
        reps = {index.cluster_of(a) for a in "ABC"}
        assert len(reps) == 3

    def test_cluster_of_unknown_address(self):
        index = build_clusters(make_txs([
            (txid(1), 1, 10, [("A", 5)], [("B", 5)]),
        ]))
        with pytest.raises(AddressUnknown):
            index.cluster_of("nope")

    def test_cluster_of_idempotent(self):
        index = build_clusters(make_txs([
            (txid(1), 1, 10, [("A", 5), ("B", 5)], [("C", 10)]),
        ]))
        first = index.cluster_of("A")
        assert all(index.cluster_of("A") == first for _ in range(5))

    def test_find_idempotent_after_freeze(self):
        index = build_clusters(make_txs([
            (txid(1), 1, 10, [("A", 1), ("B", 1), ("C", 1)], []),
        ]))
        for node in range(index.address_count):
            assert index.find(node) == index.find(index.find(node))


def random_ledger(rnd, n_addresses, n_txs):
    specs = []
    for i in range(n_txs):
        n_in = rnd.randint(0, 4)
        inputs = [(f"a{rnd.randrange(n_addresses)}", 1) for _ in range(n_in)]
        outputs = [
            (f"a{rnd.randrange(n_addresses)}", 1)
            for _ in range(rnd.randint(0 if n_in else 1, 3))
        ]
        if n_in and sum(v for _, v in inputs) < sum(v for _, v in outputs):
            outputs = outputs[: len(inputs)]
        specs.append((txid(i), rnd.randrange(1000), rnd.randrange(10 ** 6), inputs, outputs))
    return make_txs(specs)


class TestPartitionProperties:
    def test_equivalence_with_brute_force(self):
        rnd = random.Random(7)
        for _ in range(25):
            txs = random_ledger(rnd, rnd.randint(5, 200), rnd.randint(1, 120))
            index = build_clusters(txs)
            assert index.partition() == coinput_components(txs)

    def test_permutation_invariance(self):
        rnd = random.Random(11)
        txs = random_ledger(rnd, 60, 80)
        reference = build_clusters(txs).partition()
        for _ in range(10):
            shuffled = txs[:]
            rnd.shuffle(shuffled)
            assert build_clusters(shuffled).partition() == reference


class TestAttribution:
    def test_label_propagates_to_whole_cluster(self):
        txs = make_txs([(txid(1), 1, 0, [("A", 1), ("B", 1)], [])])
        index = build_clusters(txs)
        entities = attribute_clusters(
            index, parse_attribution_tags(tags_csv([("A", "UTXO", "VASP-X")]))
        )
        cluster = index.cluster_of("B")
        assert entities.cluster_to_entity[cluster] == "VASP-X"

    def test_conflict_raises(self):
        txs = make_txs([(txid(1), 1, 0, [("A", 1), ("B", 1)], [])])
        index = build_clusters(txs)
        tags = parse_attribution_tags(
            tags_csv([("A", "UTXO", "X"), ("B", "UTXO", "Y")])
        )
        with pytest.raises(ClusterEntityConflict) as exc:
            attribute_clusters(index, tags)
        assert exc.value.entities == ("X", "Y")

    def test_orphan_tag_warns_and_entity_kept(self):
        txs = make_txs([(txid(1), 1, 0, [("A", 1)], [])])
        index = build_clusters(txs)
        entities = attribute_clusters(
            index, parse_attribution_tags(tags_csv([("ghost", "UTXO", "Z")]))
        )
        assert entities.entity_to_clusters["Z"] == set()
        assert any("ghost" in w for w in entities.warnings)

    def test_account_tags_tracked_separately(self):
        index = build_clusters([])
        entities = attribute_clusters(
            index, parse_attribution_tags(tags_csv([("0xabc", "ACCOUNT", "E")]))
        )
        assert entities.account_addresses["E"] == {"0xabc"}
        assert entities.entity_to_clusters == {}


class TestStatsAndDump:
    def test_empty_index(self):
        stats = cluster_stats(build_clusters([]))
        assert stats.cluster_count == 0
        assert stats.address_count == 0
        assert stats.largest_cluster == 0
        assert stats.size_histogram == {}

    def test_histogram(self):
        txs = make_txs([
            (txid(1), 1, 0, [("A", 1), ("B", 1), ("C", 1)], [("D", 3)]),
            (txid(2), 2, 0, [], [("E", 1)]),
        ])
        stats = cluster_stats(build_clusters(txs))
        assert stats.size_histogram == {1: 2, 3: 1}
        assert stats.largest_cluster == 3
        assert stats.cluster_count == 3

    def test_dump_deterministic_and_sorted(self):
        txs = make_txs([
            (txid(1), 1, 0, [("B", 1), ("A", 1)], [("C", 2)]),
        ])
        index = build_clusters(txs)
        entities = attribute_clusters(
            index, parse_attribution_tags(tags_csv([("A", "UTXO", "X")]))
        )
        dump = dump_clusters_csv(index, entities)
        assert dump == dump_clusters_csv(index, entities)
        lines = dump.splitlines()
        assert lines[0] == "address,cluster_id,entity"
        assert lines[1].startswith("A,") and lines[1].endswith(",X")
        assert lines[2].startswith("B,") and lines[2].endswith(",X")
