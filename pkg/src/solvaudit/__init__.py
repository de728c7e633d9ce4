"""solvaudit: entity holdings reconstruction and solvency reconciliation.

Pipeline: ingest ledger exports, cluster UTXO addresses with the
multi-input heuristic, join attribution tags, rebuild per-entity balance
series, valuate in EUR, and compare against declared balance-sheet
positions. Also ships a Merkle-sum-tree proof of liabilities, a
service-offering categorizer, and a synthetic-ledger test kit.
"""

__version__ = "0.1.0"

from .assets import AssetId, AssetRegistry, default_registry
from .cluster import ClusterIndex, EntityMap, attribute_clusters, build_clusters, cluster_stats
from .errors import SolvauditError
from .holdings import (
    BalanceSeries,
    FlowEvent,
    PriceSeries,
    account_snapshots,
    balance_series_utxo,
    entity_utxo_flows,
    valuate,
)
from .ingest import (
    AccountTransfer,
    AttributionTag,
    BalanceSheetRecord,
    FeatureMatrix,
    PricePoint,
    TagSet,
    UtxoTransaction,
    parse_account_transfers,
    parse_attribution_tags,
    parse_balance_sheets,
    parse_price_series,
    parse_service_features,
    parse_utxo_transactions,
)
from .pol import InclusionProof, LiabilityLeaf, MerkleSumNode, MerkleSumTree, build_tree, prove, verify
from .reconcile import (
    CoverageEntry,
    ReconcileConfig,
    ReconciliationReport,
    Verdict,
    assess,
    coverage_ratio,
    emit_report,
)
from .categorize import Dendrogram, cophenetic_heights, cut, hac
from .testkit import (
    EntityConfig,
    GroundTruth,
    ScenarioConfig,
    compare_to_ground_truth,
    default_scenario,
    generate,
)
