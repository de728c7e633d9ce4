"""Command-line pipeline: ingest -> cluster -> holdings -> reconcile.

Exit codes: 0 ok, 1 error, 2 audit found a shortfall, 3 proof rejected.
Configuration precedence is defaults < config file < flags; the effective
reconciliation settings are echoed inside report.json so a run can be
reproduced from its own output.
"""

import csv
import io
import json
import pathlib
import sys
from decimal import Decimal

import click

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import categorize as categorize_mod
from . import cluster as cluster_mod
from . import holdings as holdings_mod
from . import pol as pol_mod
from . import reconcile as reconcile_mod
from . import testkit
from .assets import default_registry, registry_from_spec
from .errors import SolvauditError
from .ingest import (
    parse_account_transfers,
    parse_attribution_tags,
    parse_balance_sheets,
    parse_price_series,
    parse_service_features,
    parse_utxo_transactions,
)
from .rng import SplitMix64, derive_seed

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_AUDIT_FAIL = 2
EXIT_VERIFY_REJECT = 3


def _fail(message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(EXIT_ERROR)


def _guard(fn):
    """Map library and I/O errors to structured stderr + exit 1."""
    import functools

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except SolvauditError as exc:
            _fail(f"{type(exc).__name__}: {exc}")
        except OSError as exc:
            _fail(f"{type(exc).__name__}: {exc}")

    return wrapper


def _apply_config(ctx: click.Context, config_path: str | None) -> None:
    """Fill parameters still at their defaults from a TOML config file."""
    if not config_path:
        return
    with open(config_path, "rb") as fh:
        data = tomllib.load(fh)
    for name, value in data.items():
        key = name.replace("-", "_")
        if key not in ctx.params:
            continue
        source = ctx.get_parameter_source(key)
        if source is click.core.ParameterSource.DEFAULT:
            ctx.params[key] = value


def _out_dir(out: str | None) -> pathlib.Path:
    if not out:
        _fail("--out (or SOLVAUDIT_OUT) is required")
    path = pathlib.Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _read(path: str | None, what: str) -> str:
    if not path:
        _fail(f"--{what} is required for this command")
    p = pathlib.Path(path)
    if not p.exists():
        _fail(f"--{what}: no such file: {path}")
    return p.read_text(encoding="utf-8")


def _registry(assets_spec: str | None):
    return registry_from_spec(assets_spec) if assets_spec else default_registry()


def _slug(name: str) -> str:
    return "".join(c if c.isalnum() or c in "-_" else "_" for c in name)


_out_option = click.option(
    "--out", envvar="SOLVAUDIT_OUT", default=None,
    help="Output directory (env fallback: SOLVAUDIT_OUT).",
)
_config_option = click.option(
    "--config", "config_path", default=None,
    help="TOML config file; flags override file values.",
)
_lenient_option = click.option(
    "--lenient", is_flag=True, default=False,
    help="Skip malformed input lines and log them instead of failing.",
)


@click.group()
@click.version_option(package_name="solvaudit")
def main():
    """Reconstruct entity cryptoasset holdings and reconcile them against
    declared balance-sheet positions."""


# ---------------------------------------------------------------------------
# audit: the full pipeline
# ---------------------------------------------------------------------------

@main.command("audit")
@click.option("--txs", default=None, help="UTXO transactions JSONL.")
@click.option("--transfers", default=None, help="Account transfers JSONL.")
@click.option("--tags", default=None, help="Attribution tags CSV.")
@click.option("--prices", default=None, help="Daily EUR prices CSV.")
@click.option("--balance-sheets", "balance_sheets", default=None,
              help="Declared balance-sheet positions CSV.")
@click.option("--entity", "entity_filter", multiple=True,
              help="Audit only these entities (repeatable).")
@click.option("--interval", default=10000, show_default=True,
              help="Account snapshot interval in blocks.")
@click.option("--theta-low", default="0.4", show_default=True,
              help="Coverage ratio below which the verdict is SHORTFALL.")
@click.option("--price-window-days", default=7, show_default=True,
              help="Maximum price staleness in days.")
@click.option("--lookback-days", default=30, show_default=True,
              help="How far before a report date an observation may lie.")
@click.option("--assets", "assets_spec", default=None,
              help="Registry override, e.g. 'BTC:8,ETH:18'.")
@_lenient_option
@_config_option
@_out_option
@click.pass_context
@_guard
def cmd_audit(ctx, txs, transfers, tags, prices, balance_sheets, entity_filter,
              interval, theta_low, price_window_days, lookback_days,
              assets_spec, lenient, config_path, out):
    """Run the whole pipeline and write report.json plus series exports."""
    _apply_config(ctx, config_path)
    p = ctx.params
    interval, theta_low = p["interval"], p["theta_low"]
    price_window_days, lookback_days = p["price_window_days"], p["lookback_days"]
    txs, transfers, tags = p["txs"], p["transfers"], p["tags"]
    prices, balance_sheets, out = p["prices"], p["balance_sheets"], p["out"]
    lenient = p["lenient"]

    out_path = _out_dir(out)
    registry = _registry(p["assets_spec"])
    if not txs and not transfers:
        _fail("at least one of --txs/--transfers is required")

    issues: list[str] = []
    tag_set = parse_attribution_tags(_read(tags, "tags"), lenient=lenient)
    issues.extend(getattr(tag_set, "issues", []))
    price_series = parse_price_series(_read(prices, "prices"), lenient=lenient)
    issues.extend(getattr(price_series, "issues", []))
    sheet_result = parse_balance_sheets(
        _read(balance_sheets, "balance-sheets"), lenient=lenient
    )
    issues.extend(sheet_result.issues)
    records = sheet_result.records

    transactions = []
    if txs:
        tx_result = parse_utxo_transactions(_read(txs, "txs"), lenient=lenient)
        issues.extend(tx_result.issues)
        transactions = tx_result.records
    transfer_records = []
    if transfers:
        tr_result = parse_account_transfers(
            _read(transfers, "transfers"), registry=registry, lenient=lenient
        )
        issues.extend(tr_result.issues)
        transfer_records = tr_result.records

    index = cluster_mod.build_clusters(transactions)
    entities = cluster_mod.attribute_clusters(index, tag_set)

    entity_filter = p["entity_filter"]
    audited = sorted(entity_filter) if entity_filter else sorted(
        {r.entity for r in records}
    )

    config = reconcile_mod.ReconcileConfig(
        theta_low=Decimal(str(theta_low)),
        lookback_days=lookback_days,
        price_window_days=price_window_days,
    )
    reports = []
    all_series = []
    series_dir = out_path / "series"
    series_dir.mkdir(exist_ok=True)
    for entity in audited:
        series_by_asset = _entity_series(
            entity, transactions, transfer_records, index, entities,
            interval, registry,
        )
        all_series.extend(series_by_asset.values())
        (series_dir / f"{_slug(entity)}.csv").write_text(
            holdings_mod.serialize_series_csv(
                series_by_asset.values(), prices=price_series,
                price_window_days=price_window_days,
            )
        )
        reports.append(reconcile_mod.assess(
            entity, series_by_asset, price_series, records, config,
        ))
    report = reconcile_mod.ReconciliationReport.merge(reports, config)
    report.warnings.extend(issues)
    report.warnings.extend(entities.warnings)

    (out_path / "report.json").write_bytes(reconcile_mod.emit_report(report, "json"))
    (out_path / "report.csv").write_bytes(reconcile_mod.emit_report(report, "csv"))
    (out_path / "series.csv").write_text(holdings_mod.serialize_series_csv(
        all_series, prices=price_series, price_window_days=price_window_days,
    ))
    (out_path / "warnings.log").write_text(
        "".join(w + "\n" for w in sorted(report.warnings))
    )
    click.echo(f"audited {len(audited)} entities -> {out_path / 'report.json'}")
    sys.exit(EXIT_AUDIT_FAIL if report.has_shortfall() else EXIT_OK)


def _entity_series(entity, transactions, transfer_records, index, entities,
                   interval, registry):
    """UTXO flow series plus account snapshot series for one entity."""
    series_by_asset = {}
    if transactions and entity in entities.entity_to_clusters:
        flows = holdings_mod.entity_utxo_flows(transactions, index, entities, entity)
        series = holdings_mod.balance_series_utxo(flows, entity)
        series_by_asset[series.asset.symbol] = series
    watch = entities.account_addresses.get(entity, set())
    if transfer_records and watch:
        snapshots = holdings_mod.account_snapshots(
            transfer_records, watch, interval_blocks=interval,
            entity=entity, registry=registry,
        )
        series_by_asset.update(snapshots)
    return series_by_asset


# ---------------------------------------------------------------------------
# cluster / holdings / reconcile
# ---------------------------------------------------------------------------

@main.command("cluster")
@click.option("--txs", default=None, help="UTXO transactions JSONL.")
@click.option("--tags", default=None, help="Attribution tags CSV (optional).")
@_lenient_option
@_config_option
@_out_option
@click.pass_context
@_guard
def cmd_cluster(ctx, txs, tags, lenient, config_path, out):
    """Build the multi-input partition and dump clusters.csv + stats.json."""
    _apply_config(ctx, config_path)
    out_path = _out_dir(ctx.params["out"])
    tx_result = parse_utxo_transactions(
        _read(ctx.params["txs"], "txs"), lenient=ctx.params["lenient"]
    )
    index = cluster_mod.build_clusters(tx_result.records)
    entities = None
    if ctx.params["tags"]:
        tag_set = parse_attribution_tags(
            _read(ctx.params["tags"], "tags"), lenient=ctx.params["lenient"]
        )
        entities = cluster_mod.attribute_clusters(index, tag_set)
    stats = cluster_mod.cluster_stats(index)
    (out_path / "clusters.csv").write_text(
        cluster_mod.dump_clusters_csv(index, entities)
    )
    (out_path / "stats.json").write_text(json.dumps(
        {
            "cluster_count": stats.cluster_count,
            "address_count": stats.address_count,
            "largest_cluster": stats.largest_cluster,
            "size_histogram": {str(k): v for k, v in stats.size_histogram.items()},
        },
        indent=2,
    ) + "\n")
    click.echo(
        f"{stats.address_count} addresses in {stats.cluster_count} clusters "
        f"(largest {stats.largest_cluster})"
    )


@main.command("holdings")
@click.option("--txs", default=None, help="UTXO transactions JSONL.")
@click.option("--transfers", default=None, help="Account transfers JSONL.")
@click.option("--tags", default=None, help="Attribution tags CSV.")
@click.option("--prices", default=None, help="Optional prices CSV for EUR column.")
@click.option("--entity", "entity_filter", multiple=True)
@click.option("--interval", default=10000, show_default=True)
@click.option("--price-window-days", default=7, show_default=True)
@click.option("--assets", "assets_spec", default=None)
@_lenient_option
@_config_option
@_out_option
@click.pass_context
@_guard
def cmd_holdings(ctx, txs, transfers, tags, prices, entity_filter, interval,
                 price_window_days, assets_spec, lenient, config_path, out):
    """Reconstruct balance series and write series.csv."""
    _apply_config(ctx, config_path)
    p = ctx.params
    out_path = _out_dir(p["out"])
    registry = _registry(p["assets_spec"])
    if not p["txs"] and not p["transfers"]:
        _fail("at least one of --txs/--transfers is required")
    tag_set = parse_attribution_tags(_read(p["tags"], "tags"), lenient=p["lenient"])
    transactions = []
    if p["txs"]:
        transactions = parse_utxo_transactions(
            _read(p["txs"], "txs"), lenient=p["lenient"]
        ).records
    transfer_records = []
    if p["transfers"]:
        transfer_records = parse_account_transfers(
            _read(p["transfers"], "transfers"), registry=registry,
            lenient=p["lenient"],
        ).records
    price_series = None
    if p["prices"]:
        price_series = parse_price_series(_read(p["prices"], "prices"),
                                          lenient=p["lenient"])
    index = cluster_mod.build_clusters(transactions)
    entities = cluster_mod.attribute_clusters(index, tag_set)
    audited = sorted(p["entity_filter"]) if p["entity_filter"] else entities.entities()
    all_series = []
    for entity in audited:
        all_series.extend(_entity_series(
            entity, transactions, transfer_records, index, entities,
            p["interval"], registry,
        ).values())
    (out_path / "series.csv").write_text(holdings_mod.serialize_series_csv(
        all_series, prices=price_series, price_window_days=p["price_window_days"],
    ))
    click.echo(f"wrote series for {len(audited)} entities -> {out_path / 'series.csv'}")


@main.command("reconcile")
@click.option("--series", "series_path", default=None,
              help="Balance series CSV produced by the holdings command.")
@click.option("--prices", default=None)
@click.option("--balance-sheets", "balance_sheets", default=None)
@click.option("--theta-low", default="0.4", show_default=True)
@click.option("--price-window-days", default=7, show_default=True)
@click.option("--lookback-days", default=30, show_default=True)
@click.option("--assets", "assets_spec", default=None)
@_lenient_option
@_config_option
@_out_option
@click.pass_context
@_guard
def cmd_reconcile(ctx, series_path, prices, balance_sheets, theta_low,
                  price_window_days, lookback_days, assets_spec, lenient,
                  config_path, out):
    """Compare exported balance series against declared positions."""
    _apply_config(ctx, config_path)
    p = ctx.params
    out_path = _out_dir(p["out"])
    registry = _registry(p["assets_spec"])
    series_map = holdings_mod.parse_series_csv(
        _read(p["series_path"], "series"), registry=registry
    )
    price_series = parse_price_series(_read(p["prices"], "prices"),
                                      lenient=p["lenient"])
    records = parse_balance_sheets(
        _read(p["balance_sheets"], "balance-sheets"), lenient=p["lenient"]
    ).records
    config = reconcile_mod.ReconcileConfig(
        theta_low=Decimal(str(p["theta_low"])),
        lookback_days=p["lookback_days"],
        price_window_days=p["price_window_days"],
    )
    by_entity: dict[str, dict] = {}
    for (entity, symbol), series in series_map.items():
        by_entity.setdefault(entity, {})[symbol] = series
    reports = []
    for entity in sorted({r.entity for r in records}):
        reports.append(reconcile_mod.assess(
            entity, by_entity.get(entity, {}), price_series, records, config,
        ))
    report = reconcile_mod.ReconciliationReport.merge(reports, config)
    (out_path / "report.json").write_bytes(reconcile_mod.emit_report(report, "json"))
    (out_path / "report.csv").write_bytes(reconcile_mod.emit_report(report, "csv"))
    click.echo(f"wrote {out_path / 'report.json'}")
    sys.exit(EXIT_AUDIT_FAIL if report.has_shortfall() else EXIT_OK)


# ---------------------------------------------------------------------------
# pol
# ---------------------------------------------------------------------------

@main.group("pol")
def cmd_pol():
    """Merkle-sum-tree proof of liabilities."""


@cmd_pol.command("build")
@click.option("--balances", "balances_path", default=None,
              help="CSV with header user_id,balance.")
@click.option("--seed", default=0, show_default=True,
              help="Salt derivation seed; same seed reproduces the tree.")
@click.option("--attack-mode", is_flag=True, default=False,
              help="Allow negative balances (for testing detection).")
@_config_option
@_out_option
@click.pass_context
@_guard
def cmd_pol_build(ctx, balances_path, seed, attack_mode, config_path, out):
    """Build a tree and write tree.json (private) and root.json (public)."""
    _apply_config(ctx, config_path)
    out_path = _out_dir(ctx.params["out"])
    text = _read(ctx.params["balances_path"], "balances")
    rng = SplitMix64(derive_seed(ctx.params["seed"], "pol-salts"))
    leaves = []
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != ["user_id", "balance"]:
        _fail("--balances must have header user_id,balance")
    for row in rows[1:]:
        if not row:
            continue
        if len(row) != 2:
            _fail(f"bad balances row: {row}")
        leaves.append(pol_mod.new_leaf(row[0], int(row[1]), rng=rng))
    tree = pol_mod.build_tree(leaves, attack_mode=ctx.params["attack_mode"])
    (out_path / "tree.json").write_text(pol_mod.tree_to_json(tree))
    (out_path / "root.json").write_text(pol_mod.root_to_json(tree.root))
    click.echo(
        f"root digest {tree.root.digest.hex()} sum {tree.root.sum} "
        f"({len(leaves)} leaves)"
    )


@cmd_pol.command("prove")
@click.option("--tree", "tree_path", default=None, help="tree.json from build.")
@click.option("--user", "user_id", default=None, help="User id to prove.")
@_config_option
@_out_option
@click.pass_context
@_guard
def cmd_pol_prove(ctx, tree_path, user_id, config_path, out):
    """Write proof.json for one user."""
    _apply_config(ctx, config_path)
    out_path = _out_dir(ctx.params["out"])
    if not ctx.params["user_id"]:
        _fail("--user is required")
    tree = pol_mod.tree_from_json(_read(ctx.params["tree_path"], "tree"))
    proof = pol_mod.prove(tree, ctx.params["user_id"])
    (out_path / "proof.json").write_text(pol_mod.proof_to_json(tree.root, proof))
    click.echo(f"wrote {out_path / 'proof.json'} (path length {len(proof.path)})")


@cmd_pol.command("verify")
@click.option("--root", "root_path", default=None,
              help="root.json; defaults to the root embedded in the proof.")
@click.option("--proof", "proof_path", default=None, help="proof.json.")
@_config_option
@click.pass_context
@_guard
def cmd_pol_verify(ctx, root_path, proof_path, config_path):
    """Verify a proof; exit 0 on accept, 3 on reject."""
    _apply_config(ctx, config_path)
    embedded_root, proof = pol_mod.proof_from_json(
        _read(ctx.params["proof_path"], "proof")
    )
    root = embedded_root
    if ctx.params["root_path"]:
        root = pol_mod.root_from_json(_read(ctx.params["root_path"], "root"))
    result = pol_mod.verify(root, proof)
    if result.accepted:
        click.echo("accept")
        sys.exit(EXIT_OK)
    click.echo(f"reject: {result.reason}")
    sys.exit(EXIT_VERIFY_REJECT)


# ---------------------------------------------------------------------------
# categorize / gen
# ---------------------------------------------------------------------------

@main.command("categorize")
@click.option("--features", "features_path", default=None,
              help="Service features CSV.")
@click.option("--k", default=5, show_default=True, help="Number of clusters.")
@_lenient_option
@_config_option
@_out_option
@click.pass_context
@_guard
def cmd_categorize(ctx, features_path, k, lenient, config_path, out):
    """Cluster providers by service offering; write dendrogram + cut."""
    _apply_config(ctx, config_path)
    out_path = _out_dir(ctx.params["out"])
    matrix = parse_service_features(
        _read(ctx.params["features_path"], "features"), lenient=ctx.params["lenient"]
    )
    dendrogram = categorize_mod.hac(matrix)
    labels = categorize_mod.cut(dendrogram, ctx.params["k"])
    (out_path / "dendrogram.json").write_text(
        categorize_mod.dendrogram_to_json(dendrogram)
    )
    (out_path / "clusters.csv").write_text(categorize_mod.cut_to_csv(labels))
    click.echo(
        f"cut {len(matrix)} providers into {ctx.params['k']} groups -> "
        f"{out_path / 'clusters.csv'}"
    )


@main.command("gen")
@click.option("--seed", default=1, show_default=True, help="Scenario seed.")
@_config_option
@_out_option
@click.pass_context
@_guard
def cmd_gen(ctx, seed, config_path, out):
    """Generate the synthetic audit scenario with ground truth."""
    _apply_config(ctx, config_path)
    out_path = _out_dir(ctx.params["out"])
    config = testkit.default_scenario(ctx.params["seed"])
    output = testkit.generate(config)
    output.write(out_path)
    click.echo(f"wrote scenario (seed {ctx.params['seed']}) to {out_path}")


if __name__ == "__main__":
    main()
