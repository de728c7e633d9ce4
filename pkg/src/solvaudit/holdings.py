"""Per-entity balance reconstruction and EUR valuation.

UTXO-side balances are rebuilt from net transaction flows against the
entity's clusters; account-side balances are sampled on a fixed block grid.
Negative balances are reported, never clamped: they signal deposits the
tag collection did not observe, which is itself an audit finding.
"""

import csv
import io
from bisect import bisect_right
from dataclasses import dataclass, field
from datetime import date, timedelta
from decimal import Decimal
from fractions import Fraction
from typing import Iterable, Mapping, NamedTuple

from .assets import BTC, AssetId, AssetRegistry, default_registry
from .errors import IntervalZero, StalePrice, UnknownEntity

DATA_GAP_WARNING = "data-gap"
NEGATIVE_VALUATION_WARNING = "negative-balance-valuation"


class SeriesPoint(NamedTuple):
    block: int
    timestamp: int
    balance: int


@dataclass(slots=True)
class FlowEvent:
    """Net effect of one transaction on an entity, in base units."""

    timestamp: int
    block: int
    asset: AssetId
    delta: int
    txid: str


@dataclass
class BalanceSeries:
    """Ordered per-entity, per-asset balance history in base units."""

    entity: str
    asset: AssetId
    points: list[SeriesPoint] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def balance_at_block(self, block: int) -> int:
        """Last-known balance at or before the given block (0 if none)."""
        blocks = [p.block for p in self.points]
        i = bisect_right(blocks, block)
        return self.points[i - 1].balance if i else 0

    def balance_at_timestamp(self, ts: int) -> int:
        stamps = [p.timestamp for p in self.points]
        i = bisect_right(stamps, ts)
        return self.points[i - 1].balance if i else 0

    def last(self) -> SeriesPoint | None:
        return self.points[-1] if self.points else None


class PriceSeries:
    """Daily EUR prices per asset; lookups use the latest point at or
    before the query date, bounded by a staleness window."""

    def __init__(self, points: Iterable = ()):
        self._by_asset: dict[str, list] = {}
        for point in points:
            self._by_asset.setdefault(point.asset, []).append(point)
        for rows in self._by_asset.values():
            rows.sort(key=lambda p: p.date)

    def lookup(self, asset: str, at: date, window_days: int | None = 7) -> Decimal:
        """EUR per whole unit of asset at the given date.

        Raises StalePrice when no point exists at or before the date, or
        when the latest one is older than window_days.
        """
        rows = self._by_asset.get(asset, [])
        dates = [p.date for p in rows]
        i = bisect_right(dates, at)
        if i == 0:
            raise StalePrice(asset, at)
        point = rows[i - 1]
        if window_days is not None and (at - point.date).days > window_days:
            raise StalePrice(asset, at)
        return point.eur_per_unit

    def points(self) -> list:
        out = []
        for asset in sorted(self._by_asset):
            out.extend(self._by_asset[asset])
        return out

    def assets(self) -> list[str]:
        return sorted(self._by_asset)

    def __len__(self) -> int:
        return sum(len(rows) for rows in self._by_asset.values())


@dataclass
class Valuation:
    """EUR value of a holdings snapshot, with per-asset breakdown."""

    total_eur: Decimal
    breakdown: dict[str, Decimal]
    warnings: list[str] = field(default_factory=list)


# ---------------------------------------------------------------------------
# UTXO-side flows
# ---------------------------------------------------------------------------

def entity_utxo_flows(
    txs,
    index,
    entities,
    entity: str,
    asset: AssetId = BTC,
    address_level: bool = False,
) -> list[FlowEvent]:
    """One FlowEvent per transaction with a nonzero net effect on the entity.

    delta = outputs paid to the entity minus inputs spent by it, so change
    returned to the entity's own cluster nets out and fees leave its
    balance. With address_level=True only the tagged addresses themselves
    count, ignoring cluster expansion (the cross-check mode).
    """
    if entity not in entities.entity_to_clusters:
        raise UnknownEntity(entity)

    if address_level:
        owned_addresses = entities.tagged_utxo_addresses.get(entity, set())

        def is_entity(address: str) -> bool:
            return address in owned_addresses
    else:
        owned_clusters = entities.entity_to_clusters[entity]

        def is_entity(address: str) -> bool:
            cluster = index.cluster_of_or_none(address)
            return cluster is not None and cluster in owned_clusters

    flows: list[FlowEvent] = []
    for tx in txs:
        delta = 0
        touched = False
        for address, value in tx.outputs:
            if is_entity(address):
                delta += value
                touched = True
        for address, value in tx.inputs:
            if is_entity(address):
                delta -= value
                touched = True
        if touched and delta != 0:
            flows.append(FlowEvent(tx.timestamp, tx.block, asset, delta, tx.txid))
    return flows


def balance_series_utxo(
    flows: Iterable[FlowEvent],
    entity: str,
    asset: AssetId = BTC,
) -> BalanceSeries:
    """Cumulative balance series from sorted flows, one point per block.

    A negative running balance is emitted verbatim with a data-gap warning
    attached: it means deposits happened on addresses we cannot see.
    """
    series = BalanceSeries(entity=entity, asset=asset)
    flows = sorted(flows, key=lambda f: f.block)
    balance = 0
    gap_reported = False
    i = 0
    while i < len(flows):
        block = flows[i].block
        timestamp = flows[i].timestamp
        while i < len(flows) and flows[i].block == block:
            balance += flows[i].delta
            timestamp = flows[i].timestamp
            i += 1
        series.points.append(SeriesPoint(block, timestamp, balance))
        if balance < 0 and not gap_reported:
            series.warnings.append(
                f"{DATA_GAP_WARNING}: {entity}/{asset.symbol} balance negative "
                f"from block {block}; on-chain view is partial"
            )
            gap_reported = True
    return series


# ---------------------------------------------------------------------------
# Account-side snapshots
# ---------------------------------------------------------------------------

def account_snapshots(
    transfers,
    watch_addresses: set[str],
    interval_blocks: int = 10000,
    assets: Iterable[AssetId] | None = None,
    entity: str = "",
    registry: AssetRegistry | None = None,
) -> dict[str, BalanceSeries]:
    """Sampled balances on the block grid {0, N, 2N, ...}.

    Each grid value is the exact sum of all transfers with block <= g that
    touch a watched address; the last grid point always covers the final
    transfer block. Returns one series per asset, zero-filled for assets
    with no activity.
    """
    if interval_blocks <= 0:
        raise IntervalZero(f"interval must be positive, got {interval_blocks}")
    registry = registry if registry is not None else default_registry()

    transfers = sorted(transfers, key=lambda t: t.block)
    if assets is None:
        symbols = sorted({t.asset for t in transfers})
        assets = [registry.get(s) for s in symbols]
    assets = sorted(assets, key=lambda a: a.symbol)

    max_block = transfers[-1].block if transfers else 0
    grid_end = ((max_block + interval_blocks - 1) // interval_blocks) * interval_blocks
    grid = list(range(0, grid_end + 1, interval_blocks))

    balances: dict[str, int] = {a.symbol: 0 for a in assets}
    series = {
        a.symbol: BalanceSeries(entity=entity, asset=a) for a in assets
    }
    cursor = 0
    last_ts = 0
    for g in grid:
        while cursor < len(transfers) and transfers[cursor].block <= g:
            t = transfers[cursor]
            if t.asset in balances:
                if t.recipient in watch_addresses:
                    balances[t.asset] += t.value
                if t.sender in watch_addresses:
                    balances[t.asset] -= t.value
            last_ts = t.timestamp
            cursor += 1
        for symbol in balances:
            series[symbol].points.append(SeriesPoint(g, last_ts, balances[symbol]))
    return series


# ---------------------------------------------------------------------------
# EUR valuation
# ---------------------------------------------------------------------------

def _day_end(at: date) -> int:
    """Unix timestamp of the last second of the given UTC day."""
    return (at - date(1970, 1, 1)).days * 86400 + 86399


def round_half_even_cents(value: Fraction) -> Decimal:
    """Round an exact rational EUR amount half-even to whole cents."""
    cents = value * 100
    n, d = cents.numerator, cents.denominator
    q = n // d
    r = n - q * d
    if 2 * r > d or (2 * r == d and q % 2 == 1):
        q += 1
    return Decimal(q) * Decimal("0.01")


def valuate(
    series_by_asset: Mapping[str, BalanceSeries],
    prices: PriceSeries,
    at: date,
    price_window_days: int = 7,
) -> Valuation:
    """EUR value of all balances as of the end of the given day.

    Arithmetic is exact rational; the total is rounded half-even to cents
    once at the end (per-asset breakdown entries are rounded the same way
    for display). Nonzero balances without a usable price raise StalePrice;
    negative balances valuate negative and attach a warning.
    """
    cutoff = _day_end(at)
    total = Fraction(0)
    breakdown: dict[str, Decimal] = {}
    warnings: list[str] = []
    for symbol in sorted(series_by_asset):
        series = series_by_asset[symbol]
        balance = series.balance_at_timestamp(cutoff)
        if balance == 0:
            breakdown[symbol] = Decimal("0.00")
            continue
        price = prices.lookup(symbol, at, window_days=price_window_days)
        eur = Fraction(balance) * Fraction(price) / (10 ** series.asset.decimals)
        if balance < 0:
            warnings.append(
                f"{NEGATIVE_VALUATION_WARNING}: {series.entity}/{symbol} at {at} "
                f"is {balance} base units"
            )
        total += eur
        breakdown[symbol] = round_half_even_cents(eur)
    return Valuation(round_half_even_cents(total), breakdown, warnings)


# ---------------------------------------------------------------------------
# Series export
# ---------------------------------------------------------------------------

SERIES_CSV_HEADER = "entity,asset,block,timestamp,balance_base_units,eur_value"


def serialize_series_csv(
    series_list: Iterable[BalanceSeries],
    prices: PriceSeries | None = None,
    price_window_days: int = 7,
) -> str:
    """CSV export of one or more balance series; the eur_value column is
    filled only when a price series is supplied and a price is available."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SERIES_CSV_HEADER.split(","))
    for series in series_list:
        for point in series.points:
            eur = ""
            if prices is not None:
                try:
                    price = prices.lookup(
                        series.asset.symbol,
                        _ts_day(point.timestamp),
                        window_days=price_window_days,
                    )
                except StalePrice:
                    eur = ""
                else:
                    exact = (
                        Fraction(point.balance)
                        * Fraction(price)
                        / (10 ** series.asset.decimals)
                    )
                    eur = str(round_half_even_cents(exact))
            writer.writerow([
                series.entity,
                series.asset.symbol,
                point.block,
                point.timestamp,
                point.balance,
                eur,
            ])
    return buf.getvalue()


def parse_series_csv(text: str, registry: AssetRegistry | None = None) -> dict:
    """Read a series CSV back into {(entity, asset): BalanceSeries}."""
    registry = registry if registry is not None else default_registry()
    out: dict[tuple[str, str], BalanceSeries] = {}
    lines = text.splitlines()
    if not lines or lines[0] != SERIES_CSV_HEADER:
        raise ValueError(f"expected header {SERIES_CSV_HEADER!r}")
    for row in csv.reader(lines[1:]):
        if not row:
            continue
        entity, symbol, block, timestamp, balance = row[0], row[1], row[2], row[3], row[4]
        key = (entity, symbol)
        if key not in out:
            out[key] = BalanceSeries(entity=entity, asset=registry.get(symbol))
        out[key].points.append(
            SeriesPoint(int(block), int(timestamp), int(balance))
        )
    return out


def _ts_day(ts: int) -> date:
    return date(1970, 1, 1) + timedelta(days=ts // 86400)
