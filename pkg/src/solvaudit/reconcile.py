"""Coverage ratios and solvency verdicts.

Compares on-chain EUR holdings at balance-sheet report dates against the
declared crypto asset positions. A ratio below theta_low is a SHORTFALL;
above 1 is flagged COVERED_EXCESS for auditor attention (excess usually
means equity or corporate funds held in the same wallets); missing
on-chain data or prices degrade to INSUFFICIENT_DATA, never to a verdict.
"""

import csv
import enum
import io
import json
from dataclasses import dataclass, field
from datetime import date, timedelta
from decimal import ROUND_HALF_EVEN, Decimal
from typing import Iterable, Mapping

from .errors import NegativeInput, StalePrice, UnsupportedFormat
from .holdings import BalanceSeries, PriceSeries, valuate

RATIO_PLACES = Decimal("0.0001")
EUR_PLACES = Decimal("0.01")
INFINITE_RATIO = Decimal("Infinity")


class Verdict(str, enum.Enum):
    COVERED = "COVERED"
    COVERED_EXCESS = "COVERED_EXCESS"
    SHORTFALL = "SHORTFALL"
    INSUFFICIENT_DATA = "INSUFFICIENT_DATA"


@dataclass(frozen=True)
class ReconcileConfig:
    theta_low: Decimal = Decimal("0.4")
    lookback_days: int = 30
    price_window_days: int = 7

    def echo(self) -> dict:
        return {
            "theta_low": str(self.theta_low),
            "lookback_days": self.lookback_days,
            "price_window_days": self.price_window_days,
        }


@dataclass
class CoverageEntry:
    entity: str
    report_date: date
    onchain_eur: Decimal | None
    declared_eur: Decimal | None
    ratio: Decimal | None
    is_proxy: bool
    verdict: Verdict


@dataclass
class ReconciliationReport:
    entries: list[CoverageEntry] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    config: ReconcileConfig = field(default_factory=ReconcileConfig)

    def sorted_entries(self) -> list[CoverageEntry]:
        return sorted(self.entries, key=lambda e: (e.entity, e.report_date))

    def has_shortfall(self) -> bool:
        return any(e.verdict is Verdict.SHORTFALL for e in self.entries)

    @classmethod
    def merge(cls, reports: Iterable["ReconciliationReport"], config: ReconcileConfig):
        merged = cls(config=config)
        for report in reports:
            merged.entries.extend(report.entries)
            merged.warnings.extend(report.warnings)
        return merged


def coverage_ratio(onchain_eur: Decimal, declared_eur: Decimal) -> Decimal:
    """onchain/declared to 4 decimal places, half-even.

    declared 0 with onchain 0 counts as full coverage (ratio 1); declared 0
    with onchain > 0 returns the infinite-ratio sentinel.
    """
    onchain_eur = Decimal(onchain_eur)
    declared_eur = Decimal(declared_eur)
    if onchain_eur < 0 or declared_eur < 0:
        raise NegativeInput(
            f"coverage_ratio inputs must be non-negative: "
            f"({onchain_eur}, {declared_eur})"
        )
    if declared_eur == 0:
        return Decimal("1.0000") if onchain_eur == 0 else INFINITE_RATIO
    return (onchain_eur / declared_eur).quantize(RATIO_PLACES, rounding=ROUND_HALF_EVEN)


def _verdict_for(ratio: Decimal, theta_low: Decimal) -> Verdict:
    if ratio < theta_low:
        return Verdict.SHORTFALL
    if ratio > 1:
        return Verdict.COVERED_EXCESS
    return Verdict.COVERED


def assess(
    entity: str,
    series_by_asset: Mapping[str, BalanceSeries],
    prices: PriceSeries,
    balance_sheets,
    config: ReconcileConfig = ReconcileConfig(),
    audit_dates: Iterable[date] | None = None,
) -> ReconciliationReport:
    """Build per-report-date coverage entries for one entity.

    For each report date the nearest on-chain observation at or before the
    date is valued, provided it falls inside the lookback window; anything
    that prevents a comparison (no observation, stale price, missing
    balance-sheet row for a requested audit date) becomes an
    INSUFFICIENT_DATA entry plus a warning rather than an error.
    """
    report = ReconciliationReport(config=config)
    records = {r.report_date: r for r in balance_sheets if r.entity == entity}
    dates = set(records)
    if audit_dates is not None:
        dates.update(audit_dates)

    for series in series_by_asset.values():
        report.warnings.extend(series.warnings)

    for day in sorted(dates):
        record = records.get(day)
        if record is None:
            report.warnings.append(
                f"insufficient-data: {entity} {day}: no balance-sheet record"
            )
            report.entries.append(CoverageEntry(
                entity, day, None, None, None, False, Verdict.INSUFFICIENT_DATA
            ))
            continue

        observed_ts = _latest_observation(series_by_asset, day)
        window_start = day - timedelta(days=config.lookback_days)
        if observed_ts is None or _ts_to_date(observed_ts) < window_start:
            report.warnings.append(
                f"insufficient-data: {entity} {day}: no on-chain observation "
                f"within {config.lookback_days} days"
            )
            report.entries.append(CoverageEntry(
                entity, day, None, record.crypto_assets_eur, None,
                record.is_proxy, Verdict.INSUFFICIENT_DATA,
            ))
            continue

        try:
            valuation = valuate(
                series_by_asset, prices, day,
                price_window_days=config.price_window_days,
            )
        except StalePrice as exc:
            report.warnings.append(f"insufficient-data: {entity} {day}: {exc}")
            report.entries.append(CoverageEntry(
                entity, day, None, record.crypto_assets_eur, None,
                record.is_proxy, Verdict.INSUFFICIENT_DATA,
            ))
            continue

        report.warnings.extend(valuation.warnings)
        onchain = valuation.total_eur
        declared = record.crypto_assets_eur.quantize(
            EUR_PLACES, rounding=ROUND_HALF_EVEN
        )
        if onchain < 0:
            # Partial view drove the reconstruction negative: there is no
            # meaningful coverage number, only a data-gap finding.
            report.warnings.append(
                f"insufficient-data: {entity} {day}: negative on-chain total {onchain}"
            )
            report.entries.append(CoverageEntry(
                entity, day, onchain, declared, None,
                record.is_proxy, Verdict.INSUFFICIENT_DATA,
            ))
            continue
        ratio = coverage_ratio(onchain, declared)
        report.entries.append(CoverageEntry(
            entity, day, onchain, declared, ratio,
            record.is_proxy, _verdict_for(ratio, config.theta_low),
        ))
    return report


def _latest_observation(series_by_asset: Mapping[str, BalanceSeries], day: date):
    """Timestamp of the freshest series point at or before the day's end."""
    cutoff = (day - date(1970, 1, 1)).days * 86400 + 86399
    best = None
    for series in series_by_asset.values():
        for point in reversed(series.points):
            if point.timestamp <= cutoff:
                if best is None or point.timestamp > best:
                    best = point.timestamp
                break
    return best


def _ts_to_date(ts: int) -> date:
    return date(1970, 1, 1) + timedelta(days=ts // 86400)


# ---------------------------------------------------------------------------
# Emission
# ---------------------------------------------------------------------------

def emit_report(report: ReconciliationReport, fmt: str = "json") -> bytes:
    """Deterministic serialization: stable key order, entries sorted by
    (entity, report_date), warnings sorted."""
    if fmt == "json":
        return _emit_json(report)
    if fmt == "csv":
        return _emit_csv(report)
    raise UnsupportedFormat(fmt)


def _entry_dict(entry: CoverageEntry) -> dict:
    return {
        "entity": entry.entity,
        "report_date": entry.report_date.isoformat(),
        "onchain_eur": None if entry.onchain_eur is None else str(entry.onchain_eur),
        "declared_eur": None if entry.declared_eur is None else str(entry.declared_eur),
        "ratio": None if entry.ratio is None else str(entry.ratio),
        "is_proxy": entry.is_proxy,
        "verdict": entry.verdict.value,
    }


def _emit_json(report: ReconciliationReport) -> bytes:
    doc = {
        "config": report.config.echo(),
        "entries": [_entry_dict(e) for e in report.sorted_entries()],
        "warnings": sorted(report.warnings),
    }
    return (json.dumps(doc, indent=2) + "\n").encode("utf-8")


def _emit_csv(report: ReconciliationReport) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(
        ["entity", "report_date", "onchain_eur", "declared_eur", "ratio",
         "is_proxy", "verdict"]
    )
    for entry in report.sorted_entries():
        d = _entry_dict(entry)
        writer.writerow([
            d["entity"], d["report_date"],
            d["onchain_eur"] or "", d["declared_eur"] or "", d["ratio"] or "",
            "true" if d["is_proxy"] else "false", d["verdict"],
        ])
    return buf.getvalue().encode("utf-8")
