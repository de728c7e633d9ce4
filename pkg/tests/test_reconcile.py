import json
from datetime import date
from decimal import Decimal

import pytest

from solvaudit.assets import BTC
from solvaudit.errors import NegativeInput, UnsupportedFormat
from solvaudit.holdings import BalanceSeries, PriceSeries, SeriesPoint
from solvaudit.ingest import PricePoint, parse_balance_sheets
from solvaudit.reconcile import (
    INFINITE_RATIO,
    ReconcileConfig,
    ReconciliationReport,
    Verdict,
    assess,
    coverage_ratio,
    emit_report,
)


def day_ts(d: date) -> int:
    return (d - date(1970, 1, 1)).days * 86400


class TestCoverageRatio:
    def test_four_decimal_ratio(self):
        assert coverage_ratio(Decimal("7559"), Decimal("10000")) == Decimal("0.7559")

    def test_vacuous_full_coverage(self):
        assert coverage_ratio(Decimal("0"), Decimal("0")) == Decimal("1.0000")

    def test_excess(self):
        assert coverage_ratio(Decimal("19456"), Decimal("10000")) == Decimal("1.9456")

    def test_infinite_sentinel(self):
        assert coverage_ratio(Decimal("1"), Decimal("0")) == INFINITE_RATIO

    def test_negative_input(self):
        with pytest.raises(NegativeInput):
            coverage_ratio(Decimal("-1"), Decimal("5"))

    def test_half_even_at_4_places(self):
        # 0.123450 rounds to 0.1234 (even), 0.123550 to 0.1236
        assert coverage_ratio(Decimal("12345"), Decimal("100000")) == Decimal("0.1234")
        assert coverage_ratio(Decimal("12355"), Decimal("100000")) == Decimal("0.1236")


REPORT_DATES = [date(2018, 12, 31), date(2019, 12, 31),
                date(2020, 12, 31), date(2021, 12, 31)]


def fixture(onchain_eur_by_date, declared_eur=Decimal("10000.00"), is_proxy=False):
    """Series + prices + sheet rows making valuation hit the given EUR
    figures exactly (BTC at 1.00 EUR, balance = EUR * 1e8 satoshi)."""
    points = [
        SeriesPoint(block=i + 1, timestamp=day_ts(d) - 3600,
                    balance=int(eur * 100_000_000))
        for i, (d, eur) in enumerate(sorted(onchain_eur_by_date.items()))
    ]
    series = {"BTC": BalanceSeries("E", BTC, points)}
    prices = PriceSeries([
        PricePoint(d, "BTC", Decimal("1.00")) for d in onchain_eur_by_date
    ])
    sheet_csv = "entity,report_date,crypto_assets_eur,is_proxy\n" + "".join(
        f"E,{d.isoformat()},{declared_eur},{'true' if is_proxy else 'false'}\n"
        for d in sorted(onchain_eur_by_date)
    )
    records = parse_balance_sheets(sheet_csv).records
    return series, prices, records


class TestAssess:
    def test_consistent_entity_shape(self):
        onchain = dict(zip(REPORT_DATES, [
            Decimal("7559"), Decimal("6668"), Decimal("19456"), Decimal("11679"),
        ]))
        series, prices, records = fixture(onchain)
        report = assess("E", series, prices, records)
        ratios = [e.ratio for e in report.sorted_entries()]
        assert ratios == [Decimal("0.7559"), Decimal("0.6668"),
                          Decimal("1.9456"), Decimal("1.1679")]
        verdicts = [e.verdict for e in report.sorted_entries()]
        assert verdicts == [Verdict.COVERED, Verdict.COVERED,
                            Verdict.COVERED_EXCESS, Verdict.COVERED_EXCESS]

    def test_shortfall_entity(self):
        series, prices, records = fixture({REPORT_DATES[3]: Decimal("1685")})
        report = assess("E", series, prices, records)
        entry = report.entries[0]
        assert entry.ratio == Decimal("0.1685")
        assert entry.verdict is Verdict.SHORTFALL

    def test_missing_sheet_row_for_audited_date(self):
        series, prices, records = fixture({REPORT_DATES[0]: Decimal("100")})
        extra = date(2022, 12, 31)
        report = assess("E", series, prices, records, audit_dates=[extra])
        by_date = {e.report_date: e for e in report.entries}
        assert by_date[extra].verdict is Verdict.INSUFFICIENT_DATA
        assert by_date[REPORT_DATES[0]].verdict is not Verdict.INSUFFICIENT_DATA

    def test_observation_outside_lookback(self):
        series, prices, records = fixture({REPORT_DATES[0]: Decimal("100")})
        # shift the only observation 90 days before the report date
        series["BTC"].points[0] = SeriesPoint(
            1, day_ts(REPORT_DATES[0]) - 90 * 86400, series["BTC"].points[0].balance
        )
        report = assess("E", series, prices, records)
        assert report.entries[0].verdict is Verdict.INSUFFICIENT_DATA
        assert any("no on-chain observation" in w for w in report.warnings)

    def test_stale_price_degrades_to_insufficient(self):
        series, prices, records = fixture({REPORT_DATES[0]: Decimal("100")})
        stale_prices = PriceSeries([
            PricePoint(REPORT_DATES[0].replace(month=6, day=30), "BTC", Decimal("1.00"))
        ])
        report = assess("E", series, stale_prices, records)
        assert report.entries[0].verdict is Verdict.INSUFFICIENT_DATA

    def test_proxy_propagates(self):
        series, prices, records = fixture(
            {REPORT_DATES[0]: Decimal("100")}, is_proxy=True
        )
        report = assess("E", series, prices, records)
        assert report.entries[0].is_proxy is True

    def test_verdict_monotone_in_onchain(self):
        theta = ReconcileConfig().theta_low
        order = {Verdict.SHORTFALL: 0, Verdict.COVERED: 1, Verdict.COVERED_EXCESS: 2}
        previous = -1
        for eur in [Decimal(x) for x in ("100", "3999", "4000", "9000",
                                         "10000", "10001", "50000")]:
            series, prices, records = fixture({REPORT_DATES[0]: eur})
            report = assess("E", series, prices, records,
                            ReconcileConfig(theta_low=theta))
            verdict = report.entries[0].verdict
            assert order[verdict] >= previous
            previous = order[verdict]


class TestEmit:
    def test_empty_report_is_valid_json(self):
        payload = emit_report(ReconciliationReport(), "json")
        doc = json.loads(payload)
        assert doc["entries"] == []
        assert set(doc) == {"config", "entries", "warnings"}

    def test_byte_identical(self):
        series, prices, records = fixture({REPORT_DATES[0]: Decimal("7559")})
        report = assess("E", series, prices, records)
        assert emit_report(report, "json") == emit_report(report, "json")
        assert emit_report(report, "csv") == emit_report(report, "csv")

    def test_csv_preserves_every_entry(self):
        onchain = dict(zip(REPORT_DATES, [Decimal("1")] * 4))
        series, prices, records = fixture(onchain)
        report = assess("E", series, prices, records)
        doc = json.loads(emit_report(report, "json"))
        csv_lines = emit_report(report, "csv").decode().splitlines()
        assert len(csv_lines) - 1 == len(doc["entries"]) == 4
        for line, entry in zip(csv_lines[1:], doc["entries"]):
            fields = line.split(",")
            assert fields[0] == entry["entity"]
            assert fields[1] == entry["report_date"]
            assert fields[4] == entry["ratio"]

    def test_unsupported_format(self):
        with pytest.raises(UnsupportedFormat):
            emit_report(ReconciliationReport(), "xml")

    def test_config_echoed(self):
        config = ReconcileConfig(theta_low=Decimal("0.25"), lookback_days=10)
        doc = json.loads(emit_report(ReconciliationReport(config=config), "json"))
        assert doc["config"]["theta_low"] == "0.25"
        assert doc["config"]["lookback_days"] == 10
