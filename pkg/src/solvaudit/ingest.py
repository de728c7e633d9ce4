"""Streaming parsers for the five input formats plus their serializers.

This is the only module that touches raw file content. All parsers are
strict by default: the first bad line raises. With lenient=True bad lines
are skipped and reported in ParseResult.issues instead, so that
len(input lines) == len(records) + len(issues) always holds.

File formats (UTF-8, LF):
  transactions.jsonl  {"txid":hex64,"block":u64,"timestamp":u64,
                       "inputs":[{"address":str,"value":u64}],"outputs":[...]}
  transfers.jsonl     {"block":u64,"timestamp":u64,"asset":str,
                       "from":str,"to":str,"value":decimal-string}
                      MINT/BURN sentinel address: "0x0"
  tags.csv            address,ledger,entity,source,confidence
  prices.csv          date,asset,eur_per_unit
  balance_sheets.csv  entity,report_date,crypto_assets_eur,is_proxy
  features.csv        vasp_id,custody,buy_sell,payment,consulting,trading
"""

import csv
import io
import json
import re
from dataclasses import dataclass, field
from datetime import date
from decimal import Decimal, InvalidOperation

from .assets import MAX_AMOUNT, AssetRegistry, default_registry
from .errors import (
    ConflictingTag,
    DuplicateKey,
    DuplicateTxid,
    FeeNegative,
    MalformedLine,
    MalformedRow,
    NegativeValue,
    NonBinaryFeature,
    SolvauditError,
    ValueOverflow,
)
from .holdings import PriceSeries

MINT_BURN_SENTINEL = "0x0"

UTXO_LEDGER = "UTXO"
ACCOUNT_LEDGER = "ACCOUNT"

_TXID_RE = re.compile(r"^[0-9a-f]{64}$")
_U64_MAX = (1 << 64) - 1
_UINT_RE = re.compile(r"^(0|[1-9][0-9]*)$")


# ---------------------------------------------------------------------------
# Domain records
# ---------------------------------------------------------------------------

@dataclass(slots=True)
class UtxoTransaction:
    """One UTXO-model transaction. Coinbase transactions have no inputs."""

    txid: str
    block: int
    timestamp: int
    inputs: tuple
    outputs: tuple

    @property
    def is_coinbase(self) -> bool:
        return len(self.inputs) == 0

    @property
    def fee(self) -> int:
        """Inputs minus outputs; zero for coinbase."""
        if self.is_coinbase:
            return 0
        return sum(v for _, v in self.inputs) - sum(v for _, v in self.outputs)


@dataclass(slots=True)
class AccountTransfer:
    """One account-model state transition; value in asset base units."""

    block: int
    timestamp: int
    asset: str
    sender: str
    recipient: str
    value: int

    @property
    def is_mint(self) -> bool:
        return self.sender == MINT_BURN_SENTINEL

    @property
    def is_burn(self) -> bool:
        return self.recipient == MINT_BURN_SENTINEL


@dataclass(frozen=True)
class AttributionTag:
    """Associates an address on one ledger with a real-world entity."""

    address: str
    ledger: str
    entity: str
    source: str
    confidence: float


@dataclass(frozen=True)
class PricePoint:
    date: date
    asset: str
    eur_per_unit: Decimal


@dataclass(frozen=True)
class BalanceSheetRecord:
    """Declared crypto asset position at a report date.

    is_proxy marks positions where cryptoassets are aggregated with other
    balance-sheet items, so the figure overestimates the actual holdings.
    """

    entity: str
    report_date: date
    crypto_assets_eur: Decimal
    is_proxy: bool


@dataclass
class FeatureMatrix:
    """Binary service-offering features, one row per provider."""

    rows: list  # list of (vasp_id, (custody, buy_sell, payment, consulting, trading))

    FEATURES = ("custody", "buy_sell", "payment", "consulting", "trading")

    def ids(self) -> list[str]:
        return [vasp_id for vasp_id, _ in self.rows]

    def vectors(self) -> list[tuple]:
        return [vec for _, vec in self.rows]

    def __len__(self) -> int:
        return len(self.rows)


class TagSet:
    """Attribution tags keyed by (ledger, address).

    Duplicate rows for the same address and entity are merged (sources
    concatenated, highest confidence kept); a second entity for the same
    (ledger, address) raises ConflictingTag.
    """

    def __init__(self):
        self._tags: dict[tuple[str, str], AttributionTag] = {}

    def add(self, tag: AttributionTag) -> None:
        key = (tag.ledger, tag.address)
        existing = self._tags.get(key)
        if existing is None:
            self._tags[key] = tag
            return
        if existing.entity != tag.entity:
            raise ConflictingTag(
                f"{tag.ledger} address {tag.address} tagged as both "
                f"{existing.entity!r} and {tag.entity!r}"
            )
        sources = existing.source.split(";")
        if tag.source not in sources:
            sources.append(tag.source)
        self._tags[key] = AttributionTag(
            address=tag.address,
            ledger=tag.ledger,
            entity=tag.entity,
            source=";".join(sources),
            confidence=max(existing.confidence, tag.confidence),
        )

    def get(self, ledger: str, address: str) -> AttributionTag | None:
        return self._tags.get((ledger, address))

    def for_ledger(self, ledger: str) -> list[AttributionTag]:
        return [t for (led, _), t in sorted(self._tags.items()) if led == ledger]

    def entities(self) -> list[str]:
        return sorted({t.entity for t in self._tags.values()})

    def addresses_for(self, entity: str, ledger: str | None = None) -> set[str]:
        return {
            t.address
            for t in self._tags.values()
            if t.entity == entity and (ledger is None or t.ledger == ledger)
        }

    def __len__(self) -> int:
        return len(self._tags)

    def __iter__(self):
        return iter(t for _, t in sorted(self._tags.items()))


@dataclass
class ParseResult:
    """Records plus, in lenient mode, one issue string per skipped line."""

    records: list
    issues: list[str] = field(default_factory=list)

    def __iter__(self):
        return iter(self.records)

    def __len__(self) -> int:
        return len(self.records)


# ---------------------------------------------------------------------------
# Shared plumbing
# ---------------------------------------------------------------------------

def _lines(stream):
    """Accept a str, bytes, file object, or iterable of lines."""
    if isinstance(stream, bytes):
        stream = stream.decode("utf-8")
    if isinstance(stream, str):
        return stream.splitlines()
    return [line.rstrip("\n").rstrip("\r") for line in stream]


def _run(lines, parse_line, lenient: bool) -> ParseResult:
    """Apply parse_line to every line; collect or raise per strictness."""
    result = ParseResult(records=[])
    for line_no, line in enumerate(lines, start=1):
        try:
            record = parse_line(line_no, line)
        except SolvauditError as exc:
            if not lenient:
                raise
            result.issues.append(f"line {line_no}: {type(exc).__name__}: {exc}")
            continue
        result.records.append(record)
    return result


def _require(condition: bool, line_no: int, reason: str):
    if not condition:
        raise MalformedLine(line_no, reason)


def _amount_u64(value, line_no: int) -> int:
    if not isinstance(value, int) or isinstance(value, bool):
        raise MalformedLine(line_no, f"value is not an integer: {value!r}")
    if value < 0:
        raise NegativeValue(f"line {line_no}: negative value {value}")
    if value > _U64_MAX:
        raise MalformedLine(line_no, f"value exceeds u64: {value}")
    return value


def _csv_rows(lines):
    """Yield (line_no, row) for non-header CSV lines."""
    for line_no, line in enumerate(lines, start=1):
        if line_no == 1:
            continue
        row = next(csv.reader([line]))
        yield line_no, row


def _check_header(lines, expected: str):
    if not lines or lines[0] != expected:
        found = lines[0] if lines else "<empty file>"
        raise MalformedRow(1, f"expected header {expected!r}, found {found!r}")


# ---------------------------------------------------------------------------
# transactions.jsonl
# ---------------------------------------------------------------------------

def parse_utxo_transactions(stream, lenient: bool = False) -> ParseResult:
    """Parse a JSONL transaction export, returning records sorted by
    (block, txid).

    Raises (or reports, in lenient mode) MalformedLine, NegativeValue,
    FeeNegative for non-coinbase transactions that create value, and
    DuplicateTxid.
    """
    seen_txids: set[str] = set()

    def parse_line(line_no: int, line: str) -> UtxoTransaction:
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedLine(line_no, f"bad JSON: {exc.msg}") from None
        _require(isinstance(obj, dict), line_no, "line is not a JSON object")
        for key in ("txid", "block", "timestamp", "inputs", "outputs"):
            _require(key in obj, line_no, f"missing key {key!r}")

        txid = obj["txid"]
        _require(isinstance(txid, str), line_no, "txid is not a string")
        txid = txid.lower()
        _require(bool(_TXID_RE.match(txid)), line_no, f"txid is not 64 hex chars: {txid!r}")
        if txid in seen_txids:
            raise DuplicateTxid(f"line {line_no}: txid {txid} repeated")

        block = obj["block"]
        timestamp = obj["timestamp"]
        for name, val in (("block", block), ("timestamp", timestamp)):
            _require(
                isinstance(val, int) and not isinstance(val, bool) and val >= 0,
                line_no,
                f"{name} is not a non-negative integer",
            )

        def entries(key: str) -> tuple:
            raw = obj[key]
            _require(isinstance(raw, list), line_no, f"{key} is not a list")
            out = []
            for item in raw:
                _require(
                    isinstance(item, dict) and set(item) == {"address", "value"},
                    line_no,
                    f"{key} entry must be {{address, value}}",
                )
                _require(
                    isinstance(item["address"], str) and item["address"] != "",
                    line_no,
                    f"{key} address must be a non-empty string",
                )
                out.append((item["address"], _amount_u64(item["value"], line_no)))
            return tuple(out)

        inputs = entries("inputs")
        outputs = entries("outputs")
        if inputs:
            total_in = sum(v for _, v in inputs)
            total_out = sum(v for _, v in outputs)
            if total_in < total_out:
                raise FeeNegative(
                    f"line {line_no}: inputs {total_in} < outputs {total_out}"
                )

        seen_txids.add(txid)
        return UtxoTransaction(txid, block, timestamp, inputs, outputs)

    result = _run(_lines(stream), parse_line, lenient)
    result.records.sort(key=lambda t: (t.block, t.txid))
    return result


def serialize_utxo_transactions(txs) -> str:
    """Canonical JSONL for a transaction list (keys in schema order)."""
    out = []
    for t in txs:
        out.append(json.dumps(
            {
                "txid": t.txid,
                "block": t.block,
                "timestamp": t.timestamp,
                "inputs": [{"address": a, "value": v} for a, v in t.inputs],
                "outputs": [{"address": a, "value": v} for a, v in t.outputs],
            },
            separators=(",", ":"),
        ))
    return "".join(line + "\n" for line in out)


# ---------------------------------------------------------------------------
# transfers.jsonl
# ---------------------------------------------------------------------------

def parse_account_transfers(
    stream,
    registry: AssetRegistry | None = None,
    lenient: bool = False,
) -> ParseResult:
    """Parse a JSONL transfer export, sorted by block (stable within file).

    Values are decimal strings parsed losslessly into integers; anything
    above 256 bits raises ValueOverflow and unknown asset symbols raise
    UnknownAsset.
    """
    registry = registry if registry is not None else default_registry()

    def parse_line(line_no: int, line: str) -> AccountTransfer:
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedLine(line_no, f"bad JSON: {exc.msg}") from None
        _require(isinstance(obj, dict), line_no, "line is not a JSON object")
        for key in ("block", "timestamp", "asset", "from", "to", "value"):
            _require(key in obj, line_no, f"missing key {key!r}")
        for name in ("block", "timestamp"):
            val = obj[name]
            _require(
                isinstance(val, int) and not isinstance(val, bool) and val >= 0,
                line_no,
                f"{name} is not a non-negative integer",
            )
        asset = obj["asset"]
        _require(isinstance(asset, str), line_no, "asset is not a string")
        registry.get(asset)  # raises UnknownAsset
        sender, recipient = obj["from"], obj["to"]
        for name, val in (("from", sender), ("to", recipient)):
            _require(
                isinstance(val, str) and val != "",
                line_no,
                f"{name} must be a non-empty string",
            )
        raw_value = obj["value"]
        _require(isinstance(raw_value, str), line_no, "value must be a decimal string")
        _require(
            bool(_UINT_RE.match(raw_value)),
            line_no,
            f"value is not an unsigned decimal integer: {raw_value!r}",
        )
        value = int(raw_value)
        if value > MAX_AMOUNT:
            raise ValueOverflow(f"line {line_no}: value exceeds 256 bits")
        return AccountTransfer(
            obj["block"], obj["timestamp"], asset, sender, recipient, value
        )

    result = _run(_lines(stream), parse_line, lenient)
    result.records.sort(key=lambda t: t.block)  # stable: keeps intra-file order
    return result


def serialize_account_transfers(transfers) -> str:
    out = []
    for t in transfers:
        out.append(json.dumps(
            {
                "block": t.block,
                "timestamp": t.timestamp,
                "asset": t.asset,
                "from": t.sender,
                "to": t.recipient,
                "value": str(t.value),
            },
            separators=(",", ":"),
        ))
    return "".join(line + "\n" for line in out)


# ---------------------------------------------------------------------------
# tags.csv
# ---------------------------------------------------------------------------

_TAGS_HEADER = "address,ledger,entity,source,confidence"


def parse_attribution_tags(stream, lenient: bool = False) -> TagSet:
    """Parse the tag CSV into a TagSet keyed by (ledger, address)."""
    lines = _lines(stream)
    if not lines:
        return TagSet()
    _check_header(lines, _TAGS_HEADER)
    tags = TagSet()
    issues: list[str] = []
    for line_no, row in _csv_rows(lines):
        try:
            if len(row) != 5:
                raise MalformedRow(line_no, f"expected 5 columns, got {len(row)}")
            address, ledger, entity, source, conf_raw = row
            if ledger not in (UTXO_LEDGER, ACCOUNT_LEDGER):
                raise MalformedRow(line_no, f"ledger must be UTXO or ACCOUNT: {ledger!r}")
            if not address or not entity:
                raise MalformedRow(line_no, "address and entity must be non-empty")
            try:
                confidence = float(conf_raw)
            except ValueError:
                raise MalformedRow(line_no, f"bad confidence {conf_raw!r}") from None
            if not 0.0 <= confidence <= 1.0:
                raise MalformedRow(line_no, f"confidence out of [0,1]: {confidence}")
            tags.add(AttributionTag(address, ledger, entity, source, confidence))
        except SolvauditError as exc:
            if not lenient:
                raise
            issues.append(f"line {line_no}: {type(exc).__name__}: {exc}")
    tags.issues = issues
    return tags


def serialize_attribution_tags(tags: TagSet) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(_TAGS_HEADER.split(","))
    for tag in tags:
        writer.writerow(
            [tag.address, tag.ledger, tag.entity, tag.source, _fmt_float(tag.confidence)]
        )
    return buf.getvalue()


def _fmt_float(x: float) -> str:
    return f"{x:g}"


# ---------------------------------------------------------------------------
# prices.csv
# ---------------------------------------------------------------------------

_PRICES_HEADER = "date,asset,eur_per_unit"


def parse_price_series(stream, lenient: bool = False) -> PriceSeries:
    """Parse daily EUR prices; at most one point per (date, asset)."""
    lines = _lines(stream)
    if not lines:
        return PriceSeries([])
    _check_header(lines, _PRICES_HEADER)
    points: list[PricePoint] = []
    seen: set[tuple[date, str]] = set()
    issues: list[str] = []
    for line_no, row in _csv_rows(lines):
        try:
            if len(row) != 3:
                raise MalformedRow(line_no, f"expected 3 columns, got {len(row)}")
            day = _parse_date(row[0], line_no)
            asset = row[1]
            if not asset:
                raise MalformedRow(line_no, "asset must be non-empty")
            price = _parse_decimal(row[2], line_no)
            if price < 0:
                raise MalformedRow(line_no, f"negative price {row[2]!r}")
            if (day, asset) in seen:
                raise DuplicateKey(f"line {line_no}: duplicate price for ({row[0]}, {asset})")
            seen.add((day, asset))
            points.append(PricePoint(day, asset, price))
        except SolvauditError as exc:
            if not lenient:
                raise
            issues.append(f"line {line_no}: {type(exc).__name__}: {exc}")
    series = PriceSeries(points)
    series.issues = issues
    return series


def serialize_price_series(series: PriceSeries) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(_PRICES_HEADER.split(","))
    for point in series.points():
        writer.writerow([point.date.isoformat(), point.asset, str(point.eur_per_unit)])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# balance_sheets.csv
# ---------------------------------------------------------------------------

_SHEETS_HEADER = "entity,report_date,crypto_assets_eur,is_proxy"

_TRUTHY = {"true", "1", "y", "yes"}
_FALSY = {"false", "0", "n", "no"}


def parse_balance_sheets(stream, lenient: bool = False) -> ParseResult:
    """Parse declared balance-sheet positions, one per (entity, date)."""
    lines = _lines(stream)
    if not lines:
        return ParseResult(records=[])
    _check_header(lines, _SHEETS_HEADER)
    records: list[BalanceSheetRecord] = []
    seen: set[tuple[str, date]] = set()
    issues: list[str] = []
    for line_no, row in _csv_rows(lines):
        try:
            if len(row) != 4:
                raise MalformedRow(line_no, f"expected 4 columns, got {len(row)}")
            entity = row[0]
            if not entity:
                raise MalformedRow(line_no, "entity must be non-empty")
            day = _parse_date(row[1], line_no)
            eur = _parse_decimal(row[2], line_no)
            if eur < 0:
                raise MalformedRow(line_no, f"negative declared value {row[2]!r}")
            flag = row[3].strip().lower()
            if flag in _TRUTHY:
                is_proxy = True
            elif flag in _FALSY:
                is_proxy = False
            else:
                raise MalformedRow(line_no, f"bad is_proxy flag {row[3]!r}")
            if (entity, day) in seen:
                raise DuplicateKey(f"line {line_no}: duplicate record for ({entity}, {row[1]})")
            seen.add((entity, day))
            records.append(BalanceSheetRecord(entity, day, eur, is_proxy))
        except SolvauditError as exc:
            if not lenient:
                raise
            issues.append(f"line {line_no}: {type(exc).__name__}: {exc}")
    return ParseResult(records=records, issues=issues)


def serialize_balance_sheets(records) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(_SHEETS_HEADER.split(","))
    for r in records:
        writer.writerow([
            r.entity,
            r.report_date.isoformat(),
            str(r.crypto_assets_eur),
            "true" if r.is_proxy else "false",
        ])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# features.csv
# ---------------------------------------------------------------------------

_FEATURES_HEADER = "vasp_id,custody,buy_sell,payment,consulting,trading"


def parse_service_features(stream, lenient: bool = False) -> FeatureMatrix:
    """Parse binary service-offering features. Values may be Y/N or 1/0."""
    lines = _lines(stream)
    if not lines:
        return FeatureMatrix(rows=[])
    _check_header(lines, _FEATURES_HEADER)
    rows: list[tuple] = []
    seen: set[str] = set()
    issues: list[str] = []
    for line_no, row in _csv_rows(lines):
        try:
            if len(row) != 6:
                raise MalformedRow(line_no, f"expected 6 columns, got {len(row)}")
            vasp_id = row[0]
            if not vasp_id:
                raise MalformedRow(line_no, "vasp_id must be non-empty")
            if vasp_id in seen:
                raise DuplicateKey(f"line {line_no}: duplicate vasp_id {vasp_id!r}")
            seen.add(vasp_id)
            vec = tuple(_parse_binary(cell, line_no) for cell in row[1:])
            rows.append((vasp_id, vec))
        except SolvauditError as exc:
            if not lenient:
                raise
            issues.append(f"line {line_no}: {type(exc).__name__}: {exc}")
    matrix = FeatureMatrix(rows=rows)
    matrix.issues = issues
    return matrix


def _parse_binary(cell: str, line_no: int) -> int:
    val = cell.strip().upper()
    if val in ("Y", "1"):
        return 1
    if val in ("N", "0"):
        return 0
    raise NonBinaryFeature(f"line {line_no}: feature value must be Y/N or 1/0, got {cell!r}")


def serialize_service_features(matrix: FeatureMatrix) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(_FEATURES_HEADER.split(","))
    for vasp_id, vec in matrix.rows:
        writer.writerow([vasp_id, *vec])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Small shared field parsers
# ---------------------------------------------------------------------------

def _parse_date(raw: str, line_no: int) -> date:
    try:
        return date.fromisoformat(raw.strip())
    except ValueError:
        raise MalformedRow(line_no, f"bad ISO date {raw!r}") from None


def _parse_decimal(raw: str, line_no: int) -> Decimal:
    try:
        value = Decimal(raw.strip())
    except InvalidOperation:
        raise MalformedRow(line_no, f"bad decimal {raw!r}") from None
    if not value.is_finite():
        raise MalformedRow(line_no, f"non-finite decimal {raw!r}")
    return value
