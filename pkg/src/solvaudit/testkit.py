"""Deterministic synthetic-ledger generator with ground truth.

Scenarios exercise the wallet-management strategies that make entity
holdings hard to observe in the wild:

  REUSE             a fixed set of addresses, co-spent regularly, so the
                    multi-input heuristic recovers the whole wallet
  FRESH_PER_DEPOSIT a new address per deposit, never co-spent (until an
                    optional sweep), so most of the balance stays invisible
  HOT_COLD          deposits land on a hot wallet that forwards a fixed
                    share on to a cold address that never spends, so only
                    the hot share is recoverable from hot-wallet tags
  COLLECTOR         (account ledger) per-deposit contract addresses that
                    forward funds to a collector wallet

Everything is driven by the documented splitmix64 generator, so the same
seed always produces byte-identical files. Emitted UTXO ledgers are valid:
every input consumes a previously created unspent output of exactly that
value, and every transaction conserves value up to its fee.
"""

import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterator

from .assets import AssetRegistry, default_registry
from .errors import EntityMismatch, InvalidConfig
from .holdings import BalanceSeries
from .ingest import UtxoTransaction
from .rng import SplitMix64, derive_seed

UTXO = "UTXO"
ACCOUNT = "ACCOUNT"

REUSE = "REUSE"
FRESH_PER_DEPOSIT = "FRESH_PER_DEPOSIT"
HOT_COLD = "HOT_COLD"
COLLECTOR = "COLLECTOR"

_UTXO_STRATEGIES = {REUSE, FRESH_PER_DEPOSIT, HOT_COLD}
_ACCOUNT_STRATEGIES = {REUSE, COLLECTOR}

_FAUCET = "faucet-genesis"
_MINT = "0x0"

_BASE_PRICE_CENTS = {
    "BTC": 2_000_000,
    "ETH": 150_000,
    "USDT": 92,
    "USDC": 92,
    "DAI": 92,
    "WETH": 150_000,
    "WBTC": 2_000_000,
}


@dataclass(frozen=True)
class EntityConfig:
    name: str
    ledger: str
    strategy: str
    deposits: int = 8
    tag_coverage: float = 1.0
    addresses: int = 3
    hot_share_pct: int = 20
    sweep: bool = False
    asset: str = "ETH"  # account-ledger entities only; UTXO side is BTC


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int
    entities: tuple
    block_time: int = 600
    start_ts: int = 1_600_000_000
    fee: int = 500
    price_margin_days: int = 35


@dataclass
class GroundTruth:
    """Complete address ownership and exact balances, by construction."""

    addresses: dict[str, str] = field(default_factory=dict)
    series: dict[str, dict[str, list]] = field(default_factory=dict)
    supply: int = 0

    def to_json(self) -> str:
        doc = {
            "addresses": dict(sorted(self.addresses.items())),
            "series": {
                entity: {
                    asset: [[block, str(balance)] for block, balance in points]
                    for asset, points in sorted(assets.items())
                }
                for entity, assets in sorted(self.series.items())
            },
            "supply": str(self.supply),
        }
        return json.dumps(doc, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "GroundTruth":
        obj = json.loads(text)
        truth = cls(supply=int(obj["supply"]))
        truth.addresses = dict(obj["addresses"])
        truth.series = {
            entity: {
                asset: [(int(b), int(v)) for b, v in points]
                for asset, points in assets.items()
            }
            for entity, assets in obj["series"].items()
        }
        return truth


@dataclass
class ScenarioOutput:
    transactions_jsonl: str
    transfers_jsonl: str
    tags_csv: str
    prices_csv: str
    ground_truth: GroundTruth

    def write(self, out_dir) -> None:
        import pathlib

        out = pathlib.Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "transactions.jsonl").write_text(self.transactions_jsonl)
        (out / "transfers.jsonl").write_text(self.transfers_jsonl)
        (out / "tags.csv").write_text(self.tags_csv)
        (out / "prices.csv").write_text(self.prices_csv)
        (out / "ground_truth.json").write_text(self.ground_truth.to_json())


def _validate(config: ScenarioConfig) -> None:
    if not 0 <= config.seed < (1 << 64):
        raise InvalidConfig("seed must be a 64-bit unsigned integer")
    if not config.entities:
        raise InvalidConfig("at least one entity required")
    if config.fee < 0 or config.block_time <= 0:
        raise InvalidConfig("fee must be >= 0 and block_time positive")
    names = set()
    for e in config.entities:
        if not e.name or e.name in names:
            raise InvalidConfig(f"entity names must be unique and non-empty: {e.name!r}")
        names.add(e.name)
        if e.ledger not in (UTXO, ACCOUNT):
            raise InvalidConfig(f"{e.name}: ledger must be UTXO or ACCOUNT")
        allowed = _UTXO_STRATEGIES if e.ledger == UTXO else _ACCOUNT_STRATEGIES
        if e.strategy not in allowed:
            raise InvalidConfig(
                f"{e.name}: strategy {e.strategy} not valid for {e.ledger}"
            )
        if e.deposits < 1 or e.addresses < 1:
            raise InvalidConfig(f"{e.name}: deposits and addresses must be >= 1")
        if not 0.0 <= e.tag_coverage <= 1.0:
            raise InvalidConfig(f"{e.name}: tag_coverage must be in [0, 1]")
        if not 0 <= e.hot_share_pct <= 100:
            raise InvalidConfig(f"{e.name}: hot_share_pct must be in [0, 100]")


class _UtxoLedger:
    """Emits valid UTXO transactions, tracking unspent outputs per address."""

    def __init__(self, rng: SplitMix64, start_ts: int, block_time: int):
        self.rng = rng
        self.start_ts = start_ts
        self.block_time = block_time
        self.block = 0
        self.unspent: dict[str, list[int]] = {}
        self.lines: list[str] = []
        self.supply = 0
        self.fees = 0

    def _emit(self, inputs: list, outputs: list) -> int:
        """Append one transaction at the next block; returns its block."""
        block = self.block
        tx = {
            "txid": self.rng.hex_string(64),
            "block": block,
            "timestamp": self.start_ts + block * self.block_time,
            "inputs": [{"address": a, "value": v} for a, v in inputs],
            "outputs": [{"address": a, "value": v} for a, v in outputs],
        }
        for address, value in inputs:
            self.unspent[address].remove(value)
        for address, value in outputs:
            self.unspent.setdefault(address, []).append(value)
        self.lines.append(json.dumps(tx, separators=(",", ":")))
        self.block += 1
        return block

    def coinbase(self, address: str, value: int) -> int:
        self.supply += value
        return self._emit([], [(address, value)])

    def spend(self, inputs: list, outputs: list, fee: int) -> int:
        total_in = sum(v for _, v in inputs)
        total_out = sum(v for _, v in outputs)
        assert total_in == total_out + fee, "generator broke conservation"
        self.fees += fee
        return self._emit(inputs, outputs)

    def take(self, address: str, value: int) -> tuple:
        """Claim a specific unspent output for use as a transaction input."""
        assert value in self.unspent.get(address, []), "no such unspent output"
        return (address, value)

    def balance(self, address: str) -> int:
        return sum(self.unspent.get(address, []))


class _AccountLedger:
    def __init__(self, start_ts: int, block_time: int):
        self.start_ts = start_ts
        self.block_time = block_time
        self.block = 1
        self.lines: list[str] = []

    def transfer(self, asset: str, sender: str, recipient: str, value: int) -> int:
        block = self.block
        self.lines.append(json.dumps(
            {
                "block": block,
                "timestamp": self.start_ts + block * self.block_time,
                "asset": asset,
                "from": sender,
                "to": recipient,
                "value": str(value),
            },
            separators=(",", ":"),
        ))
        self.block += 1
        return block


def generate(config: ScenarioConfig, registry: AssetRegistry | None = None) -> ScenarioOutput:
    """Generate one scenario: ledgers, tags, prices and ground truth."""
    _validate(config)
    registry = registry if registry is not None else default_registry()
    truth = GroundTruth()

    utxo = _UtxoLedger(
        SplitMix64(derive_seed(config.seed, "utxo")),
        config.start_ts, config.block_time,
    )
    account = _AccountLedger(config.start_ts, config.block_time)
    amount_rng = SplitMix64(derive_seed(config.seed, "amounts"))

    utxo_entities = [e for e in config.entities if e.ledger == UTXO]
    account_entities = [e for e in config.entities if e.ledger == ACCOUNT]

    # Fund the faucet generously enough for all deposits plus fees.
    deposit_amounts = {
        e.name: [amount_rng.randint(1, 1000) * 100_000 for _ in range(e.deposits)]
        for e in utxo_entities
    }
    if utxo_entities:
        need = sum(sum(v) for v in deposit_amounts.values())
        need += 2 * config.fee * sum(e.deposits for e in utxo_entities)
        utxo.coinbase(_FAUCET, need + 50_000_000)

    tag_rows: list[str] = []
    entity_state: dict[str, dict] = {}

    for e in utxo_entities:
        state = {
            "balance": 0,
            "series": [],
            "addresses": [],
            "hot": f"{_slug(e.name)}-hot",
            "cold": f"{_slug(e.name)}-cold",
        }
        if e.strategy == REUSE:
            state["addresses"] = [f"{_slug(e.name)}-w{i}" for i in range(e.addresses)]
        elif e.strategy == HOT_COLD:
            state["addresses"] = [state["hot"], state["cold"]]
        entity_state[e.name] = state
        truth.series[e.name] = {"BTC": state["series"]}

    def record(entity: str, block: int, balance: int) -> None:
        state = entity_state[entity]
        series = state["series"]
        if series and series[-1][0] == block:
            series[-1] = (block, balance)
        else:
            series.append((block, balance))
        state["last_block"] = block

    def touch(entity: str, block: int) -> None:
        """Note activity (e.g. an internal forward) that left the total
        unchanged; the series gets a terminal point there at the end."""
        entity_state[entity]["last_block"] = block

    # Interleave deposits across entities, round-robin.
    depositor_n = 0
    max_rounds = max((e.deposits for e in utxo_entities), default=0)
    for round_no in range(max_rounds):
        for e in utxo_entities:
            if round_no >= e.deposits:
                continue
            state = entity_state[e.name]
            amount = deposit_amounts[e.name][round_no]

            # Faucet funds a fresh external depositor with amount + fee.
            depositor = f"ext-{depositor_n}"
            depositor_n += 1
            faucet_funds = utxo.balance(_FAUCET)
            utxo.spend(
                [utxo.take(_FAUCET, faucet_funds)],
                [(depositor, amount + config.fee),
                 (_FAUCET, faucet_funds - amount - 2 * config.fee)],
                config.fee,
            )

            if e.strategy == REUSE:
                target = state["addresses"][round_no % len(state["addresses"])]
            elif e.strategy == HOT_COLD:
                target = state["hot"]
            else:  # FRESH_PER_DEPOSIT
                target = f"{_slug(e.name)}-d{round_no}"
                state["addresses"].append(target)
            block = utxo.spend(
                [utxo.take(depositor, amount + config.fee)],
                [(target, amount)],
                config.fee,
            )
            state["balance"] += amount
            record(e.name, block, state["balance"])

            if e.strategy == HOT_COLD:
                # Forward the cold share; fee-less so shares stay exact.
                keep = amount * e.hot_share_pct // 100
                fwd_block = utxo.spend(
                    [utxo.take(state["hot"], amount)],
                    [(state["cold"], amount - keep), (state["hot"], keep)],
                    0,
                )
                touch(e.name, fwd_block)

    # Strategy epilogues: co-spends that (de)anonymize wallets.
    for e in utxo_entities:
        state = entity_state[e.name]
        if e.strategy == REUSE:
            inputs = []
            for address in state["addresses"]:
                for value in list(utxo.unspent.get(address, [])):
                    inputs.append(utxo.take(address, value))
            total = sum(v for _, v in inputs)
            block = utxo.spend(
                inputs, [(state["addresses"][0], total - config.fee)], config.fee
            )
            state["balance"] -= config.fee
            record(e.name, block, state["balance"])
        elif e.strategy == FRESH_PER_DEPOSIT and e.sweep:
            sweep_to = f"{_slug(e.name)}-sweep"
            state["addresses"].append(sweep_to)
            inputs = []
            for address in state["addresses"][:-1]:
                for value in list(utxo.unspent.get(address, [])):
                    inputs.append(utxo.take(address, value))
            total = sum(v for _, v in inputs)
            block = utxo.spend(inputs, [(sweep_to, total - config.fee)], config.fee)
            state["balance"] -= config.fee
            record(e.name, block, state["balance"])

    # Account-ledger entities.
    account_user_n = 0
    for e in account_entities:
        asset = registry.get(e.asset)
        scale = 10 ** max(asset.decimals - 2, 0)
        state = {"balance": 0, "series": [], "addresses": []}
        entity_state[e.name] = state
        truth.series[e.name] = {asset.symbol: state["series"]}
        collector = f"{_slug(e.name)}-collector"
        if e.strategy == COLLECTOR:
            state["addresses"].append(collector)
        else:
            state["addresses"] = [f"{_slug(e.name)}-a{i}" for i in range(e.addresses)]
        for i in range(e.deposits):
            amount = amount_rng.randint(1, 1000) * scale
            user = f"acct-ext-{account_user_n}"
            account_user_n += 1
            account.transfer(asset.symbol, _MINT, user, amount)
            if e.strategy == COLLECTOR:
                contract = f"{_slug(e.name)}-c{i}"
                state["addresses"].append(contract)
                block = account.transfer(asset.symbol, user, contract, amount)
                state["balance"] += amount
                record(e.name, block, state["balance"])
                fwd_block = account.transfer(asset.symbol, contract, collector, amount)
                touch(e.name, fwd_block)
            else:
                target = state["addresses"][i % len(state["addresses"])]
                block = account.transfer(asset.symbol, user, target, amount)
                state["balance"] += amount
                record(e.name, block, state["balance"])

    # Terminal series points at each entity's last activity block, so the
    # ground truth reflects the state after internal forwards settled.
    for state in entity_state.values():
        series = state["series"]
        last_block = state.get("last_block")
        if series and last_block is not None and last_block > series[-1][0]:
            series.append((last_block, series[-1][1]))

    # Ground-truth ownership and tag emission.
    for e in config.entities:
        state = entity_state[e.name]
        for address in state["addresses"]:
            truth.addresses[address] = e.name
        n_tags = _tag_count(e.tag_coverage, len(state["addresses"]))
        for address in state["addresses"][:n_tags]:
            tag_rows.append(f"{address},{e.ledger},{e.name},testkit,1.0")

    truth.supply = utxo.supply

    last_ts = config.start_ts + config.block_time * max(utxo.block, account.block)
    prices_csv = _price_walk(
        config.seed, registry,
        config.start_ts, last_ts, config.price_margin_days,
    )

    return ScenarioOutput(
        transactions_jsonl="".join(line + "\n" for line in utxo.lines),
        transfers_jsonl="".join(line + "\n" for line in account.lines),
        tags_csv="address,ledger,entity,source,confidence\n"
        + "".join(row + "\n" for row in tag_rows),
        prices_csv=prices_csv,
        ground_truth=truth,
    )


def _slug(name: str) -> str:
    return name.lower().replace(" ", "-")


def _tag_count(coverage: float, n: int) -> int:
    if coverage <= 0.0 or n == 0:
        return 0
    return max(1, min(n, int(coverage * n + 1e-9)))


def _price_walk(seed: int, registry: AssetRegistry,
                start_ts: int, last_ts: int, margin_days: int) -> str:
    """Deterministic daily price walk in whole cents.

    c_0 = base for the asset; each day moves by up to +-0.5% of the
    current price (at least one cent): with s = max(1, c // 200),
    c_{d+1} = max(1, c + (u mod (2s + 1)) - s), u drawn from splitmix64
    seeded per (seed, asset symbol).
    """
    first_day = start_ts // 86400 - 1
    last_day = last_ts // 86400 + margin_days
    lines = ["date,asset,eur_per_unit"]
    from datetime import date, timedelta

    epoch = date(1970, 1, 1)
    for symbol in registry.symbols():
        rng = SplitMix64(derive_seed(seed, f"price:{symbol}"))
        cents = _BASE_PRICE_CENTS.get(symbol, 10_000)
        for day_no in range(first_day, last_day + 1):
            day = epoch + timedelta(days=day_no)
            lines.append(f"{day.isoformat()},{symbol},{cents // 100}.{cents % 100:02d}")
            step = max(1, cents // 200)
            cents = max(1, cents + rng.randrange(2 * step + 1) - step)
    return "".join(line + "\n" for line in lines)


# ---------------------------------------------------------------------------
# Recall metrics against ground truth
# ---------------------------------------------------------------------------

@dataclass
class RecallMetrics:
    address_recall: Fraction
    balance_recall: dict[str, list]   # asset -> [(block, Fraction)]
    final_recall: dict[str, Fraction]


def compare_to_ground_truth(
    entity: str,
    recovered_addresses: set[str],
    recovered_series: dict[str, BalanceSeries],
    truth: GroundTruth,
) -> RecallMetrics:
    """Recall of the pipeline output against the generator's ground truth.

    Address recall is the recovered fraction of the entity's true address
    set; balance recall compares the recovered balance (as a step function)
    to the true balance at every true series point; final recall compares
    the end states of the two series, so coarse snapshot grids do not skew
    it. All ratios are exact rationals clamped to [0, 1].
    """
    if entity not in truth.series:
        raise EntityMismatch(entity)
    true_addresses = {a for a, owner in truth.addresses.items() if owner == entity}
    if true_addresses:
        hit = len(recovered_addresses & true_addresses)
        address_recall = Fraction(hit, len(true_addresses))
    else:
        address_recall = Fraction(1)

    balance_recall: dict[str, list] = {}
    final_recall: dict[str, Fraction] = {}
    for asset, points in truth.series[entity].items():
        series = recovered_series.get(asset)
        recalls = []
        for block, true_balance in points:
            if true_balance <= 0:
                continue
            recovered = series.balance_at_block(block) if series else 0
            recalls.append((block, _clamped_ratio(recovered, true_balance)))
        balance_recall[asset] = recalls
        if points:
            last_balance = points[-1][1]
            last = series.last() if series else None
            recovered = last.balance if last else 0
            if last_balance > 0:
                final_recall[asset] = _clamped_ratio(recovered, last_balance)
            else:
                final_recall[asset] = Fraction(1) if recovered == 0 else Fraction(0)
        else:
            final_recall[asset] = Fraction(1)
    return RecallMetrics(address_recall, balance_recall, final_recall)


def _clamped_ratio(recovered: int, true_balance: int) -> Fraction:
    if recovered <= 0:
        return Fraction(0)
    if recovered >= true_balance:
        return Fraction(1)
    return Fraction(recovered, true_balance)


# ---------------------------------------------------------------------------
# Scale stream for clustering benchmarks
# ---------------------------------------------------------------------------

def random_transaction_stream(
    seed: int,
    n_tx: int,
    n_addresses: int | None = None,
    max_inputs: int = 3,
    max_outputs: int = 2,
    txs_per_block: int = 2000,
) -> Iterator[UtxoTransaction]:
    """Stream of well-formed transactions for clustering benchmarks.

    Each transaction conserves value on its own (inputs = outputs + fee)
    but inputs do not reference earlier outputs, so this is NOT a valid
    ledger; use generate() when conservation across the chain matters.
    """
    rng = SplitMix64(derive_seed(seed, "scale-stream"))
    if n_addresses is None:
        n_addresses = max(4, n_tx)
    for i in range(n_tx):
        block = i // txs_per_block
        n_in = rng.randint(1, max_inputs)
        n_out = rng.randint(1, max_outputs)
        in_addrs = [f"a{rng.randrange(n_addresses)}" for _ in range(n_in)]
        values = [rng.randint(1, 10_000_000) for _ in range(n_in)]
        total_in = sum(values)
        fee = rng.randrange(1000)
        fee = max(0, min(fee, total_in - n_out))  # leave room for the outputs
        remaining = total_in - fee
        outputs = []
        for j in range(n_out):
            if j == n_out - 1:
                value = remaining
            else:
                value = remaining // (n_out - j)
                remaining -= value
            outputs.append((f"a{rng.randrange(n_addresses)}", value))
        yield UtxoTransaction(
            txid=f"{i:064x}",
            block=block,
            timestamp=1_600_000_000 + block * 600,
            inputs=tuple(zip(in_addrs, values)),
            outputs=tuple(outputs),
        )


def default_scenario(seed: int = 1) -> ScenarioConfig:
    """A mixed scenario covering every wallet-management strategy."""
    return ScenarioConfig(
        seed=seed,
        entities=(
            EntityConfig("NovaMarket", UTXO, REUSE, deposits=12, addresses=4),
            EntityConfig("HarborCustody", UTXO, HOT_COLD, deposits=10,
                         hot_share_pct=20, tag_coverage=0.5),
            EntityConfig("KioskBroker", UTXO, FRESH_PER_DEPOSIT, deposits=8,
                         tag_coverage=0.125),
            EntityConfig("LedgerPay", ACCOUNT, COLLECTOR, deposits=6, asset="ETH"),
            EntityConfig("MintDesk", ACCOUNT, REUSE, deposits=6, addresses=2,
                         asset="USDT"),
        ),
    )
