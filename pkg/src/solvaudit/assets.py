"""Asset identities and the asset registry.

Amounts everywhere in the package are unsigned integers in base units
(satoshi for BTC, wei for ETH, token base units per the registry decimals).
EUR values are arbitrary-precision decimals rounded only at report emission.
"""

from dataclasses import dataclass

from .errors import UnknownAsset

MAX_AMOUNT = (1 << 256) - 1


@dataclass(frozen=True)
class AssetId:
    """A tracked asset: ticker symbol plus its base-unit scale."""

    symbol: str
    decimals: int

    def __post_init__(self):
        if not self.symbol or self.symbol != self.symbol.upper():
            raise ValueError(f"asset symbol must be uppercase: {self.symbol!r}")
        if not 0 <= self.decimals <= 30:
            raise ValueError(f"asset decimals out of range: {self.decimals}")


BTC = AssetId("BTC", 8)
ETH = AssetId("ETH", 18)
USDT = AssetId("USDT", 6)
USDC = AssetId("USDC", 6)
DAI = AssetId("DAI", 18)
WETH = AssetId("WETH", 18)
WBTC = AssetId("WBTC", 8)

_DEFAULTS = (BTC, ETH, USDT, USDC, DAI, WETH, WBTC)


class AssetRegistry:
    """Symbol -> AssetId lookup; decimals are fixed per asset for a run."""

    def __init__(self, assets=()):
        self._by_symbol: dict[str, AssetId] = {}
        for asset in assets:
            self.add(asset)

    def add(self, asset: AssetId) -> None:
        existing = self._by_symbol.get(asset.symbol)
        if existing is not None and existing != asset:
            raise ValueError(
                f"asset {asset.symbol} already registered with decimals "
                f"{existing.decimals}"
            )
        self._by_symbol[asset.symbol] = asset

    def get(self, symbol: str) -> AssetId:
        try:
            return self._by_symbol[symbol]
        except KeyError:
            raise UnknownAsset(symbol) from None

    def __contains__(self, symbol: str) -> bool:
        return symbol in self._by_symbol

    def symbols(self) -> list[str]:
        return sorted(self._by_symbol)

    def __iter__(self):
        return iter(self._by_symbol.values())


def default_registry() -> AssetRegistry:
    """BTC/8, ETH/18, USDT/6, USDC/6, DAI/18, WETH/18, WBTC/8."""
    return AssetRegistry(_DEFAULTS)


def registry_from_spec(spec: str) -> AssetRegistry:
    """Build a registry from a "SYM:decimals,SYM:decimals" override string."""
    registry = AssetRegistry()
    for part in spec.split(","):
        part = part.strip()
        if not part:
            continue
        symbol, _, decimals = part.partition(":")
        try:
            registry.add(AssetId(symbol.strip().upper(), int(decimals)))
        except (ValueError, TypeError) as exc:
            raise ValueError(f"bad asset spec {part!r}: {exc}") from exc
    return registry
