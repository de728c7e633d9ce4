"""Exception types shared across the package.

Every error raised by solvaudit derives from SolvauditError so callers can
catch the whole family at pipeline boundaries (the CLI maps them to exit
code 1).
"""


class SolvauditError(Exception):
    """Base class for all solvaudit errors."""


# ---------------------------------------------------------------------------
# ingest
# ---------------------------------------------------------------------------

class MalformedLine(SolvauditError):
    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


class MalformedRow(SolvauditError):
    def __init__(self, line_no: int, reason: str):
        super().__init__(f"row {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


class NegativeValue(SolvauditError):
    pass


class FeeNegative(SolvauditError):
    """Inputs of a non-coinbase transaction sum to less than its outputs."""


class DuplicateTxid(SolvauditError):
    pass


class ValueOverflow(SolvauditError):
    """Amount does not fit in 256 bits."""


class UnknownAsset(SolvauditError):
    pass


class ConflictingTag(SolvauditError):
    """Same (address, ledger) tagged with two different entities."""


class DuplicateKey(SolvauditError):
    pass


class NonBinaryFeature(SolvauditError):
    pass


# ---------------------------------------------------------------------------
# cluster
# ---------------------------------------------------------------------------

class AddressUnknown(SolvauditError):
    pass


class ClusterEntityConflict(SolvauditError):
    """One cluster carries tags of two or more entities.

    Signals a likely clustering false positive; never silently resolved.
    """

    def __init__(self, cluster_id: int, entities):
        self.cluster_id = cluster_id
        self.entities = tuple(sorted(entities))
        super().__init__(
            f"cluster {cluster_id} tagged with multiple entities: "
            + ", ".join(self.entities)
        )


# ---------------------------------------------------------------------------
# holdings
# ---------------------------------------------------------------------------

class UnknownEntity(SolvauditError):
    pass


class IntervalZero(SolvauditError):
    pass


class StalePrice(SolvauditError):
    def __init__(self, asset: str, at):
        super().__init__(f"no usable price for {asset} at {at}")
        self.asset = asset
        self.at = at


# ---------------------------------------------------------------------------
# reconcile
# ---------------------------------------------------------------------------

class NegativeInput(SolvauditError):
    pass


class UnsupportedFormat(SolvauditError):
    pass


# ---------------------------------------------------------------------------
# pol
# ---------------------------------------------------------------------------

class NegativeBalance(SolvauditError):
    pass


class EmptyLeafSet(SolvauditError):
    pass


class UnknownUser(SolvauditError):
    pass


class DuplicateUser(SolvauditError):
    pass


# ---------------------------------------------------------------------------
# categorize
# ---------------------------------------------------------------------------

class TooFewRows(SolvauditError):
    pass


class BadK(SolvauditError):
    pass


# ---------------------------------------------------------------------------
# testkit
# ---------------------------------------------------------------------------

class InvalidConfig(SolvauditError):
    pass


class EntityMismatch(SolvauditError):
    pass
