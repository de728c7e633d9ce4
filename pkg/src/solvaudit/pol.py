"""Merkle sum tree proof of liabilities.

Commits to the total of customer balances while letting each customer
check inclusion of their own balance. Verification additionally rejects
any negative balance visible from the proof path, which is the defense
against the classic attack of shrinking the committed total with fake
negative-balance accounts. attack_mode exists so that attack can be
constructed and its detection tested.

Encoding (H = SHA-256, sums as 16-byte big-endian two's complement):
  leaf digest     H(0x00 || user_id_utf8 || salt_16B || balance_16B)
  internal digest H(0x01 || left.digest || left.sum_16B || right.digest || right.sum_16B)
  padding leaf    user_id "", salt 16 zero bytes, balance 0 (fixed digest);
                  the leaf level is padded with it to the next power of two
"""

import hashlib
import json
import os
from dataclasses import dataclass, field

from .errors import DuplicateUser, EmptyLeafSet, NegativeBalance, UnknownUser
from .rng import SplitMix64

LEAF_PREFIX = b"\x00"
INNER_PREFIX = b"\x01"
SALT_BYTES = 16
SUM_BYTES = 16

SIDE_LEFT = "L"
SIDE_RIGHT = "R"

REJECT_BAD_DIGEST = "BAD_DIGEST"
REJECT_BAD_SUM = "BAD_SUM"
REJECT_NEGATIVE_ON_PATH = "NEGATIVE_ON_PATH"


def encode_sum(value: int) -> bytes:
    """Signed 128-bit big-endian two's complement."""
    return value.to_bytes(SUM_BYTES, "big", signed=True)


def leaf_digest(user_id: str, salt: bytes, balance: int) -> bytes:
    return hashlib.sha256(
        LEAF_PREFIX + user_id.encode("utf-8") + salt + encode_sum(balance)
    ).digest()


def inner_digest(left_digest: bytes, left_sum: int,
                 right_digest: bytes, right_sum: int) -> bytes:
    return hashlib.sha256(
        INNER_PREFIX
        + left_digest + encode_sum(left_sum)
        + right_digest + encode_sum(right_sum)
    ).digest()


PADDING_LEAF_DIGEST = leaf_digest("", bytes(SALT_BYTES), 0)


@dataclass(frozen=True)
class LiabilityLeaf:
    user_id: str
    salt: bytes
    balance: int

    def digest(self) -> bytes:
        return leaf_digest(self.user_id, self.salt, self.balance)


@dataclass(frozen=True)
class MerkleSumNode:
    digest: bytes
    sum: int


@dataclass(frozen=True)
class PathStep:
    """One proof step: the sibling's digest, sum, and which side it is on."""

    digest: bytes
    sum: int
    side: str


@dataclass
class InclusionProof:
    user_id: str
    salt: bytes
    balance: int
    path: list[PathStep]


@dataclass
class VerifyResult:
    accepted: bool
    reason: str | None = None

    def __bool__(self) -> bool:
        return self.accepted


@dataclass
class MerkleSumTree:
    """Complete binary hash tree; levels[0] is the padded leaf level."""

    leaves: list[LiabilityLeaf]
    levels: list[list[MerkleSumNode]]
    _user_index: dict[str, int] = field(default_factory=dict)

    @property
    def root(self) -> MerkleSumNode:
        return self.levels[-1][0]

    @property
    def height(self) -> int:
        return len(self.levels) - 1


def new_leaf(user_id: str, balance: int, salt: bytes | None = None,
             rng: SplitMix64 | None = None) -> LiabilityLeaf:
    """Create a leaf with a fresh 16-byte salt.

    Salts come from os.urandom unless a deterministic generator is given
    (used by the CLI for reproducible runs)."""
    if salt is None:
        if rng is not None:
            salt = bytes(rng.randrange(256) for _ in range(SALT_BYTES))
        else:
            salt = os.urandom(SALT_BYTES)
    return LiabilityLeaf(user_id, salt, balance)


def build_tree(leaves, attack_mode: bool = False) -> MerkleSumTree:
    """Build the tree over the given leaves.

    Rejects negative balances unless attack_mode is set, and duplicate
    user ids always (proofs are looked up by user id). The leaf level is
    padded to the next power of two with the fixed padding leaf.
    """
    leaves = list(leaves)
    if not leaves:
        raise EmptyLeafSet("at least one leaf required")
    user_index: dict[str, int] = {}
    seen_salts: set[tuple[str, bytes]] = set()
    for i, leaf in enumerate(leaves):
        if len(leaf.salt) != SALT_BYTES:
            raise ValueError(f"salt must be {SALT_BYTES} bytes")
        if leaf.balance < 0 and not attack_mode:
            raise NegativeBalance(
                f"user {leaf.user_id!r} has balance {leaf.balance}"
            )
        if leaf.user_id in user_index:
            raise DuplicateUser(leaf.user_id)
        if (leaf.user_id, leaf.salt) in seen_salts:
            raise DuplicateUser(f"{leaf.user_id!r} with identical salt")
        user_index[leaf.user_id] = i
        seen_salts.add((leaf.user_id, leaf.salt))

    width = 1
    while width < len(leaves):
        width *= 2
    level = [MerkleSumNode(leaf.digest(), leaf.balance) for leaf in leaves]
    level.extend(
        MerkleSumNode(PADDING_LEAF_DIGEST, 0) for _ in range(width - len(leaves))
    )
    levels = [level]
    while len(level) > 1:
        level = [
            MerkleSumNode(
                inner_digest(level[i].digest, level[i].sum,
                             level[i + 1].digest, level[i + 1].sum),
                level[i].sum + level[i + 1].sum,
            )
            for i in range(0, len(level), 2)
        ]
        levels.append(level)
    return MerkleSumTree(leaves=leaves, levels=levels, _user_index=user_index)


def prove(tree: MerkleSumTree, user_id: str) -> InclusionProof:
    """Inclusion proof for one user; path length equals the tree height."""
    try:
        position = tree._user_index[user_id]
    except KeyError:
        raise UnknownUser(user_id) from None
    leaf = tree.leaves[position]
    path: list[PathStep] = []
    for level in tree.levels[:-1]:
        sibling_pos = position ^ 1
        sibling = level[sibling_pos]
        side = SIDE_LEFT if sibling_pos < position else SIDE_RIGHT
        path.append(PathStep(sibling.digest, sibling.sum, side))
        position //= 2
    return InclusionProof(leaf.user_id, leaf.salt, leaf.balance, path)


def verify(root: MerkleSumNode, proof: InclusionProof) -> VerifyResult:
    """Check a proof against a committed root.

    Accepts iff the recomputed digest chain matches root.digest, the
    recomputed total matches root.sum, and neither the leaf balance nor
    any sibling sum on the path is negative.
    """
    if proof.balance < 0:
        return VerifyResult(False, REJECT_NEGATIVE_ON_PATH)
    if any(step.sum < 0 for step in proof.path):
        return VerifyResult(False, REJECT_NEGATIVE_ON_PATH)

    digest = leaf_digest(proof.user_id, proof.salt, proof.balance)
    total = proof.balance
    for step in proof.path:
        if step.side == SIDE_LEFT:
            digest = inner_digest(step.digest, step.sum, digest, total)
        elif step.side == SIDE_RIGHT:
            digest = inner_digest(digest, total, step.digest, step.sum)
        else:
            return VerifyResult(False, REJECT_BAD_DIGEST)
        total += step.sum
    if digest != root.digest:
        return VerifyResult(False, REJECT_BAD_DIGEST)
    if total != root.sum:
        return VerifyResult(False, REJECT_BAD_SUM)
    return VerifyResult(True)


# ---------------------------------------------------------------------------
# JSON encodings (bit-exact with the digest encodings above)
# ---------------------------------------------------------------------------

def root_to_json(root: MerkleSumNode) -> str:
    return json.dumps(
        {"digest": root.digest.hex(), "sum": str(root.sum)}, separators=(",", ":")
    ) + "\n"


def root_from_json(text: str) -> MerkleSumNode:
    obj = json.loads(text)
    return MerkleSumNode(bytes.fromhex(obj["digest"]), int(obj["sum"]))


def proof_to_json(root: MerkleSumNode, proof: InclusionProof) -> str:
    doc = {
        "root": {"digest": root.digest.hex(), "sum": str(root.sum)},
        "leaf": {
            "user_id": proof.user_id,
            "salt": proof.salt.hex(),
            "balance": str(proof.balance),
        },
        "path": [
            {"digest": s.digest.hex(), "sum": str(s.sum), "side": s.side}
            for s in proof.path
        ],
    }
    return json.dumps(doc, indent=2) + "\n"


def proof_from_json(text: str) -> tuple[MerkleSumNode, InclusionProof]:
    obj = json.loads(text)
    root = MerkleSumNode(
        bytes.fromhex(obj["root"]["digest"]), int(obj["root"]["sum"])
    )
    leaf = obj["leaf"]
    path = [
        PathStep(bytes.fromhex(s["digest"]), int(s["sum"]), s["side"])
        for s in obj["path"]
    ]
    proof = InclusionProof(
        leaf["user_id"], bytes.fromhex(leaf["salt"]), int(leaf["balance"]), path
    )
    return root, proof


def tree_to_json(tree: MerkleSumTree) -> str:
    """Private-side serialization (contains salts and balances)."""
    doc = {
        "root": {"digest": tree.root.digest.hex(), "sum": str(tree.root.sum)},
        "leaves": [
            {"user_id": l.user_id, "salt": l.salt.hex(), "balance": str(l.balance)}
            for l in tree.leaves
        ],
    }
    return json.dumps(doc, indent=2) + "\n"


def tree_from_json(text: str, attack_mode: bool = True) -> MerkleSumTree:
    obj = json.loads(text)
    leaves = [
        LiabilityLeaf(l["user_id"], bytes.fromhex(l["salt"]), int(l["balance"]))
        for l in obj["leaves"]
    ]
    return build_tree(leaves, attack_mode=attack_mode)
