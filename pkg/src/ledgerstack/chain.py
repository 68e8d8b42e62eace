"""Transactions, blocks, and the append-only chain.

Block headers serialize to exactly 92 big-endian bytes:

    height u64 | prev_hash 32 | merkle_root 32 | wall_time u64 |
    tx_count u32 | nonce u64

block_id = sha256d(serialized header). Transactions hash their canonical
bytes with the signature field excluded, so a transaction id commits to
kind, payload, and author but not to the signature itself.

Two append modes exist. In quorum mode a block is appended once m distinct
configured validators have signed its block_id; the nonce stays 0. In
proof-of-work mode the nonce is searched sequentially from 0 until the
block_id has the required number of leading zero bits.

The genesis block (height 0, all-zero prev_hash, no transactions, all-zero
merkle root) is created by the Chain constructor and acts as the trust
anchor: it needs neither approvals nor work.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Sequence

from . import crypto
from .crypto import ZERO32, canonical_json, sha256d

HEADER_LEN = 92
_HEADER_FMT = ">Q32s32sQIQ"

MODE_QUORUM = "quorum"
MODE_POW = "pow"

U64_MAX = 2**64 - 1
U32_MAX = 2**32 - 1

# verify_chain failure reasons
R_BAD_GENESIS = "bad_genesis"
R_HEIGHT = "height_mismatch"
R_LINK = "link_broken"
R_TX_COUNT = "tx_count_mismatch"
R_MERKLE = "merkle_mismatch"
R_TX_HASH = "tx_hash_mismatch"
R_TX_SIG = "bad_tx_signature"
R_DUP = "duplicate_tx"
R_UNKNOWN_VAL = "unknown_validator"
R_APPROVAL_SIG = "bad_approval_signature"
R_QUORUM = "quorum_not_met"
R_POW = "pow_target_missed"


class ChainError(Exception):
    pass


class BadConfig(ChainError):
    pass


class BadTxSignature(ChainError):
    pass


class DoubleSpend(ChainError):
    """The same transaction id may never be recorded more than once."""


class StaleParent(ChainError):
    """Block does not extend the current tip."""


class UnknownValidator(ChainError):
    """Approval from a key outside the configured validator set."""


class BadApprovalSignature(ChainError):
    pass


class QuorumNotMet(ChainError):
    def __init__(self, count: int, needed: int):
        super().__init__(f"quorum not met: {count} of {needed} required approvals")
        self.count = count
        self.needed = needed


class WrongMode(ChainError):
    pass


class PowTargetMissed(ChainError):
    pass


class EmptyChain(ChainError):
    pass


class BadImport(ChainError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


# ---------------------------------------------------------------------------
# Transactions


@dataclass(frozen=True)
class Transaction:
    """A signed application event.

    payload holds the canonical JSON bytes of the payload object; tx_id is
    sha256d over the canonical tx bytes (kind, payload, author) with the
    signature excluded.
    """

    kind: str
    payload: bytes
    author_pk: bytes
    signature: bytes
    tx_id: bytes

    @staticmethod
    def preimage(kind: str, payload: bytes, author_pk: bytes) -> bytes:
        # Splicing pre-canonicalized payload bytes into the outer object
        # keeps verification free of any JSON parsing. Keys are already in
        # sorted order: author_pk < kind < payload.
        return (
            b'{"author_pk":"'
            + author_pk.hex().encode("ascii")
            + b'","kind":'
            + canonical_json(kind)
            + b',"payload":'
            + payload
            + b"}"
        )

    @classmethod
    def create(cls, kind: str, payload_obj: Any, keypair: crypto.KeyPair) -> "Transaction":
        payload = canonical_json(payload_obj)
        signing = cls.preimage(kind, payload, keypair.public)
        return cls(
            kind=kind,
            payload=payload,
            author_pk=keypair.public,
            signature=crypto.sign(keypair.secret, signing),
            tx_id=sha256d(signing),
        )

    def signing_bytes(self) -> bytes:
        return self.preimage(self.kind, self.payload, self.author_pk)

    def payload_obj(self) -> Any:
        return json.loads(self.payload.decode("utf-8"))

    def verify(self) -> bool:
        signing = self.signing_bytes()
        if sha256d(signing) != self.tx_id:
            return False
        return crypto.verify(self.author_pk, signing, self.signature)


# ---------------------------------------------------------------------------
# Headers and blocks


@dataclass(frozen=True)
class BlockHeader:
    height: int
    prev_hash: bytes
    merkle_root: bytes
    wall_time: int
    tx_count: int
    nonce: int


def serialize_header(header: BlockHeader) -> bytes:
    """Fixed 92-byte big-endian encoding, field order as declared."""
    if not 0 <= header.height <= U64_MAX:
        raise ChainError("height out of u64 range")
    if not 0 <= header.wall_time <= U64_MAX:
        raise ChainError("wall_time out of u64 range")
    if not 0 <= header.tx_count <= U32_MAX:
        raise ChainError("tx_count out of u32 range")
    if not 0 <= header.nonce <= U64_MAX:
        raise ChainError("nonce out of u64 range")
    crypto.require_hash32(header.prev_hash, "prev_hash")
    crypto.require_hash32(header.merkle_root, "merkle_root")
    return struct.pack(
        _HEADER_FMT,
        header.height,
        header.prev_hash,
        header.merkle_root,
        header.wall_time,
        header.tx_count,
        header.nonce,
    )


def header_id(header: BlockHeader) -> bytes:
    return sha256d(serialize_header(header))


@dataclass(frozen=True)
class Approval:
    validator_pk: bytes
    signature: bytes


@dataclass
class Block:
    header: BlockHeader
    txs: tuple[Transaction, ...]
    approvals: tuple[Approval, ...] = ()

    @property
    def block_id(self) -> bytes:
        return header_id(self.header)


# ---------------------------------------------------------------------------
# Configuration


@dataclass(frozen=True)
class ChainConfig:
    mode: str = MODE_QUORUM
    validators: tuple[bytes, ...] = ()
    quorum_m: int = 1
    pow_target_bits: int = 8

    def __post_init__(self):
        if self.mode not in (MODE_QUORUM, MODE_POW):
            raise BadConfig(f"unknown mode {self.mode!r}")
        if self.mode == MODE_QUORUM:
            if not self.validators:
                raise BadConfig("quorum mode needs a non-empty validator set")
            if len(set(self.validators)) != len(self.validators):
                raise BadConfig("validator keys must be distinct")
            if not 1 <= self.quorum_m <= len(self.validators):
                raise BadConfig(
                    f"quorum_m {self.quorum_m} outside 1..{len(self.validators)}"
                )
        else:
            if not 1 <= self.pow_target_bits <= 24:
                raise BadConfig("pow_target_bits outside 1..24")


# ---------------------------------------------------------------------------
# Proof of work


def leading_zero_bits(digest: bytes) -> int:
    bits = 0
    for byte in digest:
        if byte == 0:
            bits += 8
            continue
        for shift in range(7, -1, -1):
            if byte >> shift:
                return bits + (7 - shift)
        return bits
    return bits


def pow_check(header: BlockHeader, target_bits: int) -> bool:
    # Exactly one sha256d: verification stays cheap no matter the target.
    return leading_zero_bits(header_id(header)) >= target_bits


def mine_pow(header: BlockHeader, target_bits: int) -> int:
    """Smallest nonce (searched sequentially from 0) meeting the target."""
    if not 1 <= target_bits <= 24:
        raise BadConfig("pow_target_bits outside 1..24")
    nonce = 0
    while True:
        candidate = replace(header, nonce=nonce)
        if pow_check(candidate, target_bits):
            return nonce
        nonce += 1
        if nonce > U64_MAX:
            raise PowTargetMissed("nonce space exhausted")


# ---------------------------------------------------------------------------
# Block construction


def build_block(
    txs: Sequence[Transaction],
    prev_block_id: bytes,
    height: int,
    wall_time: int,
    config: ChainConfig,
    known_tx_ids: Iterable[bytes] = (),
) -> Block:
    """Assemble an unappended block. Validates txs, leaves nonce = 0.

    Raises BadTxSignature on any invalid transaction and DoubleSpend when a
    tx id repeats inside the batch or against known_tx_ids (chain history).
    """
    if not txs:
        raise ChainError("a block must carry at least one transaction")
    seen = set(known_tx_ids)
    for tx in txs:
        if not tx.verify():
            raise BadTxSignature(f"invalid signature or id on tx {tx.tx_id.hex()}")
        if tx.tx_id in seen:
            raise DoubleSpend(
                f"transaction {tx.tx_id.hex()} already recorded; "
                "a tx may never be recorded more than once"
            )
        seen.add(tx.tx_id)
    header = BlockHeader(
        height=height,
        prev_hash=crypto.require_hash32(prev_block_id, "prev_block_id"),
        merkle_root=crypto.merkle_root([tx.tx_id for tx in txs]),
        wall_time=wall_time,
        tx_count=len(txs),
        nonce=0,
    )
    return Block(header=header, txs=tuple(txs))


# ---------------------------------------------------------------------------
# Chain


@dataclass(frozen=True)
class VerifyResult:
    valid: bool
    first_bad_height: int | None = None
    reason: str | None = None


class Chain:
    """Append-only block list under a fixed consensus configuration."""

    def __init__(self, config: ChainConfig, genesis_time: int = 0):
        self.config = config
        genesis = Block(
            header=BlockHeader(
                height=0,
                prev_hash=ZERO32,
                merkle_root=ZERO32,
                wall_time=genesis_time,
                tx_count=0,
                nonce=0,
            ),
            txs=(),
        )
        self.blocks: list[Block] = [genesis]
        self._tx_ids: set[bytes] = set()

    @classmethod
    def _from_blocks(cls, config: ChainConfig, blocks: list[Block]) -> "Chain":
        chain = cls.__new__(cls)
        chain.config = config
        chain.blocks = blocks
        chain._tx_ids = {tx.tx_id for b in blocks for tx in b.txs}
        return chain

    @property
    def tip(self) -> Block:
        return self.blocks[-1]

    @property
    def height(self) -> int:
        return self.tip.header.height

    @property
    def tx_ids(self) -> frozenset[bytes]:
        return frozenset(self._tx_ids)

    def find_tx(self, tx_id: bytes) -> Transaction | None:
        for block in self.blocks:
            for tx in block.txs:
                if tx.tx_id == tx_id:
                    return tx
        return None

    def build_block(self, txs: Sequence[Transaction], wall_time: int) -> Block:
        return build_block(
            txs,
            self.tip.block_id,
            self.height + 1,
            wall_time,
            self.config,
            known_tx_ids=self._tx_ids,
        )

    def _check_parent(self, block: Block) -> None:
        if (
            block.header.prev_hash != self.tip.block_id
            or block.header.height != self.height + 1
        ):
            raise StaleParent(
                f"block at height {block.header.height} does not extend tip "
                f"{self.height}"
            )

    def _check_txs(self, block: Block) -> None:
        if block.header.tx_count != len(block.txs):
            raise ChainError("tx_count does not match transaction list")
        seen = set(self._tx_ids)
        for tx in block.txs:
            if not tx.verify():
                raise BadTxSignature(f"invalid signature or id on tx {tx.tx_id.hex()}")
            if tx.tx_id in seen:
                raise DoubleSpend(
                    f"transaction {tx.tx_id.hex()} already recorded; "
                    "a tx may never be recorded more than once"
                )
            seen.add(tx.tx_id)
        if block.header.merkle_root != crypto.merkle_root(
            [tx.tx_id for tx in block.txs]
        ):
            raise ChainError("merkle_root does not match transactions")

    def approve_and_append(
        self, block: Block, approvals: Sequence[Approval]
    ) -> Block:
        """Append under quorum rules: m distinct valid validator signatures
        over the block_id. The accepted block (with approvals attached) is
        returned."""
        if self.config.mode != MODE_QUORUM:
            raise WrongMode("approve_and_append requires quorum mode")
        self._check_parent(block)
        self._check_txs(block)
        bid = block.block_id
        distinct: set[bytes] = set()
        for ap in approvals:
            if ap.validator_pk not in self.config.validators:
                raise UnknownValidator(
                    f"approval from unconfigured key {ap.validator_pk.hex()}"
                )
            if not crypto.verify(ap.validator_pk, bid, ap.signature):
                raise BadApprovalSignature(
                    f"bad approval signature from {ap.validator_pk.hex()}"
                )
            distinct.add(ap.validator_pk)
        if len(distinct) < self.config.quorum_m:
            raise QuorumNotMet(len(distinct), self.config.quorum_m)
        accepted = Block(
            header=block.header, txs=block.txs, approvals=tuple(approvals)
        )
        self.blocks.append(accepted)
        self._tx_ids.update(tx.tx_id for tx in accepted.txs)
        return accepted

    def append_mined(self, block: Block) -> Block:
        """Append under proof-of-work rules: header must meet the target."""
        if self.config.mode != MODE_POW:
            raise WrongMode("append_mined requires pow mode")
        self._check_parent(block)
        self._check_txs(block)
        if not pow_check(block.header, self.config.pow_target_bits):
            raise PowTargetMissed(
                f"header does not meet {self.config.pow_target_bits} zero bits"
            )
        self.blocks.append(block)
        self._tx_ids.update(tx.tx_id for tx in block.txs)
        return block

    def mine_and_append(self, txs: Sequence[Transaction], wall_time: int) -> Block:
        draft = self.build_block(txs, wall_time)
        nonce = mine_pow(draft.header, self.config.pow_target_bits)
        return self.append_mined(
            Block(header=replace(draft.header, nonce=nonce), txs=draft.txs)
        )

    def verify(self) -> VerifyResult:
        return verify_chain(self.blocks, self.config)

    # -- export / import ----------------------------------------------------

    def to_jsonl(self) -> str:
        return "".join(_block_to_line(b) for b in self.blocks)

    def export_jsonl(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_jsonl())

    @classmethod
    def from_jsonl(cls, text: str, config: ChainConfig) -> "Chain":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise EmptyChain("refusing to import an empty chain file")
        blocks = [_block_from_line(ln, i + 1) for i, ln in enumerate(lines)]
        return cls._from_blocks(config, blocks)

    @classmethod
    def import_jsonl(cls, path: str, config: ChainConfig) -> "Chain":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_jsonl(fh.read(), config)


def verify_chain(blocks: Sequence[Block], config: ChainConfig) -> VerifyResult:
    """Walk the chain from genesis; report the lowest failing height.

    Hash avalanche makes any single tampered byte surface at or below the
    height where it happened: the merkle root is recomputed from canonical
    tx bytes, linkage from recomputed block ids, and consensus evidence
    (approvals or work) from the recomputed block_id.
    """
    if not blocks:
        return VerifyResult(False, 0, R_BAD_GENESIS)
    seen: set[bytes] = set()
    for i, block in enumerate(blocks):
        h = block.header
        if h.height != i:
            return VerifyResult(False, i, R_HEIGHT)
        if i == 0:
            if h.prev_hash != ZERO32:
                return VerifyResult(False, 0, R_BAD_GENESIS)
        elif h.prev_hash != blocks[i - 1].block_id:
            return VerifyResult(False, i, R_LINK)
        if h.tx_count != len(block.txs):
            return VerifyResult(False, i, R_TX_COUNT)
        recomputed = [sha256d(tx.signing_bytes()) for tx in block.txs]
        expected_root = crypto.merkle_root(recomputed) if recomputed else ZERO32
        if h.merkle_root != expected_root:
            return VerifyResult(False, i, R_MERKLE)
        for tx, rid in zip(block.txs, recomputed):
            if tx.tx_id != rid:
                return VerifyResult(False, i, R_TX_HASH)
            if not crypto.verify(tx.author_pk, tx.signing_bytes(), tx.signature):
                return VerifyResult(False, i, R_TX_SIG)
            if rid in seen:
                return VerifyResult(False, i, R_DUP)
            seen.add(rid)
        if i == 0:
            continue
        if config.mode == MODE_QUORUM:
            bid = block.block_id
            distinct: set[bytes] = set()
            for ap in block.approvals:
                if ap.validator_pk not in config.validators:
                    return VerifyResult(False, i, R_UNKNOWN_VAL)
                if not crypto.verify(ap.validator_pk, bid, ap.signature):
                    return VerifyResult(False, i, R_APPROVAL_SIG)
                distinct.add(ap.validator_pk)
            if len(distinct) < config.quorum_m:
                return VerifyResult(False, i, R_QUORUM)
        else:
            if not pow_check(h, config.pow_target_bits):
                return VerifyResult(False, i, R_POW)
    return VerifyResult(True)


# ---------------------------------------------------------------------------
# JSON-lines codec


def _block_to_line(block: Block) -> str:
    h = block.header
    obj = {
        "height": h.height,
        "prev_hash": h.prev_hash.hex(),
        "merkle_root": h.merkle_root.hex(),
        "wall_time": h.wall_time,
        "tx_count": h.tx_count,
        "nonce": h.nonce,
        "block_id": block.block_id.hex(),
        "txs": [
            {
                "tx_id": tx.tx_id.hex(),
                "kind": tx.kind,
                "payload": tx.payload_obj(),
                "author_pk": tx.author_pk.hex(),
                "signature": tx.signature.hex(),
            }
            for tx in block.txs
        ],
        "approvals": [
            {"validator_pk": ap.validator_pk.hex(), "signature": ap.signature.hex()}
            for ap in block.approvals
        ],
    }
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False) + "\n"


def _block_from_line(line: str, lineno: int) -> Block:
    try:
        obj = json.loads(line)
        txs = tuple(
            Transaction(
                kind=t["kind"],
                payload=canonical_json(t["payload"]),
                author_pk=bytes.fromhex(t["author_pk"]),
                signature=bytes.fromhex(t["signature"]),
                tx_id=bytes.fromhex(t["tx_id"]),
            )
            for t in obj["txs"]
        )
        approvals = tuple(
            Approval(
                validator_pk=bytes.fromhex(a["validator_pk"]),
                signature=bytes.fromhex(a["signature"]),
            )
            for a in obj["approvals"]
        )
        header = BlockHeader(
            height=obj["height"],
            prev_hash=bytes.fromhex(obj["prev_hash"]),
            merkle_root=bytes.fromhex(obj["merkle_root"]),
            wall_time=obj["wall_time"],
            tx_count=obj["tx_count"],
            nonce=obj["nonce"],
        )
        stated_id = bytes.fromhex(obj["block_id"])
    except (KeyError, ValueError, TypeError) as exc:
        raise BadImport(lineno, f"malformed block record: {exc}") from exc
    block = Block(header=header, txs=txs, approvals=approvals)
    if block.block_id != stated_id:
        raise BadImport(lineno, "stated block_id does not match recomputed header hash")
    for tx in txs:
        if sha256d(tx.signing_bytes()) != tx.tx_id:
            raise BadImport(lineno, f"stated tx_id mismatch on {tx.tx_id.hex()}")
    return block
