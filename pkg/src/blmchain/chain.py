"""Block and chain primitives: hashing, Merkle trees, headers, validation.

All integers in the header wire format are little-endian; the layout is
version u32 | prev_block_hash 32B | merkle_root 32B | timestamp_ms u64 |
difficulty_k u16 | pow_commitment 32B, hashed with a single SHA-256.
These choices are fixed so that block ids are reproducible across
implementations.
"""

from __future__ import annotations

import hashlib
import random
import struct
from dataclasses import dataclass

from . import engine

HASH_SIZE = 32
ZERO_HASH = b"\x00" * HASH_SIZE
HEADER_VERSION = 1

_HEADER_FMT = "<I32s32sQH32s"


class ChainError(Exception):
    pass


class EmptyTransactionList(ChainError):
    """A Merkle root over zero transactions is undefined."""


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def _check_hash(value: bytes, name: str) -> None:
    if not isinstance(value, bytes) or len(value) != HASH_SIZE:
        raise ValueError(f"{name} must be exactly {HASH_SIZE} bytes")


@dataclass(frozen=True)
class Transaction:
    payload: bytes

    def __post_init__(self):
        if len(self.payload) < 1:
            raise ValueError("transaction payload must be non-empty")


@dataclass(frozen=True)
class BlockHeader:
    version: int
    prev_block_hash: bytes
    merkle_root: bytes
    timestamp_ms: int
    difficulty_k: int
    pow_commitment: bytes

    def __post_init__(self):
        if not 0 <= self.version < 2**32:
            raise ValueError("version out of u32 range")
        if not 0 <= self.timestamp_ms < 2**64:
            raise ValueError("timestamp_ms out of u64 range")
        if not 0 <= self.difficulty_k < 2**16:
            raise ValueError("difficulty_k out of u16 range")
        _check_hash(self.prev_block_hash, "prev_block_hash")
        _check_hash(self.merkle_root, "merkle_root")
        _check_hash(self.pow_commitment, "pow_commitment")

    def serialize(self) -> bytes:
        return struct.pack(_HEADER_FMT, self.version, self.prev_block_hash,
                           self.merkle_root, self.timestamp_ms,
                           self.difficulty_k, self.pow_commitment)


@dataclass(frozen=True)
class Block:
    header: BlockHeader
    transactions: tuple[Transaction, ...]
    pow: engine.ProofOfWork | None


@dataclass(frozen=True)
class ChainParams:
    """Consensus parameters: the problem identity and difficulty template.

    ``difficulty.k`` doubles as K0, the genesis difficulty.
    """

    problem: str
    difficulty: engine.DifficultyParams

    def difficulty_at(self, k: int) -> engine.DifficultyParams:
        return self.difficulty.with_k(k)


@dataclass(frozen=True)
class Chain:
    params: ChainParams
    blocks: tuple[Block, ...]

    @property
    def height(self) -> int:
        return len(self.blocks) - 1

    def tip_id(self) -> bytes:
        return block_id(self.blocks[-1].header)

    def extended(self, block: Block) -> "Chain":
        return Chain(self.params, self.blocks + (block,))


@dataclass(frozen=True)
class ValidationReport:
    valid: bool
    height: int | None = None
    reason: str | None = None


def merkle_root(transactions) -> bytes:
    """Merkle root over transaction payloads.

    Leaves are SHA-256 of the payload, internal nodes SHA-256 of the
    concatenated children; a level with an odd count duplicates its last
    node; a single leaf is its own root.
    """
    if not transactions:
        raise EmptyTransactionList("need at least one transaction")
    level = [sha256(tx.payload) for tx in transactions]
    while len(level) > 1:
        if len(level) % 2:
            level.append(level[-1])
        level = [sha256(level[i] + level[i + 1])
                 for i in range(0, len(level), 2)]
    return level[0]


def block_id(header: BlockHeader) -> bytes:
    """SHA-256 of the canonical header serialization."""
    return sha256(header.serialize())


def seed_hash(prev_block_hash: bytes, merkle_root_: bytes) -> bytes:
    """Seed for index selection; ties S to the previous block and the
    current transactions, which blocks precomputing work."""
    _check_hash(prev_block_hash, "prev_block_hash")
    _check_hash(merkle_root_, "merkle_root")
    return sha256(prev_block_hash + merkle_root_)


def mine_hash_baseline(prev: bytes, root: bytes, target: int,
                       max_nonce: int) -> int:
    """Classic hash-target mining loop, kept for comparison.

    Returns the smallest nonce in [0, max_nonce] whose
    SHA-256(prev || root || nonce_le64), read big-endian, is below target.
    """
    _check_hash(prev, "prev")
    _check_hash(root, "root")
    base = prev + root
    for nonce in range(max_nonce + 1):
        digest = sha256(base + struct.pack("<Q", nonce))
        if int.from_bytes(digest, "big") < target:
            return nonce
    raise engine.Exhausted(f"no nonce below target within {max_nonce}")


def genesis_block(params: ChainParams) -> Block:
    """Genesis carries an empty PoW (all-zero commitment) and K0."""
    header = BlockHeader(
        version=HEADER_VERSION,
        prev_block_hash=ZERO_HASH,
        merkle_root=ZERO_HASH,
        timestamp_ms=0,
        difficulty_k=params.difficulty.k,
        pow_commitment=ZERO_HASH,
    )
    return Block(header=header, transactions=(), pow=None)


def expected_difficulty_k(params: ChainParams, headers, height: int) -> int:
    """Difficulty a block at ``height`` must carry, from its ancestors.

    ``headers`` are the ancestor headers 0..height-1.  The first mined block
    keeps K0 (there is no completed duration yet); later blocks run one
    controller step over the trailing durations.
    """
    if height < 1:
        return params.difficulty.k
    if height == 1:
        k = params.difficulty.k
        return max(params.difficulty.k_min, min(params.difficulty.k_max, k))
    durations = [
        (headers[i].timestamp_ms - headers[i - 1].timestamp_ms) / 1000.0
        for i in range(1, height)
    ]
    return engine.adjust_difficulty(durations,
                                    headers[height - 1].difficulty_k,
                                    params.difficulty)


def _validation_rng(bid: bytes) -> random.Random:
    seed = int.from_bytes(sha256(b"validate" + bid), "big")
    return random.Random(seed)


def validate_chain(chn: Chain, problem: engine.SearchProblem,
                   validation_budget: int = 1000) -> ValidationReport:
    """Re-validate a whole chain; reports the first failing height.

    Checks linkage, Merkle roots, PoW commitments, the recomputed
    difficulty schedule, timestamp monotonicity, and every proof of work.
    PoW sampling is seeded from the block id so re-validation is
    deterministic.
    """
    blocks = chn.blocks
    if not blocks:
        return ValidationReport(False, 0, "empty chain")

    genesis = blocks[0]
    if genesis.header.prev_block_hash != ZERO_HASH:
        return ValidationReport(False, 0, "genesis prev_block_hash not zero")
    if genesis.header.difficulty_k != chn.params.difficulty.k:
        return ValidationReport(False, 0, "genesis difficulty is not K0")
    if genesis.header.merkle_root != ZERO_HASH or genesis.transactions:
        return ValidationReport(False, 0, "genesis must carry no transactions")
    if genesis.header.pow_commitment != ZERO_HASH or genesis.pow is not None:
        return ValidationReport(False, 0, "genesis must carry an empty pow")
    if genesis.header.version != HEADER_VERSION:
        return ValidationReport(False, 0, "unsupported header version")

    headers = [b.header for b in blocks]
    for height in range(1, len(blocks)):
        block = blocks[height]
        hdr = block.header
        if hdr.version != HEADER_VERSION:
            return ValidationReport(False, height, "unsupported header version")
        if hdr.prev_block_hash != block_id(headers[height - 1]):
            return ValidationReport(False, height, "prev_block_hash mismatch")
        if hdr.timestamp_ms < headers[height - 1].timestamp_ms:
            return ValidationReport(False, height, "timestamp decreased")
        if not block.transactions:
            return ValidationReport(False, height, "no transactions")
        try:
            root = merkle_root(block.transactions)
        except EmptyTransactionList:
            return ValidationReport(False, height, "no transactions")
        if hdr.merkle_root != root:
            return ValidationReport(False, height, "merkle_root mismatch")
        expected_k = expected_difficulty_k(chn.params, headers, height)
        if hdr.difficulty_k != expected_k:
            return ValidationReport(
                False, height,
                f"difficulty mismatch (carried {hdr.difficulty_k}, "
                f"expected {expected_k})")
        if block.pow is None:
            return ValidationReport(False, height, "missing pow")
        if hdr.pow_commitment != sha256(block.pow.theta_star):
            return ValidationReport(False, height, "pow_commitment mismatch")
        seed = seed_hash(hdr.prev_block_hash, hdr.merkle_root)
        difficulty = chn.params.difficulty_at(hdr.difficulty_k)
        bid = block_id(hdr)
        try:
            cex = engine.validate_pow(problem, seed, block.pow, difficulty,
                                      validation_budget, _validation_rng(bid))
        except engine.PowError as exc:
            return ValidationReport(False, height,
                                    f"pow rejected: {type(exc).__name__}")
        if cex is not None:
            return ValidationReport(
                False, height,
                f"pow counterexample (f={cex.objective_value!r})")
    return ValidationReport(True)
