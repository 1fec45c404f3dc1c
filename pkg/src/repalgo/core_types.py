"""Shared domain model: accounts, transactions, blocks, seeds, messages, parameters."""

from __future__ import annotations

import enum
import hashlib
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence, Tuple, Union


class ConfigError(ValueError):
    """Raised when a configuration object violates one or more constraints.

    ``errors`` holds every violation found, not just the first.
    """

    def __init__(self, errors: Sequence[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class MalformedBlockError(ValueError):
    pass


class Behavior(str, enum.Enum):
    HONEST = "honest"
    ILLICIT_PROPOSER = "illicit_proposer"
    MALICIOUS_VALIDATOR = "malicious_validator"


# --------------------------------------------------------------------------
# Canonical encoding and hashing
# --------------------------------------------------------------------------

def encode(*parts) -> bytes:
    """Unambiguous byte encoding of ints, bytes, strings, None and nested tuples."""
    out = bytearray()
    _encode_into(out, parts)
    return bytes(out)


def _encode_into(out: bytearray, parts) -> None:
    for part in parts:
        kind = type(part)
        if kind is int:
            raw = part.to_bytes((part.bit_length() + 8) // 8, "big", signed=True)
            out += b"i" + len(raw).to_bytes(2, "big") + raw
        elif kind is bytes:
            out += b"b" + len(part).to_bytes(4, "big") + part
        elif part is None:
            out += b"n"
        elif kind is bool:
            out += b"t" if part else b"f"
        elif kind is tuple or kind is list:
            out += b"l" + len(part).to_bytes(4, "big")
            _encode_into(out, part)
        elif isinstance(part, str):
            raw = part.encode()
            out += b"s" + len(raw).to_bytes(4, "big") + raw
        elif isinstance(part, bool):
            out += b"t" if part else b"f"
        elif isinstance(part, int):
            _encode_into(out, (int(part),))
        elif isinstance(part, (bytes, bytearray)):
            _encode_into(out, (bytes(part),))
        elif isinstance(part, (tuple, list)):
            _encode_into(out, (tuple(part),))
        else:
            raise TypeError(f"cannot encode {type(part).__name__}")


def digest_bytes(data: bytes, hashlen: int = 256) -> bytes:
    """H(data) truncated/extended to ``hashlen`` bits (SHAKE-256 XOF)."""
    return hashlib.shake_256(data).digest(hashlen // 8)


def hash_parts(*parts, hashlen: int = 256) -> bytes:
    return digest_bytes(encode(*parts), hashlen)


# --------------------------------------------------------------------------
# Accounts and transactions
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ValidatorPolicy:
    """Adversary voting strategy. Honest nodes never consult it."""

    p_empty: float = 0.0
    p_support_malicious: float = 0.0

    def __post_init__(self):
        errors = []
        for name in ("p_empty", "p_support_malicious"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                errors.append(f"{name} must be in [0, 1], got {value}")
        if errors:
            raise ConfigError(errors)


@dataclass(frozen=True)
class Account:
    id: int
    stake: int
    behavior: Behavior = Behavior.HONEST
    illicit_rate: float = 0.0
    validator_policy: Optional[ValidatorPolicy] = None

    def __post_init__(self):
        errors = []
        if self.stake < 0:
            errors.append(f"account {self.id}: stake must be >= 0, got {self.stake}")
        if not 0.0 <= self.illicit_rate <= 1.0:
            errors.append(f"account {self.id}: illicit_rate must be in [0, 1], got {self.illicit_rate}")
        if self.behavior is Behavior.HONEST:
            if self.illicit_rate != 0:
                errors.append(f"account {self.id}: honest accounts must have illicit_rate 0")
            if self.validator_policy is not None:
                errors.append(f"account {self.id}: honest accounts cannot carry a validator_policy")
        if errors:
            raise ConfigError(errors)

    @property
    def honest(self) -> bool:
        return self.behavior is Behavior.HONEST


@dataclass(frozen=True)
class Transaction:
    sender: int
    receiver: int
    amount: int
    illicit: bool = False
    created_round: int = 0
    nonce: int = 0  # disambiguates otherwise identical transfers

    def __post_init__(self):
        if self.amount <= 0:
            raise ValueError(f"transaction amount must be positive, got {self.amount}")
        if self.sender == self.receiver:
            raise ValueError("transaction sender and receiver must differ")

    def encoded(self) -> Tuple:
        return (self.sender, self.receiver, self.amount, self.illicit, self.created_round, self.nonce)


# --------------------------------------------------------------------------
# Blocks and seeds
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Block:
    """A proposed or finalized block.

    For the protocol empty block ``proposer`` is None, ``payments`` is empty and
    ``signed_seed`` holds the unsigned previous seed instead of a signature.
    """

    round: int
    signed_seed: bytes
    prev_hash: bytes
    payments: Tuple[Transaction, ...] = ()
    proposer: Optional[int] = None
    _digests: dict = field(default_factory=dict, init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        if not isinstance(self.payments, tuple):
            object.__setattr__(self, "payments", tuple(self.payments))

    @property
    def header(self) -> Tuple[int, bytes, bytes]:
        return (self.round, self.signed_seed, self.prev_hash)


@dataclass(frozen=True)
class Seed:
    value: bytes
    round: int


def empty_block(round_: int, prev_seed: Seed, prev_hash: bytes) -> Block:
    return Block(round=round_, signed_seed=prev_seed.value, prev_hash=prev_hash, payments=(), proposer=None)


def hash_block(block: Block, hashlen: Optional[int] = None) -> bytes:
    if hashlen is None:
        hashlen = len(block.prev_hash) * 8
    cached = block._digests.get(hashlen)
    if cached is None:
        cached = hash_parts(
            "block",
            block.round,
            block.signed_seed,
            block.prev_hash,
            block.proposer,
            tuple(tx.encoded() for tx in block.payments),
            hashlen=hashlen,
        )
        block._digests[hashlen] = cached
    return cached


def is_empty(block: Block) -> bool:
    no_payments = len(block.payments) == 0
    no_proposer = block.proposer is None
    if no_proposer and not no_payments:
        raise MalformedBlockError("block without proposer carries payments")
    if no_payments and not no_proposer:
        # A proposer may legitimately propose an empty payment set, but such a
        # block is not the protocol empty block; callers must ask about PAY.
        raise MalformedBlockError("proposer must be None iff the block is the empty block")
    return no_payments and no_proposer


def is_protocol_empty(block: Block) -> bool:
    """Non-raising variant used on proposals whose PAY may legitimately be empty."""
    return block.proposer is None


# --------------------------------------------------------------------------
# Protocol parameters
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ProtocolParams:
    hashlen: int = 256
    tau_proposer: float = 3.0
    committee_votes: float = 100
    finality_fraction: Fraction = Fraction(2, 3)
    max_steps: int = 13
    p_th: float = 0.5
    epsilon_rep: float = 0.01
    compensation_enabled: bool = True
    reputation_enabled: bool = True
    # False: aware validators only refuse a suspicious best-credential leader
    # (vote Empty) instead of falling back to the next-best Θ/p proposer.
    honest_alternative: bool = True

    def __post_init__(self):
        if not isinstance(self.finality_fraction, Fraction):
            object.__setattr__(self, "finality_fraction", Fraction(self.finality_fraction).limit_denominator(10**6))
        errors = self.violations()
        if errors:
            raise ConfigError(errors)

    def violations(self):
        errors = []
        if self.hashlen < 64 or self.hashlen % 8:
            errors.append(f"hashlen must be a multiple of 8 and >= 64, got {self.hashlen}")
        if self.tau_proposer < 1:
            errors.append(f"tau_proposer must be >= 1, got {self.tau_proposer}")
        if self.committee_votes < 4:
            errors.append(f"committee_votes must be >= 4, got {self.committee_votes}")
        if not Fraction(1, 2) <= self.finality_fraction < 1:
            errors.append(f"finality_fraction must be in [1/2, 1), got {self.finality_fraction}")
        if self.max_steps < 5:
            errors.append(f"max_steps must be >= 5, got {self.max_steps}")
        if not 0 < self.p_th < 1:
            errors.append(f"p_th must be in (0, 1), got {self.p_th}")
        if not 0 < self.epsilon_rep <= self.p_th:
            errors.append(f"epsilon_rep must satisfy 0 < epsilon_rep <= p_th, got {self.epsilon_rep}")
        return errors


def finality_threshold(total_votes, fraction: Fraction = Fraction(2, 3)) -> int:
    """t_H = floor(fraction * total_votes) + 1, computed exactly."""
    if total_votes <= 0:
        raise ValueError("total_votes must be positive")
    return math.floor(Fraction(fraction) * Fraction(total_votes)) + 1


# --------------------------------------------------------------------------
# Vote messages
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class BlockHashVote:
    digest: bytes
    proposer: int


@dataclass(frozen=True)
class EmptyVote:
    pass


@dataclass(frozen=True)
class BinaryVote:
    g: int
    b: int
    value: Optional[bytes] = None

    def __post_init__(self):
        if self.g not in (0, 1, 2) or self.b not in (0, 1):
            raise ValueError(f"invalid binary vote g={self.g} b={self.b}")


EMPTY_VOTE = EmptyVote()
Payload = Union[BlockHashVote, EmptyVote, BinaryVote]


@dataclass(frozen=True)
class VoteMessage:
    round: int
    step: int
    voter: int
    credential: "object"  # sortition.Credential; typed loosely to avoid an import cycle
    payload: Payload
    signature: bytes = b""

    def __post_init__(self):
        if self.step < 2:
            raise ValueError("vote messages exist only for steps >= 2")
        if isinstance(self.payload, BinaryVote) and self.step < 4:
            raise ValueError("binary payloads are only valid from step 4 on")


def payload_key(payload: Payload):
    if isinstance(payload, BlockHashVote):
        return ("hash", payload.digest, payload.proposer)
    if isinstance(payload, BinaryVote):
        return ("bin", payload.g, payload.b, payload.value)
    return ("empty",)
