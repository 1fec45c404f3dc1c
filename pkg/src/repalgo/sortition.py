"""Simulated cryptographic sortition.

Signatures and VRF outputs are keyed digests: a "signature" of a message is
``keyed_digest(key, message)`` and verification recomputes it.  Per-step
ephemeral keys are derived from a master key and the (round, step) pair.
"""

from __future__ import annotations

import bisect
import hashlib
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import List, Optional, Sequence, Tuple

from .core_types import Account, Seed, encode


@dataclass(frozen=True)
class Credential:
    round: int
    step: int
    owner: int
    subuser: int
    digest: bytes
    normalized: Fraction  # exact value of int(digest) / 2**hashlen, in [0, 1)

    @property
    def value(self) -> float:
        # float view for real-valued arithmetic (p * Λ); ordering uses ``normalized``
        return float(self.normalized)


@dataclass(frozen=True)
class VoteRangeTable:
    owner: Optional[int]
    round: Optional[int]
    pmf: Tuple[float, ...]
    boundaries: Tuple[float, ...]  # len(pmf) + 1 cut points, first 0.0, last 1.0

    def range_for(self, votes: int) -> Tuple[float, float]:
        return self.boundaries[votes], self.boundaries[votes + 1]


def keyed_digest(key: bytes, message: bytes, hashlen: int = 256) -> bytes:
    h = hashlib.shake_256()
    h.update(len(key).to_bytes(2, "big"))
    h.update(key)
    h.update(message)
    return h.digest(hashlen // 8)


def sign(key: bytes, *parts, hashlen: int = 256) -> bytes:
    return keyed_digest(key, encode(*parts), hashlen)


def master_key(account_id: int, secret: bytes = b"") -> bytes:
    return hashlib.sha256(encode("master-key", secret, account_id)).digest()


def ephemeral_key(master: bytes, round_: int, step: int) -> bytes:
    return hashlib.sha256(encode("ephemeral", master, round_, step)).digest()


def normalize(digest: bytes) -> Fraction:
    """Map a digest to [0, 1) by integer value over 2**bits; exact."""
    return Fraction(int.from_bytes(digest, "big"), 1 << (8 * len(digest)))


def proposer_threshold(stake: int, total_stake: int, tau_proposer: float) -> float:
    """Ψ^{r,1} for one account: expected proposer count tau, split by stake share."""
    if total_stake <= 0:
        raise ValueError("empty network: total stake is zero")
    return min(1.0, tau_proposer * stake / total_stake)


def subuser_digests(key: bytes, account_id: int, round_: int, seed: Seed, stake: int,
                    hashlen: int = 256) -> List[bytes]:
    return [keyed_digest(key, encode(round_, 1, k, seed.value), hashlen) for k in range(1, stake + 1)]


def best_subuser_credential(account: Account, key: bytes, round_: int, seed: Seed,
                            hashlen: int = 256) -> Optional[Credential]:
    """Minimum-digest sub-user credential, regardless of the selection threshold."""
    if account.stake <= 0:
        return None
    digests = subuser_digests(key, account.id, round_, seed, account.stake, hashlen)
    k = min(range(len(digests)), key=digests.__getitem__)
    # equal-length big-endian bytes compare like their integer values
    return Credential(round_, 1, account.id, k + 1, digests[k], normalize(digests[k]))


def proposer_credential(account: Account, round_: int, seed: Seed, key: bytes, total_stake: int,
                        tau_proposer: float, hashlen: int = 256) -> Optional[Credential]:
    cred = best_subuser_credential(account, key, round_, seed, hashlen)
    if cred is None:
        return None
    psi = proposer_threshold(account.stake, total_stake, tau_proposer)
    if psi >= 1.0 or cred.normalized < Fraction(psi):
        return cred
    return None


def validator_credential(account: Account, round_: int, step: int, seed: Seed, key: bytes,
                         hashlen: int = 256) -> Credential:
    if step < 2:
        raise ValueError("validator credentials exist for steps >= 2")
    d = keyed_digest(key, encode(round_, step, seed.value), hashlen)
    return Credential(round_, step, account.id, 0, d, normalize(d))


def binomial_vote_pmf(stake_j: int, total_stake: int, committee: Optional[float] = None) -> List[float]:
    """P(v votes) for v = 0..stake_j.

    Each currency unit is selected independently.  With ``committee`` unset the
    per-unit probability is stake_j / total_stake; with a committee target it
    is committee / total_stake (capped at 1), so expected total votes across
    the network equal the target.
    """
    if total_stake <= 0:
        raise ValueError("empty network: total stake is zero")
    if not 0 <= stake_j <= total_stake:
        raise ValueError(f"stake {stake_j} outside [0, {total_stake}]")
    p = stake_j / total_stake if committee is None else min(1.0, committee / total_stake)
    n = stake_j
    if n == 0:
        return [1.0]
    if p <= 0.0:
        return [1.0] + [0.0] * n
    if p >= 1.0:
        return [0.0] * n + [1.0]
    if n <= 100:
        return [math.comb(n, v) * p**v * (1 - p) ** (n - v) for v in range(n + 1)]
    log_p, log_q = math.log(p), math.log1p(-p)
    out = []
    for v in range(n + 1):
        log_c = math.lgamma(n + 1) - math.lgamma(v + 1) - math.lgamma(n - v + 1)
        out.append(math.exp(log_c + v * log_p + (n - v) * log_q))
    return out


def vote_ranges(pmf: Sequence[float], owner: Optional[int] = None, round_: Optional[int] = None) -> VoteRangeTable:
    """Cumulative sub-ranges: v votes <-> [sum_{v'<v} P, sum_{v'<=v} P)."""
    bounds = [0.0]
    acc = 0.0
    for prob in pmf[:-1]:
        acc += prob
        bounds.append(min(acc, 1.0))
    bounds.append(1.0)
    return VoteRangeTable(owner, round_, tuple(pmf), tuple(bounds))


def assign_votes(normalized, table: VoteRangeTable) -> int:
    if not 0 <= normalized < 1:
        raise ValueError(f"normalized value {normalized} outside [0, 1)")
    bounds, top = table.boundaries, len(table.pmf) - 1
    # rightmost cut point <= value; zero-width ranges are skipped automatically.
    # Bisect on the float view, then settle the neighbours exactly.
    v = bisect.bisect_right(bounds, float(normalized), hi=top + 1) - 1
    while v < top and bounds[v + 1] <= normalized:
        v += 1
    while v > 0 and bounds[v] > normalized:
        v -= 1
    return v
