"""Reputation scores and reputation-weighted vote arithmetic.

Scores live in [epsilon, 1]; a lower score means more suspicious.  An account
whose score is at or below the owner's threshold ``p_th`` is treated as
malicious by that owner.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from types import MappingProxyType
from typing import Iterable, List, Mapping, Optional, Sequence, Tuple

from .core_types import Transaction
from .sortition import VoteRangeTable, assign_votes


@dataclass(frozen=True)
class ReputationList:
    owner: int
    scores: Mapping[int, float]
    p_th: float = 0.5
    epsilon: float = 0.01
    epoch: int = 0
    default: float = 1.0  # score for accounts never seen

    def __post_init__(self):
        if not 0 < self.p_th < 1:
            raise ValueError(f"p_th must be in (0, 1), got {self.p_th}")
        if not 0 < self.epsilon <= self.p_th:
            raise ValueError(f"epsilon must be in (0, p_th], got {self.epsilon}")
        clamped = {}
        for account, score in self.scores.items():
            if not 0.0 <= score <= 1.0:
                raise ValueError(f"score for account {account} outside [0, 1]: {score}")
            clamped[account] = max(self.epsilon, score)
        object.__setattr__(self, "scores", MappingProxyType(clamped))

    def score(self, account: int) -> float:
        return self.scores.get(account, max(self.epsilon, self.default))

    def is_malicious(self, account: int) -> bool:
        return self.score(account) <= self.p_th

    def replace(self, **changes) -> "ReputationList":
        fields = dict(owner=self.owner, scores=dict(self.scores), p_th=self.p_th,
                      epsilon=self.epsilon, epoch=self.epoch, default=self.default)
        fields.update(changes)
        return ReputationList(**fields)


def uniform_reputation(owner: int, accounts: Iterable[int], score: float = 1.0, **kw) -> ReputationList:
    return ReputationList(owner, {a: score for a in accounts}, **kw)


# -- tabular import/export ---------------------------------------------------

def write_reputation_csv(path, reps: ReputationList) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["account_id", "score"])
        for account in sorted(reps.scores):
            writer.writerow([account, format(reps.scores[account], ".9g")])


def read_reputation_csv(path, owner: int = 0, **kw) -> ReputationList:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    scores = {int(row["account_id"]): float(row["score"]) for row in rows}
    return ReputationList(owner, scores, **kw)


# -- scoring -----------------------------------------------------------------

def score_accounts(history: Mapping[int, Sequence[Transaction]], window_rounds: int, current_round: int,
                   owner: int = 0, p_th: float = 0.5, epsilon: float = 0.01) -> ReputationList:
    """Deterministic stand-in for a sliding-window illicit-activity classifier.

    ``history`` maps account id to the transactions it sent.  Only transactions
    created in the last ``window_rounds`` rounds (inclusive of the current one)
    count.  Score is 1 minus the illicit fraction, floored at epsilon.
    """
    if window_rounds < 1:
        raise ValueError("window_rounds must be >= 1")
    start = current_round - window_rounds + 1
    scores = {}
    for account, txs in history.items():
        recent = [tx for tx in txs if start <= tx.created_round <= current_round]
        if not recent:
            scores[account] = 1.0
            continue
        illicit = sum(1 for tx in recent if tx.illicit)
        scores[account] = max(epsilon, min(1.0, 1.0 - illicit / len(recent)))
    return ReputationList(owner, scores, p_th=p_th, epsilon=epsilon, epoch=current_round)


# -- leader preference ---------------------------------------------------------

def compensation_factor(theta_i, delta_mi):
    """C_{m,i}: factor by which the honest candidate's score must beat the
    malicious one's to overturn a credential lead of ``delta_mi``."""
    if not 0 < theta_i < 1:
        raise ValueError(f"theta_i must be in (0, 1), got {theta_i}")
    if delta_mi < 0:
        raise ValueError("delta_mi must be non-negative")
    if delta_mi >= theta_i:
        raise ValueError("malicious credential lead is beyond the compensable range (delta >= theta)")
    return 1 / (1 - delta_mi / theta_i)


def prefers(theta_a, theta_b, p_a, p_b, a_id: int = 0, b_id: int = 1) -> str:
    """Return 'a' or 'b': the candidate with the smaller Θ/p.

    Exact ties go to the smaller raw credential, then to the smaller id.
    """
    # cross-multiplied to stay exact for rational inputs; p > 0 always
    lhs, rhs = theta_a * p_b, theta_b * p_a
    if lhs != rhs:
        return "a" if lhs < rhs else "b"
    if theta_a != theta_b:
        return "a" if theta_a < theta_b else "b"
    return "a" if a_id < b_id else "b"


EMPTY = None  # select_leader's "vote for the empty block" result


def select_leader(proposals: Sequence[Tuple[int, object]], reps: ReputationList,
                  honest_alternative: bool = True) -> Optional[int]:
    """Pick the proposer with minimal Θ/p, or None (empty) when that proposer
    is perceived malicious.

    With ``honest_alternative`` False the ranking ignores reputation (plain
    minimal Θ) and a suspicious winner still yields the empty vote.
    """
    if not proposals:
        return EMPTY
    best_id, best_theta = proposals[0]
    for pid, theta in proposals[1:]:
        if honest_alternative:
            pick = prefers(theta, best_theta, reps.score(pid), reps.score(best_id), pid, best_id)
        else:
            pick = prefers(theta, best_theta, 1, 1, pid, best_id)
        if pick == "a":
            best_id, best_theta = pid, theta
    if reps.score(best_id) <= reps.p_th:
        return EMPTY
    return best_id


def empty_block_rejected(p_honest, p_th, c) -> bool:
    """Whether an honest proposer's score guarantees the empty block is rejected."""
    return p_honest > c * p_th


# -- vote attenuation -------------------------------------------------------

def perceived_votes(p: float, lam, table: VoteRangeTable) -> int:
    """Votes granted when the credential value is scaled by the counter's
    score but compared against the unscaled ranges."""
    if lam == 0:
        return 0
    return assign_votes(p * lam, table)


def credential_attenuation(p: float, lam) -> float:
    return float(lam) * (1 - p)


@dataclass(frozen=True)
class VoterAttenuation:
    kappa: int
    score: float
    perceived: float  # p * kappa
    loss: float  # kappa * (1 - p)
    value_loss: Optional[float] = None  # Λ (1 - p), when Λ is known


@dataclass(frozen=True)
class SplitReport:
    v_h: float
    v_m: float
    l_h: float
    l_m: float
    delta_l: float
    l_hat: Optional[float]  # None: undefined, no malicious votes
    ratio: Optional[float]


@dataclass(frozen=True)
class AttenuationReport:
    evaluator: Optional[int]
    per_validator: Mapping[int, VoterAttenuation]
    raw: float  # sum of kappa
    effective: float  # V
    loss: float  # L
    value_loss: Optional[float] = None  # credential-value loss, when Λ supplied
    split: Optional[SplitReport] = None


def _normalize_votes(votes) -> List[Tuple[int, int]]:
    if isinstance(votes, Mapping):
        return list(votes.items())
    return [(int(v[0]), int(v[1])) for v in votes]


def effective_votes(votes, reps: ReputationList, credentials: Optional[Mapping[int, object]] = None,
                    evaluator: Optional[int] = None) -> AttenuationReport:
    """Reputation-weighted tally of (voter, kappa) pairs as seen by ``reps.owner``.

    ``credentials`` optionally maps voter id to its normalized credential value
    so the credential-value loss can be reported too.
    """
    per = {}
    raw = 0
    effective = 0
    value_loss = 0.0 if credentials is not None else None
    for voter, kappa in _normalize_votes(votes):
        if kappa < 0:
            raise ValueError("vote counts must be non-negative")
        p = reps.score(voter)
        vl = None
        if credentials is not None and voter in credentials:
            vl = credential_attenuation(p, credentials[voter])
            value_loss += vl
        entry = VoterAttenuation(kappa, p, p * kappa, kappa * (1 - p), vl)
        if voter in per:
            prev = per[voter]
            entry = VoterAttenuation(prev.kappa + kappa, p, prev.perceived + p * kappa,
                                     prev.loss + kappa * (1 - p), vl)
        per[voter] = entry
        raw += kappa
        effective += p * kappa
    return AttenuationReport(
        evaluator=reps.owner if evaluator is None else evaluator,
        per_validator=MappingProxyType(per),
        raw=raw,
        effective=effective,
        loss=raw - effective,
        value_loss=value_loss,
    )


def split_report(votes, reps: ReputationList, p_th: Optional[float] = None) -> SplitReport:
    """Honest/malicious partition of the effective tally at threshold p_th."""
    if p_th is None:
        p_th = reps.p_th
    v_h = v_m = 0  # int start keeps Fraction scores exact
    k_h = k_m = 0
    for voter, kappa in _normalize_votes(votes):
        p = reps.score(voter)
        if p > p_th:
            v_h += p * kappa
            k_h += kappa
        else:
            v_m += p * kappa
            k_m += kappa
    l_h = k_h - v_h
    l_m = k_m - v_m
    delta = 2 * l_m - l_h
    if v_m > 0:
        return SplitReport(v_h, v_m, l_h, l_m, delta, delta / v_m, v_h / v_m)
    return SplitReport(v_h, v_m, l_h, l_m, delta, None, None)


def attenuation_report(votes, reps: ReputationList, credentials=None, evaluator=None) -> AttenuationReport:
    base = effective_votes(votes, reps, credentials, evaluator)
    return AttenuationReport(base.evaluator, base.per_validator, base.raw, base.effective, base.loss,
                             base.value_loss, split_report(votes, reps))


def expected_attenuation(reports: Iterable[AttenuationReport], committee: Iterable[int]) -> float:
    """Mean vote loss over the evaluating committee."""
    committee = list(committee)
    if not committee:
        raise ValueError("empty committee")
    by_eval = {r.evaluator: r for r in reports}
    missing = [c for c in committee if c not in by_eval]
    if missing:
        raise ValueError(f"no attenuation report for validators {missing}")
    return sum(by_eval[c].loss for c in committee) / len(committee)


def compensate(v_rs: float, expected_loss: float, enabled: bool = True) -> float:
    if expected_loss < 0:
        raise ValueError("expected loss must be non-negative")
    return v_rs + expected_loss if enabled else v_rs


def mean_defined(values: Iterable[Optional[float]]) -> Optional[float]:
    vals = [v for v in values if v is not None]
    return sum(vals) / len(vals) if vals else None
