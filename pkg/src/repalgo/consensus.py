"""Per-node consensus for one round.

Step 1 proposes, step 2 soft-votes for a leader, step 3 runs graded
consensus, step 4 initialises the binary agreement bit and steps 5.. run
binary agreement with a common-coin fallback.  Every step function is a
deterministic map from (node state, received messages) to an outgoing
message; the network scheduler owns delivery and timing.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from .core_types import (
    EMPTY_VOTE,
    Account,
    BinaryVote,
    Block,
    BlockHashVote,
    ProtocolParams,
    Seed,
    Transaction,
    VoteMessage,
    empty_block,
    encode,
    finality_threshold,
    hash_block,
    hash_parts,
    payload_key,
)
from .reputation import ReputationList, select_leader
from .sortition import (
    Credential,
    VoteRangeTable,
    assign_votes,
    best_subuser_credential,
    binomial_vote_pmf,
    ephemeral_key,
    keyed_digest,
    proposer_threshold,
    sign,
    validator_credential,
    vote_ranges,
)


class KeyReuseError(RuntimeError):
    pass


class AgreementViolation(RuntimeError):
    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = trace


class EphemeralKeyRing:
    """Per-step signing keys, each usable exactly once.

    Keys for rounds older than the most recent one are considered destroyed.
    """

    def __init__(self, master: bytes):
        self.master = master
        self._round = -1
        self._used = set()

    def take(self, round_: int, step: int) -> bytes:
        if round_ < self._round:
            raise KeyReuseError(f"key for round {round_} already destroyed")
        if round_ > self._round:
            self._round = round_
            self._used = set()
        if step in self._used:
            raise KeyReuseError(f"ephemeral key ({round_}, {step}) already used")
        self._used.add(step)
        return ephemeral_key(self.master, round_, step)


# --------------------------------------------------------------------------
# Messages and outcomes
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ProposalHeader:
    """Lightweight message {Head(B), σ^{r,1}} sent ahead of the full block."""

    round: int
    proposer: int
    block_hash: bytes
    head: Tuple[int, bytes, bytes]
    credential: Credential


@dataclass(frozen=True)
class ProposalMessage:
    block: Block
    block_signature: bytes
    credential: Credential


@dataclass(frozen=True)
class RoundOutcome:
    round: int
    block: Block
    leader: Optional[int]
    steps_used: int
    certifying_votes: float
    forced: bool = False  # max_steps backstop, not a threshold decision

    def __post_init__(self):
        if self.block.proposer is None and self.leader is not None:
            raise ValueError("empty block outcome cannot credit a leader")


def vote_signature(key: bytes, round_: int, step: int, payload, hashlen: int = 256) -> bytes:
    return sign(key, round_, step, payload_key(payload), hashlen=hashlen)


# --------------------------------------------------------------------------
# Shared per-round view
# --------------------------------------------------------------------------

@dataclass
class RoundContext:
    """Public data every node agrees on at the start of a round."""

    round: int
    seed: Seed  # Q^{r-1}
    prev_hash: bytes
    accounts: Mapping[int, Account]
    params: ProtocolParams
    directory: Mapping[int, bytes]  # account id -> master key (simulated PKI)
    committee_target: float = None
    threshold: int = None
    _tables: Dict[int, VoteRangeTable] = field(default_factory=dict, repr=False)
    _kappa: Dict[Tuple[int, int, bytes], int] = field(default_factory=dict, repr=False)
    _proposer_ok: Dict[Tuple[int, bytes], bool] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.total_stake = sum(a.stake for a in self.accounts.values())
        if self.total_stake <= 0:
            raise ValueError("empty network: total stake is zero")
        if self.committee_target is None:
            self.committee_target = self.params.committee_votes
        if self.threshold is None:
            self.threshold = finality_threshold(self.params.committee_votes, self.params.finality_fraction)

    @property
    def hashlen(self) -> int:
        return self.params.hashlen

    def table(self, account_id: int) -> VoteRangeTable:
        tab = self._tables.get(account_id)
        if tab is None:
            stake = self.accounts[account_id].stake
            pmf = binomial_vote_pmf(stake, self.total_stake, self.committee_target)
            tab = vote_ranges(pmf, account_id, self.round)
            self._tables[account_id] = tab
        return tab

    def votes_for(self, cred: Credential) -> int:
        return assign_votes(cred.normalized, self.table(cred.owner))

    def verify_vote(self, msg: VoteMessage) -> int:
        """Votes carried by ``msg`` (0 when its credential or signature is invalid)."""
        cred = msg.credential
        key = (msg.voter, msg.step, cred.digest, msg.signature, msg.payload)
        cached = self._kappa.get(key)
        if cached is not None:
            return cached
        kappa = 0
        master = self.directory.get(msg.voter)
        if master is not None and msg.round == self.round and cred.owner == msg.voter and cred.step == msg.step:
            eph = ephemeral_key(master, self.round, msg.step)
            expect = validator_credential(self.accounts[msg.voter], self.round, msg.step, self.seed, eph, self.hashlen)
            if expect.digest == cred.digest and msg.signature == vote_signature(eph, msg.round, msg.step, msg.payload,
                                                                              self.hashlen):
                kappa = self.votes_for(expect)
        self._kappa[key] = kappa
        return kappa

    def verify_proposer(self, cred: Credential) -> bool:
        key = (cred.owner, cred.digest)
        ok = self._proposer_ok.get(key)
        if ok is None:
            ok = False
            master = self.directory.get(cred.owner)
            account = self.accounts.get(cred.owner)
            if master is not None and account is not None and cred.round == self.round and cred.step == 1:
                eph = ephemeral_key(master, self.round, 1)
                best = best_subuser_credential(account, eph, self.round, self.seed, self.hashlen)
                psi = proposer_threshold(account.stake, self.total_stake, self.params.tau_proposer)
                ok = (best is not None and best.digest == cred.digest
                      and (psi >= 1.0 or best.normalized < Fraction(psi)))
            self._proposer_ok[key] = ok
        return ok

    def verify_block(self, msg: ProposalMessage) -> bool:
        block = msg.block
        if block.round != self.round or block.prev_hash != self.prev_hash or block.proposer != msg.credential.owner:
            return False
        master = self.directory.get(block.proposer)
        if master is None:
            return False
        if block.signed_seed != sign(master, self.seed.value, self.round, hashlen=self.hashlen):
            return False
        eph = ephemeral_key(master, self.round, 1)
        return msg.block_signature == sign(eph, hash_block(block, self.hashlen), hashlen=self.hashlen)

    def empty_block(self) -> Block:
        return empty_block(self.round, self.seed, self.prev_hash)


# --------------------------------------------------------------------------
# Node state
# --------------------------------------------------------------------------

@dataclass
class NodeState:
    account: Account
    reps: ReputationList
    params: ProtocolParams
    keys: EphemeralKeyRing
    pending_txs: Tuple[Transaction, ...] = ()
    chain: List[Tuple[Block, Seed]] = field(default_factory=list)
    step_timers: Dict[int, int] = field(default_factory=dict)
    # per-round working state
    grade: int = 0
    candidate: Optional[Tuple[bytes, int]] = None  # (block hash, proposer)
    decision: Optional[RoundOutcome] = None
    decided_bit: Optional[int] = None

    @property
    def id(self) -> int:
        return self.account.id

    @property
    def weighs_reputation(self) -> bool:
        # adversaries ignore reputation lists
        return self.account.honest and self.params.reputation_enabled

    def reset_round(self) -> None:
        self.grade = 0
        self.candidate = None
        self.decision = None
        self.decided_bit = None
        self.step_timers = {}

    def weight(self, voter: int, kappa: int):
        return kappa * self.reps.score(voter) if self.weighs_reputation else kappa

    def credential(self, ctx: RoundContext, step: int) -> Tuple[Credential, bytes]:
        key = self.keys.take(ctx.round, step)
        return validator_credential(self.account, ctx.round, step, ctx.seed, key, ctx.hashlen), key

    def vote(self, ctx: RoundContext, step: int, payload, cred_key=None) -> Optional[VoteMessage]:
        """Sign ``payload`` for ``step`` if this node is selected; None otherwise."""
        cred, key = cred_key if cred_key is not None else self.credential(ctx, step)
        if ctx.votes_for(cred) == 0:
            return None
        signature = vote_signature(key, ctx.round, step, payload, ctx.hashlen)
        return VoteMessage(ctx.round, step, self.id, cred, payload, signature)


# --------------------------------------------------------------------------
# Tallies
# --------------------------------------------------------------------------

def tally(node: NodeState, ctx: RoundContext, votes: Iterable[VoteMessage], step: int):
    """Weighted tally by payload.  One vote per voter; invalid votes dropped."""
    totals = defaultdict(int)
    seen = set()
    for msg in votes:
        if msg.step != step or msg.voter in seen:
            continue
        kappa = ctx.verify_vote(msg)
        if kappa <= 0:
            continue
        seen.add(msg.voter)
        totals[msg.payload] += node.weight(msg.voter, kappa)
    return totals


def _best_block_value(totals) -> Tuple[Optional[BlockHashVote], float]:
    best, best_w = None, 0
    for payload, w in totals.items():
        if isinstance(payload, BlockHashVote):
            if best is None or w > best_w or (w == best_w and payload.digest < best.digest):
                best, best_w = payload, w
    return best, best_w


# --------------------------------------------------------------------------
# Steps
# --------------------------------------------------------------------------

def build_payset(node: NodeState) -> Tuple[Transaction, ...]:
    pool = sorted(node.pending_txs, key=lambda tx: (tx.created_round, tx.nonce))
    if not node.account.honest:
        if node.account.behavior.value == "illicit_proposer":
            return tuple(tx for tx in pool if tx.sender == node.id)
        return tuple(pool)
    if node.weighs_reputation:
        return tuple(tx for tx in pool if not node.reps.is_malicious(tx.sender))
    return tuple(pool)


def step1_propose(node: NodeState, ctx: RoundContext) -> Optional[Tuple[ProposalMessage, ProposalHeader]]:
    """Propose a block if sortition selects this node; returns (full, lightweight)."""
    key = node.keys.take(ctx.round, 1)
    cred = best_subuser_credential(node.account, key, ctx.round, ctx.seed, ctx.hashlen)
    if cred is None:
        return None
    psi = proposer_threshold(node.account.stake, ctx.total_stake, ctx.params.tau_proposer)
    if psi < 1.0 and cred.normalized >= Fraction(psi):
        return None
    signed_seed = sign(node.keys.master, ctx.seed.value, ctx.round, hashlen=ctx.hashlen)
    block = Block(ctx.round, signed_seed, ctx.prev_hash, build_payset(node), node.id)
    h = hash_block(block, ctx.hashlen)
    full = ProposalMessage(block, sign(key, h, hashlen=ctx.hashlen), cred)
    light = ProposalHeader(ctx.round, node.id, h, block.header, cred)
    return full, light


def choose_leader(node: NodeState, ctx: RoundContext, headers: Iterable[ProposalHeader]) -> Optional[ProposalHeader]:
    valid = {}
    for hd in headers:
        if hd.round == ctx.round and hd.credential.owner == hd.proposer and ctx.verify_proposer(hd.credential):
            valid.setdefault(hd.proposer, hd)
    if not valid:
        return None
    proposals = sorted(((pid, hd.credential.normalized) for pid, hd in valid.items()), key=lambda x: x[0])
    if node.weighs_reputation:
        leader = select_leader(proposals, node.reps, node.params.honest_alternative)
    else:
        leader = min(proposals, key=lambda x: (x[1], x[0]))[0]
    return None if leader is None else valid[leader]


def soft_vote_payload(node: NodeState, ctx: RoundContext, headers, blocks: Mapping[bytes, ProposalMessage]):
    hd = choose_leader(node, ctx, headers)
    if hd is None:
        return EMPTY_VOTE
    msg = blocks.get(hd.block_hash)
    if msg is None or not ctx.verify_block(msg) or hash_block(msg.block, ctx.hashlen) != hd.block_hash:
        return EMPTY_VOTE
    return BlockHashVote(hd.block_hash, hd.proposer)


def step2_soft_vote(node: NodeState, ctx: RoundContext, headers, blocks) -> Optional[VoteMessage]:
    cred_key = node.credential(ctx, 2)
    if ctx.votes_for(cred_key[0]) == 0:
        return None
    return node.vote(ctx, 2, soft_vote_payload(node, ctx, headers, blocks), cred_key)


def graded_payload(node: NodeState, ctx: RoundContext, votes):
    best, weight = _best_block_value(tally(node, ctx, votes, 2))
    if best is not None and weight >= ctx.threshold:
        return best
    return EMPTY_VOTE


def step3_graded(node: NodeState, ctx: RoundContext, votes) -> Optional[VoteMessage]:
    cred_key = node.credential(ctx, 3)
    if ctx.votes_for(cred_key[0]) == 0:
        return None
    return node.vote(ctx, 3, graded_payload(node, ctx, votes), cred_key)


def binary_init(node: NodeState, ctx: RoundContext, votes) -> BinaryVote:
    """Four-case (g, b) assignment from step-3 messages; also fixes the node's candidate."""
    totals = tally(node, ctx, votes, 3)
    best, weight = _best_block_value(totals)
    empty_weight = totals.get(EMPTY_VOTE, 0)
    t_h = ctx.threshold
    if best is not None and weight >= t_h:
        g, b = 2, 0
    elif empty_weight >= t_h:
        g, b = 0, 1
    elif best is not None and weight >= math.ceil(t_h / 2):
        g, b = 1, 1
    else:
        g, b = 0, 1
    node.grade = g
    node.candidate = (best.digest, best.proposer) if (best is not None and g >= 1) else None
    return BinaryVote(g, b, node.candidate[0] if node.candidate else None)


def step4_binary_init(node: NodeState, ctx: RoundContext, votes) -> Optional[VoteMessage]:
    payload = binary_init(node, ctx, votes)
    return node.vote(ctx, 4, payload)


def common_coin(ctx: RoundContext, step: int) -> int:
    return keyed_digest(ctx.seed.value, encode(ctx.round, step), ctx.hashlen)[-1] & 1


def binary_evaluate(node: NodeState, ctx: RoundContext, step: int, votes, blocks: Mapping[bytes, ProposalMessage]):
    """Count step-(s-1) bits.  Returns (outcome or None, next bit)."""
    totals = tally(node, ctx, votes, step - 1)
    zero_by_value = defaultdict(int)
    one_weight = 0
    for payload, w in totals.items():
        if not isinstance(payload, BinaryVote):
            continue
        if payload.b == 1:
            one_weight += w
        elif payload.value is not None:
            zero_by_value[payload.value] += w
    t_h = ctx.threshold
    decided = [(w, v) for v, w in zero_by_value.items() if w >= t_h]
    if decided:
        weight, value = max(decided, key=lambda x: (x[0], x[1]))
        msg = blocks.get(value)
        if msg is not None:
            return RoundOutcome(ctx.round, msg.block, msg.block.proposer, step, weight), 0
    if one_weight >= t_h:
        return RoundOutcome(ctx.round, ctx.empty_block(), None, step, one_weight), 1
    bit = common_coin(ctx, step)
    if bit == 0 and node.candidate is None:
        bit = 1
    return None, bit


def binary_step(node: NodeState, ctx: RoundContext, step: int, votes, blocks):
    """Evaluate step s >= 5.  Records a decision on the node and returns the
    outgoing vote (None when not selected)."""
    if step > ctx.params.max_steps:
        outcome = forced_outcome(ctx, step)
        node.decision = outcome
        node.decided_bit = 1
        return outcome
    if node.decision is None:
        outcome, bit = binary_evaluate(node, ctx, step, votes, blocks)
        if outcome is not None:
            node.decision = outcome
            node.decided_bit = bit
    else:
        bit = node.decided_bit
    value = None
    if bit == 0:
        value = hash_block(node.decision.block, ctx.hashlen) if node.decision else node.candidate[0]
    return node.vote(ctx, step, BinaryVote(node.grade, bit, value))


def forced_outcome(ctx: RoundContext, step: int) -> RoundOutcome:
    return RoundOutcome(ctx.round, ctx.empty_block(), None, step - 1, 0.0, forced=True)


# --------------------------------------------------------------------------
# Seeds
# --------------------------------------------------------------------------

def update_seed(prev_seed: Seed, outcome: RoundOutcome) -> Seed:
    hashlen = len(prev_seed.value) * 8
    block = outcome.block
    if block.proposer is None:
        return Seed(hash_parts(prev_seed.value, outcome.round, hashlen=hashlen), outcome.round)
    return Seed(hash_parts(block.signed_seed, hashlen=hashlen), outcome.round)


def genesis(rng_seed: int, hashlen: int = 256) -> Tuple[Block, Seed]:
    seed0 = Seed(hash_parts("genesis-seed", rng_seed, hashlen=hashlen), 0)
    block0 = Block(0, seed0.value, bytes(hashlen // 8), (), None)
    return block0, seed0


def replay_seeds(seed0: Seed, outcomes: Sequence[RoundOutcome]) -> List[Seed]:
    seeds = [seed0]
    for outcome in outcomes:
        seeds.append(update_seed(seeds[-1], outcome))
    return seeds
