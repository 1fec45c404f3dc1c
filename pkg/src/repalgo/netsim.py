"""Deterministic discrete-event gossip simulation driving consensus rounds."""

from __future__ import annotations

import hashlib
import heapq
import itertools
import logging
import random
from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Dict, List, Mapping, Optional, Tuple

from .consensus import (
    AgreementViolation,
    EphemeralKeyRing,
    NodeState,
    ProposalHeader,
    ProposalMessage,
    RoundContext,
    RoundOutcome,
    binary_evaluate,
    binary_init,
    binary_step,
    genesis,
    graded_payload,
    soft_vote_payload,
    step1_propose,
    step2_soft_vote,
    step3_graded,
    step4_binary_init,
    update_seed,
)
from .core_types import (
    EMPTY_VOTE,
    Account,
    Behavior,
    BinaryVote,
    BlockHashVote,
    ConfigError,
    ProtocolParams,
    Transaction,
    ValidatorPolicy,
    VoteMessage,
    encode,
    hash_block,
)
from .metrics import RoundRecord
from .reputation import (
    ReputationList,
    attenuation_report,
    compensate,
    expected_attenuation,
    mean_defined,
    score_accounts,
)
from .sortition import ephemeral_key, master_key, validator_credential

log = logging.getLogger(__name__)

REPUTATION_MODES = ("oracle", "sliding_window", "per_node_override")
KIND_ORDER = {"header": 0, "block": 1, "vote": 2}


# --------------------------------------------------------------------------
# Configuration
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class NetworkConfig:
    delay_min: int = 1
    delay_max: int = 1
    drop_rate: float = 0.0
    step_ticks: int = 2  # per-step timeout budget


@dataclass(frozen=True)
class ReputationConfig:
    mode: str = "oracle"
    scores: Mapping[int, float] = field(default_factory=dict)  # oracle scores; missing -> 1.0
    overrides: Mapping[int, Mapping[int, float]] = field(default_factory=dict)  # node -> account -> score
    p_th_overrides: Mapping[int, float] = field(default_factory=dict)  # node -> p_th
    window_rounds: int = 10


@dataclass(frozen=True)
class TrafficConfig:
    honest_tx_per_round: int = 1
    illicit_tx_per_round: int = 2
    tx_ttl: int = 20
    max_amount: int = 10


@dataclass(frozen=True)
class ScenarioConfig:
    accounts: Tuple[Account, ...]
    params: ProtocolParams = field(default_factory=ProtocolParams)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    reputation: ReputationConfig = field(default_factory=ReputationConfig)
    traffic: TrafficConfig = field(default_factory=TrafficConfig)
    epoch_rounds: int = 10
    rounds: int = 100
    rng_seed: int = 0

    @property
    def total_stake(self) -> int:
        return sum(a.stake for a in self.accounts)

    @property
    def honest_stake_fraction(self) -> float:
        total = self.total_stake
        return sum(a.stake for a in self.accounts if a.honest) / total if total else 0.0

    def violations(self) -> List[str]:
        errors = []
        ids = [a.id for a in self.accounts]
        if not ids:
            errors.append("accounts: at least one account is required")
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        if dupes:
            errors.append(f"accounts: duplicate account ids {dupes}")
        if self.accounts and self.total_stake <= 0:
            errors.append("accounts: total stake must be positive")
        if len(ids) < 2:
            errors.append("accounts: at least two accounts are needed for transfers")
        net = self.network
        if not 0 <= net.drop_rate < 1:
            errors.append(f"network.drop_rate must be in [0, 1), got {net.drop_rate}")
        if net.delay_min < 0 or net.delay_max < net.delay_min:
            errors.append(f"network delays must satisfy 0 <= delay_min <= delay_max, got {net.delay_min}..{net.delay_max}")
        if net.step_ticks < 1:
            errors.append(f"network.step_ticks must be >= 1, got {net.step_ticks}")
        rep = self.reputation
        if rep.mode not in REPUTATION_MODES:
            errors.append(f"reputation.mode must be one of {list(REPUTATION_MODES)}, got {rep.mode!r}")
        known = set(ids)
        for acc, score in rep.scores.items():
            if acc not in known:
                errors.append(f"reputation.scores: unknown account {acc}")
            if not 0 <= score <= 1:
                errors.append(f"reputation.scores[{acc}] must be in [0, 1], got {score}")
        for node, table in rep.overrides.items():
            if node not in known:
                errors.append(f"reputation.overrides: unknown node {node}")
            for acc, score in table.items():
                if not 0 <= score <= 1:
                    errors.append(f"reputation.overrides[{node}][{acc}] must be in [0, 1], got {score}")
        for node, p_th in rep.p_th_overrides.items():
            if not self.params.epsilon_rep <= p_th < 1:
                errors.append(f"reputation.p_th_overrides[{node}] must be in [epsilon_rep, 1), got {p_th}")
        if rep.window_rounds < 1:
            errors.append(f"reputation.window_rounds must be >= 1, got {rep.window_rounds}")
        if self.epoch_rounds < 1:
            errors.append(f"epoch_rounds must be >= 1, got {self.epoch_rounds}")
        if self.rounds < 1:
            errors.append(f"rounds must be >= 1, got {self.rounds}")
        if not 0 <= self.rng_seed < 2**64:
            errors.append(f"rng_seed must be a 64-bit unsigned integer, got {self.rng_seed}")
        tr = self.traffic
        for name in ("honest_tx_per_round", "illicit_tx_per_round"):
            if getattr(tr, name) < 0:
                errors.append(f"traffic.{name} must be >= 0")
        if tr.tx_ttl < 1:
            errors.append("traffic.tx_ttl must be >= 1")
        if tr.max_amount < 1:
            errors.append("traffic.max_amount must be >= 1")
        return errors

    def validate(self) -> "ScenarioConfig":
        errors = self.violations()
        if errors:
            raise ConfigError(errors)
        return self


# --------------------------------------------------------------------------
# Event queue
# --------------------------------------------------------------------------

class EventQueue:
    """Messages ordered by (delivery tick, sender, kind); FIFO within ties."""

    def __init__(self):
        self._heap = []
        self._seq = itertools.count()

    def __len__(self):
        return len(self._heap)

    def push(self, send_tick: int, deliver_tick: int, sender: int, kind: str, recipient: int, message) -> None:
        if deliver_tick < send_tick:
            raise ValueError("delivery cannot precede sending")
        heapq.heappush(self._heap, (deliver_tick, sender, KIND_ORDER[kind], next(self._seq), recipient, kind, message))

    def pop_until(self, tick: int):
        out = []
        heap = self._heap
        while heap and heap[0][0] <= tick:
            deliver, sender, _, _, recipient, kind, message = heapq.heappop(heap)
            out.append((deliver, sender, kind, recipient, message))
        return out

    def clear(self) -> None:
        self._heap.clear()


def _stream(rng_seed: int, purpose: str) -> random.Random:
    digest = hashlib.sha256(encode("rng-stream", rng_seed, purpose)).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


# --------------------------------------------------------------------------
# Adversary behaviour
# --------------------------------------------------------------------------

def _malicious_proposal(accounts, headers, blocks) -> Optional[ProposalHeader]:
    best = None
    for hd in headers:
        acc = accounts.get(hd.proposer)
        if acc is None or acc.honest or hd.block_hash not in blocks:
            continue
        if best is None or (hd.credential.normalized, hd.proposer) < (best.credential.normalized, best.proposer):
            best = hd
    return best


def adversary_act(node: NodeState, ctx: RoundContext, step: int, inbox, rng: random.Random) -> Optional[VoteMessage]:
    """Vote for a non-honest node selected at ``step``.

    With probability p_empty the node votes for the empty block; otherwise,
    with probability p_support_malicious, for the best malicious proposal when
    one exists; otherwise it follows the protocol without reputation lists.
    """
    policy = node.account.validator_policy or ValidatorPolicy()
    cred_key = node.credential(ctx, step)
    selected = ctx.votes_for(cred_key[0]) > 0
    headers, blocks = inbox.headers, inbox.blocks
    prev_votes = inbox.votes.get(step - 1, ())
    if step == 4:
        honest_payload = binary_init(node, ctx, prev_votes)  # keeps node.candidate current
    if not selected:
        return None
    u_empty, u_support = rng.random(), rng.random()
    target = _malicious_proposal(ctx.accounts, headers, blocks)
    if u_empty < policy.p_empty:
        payload = EMPTY_VOTE if step <= 3 else BinaryVote(0, 1, None)
    elif u_support < policy.p_support_malicious and target is not None:
        if step <= 3:
            payload = BlockHashVote(target.block_hash, target.proposer)
        else:
            payload = BinaryVote(2, 0, target.block_hash)
    elif step == 2:
        payload = soft_vote_payload(node, ctx, headers, blocks)
    elif step == 3:
        payload = graded_payload(node, ctx, prev_votes)
    elif step == 4:
        payload = honest_payload
    else:
        # follow the binary protocol on our own tally, without deciding
        if node.decision is not None:
            bit = node.decided_bit
        else:
            _, bit = binary_evaluate(node, ctx, step, prev_votes, blocks)
        value = node.candidate[0] if (bit == 0 and node.candidate) else None
        payload = BinaryVote(node.grade, bit if value is not None or bit == 1 else 1, value)
    return node.vote(ctx, step, payload, cred_key)


# --------------------------------------------------------------------------
# Simulation
# --------------------------------------------------------------------------

@dataclass
class Inbox:
    headers: List[ProposalHeader] = field(default_factory=list)
    blocks: Dict[bytes, ProposalMessage] = field(default_factory=dict)
    votes: Dict[int, List[VoteMessage]] = field(default_factory=lambda: defaultdict(list))


@dataclass
class RoundTrace:
    round: int
    proposals: List[Tuple[int, float, bool]]  # (proposer, Θ, ground-truth honest)
    raw_leader: Optional[int]
    outcome: RoundOutcome
    decisions: Dict[int, Tuple[bytes, int]]  # honest node -> (block hash, step)
    message_counts: Dict[str, int]
    committee_target: float
    reports: list


class Simulation:
    def __init__(self, config: ScenarioConfig):
        self.config = config.validate()
        self.params = config.params
        self.accounts: Dict[int, Account] = {a.id: a for a in sorted(config.accounts, key=lambda a: a.id)}
        self.ids = list(self.accounts)
        self._others = {i: [j for j in self.ids if j != i] for i in self.ids}
        self.net_rng = _stream(config.rng_seed, "network")
        self.adv_rng = _stream(config.rng_seed, "adversary")
        self.tx_rng = _stream(config.rng_seed, "traffic")
        secret = config.rng_seed.to_bytes(8, "big")
        self.directory = {i: master_key(i, secret) for i in self.ids}
        block0, seed0 = genesis(config.rng_seed, self.params.hashlen)
        self.seed0 = seed0
        self.seed = seed0
        self.prev_hash = hash_block(block0, self.params.hashlen)
        self.nodes: Dict[int, NodeState] = {}
        for i in self.ids:
            self.nodes[i] = NodeState(self.accounts[i], self._oracle_list(i), self.params,
                                      EphemeralKeyRing(self.directory[i]), chain=[(block0, seed0)])
        self.committee_target = float(self.params.committee_votes)
        self.pending: Dict[int, Transaction] = {}
        self.history: Dict[int, List[Transaction]] = defaultdict(list)
        self._nonce = itertools.count()
        self.queue = EventQueue()
        self.tick = 0
        self.round = 0
        self.records: List[RoundRecord] = []
        self.traces: List[RoundTrace] = []
        self.outcomes: List[RoundOutcome] = []
        self.illicit_reputation: List[float] = []

    # -- reputation -------------------------------------------------------

    def _p_th(self, node_id: int) -> float:
        return self.config.reputation.p_th_overrides.get(node_id, self.params.p_th)

    def _oracle_list(self, node_id: int, epoch: int = 0) -> ReputationList:
        rep = self.config.reputation
        scores = {a: rep.scores.get(a, 1.0) for a in self.ids}
        if rep.mode == "per_node_override":
            scores.update(rep.overrides.get(node_id, {}))
        return ReputationList(node_id, scores, p_th=self._p_th(node_id), epsilon=self.params.epsilon_rep, epoch=epoch)

    def _refresh_reputation(self, round_: int) -> None:
        rep = self.config.reputation
        if rep.mode == "sliding_window" and (round_ - 1) % self.config.epoch_rounds == 0:
            base = score_accounts({a: self.history.get(a, ()) for a in self.ids}, rep.window_rounds, round_,
                                  p_th=self.params.p_th, epsilon=self.params.epsilon_rep)
            for i, node in self.nodes.items():
                node.reps = base.replace(owner=i, p_th=self._p_th(i))
        illicit = [a for a, acc in self.accounts.items() if acc.behavior is Behavior.ILLICIT_PROPOSER]
        honest_nodes = [n for n in self.nodes.values() if n.account.honest]
        if illicit and honest_nodes:
            vals = [n.reps.score(a) for n in honest_nodes for a in illicit]
            self.illicit_reputation.append(sum(vals) / len(vals))

    # -- traffic ----------------------------------------------------------

    def _generate_traffic(self, round_: int) -> None:
        tr = self.config.traffic
        rng = self.tx_rng
        for i, acc in self.accounts.items():
            count = tr.illicit_tx_per_round if acc.behavior is Behavior.ILLICIT_PROPOSER else tr.honest_tx_per_round
            for _ in range(count):
                receiver = rng.choice(self._others[i])
                amount = rng.randint(1, tr.max_amount)
                illicit = rng.random() < acc.illicit_rate
                tx = Transaction(i, receiver, amount, illicit, round_, next(self._nonce))
                self.pending[tx.nonce] = tx
                self.history[i].append(tx)
        horizon = round_ - tr.tx_ttl
        for nonce in [n for n, tx in self.pending.items() if tx.created_round < horizon]:
            del self.pending[nonce]

    # -- messaging --------------------------------------------------------

    def _broadcast(self, send_tick: int, sender: int, kind: str, message, counts) -> None:
        net = self.config.network
        counts[kind] += 1
        for recipient in self.ids:
            if recipient == sender:
                self.queue.push(send_tick, send_tick, sender, kind, recipient, message)
                continue
            if net.drop_rate > 0 and self.net_rng.random() < net.drop_rate:
                continue
            delay = net.delay_min if net.delay_min == net.delay_max else self.net_rng.randint(net.delay_min, net.delay_max)
            self.queue.push(send_tick, send_tick + delay, sender, kind, recipient, message)

    def _deliver(self, tick: int, inboxes: Dict[int, Inbox]) -> None:
        for _, _, kind, recipient, message in self.queue.pop_until(tick):
            box = inboxes[recipient]
            if kind == "header":
                box.headers.append(message)
            elif kind == "block":
                box.blocks.setdefault(hash_block(message.block, self.params.hashlen), message)
            else:
                box.votes[message.step].append(message)

    # -- one round --------------------------------------------------------

    def run_round(self) -> RoundRecord:
        self.round += 1
        r = self.round
        params = self.params
        self._generate_traffic(r)
        self._refresh_reputation(r)
        ctx = RoundContext(r, self.seed, self.prev_hash, self.accounts, params, self.directory,
                           committee_target=self.committee_target)
        pool = tuple(self.pending[n] for n in sorted(self.pending))
        for node in self.nodes.values():
            node.reset_round()
            node.pending_txs = pool
        inboxes = {i: Inbox() for i in self.ids}
        counts = defaultdict(int)
        ticks = self.config.network.step_ticks
        t0 = self.tick

        # step 1: proposals; the lightweight header leaves one tick ahead of the block
        proposals = []
        for i, node in self.nodes.items():
            out = step1_propose(node, ctx)
            if out is None:
                continue
            full, light = out
            proposals.append((i, float(light.credential.normalized), node.account.honest))
            self._broadcast(t0, i, "header", light, counts)
            self._broadcast(t0 + 1, i, "block", full, counts)
        raw_leader = min(proposals, key=lambda p: (p[1], p[0]))[0] if proposals else None

        step2_votes: List[VoteMessage] = []
        reports = []
        step = 2
        deadline = t0 + 1 + ticks
        honest_ids = [i for i in self.ids if self.accounts[i].honest]
        while True:
            self._deliver(deadline, inboxes)
            if step == 3:
                reports = self._evaluator_reports(ctx, inboxes, step2_votes, honest_ids)
            for i, node in self.nodes.items():
                box = inboxes[i]
                prev = box.votes.get(step - 1, ())
                if node.account.honest:
                    if step == 2:
                        msg = step2_soft_vote(node, ctx, box.headers, box.blocks)
                    elif step == 3:
                        msg = step3_graded(node, ctx, prev)
                    elif step == 4:
                        msg = step4_binary_init(node, ctx, prev)
                    else:
                        msg = binary_step(node, ctx, step, prev, box.blocks)
                else:
                    msg = adversary_act(node, ctx, step, box, self.adv_rng) if step <= params.max_steps else None
                if isinstance(msg, VoteMessage):
                    if step == 2:
                        step2_votes.append(msg)
                    self._broadcast(deadline, i, "vote", msg, counts)
            if step >= 5 and all(self.nodes[i].decision is not None for i in honest_ids):
                break
            if step > params.max_steps:
                break
            step += 1
            deadline += ticks
        self.queue.clear()
        self.tick = deadline + ticks

        outcome, decisions = self._agree(ctx, honest_ids)
        return self._finish_round(ctx, outcome, raw_leader, proposals, counts, step2_votes, reports, decisions)

    def _evaluator_reports(self, ctx, inboxes, step2_votes, honest_ids):
        """Attenuation reports of honest step-3 validators over received step-2 votes."""
        evaluators = []
        for i in honest_ids:
            cred = validator_cred_peek(self.nodes[i], ctx, 3)
            if ctx.votes_for(cred) > 0:
                evaluators.append(i)
        if not evaluators:
            evaluators = honest_ids
        reports = []
        for i in evaluators:
            node = self.nodes[i]
            votes = {}
            lams = {}
            for msg in inboxes[i].votes.get(2, ()):
                if msg.voter in votes:
                    continue
                kappa = ctx.verify_vote(msg)
                if kappa > 0:
                    votes[msg.voter] = kappa
                    lams[msg.voter] = msg.credential.value
            reps = node.reps if node.weighs_reputation else _unit_reps(node)
            reports.append(attenuation_report(votes, reps, lams, evaluator=i))
        return reports

    def _agree(self, ctx, honest_ids):
        decisions = {i: self.nodes[i].decision for i in honest_ids}
        hashes = {i: hash_block(d.block, self.params.hashlen) for i, d in decisions.items()}
        if len(set(hashes.values())) > 1:
            trace = {i: (h.hex()[:16], decisions[i].steps_used, decisions[i].forced) for i, h in hashes.items()}
            raise AgreementViolation(f"round {ctx.round}: honest nodes finalized different blocks", trace)
        first = decisions[honest_ids[0]]
        steps = max(d.steps_used for d in decisions.values())
        summary = {i: (hashes[i], decisions[i].steps_used) for i in honest_ids}
        return replace(first, steps_used=steps, forced=any(d.forced for d in decisions.values())), summary

    def _finish_round(self, ctx, outcome, raw_leader, proposals, counts, step2_votes, reports, decisions) -> RoundRecord:
        params = self.params
        block = outcome.block
        new_seed = update_seed(self.seed, outcome)
        new_hash = hash_block(block, params.hashlen)
        for node in self.nodes.values():
            node.chain.append((block, new_seed))
        for tx in block.payments:
            self.pending.pop(tx.nonce, None)
        self.seed, self.prev_hash = new_seed, new_hash
        self.outcomes.append(outcome)

        total_step2 = float(sum(ctx.verify_vote(m) for m in step2_votes))
        effective = sum(rep.effective for rep in reports) / len(reports) if reports else 0.0
        e_loss = expected_attenuation(reports, [rep.evaluator for rep in reports]) if reports else 0.0
        e_loss = max(0.0, e_loss)
        ratio = mean_defined(rep.split.ratio for rep in reports)
        l_hat = mean_defined(rep.split.l_hat for rep in reports)
        if params.compensation_enabled:
            self.committee_target = compensate(float(params.committee_votes), e_loss)
        next_target = self.committee_target

        leader = outcome.leader
        record = RoundRecord(
            round=ctx.round,
            leader_id=leader,
            leader_honest=None if leader is None else self.accounts[leader].honest,
            block_empty=block.proposer is None,
            illicit_tx_count=sum(1 for tx in block.payments if tx.illicit),
            steps_used=outcome.steps_used,
            total_votes_step2=total_step2,
            effective_votes_step2=effective,
            attenuation=e_loss,
            ratio_hm=ratio,
            l_hat=l_hat,
            compensated_committee=next_target,
        )
        self.records.append(record)
        self.traces.append(RoundTrace(ctx.round, proposals, raw_leader, outcome, decisions,
                                      dict(counts), ctx.committee_target, reports))
        return record

    def run(self, rounds: Optional[int] = None) -> List[RoundRecord]:
        for _ in range(self.config.rounds if rounds is None else rounds):
            self.run_round()
        return self.records


def validator_cred_peek(node: NodeState, ctx: RoundContext, step: int):
    """The node's step credential without consuming its ephemeral key."""
    key = ephemeral_key(node.keys.master, ctx.round, step)
    return validator_credential(node.account, ctx.round, step, ctx.seed, key, ctx.hashlen)


def _unit_reps(node: NodeState) -> ReputationList:
    return ReputationList(node.id, {}, p_th=node.reps.p_th, epsilon=node.reps.epsilon)


def run_simulation(config: ScenarioConfig) -> List[RoundRecord]:
    return Simulation(config).run()
