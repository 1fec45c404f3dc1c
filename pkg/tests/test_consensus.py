from dataclasses import replace

import pytest

from repalgo.consensus import (
    KeyReuseError,
    EphemeralKeyRing,
    ProposalMessage,
    RoundOutcome,
    binary_init,
    binary_step,
    choose_leader,
    common_coin,
    forced_outcome,
    genesis,
    graded_payload,
    replay_seeds,
    soft_vote_payload,
    step1_propose,
    step2_soft_vote,
    step3_graded,
    update_seed,
)
from repalgo.core_types import (
    EMPTY_VOTE,
    Behavior,
    BinaryVote,
    BlockHashVote,
    Transaction,
    encode,
    hash_parts,
    hash_block,
)
from repalgo.sortition import keyed_digest, sign

ILL = Behavior.ILLICIT_PROPOSER


def propose_all(w):
    out = {}
    for i, node in w.nodes.items():
        res = step1_propose(node, w.ctx)
        if res is not None:
            out[i] = res
    return out


def inbox(proposals):
    headers = [light for _, light in proposals.values()]
    blocks = {light.block_hash: full for full, light in proposals.values()}
    return headers, blocks


def test_key_ring_single_use():
    ring = EphemeralKeyRing(b"m" * 32)
    ring.take(3, 2)
    with pytest.raises(KeyReuseError):
        ring.take(3, 2)
    ring.take(4, 2)
    with pytest.raises(KeyReuseError):
        ring.take(3, 5)


def test_honest_proposer_filters_low_reputation_senders(world):
    w = world([5, 5, 5], scores={2: 0.1})
    pool = (Transaction(0, 1, 3, False, 1, 0), Transaction(2, 0, 4, True, 1, 1))
    node = w.nodes[0]
    node.pending_txs = pool
    full, light = step1_propose(node, w.ctx)
    assert [tx.nonce for tx in full.block.payments] == [0]
    assert light.block_hash == hash_block(full.block)
    assert light.head == full.block.header


def test_empty_pool_gives_proposer_block_with_no_payments(world):
    w = world([5, 5])
    full, _ = step1_propose(w.nodes[1], w.ctx)
    assert full.block.payments == () and full.block.proposer == 1


def test_illicit_proposer_includes_only_its_illicit_transactions(world):
    w = world([5, 5, 5], behaviors={2: ILL})
    pool = (Transaction(0, 1, 3, False, 1, 0), Transaction(2, 0, 4, True, 1, 1), Transaction(2, 1, 1, True, 1, 2))
    node = w.nodes[2]
    node.pending_txs = pool
    full, _ = step1_propose(node, w.ctx)
    assert full.block.payments and all(tx.illicit and tx.sender == 2 for tx in full.block.payments)


def test_low_threshold_can_skip_proposal(world):
    w = world([1] * 40, tau=1.0)
    assert 0 < len(propose_all(w)) < 40


def _ordered(w, proposals):
    return sorted(proposals, key=lambda i: proposals[i][1].credential.normalized)


def test_baseline_soft_vote_picks_min_credential(world):
    w = world([5, 5, 5], reputation=False)
    props = propose_all(w)
    headers, blocks = inbox(props)
    best = _ordered(w, props)[0]
    assert soft_vote_payload(w.nodes[0], w.ctx, headers, blocks) == BlockHashVote(props[best][1].block_hash, best)


def test_reputation_soft_vote_prefers_honest_alternative(world):
    w0 = world([5, 5, 5])
    order = _ordered(w0, propose_all(w0))
    bad, alt = order[0], order[1]
    w = world([5, 5, 5], behaviors={bad: ILL}, scores={bad: 0.1, alt: 0.9})
    props = propose_all(w)
    headers, blocks = inbox(props)
    honest = next(i for i in w.accounts if w.accounts[i].honest)
    vote = soft_vote_payload(w.nodes[honest], w.ctx, headers, blocks)
    assert vote.proposer != bad


def test_sole_suspicious_proposer_gets_empty_vote(world):
    w = world([5, 5], behaviors={1: ILL}, scores={1: 0.2})
    full, light = step1_propose(w.nodes[1], w.ctx)
    assert soft_vote_payload(w.nodes[0], w.ctx, [light], {light.block_hash: full}) == EMPTY_VOTE


def test_missing_or_forged_block_gets_empty_vote(world):
    w = world([5, 5])
    full, light = step1_propose(w.nodes[1], w.ctx)
    assert soft_vote_payload(w.nodes[0], w.ctx, [light], {}) == EMPTY_VOTE
    forged = ProposalMessage(full.block, sign(b"wrong", b"x"), full.credential)
    assert soft_vote_payload(w.nodes[0], w.ctx, [light], {light.block_hash: forged}) == EMPTY_VOTE


def test_leader_choice_ignores_forged_credentials(world):
    w = world([5, 5])
    props = propose_all(w)
    _, light = props[0]
    forged = replace(light, proposer=1, credential=replace(light.credential, owner=1))
    assert choose_leader(w.nodes[0], w.ctx, [forged]) is None


def test_step2_vote_is_signed_and_counted(world):
    w = world([5, 5])
    props = propose_all(w)
    headers, blocks = inbox(props)
    msg = step2_soft_vote(w.nodes[0], w.ctx, headers, blocks)
    assert w.ctx.verify_vote(msg) == 5
    with pytest.raises(KeyReuseError):
        step2_soft_vote(w.nodes[0], w.ctx, headers, blocks)


def test_tampered_vote_counts_zero(world):
    w = world([5, 5])
    good = w.vote(0, 2, EMPTY_VOTE)
    stolen = replace(good, voter=1)
    assert w.ctx.verify_vote(good) == 5
    assert w.ctx.verify_vote(stolen) == 0
    rewritten = replace(good, payload=H)
    assert w.ctx.verify_vote(rewritten) == 0


H = BlockHashVote(b"h" * 32, 0)


def test_graded_unanimous_and_split(world):
    w = world([3, 3, 3, 3])  # t_H = 9
    votes = [w.vote(i, 2, H) for i in range(4)]
    assert graded_payload(w.nodes[0], w.ctx, votes) == H
    other = BlockHashVote(b"g" * 32, 1)
    votes = [w.vote(0, 2, H), w.vote(1, 2, H), w.vote(2, 2, other), w.vote(3, 2, other)]
    assert graded_payload(w.nodes[0], w.ctx, votes) == EMPTY_VOTE


def test_graded_threshold_exact_vs_attenuated(world):
    # stakes 3,3,3,3 -> t_H = 9: three voters reach it exactly in raw votes
    votes = lambda w: [w.vote(i, 2, H) for i in range(3)]
    base = world([3, 3, 3, 3], reputation=False)
    assert base.ctx.threshold == 9
    assert graded_payload(base.nodes[3], base.ctx, votes(base)) == H
    aware = world([3, 3, 3, 3], scores={0: 0.9, 1: 0.9, 2: 0.9})
    assert graded_payload(aware.nodes[3], aware.ctx, votes(aware)) == EMPTY_VOTE


def test_duplicate_voter_counted_once(world):
    w = world([3, 3, 3, 3])
    votes = [w.vote(0, 2, H)] * 4 + [w.vote(1, 2, H)]
    assert graded_payload(w.nodes[0], w.ctx, votes) == EMPTY_VOTE


def test_step3_message(world):
    w = world([3, 3, 3, 3])
    msg = step3_graded(w.nodes[0], w.ctx, [w.vote(i, 2, H) for i in range(4)])
    assert msg.payload == H and msg.step == 3


def test_binary_init_cases(world):
    w = world([2, 2, 2, 2, 2, 2])  # total 12 -> t_H = 9, ceil(t_H/2) = 5
    other = BlockHashVote(b"g" * 32, 2)
    node = w.nodes[0]
    assert binary_init(node, w.ctx, [w.vote(i, 3, H) for i in range(5)]) == BinaryVote(2, 0, H.digest)
    assert node.candidate == (H.digest, 0)
    assert binary_init(node, w.ctx, [w.vote(i, 3, EMPTY_VOTE) for i in range(5)]) == BinaryVote(0, 1, None)
    mixed = [w.vote(0, 3, H), w.vote(1, 3, H), w.vote(2, 3, H), w.vote(3, 3, other)]
    assert binary_init(node, w.ctx, mixed) == BinaryVote(1, 1, H.digest)
    scattered = [w.vote(0, 3, H), w.vote(1, 3, other), w.vote(2, 3, EMPTY_VOTE)]
    assert binary_init(node, w.ctx, scattered) == BinaryVote(0, 1, None)
    assert node.candidate is None


def _proposal(w, i=0):
    full, light = step1_propose(w.nodes[i], w.ctx)
    return full, {light.block_hash: full}


def test_binary_step_finalizes_block_on_zero_supermajority(world):
    w = world([3, 3, 3, 3])
    full, blocks = _proposal(w, 0)
    h = hash_block(full.block)
    node = w.nodes[1]
    node.candidate, node.grade = (h, 0), 2
    votes = [w.vote(i, 4, BinaryVote(2, 0, h)) for i in range(3)]
    binary_step(node, w.ctx, 5, votes, blocks)
    assert node.decision.block == full.block and node.decision.leader == 0
    assert node.decision.certifying_votes >= w.ctx.threshold
    assert node.decided_bit == 0


def test_binary_step_finalizes_empty_on_one_supermajority(world):
    w = world([3, 3, 3, 3])
    node = w.nodes[1]
    votes = [w.vote(i, 4, BinaryVote(0, 1, None)) for i in range(3)]
    binary_step(node, w.ctx, 5, votes, {})
    assert node.decision.block.proposer is None and node.decision.leader is None
    assert node.decision.block == w.ctx.empty_block()


def test_binary_step_uses_common_coin(world):
    w = world([3, 3, 3, 3])
    full, blocks = _proposal(w, 0)
    h = hash_block(full.block)
    votes = [w.vote(0, 4, BinaryVote(1, 0, h)), w.vote(1, 4, BinaryVote(0, 1, None))]
    bits = []
    for i in (2, 3):
        node = w.nodes[i]
        node.candidate, node.grade = (h, 0), 1
        msg = binary_step(node, w.ctx, 6, votes, blocks)
        assert node.decision is None
        bits.append(msg.payload.b)
    coin = keyed_digest(w.ctx.seed.value, encode(w.ctx.round, 6))[-1] & 1
    assert coin == common_coin(w.ctx, 6)
    assert bits == [coin, coin]


def test_forced_outcome_after_max_steps(world):
    w = world([3, 3])
    node = w.nodes[0]
    out = binary_step(node, w.ctx, w.params.max_steps + 1, [], {})
    assert out.forced and out.block.proposer is None
    assert out == forced_outcome(w.ctx, w.params.max_steps + 1)


def test_seed_update_examples(world):
    w = world([3, 3])
    full, _ = _proposal(w, 0)
    empty = RoundOutcome(1, w.ctx.empty_block(), None, 5, 9)
    s_empty = update_seed(w.seed, empty)
    assert s_empty.value == hash_parts(w.seed.value, 1)
    full_out = RoundOutcome(1, full.block, 0, 5, 9)
    assert update_seed(w.seed, full_out).value == hash_parts(full.block.signed_seed)
    assert full.block.signed_seed == sign(w.directory[0], w.seed.value, 1)
    s2 = update_seed(s_empty, RoundOutcome(2, w.ctx.empty_block(), None, 5, 9))
    assert s2.value != s_empty.value


def test_replay_seeds_reproduces_chain(world):
    block0, seed0 = genesis(3)
    assert block0.round == 0 and len(seed0.value) == 32
    w = world([3, 3])
    outcomes = [RoundOutcome(r, w.ctx.empty_block(), None, 5, 9) for r in (1, 2, 3)]
    seeds = replay_seeds(seed0, outcomes)
    assert len(seeds) == 4 and len({s.value for s in seeds}) == 4
