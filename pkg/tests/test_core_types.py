from dataclasses import replace
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from repalgo.core_types import (
    Account,
    Behavior,
    BinaryVote,
    Block,
    BlockHashVote,
    ConfigError,
    EMPTY_VOTE,
    MalformedBlockError,
    ProtocolParams,
    Seed,
    Transaction,
    ValidatorPolicy,
    VoteMessage,
    empty_block,
    encode,
    finality_threshold,
    hash_block,
    is_empty,
)

SEED = Seed(bytes(32), 0)
PREV = bytes(range(32))


def make_block(amount=5, round_=1):
    tx = Transaction(0, 1, amount, False, round_, 0)
    return Block(round_, b"\x01" * 32, PREV, (tx,), 0)


def test_hash_block_deterministic():
    assert hash_block(make_block()) == hash_block(make_block())
    assert len(hash_block(make_block())) == 32


def test_empty_blocks_of_different_rounds_differ():
    assert hash_block(empty_block(1, SEED, PREV)) != hash_block(empty_block(2, SEED, PREV))


def test_changed_amount_changes_digest():
    assert hash_block(make_block(5)) != hash_block(make_block(6))


def test_hash_respects_hashlen():
    assert len(hash_block(make_block(), 512)) == 64
    assert len(hash_block(make_block(), 64)) == 8


def test_is_empty_canonical():
    assert is_empty(empty_block(3, SEED, PREV))


def test_is_empty_with_payment():
    assert not is_empty(make_block())


def test_is_empty_rejects_proposer_without_payments():
    with pytest.raises(MalformedBlockError):
        is_empty(Block(1, b"x", PREV, (), 4))
    with pytest.raises(MalformedBlockError):
        is_empty(Block(1, b"x", PREV, make_block().payments, None))


def test_block_equality_structural():
    assert make_block() == make_block()
    assert make_block() != make_block(7)


def test_account_invariants():
    with pytest.raises(ConfigError):
        Account(0, -1)
    with pytest.raises(ConfigError):
        Account(0, 5, illicit_rate=0.5)
    with pytest.raises(ConfigError):
        Account(0, 5, Behavior.ILLICIT_PROPOSER, illicit_rate=1.5)
    acc = Account(1, 3, Behavior.MALICIOUS_VALIDATOR, validator_policy=ValidatorPolicy(0.2, 0.3))
    assert not acc.honest


def test_policy_range():
    with pytest.raises(ConfigError) as err:
        ValidatorPolicy(-0.1, 1.2)
    assert len(err.value.errors) == 2


def test_transaction_invariants():
    with pytest.raises(ValueError):
        Transaction(0, 1, 0)
    with pytest.raises(ValueError):
        Transaction(2, 2, 1)


def test_params_defaults_and_errors():
    p = ProtocolParams()
    assert (p.hashlen, p.p_th, p.epsilon_rep, p.max_steps) == (256, 0.5, 0.01, 13)
    assert p.finality_fraction == Fraction(2, 3)
    with pytest.raises(ConfigError) as err:
        ProtocolParams(hashlen=32, tau_proposer=0.5, committee_votes=2, max_steps=3, p_th=1.0)
    assert len(err.value.errors) >= 5
    with pytest.raises(ConfigError):
        ProtocolParams(epsilon_rep=0.6, p_th=0.5)


@pytest.mark.parametrize("votes,expected", [(6, 5), (3, 3), (1, 1), (100, 67), (99, 67)])
def test_finality_threshold(votes, expected):
    assert finality_threshold(votes) == expected


def test_finality_threshold_rejects_zero():
    with pytest.raises(ValueError):
        finality_threshold(0)


def test_vote_message_step_rules():
    with pytest.raises(ValueError):
        VoteMessage(1, 1, 0, None, EMPTY_VOTE)
    with pytest.raises(ValueError):
        VoteMessage(1, 3, 0, None, BinaryVote(2, 0, b"h"))
    VoteMessage(1, 4, 0, None, BinaryVote(2, 0, b"h"))
    VoteMessage(1, 2, 0, None, BlockHashVote(b"h", 3))
    with pytest.raises(ValueError):
        BinaryVote(3, 0)


parts = st.recursive(
    st.one_of(st.none(), st.booleans(), st.integers(), st.binary(max_size=8), st.text(max_size=8)),
    lambda inner: st.lists(inner, max_size=4).map(tuple),
    max_leaves=12,
)


def tagged(x):
    if isinstance(x, tuple):
        return ("tuple", tuple(tagged(y) for y in x))
    return (type(x).__name__, x)


@given(st.lists(parts, max_size=4), st.lists(parts, max_size=4))
def test_encoding_is_injective(a, b):
    if encode(*a) == encode(*b):
        assert tagged(tuple(a)) == tagged(tuple(b))


@given(st.integers(min_value=1, max_value=10**6), st.integers(min_value=1, max_value=10**6))
def test_changed_amount_always_changes_hash(a, b):
    if a != b:
        assert hash_block(make_block(a)) != hash_block(make_block(b))


def test_hash_cache_is_not_part_of_equality():
    b = make_block()
    hash_block(b)
    assert b == make_block() and hash(b) == hash(make_block())
    assert replace(b, round=2) != b
