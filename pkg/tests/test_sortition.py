import math
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from repalgo.core_types import Account, Seed, encode
from repalgo.sortition import (
    assign_votes,
    best_subuser_credential,
    binomial_vote_pmf,
    ephemeral_key,
    keyed_digest,
    master_key,
    normalize,
    proposer_credential,
    proposer_threshold,
    sign,
    validator_credential,
    vote_ranges,
)

SEED = Seed(b"\x07" * 32, 4)
KEY = ephemeral_key(master_key(1, b"s"), 5, 1)


def test_keyed_digest_determinism_and_separation():
    assert keyed_digest(b"k", b"m") == keyed_digest(b"k", b"m")
    assert keyed_digest(b"k", b"m1") != keyed_digest(b"k", b"m2")
    assert keyed_digest(b"k1", b"m") != keyed_digest(b"k2", b"m")
    # the key is length-prefixed, so shifting bytes between key and message changes the digest
    assert keyed_digest(b"ab", b"c") != keyed_digest(b"a", b"bc")
    assert len(keyed_digest(b"k", b"m", 128)) == 16


def test_normalize_examples():
    assert normalize(bytes(32)) == 0
    assert normalize(b"\xff" * 32) == Fraction(2**256 - 1, 2**256)
    assert normalize(b"\xff" * 32) < 1
    assert normalize(b"\x80" + bytes(31)) == Fraction(1, 2)


@given(st.binary(min_size=8, max_size=8), st.binary(min_size=8, max_size=8))
def test_normalize_monotone(a, b):
    ia, ib = int.from_bytes(a, "big"), int.from_bytes(b, "big")
    assert (normalize(a) < normalize(b)) == (ia < ib)
    assert 0 <= normalize(a) < 1


def test_zero_stake_cannot_propose():
    assert proposer_credential(Account(1, 0), 5, SEED, KEY, 10, 3.0) is None


def test_saturated_threshold_always_selects():
    for i in range(1, 6):
        acc = Account(i, 2)
        key = ephemeral_key(master_key(i, b"s"), 5, 1)
        assert proposer_credential(acc, 5, SEED, key, total_stake=10, tau_proposer=10.0) is not None


def test_threshold_caps_at_one():
    assert proposer_threshold(5, 10, 3.0) == 1.0
    assert proposer_threshold(1, 30, 3.0) == pytest.approx(0.1)


@given(st.integers(min_value=1, max_value=8), st.integers(min_value=0, max_value=10**6))
def test_best_subuser_is_bruteforce_argmin(stake, r):
    acc = Account(1, stake)
    cred = best_subuser_credential(acc, KEY, r, SEED)
    brute = [keyed_digest(KEY, encode(r, 1, k, SEED.value)) for k in range(1, stake + 1)]
    best_k = min(range(1, stake + 1), key=lambda k: int.from_bytes(brute[k - 1], "big"))
    assert cred.subuser == best_k
    assert cred.normalized == min(normalize(d) for d in brute)


def test_validator_credential_examples():
    a, b = Account(1, 5), Account(2, 5)
    c1 = validator_credential(a, 5, 2, SEED, KEY)
    assert c1 == validator_credential(a, 5, 2, SEED, KEY)
    assert c1.digest != validator_credential(a, 5, 3, SEED, KEY).digest
    key_b = ephemeral_key(master_key(2, b"s"), 5, 2)
    assert c1.digest != validator_credential(b, 5, 2, SEED, key_b).digest
    with pytest.raises(ValueError):
        validator_credential(a, 5, 1, SEED, KEY)


def test_pmf_examples():
    assert binomial_vote_pmf(1, 2) == [0.5, 0.5]
    assert binomial_vote_pmf(2, 4) == pytest.approx([0.25, 0.5, 0.25])
    assert binomial_vote_pmf(0, 5) == [1.0]
    with pytest.raises(ValueError):
        binomial_vote_pmf(0, 0)
    with pytest.raises(ValueError):
        binomial_vote_pmf(6, 5)


def test_pmf_committee_target():
    pmf = binomial_vote_pmf(10, 100, committee=20)
    assert sum(v * p for v, p in enumerate(pmf)) == pytest.approx(10 * 0.2)
    assert binomial_vote_pmf(3, 5, committee=50) == [0.0, 0.0, 0.0, 1.0]


def test_pmf_log_space_matches_direct():
    big = binomial_vote_pmf(150, 600)
    p = 150 / 600
    for v in (0, 10, 37, 80):
        assert big[v] == pytest.approx(math.comb(150, v) * p**v * (1 - p) ** (150 - v), rel=1e-9, abs=1e-300)


@given(st.integers(min_value=1, max_value=300), st.data())
def test_pmf_sums_to_one(total, data):
    stake = data.draw(st.integers(min_value=0, max_value=total))
    pmf = binomial_vote_pmf(stake, total)
    assert len(pmf) == stake + 1
    assert abs(sum(pmf) - 1) < 1e-9


def test_vote_ranges_example():
    table = vote_ranges([0.25, 0.5, 0.25])
    assert [table.range_for(v) for v in range(3)] == [(0.0, 0.25), (0.25, 0.75), (0.75, 1.0)]
    assert vote_ranges([1.0]).range_for(0) == (0.0, 1.0)
    assert assign_votes(0.1, table) == 0
    assert assign_votes(0.3, table) == 1
    assert assign_votes(0.0, table) == 0
    assert assign_votes(0.75, table) == 2
    with pytest.raises(ValueError):
        assign_votes(1.0, table)


def test_zero_width_ranges_are_skipped():
    table = vote_ranges([0.0, 0.0, 1.0])
    assert assign_votes(0.0, table) == 2
    table = vote_ranges([0.5, 0.5, 0.0])
    assert assign_votes(Fraction(2**256 - 1, 2**256), table) == 1


@given(st.integers(min_value=1, max_value=60), st.data())
def test_ranges_partition_and_lookup(total, data):
    stake = data.draw(st.integers(min_value=0, max_value=total))
    pmf = binomial_vote_pmf(stake, total)
    table = vote_ranges(pmf)
    b = table.boundaries
    assert b[0] == 0.0 and b[-1] == 1.0
    assert all(x <= y for x, y in zip(b, b[1:]))
    for v in range(len(pmf)):
        lo, hi = table.range_for(v)
        assert abs((hi - lo) - pmf[v]) < 1e-12
    x = data.draw(st.floats(min_value=0, max_value=1, exclude_max=True))
    v = assign_votes(x, table)
    lo, hi = table.range_for(v)
    assert lo <= x < hi


@given(st.fractions(min_value=0, max_value=1), st.fractions(min_value=0, max_value=1))
def test_assign_votes_monotone_and_exact(a, b):
    if a >= 1 or b >= 1:
        return
    table = vote_ranges(binomial_vote_pmf(7, 20))
    if a <= b:
        assert assign_votes(a, table) <= assign_votes(b, table)
    # exact Fractions and their float views agree away from the cut points
    v = assign_votes(a, table)
    lo, hi = table.range_for(v)
    assert lo <= a < hi


def test_sign_depends_on_all_parts():
    assert sign(b"k", 1, 2) != sign(b"k", 2, 1)
    assert sign(b"k", (1, 2)) != sign(b"k", 1, 2)
