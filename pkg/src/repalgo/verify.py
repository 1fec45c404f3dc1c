"""Closed-form oracle checks run by ``repalgo verify``.

Each check returns a CheckResult instead of raising, so the CLI can report
every check and exit nonzero if any failed.
"""

from __future__ import annotations

import math
import random
import time
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Callable, List, Sequence

from .core_types import Account, ProtocolParams, Seed, hash_parts
from .metrics import records_to_csv
from .netsim import ReputationConfig, ScenarioConfig, Simulation
from .reputation import ReputationList, compensation_factor, prefers, split_report
from .sortition import (
    assign_votes,
    binomial_vote_pmf,
    ephemeral_key,
    master_key,
    validator_credential,
    vote_ranges,
)


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str = ""

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


# -- leader preference -----------------------------------------------------

GRID = tuple(Fraction(k, 20) for k in range(1, 20))  # 0.05 .. 0.95


def preference_grid(grid: Sequence[Fraction] = GRID) -> CheckResult:
    """prefers() picks the honest candidate iff p_i > C * p_m, over the whole grid.

    Grid points are rationals over a common denominator.  prefers() only
    compares cross products, so it is fed the integer numerators; the oracle
    side compares against the exact compensation factor.
    """
    start = time.perf_counter()
    denom = math.lcm(*(g.denominator for g in grid))
    ints = [int(g * denom) for g in grid]
    mismatches = checked = 0
    for theta_i, ti in zip(grid, ints):
        for theta_m, tm in zip(grid, ints):
            if not theta_m < theta_i:
                continue
            c = compensation_factor(theta_i, theta_i - theta_m)
            for pi in ints:
                for pm in ints:
                    expect = pi * c.denominator > c.numerator * pm
                    got = prefers(ti, tm, pi, pm, a_id=0, b_id=1) == "a"
                    checked += 1
                    if got != expect:
                        mismatches += 1
    elapsed = time.perf_counter() - start
    return CheckResult("preference_grid", mismatches == 0,
                       f"{checked} cases, {mismatches} mismatches, {elapsed:.3f}s")


# -- honest/malicious split --------------------------------------------------

def random_committee(rng: random.Random, p_th: float = 0.5):
    """Committee with honest kappa total exactly twice the malicious total."""
    n_m = rng.randint(1, 6)
    k_m = [rng.randint(1, 10) for _ in range(n_m)]
    target = 2 * sum(k_m)
    k_h = []
    while sum(k_h) < target:
        k_h.append(min(rng.randint(1, 10), target - sum(k_h)))
    votes, scores = [], {}
    for n, kappa in enumerate(k_h):
        votes.append((n, kappa))
        scores[n] = rng.uniform(p_th + 1e-6, 1.0)
    for n, kappa in enumerate(k_m, start=len(k_h)):
        votes.append((n, kappa))
        scores[n] = rng.uniform(0.01, p_th)
    return votes, ReputationList(-1, scores, p_th=p_th, epsilon=0.01)


def split_identity(instances: int = 1000, seed: int = 0, tol: float = 1e-9) -> CheckResult:
    """V_H / V_M = 2 + L_hat and L_H <= 2 L_M when honest kappa is twice malicious kappa."""
    rng = random.Random(seed)
    worst = 0.0
    bad_loss = 0
    for _ in range(instances):
        votes, reps = random_committee(rng)
        rep = split_report(votes, reps)
        worst = max(worst, abs(rep.ratio - (2 + rep.l_hat)))
        if rep.l_h > 2 * rep.l_m + tol:
            bad_loss += 1
    ok = worst <= tol and bad_loss == 0
    return CheckResult("split_identity", ok, f"{instances} committees, max |ratio-(2+l_hat)|={worst:.3g}, "
                                             f"loss-order violations={bad_loss}")


# -- sortition ---------------------------------------------------------------

def sample_votes(stake: int, total: int, trials: int, seed: int = 0, hashlen: int = 256) -> List[int]:
    """Vote counts of one account over independent round seeds."""
    pmf = binomial_vote_pmf(stake, total)
    table = vote_ranges(pmf)
    account = Account(0, stake)
    master = master_key(0, seed.to_bytes(8, "big"))
    key = ephemeral_key(master, 1, 2)
    counts = [0] * len(pmf)
    for t in range(trials):
        q = Seed(hash_parts("monte-carlo", seed, t, hashlen=hashlen), 0)
        cred = validator_credential(account, 1, 2, q, key, hashlen)
        counts[assign_votes(cred.normalized, table)] += 1
    return counts


def binomial_monte_carlo(stake: int = 5, total: int = 20, trials: int = 20000, seed: int = 0,
                         sigmas: float = 3.0) -> CheckResult:
    pmf = binomial_vote_pmf(stake, total)
    counts = sample_votes(stake, total, trials, seed)
    worst = 0.0
    for prob, count in zip(pmf, counts):
        se = math.sqrt(prob * (1 - prob) / trials)
        diff = abs(count / trials - prob)
        if se == 0:
            if diff > 0:
                worst = math.inf
            continue
        worst = max(worst, diff / se)
    return CheckResult("binomial_monte_carlo", worst <= sigmas,
                       f"stake {stake}/{total}, {trials} seeds, worst bucket {worst:.2f} standard errors")


RangeBuilder = Callable[[Sequence[float]], object]

PARTITION_CASES = ((5, 20, None), (1, 3, None), (40, 100, None), (20, 600, 100.0), (7, 7, None), (0, 10, None))


def vote_range_partition(builder: RangeBuilder = vote_ranges, resolution: float = 1e-12,
                         probes: int = 2000, seed: int = 0) -> CheckResult:
    """Ranges tile [0, 1): contiguous, widths equal the pmf, lookups land inside."""
    rng = random.Random(seed)
    problems = []
    for stake, total, committee in PARTITION_CASES:
        pmf = binomial_vote_pmf(stake, total, committee)
        table = builder(pmf)
        b = table.boundaries
        label = f"stake {stake}/{total}"
        if len(b) != len(pmf) + 1:
            problems.append(f"{label}: {len(b)} cut points for {len(pmf)} outcomes")
            continue
        if abs(b[0]) > resolution or abs(b[-1] - 1.0) > resolution:
            problems.append(f"{label}: ranges span [{b[0]}, {b[-1]}) not [0, 1)")
        for v in range(len(pmf)):
            lo, hi = table.range_for(v)
            if hi < lo:
                problems.append(f"{label}: range {v} is inverted")
            if abs((hi - lo) - pmf[v]) > resolution:
                problems.append(f"{label}: range {v} has width {hi - lo!r}, expected {pmf[v]!r}")
            if v and abs(table.range_for(v - 1)[1] - lo) > resolution:
                problems.append(f"{label}: gap or overlap before range {v}")
        for _ in range(probes):
            x = rng.random()
            v = assign_votes(x, table)
            lo, hi = table.range_for(v)
            if not lo <= x < hi:
                problems.append(f"{label}: value {x} assigned {v} votes outside [{lo}, {hi})")
                break
    detail = "all ranges tile [0, 1)" if not problems else "; ".join(problems[:3])
    return CheckResult("vote_range_partition", not problems, detail)


# -- baseline reduction ------------------------------------------------------

def reduction_scenario(rounds: int = 20, rng_seed: int = 5) -> ScenarioConfig:
    accounts = tuple(Account(i, 10) for i in range(8))
    return ScenarioConfig(accounts=accounts, params=ProtocolParams(committee_votes=30),
                          rounds=rounds, rng_seed=rng_seed)


def baseline_pair(config: ScenarioConfig):
    """(reputation disabled, reputation enabled with every score 1) RoundRecord CSVs."""
    baseline = replace(config, params=replace(config.params, reputation_enabled=False))
    ones = {a.id: 1.0 for a in config.accounts}
    aware = replace(config, params=replace(config.params, reputation_enabled=True),
                    reputation=ReputationConfig(mode="oracle", scores=ones))
    return records_to_csv(Simulation(baseline).run()), records_to_csv(Simulation(aware).run())


def baseline_reduction(config: ScenarioConfig = None) -> CheckResult:
    config = config or reduction_scenario()
    base, aware = baseline_pair(config)
    same = base == aware
    return CheckResult("baseline_reduction", same,
                       f"{config.rounds} rounds, outcomes {'identical' if same else 'differ'}")


def run_all(quick: bool = False) -> List[CheckResult]:
    return [
        preference_grid(),
        split_identity(),
        binomial_monte_carlo(trials=20000 if quick else 100000),
        vote_range_partition(),
        baseline_reduction(),
    ]
