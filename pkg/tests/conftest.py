import pytest

from repalgo.consensus import EphemeralKeyRing, NodeState, RoundContext, genesis, vote_signature
from repalgo.core_types import Account, Behavior, ProtocolParams, VoteMessage, hash_block
from repalgo.reputation import ReputationList
from repalgo.sortition import ephemeral_key, master_key, validator_credential


class World:
    """A one-round fixture where every account votes with exactly its stake.

    The committee target equals total stake, so each currency unit is selected
    with probability 1 and kappa == stake for everyone.
    """

    def __init__(self, stakes, behaviors=None, scores=None, reputation=True, p_th=0.5, tau=100.0,
                 honest_alternative=True, round_=1):
        behaviors = behaviors or {}
        self.accounts = {}
        for i, s in enumerate(stakes):
            b = behaviors.get(i, Behavior.HONEST)
            rate = 1.0 if b is Behavior.ILLICIT_PROPOSER else 0.0
            self.accounts[i] = Account(i, s, b, rate)
        total = sum(stakes)
        self.params = ProtocolParams(committee_votes=total, tau_proposer=tau, p_th=p_th,
                                     reputation_enabled=reputation, honest_alternative=honest_alternative)
        self.directory = {i: master_key(i, b"fixture") for i in self.accounts}
        block0, seed0 = genesis(1)
        self.seed = seed0
        self.ctx = RoundContext(round_, seed0, hash_block(block0), self.accounts, self.params, self.directory,
                                committee_target=total)
        self.scores = scores or {}
        self.nodes = {i: self.node(i) for i in self.accounts}

    def node(self, i, scores=None):
        sl = ReputationList(i, dict(scores if scores is not None else self.scores), p_th=self.params.p_th,
                            epsilon=self.params.epsilon_rep)
        return NodeState(self.accounts[i], sl, self.params, EphemeralKeyRing(self.directory[i]))

    def vote(self, voter, step, payload):
        key = ephemeral_key(self.directory[voter], self.ctx.round, step)
        cred = validator_credential(self.accounts[voter], self.ctx.round, step, self.ctx.seed, key)
        sig = vote_signature(key, self.ctx.round, step, payload)
        return VoteMessage(self.ctx.round, step, voter, cred, payload, sig)


@pytest.fixture
def world():
    return World
