"""Training-only teacher network: molecule proposals and the policy-gradient update.

The teacher sees both post and response through two independent encoders,
samples candidate molecules from its composer, scores each by the frozen
student's response likelihood, and reinforces its policy with the
min-subtracted, length-normalized reward. Rewards enter the update as
plain floats, so no gradient ever flows through the student.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .composer import AtomSet, ComposerParams, molecule_log_prob, sample_molecule
from .errors import ContractError, NumericError
from .params import adadelta_step
from .seqmodel import EncoderParams, encode


@dataclass
class TeacherState:
    post_encoder: EncoderParams
    response_encoder: EncoderParams
    composer: ComposerParams
    atoms: AtomSet


@dataclass
class SampledBatchItem:
    """One (post, response) pair with its sampled molecules and scores."""

    x: tuple
    y: tuple
    n_responses: int
    molecules: list = field(default_factory=list)
    molecule_logps: list = field(default_factory=list)  # teacher composer, floats
    student_loglikes: list = field(default_factory=list)
    rewards: list = field(default_factory=list)


def encode_pair(state, x, y):
    """Joint conditioning vector: [encode(post); encode(response)]."""
    if not x or not y:
        raise ContractError("encode_pair: post and response must be nonempty")
    return ad.concat((encode(state.post_encoder, x), encode(state.response_encoder, y)))


def sample_unique_molecules(state, c_pair, k_t, k_max, max_attempts, rng, return_logps=False):
    """Up to ``k_t`` pairwise-distinct molecules by rejection of duplicates.

    Never empty: the first sample is always kept. When ``max_attempts``
    draws cannot produce ``k_t`` distinct molecules, fewer are returned.
    With ``return_logps`` the composer log-probability of each kept
    molecule comes back as a parallel list.
    """
    if k_t < 1:
        raise ContractError(f"k_t must be >= 1, got {k_t}")
    if max_attempts < k_t:
        raise ContractError(f"max_attempts {max_attempts} < k_t {k_t}")
    seen = []
    logps = []
    for _ in range(max_attempts):
        molecule, logp = sample_molecule(
            state.composer, state.atoms, c_pair, rng, k_max, return_logp=True
        )
        if molecule not in seen:
            seen.append(molecule)
            logps.append(logp)
            if len(seen) == k_t:
                break
    if return_logps:
        return seen, logps
    return seen


def compute_rewards(loglikes, y_len):
    """Length-normalized advantage over the sampled set's worst molecule.

    The minimum reward is exactly 0 and adding a constant to every
    log-likelihood leaves the rewards unchanged.
    """
    loglikes = [float(v) for v in loglikes]
    if not loglikes:
        raise ContractError("compute_rewards: empty likelihood set")
    if y_len < 1:
        raise ContractError(f"response length must be >= 1, got {y_len}")
    floor = min(loglikes)
    return [(v - floor) / y_len for v in loglikes]


def reinforce_update(state, items, store, rho=0.95, eps=1e-6, k_max=None):
    """One policy-gradient step on the teacher parameters.

    Surrogate loss: the negated mean (over items, then over each item's
    molecules) of log p(molecule | post, response) weighted by the
    reward minus the item's mean reward. Rewards are constants; only
    "teacher."-prefixed parameters change.
    """
    if not items:
        raise ContractError("reinforce_update: empty batch")
    loss = None
    for item in items:
        if len(item.rewards) != len(item.molecules):
            raise ContractError("reinforce_update: rewards not computed for every molecule")
        baseline = sum(item.rewards) / len(item.rewards)
        weights = [r - baseline for r in item.rewards]
        if all(w == 0.0 for w in weights):
            continue
        c_pair = encode_pair(state, item.x, item.y)
        norm = 1.0 / (len(items) * len(item.molecules))
        for molecule, w in zip(item.molecules, weights):
            if w == 0.0:
                continue
            # Length-capped molecules never chose the stop action, so the
            # surrogate covers only the steps the sampler actually took.
            chose_stop = k_max is None or len(molecule) < k_max
            lp = molecule_log_prob(
                state.composer, state.atoms, c_pair, molecule, k_max, include_stop=chose_stop
            )
            term = ad.scale(lp, -w * norm)
            loss = term if loss is None else loss + term
    store.zero_grads("teacher.")
    loss_value = 0.0
    if loss is not None:
        loss_value = loss.item()
        if not np.isfinite(loss_value):
            raise NumericError(f"non-finite policy surrogate loss: {loss_value}")
        ad.backward(loss)
    adadelta_step(store, "teacher.", rho=rho, eps=eps)
    return loss_value
