"""Deployed student network: mechanism-aware decoding and its supervised update.

The student sees only the post. Its encoder output is transformed by a
molecule's atom chain into the mechanism-aware context the decoder
conditions on. Training maximizes the length-normalized response
log-likelihood under the teacher-selected molecule and penalizes the
molecule probability's pointwise divergence from the uniform target
1/|distinct responses|, so probability mass spreads evenly over one
molecule per reference response.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .composer import AtomSet, ComposerParams, compose_molecule, molecule_log_prob
from .errors import ContractError, NumericError
from .params import adadelta_step
from .seqmodel import DecoderParams, EncoderParams, encode, response_log_likelihood


@dataclass
class StudentState:
    encoder: EncoderParams
    composer: ComposerParams
    atoms: AtomSet
    decoder: DecoderParams


@dataclass
class StudentExample:
    """One training item: pair, teacher-selected molecule, distinct-response count."""

    x: tuple
    y: tuple
    molecule: tuple
    n_responses: int


def mechanism_context(state, c_post, molecule):
    """Mechanism-aware context: the molecule's transform chain applied to c_post."""
    return compose_molecule(state.atoms, molecule, c_post)


def response_likelihood(state, x, molecule, y):
    """log p(y | x, molecule) through encode, compose and teacher-forced decode."""
    c_post = encode(state.encoder, x)
    return response_log_likelihood(state.decoder, mechanism_context(state, c_post, molecule), y)


def kl_to_uniform_term(molecule_logp, n_responses):
    """Pointwise divergence penalty p*(log p - log(1/n)) at the selected molecule.

    ``molecule_logp`` is the (differentiable) student composer log-probability.
    The term vanishes exactly when p equals the uniform target 1/n and is
    differentiable through p.
    """
    if n_responses < 1:
        raise ContractError(f"n_responses must be >= 1, got {n_responses}")
    return ad.exp(molecule_logp) * (molecule_logp + math.log(n_responses))


def student_update(state, examples, store, rho=0.95, eps=1e-6, k_max=None):
    """One supervised step on the student parameters.

    Minimizes, summed over the batch, the negated length-normalized
    likelihood plus the uniform-target penalty. Gradient reaches the
    composer through the penalty and the encoder, decoder and atoms
    through the likelihood. Returns (loss, mean molecule probability).
    """
    if not examples:
        raise ContractError("student_update: empty batch")
    loss = None
    prob_sum = 0.0
    for ex in examples:
        if len(ex.y) < 1:
            raise ContractError("student_update: empty response")
        c_post = encode(state.encoder, ex.x)
        ctx = compose_molecule(state.atoms, ex.molecule, c_post)
        loglike = response_log_likelihood(state.decoder, ctx, ex.y)
        lp_mol = molecule_log_prob(state.composer, state.atoms, c_post, ex.molecule, k_max)
        term = ad.scale(loglike, -1.0 / len(ex.y)) + kl_to_uniform_term(lp_mol, ex.n_responses)
        loss = term if loss is None else loss + term
        prob_sum += math.exp(lp_mol.item())
    loss_value = loss.item()
    if not np.isfinite(loss_value):
        raise NumericError(f"non-finite student loss: {loss_value}")
    store.zero_grads("student.")
    ad.backward(loss)
    adadelta_step(store, "student.", rho=rho, eps=eps)
    return loss_value, prob_sum / len(examples)
