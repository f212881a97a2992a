"""Atom mechanisms, molecule composition and the recurrent composer policy.

An atom mechanism i (1..N) transforms a context vector c through
ReLU(c + m_i); a molecule is an ordered atom sequence whose transforms are
applied left to right. The composer is a GRU that, conditioned on a
context vector, emits one action per step (atom 1..N, or action 0 to
terminate) under a softmax policy. Teacher and student instantiate this
module with their own parameters and conditioning widths.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Value
from .errors import ContractError
from .seqmodel import GRUCellParams, gru_step


@dataclass
class AtomSet:
    """Embedding table with one row per action: row 0 terminates, rows 1..N are atoms."""

    embed: Value  # (N+1, dim)

    def __post_init__(self):
        if self.embed.data.ndim != 2 or self.embed.shape[0] < 2:
            raise ContractError(f"atom table needs >= 2 rows, got shape {self.embed.shape}")

    @property
    def atom_count(self):
        return self.embed.shape[0] - 1

    @property
    def dim(self):
        return self.embed.shape[1]


def validate_molecule(molecule, atom_count):
    molecule = tuple(int(i) for i in molecule)
    for i in molecule:
        if not 1 <= i <= atom_count:
            raise IndexError(f"atom index {i} out of range 1..{atom_count}")
    return molecule


def molecule_to_str(molecule):
    """Arrow-joined atom indices, e.g. "24->10->22->3"; "[]" when empty."""
    if not molecule:
        return "[]"
    return "->".join(str(i) for i in molecule)


def molecule_from_str(text):
    text = text.strip()
    if text == "[]":
        return ()
    try:
        return tuple(int(part) for part in text.split("->"))
    except ValueError as e:
        raise ContractError(f"bad molecule string {text!r}") from e


def apply_atom(atoms, index, c):
    """One atom transform: ReLU(c + m_index). Index 0 is not a transform."""
    index = int(index)
    if not 1 <= index <= atoms.atom_count:
        raise IndexError(f"atom index {index} out of range 1..{atoms.atom_count}")
    if c.shape != (atoms.dim,):
        raise ContractError(f"context shape {c.shape}, atoms have dim {atoms.dim}")
    return ad.relu(c + ad.lookup(atoms.embed, index))


def compose_molecule(atoms, molecule, c):
    """Apply a molecule's atom transforms left to right; empty molecule is identity."""
    out = c
    for i in molecule:
        out = apply_atom(atoms, i, out)
    return out


@dataclass
class ComposerParams:
    """Recurrent policy: GRU over [previous-atom embedding; conditioning context]."""

    gru: GRUCellParams
    w_policy: Value  # (N+1, hidden)

    def __post_init__(self):
        if self.w_policy.shape[1] != self.gru.hidden_dim:
            raise ContractError(
                f"policy columns {self.w_policy.shape[1]} vs composer hidden {self.gru.hidden_dim}"
            )

    @property
    def action_count(self):
        return self.w_policy.shape[0]

    @property
    def hidden_dim(self):
        return self.gru.hidden_dim


def composer_start(params, ctx):
    """Initial recurrent state and the fixed zero start embedding."""
    mech_dim = params.gru.input_dim - ctx.shape[0]
    if mech_dim <= 0:
        raise ContractError(
            f"context dim {ctx.shape[0]} leaves no room for mechanism input "
            f"(composer input dim {params.gru.input_dim})"
        )
    return Value(np.zeros(params.hidden_dim)), Value(np.zeros(mech_dim))


def composer_step_logits(params, h_prev, m_prev, ctx):
    h = gru_step(params.gru, h_prev, ad.concat((m_prev, ctx)))
    return h, ad.matmul(params.w_policy, h)


def composer_step(params, h_prev, m_prev, ctx):
    """Advance the composer; returns (next state, action distribution)."""
    h, logits = composer_step_logits(params, h_prev, m_prev, ctx)
    return h, ad.softmax(logits)


def molecule_log_prob(params, atoms, ctx, molecule, k_max=None, include_stop=True):
    """log p(molecule | ctx): per-step action log-probs plus the final stop step.

    ``include_stop=False`` drops the stop step's factor; the policy-gradient
    update uses it for molecules whose generation was cut off at the length
    limit rather than terminated by a chosen stop action.
    """
    molecule = validate_molecule(molecule, atoms.atom_count)
    if k_max is not None and len(molecule) > k_max:
        raise ContractError(f"molecule length {len(molecule)} exceeds limit {k_max}")
    if not include_stop and not molecule:
        raise ContractError("the empty molecule is nothing but its stop step")
    h, m_prev = composer_start(params, ctx)
    total = None
    for i in molecule:
        h, logits = composer_step_logits(params, h, m_prev, ctx)
        lp = ad.pick(ad.log_softmax(logits), i)
        total = lp if total is None else total + lp
        m_prev = ad.lookup(atoms.embed, i)
    if not include_stop:
        return total
    h, logits = composer_step_logits(params, h, m_prev, ctx)
    stop = ad.pick(ad.log_softmax(logits), 0)
    return stop if total is None else total + stop


def sample_molecule(params, atoms, ctx, rng, k_max, return_logp=False):
    """Draw one molecule from the composer policy.

    Stops at the terminal action or, after ``k_max`` atoms, by forced
    truncation. Deterministic for a fixed rng state. With ``return_logp``
    the molecule's log-probability (always including the stop step, exactly
    as ``molecule_log_prob`` computes it) comes back alongside.
    """
    if k_max < 1:
        raise ContractError(f"k_max must be >= 1, got {k_max}")
    with ad.no_grad():
        h, m_prev = composer_start(params, ctx)
        out = []
        total = 0.0
        while True:
            h, logits = composer_step_logits(params, h, m_prev, ctx)
            e = np.exp(logits.data - logits.data.max())
            probs = e / e.sum()
            action = int(rng.choice(params.action_count, p=probs))
            if return_logp:
                total += float(ad.log_softmax(logits).data[action])
            if action == 0:
                break
            out.append(action)
            if len(out) == k_max:
                # Truncated: still account for the stop step's probability.
                if return_logp:
                    _, logits = composer_step_logits(
                        params, h, ad.lookup(atoms.embed, action), ctx
                    )
                    total += float(ad.log_softmax(logits).data[0])
                break
            m_prev = ad.lookup(atoms.embed, action)
    if return_logp:
        return tuple(out), total
    return tuple(out)


def beam_molecules(params, atoms, ctx, count, k_max, width=None):
    """Highest-probability molecules under the composer policy, descending.

    Runs the generic beam over the action space and keeps sequences that
    chose the terminal action; may return fewer than ``count`` when the
    beam finds fewer terminated sequences.
    """
    from .beam import beam_search

    if count < 1:
        raise ContractError(f"count must be >= 1, got {count}")
    width = max(count, width or count)
    with ad.no_grad():
        ctx = Value(ctx.data)

        def step_fn(state):
            h_prev, m_prev = state
            h, logits = composer_step_logits(params, h_prev, m_prev, ctx)
            logp = ad.log_softmax(logits).data

            def advance(action):
                return (h, ad.lookup(atoms.embed, action))

            return logp, advance

        start = composer_start(params, ctx)
        sequences = beam_search(step_fn, start, width, k_max + 1, 0)
    results = []
    for seq, score in sequences:
        if seq and seq[-1] == 0:
            results.append((seq[:-1], score))
        if len(results) == count:
            break
    return results
