"""Two-stage response generation: molecules by probability, then token beams."""

from __future__ import annotations

from dataclasses import dataclass

from . import autodiff as ad
from .composer import beam_molecules, compose_molecule
from .seqmodel import encode, token_beam


@dataclass
class MoleculeGeneration:
    """One generated molecule with its decoded responses, best first."""

    molecule: tuple
    molecule_logp: float
    responses: list  # [(token ids, log-probability)], descending


def generate_two_stage(
    student,
    x,
    l,
    k_max,
    mol_width=None,
    tok_width=8,
    max_len=20,
    responses_per_molecule=1,
):
    """Generate up to ``l`` molecules for a post and decode each one.

    Molecules come back in descending p(molecule | post); each is decoded
    with its own mechanism-aware context. Fewer than ``l`` results mean the
    beam found fewer terminated molecules; callers emit a warning record.
    """
    with ad.no_grad():
        c_post = encode(student.encoder, x)
    molecules = beam_molecules(student.composer, student.atoms, c_post, l, k_max, width=mol_width)
    out = []
    for molecule, logp in molecules:
        with ad.no_grad():
            ctx = compose_molecule(student.atoms, molecule, c_post)
        width = max(tok_width, responses_per_molecule)
        responses = token_beam(student.decoder, ctx, width, max_len)[:responses_per_molecule]
        out.append(MoleculeGeneration(molecule=molecule, molecule_logp=logp, responses=responses))
    return out
