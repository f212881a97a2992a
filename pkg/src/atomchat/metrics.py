"""Automatic generation metrics: BLEU-4, diversity, coverage, atom keywords.

All metrics are pure functions over token sequences and can run in
parallel across posts. Response matching is exact on normalized id
sequences (padding and the trailing EOS stripped); semantic matching is
deliberately out of scope.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

from .errors import ContractError
from .vocab import EOS, PAD


def normalize_response(ids):
    """Truncate at the first EOS and drop padding; used before any matching."""
    out = []
    for t in ids:
        if t == EOS:
            break
        if t == PAD:
            continue
        out.append(int(t))
    return tuple(out)


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu4(candidate, references):
    """BLEU with up to 4-grams, multi-reference clipping and brevity penalty.

    No smoothing: if any n-gram order has zero matches (or the candidate is
    shorter than the order), the score is 0. The brevity penalty uses the
    reference length closest to the candidate's, shorter on ties.
    """
    candidate = tuple(candidate)
    references = [tuple(r) for r in references]
    if not candidate or not references or any(not r for r in references):
        raise ContractError("bleu4: candidate and references must be nonempty")
    log_precisions = []
    for n in range(1, 5):
        cand_counts = _ngrams(candidate, n)
        total = sum(cand_counts.values())
        if total == 0:
            return 0.0
        max_ref = Counter()
        for ref in references:
            for gram, count in _ngrams(ref, n).items():
                if count > max_ref[gram]:
                    max_ref[gram] = count
        clipped = sum(min(count, max_ref[gram]) for gram, count in cand_counts.items())
        if clipped == 0:
            return 0.0
        log_precisions.append(math.log(clipped / total))
    c = len(candidate)
    r = min((abs(len(ref) - c), len(ref)) for ref in references)[1]
    brevity = 1.0 if c > r else math.exp(1.0 - r / c)
    return brevity * math.exp(sum(log_precisions) / 4.0)


def diversity_score(responses):
    """Distinct normalized responses over the number of responses, in (0, 1]."""
    responses = list(responses)
    if not responses:
        raise ContractError("diversity_score: need at least one response")
    distinct = {normalize_response(r) for r in responses}
    return len(distinct) / len(responses)


def coverage_at_l(generated, references):
    """Fraction of reference responses exactly recovered by some generated one."""
    generated = list(generated)
    references = list(references)
    if not generated:
        raise ContractError("coverage_at_l: need at least one generated response")
    if not references:
        raise ContractError("coverage_at_l: need at least one reference")
    produced = {normalize_response(g) for g in generated}
    hits = sum(1 for ref in references if normalize_response(ref) in produced)
    return hits / len(references)


@dataclass
class KeywordReport:
    """Per-atom keyword lists plus the atoms that never appeared in a molecule."""

    keywords: dict = field(default_factory=dict)  # atom -> [(word, p)], descending p
    atoms_without_records: list = field(default_factory=list)


def keyword_table(records, atom_count, threshold=0.5, stopwords=frozenset()):
    """Characteristic words per atom from (molecule, response words) records.

    For atom i, p(word | atom i) is the fraction of responses whose molecule
    contains i that contain the word. Words qualify with p strictly above
    the threshold (0.5 exactly is excluded), stopwords removed, sorted by
    descending p with lexicographic tie-break.
    """
    if not 0.0 < threshold <= 1.0:
        raise ContractError(f"threshold must lie in (0, 1], got {threshold}")
    per_atom_responses = {i: [] for i in range(1, atom_count + 1)}
    for molecule, words in records:
        present = set(words)
        for atom in set(molecule):
            per_atom_responses[atom].append(present)
    report = KeywordReport()
    for atom in range(1, atom_count + 1):
        responses = per_atom_responses[atom]
        if not responses:
            report.atoms_without_records.append(atom)
            continue
        word_hits = Counter()
        for present in responses:
            word_hits.update(present)
        rows = []
        for word, hits in word_hits.items():
            if word in stopwords:
                continue
            p = hits / len(responses)
            if p > threshold:
                rows.append((word, p))
        rows.sort(key=lambda wp: (-wp[1], wp[0]))
        report.keywords[atom] = rows
    return report
