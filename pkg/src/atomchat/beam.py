"""Generic beam search over log-probability step distributions.

One engine serves both search spaces in this project: molecule generation
(actions are atom indices, terminal action 0) and token generation
(actions are vocabulary ids, terminal action EOS).
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, NumericError

_SUM_TOL = 1e-6


def beam_search(step_fn, start_state, width, max_len, terminal_action):
    """Return the best action sequences under summed step log-probabilities.

    Args:
        step_fn: maps a state to ``(logp, advance)`` where ``logp`` is a 1-D
            array of log-probabilities over actions (exp must sum to 1
            within 1e-6; -inf marks an impossible action) and
            ``advance(action)`` yields the successor state.
        start_state: opaque state handed to ``step_fn`` first.
        width: beam width, >= 1.
        max_len: maximum sequence length, >= 1.
        terminal_action: action id that finishes a sequence.

    Returns:
        Up to ``width`` ``(sequence, score)`` pairs, sequences as tuples of
        action ids that end with the terminal action or have length
        ``max_len``. Ordered by descending score; exact ties break
        lexicographically on the action sequence.
    """
    if width < 1:
        raise ContractError(f"beam width must be >= 1, got {width}")
    if max_len < 1:
        raise ContractError(f"max_len must be >= 1, got {max_len}")

    # Each live entry: (sequence, score, state, done).
    beams = [((), 0.0, start_state, False)]
    for step_index in range(max_len):
        if all(done for (_, _, _, done) in beams):
            break
        # Finished sequences keep competing against fresh expansions.
        candidates = [(seq, score) for (seq, score, _, done) in beams if done]
        expansions = {}
        for seq, score, state, done in beams:
            if done:
                continue
            logp, advance = step_fn(state)
            logp = np.asarray(logp, dtype=np.float64)
            if np.isnan(logp).any() or np.isposinf(logp).any():
                raise NumericError(f"non-finite step scores at step {step_index}")
            total = np.exp(logp).sum()
            if abs(total - 1.0) > _SUM_TOL:
                raise ContractError(
                    f"step scores are not log-probabilities at step {step_index} "
                    f"(exp sums to {total:.8f})"
                )
            for action, lp in enumerate(logp):
                if lp == -np.inf:
                    continue
                new_seq = seq + (action,)
                candidates.append((new_seq, score + float(lp)))
                if action != terminal_action:
                    expansions[new_seq] = (advance, action)
        candidates.sort(key=lambda c: (-c[1], c[0]))
        del candidates[width:]
        beams = []
        for seq, score in candidates:
            if seq in expansions:
                advance, action = expansions[seq]
                beams.append((seq, score, advance(action), False))
            else:
                beams.append((seq, score, None, True))
    results = [(seq, score) for (seq, score, _, _) in beams]
    results.sort(key=lambda c: (-c[1], c[0]))
    return results
