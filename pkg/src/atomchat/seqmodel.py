"""GRU cell, sequence encoder and context-conditioned decoder.

The decoder consumes, at every step, the previous token's embedding
concatenated with a conditioning context vector, and projects the hidden
state onto the vocabulary. Both the mechanism-aware model and the plain
encoder-decoder baseline run through these functions unchanged. All
operations are pure given parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Value
from .errors import ContractError
from .vocab import BOS, EOS, PAD


@dataclass
class GRUCellParams:
    """Gate and candidate weights, each (hidden, input+hidden), biases (hidden,)."""

    w_z: Value
    w_r: Value
    w_h: Value
    b_z: Value
    b_r: Value
    b_h: Value

    def __post_init__(self):
        h = self.w_z.shape[0]
        cols = self.w_z.shape[1]
        for name in ("w_r", "w_h"):
            w = getattr(self, name)
            if w.shape != (h, cols):
                raise ContractError(f"{name} shape {w.shape}, expected {(h, cols)}")
        for name in ("b_z", "b_r", "b_h"):
            b = getattr(self, name)
            if b.shape != (h,):
                raise ContractError(f"{name} shape {b.shape}, expected {(h,)}")
        if cols <= h:
            raise ContractError(f"gate weights {self.w_z.shape} leave no input columns")

    @property
    def hidden_dim(self):
        return self.w_z.shape[0]

    @property
    def input_dim(self):
        return self.w_z.shape[1] - self.w_z.shape[0]


def gru_step(params, h_prev, x):
    """One GRU update: returns the next hidden state.

    With zero weights and biases the update gate is 1/2 and the candidate
    is 0, so the output is h_prev / 2.
    """
    if h_prev.shape != (params.hidden_dim,):
        raise ContractError(f"h_prev shape {h_prev.shape}, cell expects {(params.hidden_dim,)}")
    if x.shape != (params.input_dim,):
        raise ContractError(f"input shape {x.shape}, cell expects {(params.input_dim,)}")
    xh = ad.concat((x, h_prev))
    z = ad.sigmoid(ad.affine(params.w_z, xh, params.b_z))
    r = ad.sigmoid(ad.affine(params.w_r, xh, params.b_r))
    candidate = ad.tanh(ad.affine(params.w_h, ad.concat((x, r * h_prev)), params.b_h))
    # (1 - z) * candidate + z * h_prev, with fewer graph nodes
    return candidate + z * (h_prev - candidate)


@dataclass
class EncoderParams:
    embed: Value  # (vocab, embed_dim)
    gru: GRUCellParams

    def __post_init__(self):
        if self.embed.shape[1] != self.gru.input_dim:
            raise ContractError(
                f"embedding dim {self.embed.shape[1]} vs GRU input dim {self.gru.input_dim}"
            )

    @property
    def hidden_dim(self):
        return self.gru.hidden_dim


@dataclass
class DecoderParams:
    embed: Value  # (vocab, embed_dim)
    gru: GRUCellParams  # input = embed_dim + context_dim
    w_out: Value  # (vocab, hidden)
    b_out: Value  # (vocab,)

    def __post_init__(self):
        if self.w_out.shape[0] != self.embed.shape[0]:
            raise ContractError(
                f"projection rows {self.w_out.shape[0]} vs vocab {self.embed.shape[0]}"
            )
        if self.w_out.shape[1] != self.gru.hidden_dim:
            raise ContractError("projection columns must equal decoder hidden dim")
        if self.b_out.shape != (self.w_out.shape[0],):
            raise ContractError("projection bias must have one entry per vocab row")
        if self.gru.input_dim <= self.embed.shape[1]:
            raise ContractError("decoder GRU input must hold embedding plus context")

    @property
    def context_dim(self):
        return self.gru.input_dim - self.embed.shape[1]

    @property
    def vocab_size(self):
        return self.embed.shape[0]


def encode(params, tokens):
    """Run the encoder over a token-id sequence from a zero initial state."""
    tokens = tuple(int(t) for t in tokens)
    if not tokens:
        raise ContractError("encode: empty token sequence")
    h = Value(np.zeros(params.hidden_dim))
    for t in tokens:
        h = gru_step(params.gru, h, ad.lookup(params.embed, t))
    return h


def decoder_step(params, s_prev, prev_token, ctx):
    """Advance the decoder one step; returns (next state, vocab logits)."""
    inp = ad.concat((ad.lookup(params.embed, prev_token), ctx))
    s = gru_step(params.gru, s_prev, inp)
    return s, ad.affine(params.w_out, s, params.b_out)


def _terminated(y):
    """Strip padding after the first EOS; error when EOS is absent."""
    y = tuple(int(t) for t in y)
    if EOS not in y:
        raise ContractError("response must end with EOS")
    y = y[: y.index(EOS) + 1]
    if any(t == PAD for t in y):
        raise ContractError("PAD inside the response body")
    return y


def response_log_likelihood(params, ctx, y):
    """Teacher-forced log p(y | ctx), summed over tokens including EOS.

    Tokens after the first EOS are excluded, so appended padding never
    changes the result. The value is always <= 0.
    """
    if ctx.shape != (params.context_dim,):
        raise ContractError(f"context shape {ctx.shape}, decoder expects {(params.context_dim,)}")
    y = _terminated(y)
    s = Value(np.zeros(params.gru.hidden_dim))
    prev = BOS
    total = None
    for tok in y:
        s, logits = decoder_step(params, s, prev, ctx)
        lp = ad.pick(ad.log_softmax(logits), tok)
        total = lp if total is None else total + lp
        prev = tok
    return total


def token_beam(params, ctx, width, max_len):
    """Beam-search token sequences under p(y | ctx).

    Returns up to ``width`` (token tuple, log-probability) pairs in
    descending score order. Sequences end with EOS or hit ``max_len``
    and keep their raw score.
    """
    from .beam import beam_search

    with ad.no_grad():
        ctx = Value(ctx.data)

        def step_fn(state):
            s_prev, prev_token = state
            s, logits = decoder_step(params, s_prev, prev_token, ctx)
            logp = ad.log_softmax(logits).data

            def advance(action):
                return (s, action)

            return logp, advance

        start = (Value(np.zeros(params.gru.hidden_dim)), BOS)
        return beam_search(step_fn, start, width, max_len, EOS)
