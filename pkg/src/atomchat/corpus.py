"""Corpus records, file I/O, vocabulary construction and a synthetic generator.

A corpus pairs each post with the set of its distinct reference responses.
Files hold one JSON record per line with fields ``post`` (space-separated
tokens) and ``responses`` (array of such strings), UTF-8.

The synthetic generator produces a one-to-many corpus at desk scale: every
post maps to several distinct responses, and responses of one post can
share a clause, mimicking near-paraphrase structure in real dialogue data.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ParseError, SpecError
from .vocab import EOS, RESERVED, Vocab


@dataclass(frozen=True)
class CorpusPair:
    post: tuple  # token strings
    responses: tuple  # tuple of token-string tuples, distinct

    def __post_init__(self):
        if not self.post:
            raise ContractError("post must be nonempty")
        if not self.responses:
            raise ContractError("a pair needs at least one response")
        if any(not r for r in self.responses):
            raise ContractError("responses must be nonempty")
        if len(set(self.responses)) != len(self.responses):
            raise ContractError("duplicate responses within a pair")


@dataclass(frozen=True)
class EncodedPair:
    post: tuple  # token ids
    responses: tuple  # tuples of token ids, each ending with EOS


def save_corpus(pairs, path):
    with open(path, "w", encoding="utf-8") as f:
        for pair in pairs:
            record = {
                "post": " ".join(pair.post),
                "responses": [" ".join(r) for r in pair.responses],
            }
            f.write(json.dumps(record, sort_keys=True) + "\n")


def load_corpus(path):
    """Read pairs from a JSON-lines file, dropping duplicate responses per post."""
    pairs = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                post = tuple(record["post"].split())
                responses = [tuple(r.split()) for r in record["responses"]]
            except (ValueError, KeyError, AttributeError, TypeError) as e:
                raise ParseError(f"bad corpus record: {e}", line_number=lineno) from e
            deduped = tuple(dict.fromkeys(responses))
            try:
                pairs.append(CorpusPair(post=post, responses=deduped))
            except ContractError as e:
                raise ParseError(str(e), line_number=lineno) from e
    if not pairs:
        raise ContractError(f"empty corpus: {path}")
    return pairs


def build_vocab(pairs, max_size):
    """Reserved tokens plus the most frequent corpus tokens up to ``max_size``.

    Frequency ties break lexicographically; everything else encodes to UNK.
    """
    if max_size < 5:
        raise ContractError(f"max_size must be >= 5, got {max_size}")
    counts = Counter()
    for pair in pairs:
        counts.update(pair.post)
        for response in pair.responses:
            counts.update(response)
    budget = max_size - len(RESERVED)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocab.from_content([tok for tok, _ in ranked[:budget]])


def encode_pairs(pairs, vocab):
    """Token strings to ids; every response gets EOS appended."""
    out = []
    for pair in pairs:
        responses = tuple(vocab.encode(r) + (EOS,) for r in pair.responses)
        out.append(EncodedPair(post=vocab.encode(pair.post), responses=responses))
    return out


def flatten(encoded_pairs):
    """Per-response training instances: (post ids, response ids, |distinct responses|)."""
    instances = []
    for pair in encoded_pairs:
        n = len(pair.responses)
        for y in pair.responses:
            instances.append((pair.post, y, n))
    return instances


@dataclass(frozen=True)
class SyntheticSpec:
    train_posts: int = 50
    val_posts: int = 8
    test_posts: int = 8
    responses_min: int = 2
    responses_max: int = 4
    shared_fragment_rate: float = 0.5
    vocab_size: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.vocab_size < 8:
            raise SpecError(f"vocab_size must be >= 8, got {self.vocab_size}")
        if not 1 <= self.responses_min <= self.responses_max:
            raise SpecError("need responses_max >= responses_min >= 1")
        if self.train_posts < 1 or self.val_posts < 0 or self.test_posts < 0:
            raise SpecError("need train_posts >= 1 and nonnegative split sizes")
        if not 0.0 <= self.shared_fragment_rate <= 1.0:
            raise SpecError("shared_fragment_rate must lie in [0, 1]")


def generate_synthetic(spec, rng=None):
    """Build (train, validation, test) splits of one-to-many pairs.

    Deterministic under ``spec.seed``. Posts are distinct across all three
    splits. Responses of a post start with distinct opener tokens, so the
    requested response count is capped by the opener pool; exceeding it is
    a spec error. With shared_fragment_rate 1.0 every response of a post
    carries the same trailing clause.
    """
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    content = [f"w{i:02d}" for i in range(spec.vocab_size - len(RESERVED))]
    n_openers = max(spec.responses_max, min(len(content) // 3, 12))
    openers = content[:n_openers]
    body = content[n_openers:]
    if spec.responses_max > len(openers):
        raise SpecError(
            f"{spec.responses_max} distinct responses per post exceed the "
            f"opener capacity {len(openers)} at vocab_size {spec.vocab_size}"
        )
    if len(body) < 4:
        raise SpecError(f"vocab_size {spec.vocab_size} leaves too few body tokens")

    def pick_tokens(pool, size):
        return tuple(pool[int(i)] for i in rng.integers(0, len(pool), size=size))

    def make_clause():
        return pick_tokens(body, 3)

    seen_posts = set()

    def make_post():
        for _ in range(1000):
            length = int(rng.integers(3, 6))
            post = pick_tokens(body, length)
            if post not in seen_posts:
                seen_posts.add(post)
                return post
        raise SpecError("post template capacity exhausted; raise vocab_size")

    def make_pair():
        post = make_post()
        k = int(rng.integers(spec.responses_min, spec.responses_max + 1))
        opener_ids = rng.choice(len(openers), size=k, replace=False)
        shared = make_clause()
        responses = []
        for j in range(k):
            clause = shared if rng.random() < spec.shared_fragment_rate else make_clause()
            responses.append((str(openers[int(opener_ids[j])]),) + clause)
        return CorpusPair(post=post, responses=tuple(responses))

    train = [make_pair() for _ in range(spec.train_posts)]
    val = [make_pair() for _ in range(spec.val_posts)]
    test = [make_pair() for _ in range(spec.test_posts)]
    return train, val, test
