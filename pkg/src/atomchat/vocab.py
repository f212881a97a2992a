"""Token vocabulary with fixed reserved ids.

The file format is one token per line; the line number is the id and the
reserved tokens come first. Out-of-vocabulary tokens encode to UNK.
"""

from __future__ import annotations

from .errors import ContractError, ParseError

PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED = ("<pad>", "<bos>", "<eos>", "<unk>")


class Vocab:
    def __init__(self, tokens):
        tokens = tuple(tokens)
        if tokens[: len(RESERVED)] != RESERVED:
            raise ContractError(f"vocab must start with reserved tokens {RESERVED}")
        index = {tok: i for i, tok in enumerate(tokens)}
        if len(index) != len(tokens):
            raise ContractError("vocab tokens must be unique")
        self.tokens = tokens
        self.index = index

    @classmethod
    def from_content(cls, content_tokens):
        return cls(RESERVED + tuple(content_tokens))

    def __len__(self):
        return len(self.tokens)

    def encode_token(self, token):
        return self.index.get(token, UNK)

    def encode(self, tokens):
        return tuple(self.index.get(t, UNK) for t in tokens)

    def decode(self, ids, strip_special=True):
        """Ids back to tokens; reserved ids are dropped when stripping."""
        out = []
        for i in ids:
            if strip_special and i < len(RESERVED):
                continue
            out.append(self.tokens[i])
        return tuple(out)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            for tok in self.tokens:
                f.write(tok + "\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as f:
            tokens = [line.rstrip("\n") for line in f]
        while tokens and tokens[-1] == "":
            tokens.pop()
        if len(tokens) < len(RESERVED):
            raise ParseError("vocab file lacks the reserved tokens", line_number=1)
        return cls(tokens)
