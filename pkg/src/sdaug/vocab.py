"""Token vocabulary and sequences.

Reserved ids 0..3 are BOS/EOS/PAD/UNK in that order.  A TokenSequence holds
content token ids only; termination by EOS is a flag rather than a stored
id, so fixed-length synthetic sequences and variable-length text share one
representation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError

BOS, EOS, PAD, UNK = 0, 1, 2, 3
RESERVED = ("<bos>", "<eos>", "<pad>", "<unk>")
N_RESERVED = len(RESERVED)


@dataclass(frozen=True)
class TokenSequence:
    """A bounded sequence of vocabulary ids; `eos` marks EOS termination."""

    ids: tuple[int, ...]
    eos: bool = False

    def __len__(self) -> int:
        return len(self.ids)

    def validate(self, vocab_size: int, t_max: int | None = None) -> None:
        for i in self.ids:
            if not 0 <= i < vocab_size:
                raise ContractError(f"token id {i} out of range for vocab of {vocab_size}")
            if i in (BOS, PAD):
                raise ContractError(f"structural token id {i} inside sequence content")
        if t_max is not None and len(self.ids) > t_max:
            raise ContractError(f"sequence length {len(self.ids)} exceeds t_max {t_max}")

    def is_complete(self, t_max: int) -> bool:
        return self.eos or len(self.ids) >= t_max

    def key(self) -> tuple:
        return (self.ids, self.eos)


def seq(*ids: int, eos: bool = False) -> TokenSequence:
    return TokenSequence(tuple(ids), eos=eos)


class Vocab:
    """Bijective token<->id mapping with the four reserved ids prepended."""

    def __init__(self, content_tokens: list[str]):
        for t in content_tokens:
            if t in RESERVED:
                raise ContractError(f"corpus token collides with reserved token {t!r}")
        if len(set(content_tokens)) != len(content_tokens):
            raise ContractError("duplicate tokens in vocabulary")
        self.tokens: list[str] = list(RESERVED) + list(content_tokens)
        self._index: dict[str, int] = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def size(self) -> int:
        return len(self.tokens)

    def id_of(self, token: str) -> int:
        try:
            return self._index[token]
        except KeyError:
            return UNK

    def encode(self, words: list[str]) -> TokenSequence:
        return TokenSequence(tuple(self.id_of(w) for w in words), eos=True)

    def decode(self, s: TokenSequence) -> list[str]:
        """Surface tokens; structural ids (BOS/EOS/PAD) never appear."""
        return [self.tokens[i] for i in s.ids if i not in (BOS, EOS, PAD)]

    def support_mask(self, fixed_length: bool) -> np.ndarray:
        """Which ids the generator may emit.

        BOS and PAD are never emitted.  Fixed-length (synthetic) generation
        also excludes EOS and UNK, so the effective vocabulary is exactly
        the content tokens.
        """
        return support_mask_for(self.size, fixed_length)

    def to_lines(self) -> list[str]:
        return list(self.tokens)

    @classmethod
    def from_lines(cls, lines: list[str]) -> "Vocab":
        if lines[:N_RESERVED] != list(RESERVED):
            raise ContractError("vocab file must start with the reserved tokens")
        return cls(lines[N_RESERVED:])


def support_mask_for(vocab_size: int, fixed_length: bool) -> np.ndarray:
    """Emittable-token mask given only the vocabulary size (see Vocab.support_mask)."""
    if vocab_size <= N_RESERVED:
        raise ContractError("vocabulary has no content tokens")
    mask = np.ones(vocab_size, dtype=bool)
    mask[BOS] = False
    mask[PAD] = False
    if fixed_length:
        mask[EOS] = False
        mask[UNK] = False
    return mask


def synthetic_vocab(n_tokens: int) -> Vocab:
    """Integer-token vocabulary t0..t{n-1} for oracle-generated datasets."""
    if n_tokens < 2:
        raise ContractError("synthetic vocabulary needs at least 2 tokens")
    return Vocab([f"t{i}" for i in range(n_tokens)])
