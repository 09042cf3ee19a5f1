"""Corpus ingestion, vocabulary construction, and splitting.

Corpus files are UTF-8 text, one sentence per line, space-separated tokens.
Normalization is lowercasing plus whitespace tokenization only.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ContractError, CorpusError
from .rng import RngStream
from .vocab import RESERVED, TokenSequence, Vocab


@dataclass
class Corpus:
    sentences: list[TokenSequence]
    vocab: Vocab
    source: str = ""
    n_dropped: int = 0
    token_counts: Counter = field(default_factory=Counter)

    def __len__(self) -> int:
        return len(self.sentences)

    def decode(self, s: TokenSequence) -> str:
        return " ".join(self.vocab.decode(s))


def build_vocab(sentences: list[list[str]], min_freq: int = 1) -> Vocab:
    """Vocabulary of tokens with frequency >= min_freq.

    Ordered by descending frequency, ties broken lexicographically, so the
    result does not depend on sentence order.
    """
    if not sentences:
        raise ContractError("build_vocab: no sentences")
    counts = Counter()
    for s in sentences:
        counts.update(s)
    for r in RESERVED:
        counts.pop(r, None)
    kept = sorted((t for t, c in counts.items() if c >= min_freq),
                  key=lambda t: (-counts[t], t))
    return Vocab(kept)


def load_corpus(path, vocab: Vocab | None = None, t_max: int = 64,
                max_sentences: int | None = None, min_freq: int = 1) -> Corpus:
    """Read a corpus file: lowercase, whitespace-tokenize, length-filter.

    Sentences longer than t_max tokens are dropped and counted.  With a
    supplied vocab, unseen tokens map to UNK; otherwise a vocabulary is
    built from the kept sentences.
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise CorpusError(f"cannot read corpus file {path}: {e}") from e
    lines = raw.split(b"\n")
    tokenized: list[list[str]] = []
    n_dropped = 0
    for lineno, line in enumerate(lines, start=1):
        try:
            text = line.decode("utf-8")
        except UnicodeDecodeError as e:
            raise CorpusError(f"{path}:{lineno}: invalid UTF-8: {e}") from e
        words = text.lower().split()
        if not words:
            continue
        if len(words) > t_max:
            n_dropped += 1
            continue
        tokenized.append(words)
        if max_sentences is not None and len(tokenized) >= max_sentences:
            break
    if not tokenized:
        raise CorpusError(f"{path}: no usable sentences")
    if vocab is None:
        vocab = build_vocab(tokenized, min_freq=min_freq)
    sentences = [vocab.encode(words) for words in tokenized]
    counts = Counter()
    for words in tokenized:
        counts.update(words)
    return Corpus(sentences, vocab, source=str(path), n_dropped=n_dropped,
                  token_counts=counts)


def split_corpus(corpus: Corpus, fractions: list[float], rng: RngStream) -> list[Corpus]:
    """Disjoint random subsets with floor(|corpus| * fraction) sentences each."""
    if any(f <= 0 for f in fractions):
        raise ContractError("split fractions must be positive")
    if sum(fractions) > 1.0 + 1e-9:
        raise ContractError("split fractions must sum to at most 1")
    n = len(corpus.sentences)
    sizes = [int(n * f) for f in fractions]
    if sum(sizes) > n:
        raise ContractError("split sizes exceed corpus size")
    perm = rng.permutation(n)
    out = []
    at = 0
    for size in sizes:
        idx = perm[at:at + size]
        at += size
        out.append(Corpus([corpus.sentences[i] for i in idx], corpus.vocab,
                          source=corpus.source, token_counts=corpus.token_counts))
    return out


def rare_token_counts(corpus: Corpus, threshold: int) -> dict[int, int]:
    """Token id -> occurrence count for tokens occurring fewer than `threshold` times."""
    out = {}
    for tok, c in corpus.token_counts.items():
        if 1 <= c < threshold and tok in corpus.vocab._index:
            out[corpus.vocab.id_of(tok)] = c
    return out


def write_corpus(path, sentences: list[TokenSequence], vocab: Vocab) -> None:
    lines = [" ".join(vocab.decode(s)) for s in sentences]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_vocab(path, vocab: Vocab) -> None:
    Path(path).write_text("\n".join(vocab.to_lines()) + "\n", encoding="utf-8")


def read_vocab(path) -> Vocab:
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise CorpusError(f"cannot read vocab file {path}: {e}") from e
    return Vocab.from_lines(lines)
