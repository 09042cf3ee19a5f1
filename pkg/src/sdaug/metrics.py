"""Reference metrics and corpus evaluation scores.

BLEU here is sentence-level: clipped modified n-gram precisions with
uniform 1/n weights, the standard brevity penalty, and no smoothing (any
zero precision gives score 0), which keeps hand-computed oracles exact.
"""

from __future__ import annotations

import math
from collections import Counter

from .errors import ContractError
from .models import GeneratorPolicy, generator_logprobs
from .vocab import TokenSequence


def ngram_counts(tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _closest_ref_len(c: int, ref_lens: list[int]) -> int:
    return min(ref_lens, key=lambda r: (abs(r - c), r))


def bleu_n(candidate, references, n: int) -> float:
    """Sentence BLEU of order n against a list of token sequences.

    Accepts TokenSequence or plain token lists.  A candidate shorter than
    n tokens has an undefined top-order precision and scores 0.
    """
    if n < 1:
        raise ContractError("bleu_n: n must be >= 1")
    if not references:
        raise ContractError("bleu_n: references must be non-empty")
    cand = candidate.ids if isinstance(candidate, TokenSequence) else tuple(candidate)
    refs = [r.ids if isinstance(r, TokenSequence) else tuple(r) for r in references]
    return BleuScorer(refs, n).score_tokens(cand)


class BleuScorer:
    """BLEU against a fixed reference set, with precomputed clip tables."""

    def __init__(self, references, n: int):
        if n < 1:
            raise ContractError("BleuScorer: n must be >= 1")
        refs = [r.ids if isinstance(r, TokenSequence) else tuple(r) for r in references]
        if not refs:
            raise ContractError("BleuScorer: references must be non-empty")
        self.n = n
        self.ref_lens = sorted(len(r) for r in refs)
        self.max_counts: list[dict] = []
        for k in range(1, n + 1):
            table: dict = {}
            for r in refs:
                for g, c in ngram_counts(r, k).items():
                    if c > table.get(g, 0):
                        table[g] = c
            self.max_counts.append(table)

    def score(self, s: TokenSequence) -> float:
        return self.score_tokens(s.ids)

    def score_tokens(self, cand) -> float:
        c = len(cand)
        if c == 0:
            return 0.0
        log_sum = 0.0
        for k in range(1, self.n + 1):
            counts = ngram_counts(cand, k)
            total = max(c - k + 1, 0)
            if total == 0:
                return 0.0
            table = self.max_counts[k - 1]
            clipped = sum(min(v, table.get(g, 0)) for g, v in counts.items())
            if clipped == 0:
                return 0.0
            log_sum += math.log(clipped / total) / self.n
        r = _closest_ref_len(c, self.ref_lens)
        bp = 1.0 if c > r else math.exp(1.0 - r / c)
        return bp * math.exp(log_sum)


def self_bleu(corpus: list[TokenSequence], n: int) -> float:
    """Mean BLEU of each sentence against all the others.

    Uses top-2 per-ngram count tables so leave-one-out clipping does not
    require rebuilding reference tables per sentence.
    """
    if len(corpus) < 2:
        raise ContractError("self_bleu: need at least 2 sentences")
    toks = [s.ids if isinstance(s, TokenSequence) else tuple(s) for s in corpus]
    # tables[k][gram] = (best count, owner index, second-best count)
    tables: list[dict] = []
    for k in range(1, n + 1):
        table: dict = {}
        for i, t in enumerate(toks):
            for g, c in ngram_counts(t, k).items():
                best = table.get(g)
                if best is None:
                    table[g] = (c, i, 0)
                elif c > best[0]:
                    table[g] = (c, i, best[0])
                elif c > best[2]:
                    table[g] = (best[0], best[1], c)
        tables.append(table)
    lens = sorted(len(t) for t in toks)
    total = 0.0
    for i, cand in enumerate(toks):
        total += _self_bleu_one(cand, i, tables, lens, n)
    return total / len(toks)


def _self_bleu_one(cand, i: int, tables, lens, n: int) -> float:
    c = len(cand)
    if c == 0:
        return 0.0
    log_sum = 0.0
    for k in range(1, n + 1):
        counts = ngram_counts(cand, k)
        total = c - k + 1
        if total <= 0:
            return 0.0
        clipped = 0
        for g, v in counts.items():
            best, owner, second = tables[k - 1][g]
            clipped += min(v, second if owner == i else best)
        if clipped == 0:
            return 0.0
        log_sum += math.log(clipped / total) / n
    # brevity penalty against the other sentences' lengths
    pool = list(lens)
    pool.remove(c)
    r = _closest_ref_len(c, pool)
    bp = 1.0 if c > r else math.exp(1.0 - r / c)
    return bp * math.exp(log_sum)


def metric_model_nll(policy: GeneratorPolicy, s: TokenSequence) -> float:
    """Total model log-probability of the sequence; higher is better."""
    return float(generator_logprobs(policy, s).sum())


def count_rare_occurrences(s: TokenSequence, rare_counts: dict[int, int]) -> int:
    return sum(1 for t in s.ids if t in rare_counts)


def metric_rare_boost(base, rare_counts: dict[int, int], s: TokenSequence) -> float:
    """Base score plus 1/o^2 per occurrence of a rare token with corpus count o."""
    bonus = 0.0
    for t in s.ids:
        o = rare_counts.get(t)
        if o is not None:
            bonus += 1.0 / (o * o)
    return base.score(s) + bonus


def repeated_trigram_count(s: TokenSequence, order: int = 3) -> int:
    """Occurrences of repeated n-gram windows beyond each first occurrence."""
    toks = s.ids
    windows = max(len(toks) - order + 1, 0)
    if windows == 0:
        return 0
    return windows - len(set(tuple(toks[i:i + order]) for i in range(windows)))


def metric_repetition(base, s: TokenSequence, order: int = 3) -> float:
    """Base score plus 1/(o+1)^2 with o the repeated-trigram count.

    The bonus is maximal (1.0) for repetition-free sentences and shrinks as
    repetition grows, so ranking by this metric favors low repetition.
    """
    o = repeated_trigram_count(s, order)
    return base.score(s) + 1.0 / ((o + 1) * (o + 1))


def rare_occurrence_rate(corpus: list[TokenSequence], rare_ids) -> float:
    """Fraction of sentences containing at least one rare token."""
    if not corpus:
        raise ContractError("rare_occurrence_rate: empty corpus")
    rare = set(rare_ids)
    hits = sum(1 for s in corpus if any(t in rare for t in s.ids))
    return hits / len(corpus)


# ---------------------------------------------------------------------------
# reference-metric objects for buffer ranking


class ModelNLLMetric:
    """Ranks by current-policy log-probability (the synthetic-task metric)."""

    name = "model-nll"

    def __init__(self, policy: GeneratorPolicy):
        self.policy = policy

    def score(self, s: TokenSequence) -> float:
        return metric_model_nll(self.policy, s)


class BleuMetric:
    name = "bleu"

    def __init__(self, references, n: int = 3):
        if n not in (2, 3, 4, 5):
            raise ContractError("bleu metric order must be in 2..5")
        self.scorer = BleuScorer(references, n)
        self.n = n

    def score(self, s: TokenSequence) -> float:
        return self.scorer.score(s)


class RareBoostMetric:
    name = "rare-boost"

    def __init__(self, base: BleuMetric, rare_counts: dict[int, int]):
        for tok, o in rare_counts.items():
            if o < 1:
                raise ContractError(f"rare token {tok} has occurrence count {o} < 1")
        self.base = base
        self.rare_counts = dict(rare_counts)

    def score(self, s: TokenSequence) -> float:
        return metric_rare_boost(self.base, self.rare_counts, s)


class RepetitionMetric:
    name = "repetition"

    def __init__(self, base: BleuMetric, order: int = 3):
        self.base = base
        self.order = order

    def score(self, s: TokenSequence) -> float:
        return metric_repetition(self.base, s, self.order)
