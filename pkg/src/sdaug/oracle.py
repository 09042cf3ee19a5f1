"""Randomly initialized recurrent oracle defining the synthetic ground truth."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .models import GeneratorPolicy, generator_logprob_matrix, generator_sample, target_batch
from .rng import RngStream
from .vocab import N_RESERVED, TokenSequence


@dataclass
class OracleModel:
    """A frozen generator policy; bit-identical given (seed, dims)."""

    policy: GeneratorPolicy
    seed: int

    def __post_init__(self):
        for a in self.policy.params.values():
            a.flags.writeable = False


def oracle_init(seed: int, vocab_size: int, length: int,
                d_embed: int = 32, d_hidden: int = 64,
                init_std: float = 1.0) -> OracleModel:
    """Oracle over `vocab_size` content tokens emitting fixed-length sequences.

    Parameters are i.i.d. normal, mean 0, std 1.0 by default: wide enough
    that the oracle distribution is peaky and learning is measurable.
    """
    if vocab_size < 2:
        raise ContractError("oracle vocabulary needs at least 2 content tokens")
    rng = RngStream(seed, "oracle-init")
    policy = GeneratorPolicy.create(vocab_size + N_RESERVED, d_embed, d_hidden,
                                    t_max=length, fixed_length=True,
                                    rng=rng, init_std=init_std)
    return OracleModel(policy, seed)


def oracle_generate(oracle: OracleModel, count: int, rng: RngStream) -> list[TokenSequence]:
    """Sample `count` sequences of exactly the oracle's configured length."""
    if count < 1:
        raise ContractError("oracle_generate: count must be >= 1")
    return generator_sample(oracle.policy, rng, count)


def nll_oracle(oracle: OracleModel, generated: list[TokenSequence],
               batch_size: int = 512) -> float:
    """Mean negative log-likelihood of the sequences under the oracle."""
    if not generated:
        raise ContractError("nll_oracle: no sequences given")
    total = 0.0
    for i in range(0, len(generated), batch_size):
        chunk = generated[i:i + batch_size]
        inp, tgt, mask = target_batch(chunk, include_eos=False)
        if inp.shape[1] == 0:
            continue
        logp = generator_logprob_matrix(oracle.policy, inp, tgt, mask)
        total += float(-(logp * mask).sum())
    return total / len(generated)
