"""Monte-Carlo rollouts, discriminator action values, and REINFORCE updates.

Every rollout draws its uniforms from a stream keyed by (sequence stream,
position, rollout index), so action values are identical whether sequences
are processed one at a time or batched together.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .models import (Discriminator, GeneratorPolicy, OptimizerState,
                     _to_sequences, adam_update, disc_forward,
                     disc_token_batch, discriminator_score,
                     discriminator_scores, generator_grad, prefix_states,
                     sample_tokens, sigmoid, state_after_prefix, target_batch)
from .rng import RngStream
from .vocab import TokenSequence


def mc_rollouts(policy: GeneratorPolicy, prefix: TokenSequence, n: int,
                rng: RngStream) -> list[TokenSequence]:
    """Complete `prefix` n times by sampling the policy to EOS or t_max."""
    if n < 1:
        raise ContractError("mc_rollouts: n must be >= 1")
    prefix.validate(policy.vocab_size, policy.t_max)
    if prefix.is_complete(policy.t_max):
        return [prefix] * n
    steps = policy.t_max - len(prefix.ids)
    h0 = np.repeat(state_after_prefix(policy, prefix.ids), n, axis=0)
    u = np.stack([rng.derive(i).uniform(steps) for i in range(n)])
    toks, total_len, eos_flag = sample_tokens(policy, h0, u)
    return _to_sequences(prefix.ids, toks, total_len, eos_flag)


def action_values(policy: GeneratorPolicy, disc: Discriminator,
                  s: TokenSequence, n: int, rng: RngStream) -> np.ndarray:
    """Per-position action values Q_t for one complete sequence.

    Q_t averages the discriminator score of n rollouts continuing the
    prefix y_{1:t}; the final position is the exact score of the sequence.
    """
    return action_values_batch(policy, disc, [s], n, [rng])[0]


def action_values_batch(policy: GeneratorPolicy, disc: Discriminator,
                        seqs: list[TokenSequence], n: int,
                        streams: list[RngStream]) -> list[np.ndarray]:
    if n < 1:
        raise ContractError("action_values: n must be >= 1")
    if len(streams) != len(seqs):
        raise ContractError("action_values_batch: one rng stream per sequence")
    for s in seqs:
        s.validate(policy.vocab_size, policy.t_max)
        if not s.is_complete(policy.t_max):
            raise ContractError("action_values: sequence is not complete")
    lengths = np.array([len(s.ids) for s in seqs])
    tables = [np.zeros(t, dtype=np.float64) for t in lengths]
    if lengths.max(initial=0) == 0:
        return tables

    # Exact branch at the last position: the score of the full sequence.
    final_scores = discriminator_scores(disc, seqs)
    for b, s in enumerate(seqs):
        if lengths[b] > 0:
            tables[b][lengths[b] - 1] = final_scores[b]

    # Cached generator states (after BOS, y_1..y_t) and discriminator states
    # over the content prefix, reused by every rollout position.
    inp, _, _ = target_batch(seqs, include_eos=False)
    gen_states = prefix_states(policy, inp)
    tok, tok_lengths = disc_token_batch([TokenSequence(s.ids) for s in seqs])
    _, disc_states = disc_forward(disc, tok, tok_lengths, collect_states=True)

    max_t = int(lengths.max())
    for t in range(1, max_t):
        rows = np.flatnonzero(lengths > t)
        if rows.size == 0:
            continue
        steps = policy.t_max - t
        h0 = np.repeat(gen_states[rows, t + 1], n, axis=0)
        d0 = np.repeat(disc_states[rows, t], n, axis=0)
        u = np.stack([streams[b].derive(t, i).uniform(steps)
                      for b in rows for i in range(n)])
        toks, total_len, _ = sample_tokens(policy, h0, u)
        h_final = disc_forward(disc, toks, total_len, h0=d0)
        scores = sigmoid(h_final @ disc.params["head_w"] + disc.params["head_b"][0])
        scores = scores.astype(np.float64).reshape(rows.size, n)
        for j, b in enumerate(rows):
            tables[b][t - 1] = scores[j].mean()
    return tables


@dataclass
class MovingBaseline:
    """Optional moving-average reward baseline (off by default, per protocol)."""

    momentum: float = 0.9
    value: float = 0.0
    initialized: bool = False

    def update(self, mean_reward: float) -> None:
        if not self.initialized:
            self.value = mean_reward
            self.initialized = True
        else:
            self.value = self.momentum * self.value + (1.0 - self.momentum) * mean_reward


def policy_gradient_step(policy: GeneratorPolicy, disc: Discriminator,
                         batch: list[TokenSequence], n: int,
                         opt: OptimizerState, rng: RngStream,
                         baseline: MovingBaseline | None = None,
                         entropy_coef: float = 0.0,
                         q_tables: list[np.ndarray] | None = None) -> float:
    """One REINFORCE ascent step weighted by rollout action values.

    Accumulates grad of sum_t log pi(y_t|prefix) * Q_t per sequence,
    averaged over the batch, and applies one Adam step.  Returns the mean
    of all Q values.  `q_tables` substitutes externally computed action
    values (used by the enumeration-based verification suite).
    """
    if not batch:
        raise ContractError("policy_gradient_step: empty batch")
    if q_tables is None:
        q_tables = action_values_batch(policy, disc, batch, n,
                                       [rng.derive(b) for b in range(len(batch))])
    elif len(q_tables) != len(batch):
        raise ContractError("policy_gradient_step: one Q table per sequence")
    all_q = np.concatenate([q for q in q_tables if q.size]) if any(q.size for q in q_tables) \
        else np.zeros(0)
    mean_q = float(all_q.mean()) if all_q.size else 0.0

    inp, tgt, mask = target_batch(batch, include_eos=False)
    nb = len(batch)
    weights = np.zeros_like(mask)
    offset = baseline.value if (baseline is not None and baseline.initialized) else 0.0
    for b, q in enumerate(q_tables):
        if q.size != len(batch[b].ids):
            raise ContractError("policy_gradient_step: Q table length mismatch")
        weights[b, : q.size] = q - offset
    # Ascent on J == descent on -J: generator_grad minimizes -sum w*logp.
    if inp.shape[1] > 0:
        _, grads = generator_grad(policy, inp, tgt, weights=weights / nb,
                                  entropy_scale=entropy_coef / nb, mask=mask)
        adam_update(opt, policy.params, grads)
    if baseline is not None:
        baseline.update(mean_q)
    return mean_q
