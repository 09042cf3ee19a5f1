"""Autoregressive generator policy and binary sequence discriminator.

Both are embedding -> GRU -> head stacks over token ids.  Training gradients
are hand-derived (backprop through time over the cached per-step GRU state);
losses accumulate in float64 while parameters stay float32.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import vocab as V
from .errors import ContractError
from .nn import (OptimizerState, Params, adam_update, gru_backward,
                 gru_step, gru_step_cached, init_gru_params,
                 masked_log_softmax, sigmoid, zero_grads)
from .rng import RngStream
from .vocab import EOS, PAD, TokenSequence, support_mask_for

GEN_PARAM_ORDER = ("emb", "wx", "wh", "b_ih", "b_hh", "out_w", "out_b")
DISC_PARAM_ORDER = ("emb", "wx", "wh", "b_ih", "b_hh", "head_w", "head_b")


@dataclass
class GeneratorPolicy:
    """Policy over next tokens: embedding, GRU cell, output projection."""

    params: Params
    vocab_size: int
    d_embed: int
    d_hidden: int
    t_max: int
    fixed_length: bool

    def __post_init__(self):
        self.support = support_mask_for(self.vocab_size, self.fixed_length)

    @classmethod
    def create(cls, vocab_size: int, d_embed: int, d_hidden: int, t_max: int,
               fixed_length: bool, rng: RngStream, init_std: float = 0.1,
               dtype=np.float32) -> "GeneratorPolicy":
        if t_max < 1:
            raise ContractError("t_max must be at least 1")
        params = {"emb": rng.normal((vocab_size, d_embed), init_std).astype(dtype)}
        params.update(init_gru_params(d_embed, d_hidden, rng.derive("cell"), init_std, dtype))
        params["out_w"] = rng.normal((d_hidden, vocab_size), init_std).astype(dtype)
        params["out_b"] = rng.normal((vocab_size,), init_std).astype(dtype)
        return cls(params, vocab_size, d_embed, d_hidden, t_max, fixed_length)

    @classmethod
    def zeros(cls, vocab_size: int, d_embed: int, d_hidden: int, t_max: int,
              fixed_length: bool, dtype=np.float32) -> "GeneratorPolicy":
        params = {
            "emb": np.zeros((vocab_size, d_embed), dtype),
            "wx": np.zeros((d_embed, 3 * d_hidden), dtype),
            "wh": np.zeros((d_hidden, 3 * d_hidden), dtype),
            "b_ih": np.zeros((3 * d_hidden,), dtype),
            "b_hh": np.zeros((3 * d_hidden,), dtype),
            "out_w": np.zeros((d_hidden, vocab_size), dtype),
            "out_b": np.zeros((vocab_size,), dtype),
        }
        return cls(params, vocab_size, d_embed, d_hidden, t_max, fixed_length)

    @property
    def n_effective(self) -> int:
        return int(self.support.sum())

    @property
    def dtype(self):
        return self.params["emb"].dtype

    def copy(self) -> "GeneratorPolicy":
        return GeneratorPolicy({k: v.copy() for k, v in self.params.items()},
                               self.vocab_size, self.d_embed, self.d_hidden,
                               self.t_max, self.fixed_length)

    def astype(self, dtype) -> "GeneratorPolicy":
        return GeneratorPolicy({k: v.astype(dtype) for k, v in self.params.items()},
                               self.vocab_size, self.d_embed, self.d_hidden,
                               self.t_max, self.fixed_length)


@dataclass
class Discriminator:
    """Recurrent encoder scoring how real a complete sequence looks, in (0,1)."""

    params: Params
    vocab_size: int
    d_embed: int
    d_hidden: int

    @classmethod
    def create(cls, vocab_size: int, d_embed: int, d_hidden: int, rng: RngStream,
               init_std: float = 0.1, dtype=np.float32) -> "Discriminator":
        params = {"emb": rng.normal((vocab_size, d_embed), init_std).astype(dtype)}
        params.update(init_gru_params(d_embed, d_hidden, rng.derive("cell"), init_std, dtype))
        params["head_w"] = rng.normal((d_hidden,), init_std).astype(dtype)
        params["head_b"] = rng.normal((1,), init_std).astype(dtype)
        return cls(params, vocab_size, d_embed, d_hidden)

    @classmethod
    def zeros(cls, vocab_size: int, d_embed: int, d_hidden: int,
              dtype=np.float32) -> "Discriminator":
        params = {
            "emb": np.zeros((vocab_size, d_embed), dtype),
            "wx": np.zeros((d_embed, 3 * d_hidden), dtype),
            "wh": np.zeros((d_hidden, 3 * d_hidden), dtype),
            "b_ih": np.zeros((3 * d_hidden,), dtype),
            "b_hh": np.zeros((3 * d_hidden,), dtype),
            "head_w": np.zeros((d_hidden,), dtype),
            "head_b": np.zeros((1,), dtype),
        }
        return cls(params, vocab_size, d_embed, d_hidden)

    def copy(self) -> "Discriminator":
        return Discriminator({k: v.copy() for k, v in self.params.items()},
                             self.vocab_size, self.d_embed, self.d_hidden)

    def astype(self, dtype) -> "Discriminator":
        return Discriminator({k: v.astype(dtype) for k, v in self.params.items()},
                             self.vocab_size, self.d_embed, self.d_hidden)


# ---------------------------------------------------------------------------
# batching helpers


def target_batch(seqs: list[TokenSequence], include_eos: bool = True):
    """Padded (inputs, targets, mask) for teacher-forced scoring.

    Targets are the content ids plus, when `include_eos` and the sequence is
    EOS-terminated, the EOS id.  Inputs are the targets shifted right with
    BOS prepended.  `mask` is 1.0 at real positions, 0.0 at padding.
    """
    if not seqs:
        raise ContractError("empty batch")
    rows = []
    for s in seqs:
        tgt = list(s.ids)
        if include_eos and s.eos:
            tgt.append(EOS)
        rows.append(tgt)
    length = max((len(r) for r in rows), default=0)
    n = len(rows)
    tgt = np.full((n, length), PAD, dtype=np.int64)
    mask = np.zeros((n, length), dtype=np.float64)
    for i, r in enumerate(rows):
        tgt[i, : len(r)] = r
        mask[i, : len(r)] = 1.0
    inp = np.empty_like(tgt)
    if length > 0:
        inp[:, 0] = V.BOS
        inp[:, 1:] = tgt[:, :-1]
    return inp, tgt, mask


def _validate_batch(policy: GeneratorPolicy, seqs: list[TokenSequence]):
    for s in seqs:
        s.validate(policy.vocab_size, policy.t_max)


# ---------------------------------------------------------------------------
# generator forward / backward


def generator_logprob_matrix(policy: GeneratorPolicy, inp: np.ndarray,
                             tgt: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Log-probability of each target position; masked positions are 0."""
    p = policy.params
    n, length = inp.shape
    h = np.zeros((n, policy.d_hidden), dtype=policy.dtype)
    out = np.zeros((n, length), dtype=np.float64)
    rows = np.arange(n)
    for t in range(length):
        h = gru_step(p, p["emb"][inp[:, t]], h)
        logits = h @ p["out_w"] + p["out_b"]
        _, lp = masked_log_softmax(logits, policy.support)
        out[:, t] = np.where(mask[:, t] > 0, lp[rows, tgt[:, t]], 0.0)
    return out


def generator_grad(policy: GeneratorPolicy, inp: np.ndarray, tgt: np.ndarray,
                   weights: np.ndarray, entropy_scale: float = 0.0,
                   mask: np.ndarray | None = None):
    """Gradients of  L = -sum_{b,t} weights[b,t] * log p(tgt[b,t] | prefix).

    Returns (logp matrix, grads).  `weights` already folds the batch
    normalization and any per-position reward; zero weight skips a position.
    With `entropy_scale` > 0 an exact per-step entropy bonus gradient
    (scaled by `mask`) is added, which lowers L as entropy grows.
    """
    p = policy.params
    n, length = inp.shape
    if mask is None:
        mask = (weights != 0).astype(np.float64)
    h = np.zeros((n, policy.d_hidden), dtype=policy.dtype)
    rows = np.arange(n)
    caches = []
    hs = []
    probs_steps = []
    logp_steps = []
    logp_tgt = np.zeros((n, length), dtype=np.float64)
    for t in range(length):
        x = p["emb"][inp[:, t]]
        h, cache = gru_step_cached(p, x, h)
        logits = h @ p["out_w"] + p["out_b"]
        pr, lp = masked_log_softmax(logits, policy.support)
        logp_tgt[:, t] = np.where(mask[:, t] > 0, lp[rows, tgt[:, t]], 0.0)
        caches.append(cache)
        hs.append(h)
        probs_steps.append(pr)
        logp_steps.append(lp if entropy_scale else None)
    grads = zero_grads(p)
    dh = np.zeros_like(h)
    w32 = weights.astype(policy.dtype)
    for t in reversed(range(length)):
        pr = probs_steps[t]
        w = w32[:, t]
        dlogits = pr * w[:, None]
        dlogits[rows, tgt[:, t]] -= w
        if entropy_scale:
            lp_safe = np.where(pr > 0, logp_steps[t], 0.0)
            ent = -(pr * lp_safe).sum(axis=1, keepdims=True)
            dlogits += (entropy_scale * mask[:, t, None]).astype(policy.dtype) \
                * pr * (lp_safe + ent).astype(policy.dtype)
        grads["out_w"] += hs[t].T @ dlogits
        grads["out_b"] += dlogits.sum(axis=0)
        dh = dh + dlogits @ p["out_w"].T
        dx, dh = gru_backward(p, caches[t], dh, grads)
        np.add.at(grads["emb"], inp[:, t], dx)
    return logp_tgt, grads


def generator_logprobs(policy: GeneratorPolicy, s: TokenSequence) -> np.ndarray:
    """Per-content-token log-probabilities log p(y_t | BOS, y_{1:t-1})."""
    s.validate(policy.vocab_size)
    if len(s.ids) == 0:
        return np.zeros(0, dtype=np.float64)
    inp, tgt, mask = target_batch([TokenSequence(s.ids)], include_eos=False)
    return generator_logprob_matrix(policy, inp, tgt, mask)[0]


def sequence_logprob(policy: GeneratorPolicy, s: TokenSequence,
                     include_eos: bool = False) -> float:
    """Total log-probability of a sequence (optionally counting the EOS step)."""
    s.validate(policy.vocab_size)
    inp, tgt, mask = target_batch([s], include_eos=include_eos)
    if inp.shape[1] == 0:
        return 0.0
    return float(generator_logprob_matrix(policy, inp, tgt, mask)[0].sum())


# ---------------------------------------------------------------------------
# sampling


def policy_initial_state(policy: GeneratorPolicy, count: int) -> np.ndarray:
    """Hidden state after consuming BOS, tiled `count` times."""
    p = policy.params
    x = np.broadcast_to(p["emb"][V.BOS], (count, policy.d_embed))
    h0 = np.zeros((count, policy.d_hidden), dtype=policy.dtype)
    return gru_step(p, x, h0)


def advance_state(policy: GeneratorPolicy, h: np.ndarray, tokens: np.ndarray) -> np.ndarray:
    return gru_step(policy.params, policy.params["emb"][tokens], h)


def next_token_probs(policy: GeneratorPolicy, h: np.ndarray) -> np.ndarray:
    logits = h @ policy.params["out_w"] + policy.params["out_b"]
    probs, _ = masked_log_softmax(logits, policy.support)
    return probs


def sample_tokens(policy: GeneratorPolicy, h0: np.ndarray, u: np.ndarray):
    """Autoregressive sampling driven by pre-drawn uniforms.

    Row i consumes u[i, s] at step s via inverse-CDF over the supported
    softmax, so draws are independent of how rows are batched.  Returns
    (tokens incl. any EOS, emitted length, eos flags); tokens beyond the
    emitted length are PAD.
    """
    n, steps = u.shape
    toks = np.full((n, steps), PAD, dtype=np.int64)
    total_len = np.zeros(n, dtype=np.int64)
    eos_flag = np.zeros(n, dtype=bool)
    alive = np.ones(n, dtype=bool)
    h = h0
    vmax = policy.vocab_size - 1
    for s in range(steps):
        pr = next_token_probs(policy, h)
        cdf = np.cumsum(pr, axis=1)
        tok = (cdf < u[:, s, None]).sum(axis=1)
        np.minimum(tok, vmax, out=tok)
        toks[alive, s] = tok[alive]
        total_len[alive] += 1
        ended = alive & (tok == EOS)
        eos_flag |= ended
        alive = alive & ~ended
        if not alive.any():
            break
        h = advance_state(policy, h, tok)
    return toks, total_len, eos_flag


def _to_sequences(prefix: tuple[int, ...], toks, total_len, eos_flag) -> list[TokenSequence]:
    out = []
    for i in range(toks.shape[0]):
        content_len = int(total_len[i]) - int(eos_flag[i])
        ids = prefix + tuple(int(t) for t in toks[i, :content_len])
        out.append(TokenSequence(ids, eos=bool(eos_flag[i])))
    return out


def generator_sample(policy: GeneratorPolicy, rng: RngStream, count: int) -> list[TokenSequence]:
    """Sample `count` sequences from BOS until EOS or t_max."""
    if count < 1:
        raise ContractError("generator_sample: count must be >= 1")
    h0 = policy_initial_state(policy, count)
    u = rng.uniform((count, policy.t_max))
    toks, total_len, eos_flag = sample_tokens(policy, h0, u)
    return _to_sequences((), toks, total_len, eos_flag)


def state_after_prefix(policy: GeneratorPolicy, ids: tuple[int, ...]) -> np.ndarray:
    h = policy_initial_state(policy, 1)
    for t in ids:
        h = advance_state(policy, h, np.array([t]))
    return h


def prefix_states(policy: GeneratorPolicy, inp: np.ndarray) -> np.ndarray:
    """States h[:, j] after consuming the first j input columns (j=0..L)."""
    n, length = inp.shape
    p = policy.params
    hs = np.zeros((n, length + 1, policy.d_hidden), dtype=policy.dtype)
    h = hs[:, 0]
    for t in range(length):
        h = gru_step(p, p["emb"][inp[:, t]], h)
        hs[:, t + 1] = h
    return hs


# ---------------------------------------------------------------------------
# generator training steps


def mle_step(policy: GeneratorPolicy, batch: list[TokenSequence],
             opt: OptimizerState) -> float:
    """One Adam step on mean per-sequence NLL; returns the pre-step loss."""
    if not batch:
        raise ContractError("mle_step: empty batch")
    _validate_batch(policy, batch)
    inp, tgt, mask = target_batch(batch, include_eos=True)
    n = len(batch)
    if inp.shape[1] == 0:
        return 0.0
    logp, grads = generator_grad(policy, inp, tgt, weights=mask / n, mask=mask)
    adam_update(opt, policy.params, grads)
    return float(-(logp * mask).sum() / n)


def mle_loss(policy: GeneratorPolicy, batch: list[TokenSequence]) -> float:
    inp, tgt, mask = target_batch(batch, include_eos=True)
    if inp.shape[1] == 0:
        return 0.0
    logp = generator_logprob_matrix(policy, inp, tgt, mask)
    return float(-(logp * mask).sum() / len(batch))


# ---------------------------------------------------------------------------
# discriminator


def disc_token_batch(seqs: list[TokenSequence]):
    """Padded token matrix the discriminator reads: content plus final EOS."""
    if not seqs:
        raise ContractError("empty batch")
    rows = [list(s.ids) + ([EOS] if s.eos else []) for s in seqs]
    length = max((len(r) for r in rows), default=0)
    tok = np.full((len(rows), max(length, 1)), PAD, dtype=np.int64)
    lengths = np.zeros(len(rows), dtype=np.int64)
    for i, r in enumerate(rows):
        tok[i, : len(r)] = r
        lengths[i] = len(r)
    return tok, lengths


def disc_forward(disc: Discriminator, tok: np.ndarray, lengths: np.ndarray,
                 h0: np.ndarray | None = None, collect_states: bool = False):
    """Final hidden state after each row's unpadded tokens.

    PAD positions carry the previous state through, which makes scores
    invariant to padding by construction.
    """
    p = disc.params
    n, length = tok.shape
    h = np.zeros((n, disc.d_hidden), dtype=p["emb"].dtype) if h0 is None else h0
    states = np.zeros((n, length + 1, disc.d_hidden), dtype=h.dtype) if collect_states else None
    if collect_states:
        states[:, 0] = h
    for t in range(length):
        active = t < lengths
        if not active.any():
            break
        h_new = gru_step(p, p["emb"][tok[:, t]], h)
        h = np.where(active[:, None], h_new, h)
        if collect_states:
            states[:, t + 1] = h
    return (h, states) if collect_states else h


def disc_logits(disc: Discriminator, tok: np.ndarray, lengths: np.ndarray,
                h0: np.ndarray | None = None) -> np.ndarray:
    h = disc_forward(disc, tok, lengths, h0=h0)
    return h @ disc.params["head_w"] + disc.params["head_b"][0]


def discriminator_score(disc: Discriminator, s: TokenSequence) -> float:
    """Realness probability in (0,1); deterministic in the inputs."""
    s.validate(disc.vocab_size)
    tok, lengths = disc_token_batch([s])
    return float(sigmoid(disc_logits(disc, tok, lengths))[0])


def discriminator_scores(disc: Discriminator, seqs: list[TokenSequence]) -> np.ndarray:
    tok, lengths = disc_token_batch(seqs)
    return sigmoid(disc_logits(disc, tok, lengths)).astype(np.float64)


def disc_grad(disc: Discriminator, tok: np.ndarray, lengths: np.ndarray,
              dlogit: np.ndarray, grads: Params):
    """Accumulate parameter gradients given d(loss)/d(head logit) per row."""
    p = disc.params
    n, length = tok.shape
    h = np.zeros((n, disc.d_hidden), dtype=p["emb"].dtype)
    caches = []
    for t in range(length):
        active = (t < lengths)
        x = p["emb"][tok[:, t]]
        h_new, cache = gru_step_cached(p, x, h)
        h = np.where(active[:, None], h_new, h)
        caches.append((cache, active))
    grads["head_w"] += h.T @ dlogit.astype(h.dtype)
    grads["head_b"] += dlogit.sum(dtype=np.float64).astype(p["head_b"].dtype)
    dh = dlogit[:, None].astype(h.dtype) * p["head_w"]
    for t in reversed(range(length)):
        cache, active = caches[t]
        act = active[:, None]
        dx, dh_prev = gru_backward(p, cache, dh * act, grads)
        np.add.at(grads["emb"], tok[:, t][active], dx[active])
        dh = dh_prev * act + dh * ~act


def discriminator_step(disc: Discriminator, real: list[TokenSequence],
                       fake: list[TokenSequence], opt: OptimizerState) -> float:
    """One Adam step on -mean log D(real) - mean log(1 - D(fake))."""
    if not real or not fake:
        raise ContractError("discriminator_step: empty batch")
    grads = zero_grads(disc.params)
    loss = 0.0
    for seqs, label in ((real, 1.0), (fake, 0.0)):
        tok, lengths = disc_token_batch(seqs)
        logit = disc_logits(disc, tok, lengths).astype(np.float64)
        # -log D = softplus(-logit); -log(1-D) = softplus(logit)
        loss += float(np.logaddexp(0.0, -logit if label else logit).mean())
        dlogit = (sigmoid(logit) - label) / len(seqs)
        disc_grad(disc, tok, lengths, dlogit, grads)
    adam_update(opt, disc.params, grads)
    return loss
