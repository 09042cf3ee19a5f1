"""Two-stage training loop.

Stage I pre-trains the generator by maximum likelihood (with discriminator
warm-up).  Stage II alternates imitating-training-data steps with one
imitating-self-augmented step per cycle, where the self-augmented data is a
top-k buffer of the model's own generations ranked by a reference metric.
The step ratio starts at 6 and decays by 1 every 10 epochs down to 1.

Every random draw comes from a stream keyed by (seed, purpose, epoch, ...),
so a run is a pure function of (config, seed) and resuming from a
checkpoint replays exactly the epochs an uninterrupted run would produce.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

from .buffer import AugmentationBuffer, buffer_sample, buffer_update
from .config import TrainConfig
from .corpus import Corpus, rare_token_counts
from .errors import BufferEmpty, ContractError, DivergenceError
from .metrics import (BleuMetric, BleuScorer, ModelNLLMetric, RareBoostMetric,
                      RepetitionMetric)
from .models import (Discriminator, GeneratorPolicy, OptimizerState,
                     discriminator_step, generator_grad, generator_sample,
                     mle_step, target_batch)
from .nn import adam_update
from .oracle import OracleModel, nll_oracle
from .rng import RngStream
from .rollout import MovingBaseline, policy_gradient_step

log = logging.getLogger("sdaug")


def schedule_ratio(stage2_epoch: int, initial: int = 6, interval: int = 10,
                   floor: int = 1) -> int:
    """Imitating-training-data steps per imitating-self-augmented step."""
    if stage2_epoch < 0:
        raise ContractError("schedule_ratio: epoch must be >= 0")
    return max(floor, initial - stage2_epoch // interval)


def unlikelihood_step(policy: GeneratorPolicy, batch, rare_counts: dict[int, int],
                      opt: OptimizerState) -> float:
    """MLE step whose reported loss adds a constant 1/o bonus per rare token.

    The 1/o term does not depend on the parameters, so the applied gradient
    is exactly the MLE gradient.
    """
    if not batch:
        raise ContractError("unlikelihood_step: empty batch")
    for tok, o in rare_counts.items():
        if o < 1:
            raise ContractError(f"rare token {tok} has occurrence count {o} < 1")
    inp, tgt, mask = target_batch(batch, include_eos=True)
    n = len(batch)
    if inp.shape[1] == 0:
        return 0.0
    logp, grads = generator_grad(policy, inp, tgt, weights=mask / n, mask=mask)
    adam_update(opt, policy.params, grads)
    bonus = sum(1.0 / rare_counts[t] for s in batch for t in s.ids if t in rare_counts)
    return float(-(logp * mask).sum() / n) - bonus / n


@dataclass
class EpochReport:
    epoch: int
    stage: int
    ratio: int | None = None
    mle_loss: float | None = None
    disc_loss: float | None = None
    mean_reward: float | None = None
    buffer_size: int | None = None
    buffer_min: float | None = None
    buffer_max: float | None = None
    inserted: int | None = None
    nll_oracle: float | None = None
    bleu2: float | None = None


CSV_HEADER = ("epoch,stage,ratio,mle_loss,disc_loss,mean_reward,buffer_size,"
              "buffer_min,buffer_max,inserted,nll_oracle,bleu2")


def report_csv_row(r: EpochReport) -> str:
    def fmt(v):
        if v is None:
            return ""
        if isinstance(v, float):
            return repr(v)
        return str(v)

    return ",".join(fmt(v) for v in (r.epoch, r.stage, r.ratio, r.mle_loss,
                                     r.disc_loss, r.mean_reward, r.buffer_size,
                                     r.buffer_min, r.buffer_max, r.inserted,
                                     r.nll_oracle, r.bleu2))


@dataclass
class TrainState:
    policy: GeneratorPolicy
    disc: Discriminator
    gen_opt: OptimizerState
    disc_opt: OptimizerState
    buffer: AugmentationBuffer
    baseline: MovingBaseline
    mode: str
    stage1_done: int = 0
    stage2_done: int = 0


def init_state(cfg: TrainConfig, vocab_size: int, n_train: int) -> TrainState:
    root = RngStream(cfg.seed)
    policy = GeneratorPolicy.create(vocab_size, cfg.d_embed, cfg.d_hidden,
                                    cfg.t_max, cfg.fixed_length,
                                    root.derive("init-gen"), cfg.init_std)
    disc = Discriminator.create(vocab_size, cfg.d_embed, cfg.d_hidden,
                                root.derive("init-disc"), cfg.init_std)
    return TrainState(
        policy=policy, disc=disc,
        gen_opt=OptimizerState(lr=cfg.lr_mle),
        disc_opt=OptimizerState(lr=cfg.lr_disc),
        buffer=AugmentationBuffer(capacity=cfg.buffer_k(n_train)),
        baseline=MovingBaseline(), mode=cfg.mode,
    )


def make_metric(cfg: TrainConfig, corpus: Corpus, policy: GeneratorPolicy):
    """Reference metric for buffer ranking, per config.

    BLEU variants rank against a fixed per-run sample of training sentences,
    drawn once so scores stay comparable across the whole run.
    """
    if cfg.metric == "model-nll":
        return ModelNLLMetric(policy)
    refs_rng = RngStream(cfg.seed, "refset")
    n = len(corpus.sentences)
    if n <= cfg.metric_refs:
        refs = list(corpus.sentences)
    else:
        idx = refs_rng.choice(n, cfg.metric_refs, replace=False)
        refs = [corpus.sentences[int(i)] for i in idx]
    base = BleuMetric(refs, cfg.metric_bleu_n)
    if cfg.metric == "bleu":
        return base
    if cfg.metric == "rare-boost":
        rare = rare_token_counts(corpus, cfg.rare_threshold)
        if not rare:
            log.warning("rare-boost metric: no tokens below threshold %d", cfg.rare_threshold)
        return RareBoostMetric(base, rare)
    return RepetitionMetric(base)


def _check_finite(value: float, what: str, diag) -> None:
    if value is not None and not math.isfinite(value):
        if diag is not None:
            diag()
        raise DivergenceError(f"non-finite {what}: {value}")


def _batches(order, batch_size):
    for i in range(0, len(order), batch_size):
        yield [int(j) for j in order[i:i + batch_size]]


def _evaluate(cfg: TrainConfig, policy, oracle: OracleModel | None,
              eval_refs, global_epoch: int, seed: int):
    nll = bleu2 = None
    if oracle is not None and cfg.eval_samples > 0:
        samples = generator_sample(policy, RngStream(seed, "eval-gen", global_epoch),
                                   cfg.eval_samples)
        nll = nll_oracle(oracle, samples)
    if eval_refs is not None and cfg.eval_bleu_samples > 0:
        samples = generator_sample(policy, RngStream(seed, "eval-bleu", global_epoch),
                                   cfg.eval_bleu_samples)
        scorer = BleuScorer(eval_refs, 2)
        bleu2 = sum(scorer.score(s) for s in samples) / len(samples)
    return nll, bleu2


def run_stage1(cfg: TrainConfig, corpus: Corpus, state: TrainState,
               oracle: OracleModel | None = None, eval_refs=None,
               report_sink=None, ckpt_sink=None) -> list[EpochReport]:
    """MLE epochs (or unlikelihood in that mode) plus discriminator warm-up."""
    root = RngStream(cfg.seed)
    data = corpus.sentences
    reports = []
    rare = rare_token_counts(corpus, cfg.rare_threshold) if cfg.mode == "unlikelihood" else None
    diag = (lambda: ckpt_sink(state, "diagnostic")) if ckpt_sink else None
    for e in range(state.stage1_done, cfg.stage1_epochs):
        order = root.derive("s1-order", e).permutation(len(data))
        losses = []
        for batch_idx in _batches(order, cfg.batch_size):
            batch = [data[j] for j in batch_idx]
            if cfg.mode == "unlikelihood":
                losses.append(unlikelihood_step(state.policy, batch, rare, state.gen_opt))
            else:
                losses.append(mle_step(state.policy, batch, state.gen_opt))
        mle = sum(losses) / len(losses)
        _check_finite(mle, "stage-1 loss", diag)
        disc_loss = None
        if cfg.mode in ("sda", "rl-only"):
            n_batches = max(1, math.ceil(len(data) / cfg.batch_size))
            n_disc = cfg.stage1_disc_batches or n_batches
            dl = []
            disc_order = root.derive("s1-disc-order", e).permutation(len(data))
            for i in range(n_disc):
                lo = (i * cfg.batch_size) % len(data)
                idx = [int(disc_order[(lo + j) % len(data)]) for j in range(cfg.batch_size)]
                real = [data[j] for j in idx]
                fake = generator_sample(state.policy, root.derive("s1-fake", e, i), len(real))
                dl.append(discriminator_step(state.disc, real, fake, state.disc_opt))
            disc_loss = sum(dl) / len(dl)
            _check_finite(disc_loss, "stage-1 discriminator loss", diag)
        state.stage1_done = e + 1
        nll = bleu2 = None
        if cfg.eval_every and ((e + 1) % cfg.eval_every == 0 or e + 1 == cfg.stage1_epochs):
            nll, bleu2 = _evaluate(cfg, state.policy, oracle, eval_refs, e, cfg.seed)
        report = EpochReport(epoch=e, stage=1, mle_loss=mle, disc_loss=disc_loss,
                             nll_oracle=nll, bleu2=bleu2)
        reports.append(report)
        if report_sink:
            report_sink(report)
        if ckpt_sink and cfg.checkpoint_every and (e + 1) % cfg.checkpoint_every == 0:
            ckpt_sink(state, f"e{e:04d}")
    return reports


def run_stage2(cfg: TrainConfig, corpus: Corpus, state: TrainState,
               oracle: OracleModel | None = None, eval_refs=None,
               report_sink=None, ckpt_sink=None) -> list[EpochReport]:
    """Self-data-augmentation epochs (or RL-only ablation without the buffer)."""
    if cfg.mode not in ("sda", "rl-only"):
        return []
    root = RngStream(cfg.seed)
    data = corpus.sentences
    metric = make_metric(cfg, corpus, state.policy)
    if state.stage2_done == 0:
        # fresh optimizers at the stage-II learning rates
        state.gen_opt = OptimizerState(lr=cfg.lr_pg)
        state.disc_opt = OptimizerState(lr=cfg.lr_disc)
    baseline = state.baseline if cfg.baseline else None
    diag = (lambda: ckpt_sink(state, "diagnostic")) if ckpt_sink else None
    reports = []
    n_batches = max(1, math.ceil(len(data) / cfg.batch_size))
    for e in range(state.stage2_done, cfg.stage2_epochs):
        ratio = schedule_ratio(e, cfg.schedule_initial, cfg.schedule_interval,
                               cfg.schedule_floor)
        cycles = cfg.stage2_cycles_per_epoch or max(1, n_batches // max(ratio, 1))
        order = root.derive("s2-order", e).permutation(len(data))
        real_at = 0

        def next_real():
            nonlocal real_at
            idx = [int(order[(real_at + j) % len(data)]) for j in range(cfg.batch_size)]
            real_at += cfg.batch_size
            return [data[j] for j in idx]

        disc_losses = []
        rewards = []
        inserted = 0

        def one_step(real_side, stream_tag, cycle, j):
            fake = generator_sample(state.policy,
                                    root.derive("fake", stream_tag, e, cycle, j),
                                    len(real_side))
            disc_losses.append(discriminator_step(state.disc, real_side, fake,
                                                  state.disc_opt))
            pg_batch = generator_sample(state.policy,
                                        root.derive("pgbatch", stream_tag, e, cycle, j),
                                        cfg.batch_size)
            rewards.append(policy_gradient_step(
                state.policy, state.disc, pg_batch, cfg.rollouts, state.gen_opt,
                root.derive("pg", stream_tag, e, cycle, j),
                baseline=baseline, entropy_coef=cfg.entropy_coef))

        for cycle in range(cycles):
            if cfg.mode == "sda":
                cands = generator_sample(state.policy, root.derive("cand", e, cycle),
                                         cfg.candidates_per_cycle)
                inserted += buffer_update(state.buffer, cands, metric)
            for j in range(ratio):
                one_step(next_real(), "train", cycle, j)
            if cfg.mode == "sda":
                try:
                    aug = buffer_sample(state.buffer, cfg.batch_size,
                                        root.derive("augsample", e, cycle))
                except BufferEmpty:
                    log.warning("stage-2 epoch %d: buffer empty, skipping "
                                "imitating-self-augmented step", e)
                else:
                    one_step(aug, "aug", cycle, 0)
        disc_loss = sum(disc_losses) / len(disc_losses) if disc_losses else None
        mean_reward = sum(rewards) / len(rewards) if rewards else None
        _check_finite(disc_loss, "stage-2 discriminator loss", diag)
        _check_finite(mean_reward, "stage-2 mean reward", diag)
        state.stage2_done = e + 1
        global_epoch = cfg.stage1_epochs + e
        nll = bleu2 = None
        if cfg.eval_every and ((e + 1) % cfg.eval_every == 0 or e + 1 == cfg.stage2_epochs):
            nll, bleu2 = _evaluate(cfg, state.policy, oracle, eval_refs,
                                   global_epoch, cfg.seed)
        report = EpochReport(
            epoch=global_epoch, stage=2, ratio=ratio, disc_loss=disc_loss,
            mean_reward=mean_reward, buffer_size=len(state.buffer),
            buffer_min=state.buffer.min_score, buffer_max=state.buffer.max_score,
            inserted=inserted if cfg.mode == "sda" else None,
            nll_oracle=nll, bleu2=bleu2)
        reports.append(report)
        if report_sink:
            report_sink(report)
        if ckpt_sink and cfg.checkpoint_every and (e + 1) % cfg.checkpoint_every == 0:
            ckpt_sink(state, f"e{global_epoch:04d}")
    return reports


def run_training(cfg: TrainConfig, corpus: Corpus, oracle: OracleModel | None = None,
                 eval_refs=None, state: TrainState | None = None,
                 report_sink=None, ckpt_sink=None) -> tuple[TrainState, list[EpochReport]]:
    """Stage I then Stage II per config; `state` may come from a checkpoint."""
    cfg.validate()
    if cfg.fixed_length and oracle is None and cfg.eval_samples > 0 and cfg.eval_every > 0:
        raise ContractError("synthetic (fixed-length) training needs an oracle for NLL eval")
    if state is None:
        state = init_state(cfg, corpus.vocab.size, len(corpus.sentences))
    if state.policy.vocab_size != corpus.vocab.size:
        raise ContractError("checkpoint vocabulary size does not match the corpus")
    reports = run_stage1(cfg, corpus, state, oracle, eval_refs, report_sink, ckpt_sink)
    reports += run_stage2(cfg, corpus, state, oracle, eval_refs, report_sink, ckpt_sink)
    if ckpt_sink:
        ckpt_sink(state, "final")
    return state, reports
