"""Training configuration: flat `key = value` text files, flags win."""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ContractError

MODES = ("sda", "rl-only", "mle-only", "unlikelihood")
METRICS = ("model-nll", "bleu", "rare-boost", "repetition")


@dataclass
class TrainConfig:
    mode: str = "sda"
    seed: int = 0
    stage1_epochs: int = 50
    stage2_epochs: int = 50
    batch_size: int = 64
    d_embed: int = 32
    d_hidden: int = 64
    cell: str = "gru"
    t_max: int = 20
    fixed_length: bool = False
    init_std: float = 0.1

    lr_mle: float = 1e-3
    lr_pg: float = 1e-4
    lr_disc: float = 1e-4

    rollouts: int = 16
    buffer_capacity: int = 0          # 0 = min(10000, 10% of training set)
    metric: str = "bleu"
    metric_bleu_n: int = 3
    metric_refs: int = 1000
    rare_threshold: int = 50

    schedule_initial: int = 6
    schedule_interval: int = 10
    schedule_floor: int = 1

    stage2_cycles_per_epoch: int = 0  # 0 = one real-data pass worth of cycles
    candidates_per_cycle: int = 256
    stage1_disc_batches: int = 0      # 0 = one full pass per epoch

    baseline: bool = False
    entropy_coef: float = 0.0

    eval_every: int = 5
    eval_samples: int = 10000
    eval_bleu_samples: int = 0        # 0 = skip BLEU during training epochs
    checkpoint_every: int = 0         # 0 = final checkpoint only

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ContractError(f"invalid config value mode={self.mode!r} (choose from {MODES})")
        if self.metric not in METRICS:
            raise ContractError(f"invalid config value metric={self.metric!r} (choose from {METRICS})")
        if self.cell != "gru":
            raise ContractError(f"unsupported cell type {self.cell!r} (only 'gru' is implemented)")
        if self.schedule_floor < 1:
            raise ContractError("schedule_floor must be >= 1")
        if self.schedule_interval < 1:
            raise ContractError("schedule_interval must be >= 1")
        if self.rollouts < 1:
            raise ContractError("rollouts must be >= 1")
        if self.metric_bleu_n not in (2, 3, 4, 5):
            raise ContractError("metric_bleu_n must be in 2..5")
        if self.rare_threshold < 1:
            raise ContractError("rare_threshold must be >= 1")
        for name in ("stage1_epochs", "stage2_epochs", "batch_size", "t_max",
                     "d_embed", "d_hidden", "candidates_per_cycle"):
            if getattr(self, name) < 0:
                raise ContractError(f"{name} must be >= 0")

    def buffer_k(self, n_train: int) -> int:
        if self.buffer_capacity > 0:
            return self.buffer_capacity
        return min(10000, max(1, n_train // 10))


_FIELDS = {f.name: f.type for f in fields(TrainConfig)}
_BOOLS = {"fixed_length", "baseline"}
_FLOATS = {"lr_mle", "lr_pg", "lr_disc", "entropy_coef", "init_std"}
_STRINGS = {"mode", "metric", "cell"}


def _parse_value(key: str, raw: str):
    if key in _STRINGS:
        return raw
    if key in _BOOLS:
        if raw.lower() in ("true", "1", "yes", "on"):
            return True
        if raw.lower() in ("false", "0", "no", "off"):
            return False
        raise ContractError(f"invalid boolean for config key {key}: {raw!r}")
    if key in _FLOATS:
        try:
            return float(raw)
        except ValueError:
            raise ContractError(f"invalid number for config key {key}: {raw!r}") from None
    try:
        return int(raw)
    except ValueError:
        raise ContractError(f"invalid integer for config key {key}: {raw!r}") from None


def parse_config_text(text: str, base: TrainConfig | None = None) -> TrainConfig:
    cfg = base or TrainConfig()
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ContractError(f"config line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in _FIELDS:
            raise ContractError(f"unknown config key {key!r} (line {lineno})")
        setattr(cfg, key, _parse_value(key, raw))
    cfg.validate()
    return cfg


def load_config(path, base: TrainConfig | None = None) -> TrainConfig:
    return parse_config_text(Path(path).read_text(encoding="utf-8"), base)


def apply_overrides(cfg: TrainConfig, overrides: dict[str, str]) -> TrainConfig:
    for key, raw in overrides.items():
        if key not in _FIELDS:
            raise ContractError(f"unknown config key {key!r}")
        setattr(cfg, key, _parse_value(key, raw))
    cfg.validate()
    return cfg


def config_text(cfg: TrainConfig) -> str:
    """Canonical serialization; the run manifest snapshots these bytes."""
    lines = []
    for f in fields(TrainConfig):
        v = getattr(cfg, f.name)
        if isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, float):
            v = repr(v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"
