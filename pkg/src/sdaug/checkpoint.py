"""Binary checkpoint container.

Layout (all integers little-endian):

    magic       4 bytes  b"SDAF"
    version     u16      currently 1
    kind        u8       0 = training checkpoint, 1 = oracle model
    vocab_size  u32
    d_embed     u32
    d_hidden    u32
    t_max       u32
    fixed_len   u8
    mode        u8       index into config.MODES (kind 0 only; 0 otherwise)
    stage1_done u32      completed stage-1 epochs
    stage2_done u32      completed stage-2 epochs

followed by the generator tensors in GEN_PARAM_ORDER, then (kind 0 only)
the discriminator tensors in DISC_PARAM_ORDER, two optimizer blocks
(generator, discriminator), and the buffer block.  Every tensor is a u32
element count followed by that many little-endian float32 values, flattened
row-major.  An optimizer block is u64 step, f64 lr/beta1/beta2/eps, u8
has-moments, then first- and second-moment tensors in the owning model's
parameter order.  The buffer block is u32 capacity, u64 next-counter, u32
metric-failure count, u32 entry count, then per entry: u64 insertion
counter, f64 score, u8 eos flag, u32 length, and that many u32 token ids.
The file ends with the reward-baseline state: f64 value, u8 initialized.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .buffer import AugmentationBuffer, BufferEntry
from .config import MODES
from .errors import ContractError
from .models import DISC_PARAM_ORDER, GEN_PARAM_ORDER, Discriminator, GeneratorPolicy
from .nn import OptimizerState
from .oracle import OracleModel
from .vocab import TokenSequence

MAGIC = b"SDAF"
VERSION = 1
KIND_TRAIN = 0
KIND_ORACLE = 1


class _Writer:
    def __init__(self):
        self.parts: list[bytes] = []

    def pack(self, fmt: str, *vals):
        self.parts.append(struct.pack("<" + fmt, *vals))

    def tensor(self, a: np.ndarray):
        flat = np.ascontiguousarray(a, dtype="<f4").reshape(-1)
        self.pack("I", flat.size)
        self.parts.append(flat.tobytes())

    def bytes(self) -> bytes:
        return b"".join(self.parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.at = 0

    def unpack(self, fmt: str):
        fmt = "<" + fmt
        size = struct.calcsize(fmt)
        vals = struct.unpack_from(fmt, self.data, self.at)
        self.at += size
        return vals if len(vals) > 1 else vals[0]

    def tensor(self, shape) -> np.ndarray:
        count = self.unpack("I")
        expected = int(np.prod(shape)) if shape else 1
        if count != expected:
            raise ContractError(f"checkpoint tensor size {count} != expected {expected}")
        a = np.frombuffer(self.data, dtype="<f4", count=count, offset=self.at)
        self.at += 4 * count
        return a.reshape(shape).astype(np.float32)


def _param_shapes(vocab_size: int, d_e: int, d_h: int, kind_disc: bool):
    shapes = {
        "emb": (vocab_size, d_e),
        "wx": (d_e, 3 * d_h),
        "wh": (d_h, 3 * d_h),
        "b_ih": (3 * d_h,),
        "b_hh": (3 * d_h,),
    }
    if kind_disc:
        shapes["head_w"] = (d_h,)
        shapes["head_b"] = (1,)
    else:
        shapes["out_w"] = (d_h, vocab_size)
        shapes["out_b"] = (vocab_size,)
    return shapes


def _write_opt(w: _Writer, opt: OptimizerState, order):
    w.pack("Q", opt.step)
    w.pack("dddd", opt.lr, opt.beta1, opt.beta2, opt.eps)
    has = 1 if opt.m else 0
    w.pack("B", has)
    if has:
        for name in order:
            w.tensor(opt.m[name])
        for name in order:
            w.tensor(opt.v[name])


def _read_opt(r: _Reader, order, shapes) -> OptimizerState:
    step = r.unpack("Q")
    lr, b1, b2, eps = r.unpack("dddd")
    opt = OptimizerState(lr=lr, beta1=b1, beta2=b2, eps=eps, step=step)
    if r.unpack("B"):
        opt.m = {name: r.tensor(shapes[name]) for name in order}
        opt.v = {name: r.tensor(shapes[name]) for name in order}
    return opt


def save_checkpoint(path, policy: GeneratorPolicy, disc: Discriminator,
                    gen_opt: OptimizerState, disc_opt: OptimizerState,
                    buf: AugmentationBuffer, mode: str,
                    stage1_done: int, stage2_done: int,
                    baseline_value: float = 0.0, baseline_init: bool = False) -> None:
    w = _Writer()
    w.parts.append(MAGIC)
    w.pack("HB", VERSION, KIND_TRAIN)
    w.pack("IIII", policy.vocab_size, policy.d_embed, policy.d_hidden, policy.t_max)
    w.pack("BB", int(policy.fixed_length), MODES.index(mode))
    w.pack("II", stage1_done, stage2_done)
    for name in GEN_PARAM_ORDER:
        w.tensor(policy.params[name])
    for name in DISC_PARAM_ORDER:
        w.tensor(disc.params[name])
    _write_opt(w, gen_opt, GEN_PARAM_ORDER)
    _write_opt(w, disc_opt, DISC_PARAM_ORDER)
    w.pack("I", buf.capacity)
    w.pack("Q", buf.next_counter)
    w.pack("I", buf.metric_failures)
    entries = buf.ranked()
    w.pack("I", len(entries))
    for e in entries:
        w.pack("Qd", e.counter, e.score)
        w.pack("B", int(e.seq.eos))
        w.pack("I", len(e.seq.ids))
        for t in e.seq.ids:
            w.pack("I", t)
    _atomic_write(path, w.bytes())


def save_oracle(path, oracle: OracleModel) -> None:
    p = oracle.policy
    w = _Writer()
    w.parts.append(MAGIC)
    w.pack("HB", VERSION, KIND_ORACLE)
    w.pack("IIII", p.vocab_size, p.d_embed, p.d_hidden, p.t_max)
    w.pack("BB", int(p.fixed_length), 0)
    w.pack("II", 0, 0)
    for name in GEN_PARAM_ORDER:
        w.tensor(p.params[name])
    w.pack("q", oracle.seed)
    _atomic_write(path, w.bytes())


def _atomic_write(path, data: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)


def _read_header(r: _Reader, expect_kind: int):
    if r.data[:4] != MAGIC:
        raise ContractError("not a checkpoint file (bad magic)")
    r.at = 4
    version, kind = r.unpack("HB")
    if version != VERSION:
        raise ContractError(f"unsupported checkpoint version {version}")
    if kind != expect_kind:
        raise ContractError("checkpoint kind mismatch")
    vocab_size, d_e, d_h, t_max = r.unpack("IIII")
    fixed_len, mode_idx = r.unpack("BB")
    s1, s2 = r.unpack("II")
    return vocab_size, d_e, d_h, t_max, bool(fixed_len), mode_idx, s1, s2


def load_checkpoint(path) -> dict:
    r = _Reader(Path(path).read_bytes())
    vocab_size, d_e, d_h, t_max, fixed_len, mode_idx, s1, s2 = _read_header(r, KIND_TRAIN)
    gen_shapes = _param_shapes(vocab_size, d_e, d_h, kind_disc=False)
    disc_shapes = _param_shapes(vocab_size, d_e, d_h, kind_disc=True)
    gen_params = {name: r.tensor(gen_shapes[name]) for name in GEN_PARAM_ORDER}
    disc_params = {name: r.tensor(disc_shapes[name]) for name in DISC_PARAM_ORDER}
    policy = GeneratorPolicy(gen_params, vocab_size, d_e, d_h, t_max, fixed_len)
    disc = Discriminator(disc_params, vocab_size, d_e, d_h)
    gen_opt = _read_opt(r, GEN_PARAM_ORDER, gen_shapes)
    disc_opt = _read_opt(r, DISC_PARAM_ORDER, disc_shapes)
    capacity = r.unpack("I")
    next_counter = r.unpack("Q")
    failures = r.unpack("I")
    n_entries = r.unpack("I")
    entries = {}
    for _ in range(n_entries):
        counter, score = r.unpack("Qd")
        eos = bool(r.unpack("B"))
        length = r.unpack("I")
        ids = tuple(r.unpack("I") for _ in range(length))
        s = TokenSequence(ids, eos=eos)
        entries[s.key()] = BufferEntry(s, score, counter)
    buf = AugmentationBuffer(capacity=capacity, entries=entries,
                             next_counter=next_counter, metric_failures=failures)
    return {
        "policy": policy, "disc": disc, "gen_opt": gen_opt, "disc_opt": disc_opt,
        "buffer": buf, "mode": MODES[mode_idx],
        "stage1_done": s1, "stage2_done": s2,
    }


def load_oracle(path) -> OracleModel:
    r = _Reader(Path(path).read_bytes())
    vocab_size, d_e, d_h, t_max, fixed_len, _, _, _ = _read_header(r, KIND_ORACLE)
    shapes = _param_shapes(vocab_size, d_e, d_h, kind_disc=False)
    params = {name: r.tensor(shapes[name]) for name in GEN_PARAM_ORDER}
    policy = GeneratorPolicy(params, vocab_size, d_e, d_h, t_max, fixed_len)
    seed = r.unpack("q")
    return OracleModel(policy, seed)
