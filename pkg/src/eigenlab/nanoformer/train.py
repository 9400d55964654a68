"""Optimizer, schedule, training loop, decoding and checkpoints."""
import csv
import json
import math
import struct
from dataclasses import asdict, dataclass

import numpy as np

from ..codec import BOS, EOS, PAD
from ..errors import TrainingDivergenceError
from .model import Model, ModelConfig

CHECKPOINT_MAGIC = b"NANOFORMER-CKPT\x01"


@dataclass(frozen=True)
class TrainConfig:
    lr_max: float = 1e-4
    batch: int = 64
    warmup_steps: int = 10_000
    cosine_period: int = 4_000_000
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    max_steps: int = 1000
    eval_every: int = 0

    def __post_init__(self):
        if self.warmup_steps < 1:
            raise ValueError("warmup_steps must be >= 1")
        if self.cosine_period <= 0:
            raise ValueError("cosine_period must be positive")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def lr_schedule(step, cfg):
    """Linear warmup to ``lr_max``, then cosine with warm restarts every
    ``cosine_period`` steps."""
    if step < 0:
        raise ValueError("step must be >= 0")
    if step < cfg.warmup_steps:
        return cfg.lr_max * step / cfg.warmup_steps
    phase = 2.0 * math.pi * (step - cfg.warmup_steps) / cfg.cosine_period
    return 0.5 * cfg.lr_max * (1.0 + math.cos(phase))


class Adam:
    def __init__(self, params, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.beta1, self.beta2, self.epsilon = beta1, beta2, epsilon
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    @classmethod
    def for_config(cls, model, cfg):
        return cls(model.params, cfg.beta1, cfg.beta2, cfg.epsilon)

    def update(self, params, grads, lr):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for k, p in params.items():
            g = grads[k]
            m = self.m[k]
            v = self.v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            if lr != 0.0:
                p -= (lr / c1) * m / (np.sqrt(v / c2) + self.epsilon)


def train_step(model, opt, batch, step, cfg, lr=None):
    """One Adam step on ``batch = (src, tgt)``; returns the pre-update loss.

    ``lr`` overrides the schedule (used by smoke tests).
    """
    src, tgt = batch
    loss, grads = model.loss_and_grads(src, tgt)
    if not math.isfinite(loss):
        raise TrainingDivergenceError(f"non-finite loss {loss} at step {step}")
    rate = lr_schedule(step, cfg) if lr is None else lr
    opt.update(model.params, grads, rate)
    return loss


def train(model, cfg, batch_fn, eval_fn=None, log_path=None, start_step=0, stop_fn=None):
    """Run ``cfg.max_steps`` steps. ``batch_fn(step)`` supplies batches;
    ``eval_fn(model)`` returns an accuracy in [0, 1] and runs every
    ``cfg.eval_every`` steps (and after the last one).

    ``stop_fn(step, accuracy)`` may end training early by returning True.
    Returns the list of log rows ``(step, lr, loss, eval_accuracy)``.
    """
    opt = Adam.for_config(model, cfg)
    rows = []
    writer = fh = None
    if log_path:
        fh = open(log_path, "w", newline="", encoding="utf-8")
        writer = csv.writer(fh)
        writer.writerow(["step", "lr", "loss", "eval_accuracy"])
    try:
        for step in range(start_step, start_step + cfg.max_steps):
            loss = train_step(model, opt, batch_fn(step), step, cfg)
            acc = None
            done = step + 1 - start_step
            if eval_fn is not None and ((cfg.eval_every and done % cfg.eval_every == 0)
                                        or done == cfg.max_steps):
                acc = eval_fn(model)
            row = (step, lr_schedule(step, cfg), loss, acc)
            rows.append(row)
            if writer:
                writer.writerow([step, f"{row[1]:.6g}", f"{loss:.6f}", "" if acc is None else f"{acc:.6f}"])
            if stop_fn is not None and acc is not None and stop_fn(step, acc):
                break
    finally:
        if fh:
            fh.close()
    return rows


def greedy_decode(model, src, max_len):
    """Argmax decoding for a batch of sources.

    Returns a list with one int array per source: the generated tokens up to
    (not including) ``<eos>``, or ``max_len`` tokens if none was produced.
    """
    src = np.atleast_2d(np.asarray(src, dtype=np.int64))
    b = src.shape[0]
    max_len = min(max_len, model.cfg.max_tgt_len)
    mem, cache = model.encode(src)
    key_mask = cache[1]
    seq = np.full((b, 1), BOS, dtype=np.int64)
    finished = np.zeros(b, dtype=bool)
    lengths = np.full(b, max_len)
    for t in range(max_len):
        logits, _ = model.decode_logits(mem, key_mask, seq)
        nxt = logits[:, -1, :].argmax(-1)
        newly = (~finished) & (nxt == EOS)
        lengths[newly] = t
        finished |= newly
        seq = np.concatenate([seq, np.where(finished, PAD, nxt)[:, None]], axis=1)
        if finished.all():
            break
    return [seq[i, 1:1 + lengths[i]].copy() for i in range(b)]


# -- checkpoints -------------------------------------------------------------
# Layout: magic, u64 little-endian header length, UTF-8 JSON header, then the
# parameters as one flat little-endian float64 blob in declaration order.

def save_checkpoint(path, model, step=0, extra=None):
    header = {
        "model": model.cfg.to_dict(),
        "shapes": [[name, list(shape)] for name, shape in model.param_shapes()],
        "step": int(step),
        "dtype": "<f8",
    }
    if extra:
        header["extra"] = extra
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    blob = np.concatenate([p.ravel() for p in model.params.values()]).astype("<f8").tobytes()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<Q", len(head)))
        f.write(head)
        f.write(blob)


def load_checkpoint(path):
    """Returns ``(model, header)``."""
    with open(path, "rb") as f:
        raw = f.read()
    if not raw.startswith(CHECKPOINT_MAGIC):
        raise ValueError(f"{path}: not a checkpoint")
    pos = len(CHECKPOINT_MAGIC)
    (hlen,) = struct.unpack_from("<Q", raw, pos)
    pos += 8
    header = json.loads(raw[pos:pos + hlen].decode("utf-8"))
    pos += hlen
    flat = np.frombuffer(raw, dtype="<f8", offset=pos)
    cfg = ModelConfig.from_dict(header["model"])
    model = Model(cfg)
    expected = model.param_shapes()
    if [[n, list(s)] for n, s in expected] != header["shapes"]:
        raise ValueError(f"{path}: parameter layout does not match its config")
    total = sum(int(np.prod(s)) for _, s in expected)
    if flat.size != total:
        raise ValueError(f"{path}: blob has {flat.size} values, expected {total}")
    off = 0
    for name, shape in expected:
        size = int(np.prod(shape))
        model.params[name] = flat[off:off + size].reshape(shape).astype(cfg.dtype)
        off += size
    return model, header


def model_config_for(src_scheme, tgt_scheme, n, task, **kwargs):
    """Config sized for one task: vocabularies from the schemes, lengths from
    ``n`` and the task."""
    from .. import codec
    s = codec.get_scheme(src_scheme)
    t = codec.get_scheme(tgt_scheme)
    src_len = 1 + n * n * s.tokens_per_value
    tgt_len = codec.target_values(task, n) * t.tokens_per_value + 1
    return ModelConfig(src_vocab=s.vocab_size, tgt_vocab=t.vocab_size, max_src_len=src_len,
                       max_tgt_len=tgt_len, **kwargs)

