"""Encoder-decoder transformer in numpy with hand-written backpropagation.

Pre-norm residual blocks, learned token and position embeddings, GELU
feed-forward layers, causal decoder self-attention and encoder-decoder
cross-attention. Parameters live in one ordered dict; the order of
:meth:`Model.param_shapes` is the checkpoint layout.

Parameter count for ``d = dim``, ``f = ffn_mult * d``, vocabularies
``Vs``/``Vt`` and maximum lengths ``Ls``/``Lt``::

    (Vs + Ls + Vt + Lt) * d                                  embeddings
    + enc_layers * (4*d*d + 4*d  +  2*d*f + f + d  +  4*d)   encoder blocks
    + dec_layers * (8*d*d + 8*d  +  2*d*f + f + d  +  6*d)   decoder blocks
    + 4*d                                                    final norms
    + d*Vt + Vt                                              output layer
"""
import math
from collections import OrderedDict
from dataclasses import asdict, dataclass

import numpy as np

from ..codec import BOS, EOS, PAD

LN_EPS = 1e-5
_GELU_C = math.sqrt(2.0 / math.pi)


@dataclass(frozen=True)
class ModelConfig:
    src_vocab: int
    tgt_vocab: int
    max_src_len: int
    max_tgt_len: int
    enc_layers: int = 2
    dec_layers: int = 1
    dim: int = 64
    heads: int = 4
    ffn_mult: int = 4
    seed: int = 0
    dtype: str = "float64"

    def __post_init__(self):
        if self.dim % self.heads:
            raise ValueError(f"dim {self.dim} is not divisible by heads {self.heads}")
        if self.enc_layers < 1 or self.dec_layers < 1:
            raise ValueError("need at least one encoder and one decoder layer")
        if min(self.src_vocab, self.tgt_vocab, self.max_src_len, self.max_tgt_len, self.ffn_mult) < 1:
            raise ValueError("vocabularies, lengths and ffn_mult must be positive")
        if self.dtype not in ("float64", "float32"):
            raise ValueError("dtype must be float64 or float32")

    @property
    def head_dim(self):
        return self.dim // self.heads

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def param_count(cfg):
    d, f = cfg.dim, cfg.ffn_mult * cfg.dim
    emb = (cfg.src_vocab + cfg.max_src_len + cfg.tgt_vocab + cfg.max_tgt_len) * d
    enc = cfg.enc_layers * (4 * d * d + 4 * d + 2 * d * f + f + d + 4 * d)
    dec = cfg.dec_layers * (8 * d * d + 8 * d + 2 * d * f + f + d + 6 * d)
    return emb + enc + dec + 4 * d + d * cfg.tgt_vocab + cfg.tgt_vocab


# -- layer primitives --------------------------------------------------------

def _layernorm(x, g, b):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv, g)


def _layernorm_back(dy, cache, grads, prefix):
    xhat, inv, g = cache
    grads[prefix + ".g"] += (dy * xhat).reshape(-1, xhat.shape[-1]).sum(0)
    grads[prefix + ".b"] += dy.reshape(-1, xhat.shape[-1]).sum(0)
    dxhat = dy * g
    n = xhat.shape[-1]
    return inv / n * (n * dxhat - dxhat.sum(-1, keepdims=True)
                      - xhat * (dxhat * xhat).sum(-1, keepdims=True))


def _linear_back(dy, x, w, grads, prefix):
    grads[prefix + ".w"] += x.reshape(-1, x.shape[-1]).T @ dy.reshape(-1, dy.shape[-1])
    grads[prefix + ".b"] += dy.reshape(-1, dy.shape[-1]).sum(0)
    return dy @ w.T


def _gelu(x):
    t = np.tanh(_GELU_C * (x + 0.044715 * (x * x * x)))
    return 0.5 * x * (1.0 + t), t


def _gelu_back(dy, x, t):
    du = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)


class Model:
    """Parameters plus forward/backward passes.

    ``src`` is an int array ``(B, S)``; targets ``(B, T)`` hold target token
    ids without begin/end markers, right-padded with ``PAD``.
    """

    def __init__(self, cfg, params=None):
        self.cfg = cfg
        self.dtype = np.dtype(cfg.dtype)
        if params is None:
            params = self._init_params()
        self.params = params

    # -- parameters -----------------------------------------------------

    def param_shapes(self):
        c = self.cfg
        d, f = c.dim, c.ffn_mult * c.dim
        shapes = [("src_emb", (c.src_vocab, d)), ("src_pos", (c.max_src_len, d)),
                  ("tgt_emb", (c.tgt_vocab, d)), ("tgt_pos", (c.max_tgt_len, d))]

        def ln(name):
            return [(name + ".g", (d,)), (name + ".b", (d,))]

        def lin(name, i, o):
            return [(name + ".w", (i, o)), (name + ".b", (o,))]

        def attn(name):
            return sum((lin(f"{name}.{p}", d, d) for p in "qkvo"), [])

        def ffn(name):
            return lin(name + ".fc1", d, f) + lin(name + ".fc2", f, d)

        for i in range(c.enc_layers):
            p = f"enc{i}"
            shapes += ln(p + ".ln1") + attn(p + ".attn") + ln(p + ".ln2") + ffn(p + ".ffn")
        shapes += ln("enc_ln")
        for i in range(c.dec_layers):
            p = f"dec{i}"
            shapes += (ln(p + ".ln1") + attn(p + ".self") + ln(p + ".ln2") + attn(p + ".cross")
                       + ln(p + ".ln3") + ffn(p + ".ffn"))
        shapes += ln("dec_ln") + lin("out", d, c.tgt_vocab)
        return shapes

    def _init_params(self):
        rng = np.random.default_rng(self.cfg.seed)
        params = OrderedDict()
        for name, shape in self.param_shapes():
            if name.endswith(".g"):
                p = np.ones(shape)
            elif len(shape) == 1:
                p = np.zeros(shape)
            else:
                bound = math.sqrt(6.0 / (shape[0] + shape[1]))
                p = rng.uniform(-bound, bound, size=shape)
            params[name] = p.astype(self.dtype)
        return params

    def zero_grads(self):
        return OrderedDict((k, np.zeros_like(v)) for k, v in self.params.items())

    def num_params(self):
        return sum(p.size for p in self.params.values())

    def flat_params(self):
        return np.concatenate([p.ravel() for p in self.params.values()])

    # -- attention ------------------------------------------------------

    def _split(self, x):
        b, t, _ = x.shape
        return x.reshape(b, t, self.cfg.heads, self.cfg.head_dim).transpose(0, 2, 1, 3)

    def _merge(self, x):
        b, h, t, dh = x.shape
        return x.transpose(0, 2, 1, 3).reshape(b, t, h * dh)

    def _attn(self, name, xq, xkv, mask):
        p = self.params
        q = self._split(xq @ p[name + ".q.w"] + p[name + ".q.b"])
        k = self._split(xkv @ p[name + ".k.w"] + p[name + ".k.b"])
        v = self._split(xkv @ p[name + ".v.w"] + p[name + ".v.b"])
        scale = 1.0 / math.sqrt(self.cfg.head_dim)
        s = (q @ k.transpose(0, 1, 3, 2)) * scale
        s = np.where(mask, s, -np.inf)
        s = s - s.max(-1, keepdims=True)
        e = np.exp(s)
        a = e / e.sum(-1, keepdims=True)
        o = self._merge(a @ v)
        out = o @ p[name + ".o.w"] + p[name + ".o.b"]
        return out, (xq, xkv, q, k, v, a, o)

    def _attn_back(self, dout, name, cache, grads):
        xq, xkv, q, k, v, a, o = cache
        p = self.params
        scale = 1.0 / math.sqrt(self.cfg.head_dim)
        do = self._split(_linear_back(dout, o, p[name + ".o.w"], grads, name + ".o"))
        da = do @ v.transpose(0, 1, 3, 2)
        dv = a.transpose(0, 1, 3, 2) @ do
        ds = a * (da - (da * a).sum(-1, keepdims=True)) * scale
        dq = ds @ k
        dk = ds.transpose(0, 1, 3, 2) @ q
        dxq = _linear_back(self._merge(dq), xq, p[name + ".q.w"], grads, name + ".q")
        dxkv = _linear_back(self._merge(dk), xkv, p[name + ".k.w"], grads, name + ".k")
        dxkv = dxkv + _linear_back(self._merge(dv), xkv, p[name + ".v.w"], grads, name + ".v")
        return dxq, dxkv

    def _ffn(self, name, x):
        p = self.params
        h = x @ p[name + ".fc1.w"] + p[name + ".fc1.b"]
        g, t = _gelu(h)
        return g @ p[name + ".fc2.w"] + p[name + ".fc2.b"], (x, h, t, g)

    def _ffn_back(self, dy, name, cache, grads):
        x, h, t, g = cache
        p = self.params
        dg = _linear_back(dy, g, p[name + ".fc2.w"], grads, name + ".fc2")
        dh = _gelu_back(dg, h, t)
        return _linear_back(dh, x, p[name + ".fc1.w"], grads, name + ".fc1")

    # -- full passes ----------------------------------------------------

    def encode(self, src):
        c, p = self.cfg, self.params
        src = np.asarray(src)
        if src.shape[1] > c.max_src_len:
            raise ValueError(f"source length {src.shape[1]} exceeds max_src_len {c.max_src_len}")
        if src.min() < 0 or src.max() >= c.src_vocab:
            raise ValueError("source token id out of vocabulary")
        key_mask = (src != PAD)[:, None, None, :]
        x = p["src_emb"][src] + p["src_pos"][: src.shape[1]]
        caches = []
        for i in range(c.enc_layers):
            pre = f"enc{i}"
            h, ln1 = _layernorm(x, p[pre + ".ln1.g"], p[pre + ".ln1.b"])
            a, at = self._attn(pre + ".attn", h, h, key_mask)
            x = x + a
            h, ln2 = _layernorm(x, p[pre + ".ln2.g"], p[pre + ".ln2.b"])
            f, fc = self._ffn(pre + ".ffn", h)
            x = x + f
            caches.append((ln1, at, ln2, fc))
        mem, lnf = _layernorm(x, p["enc_ln.g"], p["enc_ln.b"])
        return mem, (src, key_mask, caches, lnf)

    def decode_logits(self, mem, key_mask, dec_in):
        c, p = self.cfg, self.params
        t = dec_in.shape[1]
        if t > c.max_tgt_len:
            raise ValueError(f"target length {t} exceeds max_tgt_len {c.max_tgt_len}")
        if dec_in.min() < 0 or dec_in.max() >= c.tgt_vocab:
            raise ValueError("target token id out of vocabulary")
        causal = np.tril(np.ones((t, t), dtype=bool))[None, None]
        x = p["tgt_emb"][dec_in] + p["tgt_pos"][:t]
        caches = []
        for i in range(c.dec_layers):
            pre = f"dec{i}"
            h, ln1 = _layernorm(x, p[pre + ".ln1.g"], p[pre + ".ln1.b"])
            a, sa = self._attn(pre + ".self", h, h, causal)
            x = x + a
            h, ln2 = _layernorm(x, p[pre + ".ln2.g"], p[pre + ".ln2.b"])
            a, ca = self._attn(pre + ".cross", h, mem, key_mask)
            x = x + a
            h, ln3 = _layernorm(x, p[pre + ".ln3.g"], p[pre + ".ln3.b"])
            f, fc = self._ffn(pre + ".ffn", h)
            x = x + f
            caches.append((ln1, sa, ln2, ca, ln3, fc))
        y, lnf = _layernorm(x, p["dec_ln.g"], p["dec_ln.b"])
        logits = y @ p["out.w"] + p["out.b"]
        return logits, (dec_in, caches, lnf, y)

    def forward(self, src, tgt):
        """Logits for teacher-forced decoding plus everything backward needs."""
        dec_in, dec_out = decoder_io(tgt)
        mem, enc_cache = self.encode(src)
        logits, dec_cache = self.decode_logits(mem, enc_cache[1], dec_in)
        return logits, dec_out, (enc_cache, dec_cache, mem)

    def loss(self, src, tgt):
        logits, dec_out, _ = self.forward(src, tgt)
        return cross_entropy(logits, dec_out)[0]

    def loss_and_grads(self, src, tgt):
        """Mean token cross-entropy over non-pad positions, and its exact
        gradient with respect to every parameter."""
        logits, dec_out, cache = self.forward(src, tgt)
        loss, dlogits = cross_entropy(logits, dec_out)
        return loss, self.backward(dlogits, cache)

    def backward(self, dlogits, cache):
        c, p = self.cfg, self.params
        enc_cache, dec_cache, mem = cache
        grads = self.zero_grads()
        dec_in, dcaches, lnf, y = dec_cache
        dx = _linear_back(dlogits, y, p["out.w"], grads, "out")
        dx = _layernorm_back(dx, lnf, grads, "dec_ln")
        dmem = np.zeros_like(mem)
        for i in reversed(range(c.dec_layers)):
            pre = f"dec{i}"
            ln1, sa, ln2, ca, ln3, fc = dcaches[i]
            dh = self._ffn_back(dx, pre + ".ffn", fc, grads)
            dx = dx + _layernorm_back(dh, ln3, grads, pre + ".ln3")
            dq, dkv = self._attn_back(dx, pre + ".cross", ca, grads)
            dmem += dkv
            dx = dx + _layernorm_back(dq, ln2, grads, pre + ".ln2")
            dq, dkv = self._attn_back(dx, pre + ".self", sa, grads)
            dx = dx + _layernorm_back(dq + dkv, ln1, grads, pre + ".ln1")
        t = dec_in.shape[1]
        np.add.at(grads["tgt_emb"], dec_in, dx)
        grads["tgt_pos"][:t] += dx.sum(0)

        src, _, ecaches, elnf = enc_cache
        dx = _layernorm_back(dmem, elnf, grads, "enc_ln")
        for i in reversed(range(c.enc_layers)):
            pre = f"enc{i}"
            ln1, at, ln2, fc = ecaches[i]
            dh = self._ffn_back(dx, pre + ".ffn", fc, grads)
            dx = dx + _layernorm_back(dh, ln2, grads, pre + ".ln2")
            dq, dkv = self._attn_back(dx, pre + ".attn", at, grads)
            dx = dx + _layernorm_back(dq + dkv, ln1, grads, pre + ".ln1")
        np.add.at(grads["src_emb"], src, dx)
        grads["src_pos"][: src.shape[1]] += dx.sum(0)
        return grads


def decoder_io(tgt):
    """Teacher-forcing pair: ``<bos> + tgt`` as input, ``tgt + <eos>`` as
    labels (padding stays padding)."""
    tgt = np.asarray(tgt, dtype=np.int64)
    b, t = tgt.shape
    lengths = (tgt != PAD).sum(1)
    dec_in = np.full((b, t + 1), PAD, dtype=np.int64)
    dec_in[:, 0] = BOS
    dec_in[:, 1:] = tgt
    dec_out = np.full((b, t + 1), PAD, dtype=np.int64)
    dec_out[:, :t] = tgt
    dec_out[np.arange(b), lengths] = EOS
    return dec_in, dec_out


def cross_entropy(logits, labels):
    """Mean cross-entropy over non-pad labels and its gradient."""
    z = logits - logits.max(-1, keepdims=True)
    e = np.exp(z)
    s = e.sum(-1, keepdims=True)
    logp = z - np.log(s)
    mask = labels != PAD
    count = mask.sum()
    if count == 0:
        raise ValueError("batch has no target tokens")
    picked = np.take_along_axis(logp, labels[..., None], -1)[..., 0]
    loss = -(picked * mask).sum() / count
    dlogits = e / s
    np.put_along_axis(dlogits, labels[..., None], np.take_along_axis(dlogits, labels[..., None], -1) - 1.0, -1)
    dlogits *= (mask / count)[..., None]
    return float(loss), dlogits
