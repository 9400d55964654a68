"""Central finite-difference check of the analytic gradients."""
import numpy as np

from .model import Model


def gradient_check(model, src, tgt, count=200, h=1e-5, floor=1e-6, seed=0):
    """Compare analytic and central-difference gradients on ``count``
    parameter coordinates drawn uniformly from all tensors.

    The relative error of a coordinate is ``|a - n| / max(|a| + |n|, floor)``;
    the floor keeps coordinates whose true gradient is 0 (the attention key
    bias, for one: softmax ignores a per-row shift) from dividing noise by
    noise. Requires a float64 model. Returns ``(max_rel_err, rows)`` with one
    ``(name, flat_index, analytic, numeric, rel_err)`` row per coordinate.
    """
    if model.cfg.dtype != "float64":
        raise ValueError("gradient checks need a float64 model")
    _, grads = model.loss_and_grads(src, tgt)
    names = list(model.params)
    sizes = np.array([model.params[k].size for k in names])
    rng = np.random.default_rng(seed)
    flat = rng.choice(sizes.sum(), size=min(count, int(sizes.sum())), replace=False)
    bounds = np.cumsum(sizes)
    rows = []
    for g in np.sort(flat):
        t = int(np.searchsorted(bounds, g, side="right"))
        name = names[t]
        idx = int(g - (bounds[t] - sizes[t]))
        p = model.params[name].reshape(-1)
        old = p[idx]
        p[idx] = old + h
        up = model.loss(src, tgt)
        p[idx] = old - h
        down = model.loss(src, tgt)
        p[idx] = old
        num = (up - down) / (2 * h)
        ana = float(grads[name].reshape(-1)[idx])
        rel = abs(ana - num) / max(abs(ana) + abs(num), floor)
        rows.append((name, idx, ana, num, rel))
    return max(r[4] for r in rows), rows


def toy_problem(src_vocab=40, tgt_vocab=30, batch=4, src_len=7, tgt_len=5, seed=0, **kw):
    """A small random model and batch for gradient checks (float64)."""
    from .model import ModelConfig
    cfg = ModelConfig(src_vocab=src_vocab, tgt_vocab=tgt_vocab, max_src_len=src_len,
                      max_tgt_len=tgt_len + 1, seed=seed, dtype="float64",
                      **{"dim": 16, "heads": 2, "enc_layers": 2, "dec_layers": 2, **kw})
    model = Model(cfg)
    rng = np.random.default_rng(seed + 1)
    src = rng.integers(3, src_vocab, (batch, src_len))
    tgt = rng.integers(3, tgt_vocab, (batch, tgt_len))
    tgt[0, -2:] = 0    # one padded target exercises the label mask
    # larger-than-init weights so every layer carries signal
    for k, v in model.params.items():
        if not k.endswith(".g"):
            v += 0.05 * rng.standard_normal(v.shape)
    return model, src, tgt
