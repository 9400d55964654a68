import math

import numpy as np
import pytest

from eigenlab import codec
from eigenlab.errors import TrainingDivergenceError
from eigenlab.nanoformer import (Adam, Model, ModelConfig, TrainConfig, cross_entropy, decoder_io,
                                 gradient_check, greedy_decode, load_checkpoint, lr_schedule,
                                 model_config_for, param_count, save_checkpoint, toy_problem, train,
                                 train_step)


def small_cfg(**kw):
    base = dict(src_vocab=30, tgt_vocab=20, max_src_len=9, max_tgt_len=7, dim=16, heads=2,
                enc_layers=1, dec_layers=1, seed=3)
    base.update(kw)
    return ModelConfig(**base)


def test_config_validation():
    with pytest.raises(ValueError):
        small_cfg(dim=10, heads=3)
    with pytest.raises(ValueError):
        small_cfg(dtype="float16")
    with pytest.raises(ValueError):
        small_cfg(enc_layers=0)


@pytest.mark.parametrize("kw", [{}, {"enc_layers": 3, "dec_layers": 2, "ffn_mult": 2}, {"dim": 32, "heads": 8}])
def test_param_count_closed_form(kw):
    cfg = small_cfg(**kw)
    assert Model(cfg).num_params() == param_count(cfg)


def test_init_deterministic():
    a, b = Model(small_cfg()), Model(small_cfg())
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    c = Model(small_cfg(seed=4))
    assert not np.array_equal(a.params["src_emb"], c.params["src_emb"])


def test_gradient_check():
    model, src, tgt = toy_problem()
    err, rows = gradient_check(model, src, tgt, count=250)
    assert len(rows) == 250
    assert len({r[0] for r in rows}) > 10
    assert err < 1e-4


def test_gradient_check_needs_float64():
    model = Model(small_cfg(dtype="float32"))
    with pytest.raises(ValueError):
        gradient_check(model, np.ones((1, 3), int), np.ones((1, 2), int))


def test_decoder_io():
    dec_in, dec_out = decoder_io(np.array([[5, 6, 7], [8, 9, 0]]))
    assert dec_in.tolist() == [[1, 5, 6, 7], [1, 8, 9, 0]]
    assert dec_out.tolist() == [[5, 6, 7, 2], [8, 9, 2, 0]]


def test_cross_entropy_uniform_and_mask():
    logits = np.zeros((2, 3, 10))
    labels = np.array([[4, 5, 0], [1, 0, 0]])
    loss, d = cross_entropy(logits, labels)
    assert loss == pytest.approx(math.log(10))
    assert np.all(d[labels == 0] == 0)
    with pytest.raises(ValueError):
        cross_entropy(logits, np.zeros((2, 3), int))


def test_initial_loss_near_log_vocab():
    cfg = model_config_for("P1000", "P1000", 2, "eigenvalues", dim=64)
    model = Model(cfg)
    rng = np.random.default_rng(0)
    src = rng.integers(3, cfg.src_vocab, (16, cfg.max_src_len))
    tgt = rng.integers(3, cfg.tgt_vocab, (16, cfg.max_tgt_len - 1))
    assert abs(model.loss(src, tgt) / math.log(cfg.tgt_vocab) - 1) < 0.10


def test_decoder_is_causal():
    model = Model(small_cfg())
    src = np.random.default_rng(1).integers(3, 30, (2, 9))
    mem, cache = model.encode(src)
    a = np.array([[1, 5, 6, 7, 8], [1, 9, 10, 11, 12]])
    b = a.copy()
    b[:, 3:] = [[13, 14], [15, 16]]
    la, _ = model.decode_logits(mem, cache[1], a)
    lb, _ = model.decode_logits(mem, cache[1], b)
    np.testing.assert_array_equal(la[:, :3], lb[:, :3])
    assert not np.allclose(la[:, 3:], lb[:, 3:])


def test_source_padding_ignored():
    model = Model(small_cfg())
    src = np.array([[4, 5, 6, 0, 0], [4, 5, 6, 7, 0]])
    src2 = src.copy()
    src2[0, 3:] = 0
    dec = np.array([[1, 3, 4], [1, 3, 4]])
    m1, c1 = model.encode(src)
    l1, _ = model.decode_logits(m1, c1[1], dec)
    one, c2 = model.encode(src[:1, :3])
    l2, _ = model.decode_logits(one, c2[1], dec[:1])
    np.testing.assert_allclose(l1[0], l2[0], rtol=1e-10, atol=1e-12)


def test_lr_schedule_values():
    cfg = TrainConfig(lr_max=1e-4, warmup_steps=10_000, cosine_period=4_000_000)
    assert lr_schedule(0, cfg) == 0.0
    assert lr_schedule(5_000, cfg) == pytest.approx(5e-5)
    assert lr_schedule(10_000, cfg) == pytest.approx(1e-4)
    assert lr_schedule(10_000 + 1_000_000, cfg) == pytest.approx(5e-5)
    assert lr_schedule(10_000 + 2_000_000, cfg) == pytest.approx(0.0, abs=1e-18)
    assert lr_schedule(10_000 + 4_000_000, cfg) == pytest.approx(1e-4)
    with pytest.raises(ValueError):
        lr_schedule(-1, cfg)


def test_adam_matches_reference():
    p = {"w": np.array([1.0, -2.0])}
    opt = Adam(p, 0.9, 0.999, 1e-8)
    g = {"w": np.array([0.5, -0.25])}
    opt.update(p, g, 0.1)
    # first Adam step moves each coordinate by lr * sign(g) (up to epsilon)
    np.testing.assert_allclose(p["w"], [0.9, -1.9], atol=1e-7)
    opt.update(p, g, 0.0)
    np.testing.assert_allclose(p["w"], [0.9, -1.9], atol=1e-7)
    assert opt.t == 2


def test_divergence_raises():
    model = Model(small_cfg())
    model.params["out.b"][:] = np.nan
    opt = Adam.for_config(model, TrainConfig())
    with pytest.raises(TrainingDivergenceError):
        train_step(model, opt, (np.ones((1, 4), int) * 4, np.ones((1, 3), int) * 4), 0, TrainConfig())


def test_overfit_eight_examples():
    cfg = small_cfg(dim=32, heads=4, enc_layers=1, dec_layers=1, seed=0)
    model = Model(cfg)
    rng = np.random.default_rng(2)
    src = rng.integers(3, cfg.src_vocab, (8, 9))
    tgt = rng.integers(3, cfg.tgt_vocab, (8, 6))
    tcfg = TrainConfig(lr_max=3e-3, warmup_steps=50, max_steps=2000, batch=8)
    done = {}

    def stop(step, acc):
        done["step"] = step
        return model.loss(src, tgt) < 0.05

    rows = train(model, TrainConfig(**{**tcfg.to_dict(), "eval_every": 25}), lambda s: (src, tgt),
                 eval_fn=lambda m: 0.0, stop_fn=stop)
    assert model.loss(src, tgt) < 0.05, rows[-1]
    assert done["step"] < 2000
    out = greedy_decode(model, src, 7)
    assert all(np.array_equal(o, t) for o, t in zip(out, tgt))


def test_train_log(tmp_path):
    model = Model(small_cfg())
    src = np.full((2, 9), 4)
    tgt = np.full((2, 6), 5)
    path = tmp_path / "log.csv"
    rows = train(model, TrainConfig(max_steps=5, warmup_steps=2, eval_every=2), lambda s: (src, tgt),
                 eval_fn=lambda m: 0.5, log_path=path)
    lines = path.read_text().splitlines()
    assert lines[0] == "step,lr,loss,eval_accuracy" and len(lines) == 6
    assert [r[3] for r in rows] == [None, 0.5, None, 0.5, 0.5]


def test_greedy_decode_lengths():
    model = Model(small_cfg())
    out = greedy_decode(model, np.full((3, 9), 4), 6)
    assert len(out) == 3 and all(len(o) <= 6 for o in out)
    assert all(codec.EOS not in o.tolist() for o in out)


@pytest.mark.parametrize("dtype", ["float64", "float32"])
def test_checkpoint_roundtrip(tmp_path, dtype):
    model = Model(small_cfg(dtype=dtype))
    for v in model.params.values():
        v += 0.01
    p = tmp_path / "m.ckpt"
    save_checkpoint(p, model, step=17, extra={"note": "x"})
    back, header = load_checkpoint(p)
    assert header["step"] == 17 and header["extra"] == {"note": "x"}
    assert back.cfg == model.cfg
    for k in model.params:
        assert np.array_equal(back.params[k], model.params[k])
        assert back.params[k].dtype == np.dtype(dtype)
    src = np.full((1, 9), 5)
    assert np.array_equal(greedy_decode(back, src, 6)[0], greedy_decode(model, src, 6)[0])


def test_checkpoint_rejects_garbage(tmp_path):
    p = tmp_path / "bad"
    p.write_bytes(b"not a checkpoint")
    with pytest.raises(ValueError):
        load_checkpoint(p)
    model = Model(small_cfg())
    save_checkpoint(p, model)
    p.write_bytes(p.read_bytes()[:-8])
    with pytest.raises(ValueError):
        load_checkpoint(p)


def test_model_config_for_lengths():
    cfg = model_config_for("FP15", "P1000", 5, "diagonalization")
    assert cfg.max_src_len == 26 and cfg.max_tgt_len == 30 * 3 + 1
    assert cfg.src_vocab == codec.get_scheme("FP15").vocab_size


def test_float32_step_runs():
    model = Model(small_cfg(dtype="float32"))
    loss, grads = model.loss_and_grads(np.full((2, 9), 4), np.full((2, 6), 5))
    assert math.isfinite(loss)
    assert all(g.dtype == np.float32 for g in grads.values())
