"""Recurrent predictor, transformer autoencoder, optimizer, and checkpoints."""

import numpy as np
import pytest

from myofiber.seqmodel import (
    AdamW,
    BlstmConfig,
    PlateauScheduler,
    TaeConfig,
    Tensor,
    TrainConfig,
    extract_blstm_embeddings,
    extract_tae_embeddings,
    init_blstm_params,
    init_tae_params,
    load_checkpoint,
    masked_mse,
    pad_batch,
    predict_future,
    quantize_params,
    save_checkpoint,
    sinusoidal_encoding,
    split_pretext,
    tae_encode,
    tae_forward,
    train_model,
)
from myofiber.seqmodel.blstm import blstm_forward, lstm_cell


# -- LSTM cell against an independent scalar oracle --------------------------

def _scalar_lstm_step(x, h, c, W, U, b, H):
    """Loop-based re-derivation of the cell equations, no vectorization."""
    def sig(v):
        return 1.0 / (1.0 + np.exp(-v))

    z = np.zeros(4 * H)
    for col in range(4 * H):
        acc = b[col]
        for i in range(len(x)):
            acc += x[i] * W[i, col]
        for j in range(H):
            acc += h[j] * U[j, col]
        z[col] = acc
    h_new = np.zeros(H)
    c_new = np.zeros(H)
    for j in range(H):
        i_g = sig(z[j])
        f_g = sig(z[H + j])
        g_g = np.tanh(z[2 * H + j])
        o_g = sig(z[3 * H + j])
        c_new[j] = f_g * c[j] + i_g * g_g
        h_new[j] = o_g * np.tanh(c_new[j])
    return h_new, c_new


def test_lstm_cell_matches_scalar_oracle():
    rng = np.random.default_rng(0)
    H, F = 3, 4
    W = rng.normal(size=(F, 4 * H))
    U = rng.normal(size=(H, 4 * H))
    b = rng.normal(size=4 * H)
    x = rng.normal(size=(1, F))
    h = rng.normal(size=(1, H))
    c = rng.normal(size=(1, H))
    h_new, c_new = lstm_cell(Tensor(x), Tensor(h), Tensor(c), Tensor(W), Tensor(U), Tensor(b), H)
    h_ref, c_ref = _scalar_lstm_step(x[0], h[0], c[0], W, U, b, H)
    np.testing.assert_allclose(h_new.data[0], h_ref, atol=1e-12)
    np.testing.assert_allclose(c_new.data[0], c_ref, atol=1e-12)


def test_blstm_reversal_swaps_directions():
    # with forward/backward weights tied, feeding the reversed sequence swaps
    # the two halves of the final state
    rng = np.random.default_rng(1)
    cfg = BlstmConfig(layers=1, hidden=4, input_dim=3, horizon=2)
    params = init_blstm_params(cfg, rng)
    for name in ("W", "U", "b"):
        params[f"l0_bwd_{name}"] = Tensor.param(params[f"l0_fwd_{name}"].data.copy())
    x = rng.normal(size=(1, 7, 3))
    mask = np.ones((1, 7))
    _, fin = blstm_forward(x, mask, params, cfg)
    _, fin_rev = blstm_forward(x[:, ::-1, :].copy(), mask, params, cfg)
    H = cfg.hidden
    np.testing.assert_allclose(fin.data[:, :H], fin_rev.data[:, H:], atol=1e-12)
    np.testing.assert_allclose(fin.data[:, H:], fin_rev.data[:, :H], atol=1e-12)


def test_blstm_padding_cannot_leak():
    rng = np.random.default_rng(2)
    cfg = BlstmConfig(layers=2, hidden=5, input_dim=3, horizon=2)
    params = init_blstm_params(cfg, rng)
    seqs = [rng.normal(size=(6, 3)), rng.normal(size=(4, 3))]
    x, mask = pad_batch(seqs)
    seq_out, fin = blstm_forward(x, mask, params, cfg)
    # perturb every padded position wildly
    x2 = x.copy()
    x2[mask == 0] = 1e6
    seq_out2, fin2 = blstm_forward(x2, mask, params, cfg)
    assert np.abs(fin.data - fin2.data).max() < 1e-12
    valid = mask.astype(bool)
    assert np.abs(seq_out.data[valid] - seq_out2.data[valid]).max() < 1e-12
    # batched result equals the unpadded single-sequence run
    _, fin_single = blstm_forward(seqs[1][None], np.ones((1, 4)), params, cfg)
    np.testing.assert_allclose(fin.data[1], fin_single.data[0], atol=1e-12)


def test_split_pretext_and_pad_batch():
    seq = np.arange(60.0).reshape(30, 2)
    past, future = split_pretext(seq, horizon=25)
    assert past.shape == (5, 2)
    assert future.shape == (25, 2)
    np.testing.assert_array_equal(np.vstack([past, future]), seq)
    with pytest.raises(ValueError, match="too short"):
        split_pretext(seq[:25], horizon=25)
    x, mask = pad_batch([seq[:5], seq[:3]], pad_value=-4.0)
    assert x.shape == (2, 5, 2)
    assert np.all(x[1, 3:] == -4.0)
    np.testing.assert_array_equal(mask, [[1, 1, 1, 1, 1], [1, 1, 1, 0, 0]])


def test_blstm_embedding_dimensions():
    # paper scale: hidden 256 -> 512-dimensional fiber embeddings
    rng = np.random.default_rng(3)
    cfg = BlstmConfig(layers=1, hidden=256, input_dim=5, horizon=25)
    params = init_blstm_params(cfg, rng)
    rows = extract_blstm_embeddings([rng.normal(size=(30, 5))], params, cfg)
    assert rows.shape == (1, 512)


# -- transformer autoencoder -------------------------------------------------

def test_sinusoidal_encoding_values():
    enc = sinusoidal_encoding(10, 8)
    assert enc.shape == (10, 8)
    np.testing.assert_allclose(enc[0, 0::2], 0.0, atol=1e-12)
    np.testing.assert_allclose(enc[0, 1::2], 1.0, atol=1e-12)
    assert enc[1, 0] == pytest.approx(np.sin(1.0))
    assert enc[1, 1] == pytest.approx(np.cos(1.0))
    assert enc[3, 2] == pytest.approx(np.sin(3.0 / 10000.0 ** (2.0 / 8.0)))


def test_tae_config_validation():
    with pytest.raises(ValueError, match="divisible"):
        TaeConfig(d_model=10, heads=4)


def test_tae_shapes_and_max_len():
    rng = np.random.default_rng(4)
    cfg = TaeConfig(d_model=16, heads=2, ff_dim=32, encoder_layers=2,
                    decoder_layers=2, input_dim=5, max_len=20)
    params = init_tae_params(cfg, rng)
    x, mask = pad_batch([rng.normal(size=(7, 5)), rng.normal(size=(5, 5))],
                        pad_value=cfg.sentinel)
    enc = tae_encode(x, mask, params, cfg)
    assert enc.shape == (2, 7, 16)
    out = tae_forward(x, mask, params, cfg)
    assert out.shape == (2, 7, 5)
    with pytest.raises(ValueError, match="max_len"):
        tae_encode(np.zeros((1, 21, 5)), np.ones((1, 21)), params, cfg)


def test_tae_sentinel_cannot_leak():
    rng = np.random.default_rng(5)
    cfg = TaeConfig(d_model=16, heads=2, ff_dim=32, encoder_layers=2,
                    decoder_layers=2, input_dim=5, max_len=20)
    params = init_tae_params(cfg, rng)
    seqs = [rng.normal(size=(8, 5)), rng.normal(size=(5, 5))]
    x, mask = pad_batch(seqs, pad_value=cfg.sentinel)
    out = tae_forward(x, mask, params, cfg)
    x2 = x.copy()
    x2[mask == 0] = 1e5  # replace the sentinel with garbage
    out2 = tae_forward(x2, mask, params, cfg)
    valid = mask.astype(bool)
    assert np.abs(out.data[valid] - out2.data[valid]).max() < 1e-12
    # loss is equally untouched
    l1 = masked_mse(out, x, mask)
    l2 = masked_mse(out2, x, mask)
    assert abs(float(l1.data) - float(l2.data)) < 1e-12


def test_tae_embedding_dimensions_and_pooling():
    rng = np.random.default_rng(6)
    cfg = TaeConfig(d_model=128, heads=8, ff_dim=64, encoder_layers=1,
                    decoder_layers=1, input_dim=5, max_len=40)
    params = init_tae_params(cfg, rng)
    seqs = [rng.normal(size=(12, 5)), rng.normal(size=(9, 5))]
    rows = extract_tae_embeddings(seqs, params, cfg)
    assert rows.shape == (2, 128)  # paper scale: d_model 128
    for pooling in ("first", "max"):
        assert extract_tae_embeddings(seqs, params, cfg, pooling=pooling).shape == (2, 128)
    with pytest.raises(ValueError, match="pooling"):
        extract_tae_embeddings(seqs, params, cfg, pooling="median")


# -- gradient checks ---------------------------------------------------------

def _grad_check(params, loss_fn, n_sample=220, h=1e-5, seed=0):
    """Max relative error of backprop vs central differences over sampled
    parameter entries across all tensors."""
    for p in params.values():
        p.zero_grad()
    loss_fn().backward()
    grads = {k: p.grad.copy() for k, p in params.items()}
    rng = np.random.default_rng(seed)
    entries = [(k, i) for k, p in params.items() for i in range(p.data.size)]
    take = rng.choice(len(entries), size=min(n_sample, len(entries)), replace=False)
    worst = 0.0
    for sel in take:
        k, i = entries[sel]
        flat = params[k].data.reshape(-1)
        orig = flat[i]
        flat[i] = orig + h
        fp = float(loss_fn().data)
        flat[i] = orig - h
        fm = float(loss_fn().data)
        flat[i] = orig
        num = (fp - fm) / (2 * h)
        ana = grads[k].reshape(-1)[i]
        denom = max(abs(num), abs(ana), 1e-8)
        worst = max(worst, abs(num - ana) / denom)
    return worst


def test_blstm_gradient_check():
    rng = np.random.default_rng(7)
    cfg = BlstmConfig(layers=1, hidden=3, input_dim=2, horizon=2)
    params = init_blstm_params(cfg, rng)
    x = rng.normal(size=(2, 4, 2))
    mask = np.array([[1.0, 1, 1, 1], [1, 1, 1, 0]])
    target = rng.normal(size=(2, 2, 2))

    def loss():
        return masked_mse(predict_future(x, mask, params, cfg), target, np.ones((2, 2)))

    assert _grad_check(params, loss) < 1e-4


def test_tae_gradient_check():
    rng = np.random.default_rng(8)
    cfg = TaeConfig(d_model=8, heads=2, ff_dim=12, encoder_layers=1,
                    decoder_layers=1, input_dim=3, max_len=8)
    params = init_tae_params(cfg, rng)
    x, mask = pad_batch([rng.normal(size=(5, 3)), rng.normal(size=(3, 3))],
                        pad_value=cfg.sentinel)

    def loss():
        return masked_mse(tae_forward(x, mask, params, cfg), x, mask)

    assert _grad_check(params, loss) < 1e-4


# -- optimizer / scheduler / loss -------------------------------------------

def test_adamw_first_step_closed_form():
    # frozen oracle: theta=0, g=1, lr=1e-3, wd=0 gives -1e-3/(1 + 1e-8)
    cfg = TrainConfig(lr=1e-3, weight_decay=0.0, min_lr=1e-9)
    p = Tensor.param(np.array([0.0]))
    p.grad = np.array([1.0])
    opt = AdamW({"p": p}, cfg)
    opt.step()
    expected = -1e-3 * 1.0 / (1.0 + 1e-8)
    assert p.data[0] == pytest.approx(expected, abs=1e-12)


def test_adamw_decoupled_weight_decay():
    cfg = TrainConfig(lr=1e-2, weight_decay=0.1, min_lr=1e-9)
    p = Tensor.param(np.array([2.0]))
    p.grad = np.array([0.0])
    opt = AdamW({"p": p}, cfg)
    opt.step()
    # pure decay: theta - lr*wd*theta
    assert p.data[0] == pytest.approx(2.0 * (1.0 - 1e-2 * 0.1), abs=1e-12)


def test_adamw_rejects_nonfinite_gradient():
    p = Tensor.param(np.array([0.0]))
    p.grad = np.array([np.nan])
    opt = AdamW({"p": p}, TrainConfig())
    with pytest.raises(FloatingPointError):
        opt.step()


def test_plateau_scheduler_decays_after_patience():
    p = Tensor.param(np.zeros(1))
    opt = AdamW({"p": p}, TrainConfig(lr=1.0, min_lr=1e-3))
    sched = PlateauScheduler(opt, factor=0.1, patience=2, min_lr=1e-3)
    assert not sched.step(1.0)  # new best
    assert not sched.step(1.0)  # stale 1
    assert not sched.step(1.0)  # stale 2
    assert sched.step(1.0)      # stale 3 > patience: decay
    assert opt.lr == pytest.approx(0.1)
    for _ in range(10):
        sched.step(1.0)
    assert opt.lr >= 1e-3  # floored


def test_masked_mse_matches_plain_mse():
    rng = np.random.default_rng(9)
    pred = Tensor(rng.normal(size=(2, 4, 3)))
    target = rng.normal(size=(2, 4, 3))
    full = masked_mse(pred, target, np.ones((2, 4)))
    assert float(full.data) == pytest.approx(float(((pred.data - target) ** 2).mean()))
    with pytest.raises(ValueError, match="no valid entries"):
        masked_mse(pred, target, np.zeros((2, 4)))


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(lr=1e-6, min_lr=1e-3)
    with pytest.raises(ValueError):
        TrainConfig(plateau_patience=0)


# -- training loops ----------------------------------------------------------

def _toy_fibers(n, m=30, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        t = np.linspace(0, 1, m)[:, None]
        base = np.concatenate([np.cos(4 * t), np.sin(4 * t), t, t * t, 1 - t], axis=1)
        out.append(base + 0.01 * rng.normal(size=(m, 5)))
    return out


def test_train_blstm_overfits_toy_set():
    seqs = _toy_fibers(10)
    cfg = BlstmConfig(layers=1, hidden=8, input_dim=5, horizon=5)
    tcfg = TrainConfig(batch_size=10, epochs=60, lr=1e-2, weight_decay=0.0,
                       min_lr=1e-6, seed=0)
    params, history, best = train_model("blstm", seqs, seqs[:2], cfg, tcfg)
    assert len(history) == 60
    assert history[-1]["train"] < history[0]["train"] / 100.0
    assert set(best) == set(params)


def test_train_tae_reconstructs_toy_set():
    seqs = _toy_fibers(10)
    cfg = TaeConfig(d_model=16, heads=2, ff_dim=32, encoder_layers=1,
                    decoder_layers=1, input_dim=5, max_len=32, dropout=0.0)
    tcfg = TrainConfig(batch_size=10, epochs=100, lr=3e-3, weight_decay=0.0,
                       min_lr=1e-7, seed=0)
    params, history, _ = train_model("tae", seqs, seqs[:2], cfg, tcfg)
    assert history[-1]["train"] < 1e-2
    assert history[-1]["train"] < history[0]["train"]


def test_train_model_input_validation():
    with pytest.raises(ValueError, match="unknown model kind"):
        train_model("cnn", _toy_fibers(2), _toy_fibers(1), None, TrainConfig())
    with pytest.raises(ValueError, match="non-empty"):
        train_model("blstm", [], _toy_fibers(1), BlstmConfig(), TrainConfig())


# -- checkpoints -------------------------------------------------------------

def test_checkpoint_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(10)
    cfg = BlstmConfig(layers=1, hidden=4, input_dim=3, horizon=2)
    params = quantize_params(init_blstm_params(cfg, rng))
    history = [{"epoch": 0, "train": 1.0, "val": 2.0, "lr": 1e-3}]
    p1 = tmp_path / "a.ckpt"
    p2 = tmp_path / "b.ckpt"
    save_checkpoint(p1, "blstm", cfg, params, history=history)
    kind, cfg2, params2, hist2 = load_checkpoint(p1)
    assert kind == "blstm"
    assert cfg2 == cfg
    assert hist2 == history
    for k in params:
        np.testing.assert_array_equal(params[k].data, params2[k].data)
    save_checkpoint(p2, "blstm", cfg2, params2, history=hist2)
    assert p1.read_bytes() == p2.read_bytes()


def test_checkpoint_truncation_detected(tmp_path):
    rng = np.random.default_rng(11)
    cfg = TaeConfig(d_model=8, heads=2, ff_dim=8, encoder_layers=1, decoder_layers=1)
    params = init_tae_params(cfg, rng)
    path = tmp_path / "t.ckpt"
    save_checkpoint(path, "tae", cfg, params)
    path.write_bytes(path.read_bytes()[:-16])
    with pytest.raises(ValueError, match="truncated"):
        load_checkpoint(path)
