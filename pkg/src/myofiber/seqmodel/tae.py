"""Transformer autoencoder over padded fiber sequences.

Pre-norm encoder blocks (masked multi-head self-attention + feed-forward with
residuals) followed by a symmetric stack of decoder blocks applied to the
encoded tokens (non-autoregressive reconstruction), then a linear projection
back to the 5 input features. Padded positions carry a sentinel value and are
excluded from attention and from the loss; masks, not the sentinel, are
authoritative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, masked_softmax


@dataclass
class TaeConfig:
    d_model: int = 32
    heads: int = 4
    ff_dim: int = 64
    encoder_layers: int = 4
    decoder_layers: int = 4
    dropout: float = 0.1
    input_dim: int = 5
    max_len: int = 128
    sentinel: float = -4.0  # fill for padded positions of standardized inputs

    def __post_init__(self):
        if self.d_model % self.heads != 0:
            raise ValueError("d_model must be divisible by heads")

    def to_dict(self):
        return {
            "d_model": self.d_model,
            "heads": self.heads,
            "ff_dim": self.ff_dim,
            "encoder_layers": self.encoder_layers,
            "decoder_layers": self.decoder_layers,
            "dropout": self.dropout,
            "input_dim": self.input_dim,
            "max_len": self.max_len,
            "sentinel": self.sentinel,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


PAPER_TAE = TaeConfig(d_model=128, heads=8, ff_dim=512, max_len=591)


def sinusoidal_encoding(length: int, d_model: int) -> np.ndarray:
    """Standard sine/cosine positional table: even channels sin, odd cos."""
    pos = np.arange(length)[:, None]
    i = np.arange(d_model // 2)[None, :]
    angle = pos / np.power(10000.0, 2.0 * i / d_model)
    enc = np.zeros((length, d_model))
    enc[:, 0::2] = np.sin(angle)
    enc[:, 1::2] = np.cos(angle)
    return enc


def _fan_in_uniform(rng, shape):
    limit = 1.0 / math.sqrt(shape[0])
    return rng.uniform(-limit, limit, shape)


def init_tae_params(cfg: TaeConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    d, ff = cfg.d_model, cfg.ff_dim
    params: dict[str, Tensor] = {
        "in_W": Tensor.param(_fan_in_uniform(rng, (cfg.input_dim, d))),
        "in_b": Tensor.param(np.zeros(d)),
        "out_W": Tensor.param(_fan_in_uniform(rng, (d, cfg.input_dim))),
        "out_b": Tensor.param(np.zeros(cfg.input_dim)),
    }
    blocks = [("enc", cfg.encoder_layers), ("dec", cfg.decoder_layers)]
    for stack, n_layers in blocks:
        for layer in range(n_layers):
            pre = f"{stack}{layer}"
            for name in ("q", "k", "v", "o"):
                params[f"{pre}_W{name}"] = Tensor.param(_fan_in_uniform(rng, (d, d)))
                params[f"{pre}_b{name}"] = Tensor.param(np.zeros(d))
            params[f"{pre}_ff_W1"] = Tensor.param(_fan_in_uniform(rng, (d, ff)))
            params[f"{pre}_ff_b1"] = Tensor.param(np.zeros(ff))
            params[f"{pre}_ff_W2"] = Tensor.param(_fan_in_uniform(rng, (ff, d)))
            params[f"{pre}_ff_b2"] = Tensor.param(np.zeros(d))
            for ln in ("ln1", "ln2"):
                params[f"{pre}_{ln}_g"] = Tensor.param(np.ones(d))
                params[f"{pre}_{ln}_b"] = Tensor.param(np.zeros(d))
        params[f"{stack}_lnf_g"] = Tensor.param(np.ones(d))
        params[f"{stack}_lnf_b"] = Tensor.param(np.zeros(d))
    return params


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    return centered / (var + eps).sqrt() * gain + bias


def multi_head_attention(
    x: Tensor, valid: np.ndarray, params: dict, prefix: str, cfg: TaeConfig
) -> Tensor:
    """Self-attention over valid key positions; valid is (B, T) bool."""
    B, T, d = x.shape
    h = cfg.heads
    dh = d // h

    def project(name):
        p = x @ params[f"{prefix}_W{name}"] + params[f"{prefix}_b{name}"]
        return p.reshape(B, T, h, dh).transpose(0, 2, 1, 3)  # (B, h, T, dh)

    q, k, v = project("q"), project("k"), project("v")
    scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(dh))  # (B, h, T, T)
    key_valid = valid[:, None, None, :].astype(bool)  # broadcast over heads/queries
    attn = masked_softmax(scores, np.broadcast_to(key_valid, scores.shape), axis=-1)
    ctx = (attn @ v).transpose(0, 2, 1, 3).reshape(B, T, d)
    return ctx @ params[f"{prefix}_Wo"] + params[f"{prefix}_bo"]


def _dropout(x: Tensor, p: float, rng: np.random.Generator | None) -> Tensor:
    if rng is None or p <= 0.0:
        return x
    keep = rng.random(x.shape) >= p
    return x * Tensor(keep / (1.0 - p))


def _block(x, valid, params, prefix, cfg, rng):
    """One pre-norm transformer block: attention then feed-forward."""
    a = multi_head_attention(
        layer_norm(x, params[f"{prefix}_ln1_g"], params[f"{prefix}_ln1_b"]),
        valid, params, prefix, cfg,
    )
    x = x + _dropout(a, cfg.dropout, rng)
    f = layer_norm(x, params[f"{prefix}_ln2_g"], params[f"{prefix}_ln2_b"])
    f = (f @ params[f"{prefix}_ff_W1"] + params[f"{prefix}_ff_b1"]).relu()
    f = f @ params[f"{prefix}_ff_W2"] + params[f"{prefix}_ff_b2"]
    return x + _dropout(f, cfg.dropout, rng)


def tae_encode(
    x: np.ndarray, mask: np.ndarray, params: dict, cfg: TaeConfig,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Encoder token outputs (B, T, d_model); rng enables dropout (training)."""
    B, T, _ = x.shape
    if T > cfg.max_len:
        raise ValueError(f"sequence length {T} exceeds max_len {cfg.max_len}")
    tokens = Tensor(x) @ params["in_W"] + params["in_b"]
    tokens = tokens + Tensor(sinusoidal_encoding(T, cfg.d_model)[None, :, :])
    valid = mask.astype(bool)
    for layer in range(cfg.encoder_layers):
        tokens = _block(tokens, valid, params, f"enc{layer}", cfg, rng)
    return layer_norm(tokens, params["enc_lnf_g"], params["enc_lnf_b"])


def tae_forward(
    x: np.ndarray, mask: np.ndarray, params: dict, cfg: TaeConfig,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Reconstruct the input sequence: (B, T, input_dim).

    Decoder blocks run over the encoded tokens (non-autoregressive); outputs
    at padded positions are garbage by construction and must be masked by the
    caller's loss.
    """
    enc = tae_encode(x, mask, params, cfg, rng)
    valid = mask.astype(bool)
    tokens = enc
    for layer in range(cfg.decoder_layers):
        tokens = _block(tokens, valid, params, f"dec{layer}", cfg, rng)
    tokens = layer_norm(tokens, params["dec_lnf_g"], params["dec_lnf_b"])
    return tokens @ params["out_W"] + params["out_b"]


def extract_tae_embeddings(
    sequences: list[np.ndarray], params: dict, cfg: TaeConfig, batch_size: int = 64,
    pooling: str = "mean",
) -> np.ndarray:
    """Per-fiber embeddings (n, d_model) pooled over valid encoder tokens.

    pooling: "mean" (default), "first", or "max".
    """
    from .blstm import pad_batch

    rows = []
    for start in range(0, len(sequences), batch_size):
        chunk = sequences[start : start + batch_size]
        x, mask = pad_batch(chunk, pad_value=cfg.sentinel)
        enc = tae_encode(x, mask, params, cfg, rng=None).data
        if pooling == "mean":
            w = mask[:, :, None]
            rows.append((enc * w).sum(axis=1) / w.sum(axis=1))
        elif pooling == "first":
            rows.append(enc[:, 0, :].copy())
        elif pooling == "max":
            masked = np.where(mask[:, :, None] > 0, enc, -np.inf)
            rows.append(masked.max(axis=1))
        else:
            raise ValueError(f"unknown pooling '{pooling}'")
    return np.concatenate(rows, axis=0)
