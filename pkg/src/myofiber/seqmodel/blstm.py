"""Stacked bidirectional LSTM with a future-point prediction head.

The pretext task splits each fiber into input (all but the last `horizon`
points) and target (the final `horizon` points); a linear head maps the
concatenated final forward/backward hidden states of the top layer to the
horizon x feature prediction. Padded timesteps are skipped via masked state
carry, so they can never influence outputs or gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor


@dataclass
class BlstmConfig:
    layers: int = 2
    hidden: int = 32
    input_dim: int = 5
    horizon: int = 25

    def to_dict(self):
        return {
            "layers": self.layers,
            "hidden": self.hidden,
            "input_dim": self.input_dim,
            "horizon": self.horizon,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


# paper-scale hyperparameters; the desk default above keeps tests fast
PAPER_BLSTM = BlstmConfig(layers=4, hidden=256)


def init_blstm_params(cfg: BlstmConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    """Uniform(-1/sqrt(H), 1/sqrt(H)) weights, forget-gate bias +1."""
    H = cfg.hidden
    scale = 1.0 / np.sqrt(H)
    params: dict[str, Tensor] = {}
    for layer in range(cfg.layers):
        in_dim = cfg.input_dim if layer == 0 else 2 * H
        for direction in ("fwd", "bwd"):
            pre = f"l{layer}_{direction}"
            params[f"{pre}_W"] = Tensor.param(rng.uniform(-scale, scale, (in_dim, 4 * H)))
            params[f"{pre}_U"] = Tensor.param(rng.uniform(-scale, scale, (H, 4 * H)))
            b = np.zeros(4 * H)
            b[H : 2 * H] = 1.0  # forget gate
            params[f"{pre}_b"] = Tensor.param(b)
    params["head_W"] = Tensor.param(
        rng.uniform(-scale, scale, (2 * H, cfg.horizon * cfg.input_dim))
    )
    params["head_b"] = Tensor.param(np.zeros(cfg.horizon * cfg.input_dim))
    return params


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, W: Tensor, U: Tensor, b: Tensor, hidden: int):
    """One LSTM step. Gate order in the packed weights: input, forget,
    candidate, output."""
    z = x @ W + h @ U + b
    H = hidden
    i = z[:, 0 * H : 1 * H].sigmoid()
    f = z[:, 1 * H : 2 * H].sigmoid()
    g = z[:, 2 * H : 3 * H].tanh()
    o = z[:, 3 * H : 4 * H].sigmoid()
    c_new = f * c + i * g
    h_new = o * c_new.tanh()
    return h_new, c_new


def _run_direction(x: Tensor, mask: np.ndarray, W, U, b, hidden: int, reverse: bool):
    """Returns per-step outputs (B, T, H) and the direction's final state.

    `mask` is (B, T) with 1 on valid steps. States update only on valid steps,
    so for the reverse direction the state entering the first valid step is
    still the zero init regardless of padding length.
    """
    B, T, _ = x.shape
    h = Tensor(np.zeros((B, hidden)))
    c = Tensor(np.zeros((B, hidden)))
    xw = x @ W  # (B, T, 4H), hoisted out of the time loop
    steps = range(T - 1, -1, -1) if reverse else range(T)
    outputs: list[Tensor | None] = [None] * T
    for t in steps:
        m = Tensor(mask[:, t : t + 1])
        h_new, c_new = lstm_cell_precomputed(xw[:, t, :], h, c, U, b, hidden)
        h = h_new * m + h * (1.0 - m)
        c = c_new * m + c * (1.0 - m)
        outputs[t] = h
    seq = Tensor.concat([o.reshape(B, 1, hidden) for o in outputs], axis=1)
    return seq, h


def lstm_cell_precomputed(xw: Tensor, h: Tensor, c: Tensor, U: Tensor, b: Tensor, hidden: int):
    z = xw + h @ U + b
    H = hidden
    i = z[:, 0 * H : 1 * H].sigmoid()
    f = z[:, 1 * H : 2 * H].sigmoid()
    g = z[:, 2 * H : 3 * H].tanh()
    o = z[:, 3 * H : 4 * H].sigmoid()
    c_new = f * c + i * g
    h_new = o * c_new.tanh()
    return h_new, c_new


def blstm_forward(
    x: np.ndarray | Tensor,
    mask: np.ndarray,
    params: dict[str, Tensor],
    cfg: BlstmConfig,
):
    """Run the stacked BLSTM.

    x: (B, T, input_dim) padded batch; mask: (B, T) 1.0 on valid steps.
    Returns (per-step outputs (B, T, 2H) of the top layer, final state (B, 2H))
    where the final state concatenates the forward hidden at each sequence's
    last valid step with the backward hidden at step 0.
    """
    if mask.ndim != 2:
        raise ValueError("mask must be (B, T)")
    if not mask.any(axis=1).all():
        raise ValueError("zero-length sequence in batch")
    h_in = x if isinstance(x, Tensor) else Tensor(x)
    H = cfg.hidden
    final = None
    for layer in range(cfg.layers):
        fwd_seq, fwd_last = _run_direction(
            h_in, mask, params[f"l{layer}_fwd_W"], params[f"l{layer}_fwd_U"],
            params[f"l{layer}_fwd_b"], H, reverse=False,
        )
        bwd_seq, bwd_first = _run_direction(
            h_in, mask, params[f"l{layer}_bwd_W"], params[f"l{layer}_bwd_U"],
            params[f"l{layer}_bwd_b"], H, reverse=True,
        )
        h_in = Tensor.concat([fwd_seq, bwd_seq], axis=2)
        final = Tensor.concat([fwd_last, bwd_first], axis=1)
    return h_in, final


def predict_future(
    x: np.ndarray, mask: np.ndarray, params: dict[str, Tensor], cfg: BlstmConfig
) -> Tensor:
    """Map the final BLSTM state to a (B, horizon, input_dim) prediction."""
    _, final = blstm_forward(x, mask, params, cfg)
    out = final @ params["head_W"] + params["head_b"]
    B = x.shape[0]
    return out.reshape(B, cfg.horizon, cfg.input_dim)


def split_pretext(seq: np.ndarray, horizon: int) -> tuple[np.ndarray, np.ndarray]:
    """Split one fiber into (input points, final `horizon` target points)."""
    m = len(seq)
    if m < horizon + 1:
        raise ValueError(f"fiber of {m} points too short for horizon {horizon}")
    return seq[: m - horizon], seq[m - horizon :]


def pad_batch(sequences: list[np.ndarray], pad_value: float = 0.0):
    """Pad variable-length (m_i, F) sequences to (B, T, F) + mask (B, T)."""
    B = len(sequences)
    T = max(len(s) for s in sequences)
    F = sequences[0].shape[1]
    x = np.full((B, T, F), pad_value, dtype=float)
    mask = np.zeros((B, T), dtype=float)
    for i, s in enumerate(sequences):
        x[i, : len(s)] = s
        mask[i, : len(s)] = 1.0
    return x, mask


def extract_blstm_embeddings(
    sequences: list[np.ndarray], params: dict[str, Tensor], cfg: BlstmConfig,
    batch_size: int = 64,
) -> np.ndarray:
    """Final-state embeddings (n, 2H), rows aligned with the input order.

    Sequences are fed whole (not pretext-split): the embedding summarizes the
    entire fiber.
    """
    rows = []
    for start in range(0, len(sequences), batch_size):
        chunk = sequences[start : start + batch_size]
        x, mask = pad_batch(chunk)
        _, final = blstm_forward(x, mask, params, cfg)
        rows.append(final.data.copy())
    return np.concatenate(rows, axis=0)
