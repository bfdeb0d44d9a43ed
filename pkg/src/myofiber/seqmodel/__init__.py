"""Differentiable sequence models: BLSTM future-point predictor and
transformer autoencoder, plus optimizer, scheduler, and checkpoints."""

from .autodiff import Tensor, masked_softmax, softmax
from .blstm import (
    BlstmConfig,
    PAPER_BLSTM,
    blstm_forward,
    extract_blstm_embeddings,
    init_blstm_params,
    lstm_cell,
    pad_batch,
    predict_future,
    split_pretext,
)
from .checkpoint import load_checkpoint, quantize_params, save_checkpoint
from .tae import (
    PAPER_TAE,
    TaeConfig,
    extract_tae_embeddings,
    init_tae_params,
    sinusoidal_encoding,
    tae_encode,
    tae_forward,
)
from .train import AdamW, PlateauScheduler, TrainConfig, masked_mse, train_model
