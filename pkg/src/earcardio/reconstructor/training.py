"""Seeded training, few-shot calibration and inference."""

import copy
import math
from contextlib import contextmanager
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from .._validation import CYCLE_LEN, as_cycles
from ..equalizer import apply_equalizer
from ..exceptions import EmptyDataset, InvalidConfig, NonFiniteLoss, ShapeMismatch
from ..signal import zscore_array
from .model import ModelConfig, ReconstructionModel, build_model


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 20
    plateau_factor: float = 0.5
    plateau_patience: int = 10
    min_lr: float = 1e-5
    seed: int = 42
    early_stop_patience: int = None

    def __post_init__(self):
        if not self.lr > 0:
            raise InvalidConfig("lr must be positive")
        if self.batch_size < 1:
            raise InvalidConfig("batch_size must be >= 1")
        if self.max_epochs < 0:
            raise InvalidConfig("max_epochs must be >= 0")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class CalibrationConfig:
    epochs: int = 50
    lr: float = 1e-4
    batch_size: int = 1
    seed: int = 0
    freeze_bn_stats: bool = True

    def to_dict(self):
        return asdict(self)


@contextmanager
def _torch_session(seed, threads=1):
    """Fixed thread count and a private global RNG state for dropout."""
    prev = torch.get_num_threads()
    torch.set_num_threads(threads)
    try:
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            yield
    finally:
        torch.set_num_threads(prev)


def _pairs_to_tensors(pairs, length):
    if len(pairs) == 0:
        raise EmptyDataset("no training pairs")
    if isinstance(pairs, tuple) and len(pairs) == 2 and not hasattr(pairs[0], "samples"):
        ear, tgt = pairs
    else:
        ear = [p[0] for p in pairs]
        tgt = [p[1] for p in pairs]
    X = as_cycles(ear, length=length, name="ear cycles")
    Y = as_cycles(tgt, length=length, name="target cycles")
    if X.shape[0] != Y.shape[0]:
        raise ShapeMismatch("ear and target counts differ")
    if X.shape[0] == 0:
        raise EmptyDataset("no training pairs")
    to_t = lambda a: torch.from_numpy(a.astype(np.float32)[:, None, :])  # noqa: E731
    return to_t(X), to_t(Y)


def _train_mode(net, freeze_bn_stats):
    net.train()
    if freeze_bn_stats:
        for m in net.modules():
            if isinstance(m, nn.modules.batchnorm._BatchNorm):
                m.eval()


def _run_epochs(net, X, Y, epochs, batch_size, optimizer, scheduler, generator,
                early_stop_patience=None, freeze_bn_stats=False):
    loss_fn = nn.MSELoss(reduction="sum")
    n = X.shape[0]
    history = []
    best = math.inf
    stale = 0
    for epoch in range(epochs):
        _train_mode(net, freeze_bn_stats)
        perm = torch.randperm(n, generator=generator)
        total = 0.0
        for s in range(0, n, batch_size):
            idx = perm[s:s + batch_size]
            xb, yb = X[idx], Y[idx]
            optimizer.zero_grad()
            loss = loss_fn(net(xb), yb) / yb.numel()
            if not torch.isfinite(loss):
                raise NonFiniteLoss(
                    f"loss became {loss.item()} at epoch {epoch + 1}, batch starting {s}"
                )
            loss.backward()
            optimizer.step()
            total += loss.item() * idx.numel()
        epoch_loss = total / n
        history.append(epoch_loss)
        if scheduler is not None:
            scheduler.step(epoch_loss)
        if early_stop_patience is not None:
            if epoch_loss < best * (1 - 1e-4):
                best, stale = epoch_loss, 0
            else:
                stale += 1
                if stale >= early_stop_patience:
                    break
    net.eval()
    return history


def train(config=ModelConfig(), tcfg=TrainConfig(), pairs=()):
    """Train a fresh model on ``(ear_cycle, target_cycle)`` pairs.

    ``pairs`` may also be a tuple ``(X_ear, Y_target)`` of arrays.

    Returns
    -------
    model : ReconstructionModel
    history : list of float
        Epoch-mean training MSE.
    """
    X, Y = _pairs_to_tensors(pairs, config.input_len)
    with _torch_session(tcfg.seed):
        net = build_model(config, tcfg.seed)
        opt = torch.optim.Adam(net.parameters(), lr=tcfg.lr)
        sched = torch.optim.lr_scheduler.ReduceLROnPlateau(
            opt, mode="min", factor=tcfg.plateau_factor, patience=tcfg.plateau_patience,
            min_lr=tcfg.min_lr,
        )
        gen = torch.Generator().manual_seed(tcfg.seed)
        history = _run_epochs(net, X, Y, tcfg.max_epochs, tcfg.batch_size, opt, sched, gen,
                              tcfg.early_stop_patience)
    meta = {
        "seed": tcfg.seed,
        "epochs": len(history),
        "final_loss": history[-1] if history else None,
        "n_pairs": int(X.shape[0]),
        "train_config": tcfg.to_dict(),
    }
    return ReconstructionModel(config, net, meta), history


def calibrate(model, pairs, ccfg=CalibrationConfig()):
    """Fine-tune every layer of a copy of ``model`` on a few new-user pairs.

    The base model is never modified. With no pairs the base model itself
    is returned.
    """
    if len(pairs) == 0:
        return model
    X, Y = _pairs_to_tensors(pairs, model.config.input_len)
    net = copy.deepcopy(model.net)
    with _torch_session(ccfg.seed):
        opt = torch.optim.Adam(net.parameters(), lr=ccfg.lr)
        gen = torch.Generator().manual_seed(ccfg.seed)
        history = _run_epochs(net, X, Y, ccfg.epochs, ccfg.batch_size, opt, None, gen,
                              freeze_bn_stats=ccfg.freeze_bn_stats)
    meta = dict(model.train_meta)
    meta["calibration"] = {**ccfg.to_dict(), "n_pairs": int(X.shape[0]),
                           "final_loss": history[-1] if history else None}
    return ReconstructionModel(model.config, net, meta)


def predict(model, cycles, batch_size=256):
    """Inference-mode forward pass; returns an ``(n, L)`` float64 array."""
    X = as_cycles(cycles, length=model.config.input_len, name="ear cycles")
    net = model.net
    net.eval()
    out = []
    with torch.inference_mode():
        for s in range(0, X.shape[0], batch_size):
            xb = torch.from_numpy(X[s:s + batch_size].astype(np.float32)[:, None, :])
            out.append(net(xb)[:, 0, :].double().numpy())
    return np.concatenate(out, axis=0) if out else np.zeros((0, X.shape[1]))


def forward(model, ear_cycle):
    """Reconstruct one cycle (400 samples)."""
    x = np.asarray(getattr(ear_cycle, "samples", ear_cycle), dtype=np.float64)
    if x.shape != (model.config.input_len,):
        raise ShapeMismatch(f"expected {model.config.input_len} samples, got shape {x.shape}")
    return predict(model, x[None, :])[0]


def attention_weights(model, ear_cycle):
    """Attention matrices of every attention layer for one input cycle."""
    mods = model.net.attention_modules()
    for m in mods:
        m.keep_weights = True
    try:
        forward(model, ear_cycle)
        return [m.last_weights[0].numpy() for m in mods]
    finally:
        for m in mods:
            m.keep_weights = False
            m.last_weights = None


def equalize_inputs(cycles, profile=None):
    """Apply ``profile`` (if any) and re-z-score each cycle."""
    X = as_cycles(cycles, length=None)
    if profile is not None:
        X = np.array([apply_equalizer(profile, x) for x in X])
    return np.array([zscore_array(x) for x in X]).reshape(X.shape)


def reconstruct_session(model, cycles, profile=None):
    """Reconstruct target cycles for conditioned, SNR-filtered ear cycles."""
    if len(cycles) == 0:
        return np.zeros((0, CYCLE_LEN))
    X = as_cycles(cycles, length=model.config.input_len)
    return predict(model, equalize_inputs(X, profile))
