"""Sparse recovery: Poisson traffic masks and the TCN autoencoder.

Dense series are corrupted with traffic-shaped masks, a temporal-convolutional
autoencoder is trained self-supervised to reconstruct them, and ``recover``
fills the gaps of viable sparse series while passing observed samples through
untouched.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence

import numpy as np

from . import nn
from .errors import BadRatio, LengthMismatch, NotViable, SeriesTooShort
from .series import GAP, BfiSeries, Viability, viability_check

TRAIN_RATIOS = (0.8, 0.6, 0.4, 0.2)


@dataclass(frozen=True)
class TcnAeConfig:
    levels: int = 4
    channels: tuple = (16, 16, 32, 32)
    kernel_size: int = 3
    dilations: tuple = (1, 2, 4, 8)
    latent_len: int = 16
    lr: float = 3e-3
    epochs: int = 160
    batch: int = 8
    seed: int = 0

    def __post_init__(self):
        if len(self.channels) != self.levels or len(self.dilations) != self.levels:
            raise ValueError("channels and dilations must have `levels` entries")
        if any(b >= a for a, b in zip(self.dilations[1:], self.dilations)):
            raise ValueError("dilations must be strictly increasing")

    @property
    def receptive_field(self) -> int:
        # encoder and decoder stacks both widen by (k-1)*d per level
        return 1 + 2 * (self.kernel_size - 1) * sum(self.dilations)


@dataclass(frozen=True)
class TrafficMask:
    keep: np.ndarray            # bool, True = sample observed
    ratio: float

    def __len__(self) -> int:
        return len(self.keep)


def gen_poisson_mask(length: int, ratio: float, fs_hz: float,
                     seed: int) -> TrafficMask:
    """Keep each grid cell that receives at least one Poisson arrival.

    Inter-arrival gaps are exponential with rate ratio*fs, so a cell of width
    1/fs is kept with probability 1 - exp(-ratio).
    """
    if not 0 < ratio <= 1:
        raise BadRatio(f"traffic ratio {ratio} outside (0, 1]")
    if fs_hz <= 0:
        raise ValueError("fs_hz must be positive")
    rng = np.random.default_rng(seed)
    rate = ratio * fs_hz
    horizon = length / fs_hz
    keep = np.zeros(length, dtype=bool)
    t = 0.0
    block = max(16, int(rate * horizon * 1.2) + 16)
    while t < horizon:
        gaps = rng.exponential(1.0 / rate, size=block)
        arrivals = t + np.cumsum(gaps)
        cells = np.floor(arrivals * fs_hz).astype(int)
        keep[cells[(cells >= 0) & (cells < length)]] = True
        t = arrivals[-1]
    return TrafficMask(keep=keep, ratio=ratio)


def gen_bernoulli_mask(length: int, keep_prob: float, seed: int) -> TrafficMask:
    """Pluggable alternative mask: i.i.d. per-sample keep probability.

    Used to hit exact missing fractions when evaluating recovery error.
    """
    if not 0 < keep_prob <= 1:
        raise BadRatio(f"keep probability {keep_prob} outside (0, 1]")
    rng = np.random.default_rng(seed)
    return TrafficMask(keep=rng.random(length) < keep_prob, ratio=keep_prob)


def corrupt(series: BfiSeries, mask: TrafficMask) -> BfiSeries:
    """Drop the masked-out samples of a gapless series."""
    if len(series) != len(mask):
        raise LengthMismatch(f"series {len(series)} vs mask {len(mask)}")
    if not series.is_gapless:
        raise ValueError("corrupt() expects a gapless input series")
    out = series.copy()
    out.values[~mask.keep] = GAP
    out.gap_mask = ~mask.keep.copy()
    return out


def rmse_relative(recovered: BfiSeries, truth: BfiSeries) -> float:
    """RMSE between the two series divided by the truth's mean amplitude."""
    if len(recovered) != len(truth):
        raise LengthMismatch(f"{len(recovered)} vs {len(truth)}")
    if not truth.is_gapless:
        raise ValueError("truth series must be gapless")
    err = recovered.values - truth.values
    rmse = math.sqrt(float(np.mean(err ** 2)))
    denom = float(np.mean(np.abs(truth.values)))
    if denom == 0.0:
        return 0.0 if rmse == 0.0 else math.inf
    return rmse / denom


# ---------------------------------------------------------------------------
# TCN autoencoder
# ---------------------------------------------------------------------------

@dataclass
class SraModel:
    config: TcnAeConfig
    params: nn.ParamStore
    loss_history: List[float] = field(default_factory=list)


def init_sra_params(config: TcnAeConfig,
                    rng: np.random.Generator) -> nn.ParamStore:
    params = nn.ParamStore()
    k = config.kernel_size
    c_in = 2                                      # value channel + gap flag
    for i, c_out in enumerate(config.channels):
        fan_in = c_in * k
        params.add(f"enc{i}.w", nn.kaiming_uniform(rng, (c_out, c_in, k), fan_in))
        params.add(f"enc{i}.b", nn.bias_uniform(rng, c_out, fan_in))
        c_in = c_out
    # decoder sees the pooled latent (upsampled), the raw 2-channel input,
    # and the encoder's full-resolution features
    c_in = config.channels[-1] + 2 + config.channels[-1]
    dec_channels = tuple(reversed(config.channels[:-1])) + (1,)
    for i, c_out in enumerate(dec_channels):
        fan_in = c_in * k
        params.add(f"dec{i}.w", nn.kaiming_uniform(rng, (c_out, c_in, k), fan_in))
        params.add(f"dec{i}.b", nn.bias_uniform(rng, c_out, fan_in))
        c_in = c_out
    # start the output head near zero so early epochs predict the mean
    last = len(dec_channels) - 1
    params[f"dec{last}.w"].data *= 0.1
    params[f"dec{last}.b"].data *= 0.1
    return params


def _sra_forward(model: SraModel, values: np.ndarray,
                 gap_mask: np.ndarray) -> nn.Tensor:
    cfg = model.config
    p = model.params
    x = nn.Tensor(np.stack([values, gap_mask.astype(np.float64)]))
    h = x
    for i, dil in enumerate(cfg.dilations):
        h = nn.relu(nn.conv1d(h, p[f"enc{i}.w"], p[f"enc{i}.b"], dilation=dil))
    latent = nn.adaptive_avg_pool1d(h, cfg.latent_len)
    up = nn.upsample_linear(latent, len(values))
    h = nn.concat_channels(nn.concat_channels(up, x), h)
    n_dec = len(cfg.channels)
    for i, dil in enumerate(cfg.dilations):      # fine-to-coarse refinement
        h = nn.conv1d(h, p[f"dec{i}.w"], p[f"dec{i}.b"], dilation=dil)
        if i < n_dec - 1:
            h = nn.relu(h)
    return nn.reshape(h, (len(values),))


def train_sra(dense_dataset: Sequence[BfiSeries],
              config: TcnAeConfig = TcnAeConfig()) -> SraModel:
    """Self-supervised training: corrupt dense series with Poisson masks drawn
    at traffic ratios {0.8, 0.6, 0.4, 0.2} and minimize full-series MSE."""
    if not dense_dataset:
        raise ValueError("empty training dataset")
    for s in dense_dataset:
        if not s.is_gapless:
            raise ValueError("training series must be gapless")
        if len(s) < config.receptive_field:
            raise SeriesTooShort(
                f"series of {len(s)} samples shorter than the receptive "
                f"field {config.receptive_field}")
    rng = np.random.default_rng(config.seed)
    params = init_sra_params(config, rng)
    model = SraModel(config=config, params=params)
    opt = nn.Adam(params, lr=config.lr)
    order = np.arange(len(dense_dataset))
    mask_seed = config.seed + 1
    decay_epochs = {int(config.epochs * 0.6), int(config.epochs * 0.85)}

    for epoch in range(config.epochs):
        if epoch in decay_epochs and epoch > 0:
            opt.lr *= 0.3
        rng.shuffle(order)
        epoch_loss = 0.0
        batch_n = 0
        params.zero_grad()
        for step, idx in enumerate(order):
            s = dense_dataset[idx]
            ratio = TRAIN_RATIOS[int(rng.integers(len(TRAIN_RATIOS)))]
            mask_seed += 1
            mask = gen_poisson_mask(len(s), ratio, s.fs_hz, seed=mask_seed)
            sparse = corrupt(s, mask)
            pred = _sra_forward(model, sparse.values, sparse.gap_mask)
            loss = nn.mse(pred, s.values)
            loss.backward()
            epoch_loss += float(loss.data)
            batch_n += 1
            if batch_n == config.batch or step == len(order) - 1:
                params.scale_grads(1.0 / batch_n)
                opt.step()
                params.zero_grad()
                batch_n = 0
        model.loss_history.append(epoch_loss / len(order))
    return model


def recover(model: SraModel, sparse: BfiSeries) -> BfiSeries:
    """Fill the gaps of a viable sparse series with the decoder output.

    Observed samples pass through exactly; decoder output is clipped to [0,1].
    """
    if viability_check(sparse) is not Viability.VIABLE:
        raise NotViable("series fails the gap viability check")
    if sparse.is_gapless:
        return sparse.copy()
    pred = _sra_forward(model, sparse.values, sparse.gap_mask)
    filled = np.clip(pred.data, 0.0, 1.0)
    out_values = np.where(sparse.gap_mask, filled, sparse.values)
    return BfiSeries(sparse.fs_hz, out_values, sparse.t0_us,
                     np.zeros(len(sparse), dtype=bool))


# ---------------------------------------------------------------------------
# checkpoint round-trip (architecture metadata rides along as tensors)
# ---------------------------------------------------------------------------

def save_sra_checkpoint(path: str, model: SraModel) -> None:
    params = model.params.copy()
    cfg = model.config
    params.add("meta.dilations", np.asarray(cfg.dilations, dtype=np.float64))
    params.add("meta.channels", np.asarray(cfg.channels, dtype=np.float64))
    params.add("meta.kernel_size", np.asarray([cfg.kernel_size], dtype=np.float64))
    params.add("meta.latent_len", np.asarray([cfg.latent_len], dtype=np.float64))
    nn.save_checkpoint(path, params)


def load_sra_checkpoint(path: str) -> SraModel:
    loaded = nn.load_checkpoint(path)
    dilations = tuple(int(v) for v in loaded["meta.dilations"].data)
    channels = tuple(int(v) for v in loaded["meta.channels"].data)
    kernel = int(loaded["meta.kernel_size"].data[0])
    latent = int(loaded["meta.latent_len"].data[0])
    config = TcnAeConfig(levels=len(channels), channels=channels,
                         kernel_size=kernel, dilations=dilations,
                         latent_len=latent)
    params = nn.ParamStore()
    for name, t in loaded.items():
        if not name.startswith("meta."):
            params.add(name, t.data)
    return SraModel(config=config, params=params)
