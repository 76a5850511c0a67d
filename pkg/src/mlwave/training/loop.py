"""Filter-bank learning and end-to-end training of the restoration network."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from ..losses import make_target_pyramid, total_loss, total_wavelet_loss, wavelet_loss
from ..metrics import psnr_metric, ssim_metric
from ..network import NetworkConfig, NetworkParams, init_params, mlwnet_forward
from ..tensor import NonFiniteError, Tape, Tensor
from ..wavelet import FilterBank
from .data import augment, synth_dataset
from .optim import OptimState, adamw_step, cosine_lr

LOG_HEADER = "iter,lr,total_loss,wavelet_loss,val_psnr,val_ssim"


class TrainingError(RuntimeError):
    """Training hit a non-finite value; the message names the tensor involved."""


# ---------------------------------------------------------------------------
# Filter learning


@dataclass
class FilterLearningResult:
    bank: FilterBank
    losses: list
    initial: FilterBank


def random_bank(n: int, seed: int, dtype=np.float64) -> FilterBank:
    rng = np.random.default_rng(seed)
    a0, a1, s0, s1 = rng.normal(0.0, 0.5, size=(4, n))
    return FilterBank.from_arrays(a0, a1, s0, s1, dtype=dtype)


def learn_filters(n: int = 4, steps: int = 5000, lr: float = 1e-2, seed: int = 0,
                  init: FilterBank | None = None, lr_min: float = 1e-7) -> FilterLearningResult:
    """Minimise the wavelet loss alone with AdamW and a cosine schedule.

    ``losses[k]`` is the loss before update ``k``; the list has ``steps + 1``
    entries, the last one measured on the returned bank. Runs in float64.
    """
    if n < 2 or n % 2:
        raise ValueError(f"filter length must be even and >= 2, got {n}")
    bank = (init.astype(np.float64) if init is not None else random_bank(n, seed))
    initial = bank
    names = ("a0", "a1", "s0", "s1")
    params = dict(zip(names, bank.filters))
    state = OptimState()
    losses = []
    for k in range(steps):
        with Tape() as tape:
            loss = wavelet_loss(FilterBank(*params.values()))
        losses.append(loss.item())
        grads = tape.backward(loss)
        named = {name: grads[p] for name, p in params.items() if p in grads}
        params = adamw_step(params, named, state, cosine_lr(k, steps, lr, lr_min))
    bank = FilterBank(*params.values())
    losses.append(wavelet_loss(bank).item())
    return FilterLearningResult(bank, losses, initial)


# ---------------------------------------------------------------------------
# Configuration


@dataclass(frozen=True)
class TrainConfig:
    base_width: int = 16
    scales: int = 3
    blocks_per_stage: int = 2
    r: int = 2
    filter_len: int = 4
    batch: int = 8
    iters: int = 3000
    lr_max: float = 1e-3
    lr_min: float = 1e-7
    weight_decay: float = 0.0
    seed: int = 0
    patch: int = 64
    train_count: int = 200
    val_count: int = 32
    noise_sigma: float = 0.01
    use_wavelet_loss: bool = True
    wavelet_weight: float = 1.0
    augment: bool = True
    eval_every: int = 100

    def network(self, train_mode: bool = True) -> NetworkConfig:
        return NetworkConfig(self.base_width, self.scales, self.blocks_per_stage,
                             self.r, self.filter_len, train_mode)


class ConfigError(ValueError):
    pass


def _coerce(kind, key, raw):
    try:
        if kind is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc


def parse_config(text: str, base: TrainConfig | None = None) -> TrainConfig:
    """Read ``key=value`` lines; ``#`` starts a comment. Unknown keys are errors."""
    kinds = {f.name: type(f.default) for f in fields(TrainConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if not sep or not key:
            raise ConfigError(f"line {lineno}: expected key=value")
        if key not in kinds:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _coerce(kinds[key], key, raw)
    try:
        cfg = TrainConfig(**{**(base.__dict__ if base else {}), **values})
        cfg.network()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def format_config(cfg: TrainConfig) -> str:
    return "".join(f"{f.name}={getattr(cfg, f.name)}\n" for f in fields(TrainConfig))


def load_config(path) -> TrainConfig:
    return parse_config(Path(path).read_text())


# ---------------------------------------------------------------------------
# Training


@dataclass
class Dataset:
    train: list
    val: list

    @classmethod
    def synthetic(cls, cfg: TrainConfig) -> "Dataset":
        # train and validation sets come from independent seed streams
        div = 2 ** cfg.scales
        return cls(synth_dataset(cfg.train_count, cfg.patch, cfg.seed, cfg.noise_sigma, div),
                   synth_dataset(cfg.val_count, cfg.patch, cfg.seed + 1_000_003, cfg.noise_sigma, div))


@dataclass
class TrainResult:
    params: NetworkParams
    log: list = field(default_factory=list)
    max_wavelet_loss: float = 0.0
    baseline_psnr: float = 0.0
    losses: list = field(default_factory=list)

    @property
    def final(self) -> dict:
        return self.log[-1]

    def log_csv(self) -> str:
        rows = [LOG_HEADER]
        for r in self.log:
            rows.append(f"{r['iter']},{r['lr']:.9g},{r['total_loss']:.9g},{r['wavelet_loss']:.9g},"
                        f"{r['val_psnr']:.6f},{r['val_ssim']:.6f}")
        return "\n".join(rows) + "\n"


def restore(blurred: np.ndarray, params: NetworkParams, config: NetworkConfig,
            batch: int = 8) -> np.ndarray:
    """Inference-mode scale-1 output for a (N, 3, H, W) float32 stack."""
    cfg = config.with_mode(False)
    outs = []
    for i in range(0, len(blurred), batch):
        x = Tensor(np.asarray(blurred[i:i + batch], dtype=np.float32))
        outs.append(mlwnet_forward(x, params, cfg)[0].data)
    return np.concatenate(outs)


def evaluate(params: NetworkParams, config: NetworkConfig, pairs) -> tuple[float, float]:
    """Mean per-image PSNR and SSIM of the restored images against the sharp ones."""
    blurred = np.stack([b for b, _ in pairs])
    restored = restore(blurred, params, config)
    psnr = [psnr_metric(r, s) for r, (_, s) in zip(restored, pairs)]
    ssim = [ssim_metric(r, s) for r, (_, s) in zip(restored, pairs)]
    return float(np.mean(psnr)), float(np.mean(ssim))


def baseline_psnr(pairs) -> float:
    return float(np.mean([psnr_metric(b, s) for b, s in pairs]))


def _bank_loss(params: NetworkParams) -> float:
    banks = params.banks()
    return total_wavelet_loss([b.astype(np.float64) for b in banks]).item() if banks else 0.0


def _sample_batch(pairs, rng, cfg):
    idx = rng.choice(len(pairs), size=min(cfg.batch, len(pairs)), replace=False)
    seeds = rng.integers(2 ** 31, size=len(idx))
    chosen = [augment(pairs[i], s) if cfg.augment else pairs[i] for i, s in zip(idx, seeds)]
    return (Tensor(np.stack([b for b, _ in chosen])), Tensor(np.stack([s for _, s in chosen])))


def train_loop(cfg: TrainConfig, dataset: Dataset, iters: int | None = None,
               seed: int | None = None, progress=None) -> TrainResult:
    """AdamW on the multi-scale loss plus (optionally) the wavelet loss.

    Logs every ``eval_every`` iterations and at the end. ``max_wavelet_loss``
    is the largest summed bank loss seen at any iteration, measured in
    float64 on the float32 parameters.
    """
    iters = cfg.iters if iters is None else iters
    seed = cfg.seed if seed is None else seed
    if not dataset.train or not dataset.val:
        raise ValueError("training and validation sets must be nonempty")
    net = cfg.network(train_mode=True)
    params = init_params(net, seed=seed)
    rng = np.random.default_rng([seed, 7])
    state = OptimState(weight_decay=cfg.weight_decay)
    weight = cfg.wavelet_weight if cfg.use_wavelet_loss else 0.0
    result = TrainResult(params, baseline_psnr=baseline_psnr(dataset.val))

    def log(it, lr, loss_value, wl):
        psnr, ssim = evaluate(params, net, dataset.val)
        row = dict(iter=it, lr=lr, total_loss=loss_value, wavelet_loss=wl, val_psnr=psnr, val_ssim=ssim)
        result.log.append(row)
        if progress:
            progress(row)

    wl = _bank_loss(params)
    result.max_wavelet_loss = wl
    loss_value = math.nan
    for it in range(iters):
        lr = cosine_lr(it, iters, cfg.lr_max, cfg.lr_min)
        if it % cfg.eval_every == 0:
            log(it, lr, loss_value, wl)
        x, y = _sample_batch(dataset.train, rng, cfg)
        try:
            with Tape() as tape:
                outs = mlwnet_forward(x, params, net)
                loss = total_loss(outs, make_target_pyramid(y, net.scales), params.banks(), weight)
            grads = tape.backward(loss)
        except NonFiniteError as exc:
            raise TrainingError(f"iteration {it}: {exc}") from exc
        loss_value = loss.item()
        result.losses.append(loss_value)
        by_name = {name: grads[t] for name, t in params.tensors.items() if t in grads}
        new = adamw_step(params.tensors, by_name, state, lr)
        bad = [name for name, t in new.items() if not np.isfinite(t.data).all()]
        if bad:
            raise TrainingError(f"iteration {it}: non-finite parameter {bad[0]}")
        params = NetworkParams(new)
        result.params = params
        wl = _bank_loss(params)
        result.max_wavelet_loss = max(result.max_wavelet_loss, wl)
    log(iters, cosine_lr(iters, iters, cfg.lr_max, cfg.lr_min) if iters else cfg.lr_max, loss_value, wl)
    return result
