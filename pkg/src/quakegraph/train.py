"""Training loop (binary cross-entropy + Adam), k-fold splits and grid sweeps."""

from __future__ import annotations

import itertools
import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .autodiff import Tensor, backward, clip, log
from .evaluate import roc_curve
from .model import Architecture, ModelParams, forward, init_model, predict
from .preprocess import augment

__all__ = [
    "TrainConfig",
    "AdamState",
    "TrainResult",
    "SweepResult",
    "bce_loss",
    "adam_step",
    "train",
    "kfold_split",
    "grid_sweep",
    "predict_windows",
]

log_ = logging.getLogger(__name__)

PROB_CLAMP = 1e-7


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 8
    epochs: int = 10
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    augment: bool = True
    max_shift_fraction: float = 0.25
    noise_mean: float = 0.001
    pos_weight: float = 1.0
    max_steps: int | None = None

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not 0 <= self.max_shift_fraction < 1:
            raise ValueError("max_shift_fraction must be in [0, 1)")


def bce_loss(pred, target, pos_weight: float = 1.0) -> Tensor:
    """Mean binary cross-entropy over all station-timesteps, probabilities clamped to [1e-7, 1-1e-7]."""
    if not isinstance(pred, Tensor):
        pred = Tensor(np.asarray(pred, dtype=float))
    target = np.asarray(target, dtype=pred.data.dtype)
    if pred.shape != target.shape:
        raise ValueError(f"bce_loss: prediction shape {pred.shape} != target shape {target.shape}")
    p = clip(pred, PROB_CLAMP, 1.0 - PROB_CLAMP)
    terms = (pos_weight * target) * log(p) + (1.0 - target) * log(1.0 - p)
    return -terms.mean()


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState,
              config: TrainConfig) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update; returns new parameter arrays and the advanced state."""
    for name, g in grads.items():
        if name not in params:
            raise ValueError(f"gradient for unknown parameter {name}")
        if g.shape != params[name].shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, parameter has {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name}")
    t = state.t + 1
    b1, b2 = config.beta1, config.beta2
    new_params, m_new, v_new = {}, {}, {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        m = b1 * state.m.get(name, 0.0) + (1 - b1) * g
        v = b2 * state.v.get(name, 0.0) + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        new_params[name] = (p - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.eps)).astype(p.dtype)
        m_new[name], v_new[name] = m, v
    return new_params, AdamState(m_new, v_new, t)


@dataclass
class TrainResult:
    params: ModelParams
    epoch_losses: list[float]
    step_losses: list[float]


def _sub_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def train(windows, labels, config: TrainConfig, arch: Architecture, dtype=np.float32,
          params: ModelParams | None = None) -> TrainResult:
    """Mini-batch Adam on mean BCE.  Data order, augmentation and dropout all derive from ``config.seed``."""
    windows = np.asarray(windows)
    labels = np.asarray(labels)
    if windows.ndim != 4 or len(windows) == 0:
        raise ValueError("train: need a non-empty M x N x P x 3 dataset")
    if labels.shape != windows.shape[:3]:
        raise ValueError(f"labels shape {labels.shape} does not match windows {windows.shape[:3]}")
    if params is None:
        params = init_model(arch, seed=config.seed, dtype=dtype)
    tensors = params.named_tensors()
    state = AdamState()
    rng = np.random.default_rng(config.seed)
    M, _, P, _ = windows.shape
    max_shift = int(config.max_shift_fraction * P)
    epoch_losses, step_losses = [], []
    for epoch in range(config.epochs):
        order = rng.permutation(M)
        batch_losses = []
        for b, start in enumerate(range(0, M, config.batch_size)):
            if config.max_steps is not None and state.t >= config.max_steps:
                break
            idx = order[start : start + config.batch_size]
            xb = windows[idx].astype(dtype)
            yb = labels[idx].astype(dtype)
            if config.augment:
                for j, i in enumerate(idx):
                    xb[j], yb[j] = augment(xb[j], yb[j], max_shift, _sub_seed(config.seed, epoch, int(i)),
                                           config.noise_mean)
            probs = forward(xb, params, "train", seed=_sub_seed(config.seed, epoch, b, 1))
            loss = bce_loss(probs, yb, config.pos_weight)
            grads = backward(loss, tensors.values())
            arrays = {k: t.data for k, t in tensors.items()}
            new, state = adam_step(arrays, {k: grads[t] for k, t in tensors.items()}, state, config)
            for k, t in tensors.items():
                t.data = new[k]
            batch_losses.append(float(loss.data))
            step_losses.append(float(loss.data))
        if batch_losses:
            epoch_losses.append(float(np.mean(batch_losses)))
            log_.info("epoch %d loss %.5f", epoch, epoch_losses[-1])
    return TrainResult(params, epoch_losses, step_losses)


def predict_windows(params: ModelParams, windows, batch_size: int = 16) -> np.ndarray:
    windows = np.asarray(windows)
    out = [predict(windows[i : i + batch_size], params) for i in range(0, len(windows), batch_size)]
    return np.concatenate(out, axis=0)


def kfold_split(n: int, k: int = 5, seed: int = 0) -> list[tuple[np.ndarray, np.ndarray]]:
    """Shuffled k-fold partition of ``range(n)`` into (train, validation) index pairs."""
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    if n < k:
        raise ValueError(f"dataset of size {n} cannot be split into {k} folds")
    perm = np.random.default_rng(seed).permutation(n)
    folds = np.array_split(perm, k)
    out = []
    for i, val in enumerate(folds):
        tr = np.concatenate([f for j, f in enumerate(folds) if j != i])
        out.append((np.sort(tr), np.sort(val)))
    return out


SWEEP_KNOBS = {"n_layers": "arch", "hidden": "arch", "cheb_k": "arch",
               "learning_rate": "train", "batch_size": "train", "epochs": "train"}


@dataclass
class SweepResult:
    settings: dict
    mean_auc: float
    fold_aucs: list[float]

    def to_record(self) -> dict:
        return {"settings": self.settings, "mean_auc": self.mean_auc, "fold_aucs": self.fold_aucs}


def grid_sweep(space: dict[str, list], windows, labels, base_arch: Architecture,
               base_config: TrainConfig, k: int = 5, seed: int = 0) -> list[SweepResult]:
    """Cross-validated grid search; results sorted by mean validation AUC, best first."""
    if not space or any(len(v) == 0 for v in space.values()):
        raise ValueError("grid_sweep: empty search space")
    unknown = set(space) - set(SWEEP_KNOBS)
    if unknown:
        raise ValueError(f"grid_sweep: unknown knobs {sorted(unknown)}")
    windows = np.asarray(windows)
    labels = np.asarray(labels)
    folds = kfold_split(len(windows), k, seed)
    keys = list(space)
    results = []
    for combo in itertools.product(*(space[key] for key in keys)):
        settings = dict(zip(keys, combo))
        arch = replace(base_arch, **{k_: v for k_, v in settings.items() if SWEEP_KNOBS[k_] == "arch"})
        cfg = replace(base_config, **{k_: v for k_, v in settings.items() if SWEEP_KNOBS[k_] == "train"})
        aucs = []
        for tr, val in folds:
            fitted = train(windows[tr], labels[tr], cfg, arch).params
            probs = predict_windows(fitted, windows[val])
            y = labels[val]
            aucs.append(roc_curve(probs, y).auc if 0 < y.sum() < y.size else float("nan"))
        finite = [a for a in aucs if not np.isnan(a)]
        results.append(SweepResult(settings, float(np.mean(finite)) if finite else float("nan"), aucs))
    # stable sort keeps grid order among ties; undefined AUCs go last
    return sorted(results, key=lambda r: (np.isnan(r.mean_auc), -np.nan_to_num(r.mean_auc)))


def config_dict(config: TrainConfig) -> dict:
    return asdict(config)
