"""Mini-batch Adam training of the shape estimation network on simulated sequences."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from colontrack.errors import InvalidInputError, TrainingDivergedError
from colontrack.sen.features import shape_planes
from colontrack.sen.layers import im2col
from colontrack.sen.model import (
    SenMeta,
    backward_patches,
    forward_patches,
    init_model,
    normalization_from_rest,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 60
    batch_size: int = 32
    seed: int = 0
    gradient_clip: float = 5.0
    validation_fraction: float = 0.1
    hidden: int = 72
    conv_kernels: int = 8
    window: int = 20

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise InvalidInputError("learning_rate must be >= 0")
        if self.epochs < 1:
            raise InvalidInputError("epochs must be >= 1")
        if self.batch_size < 1:
            raise InvalidInputError("batch_size must be >= 1")
        if not self.gradient_clip > 0:
            raise InvalidInputError("gradient_clip must be > 0")
        if not 0.0 < self.validation_fraction < 1.0:
            raise InvalidInputError("validation_fraction must lie in (0, 1)")


@dataclass
class TrainHistory:
    initial_train_loss: float
    initial_val_loss: float
    train_loss: list
    val_loss: list
    best_epoch: int

    def as_dict(self):
        return {
            "initial_train_loss": self.initial_train_loss,
            "initial_val_loss": self.initial_val_loss,
            "epochs": [
                {"epoch": i + 1, "train_loss": t, "val_loss": v}
                for i, (t, v) in enumerate(zip(self.train_loss, self.val_loss))
            ],
            "best_epoch": self.best_epoch,
        }


def window_indices(frame_count, window):
    """Frame indices of every window ending at each frame, padded with frame 0."""
    ends = np.arange(frame_count)
    offsets = np.arange(window) - (window - 1)
    return np.maximum(ends[:, None] + offsets[None, :], 0)


class WindowDataset:
    """Precomputed conv patches for all frames plus (window, target) indexing."""

    def __init__(self, sequences, meta):
        patches = []
        targets = []
        windows = []
        base = 0
        for seq in sequences:
            frames = seq.frames
            if len(frames) == 0:
                continue
            for f in frames:
                if f.scope.n != meta.n:
                    raise InvalidInputError(f"scope shape has {f.scope.n} points, expected {meta.n}")
                if f.colon_truth.m != meta.m:
                    raise InvalidInputError(
                        f"colon shape has {f.colon_truth.m} points, expected {meta.m}"
                    )
            planes = np.stack(
                [shape_planes(f.scope, meta.norm_center, meta.norm_scale) for f in frames]
            )
            patches.append(im2col(planes))
            targets.append(np.stack([f.colon_truth.points for f in frames]))
            windows.append(window_indices(len(frames), meta.window) + base)
            base += len(frames)
        if not windows:
            raise InvalidInputError("dataset contains no frames")
        self.patches = np.concatenate(patches)
        self.targets = np.concatenate(targets)
        self.windows = np.concatenate(windows)

    def __len__(self):
        return self.windows.shape[0]

    def batch(self, rows):
        idx = self.windows[rows]
        return self.patches[idx], self.targets[idx[:, -1]]


def evaluate_loss(model, data, rows, batch_size=256):
    if len(rows) == 0:
        return float("nan")
    total = 0.0
    for start in range(0, len(rows), batch_size):
        chunk = rows[start:start + batch_size]
        patches, targets = data.batch(chunk)
        out, _ = forward_patches(model, patches)
        est = model.denormalize(out)
        total += float(np.sum(np.mean(np.sum((est - targets) ** 2, axis=-1), axis=-1)))
    return total / len(rows)


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params, grads):
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for k in sorted(params):
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            params[k] -= self.lr * (self.m[k] / b1t) / (np.sqrt(self.v[k] / b2t) + self.eps)


def clip_gradients(grads, max_norm):
    total = np.sqrt(sum(float(np.sum(g * g)) for _, g in sorted(grads.items())))
    if total > max_norm:
        scale = max_norm / total
        for k in grads:
            grads[k] = grads[k] * scale
    return total


def _split(n, fraction, rng):
    order = rng.permutation(n)
    n_val = int(round(n * fraction))
    n_val = min(max(n_val, 1), n - 1) if n > 1 else 0
    return np.sort(order[n_val:]), np.sort(order[:n_val])


def train(dataset, config=None, rest_points=None, model=None, progress=None):
    """Train on a list of sequences; returns (best-validation model, history).

    ``rest_points`` fixes the normalisation and the dense-bias initialisation;
    without it the mean colon truth over the dataset is used.
    """
    config = config or TrainConfig()
    sequences = [s for s in dataset if len(s.frames) > 0]
    if not sequences:
        raise InvalidInputError("training dataset is empty")
    first = sequences[0].frames[0]
    if rest_points is None:
        rest_points = np.mean([f.colon_truth.points for s in sequences for f in s.frames], axis=0)
    if model is None:
        center, scale = normalization_from_rest(rest_points)
        meta = SenMeta(
            n=first.scope.n,
            m=first.colon_truth.m,
            window=config.window,
            hidden=config.hidden,
            conv_kernels=config.conv_kernels,
            norm_center=tuple(center),
            norm_scale=scale,
        )
        model = init_model(meta, rest_points=rest_points, seed=config.seed)
    else:
        model = model.copy()
    data = WindowDataset(sequences, model.meta)
    rng = np.random.default_rng([int(config.seed), 0x7EA])
    train_rows, val_rows = _split(len(data), config.validation_fraction, rng)
    if len(val_rows) == 0:
        val_rows = train_rows

    opt = Adam(model.params, config.learning_rate)
    init_train = evaluate_loss(model, data, train_rows)
    init_val = evaluate_loss(model, data, val_rows)
    best_val = init_val
    best = model.copy()
    best_epoch = 0
    train_hist, val_hist = [], []

    for epoch in range(1, config.epochs + 1):
        order = train_rows[rng.permutation(len(train_rows))]
        running = 0.0
        for start in range(0, len(order), config.batch_size):
            rows = order[start:start + config.batch_size]
            patches, targets = data.batch(rows)
            out, cache = forward_patches(model, patches, keep_cache=True)
            batch_loss, grads = backward_patches(model, cache, out, targets)
            if not np.isfinite(batch_loss):
                raise TrainingDivergedError(epoch)
            clip_gradients(grads, config.gradient_clip)
            opt.step(model.params, grads)
            running += batch_loss * len(rows)
        epoch_train = running / len(order)
        epoch_val = evaluate_loss(model, data, val_rows)
        if not (np.isfinite(epoch_train) and np.isfinite(epoch_val)):
            raise TrainingDivergedError(epoch)
        train_hist.append(epoch_train)
        val_hist.append(epoch_val)
        if epoch_val < best_val:
            best_val = epoch_val
            best = model.copy()
            best_epoch = epoch
        log.info("epoch %d train %.3f val %.3f", epoch, epoch_train, epoch_val)
        if progress is not None:
            progress(epoch, epoch_train, epoch_val)

    history = TrainHistory(init_train, init_val, train_hist, val_hist, best_epoch)
    return best, history
