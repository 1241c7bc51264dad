"""Shape estimation network: conv -> LSTM -> dense, with exact reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from colontrack.errors import InvalidInputError
from colontrack.geometry import ColonShape, EstimatedColonShape
from colontrack.sen.features import plane_width, shape_planes
from colontrack.sen.layers import KERNEL_SIZE, im2col, sigmoid, split_gates

INPUT_CHANNELS = 3
PARAM_NAMES = (
    "conv.weight",
    "conv.bias",
    "lstm.input_weight",
    "lstm.recurrent_weight",
    "lstm.bias",
    "dense.weight",
    "dense.bias",
)
GATE_ORDER = ("input", "forget", "output", "candidate")


@dataclass(frozen=True)
class SenMeta:
    n: int = 6
    m: int = 12
    window: int = 20
    hidden: int = 72
    conv_kernels: int = 8
    norm_center: tuple = (0.0, 0.0, 0.0)
    norm_scale: float = 1.0

    def __post_init__(self):
        for name in ("n", "m", "window", "hidden", "conv_kernels"):
            if int(getattr(self, name)) < 1:
                raise InvalidInputError(f"meta.{name} must be >= 1")
        if self.n < 2 or self.m < 2:
            raise InvalidInputError("meta.n and meta.m must be >= 2")
        if not self.norm_scale > 0:
            raise InvalidInputError("meta.norm_scale must be > 0")
        object.__setattr__(self, "norm_center", tuple(float(v) for v in self.norm_center))
        object.__setattr__(self, "norm_scale", float(self.norm_scale))

    @property
    def width(self):
        return plane_width(self.n)

    @property
    def conv_features(self):
        return self.conv_kernels * self.n * self.width

    def param_shapes(self):
        c, h = self.conv_kernels, self.hidden
        return {
            "conv.weight": (c, INPUT_CHANNELS, KERNEL_SIZE, KERNEL_SIZE),
            "conv.bias": (c,),
            "lstm.input_weight": (self.conv_features, 4 * h),
            "lstm.recurrent_weight": (h, 4 * h),
            "lstm.bias": (4 * h,),
            "dense.weight": (h, 3 * self.m),
            "dense.bias": (3 * self.m,),
        }


@dataclass(eq=False)
class SenModel:
    meta: SenMeta
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.check_shapes()

    def check_shapes(self):
        expected = self.meta.param_shapes()
        missing = [k for k in expected if k not in self.params]
        if missing:
            raise InvalidInputError(f"missing parameters: {', '.join(missing)}")
        for name, shape in expected.items():
            arr = np.asarray(self.params[name], dtype=float)
            if arr.shape != shape:
                raise InvalidInputError(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise InvalidInputError(f"{name} contains non-finite values")
            self.params[name] = arr

    def copy(self):
        return SenModel(self.meta, {k: v.copy() for k, v in self.params.items()})

    def gate(self, which, name):
        """View of one gate block of an LSTM parameter, e.g. ``gate("lstm.bias", "forget")``."""
        h = self.meta.hidden
        k = GATE_ORDER.index(name)
        return self.params[which][..., k * h:(k + 1) * h]

    @property
    def center(self):
        return np.asarray(self.meta.norm_center)

    def normalize_points(self, points):
        return (np.asarray(points, dtype=float) - self.center) / self.meta.norm_scale

    def denormalize(self, flat):
        flat = np.asarray(flat)
        return self.center + self.meta.norm_scale * flat.reshape(flat.shape[:-1] + (self.meta.m, 3))


def normalization_from_rest(rest_points):
    """Centre on the rest-shape centroid; scale by the largest bounding-box side."""
    pts = np.asarray(rest_points, dtype=float)
    extent = float(np.max(pts.max(axis=0) - pts.min(axis=0)))
    if extent <= 0:
        raise InvalidInputError("rest shape has zero extent")
    return pts.mean(axis=0), extent


def init_model(meta, rest_points=None, seed=0):
    """Random initialisation; the dense bias starts at the normalised rest shape."""
    rng = np.random.default_rng([int(seed), 0x5E1])
    shapes = meta.param_shapes()
    c, h = meta.conv_kernels, meta.hidden
    fan_conv = INPUT_CHANNELS * KERNEL_SIZE * KERNEL_SIZE
    params = {
        "conv.weight": rng.normal(0.0, np.sqrt(2.0 / fan_conv), shapes["conv.weight"]),
        "conv.bias": np.zeros(c),
        "lstm.input_weight": rng.uniform(-1.0, 1.0, shapes["lstm.input_weight"])
        / np.sqrt(meta.conv_features),
        "lstm.recurrent_weight": rng.uniform(-1.0, 1.0, shapes["lstm.recurrent_weight"])
        / np.sqrt(h),
        "lstm.bias": np.zeros(4 * h),
        "dense.weight": rng.normal(0.0, 0.01, shapes["dense.weight"]),
        "dense.bias": np.zeros(3 * meta.m),
    }
    params["lstm.bias"][h:2 * h] = 1.0
    model = SenModel(meta, params)
    if rest_points is not None:
        model.params["dense.bias"] = model.normalize_points(rest_points).reshape(-1)
    return model


# ------------------------------------------------------------------ forward pass


def window_planes(model, window):
    meta = model.meta
    if len(window) != meta.window:
        raise InvalidInputError(f"window has {len(window)} shapes, expected {meta.window}")
    for shape in window:
        if shape.n != meta.n:
            raise InvalidInputError(f"scope shape has {shape.n} points, expected {meta.n}")
    return np.stack([shape_planes(s, meta.norm_center, meta.norm_scale) for s in window])


def forward_patches(model, patches, keep_cache=False):
    """Run the network on precomputed conv patches.

    ``patches`` is (B, W, H*Wd, C_in*25). Returns normalised outputs (B, 3M)
    and, with ``keep_cache``, the intermediates needed by :func:`backward_patches`.
    """
    p = model.params
    meta = model.meta
    b, w = patches.shape[:2]
    hdim = meta.hidden
    kernel = p["conv.weight"].reshape(meta.conv_kernels, -1)
    z = patches @ kernel.T + p["conv.bias"]  # (B, W, P, C)
    act = np.maximum(z, 0.0)
    x_all = np.swapaxes(act, -1, -2).reshape(b, w, -1)  # (B, W, C*P), channel-major
    h = np.zeros((b, hdim), dtype=z.dtype)
    c = np.zeros((b, hdim), dtype=z.dtype)
    cache = []
    for t in range(w):
        x = x_all[:, t]
        g_pre = x @ p["lstm.input_weight"] + h @ p["lstm.recurrent_weight"] + p["lstm.bias"]
        zi, zf, zo, zg = split_gates(g_pre, hdim)
        gi, gf, go, gg = sigmoid(zi), sigmoid(zf), sigmoid(zo), np.tanh(zg)
        c_new = gf * c + gi * gg
        tc = np.tanh(c_new)
        h_new = go * tc
        if keep_cache:
            cache.append((x, h, c, gi, gf, go, gg, tc))
        h, c = h_new, c_new
    out = h @ p["dense.weight"] + p["dense.bias"]
    if keep_cache:
        return out, {"z": z, "steps": cache, "h_last": h, "patches": patches}
    return out, None


def forward(model, window):
    """Estimate the colon shape from a window of W registered scope shapes."""
    planes = window_planes(model, window)
    patches = im2col(planes)[None]
    out, _ = forward_patches(model, patches)
    return EstimatedColonShape(model.denormalize(out[0]))


# ------------------------------------------------------------------------ loss


def _truth_points(truth):
    return truth.points if isinstance(truth, (ColonShape, EstimatedColonShape)) else np.asarray(truth)


def loss(est, truth):
    """Mean squared Euclidean point distance (mm^2)."""
    a = _truth_points(est)
    b = _truth_points(truth)
    if a.shape != b.shape:
        raise InvalidInputError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.mean(np.sum((a - b) ** 2, axis=-1)))


def mean_point_error(est, truth):
    a = _truth_points(est)
    b = _truth_points(truth)
    if a.shape != b.shape:
        raise InvalidInputError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.mean(np.linalg.norm(a - b, axis=-1)))


# -------------------------------------------------------------------- backward


def backward_patches(model, cache, out, targets):
    """Gradients of the batch-mean loss w.r.t. every parameter.

    ``targets`` is (B, M, 3) in mm. Returns (loss, grads).
    """
    p = model.params
    meta = model.meta
    b = out.shape[0]
    est = model.denormalize(out)
    diff = est - targets
    batch_loss = float(np.mean(np.sum(diff ** 2, axis=-1)))
    # d(mean_b mean_m |e|^2)/d(out) through est = center + scale * out
    dout = (2.0 * meta.norm_scale / (meta.m * b)) * diff.reshape(b, -1)

    grads = {name: np.zeros_like(v) for name, v in p.items()}
    grads["dense.weight"] = cache["h_last"].T @ dout
    grads["dense.bias"] = dout.sum(axis=0)
    dh = dout @ p["dense.weight"].T
    dc = np.zeros_like(dh)

    steps = cache["steps"]
    w = len(steps)
    dx_all = np.empty((b, w, meta.conv_features))
    wx = p["lstm.input_weight"]
    wh = p["lstm.recurrent_weight"]
    for t in range(w - 1, -1, -1):
        x, h_prev, c_prev, gi, gf, go, gg, tc = steps[t]
        do = dh * tc
        dc = dc + dh * go * (1.0 - tc * tc)
        di = dc * gg
        dg = dc * gi
        df = dc * c_prev
        da = np.concatenate(
            [
                di * gi * (1.0 - gi),
                df * gf * (1.0 - gf),
                do * go * (1.0 - go),
                dg * (1.0 - gg * gg),
            ],
            axis=1,
        )
        grads["lstm.input_weight"] += x.T @ da
        grads["lstm.recurrent_weight"] += h_prev.T @ da
        grads["lstm.bias"] += da.sum(axis=0)
        dx_all[:, t] = da @ wx.T
        dh = da @ wh.T
        dc = dc * gf

    z = cache["z"]  # (B, W, P, C)
    npos = z.shape[2]
    dz = np.swapaxes(dx_all.reshape(b, w, meta.conv_kernels, npos), -1, -2)
    dz = dz * (z > 0)
    dz2 = dz.reshape(-1, meta.conv_kernels)
    patches = cache["patches"].reshape(dz2.shape[0], -1)
    grads["conv.weight"] = (dz2.T @ patches).reshape(p["conv.weight"].shape)
    grads["conv.bias"] = dz2.sum(axis=0)
    return batch_loss, grads


def backward(model, window, truth):
    """Exact gradient of ``loss(forward(model, window), truth)`` for one window."""
    planes = window_planes(model, window)
    patches = im2col(planes)[None]
    out, cache = forward_patches(model, patches, keep_cache=True)
    target = _truth_points(truth)
    if target.shape != (model.meta.m, 3):
        raise InvalidInputError(f"truth has shape {target.shape}, expected ({model.meta.m}, 3)")
    _, grads = backward_patches(model, cache, out, target[None])
    return grads
