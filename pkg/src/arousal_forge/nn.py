"""Minimal reverse-mode gradient engine: exactly the layers the arousal nets need.

Everything runs in 64-bit floats with fixed summation order, so training is
bit-reproducible for a fixed seed.  Layers operate on batches (leading batch
axis); single samples are batches of one.  Convolutions are valid (no
padding), stride 1, realized as im2col + GEMM with reusable buffers; the
first conv layer additionally accepts uint8 frame stacks and fuses the
[0, 1] scaling into the column extraction to avoid a full float pass.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

PIXEL_SCALE = 1.0 / 255.0


class TrainingError(Exception):
    """Training hit a non-recoverable numerical problem."""


@dataclass
class OptimizerConfig:
    kind: str = "adam"              # "sgd" | "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    max_epochs: int = 300
    seed: int = 0

    def validate(self) -> None:
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("adam betas must lie in (0, 1)")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be >= 1")


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------

def he_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


class Conv2d:
    """Valid 5x5 cross-correlation, stride 1: (B, Cin, H, W) -> (B, Cout, H-4, W-4)."""

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator,
                 kernel: int = 5):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.weights = he_uniform(rng, (out_channels, in_channels, kernel, kernel),
                                  fan_in=in_channels * kernel * kernel)
        self.bias = np.zeros(out_channels)
        self.gw = np.zeros_like(self.weights)
        self.gb = np.zeros_like(self.bias)
        self._cols: np.ndarray | None = None       # (B*Hp*Wp, Cin*k*k), float64
        self._cols_u8: np.ndarray | None = None
        self._in_shape: tuple[int, ...] | None = None

    def params(self):
        return [("weights", self.weights, self.gw), ("bias", self.bias, self.gb)]

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        if x.ndim == 3:
            x = x[None]
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ValueError(
                f"conv2d expected (B, {self.in_channels}, H, W) input, got {x.shape}"
            )
        k = self.kernel
        if x.shape[2] < k or x.shape[3] < k:
            raise ValueError(f"conv2d input {x.shape[2]}x{x.shape[3]} smaller than kernel {k}")
        return x

    def _gather(self, x: np.ndarray, scale: float | None) -> np.ndarray:
        """im2col into a reusable buffer; optional fused scale for uint8 input."""
        b, c, h, w = x.shape
        k = self.kernel
        hp, wp = h - k + 1, w - k + 1
        n_rows = b * hp * wp
        n_cols = c * k * k
        if self._cols is None or self._cols.shape != (n_rows, n_cols):
            self._cols = np.empty((n_rows, n_cols))
        windows = sliding_window_view(x, (k, k), axis=(2, 3)).transpose(0, 2, 3, 1, 4, 5)
        if scale is None:
            np.copyto(self._cols.reshape(b, hp, wp, c, k, k), windows)
        else:
            if self._cols_u8 is None or self._cols_u8.shape != (n_rows, n_cols):
                self._cols_u8 = np.empty((n_rows, n_cols), dtype=np.uint8)
            np.copyto(self._cols_u8.reshape(b, hp, wp, c, k, k), windows)
            np.multiply(self._cols_u8, scale, out=self._cols, casting="unsafe")
        self._in_shape = (b, c, h, w)
        return self._cols

    def _forward_cols(self, cols: np.ndarray) -> np.ndarray:
        b, _, h, w = self._in_shape
        k = self.kernel
        hp, wp = h - k + 1, w - k + 1
        w_mat = self.weights.reshape(self.out_channels, -1)
        out = cols @ w_mat.T
        out += self.bias
        return np.ascontiguousarray(
            out.reshape(b, hp, wp, self.out_channels).transpose(0, 3, 1, 2)
        )

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = self._check_input(np.asarray(x, dtype=np.float64))
        return self._forward_cols(self._gather(x, scale=None))

    def forward_u8(self, frames: np.ndarray) -> np.ndarray:
        """Forward a uint8 frame stack, scaling pixels by 1/255 on the fly."""
        x = self._check_input(np.asarray(frames))
        if x.dtype != np.uint8:
            raise ValueError("forward_u8 expects uint8 input")
        return self._forward_cols(self._gather(x, scale=PIXEL_SCALE))

    def backward(self, grad_out: np.ndarray, need_input_grad: bool = True) -> np.ndarray | None:
        """Accumulate dW/db from the cached columns; optionally return dL/dinput."""
        if self._in_shape is None:
            raise RuntimeError("conv2d backward before forward")
        b, c, h, w = self._in_shape
        k = self.kernel
        hp, wp = h - k + 1, w - k + 1
        g = grad_out.reshape(b, self.out_channels, hp, wp)
        g_mat = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, self.out_channels)
        self.gw += (g_mat.T @ self._cols).reshape(self.weights.shape)
        self.gb += g_mat.sum(axis=0)
        if not need_input_grad:
            return None
        pad = k - 1
        gp = np.zeros((b, self.out_channels, hp + 2 * pad, wp + 2 * pad))
        gp[:, :, pad:pad + hp, pad:pad + wp] = g
        windows = sliding_window_view(gp, (k, k), axis=(2, 3)).transpose(0, 2, 3, 1, 4, 5)
        cols_g = np.ascontiguousarray(windows).reshape(b * h * w, self.out_channels * k * k)
        w_rot = self.weights[:, :, ::-1, ::-1].transpose(0, 2, 3, 1).reshape(-1, c)
        dx = cols_g @ w_rot
        return np.ascontiguousarray(dx.reshape(b, h, w, c).transpose(0, 3, 1, 2))


class MaxPool2x2:
    """Non-overlapping 2x2 max pooling; odd trailing rows/columns are dropped.

    Backward routes each window's gradient to the first (row-major) argmax.
    """

    def __init__(self):
        self._idx: np.ndarray | None = None
        self._in_shape: tuple[int, ...] | None = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim == 3:
            x = x[None]
        b, c, h, w = x.shape
        if h < 2 or w < 2:
            raise ValueError(f"maxpool2x2 needs H, W >= 2, got {h}x{w}")
        h2, w2 = h // 2, w // 2
        cells = (
            x[:, :, :2 * h2, :2 * w2]
            .reshape(b, c, h2, 2, w2, 2)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(b, c, h2, w2, 4)
        )
        self._idx = cells.argmax(axis=-1)
        self._in_shape = (b, c, h, w)
        return np.take_along_axis(cells, self._idx[..., None], axis=-1)[..., 0]

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        if self._idx is None:
            raise RuntimeError("maxpool backward before forward")
        b, c, h, w = self._in_shape
        h2, w2 = h // 2, w // 2
        g = grad_out.reshape(b, c, h2, w2)
        cells = np.zeros((b, c, h2, w2, 4))
        np.put_along_axis(cells, self._idx[..., None], g[..., None], axis=-1)
        dx = np.zeros((b, c, h, w))
        dx[:, :, :2 * h2, :2 * w2] = (
            cells.reshape(b, c, h2, w2, 2, 2)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(b, c, 2 * h2, 2 * w2)
        )
        return dx


class Dense:
    """Affine map y = W x + b on (B, in) batches."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator):
        self.in_features = in_features
        self.out_features = out_features
        self.weights = he_uniform(rng, (out_features, in_features), fan_in=in_features)
        self.bias = np.zeros(out_features)
        self.gw = np.zeros_like(self.weights)
        self.gb = np.zeros_like(self.bias)
        self._x: np.ndarray | None = None

    def params(self):
        return [("weights", self.weights, self.gw), ("bias", self.bias, self.gb)]

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None]
        if x.shape[1] != self.in_features:
            raise ValueError(f"dense expected {self.in_features} inputs, got {x.shape[1]}")
        self._x = x
        return x @ self.weights.T + self.bias

    def backward(self, grad_out: np.ndarray, need_input_grad: bool = True) -> np.ndarray | None:
        if self._x is None:
            raise RuntimeError("dense backward before forward")
        g = grad_out.reshape(-1, self.out_features)
        self.gw += g.T @ self._x
        self.gb += g.sum(axis=0)
        if not need_input_grad:
            return None
        return g @ self.weights


class ReLU:
    def __init__(self):
        self._mask: np.ndarray | None = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        if self._mask is None:
            raise RuntimeError("relu backward before forward")
        return np.where(self._mask, grad_out, 0.0)


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------

def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise stabilized softmax."""
    z = np.asarray(logits, dtype=np.float64)
    squeeze = z.ndim == 1
    if squeeze:
        z = z[None]
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)
    return p[0] if squeeze else p


def softmax_nll(logits: np.ndarray, targets) -> tuple[np.ndarray, np.ndarray]:
    """Negative log-likelihood of a softmax over logits.

    Returns (per-sample losses, dlosses/dlogits).  1-D logits with a scalar
    target give a scalar loss and a 1-D gradient.
    """
    z = np.asarray(logits, dtype=np.float64)
    squeeze = z.ndim == 1
    if squeeze:
        z = z[None]
        targets = np.array([targets])
    t = np.asarray(targets, dtype=np.int64)
    p = softmax(z)
    rows = np.arange(len(t))
    losses = -np.log(p[rows, t])
    grad = p.copy()
    grad[rows, t] -= 1.0
    if squeeze:
        return float(losses[0]), grad[0]
    return losses, grad


# ---------------------------------------------------------------------------
# Optimizers
# ---------------------------------------------------------------------------

def _check_finite_grad(name: str, grad: np.ndarray) -> None:
    if not np.all(np.isfinite(grad)):
        raise TrainingError(f"non-finite gradient in {name}")


class Sgd:
    def __init__(self, config: OptimizerConfig):
        config.validate()
        self.lr = config.learning_rate

    def step(self, named_params: Sequence[tuple[str, np.ndarray, np.ndarray]]) -> None:
        for name, p, g in named_params:
            _check_finite_grad(name, g)
            p -= self.lr * g


class Adam:
    def __init__(self, config: OptimizerConfig):
        config.validate()
        self.lr = config.learning_rate
        self.beta1 = config.beta1
        self.beta2 = config.beta2
        self.eps = config.eps
        self.t = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def step(self, named_params: Sequence[tuple[str, np.ndarray, np.ndarray]]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, p, g in named_params:
            _check_finite_grad(name, g)
            m = self._m.setdefault(name, np.zeros_like(p))
            v = self._v.setdefault(name, np.zeros_like(p))
            m += (1.0 - self.beta1) * (g - m)
            v += (1.0 - self.beta2) * (g * g - v)
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def make_optimizer(config: OptimizerConfig):
    return Adam(config) if config.kind == "adam" else Sgd(config)


def optimizer_step(optimizer, named_params) -> None:
    optimizer.step(named_params)


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------

def finite_diff_check(
    loss_fn: Callable[[], float],
    named_params: Sequence[tuple[str, np.ndarray, np.ndarray]],
    h: float = 1e-5,
    min_samples: int = 200,
    seed: int = 0,
) -> float:
    """Max relative error between central differences and analytic gradients.

    ``named_params`` pairs each parameter tensor with the analytic gradient
    of ``loss_fn`` at the current parameters (as filled by a backward pass).
    At least ``min_samples`` coordinates are probed, spread over every tensor.
    Relative error uses the finite difference as the reference; coordinates
    where both values are below 1e-6 count as exact.
    """
    if not (1e-6 <= h <= 1e-4):
        raise ValueError("h must lie in [1e-6, 1e-4]")
    rng = np.random.default_rng(seed)
    per_tensor = max(1, -(-min_samples // len(named_params)))
    worst = 0.0
    for _, p, g in named_params:
        flat_p = p.reshape(-1)
        flat_g = g.reshape(-1)
        count = min(per_tensor, flat_p.size)
        for i in rng.choice(flat_p.size, size=count, replace=False):
            orig = flat_p[i]
            flat_p[i] = orig + h
            lp = loss_fn()
            flat_p[i] = orig - h
            lm = loss_fn()
            flat_p[i] = orig
            fd = (lp - lm) / (2.0 * h)
            analytic = flat_g[i]
            if abs(fd) < 1e-6 and abs(analytic) < 1e-6:
                continue
            worst = max(worst, abs(fd - analytic) / max(abs(fd), 1e-6))
    return worst


# ---------------------------------------------------------------------------
# Checkpoints: one JSON header line, then little-endian float64 tensors
# ---------------------------------------------------------------------------

CHECKPOINT_FORMAT = "arousal-forge-ckpt-v1"


def write_checkpoint(path, named_arrays: Sequence[tuple[str, np.ndarray]], meta: dict) -> None:
    header = {
        "format": CHECKPOINT_FORMAT,
        "tensors": [{"name": n, "shape": list(a.shape)} for n, a in named_arrays],
    }
    header.update(meta)
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for _, a in named_arrays:
            f.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as f:
        header = json.loads(f.readline().decode("utf-8"))
        if header.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path}: not an arousal-forge checkpoint")
        tensors = {}
        for entry in header["tensors"]:
            shape = tuple(entry["shape"])
            n = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(f.read(8 * n), dtype="<f8", count=n)
            tensors[entry["name"]] = data.reshape(shape).astype(np.float64)
    return header, tensors
