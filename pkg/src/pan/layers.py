"""Primitive network layers with explicit backward rules.

Every operation is a pure function of float64 arrays (plus explicit Rng
state for dropout). There is no autograd graph: each differentiable layer
ships a companion ``*_backward`` that maps the upstream gradient to the
input gradient, and compositions chain those by hand. ``grad_check``
validates any such chain against central differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import DTYPE, Rng, check_finite

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


# ---------------------------------------------------------------------------
# linear
# ---------------------------------------------------------------------------

@dataclass
class LinearParams:
    """Affine map parameters: weight [in, out], bias [out]."""

    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=DTYPE)
        self.bias = np.asarray(self.bias, dtype=DTYPE)
        if self.weight.ndim != 2 or self.bias.ndim != 1:
            raise ValueError("weight must be [in, out], bias must be [out]")
        if self.bias.shape[0] != self.weight.shape[1]:
            raise ValueError(
                f"bias size {self.bias.shape[0]} != out dim {self.weight.shape[1]}"
            )

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[1]


def init_linear(in_dim: int, out_dim: int, rng: Rng) -> LinearParams:
    # fan-in rule: uniform(-1/sqrt(in), 1/sqrt(in)) for weight and bias
    bound = 1.0 / math.sqrt(in_dim)
    return LinearParams(
        weight=rng.uniform(-bound, bound, size=(in_dim, out_dim)),
        bias=rng.uniform(-bound, bound, size=(out_dim,)),
    )


def linear(x: np.ndarray, p: LinearParams) -> np.ndarray:
    """out[i, j] = sum_k x[i, k] * w[k, j] + b[j]."""
    x = np.asarray(x, dtype=DTYPE)
    if x.ndim != 2 or x.shape[1] != p.in_dim:
        raise ValueError(f"linear: input shape {x.shape} incompatible with in dim {p.in_dim}")
    return check_finite(x @ p.weight + p.bias, "linear output")


def linear_backward(dy: np.ndarray, p: LinearParams) -> np.ndarray:
    """Input gradient of ``linear``."""
    return dy @ p.weight.T


# ---------------------------------------------------------------------------
# softmax / normalization / activations
# ---------------------------------------------------------------------------

def softmax_rows(x: np.ndarray) -> np.ndarray:
    """Row-wise softmax, stabilized by row-max subtraction."""
    x = np.asarray(x, dtype=DTYPE)
    if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
        raise ValueError(f"softmax_rows: need a non-empty 2-D input, got shape {x.shape}")
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return check_finite(e / e.sum(axis=1, keepdims=True), "softmax output")


def softmax_rows_backward(dy: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Input gradient of ``softmax_rows`` given its output ``y``."""
    return y * (dy - (dy * y).sum(axis=1, keepdims=True))


def layer_norm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray,
               eps: float = 1e-5) -> np.ndarray:
    """Per-row normalization to zero mean / unit variance, then affine."""
    x = np.asarray(x, dtype=DTYPE)
    mu = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    xhat = (x - mu) / np.sqrt(var + eps)
    return check_finite(gamma * xhat + beta, "layer_norm output")


def layer_norm_backward(dy: np.ndarray, x: np.ndarray, gamma: np.ndarray,
                        eps: float = 1e-5) -> np.ndarray:
    """Input gradient of ``layer_norm`` (gamma/beta held fixed)."""
    f = x.shape[1]
    mu = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv_std
    dxhat = dy * gamma
    return inv_std / f * (
        f * dxhat
        - dxhat.sum(axis=1, keepdims=True)
        - xhat * (dxhat * xhat).sum(axis=1, keepdims=True)
    )


_erf = np.frompyfunc(math.erf, 1, 1)


def _normal_cdf(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + _erf(x * _INV_SQRT2).astype(DTYPE))


def gelu(x: np.ndarray) -> np.ndarray:
    """Exact GeLU: x * Phi(x) with the Gaussian CDF via erf (no tanh approximation)."""
    x = np.asarray(x, dtype=DTYPE)
    return x * _normal_cdf(x)


def gelu_backward(dy: np.ndarray, x: np.ndarray) -> np.ndarray:
    """d/dx gelu = Phi(x) + x * pdf(x)."""
    pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
    return dy * (_normal_cdf(x) + x * pdf)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=DTYPE), 0.0)


def relu_backward(dy: np.ndarray, x: np.ndarray) -> np.ndarray:
    return dy * (x > 0)


def dropout(x: np.ndarray, p: float, rng: Rng, training: bool) -> np.ndarray:
    """Zero each element with probability ``p`` and rescale survivors by 1/(1-p).

    Inference mode (``training=False``) is the identity, bit-exact; no draw
    is consumed from ``rng`` in that case or when ``p == 0``.
    """
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    keep = rng.random(size=x.shape) >= p
    return np.where(keep, x / (1.0 - p), 0.0)


# ---------------------------------------------------------------------------
# 2-D ops: conv / batch norm / max pool
# ---------------------------------------------------------------------------

def _pad_amount(k: int, padding: str) -> int:
    if padding == "same":
        return (k - 1) // 2
    if padding == "valid":
        return 0
    raise ValueError(f"padding must be 'same' or 'valid', got {padding!r}")


def conv2d(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray | None = None,
           stride: int = 1, padding: str = "same") -> np.ndarray:
    """Cross-correlation of [H, W, Cin] with kernel [kh, kw, Cin, Cout].

    Output height is floor((H + 2p - kh) / stride) + 1 with p the per-side
    padding (0 for 'valid', (k-1)/2 for 'same'); kernel dims must be odd.
    """
    x = np.asarray(x, dtype=DTYPE)
    kernel = np.asarray(kernel, dtype=DTYPE)
    kh, kw, cin, cout = kernel.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError("conv2d kernel dims must be odd")
    if x.ndim != 3 or x.shape[2] != cin:
        raise ValueError(f"conv2d: input shape {x.shape} incompatible with kernel {kernel.shape}")
    ph, pw = _pad_amount(kh, padding), _pad_amount(kw, padding)
    h, w = x.shape[:2]
    if h + 2 * ph < kh or w + 2 * pw < kw:
        raise ValueError("conv2d: kernel larger than padded input")
    xp = np.pad(x, ((ph, ph), (pw, pw), (0, 0)))
    oh = (h + 2 * ph - kh) // stride + 1
    ow = (w + 2 * pw - kw) // stride + 1
    # im2col via strided window view, then one contraction
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(0, 1))
    windows = windows[::stride, ::stride]  # [oh, ow, cin, kh, kw]
    out = np.einsum("xycij,ijcd->xyd", windows, kernel, optimize=True)
    if bias is not None:
        out = out + bias
    return check_finite(np.ascontiguousarray(out), "conv2d output")


def conv2d_backward(dy: np.ndarray, x: np.ndarray, kernel: np.ndarray,
                    stride: int = 1, padding: str = "same") -> np.ndarray:
    """Input gradient of ``conv2d``; accumulation loop over output positions."""
    kernel = np.asarray(kernel, dtype=DTYPE)
    kh, kw, cin, _ = kernel.shape
    ph, pw = _pad_amount(kh, padding), _pad_amount(kw, padding)
    h, w = x.shape[:2]
    dxp = np.zeros((h + 2 * ph, w + 2 * pw, cin), dtype=DTYPE)
    kflat = kernel.reshape(kh * kw * cin, -1)  # [kh*kw*cin, cout]
    oh, ow = dy.shape[:2]
    for i in range(oh):
        for j in range(ow):
            patch_grad = kflat @ dy[i, j]  # [kh*kw*cin]
            dxp[i * stride:i * stride + kh, j * stride:j * stride + kw] += \
                patch_grad.reshape(kh, kw, cin)
    return dxp[ph:ph + h, pw:pw + w]


@dataclass
class BatchNormStats:
    """Running per-channel statistics used at inference time."""

    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=DTYPE)
        self.var = np.asarray(self.var, dtype=DTYPE)

    @classmethod
    def fresh(cls, channels: int) -> "BatchNormStats":
        return cls(mean=np.zeros(channels), var=np.ones(channels))


def batch_norm2d(x: np.ndarray, stats: BatchNormStats, gamma: np.ndarray,
                 beta: np.ndarray, training: bool, momentum: float = 0.1,
                 eps: float = 1e-5) -> np.ndarray:
    """Per-channel normalization over all leading axes of [..., C].

    Training mode normalizes by the batch statistics of ``x`` and folds them
    into ``stats`` as running = (1 - momentum) * running + momentum * batch.
    Inference mode normalizes by the running statistics unchanged.
    """
    x = np.asarray(x, dtype=DTYPE)
    axes = tuple(range(x.ndim - 1))
    if training:
        mu = x.mean(axis=axes)
        var = x.var(axis=axes)
        stats.mean = (1.0 - momentum) * stats.mean + momentum * mu
        stats.var = (1.0 - momentum) * stats.var + momentum * var
    else:
        mu, var = stats.mean, stats.var
    xhat = (x - mu) / np.sqrt(var + eps)
    return check_finite(gamma * xhat + beta, "batch_norm output")


def batch_norm2d_backward_inference(dy: np.ndarray, stats: BatchNormStats,
                                    gamma: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Input gradient of inference-mode ``batch_norm2d`` (a fixed affine map)."""
    return dy * gamma / np.sqrt(stats.var + eps)


def max_pool2d(x: np.ndarray, window: int = 2, stride: int = 2) -> np.ndarray:
    """Channelwise window maximum; odd trailing rows/cols padded with -inf."""
    x = np.asarray(x, dtype=DTYPE)
    h, w, c = x.shape
    oh = -(-max(h - window, 0) // stride) + 1
    ow = -(-max(w - window, 0) // stride) + 1
    need_h = (oh - 1) * stride + window
    need_w = (ow - 1) * stride + window
    if need_h > h or need_w > w:
        x = np.pad(x, ((0, need_h - h), (0, need_w - w), (0, 0)),
                   constant_values=-np.inf)
    out = np.full((oh, ow, c), -np.inf, dtype=DTYPE)
    for di in range(window):
        for dj in range(window):
            out = np.maximum(out, x[di:di + (oh - 1) * stride + 1:stride,
                                    dj:dj + (ow - 1) * stride + 1:stride])
    return check_finite(out, "max_pool output")


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

def grad_check(f, x: np.ndarray, h: float = 1e-5) -> float:
    """Compare an analytic gradient with central differences.

    ``f`` maps an array to ``(scalar value, gradient array)``. Returns the
    max over coordinates of |analytic - numeric| / max(1, |numeric|).
    """
    x = np.asarray(x, dtype=DTYPE)
    _, grad = f(x)
    grad = np.asarray(grad, dtype=DTYPE)
    if grad.shape != x.shape:
        raise ValueError("gradient shape does not match input shape")
    worst = 0.0
    flat = x.reshape(-1)
    for idx in range(flat.size):
        xp = flat.copy()
        xp[idx] += h
        fp, _ = f(xp.reshape(x.shape))
        xm = flat.copy()
        xm[idx] -= h
        fm, _ = f(xm.reshape(x.shape))
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise FloatingPointError("non-finite value during grad_check")
        numeric = (fp - fm) / (2.0 * h)
        err = abs(grad.reshape(-1)[idx] - numeric) / max(1.0, abs(numeric))
        worst = max(worst, err)
    return worst
