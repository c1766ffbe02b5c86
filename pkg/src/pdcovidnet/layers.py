"""Layer kernels with explicit forward/backward passes.

Every forward function takes an optional :class:`GradTape`; when given, it
appends one record holding whatever the matching backward needs. Inputs
may be a single sample (``C x H x W`` for spatial layers, ``n`` for dense
layers) or a batch with a leading sample axis; outputs keep the same rank.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Any, Optional

import numpy as np

from .errors import DomainError, NumericError, ShapeError, TapeError
from .tensor import DTYPE, Tensor


def receptive_field(k: int, d: int) -> int:
    """Span of a ``k``-tap kernel dilated by ``d``: ``d*(k-1) + 1``."""
    if k < 1 or d < 1:
        raise DomainError(f"kernel and dilation must be positive, got k={k}, d={d}")
    return d * (k - 1) + 1


def output_extent(m: int, p: int, rf: int, s: int) -> int:
    """Output size ``floor((m + 2p - rf)/s) + 1`` along one spatial axis."""
    if s < 1 or p < 0 or rf < 1:
        raise ShapeError(f"invalid stride/padding/field: s={s}, p={p}, rf={rf}")
    if m + 2 * p < rf:
        raise ShapeError(f"input extent {m} with padding {p} is smaller than receptive field {rf}")
    return (m + 2 * p - rf) // s + 1


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel: int = 3
    stride: int = 1
    dilation: int = 1
    padding: Optional[int] = None  # None -> "same" padding d*(k-1)/2

    def __post_init__(self):
        if self.in_channels < 1 or self.out_channels < 1:
            raise DomainError("channel counts must be positive")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise DomainError(f"kernel must be odd and positive, got {self.kernel}")
        if self.stride < 1 or self.dilation < 1:
            raise DomainError("stride and dilation must be positive")
        if self.padding is None:
            object.__setattr__(self, "padding", self.dilation * (self.kernel - 1) // 2)
        elif self.padding < 0:
            raise DomainError("padding must be non-negative")

    @property
    def receptive_field(self) -> int:
        return receptive_field(self.kernel, self.dilation)

    def output_extent(self, m: int) -> int:
        return output_extent(m, self.padding, self.receptive_field, self.stride)


@dataclass
class LayerParams:
    """Weights and bias of a conv (``[out, in, k, k]``) or dense (``[in, out]``) layer."""

    weight: Tensor
    bias: Tensor

    def __post_init__(self):
        self.weight = np.ascontiguousarray(self.weight, dtype=DTYPE)
        self.bias = np.ascontiguousarray(self.bias, dtype=DTYPE)
        if not (np.isfinite(self.weight).all() and np.isfinite(self.bias).all()):
            raise NumericError("layer parameters must be finite")


@dataclass
class TapeRecord:
    layer: str
    kind: str
    out_shape: tuple
    cache: dict[str, Any]


class GradTape:
    """Ordered log of forward calls, consumed in reverse by backward."""

    def __init__(self, owner: Any = None):
        self.owner = owner
        self.records: list[TapeRecord] = []
        self.extras: dict[str, Any] = {}
        self._cursor: Optional[int] = None

    def __len__(self):
        return len(self.records)

    def push(self, layer: str, kind: str, out_shape: tuple, **cache) -> TapeRecord:
        if self._cursor is not None:
            raise TapeError("cannot record onto a tape that is being replayed")
        rec = TapeRecord(layer, kind, tuple(out_shape), cache)
        self.records.append(rec)
        return rec

    def pop(self, expected: Optional[str] = None) -> TapeRecord:
        """Return the next record in reverse forward order."""
        if self._cursor is None:
            self._cursor = len(self.records)
        if self._cursor == 0:
            raise TapeError("tape exhausted")
        rec = self.records[self._cursor - 1]
        if expected is not None and rec.layer != expected:
            raise TapeError(f"expected record for {expected!r}, found {rec.layer!r}")
        self._cursor -= 1
        return rec

    @property
    def exhausted(self) -> bool:
        return self._cursor == 0

    def rewind(self):
        self._cursor = None


def _record(tape, layer, kind, out, **cache):
    if tape is not None:
        tape.push(layer, kind, out.shape, **cache)


def _batched(x: Tensor, sample_rank: int) -> tuple[Tensor, bool]:
    x = np.asarray(x, dtype=DTYPE)
    if x.ndim == sample_rank:
        return x[None], True
    if x.ndim == sample_rank + 1:
        return x, False
    raise ShapeError(f"expected rank {sample_rank} or {sample_rank + 1}, got shape {x.shape}")


# -- convolution ---------------------------------------------------------------


def _gather_columns(xp: Tensor, spec: ConvSpec, ho: int, wo: int) -> Tensor:
    """Dilated im2col: ``(C, k, k, N, ho, wo)`` view of padded input ``xp``."""
    n, c = xp.shape[:2]
    k, d, s = spec.kernel, spec.dilation, spec.stride
    cols = np.empty((c, k, k, n, ho, wo), dtype=DTYPE)
    for u, v in itertools.product(range(k), range(k)):
        patch = xp[:, :, u * d : u * d + s * (ho - 1) + 1 : s, v * d : v * d + s * (wo - 1) + 1 : s]
        cols[:, u, v] = patch.transpose(1, 0, 2, 3)
    return cols


def conv2d_forward(x: Tensor, params: LayerParams, spec: ConvSpec, tape: Optional[GradTape] = None,
                   name: str = "conv") -> Tensor:
    xb, single = _batched(x, 3)
    n, c, h, w = xb.shape
    if c != spec.in_channels:
        raise ShapeError(f"{name}: expected {spec.in_channels} input channels, got {c}")
    if params.weight.shape != (spec.out_channels, spec.in_channels, spec.kernel, spec.kernel):
        raise ShapeError(f"{name}: weight shape {params.weight.shape} does not match {spec}")
    if not np.isfinite(xb).all():
        raise NumericError(f"{name}: non-finite input")
    ho, wo = spec.output_extent(h), spec.output_extent(w)
    p = spec.padding
    xp = np.pad(xb, ((0, 0), (0, 0), (p, p), (p, p))) if p else xb
    cols = _gather_columns(xp, spec, ho, wo).reshape(c * spec.kernel**2, n * ho * wo)
    out = params.weight.reshape(spec.out_channels, -1) @ cols
    out = out.reshape(spec.out_channels, n, ho, wo).transpose(1, 0, 2, 3)
    out += params.bias.reshape(1, -1, 1, 1)
    out = np.ascontiguousarray(out)
    if single:
        out = out[0]
    _record(tape, name, "conv", out, x=xb, single=single, params=params, spec=spec)
    return out


def conv2d_backward(grad_out: Tensor, record: TapeRecord) -> tuple[Tensor, Tensor, Tensor]:
    """Adjoints of :func:`conv2d_forward` w.r.t. input, weight and bias."""
    grad_out = np.asarray(grad_out, dtype=DTYPE)
    if grad_out.shape != record.out_shape:
        raise ShapeError(f"{record.layer}: grad shape {grad_out.shape} != output shape {record.out_shape}")
    xb, spec, params = record.cache["x"], record.cache["spec"], record.cache["params"]
    g = grad_out[None] if record.cache["single"] else grad_out
    n, c, h, w = xb.shape
    ho, wo = g.shape[2:]
    k, d, s, p = spec.kernel, spec.dilation, spec.stride, spec.padding

    g2 = g.transpose(1, 0, 2, 3).reshape(spec.out_channels, -1)
    grad_b = g.sum(axis=(0, 2, 3))
    xp = np.pad(xb, ((0, 0), (0, 0), (p, p), (p, p))) if p else xb
    cols = _gather_columns(xp, spec, ho, wo).reshape(c * k * k, -1)
    grad_w = (g2 @ cols.T).reshape(params.weight.shape)
    del cols

    dcols = (params.weight.reshape(spec.out_channels, -1).T @ g2).reshape(c, k, k, n, ho, wo)
    dxp = np.zeros_like(xp)
    for u, v in itertools.product(range(k), range(k)):
        dxp[:, :, u * d : u * d + s * (ho - 1) + 1 : s, v * d : v * d + s * (wo - 1) + 1 : s] += \
            dcols[:, u, v].transpose(1, 0, 2, 3)
    grad_x = dxp[:, :, p : p + h, p : p + w] if p else dxp
    grad_x = np.ascontiguousarray(grad_x)
    if record.cache["single"]:
        grad_x = grad_x[0]
    return grad_x, grad_w, grad_b


# -- ReLU ------------------------------------------------------------------------


def relu_forward(x: Tensor, tape: Optional[GradTape] = None, name: str = "relu") -> Tensor:
    x = np.asarray(x, dtype=DTYPE)
    mask = x > 0
    out = np.where(mask, x, 0.0)
    _record(tape, name, "relu", out, mask=mask)
    return out


def relu_backward(grad_out: Tensor, record: TapeRecord) -> Tensor:
    grad_out = np.asarray(grad_out, dtype=DTYPE)
    if grad_out.shape != record.out_shape:
        raise ShapeError(f"{record.layer}: grad shape {grad_out.shape} != {record.out_shape}")
    # gradient at exactly 0 is 0
    return np.where(record.cache["mask"], grad_out, 0.0)


# -- max pooling ---------------------------------------------------------------


def maxpool_forward(x: Tensor, tape: Optional[GradTape] = None, name: str = "pool",
                    window: int = 2, stride: int = 2) -> Tensor:
    """Non-overlapping ``window x window`` max pooling (``stride == window``)."""
    if window != stride:
        raise DomainError("only non-overlapping pooling (window == stride) is supported")
    xb, single = _batched(x, 3)
    n, c, h, w = xb.shape
    if h % window or w % window:
        raise ShapeError(f"{name}: spatial extent {h}x{w} not divisible by {window}")
    ho, wo = h // window, w // window
    blocks = xb.reshape(n, c, ho, window, wo, window).transpose(0, 1, 2, 4, 3, 5)
    blocks = blocks.reshape(n, c, ho, wo, window * window)
    # first occurrence in row-major window order wins ties
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
    if single:
        out = out[0]
    _record(tape, name, "pool", out, idx=idx, in_shape=xb.shape, single=single, window=window)
    return out


def maxpool_backward(grad_out: Tensor, record: TapeRecord) -> Tensor:
    grad_out = np.asarray(grad_out, dtype=DTYPE)
    if grad_out.shape != record.out_shape:
        raise ShapeError(f"{record.layer}: grad shape {grad_out.shape} != {record.out_shape}")
    g = grad_out[None] if record.cache["single"] else grad_out
    n, c, h, w = record.cache["in_shape"]
    win = record.cache["window"]
    ho, wo = h // win, w // win
    blocks = np.zeros((n, c, ho, wo, win * win), dtype=DTYPE)
    np.put_along_axis(blocks, record.cache["idx"][..., None], g[..., None], axis=-1)
    dx = blocks.reshape(n, c, ho, wo, win, win).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
    return dx[0] if record.cache["single"] else dx


# -- flatten -------------------------------------------------------------------


def flatten_forward(x: Tensor, tape: Optional[GradTape] = None, name: str = "flatten") -> Tensor:
    xb, single = _batched(x, 3)
    out = xb.reshape(xb.shape[0], -1)
    if single:
        out = out[0]
    _record(tape, name, "flatten", out, in_shape=np.shape(x))
    return out


def flatten_backward(grad_out: Tensor, record: TapeRecord) -> Tensor:
    grad_out = np.asarray(grad_out, dtype=DTYPE)
    if grad_out.shape != record.out_shape:
        raise ShapeError(f"{record.layer}: grad shape {grad_out.shape} != {record.out_shape}")
    return grad_out.reshape(record.cache["in_shape"])


# -- fully connected -------------------------------------------------------------


def fc_forward(x: Tensor, params: LayerParams, tape: Optional[GradTape] = None, name: str = "fc") -> Tensor:
    xb, single = _batched(x, 1)
    if xb.shape[1] != params.weight.shape[0]:
        raise ShapeError(f"{name}: input width {xb.shape[1]} != weight rows {params.weight.shape[0]}")
    out = xb @ params.weight + params.bias
    if single:
        out = out[0]
    _record(tape, name, "fc", out, x=xb, single=single, params=params)
    return out


def fc_backward(grad_out: Tensor, record: TapeRecord) -> tuple[Tensor, Tensor, Tensor]:
    grad_out = np.asarray(grad_out, dtype=DTYPE)
    if grad_out.shape != record.out_shape:
        raise ShapeError(f"{record.layer}: grad shape {grad_out.shape} != {record.out_shape}")
    g = grad_out[None] if record.cache["single"] else grad_out
    xb, params = record.cache["x"], record.cache["params"]
    grad_w = xb.T @ g
    grad_b = g.sum(axis=0)
    grad_x = g @ params.weight.T
    return (grad_x[0] if record.cache["single"] else grad_x), grad_w, grad_b


# -- dropout -------------------------------------------------------------------


def dropout_forward(x: Tensor, rate: float, mode: str = "infer", rng: Optional[np.random.Generator] = None,
                    tape: Optional[GradTape] = None, name: str = "dropout") -> Tensor:
    """Inverted dropout: survivors are scaled by ``1/(1-rate)`` in train mode."""
    if not 0.0 <= rate < 1.0:
        raise DomainError(f"dropout rate must lie in [0, 1), got {rate}")
    if mode not in ("train", "infer"):
        raise DomainError(f"unknown mode {mode!r}")
    x = np.asarray(x, dtype=DTYPE)
    if mode == "infer" or rate == 0.0:
        out = x.copy()
        _record(tape, name, "dropout", out, scale=None)
        return out
    if rng is None:
        raise DomainError("train-mode dropout needs an rng")
    keep = rng.random(x.shape) >= rate
    scale = keep / (1.0 - rate)
    out = x * scale
    _record(tape, name, "dropout", out, scale=scale)
    return out


def dropout_backward(grad_out: Tensor, record: TapeRecord) -> Tensor:
    grad_out = np.asarray(grad_out, dtype=DTYPE)
    if grad_out.shape != record.out_shape:
        raise ShapeError(f"{record.layer}: grad shape {grad_out.shape} != {record.out_shape}")
    scale = record.cache["scale"]
    return grad_out.copy() if scale is None else grad_out * scale


# -- softmax -------------------------------------------------------------------


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis, stabilised by subtracting the max."""
    x = np.asarray(x, dtype=DTYPE)
    z = np.exp(x - x.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


BACKWARD = {
    "conv": conv2d_backward,
    "relu": relu_backward,
    "pool": maxpool_backward,
    "flatten": flatten_backward,
    "fc": fc_backward,
    "dropout": dropout_backward,
}
