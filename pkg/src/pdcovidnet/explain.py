"""Grad-CAM / Grad-CAM++ heatmaps over the final convolution's feature maps."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ContractError, ShapeError
from .imaging import resize_bilinear
from .tensor import DTYPE, Tensor


@dataclass
class SaliencyInputs:
    activations: Tensor  # K x h x w, post-ReLU
    gradients: Tensor  # dY/dA, same shape
    score: float = float("nan")
    class_index: int = -1

    def __post_init__(self):
        self.activations = np.asarray(self.activations, dtype=DTYPE)
        self.gradients = np.asarray(self.gradients, dtype=DTYPE)
        if self.activations.ndim != 3 or self.activations.shape != self.gradients.shape:
            raise ShapeError(
                f"activations {self.activations.shape} and gradients {self.gradients.shape} "
                "must share a K x h x w shape"
            )


@dataclass
class Heatmap:
    values: Tensor
    class_index: int
    method: str
    normalized: bool = False

    @property
    def is_zero(self) -> bool:
        return not np.any(self.values > 0)

    def normalize(self) -> "Heatmap":
        """Scale so the maximum is 1; an all-zero map stays zero."""
        peak = float(self.values.max())
        values = self.values / peak if peak > 0 else self.values.copy()
        return Heatmap(values, self.class_index, self.method, normalized=True)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            for row in self.values:
                w.writerow([repr(float(v)) for v in row])


def weighted_map(weights: Tensor, activations: Tensor) -> Tensor:
    """``ReLU(sum_k w_k A^k)``."""
    return np.maximum(np.tensordot(weights, activations, axes=(0, 0)), 0.0)


def grad_cam_weights(inputs: SaliencyInputs) -> Tensor:
    return inputs.gradients.mean(axis=(1, 2))


def grad_cam_pp_alpha(inputs: SaliencyInputs) -> Tensor:
    """Pixel coefficients with higher derivatives replaced by powers of the gradient.

    ``alpha = g^2 / (2 g^2 + sum_ab(A) * g^3)``; zero denominators give 0.
    """
    g = inputs.gradients
    g2 = g * g
    denom = 2.0 * g2 + inputs.activations.sum(axis=(1, 2), keepdims=True) * g2 * g
    safe = np.where(denom != 0.0, denom, 1.0)
    return np.where(denom != 0.0, g2 / safe, 0.0)


def grad_cam_pp_weights(inputs: SaliencyInputs, alpha: Optional[Tensor] = None) -> Tensor:
    if alpha is None:
        alpha = grad_cam_pp_alpha(inputs)
    return (alpha * np.maximum(inputs.gradients, 0.0)).sum(axis=(1, 2))


def grad_cam(inputs: SaliencyInputs) -> Heatmap:
    return Heatmap(weighted_map(grad_cam_weights(inputs), inputs.activations), inputs.class_index, "grad-cam")


def grad_cam_pp(inputs: SaliencyInputs) -> Heatmap:
    return Heatmap(weighted_map(grad_cam_pp_weights(inputs), inputs.activations), inputs.class_index,
                   "grad-cam++")


METHODS = {"grad-cam": grad_cam, "grad-cam++": grad_cam_pp}


def saliency(model, image: Tensor, class_index: int, method: str = "grad-cam", score: str = "prob") -> Heatmap:
    """Run ``model`` on ``image`` and build the heatmap for ``class_index``."""
    a, g, y = model.activations_and_gradients(image, class_index, score=score)
    return METHODS[method](SaliencyInputs(a, g, y, class_index))


# -- colouring -------------------------------------------------------------------


def _jet_table(n: int = 256) -> np.ndarray:
    x = np.linspace(0.0, 1.0, n)
    r = np.clip(1.5 - np.abs(4.0 * x - 3.0), 0.0, 1.0)
    g = np.clip(1.5 - np.abs(4.0 * x - 2.0), 0.0, 1.0)
    b = np.clip(1.5 - np.abs(4.0 * x - 1.0), 0.0, 1.0)
    table = np.stack([r, g, b], axis=1)
    table.setflags(write=False)
    return table


# 256-entry piecewise-linear blue -> cyan -> yellow -> red ramp
JET = _jet_table()
COLORMAPS = {"jet": JET}


def apply_colormap(values: Tensor, colormap: str = "jet") -> Tensor:
    """Map values in [0, 1] to ``3 x H x W`` RGB via table lookup."""
    table = COLORMAPS[colormap]
    idx = np.clip(np.rint(values * (len(table) - 1)), 0, len(table) - 1).astype(np.intp)
    return np.moveaxis(table[idx], -1, 0)


def upsample_overlay(heatmap: Heatmap, image: Tensor, colormap: str = "jet", alpha: float = 0.4) -> Tensor:
    """Blend the coloured, bilinearly upsampled heatmap over a grayscale copy of ``image``.

    ``image`` is ``H x W`` or ``C x H x W`` in [0, 1]; returns ``3 x H x W`` in [0, 1].
    """
    v = heatmap.values
    if not heatmap.normalized or v.min() < 0 or v.max() > 1:
        raise ContractError("overlay needs a normalized heatmap with values in [0, 1]")
    if not 0.0 <= alpha <= 1.0:
        raise ContractError("alpha must lie in [0, 1]")
    image = np.asarray(image, dtype=DTYPE)
    if image.ndim == 2:
        gray = image
    else:
        gray = image[0] if np.all(image == image[0]) else image.mean(axis=0)
    h, w = gray.shape
    up = np.clip(resize_bilinear(v, h, w), 0.0, 1.0)
    color = apply_colormap(up, colormap)
    out = alpha * color + (1.0 - alpha) * np.broadcast_to(gray, (3, h, w))
    return np.clip(out, 0.0, 1.0)
