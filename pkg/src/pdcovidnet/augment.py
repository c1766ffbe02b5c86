"""Random affine augmentation with nearest-neighbour resampling and edge fill."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .tensor import Tensor


@dataclass(frozen=True)
class AugmentSpec:
    rotation_deg: float = 30.0
    height_shift: float = 0.15
    width_shift: float = 0.15
    shear: float = 0.10  # radians
    zoom: float = 0.10
    fill: str = "nearest"

    def __post_init__(self):
        mags = (self.rotation_deg, self.height_shift, self.width_shift, self.shear, self.zoom)
        if any(m < 0 for m in mags):
            raise DomainError("augmentation magnitudes must be non-negative")
        if max(self.height_shift, self.width_shift, self.shear, self.zoom) >= 1:
            raise DomainError("shift, shear and zoom magnitudes must be < 1")
        if self.fill != "nearest":
            raise DomainError(f"unsupported fill mode {self.fill!r}")


@dataclass(frozen=True)
class AffineParams:
    rotation: float = 0.0  # radians, counter-clockwise in (x right, y down) image coords
    shear: float = 0.0  # radians
    zoom: float = 1.0
    shift_y: float = 0.0  # pixels
    shift_x: float = 0.0

    @property
    def is_identity(self) -> bool:
        return (self.rotation, self.shear, self.zoom, self.shift_y, self.shift_x) == (0.0, 0.0, 1.0, 0.0, 0.0)


def sample_affine(spec: AugmentSpec, shape: tuple, rng: np.random.Generator) -> AffineParams:
    """One independent uniform draw per option."""
    h, w = shape[-2:]
    rot = math.radians(spec.rotation_deg)
    return AffineParams(
        rotation=float(rng.uniform(-rot, rot)) if rot else 0.0,
        shear=float(rng.uniform(-spec.shear, spec.shear)) if spec.shear else 0.0,
        zoom=float(rng.uniform(1 - spec.zoom, 1 + spec.zoom)) if spec.zoom else 1.0,
        shift_y=float(rng.uniform(-spec.height_shift, spec.height_shift)) * h if spec.height_shift else 0.0,
        shift_x=float(rng.uniform(-spec.width_shift, spec.width_shift)) * w if spec.width_shift else 0.0,
    )


def affine_matrix(params: AffineParams) -> np.ndarray:
    """Forward map on centred ``(x, y, 1)`` coords: rotate, then shear, zoom, translate."""
    c, s = math.cos(params.rotation), math.sin(params.rotation)
    rotate = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    shear = np.array([[1.0, math.tan(params.shear), 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    zoom = np.diag([params.zoom, params.zoom, 1.0])
    shift = np.array([[1.0, 0.0, params.shift_x], [0.0, 1.0, params.shift_y], [0.0, 0.0, 1.0]])
    return shift @ zoom @ shear @ rotate


def apply_affine(image: Tensor, params: AffineParams) -> Tensor:
    """Warp the last two axes of ``image``; channels share one transform."""
    image = np.asarray(image)
    if params.is_identity:
        return image.copy()
    h, w = image.shape[-2:]
    inverse = np.linalg.inv(affine_matrix(params))
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.mgrid[0:h, 0:w]
    pts = np.stack([xx.ravel() - cx, yy.ravel() - cy, np.ones(h * w)])
    src = inverse @ pts
    # nearest neighbour, out-of-bounds clamped to the closest edge pixel
    sx = np.clip(np.rint(src[0] + cx), 0, w - 1).astype(np.intp)
    sy = np.clip(np.rint(src[1] + cy), 0, h - 1).astype(np.intp)
    return image[..., sy, sx].reshape(image.shape)


def augment(image: Tensor, spec: AugmentSpec, rng: np.random.Generator) -> Tensor:
    return apply_affine(image, sample_affine(spec, np.shape(image), rng))
