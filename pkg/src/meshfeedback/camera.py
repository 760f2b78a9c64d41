"""Weak-perspective camera: orthographic drop of z, uniform scale, 2D shift.

Image coordinates are normalized so the frame spans [-1, 1] in both axes;
`to_pixel` is the single place that converts to pixel-center coordinates
(pixel centers sit at integers 0..W-1, the frame edge at -0.5 / W-0.5).
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import Tensor

from .errors import ConfigurationError


@dataclass
class CameraParams:
    scale: float
    tx: float
    ty: float

    def tensor(self, dtype=torch.float64) -> Tensor:
        return torch.tensor([self.scale, self.tx, self.ty], dtype=dtype)

    @staticmethod
    def from_tensor(cam: Tensor) -> "CameraParams":
        return CameraParams(float(cam[0]), float(cam[1]), float(cam[2]))


def project(points: Tensor, cam: Tensor) -> Tensor:
    """Map (..., M, 3) points through camera (..., 3) = (s, tx, ty) to (..., M, 2)."""
    if cam.shape[-1] != 3:
        raise ConfigurationError("camera tensor must end in (s, tx, ty)")
    s = cam[..., 0:1].unsqueeze(-1)
    t = cam[..., 1:3].unsqueeze(-2)
    return s * points[..., :2] + t


def to_pixel(points2d: Tensor, width: int, height: int) -> Tensor:
    """Normalized [-1,1] coordinates -> pixel-center coordinates (no clamping)."""
    if width < 1 or height < 1:
        raise ConfigurationError("image must be at least 1x1")
    x = (points2d[..., 0] + 1.0) * 0.5 * width - 0.5
    y = (points2d[..., 1] + 1.0) * 0.5 * height - 0.5
    return torch.stack([x, y], dim=-1)


def from_pixel(pixels: Tensor, width: int, height: int) -> Tensor:
    """Inverse of `to_pixel`."""
    x = (pixels[..., 0] + 0.5) * 2.0 / width - 1.0
    y = (pixels[..., 1] + 0.5) * 2.0 / height - 1.0
    return torch.stack([x, y], dim=-1)
