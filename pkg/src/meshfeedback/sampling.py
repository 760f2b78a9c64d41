"""Point-wise feature extraction from spatial feature maps.

Bilinear sampling uses the same pixel-center convention as camera.to_pixel
and clamps out-of-range coordinates to the border, so off-frame mesh points
still receive (edge) features. Sampled features go through a small shared
MLP per pyramid level and are concatenated in point order.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import Tensor, nn

from . import body as body_model
from . import camera
from .body import BodyParams, TemplateBody
from .errors import ConfigurationError


@dataclass
class SamplePoints:
    points: Tensor  # (..., M, 2) normalized coordinates
    source: str     # grid | mesh_aligned | mean_pose_mesh

    @property
    def count(self) -> int:
        return self.points.shape[-2]


def bilinear_sample(fmap: Tensor, points: Tensor) -> Tensor:
    """Sample (B, C, H, W) maps at (B, M, 2) normalized points -> (B, M, C).

    Unbatched (C, H, W) + (M, 2) inputs are accepted too. Differentiable in
    both the map values and the point coordinates; coordinates outside
    [-1, 1] are clamped to the border pixel.
    """
    squeeze = fmap.dim() == 3
    if squeeze:
        fmap = fmap.unsqueeze(0)
        points = points.unsqueeze(0)
    b, c, h, w = fmap.shape
    px = ((points[..., 0] + 1.0) * 0.5 * w - 0.5).clamp(0.0, w - 1.0)
    py = ((points[..., 1] + 1.0) * 0.5 * h - 0.5).clamp(0.0, h - 1.0)
    x0 = px.floor().clamp(0, max(w - 2, 0)).long()
    y0 = py.floor().clamp(0, max(h - 2, 0)).long()
    x1 = (x0 + 1).clamp(max=w - 1)
    y1 = (y0 + 1).clamp(max=h - 1)
    wx = (px - x0.to(px.dtype)).unsqueeze(-1)
    wy = (py - y0.to(py.dtype)).unsqueeze(-1)

    bidx = torch.arange(b, device=fmap.device).unsqueeze(-1)
    v00 = fmap[bidx, :, y0, x0]
    v01 = fmap[bidx, :, y0, x1]
    v10 = fmap[bidx, :, y1, x0]
    v11 = fmap[bidx, :, y1, x1]
    out = (v00 * (1 - wy) * (1 - wx) + v01 * (1 - wy) * wx
           + v10 * wy * (1 - wx) + v11 * wy * wx)
    return out.squeeze(0) if squeeze else out


def grid_points(n: int, dtype=torch.float32) -> SamplePoints:
    """Centers of an n-by-n uniform partition of [-1, 1]^2, row-major."""
    if n < 1:
        raise ConfigurationError("grid size must be >= 1")
    coords = -1.0 + (2.0 * torch.arange(n, dtype=dtype) + 1.0) / n
    gy, gx = torch.meshgrid(coords, coords, indexing="ij")
    pts = torch.stack([gx.reshape(-1), gy.reshape(-1)], dim=-1)
    return SamplePoints(points=pts, source="grid")


def mesh_aligned_points(params: BodyParams, body: TemplateBody,
                        source: str = "mesh_aligned") -> SamplePoints:
    """Project the downsampled posed mesh into normalized image coordinates."""
    mesh = body_model.forward(params, body)
    down = body_model.downsample_mesh(mesh.vertices, body)
    pts = camera.project(down, params.camera)
    return SamplePoints(points=pts, source=source)


class PointFeatureExtractor(nn.Module):
    """Per-point reduction MLP applied after bilinear sampling (Eq.-style F)."""

    def __init__(self, in_channels: int, out_dim: int = 5, hidden: tuple[int, int] = (128, 64)):
        super().__init__()
        self.in_channels = in_channels
        self.out_dim = out_dim
        self.mlp = nn.Sequential(
            nn.Linear(in_channels, hidden[0]), nn.ReLU(inplace=True),
            nn.Linear(hidden[0], hidden[1]), nn.ReLU(inplace=True),
            nn.Linear(hidden[1], out_dim))

    def forward(self, fmap: Tensor, points: Tensor) -> Tensor:
        """Sample, reduce, concatenate: returns (..., M * out_dim)."""
        if fmap.shape[-3] != self.in_channels:
            raise ConfigurationError(
                f"feature map has {fmap.shape[-3]} channels, extractor expects {self.in_channels}")
        sampled = bilinear_sample(fmap, points)
        reduced = self.mlp(sampled)
        return reduced.reshape(*reduced.shape[:-2], -1)
