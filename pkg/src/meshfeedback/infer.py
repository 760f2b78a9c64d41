"""Single-image inference: per-iteration parameter dumps and mesh overlays."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from . import body as body_model
from .body import BodyParams
from .errors import ConfigurationError
from .maf import MAFNetwork
from .raster import part_palette, rasterize_iuv


def load_image(path, expected_size: int) -> np.ndarray:
    img = Image.open(path).convert("RGB")
    if img.size != (expected_size, expected_size):
        raise ConfigurationError(
            f"image is {img.size[0]}x{img.size[1]}, preset expects "
            f"{expected_size}x{expected_size}")
    arr = np.asarray(img, dtype=np.float32) / 255.0
    return arr.transpose(2, 0, 1)


def save_image(arr: np.ndarray, path) -> None:
    """(3, H, W) or (H, W) float array in [0, 1] -> PNG."""
    arr = np.clip(arr, 0.0, 1.0)
    if arr.ndim == 3:
        arr = arr.transpose(1, 2, 0)
    Image.fromarray((arr * 255.0 + 0.5).astype(np.uint8)).save(path)


def overlay_mesh(image: np.ndarray, model: MAFNetwork, theta: torch.Tensor,
                 alpha: float = 0.55) -> np.ndarray:
    """Blend the posed mesh's part colors over the input image."""
    res = image.shape[-1]
    params = BodyParams.from_flat(theta.double(), model.spec.n_joints, model.spec.n_shape)
    mesh = body_model.forward(params, model.body)
    iuv = rasterize_iuv(mesh, model.body, params.camera, res, res)
    palette = part_palette(model.body.n_parts)
    out = image.copy()
    ys, xs = np.nonzero(iuv.part > 0)
    colors = palette[iuv.part[ys, xs]].T
    out[:, ys, xs] = (1 - alpha) * out[:, ys, xs] + alpha * colors
    return out


def infer_image(model: MAFNetwork, image: np.ndarray, out_dir,
                dump_features: bool = False) -> dict:
    """Run the loop on one image; write per-iteration artifacts; return theta dump."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model.eval()
    tensor = torch.as_tensor(image, dtype=torch.float32).unsqueeze(0)
    with torch.no_grad():
        trace = model.run(tensor)
        pyramid, _ = model.encoder_all(tensor)

    dump = {"iterations": len(trace)}
    for t in range(len(trace)):
        theta = trace.thetas[t][0]
        dump[f"theta_{t + 1}"] = [float(v) for v in theta]
        save_image(overlay_mesh(image, model, theta), out / f"overlay_{t + 1}.png")
    with open(out / "params.json", "w") as fh:
        json.dump(dump, fh, indent=2, sort_keys=True)
        fh.write("\n")

    if dump_features:
        for level, fmap in enumerate(pyramid.maps):
            summed = fmap[0].sum(dim=0).numpy()
            lo, hi = summed.min(), summed.max()
            norm = (summed - lo) / (hi - lo) if hi > lo else np.zeros_like(summed)
            save_image(norm, out / f"feature_level_{level}.png")
    return dump
