"""Deterministic synthetic dataset generation.

Each sample draws per-joint axis-angle rotations inside per-bone limits,
shape coefficients, and a weak-perspective camera, renders the part-colored
body over seeded noise, and stores the posed joints, projected keypoints,
parameters, and ground-truth IUV map. Everything is a pure function of
(seed, index, attempt), so archives regenerate byte for byte.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import body as body_model
from . import camera
from .body import BodyParams, TemplateBody, load_body, save_body
from .errors import ConfigurationError, GenerationError
from .raster import IUVMap, load_iuv_bytes, rasterize_iuv, render_input, save_iuv_bytes
from .serial import canonical_json, pack, unpack_from

FORMAT_VERSION = 1

# max rotation angle (radians) per joint, grouped by skeleton
_LIMITS_16 = (0.5, 0.25, 0.25, 0.4,
              0.7, 1.0, 0.4, 0.7, 1.0, 0.4,
              0.8, 1.0, 0.4, 0.8, 1.0, 0.4)
_LIMITS_24 = (0.5, 0.7, 0.7, 0.2, 1.0, 1.0, 0.2, 0.4, 0.4, 0.2,
              0.3, 0.3, 0.3, 0.2, 0.2, 0.4, 0.8, 0.8, 1.0, 1.0,
              0.4, 0.4, 0.3, 0.3)
JOINT_LIMITS = {16: _LIMITS_16, 24: _LIMITS_24}

SHAPE_STD = 0.5
SHAPE_CLIP = 2.0
CAM_SCALE_RANGE = (0.7, 1.1)
CAM_SHIFT = 0.15


@dataclass
class GroundTruthSample:
    sample_id: str
    image: np.ndarray      # (3, H, W) float32 in [0, 1]
    keypoints: np.ndarray  # (K, 2) normalized coordinates
    joints: np.ndarray     # (K, 3) meters
    params: BodyParams
    iuv: IUVMap
    area: int              # foreground pixel count


def sample_params(seed: int, index: int, body: TemplateBody, attempt: int = 0) -> BodyParams:
    """Deterministic parameter draw for one sample."""
    k = body.n_joints
    if k not in JOINT_LIMITS:
        raise ConfigurationError(f"no joint limits for {k}-joint skeleton")
    limits = JOINT_LIMITS[k]
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(index), int(attempt)]))

    pose = np.zeros((k, 6))
    for j in range(k):
        axis = rng.normal(size=3)
        norm = np.linalg.norm(axis)
        axis = axis / norm if norm > 1e-9 else np.array([1.0, 0.0, 0.0])
        angle = rng.uniform(0.0, limits[j])
        mat = body_model.axis_angle_to_matrix(
            torch.as_tensor(axis, dtype=torch.float64), torch.tensor(angle, dtype=torch.float64))
        pose[j] = body_model.matrix_to_rot6d(mat).numpy()

    shape = np.clip(rng.normal(0.0, SHAPE_STD, size=body.n_shape), -SHAPE_CLIP, SHAPE_CLIP)
    cam = np.array([rng.uniform(*CAM_SCALE_RANGE),
                    rng.uniform(-CAM_SHIFT, CAM_SHIFT),
                    rng.uniform(-CAM_SHIFT, CAM_SHIFT)])

    # quantize to float32 so the archived parameters are exactly what was used
    def q(arr):
        return torch.as_tensor(arr.astype(np.float32).astype(np.float64))

    return BodyParams(pose=q(pose), shape=q(shape), camera=q(cam))


def _generate_sample(seed: int, index: int, body: TemplateBody, resolution: int,
                     min_coverage: float = 0.05, max_attempts: int = 20) -> GroundTruthSample:
    for attempt in range(max_attempts):
        params = sample_params(seed, index, body, attempt)
        mesh = body_model.forward(params, body)
        iuv = rasterize_iuv(mesh, body, params.camera, resolution, resolution)
        area = int((iuv.part > 0).sum())
        if area < min_coverage * resolution * resolution:
            continue
        bg_seed = int(np.random.SeedSequence([seed, index, attempt, 7]).generate_state(1)[0])
        image = render_input(mesh, body, params.camera, resolution, resolution, bg_seed)
        kp = camera.project(mesh.joints, params.camera)
        return GroundTruthSample(
            sample_id=f"s{index:05d}",
            image=image.astype(np.float32),
            keypoints=kp.numpy(),
            joints=mesh.joints.numpy(),
            params=params, iuv=iuv, area=area)
    raise GenerationError(f"sample {index}: no draw reached {min_coverage:.0%} coverage "
                          f"in {max_attempts} attempts")


@dataclass
class SynthDataset:
    body: TemplateBody
    samples: list[GroundTruthSample]
    seed: int
    resolution: int

    def __len__(self) -> int:
        return len(self.samples)

    def params_list(self) -> list[BodyParams]:
        return [s.params for s in self.samples]

    def mean_params(self) -> BodyParams:
        return body_model.mean_params(self.params_list())


def make_dataset(seed: int, count: int, body: TemplateBody, resolution: int,
                 out_dir=None) -> SynthDataset:
    """Generate `count` samples; write an archive when out_dir is given."""
    if count < 1:
        raise ConfigurationError("dataset needs at least one sample")
    samples = [_generate_sample(seed, i, body, resolution) for i in range(count)]
    dataset = SynthDataset(body=body, samples=samples, seed=seed, resolution=resolution)
    if out_dir is not None:
        save_dataset(dataset, out_dir)
    return dataset


def _sample_record(sample: GroundTruthSample) -> bytes:
    meta = {"kind": "gt_sample", "version": FORMAT_VERSION,
            "sample_id": sample.sample_id, "area": sample.area}
    arrays = [("image", sample.image),
              ("keypoints", sample.keypoints),
              ("joints", sample.joints),
              ("theta", sample.params.flat().numpy())]
    return pack(meta, arrays) + save_iuv_bytes(sample.iuv)


def save_dataset(dataset: SynthDataset, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    body_path = out / "body.bin"
    save_body(dataset.body, body_path)
    body_hash = hashlib.sha256(body_path.read_bytes()).hexdigest()
    ids = []
    for sample in dataset.samples:
        (out / f"{sample.sample_id}.bin").write_bytes(_sample_record(sample))
        ids.append(sample.sample_id)
    manifest = {"kind": "synth_dataset", "version": FORMAT_VERSION,
                "seed": dataset.seed, "count": len(dataset.samples),
                "resolution": dataset.resolution, "body_sha256": body_hash,
                "sample_ids": ids}
    (out / "manifest.json").write_bytes(canonical_json(manifest) + b"\n")


def load_dataset(path) -> SynthDataset:
    root = Path(path)
    manifest = json.loads((root / "manifest.json").read_text())
    if manifest.get("kind") != "synth_dataset":
        raise ConfigurationError(f"{path} is not a dataset archive")
    body_bytes = (root / "body.bin").read_bytes()
    if hashlib.sha256(body_bytes).hexdigest() != manifest["body_sha256"]:
        raise ConfigurationError("body archive does not match manifest hash")
    body = load_body(root / "body.bin")
    samples = []
    for sid in manifest["sample_ids"]:
        data = (root / f"{sid}.bin").read_bytes()
        meta, arrays, end = unpack_from(data, 0)
        if meta.get("kind") != "gt_sample":
            raise ConfigurationError(f"{sid}: not a sample record")
        iuv = load_iuv_bytes(data[end:])
        theta = torch.as_tensor(arrays["theta"], dtype=torch.float64)
        samples.append(GroundTruthSample(
            sample_id=meta["sample_id"],
            image=arrays["image"],
            keypoints=arrays["keypoints"].astype(np.float64),
            joints=arrays["joints"].astype(np.float64),
            params=BodyParams.from_flat(theta, body.n_joints, body.n_shape),
            iuv=iuv, area=int(meta["area"])))
    return SynthDataset(body=body, samples=samples, seed=int(manifest["seed"]),
                        resolution=int(manifest["resolution"]))
