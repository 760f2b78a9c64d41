"""Model presets and run configuration.

Two presets ship: "toy" (64px images, 64-channel pyramid at 4/8/16, a
512-vertex body with 16 joints) for everything that actually trains on a
CPU, and "paper" (224px, 256-channel pyramid at 14/28/56, 6890-vertex body
with 24 joints, 431-vertex downsample) whose dimensions match the
full-scale architecture exactly.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace

import yaml

from .body import TemplateBody, make_toy_body
from .errors import ConfigurationError
from .losses import LossWeights
from .serial import canonical_json

DEFAULT_BODY_SEED = 11


@dataclass(frozen=True)
class ModelSpec:
    name: str
    image_size: int
    channels: int            # C_s, shared by all pyramid maps
    global_channels: int     # C_g, trunk's deepest map
    trunk_channels: tuple[int, ...]
    deconv_strides: tuple[int, ...]
    grid_n: int
    point_dim: int           # reduced per-point feature dimension
    mlp_hidden: tuple[int, int]
    reg_hidden: tuple[int, int]
    dropout: float
    n_verts: int
    n_joints: int
    n_shape: int
    n_parts: int
    n_down: int

    @property
    def levels(self) -> int:
        return len(self.deconv_strides)

    @property
    def param_size(self) -> int:
        return self.n_joints * 6 + self.n_shape + 3

    @property
    def pyramid_sizes(self) -> tuple[int, ...]:
        res = self.image_size // (2 ** (len(self.trunk_channels) - 1))
        sizes = []
        for stride in self.deconv_strides:
            res = res * stride
            sizes.append(res)
        return tuple(sizes)


def toy_spec() -> ModelSpec:
    return ModelSpec(
        name="toy", image_size=64, channels=64, global_channels=256,
        trunk_channels=(16, 24, 32, 48, 64), deconv_strides=(1, 2, 2),
        grid_n=11, point_dim=5, mlp_hidden=(128, 64), reg_hidden=(256, 256),
        dropout=0.5, n_verts=512, n_joints=16, n_shape=10, n_parts=12, n_down=128)


def paper_spec() -> ModelSpec:
    return ModelSpec(
        name="paper", image_size=224, channels=256, global_channels=2048,
        trunk_channels=(32, 48, 64, 96, 128, 192), deconv_strides=(2, 2, 2),
        grid_n=21, point_dim=5, mlp_hidden=(128, 64), reg_hidden=(1024, 1024),
        dropout=0.5, n_verts=6890, n_joints=24, n_shape=10, n_parts=14, n_down=431)


PRESETS = {"toy": toy_spec, "paper": paper_spec}


def get_spec(name: str) -> ModelSpec:
    if name not in PRESETS:
        raise ConfigurationError(f"unknown preset {name!r} (choose from {sorted(PRESETS)})")
    return PRESETS[name]()


def build_body(spec: ModelSpec, body_seed: int = DEFAULT_BODY_SEED) -> TemplateBody:
    return make_toy_body(body_seed, n_verts=spec.n_verts, n_joints=spec.n_joints,
                         n_shape=spec.n_shape, n_parts=spec.n_parts, n_down=spec.n_down)


@dataclass
class RunConfig:
    """Flat key set shared by every CLI command; see README for the key list."""

    preset: str = "toy"
    seed: int = 0
    body_seed: int = DEFAULT_BODY_SEED
    dataset: str = ""
    val_dataset: str = ""
    out_dir: str = "runs/out"
    checkpoint: str = ""
    count: int = 64
    iterations: int = 3              # feedback iterations T
    feedback_mode: str = "mesh_aligned"
    init_mode: str = "grid"
    pyramidal: bool = True
    share_regressor: bool = False
    aux_enabled: bool = True
    detach_sample_coords: bool = False
    lambda_2d: float = 300.0
    lambda_3d: float = 300.0
    lambda_pose: float = 60.0
    lambda_shape: float = 0.6
    lambda_pi: float = 0.1
    lambda_uv: float = 0.5
    learning_rate: float = 1e-4
    batch_size: int = 16
    steps: int = 600
    checkpoint_every: int = 0        # 0 = final checkpoint only
    probe_size: int = 8
    dump_features: bool = False

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ConfigurationError(f"unknown preset {self.preset!r}")
        if self.preset == "paper":
            # full-size defaults reported for the reference setup
            if self.learning_rate == 1e-4:
                self.learning_rate = 5e-5
            if self.batch_size == 16:
                self.batch_size = 64

    @property
    def spec(self) -> ModelSpec:
        return get_spec(self.preset)

    def loss_weights(self) -> LossWeights:
        return LossWeights(lambda_2d=self.lambda_2d, lambda_3d=self.lambda_3d,
                           lambda_pose=self.lambda_pose, lambda_shape=self.lambda_shape,
                           lambda_pi=self.lambda_pi, lambda_uv=self.lambda_uv)

    def fingerprint(self) -> str:
        """Hash of every field that fixes the network/body shape."""
        keys = ("preset", "body_seed", "iterations", "feedback_mode", "init_mode",
                "pyramidal", "share_regressor", "aux_enabled")
        payload = {k: getattr(self, k) for k in keys}
        return hashlib.sha256(canonical_json(payload)).hexdigest()[:16]

    @staticmethod
    def from_file(path) -> "RunConfig":
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
        if not isinstance(data, dict):
            raise ConfigurationError(f"config file {path} must hold a flat mapping")
        return RunConfig.from_mapping(data)

    @staticmethod
    def from_mapping(data: dict) -> "RunConfig":
        valid = {f.name: f for f in fields(RunConfig)}
        unknown = set(data) - set(valid)
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        return RunConfig(**data)

    def with_overrides(self, overrides: list[str]) -> "RunConfig":
        """Apply `key=value` strings on top of this config."""
        valid = {f.name: f.type for f in fields(RunConfig)}
        updates = {}
        for item in overrides:
            if "=" not in item:
                raise ConfigurationError(f"override {item!r} is not key=value")
            key, _, raw = item.partition("=")
            if key not in valid:
                raise ConfigurationError(f"unknown config key {key!r}")
            updates[key] = _coerce(raw, getattr(self, key))
        return replace(self, **updates)

    def to_dict(self) -> dict:
        return asdict(self)


def _coerce(raw: str, current):
    if isinstance(current, bool):
        lowered = raw.strip().lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ConfigurationError(f"cannot parse boolean from {raw!r}")
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    return raw
