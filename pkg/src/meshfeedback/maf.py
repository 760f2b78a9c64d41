"""The mesh alignment feedback loop.

Starting from the dataset-mean parameters, each iteration samples point-wise
features (grid pattern at the first level, projections of the current
downsampled mesh afterwards), feeds them with the current parameters to a
residual regressor, and adds the predicted update. Pyramidal mode pairs
iteration t with pyramid level t and its own regressor; non-pyramidal mode
samples the finest map every time with one shared regressor.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
from torch import Tensor, nn

from . import body as body_model
from . import camera
from .body import BodyParams, TemplateBody
from .config import ModelSpec
from .encoder import FeaturePyramid, PyramidEncoder
from .errors import ConfigurationError
from .sampling import PointFeatureExtractor, grid_points

FEEDBACK_MODES = ("global", "grid", "mesh_aligned")
INIT_MODES = ("grid", "mean_pose_mesh")


@dataclass(frozen=True)
class LoopConfig:
    iterations: int = 3
    feedback_mode: str = "mesh_aligned"
    init_mode: str = "grid"
    pyramidal: bool = True
    share_regressor: bool = False
    detach_sample_coords: bool = False

    def __post_init__(self):
        if self.iterations < 1:
            raise ConfigurationError("need at least one feedback iteration")
        if self.feedback_mode not in FEEDBACK_MODES:
            raise ConfigurationError(f"feedback_mode must be one of {FEEDBACK_MODES}")
        if self.init_mode not in INIT_MODES:
            raise ConfigurationError(f"init_mode must be one of {INIT_MODES}")
        if not self.pyramidal and not self.share_regressor:
            raise ConfigurationError("non-pyramidal mode requires a shared regressor")
        if self.feedback_mode == "global" and self.pyramidal:
            raise ConfigurationError("global feedback does not use the pyramid; set pyramidal=false")


def loop_for_mode(feedback_mode: str, init_mode: str = "grid", iterations: int = 3) -> LoopConfig:
    """Standard ablation wiring: global is non-pyramidal with one regressor."""
    pyramidal = feedback_mode != "global"
    return LoopConfig(iterations=iterations, feedback_mode=feedback_mode,
                      init_mode=init_mode, pyramidal=pyramidal,
                      share_regressor=not pyramidal)


@dataclass
class LoopTrace:
    """Per-iteration predictions Theta_1..Theta_T and their derived geometry."""

    thetas: list[Tensor] = field(default_factory=list)      # (B, D)
    vertices: list[Tensor] = field(default_factory=list)    # (B, N, 3)
    joints: list[Tensor] = field(default_factory=list)      # (B, K, 3)
    keypoints: list[Tensor] = field(default_factory=list)   # (B, K, 2)
    n_joints: int = 0
    n_shape: int = 0

    def params(self, t: int) -> BodyParams:
        return BodyParams.from_flat(self.thetas[t], self.n_joints, self.n_shape)

    def pose6d(self, t: int) -> Tensor:
        return self.params(t).pose

    def shapes(self, t: int) -> Tensor:
        return self.params(t).shape

    def cameras(self, t: int) -> Tensor:
        return self.params(t).camera

    def __len__(self) -> int:
        return len(self.thetas)


class ParamRegressor(nn.Module):
    """Two hidden layers with dropout in between; residual head zero-initialized
    so the loop starts exactly at the mean parameters."""

    def __init__(self, feat_dim: int, param_dim: int, hidden: tuple[int, int],
                 dropout: float = 0.5):
        super().__init__()
        self.feat_dim = feat_dim
        self.fc1 = nn.Linear(feat_dim + param_dim, hidden[0])
        self.drop1 = nn.Dropout(dropout)
        self.fc2 = nn.Linear(hidden[0], hidden[1])
        self.drop2 = nn.Dropout(dropout)
        self.dec = nn.Linear(hidden[1], param_dim)
        nn.init.zeros_(self.dec.weight)
        nn.init.zeros_(self.dec.bias)

    def forward(self, theta: Tensor, features: Tensor) -> Tensor:
        if features.shape[-1] != self.feat_dim:
            raise ConfigurationError(
                f"regressor expects features of length {self.feat_dim}, got {features.shape[-1]}")
        x = torch.cat([features, theta], dim=-1)
        x = torch.relu(self.fc1(x))
        x = self.drop1(x)
        x = torch.relu(self.fc2(x))
        x = self.drop2(x)
        return self.dec(x)


class MAFNetwork(nn.Module):
    """Encoder, point-feature extractors, and the residual update loop."""

    def __init__(self, spec: ModelSpec, body: TemplateBody, loop: LoopConfig):
        super().__init__()
        if body.n_joints != spec.n_joints or body.n_vertices != spec.n_verts:
            raise ConfigurationError("body does not match the model preset")
        if loop.pyramidal and loop.iterations != spec.levels:
            raise ConfigurationError(
                f"pyramidal loop needs iterations == pyramid levels ({spec.levels})")
        self.spec = spec
        self.loop = loop
        self.body = body

        self.encoder = PyramidEncoder(
            image_size=spec.image_size, channels=spec.channels,
            global_channels=spec.global_channels, trunk_channels=spec.trunk_channels,
            deconv_strides=spec.deconv_strides, n_parts=spec.n_parts)

        dims = [self._feature_dim(t) for t in range(loop.iterations)]
        if loop.feedback_mode == "global":
            self.extractors = nn.ModuleList()
        else:
            n_extract = loop.iterations if loop.pyramidal else 1
            self.extractors = nn.ModuleList(
                PointFeatureExtractor(spec.channels, spec.point_dim, spec.mlp_hidden)
                for _ in range(n_extract))
        if loop.share_regressor:
            if len(set(dims)) != 1:
                raise ConfigurationError(
                    f"shared regressor needs one input size, got {dims} "
                    "(mesh-aligned feedback with grid init cannot share)")
            self.regressors = nn.ModuleList(
                [ParamRegressor(dims[0], spec.param_size, spec.reg_hidden, spec.dropout)])
        else:
            self.regressors = nn.ModuleList(
                ParamRegressor(d, spec.param_size, spec.reg_hidden, spec.dropout) for d in dims)

        grid = grid_points(spec.grid_n).points
        self.register_buffer("grid", grid)
        self.register_buffer("mean_theta", self._default_mean())

    def _default_mean(self) -> Tensor:
        pose = body_model.identity_pose(self.spec.n_joints, dtype=torch.float32)
        shape = torch.zeros(self.spec.n_shape)
        cam = torch.tensor([0.9, 0.0, 0.0])
        return BodyParams(pose=pose, shape=shape, camera=cam).flat()

    def _feature_dim(self, level: int) -> int:
        if self.loop.feedback_mode == "global":
            return self.spec.global_channels
        if level == 0:
            source = "grid" if self.loop.init_mode == "grid" else "mesh"
        else:
            source = "grid" if self.loop.feedback_mode == "grid" else "mesh"
        points = self.spec.grid_n ** 2 if source == "grid" else self.spec.n_down
        return points * self.spec.point_dim

    def set_mean_params(self, params: BodyParams) -> None:
        with torch.no_grad():
            self.mean_theta.copy_(params.flat().to(self.mean_theta.dtype))

    def regressor_step(self, level: int, theta: Tensor, features: Tensor) -> Tensor:
        reg = self.regressors[0] if self.loop.share_regressor else self.regressors[level]
        return reg(theta, features)

    def _mesh_points(self, vertices: Tensor, cam: Tensor) -> Tensor:
        down = body_model.downsample_mesh(vertices, self.body)
        pts = camera.project(down, cam)
        if self.loop.detach_sample_coords:
            pts = pts.detach()
        return pts

    def _features(self, pyramid: FeaturePyramid, phi_g: Tensor, level: int,
                  theta: Tensor, vertices: Tensor) -> Tensor:
        """Feedback features for one level given the current estimate."""
        if self.loop.feedback_mode == "global":
            return phi_g
        fmap = pyramid.maps[level] if self.loop.pyramidal else pyramid.finest
        extractor = self.extractors[level] if self.loop.pyramidal else self.extractors[0]
        use_grid = (self.loop.init_mode == "grid" if level == 0
                    else self.loop.feedback_mode == "grid")
        if use_grid:
            pts = self.grid.unsqueeze(0).expand(fmap.shape[0], -1, -1)
        else:
            cam = BodyParams.from_flat(theta, self.spec.n_joints, self.spec.n_shape).camera
            pts = self._mesh_points(vertices, cam)
        return extractor(fmap, pts)

    def _body_state(self, theta: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        params = BodyParams.from_flat(theta, self.spec.n_joints, self.spec.n_shape)
        mesh = body_model.forward(params, self.body)
        kp = camera.project(mesh.joints, params.camera)
        return mesh.vertices, mesh.joints, kp

    def run(self, image: Tensor, return_aux: bool = False):
        """Run the feedback loop; optionally also return the auxiliary IUV logits."""
        if image.dim() == 3:
            image = image.unsqueeze(0)
        pyramid, phi_g = self.encoder_all(image)
        b = image.shape[0]
        theta = self.mean_theta.unsqueeze(0).expand(b, -1)
        vertices, _, _ = self._body_state(theta)

        trace = LoopTrace(n_joints=self.spec.n_joints, n_shape=self.spec.n_shape)
        for t in range(self.loop.iterations):
            feats = self._features(pyramid, phi_g, t, theta, vertices)
            theta = theta + self.regressor_step(t, theta, feats)
            vertices, joints, kp = self._body_state(theta)
            trace.thetas.append(theta)
            trace.vertices.append(vertices)
            trace.joints.append(joints)
            trace.keypoints.append(kp)
        if return_aux:
            return trace, self.encoder.predict_iuv(pyramid)
        return trace

    def encoder_all(self, image: Tensor) -> tuple[FeaturePyramid, Tensor]:
        """One trunk pass feeding both the pyramid and the global vector."""
        deep = self.encoder.trunk(self.encoder._check_input(image))
        maps = []
        x = deep
        for stage in self.encoder.deconv_stages:
            x = stage(x)
            maps.append(x)
        return FeaturePyramid(maps=maps), PyramidEncoder.global_pool(deep)

    def forward(self, image: Tensor):
        return self.run(image)

    def mean_params(self) -> BodyParams:
        return BodyParams.from_flat(self.mean_theta, self.spec.n_joints, self.spec.n_shape)
