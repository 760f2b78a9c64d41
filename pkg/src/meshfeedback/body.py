"""Procedural articulated body model.

A capsule-segment humanoid stands in for a licensed statistical body asset:
same interface (pose + shape coefficients -> vertices + joints), same math
(6D rotations, linear blend skinning, learned-style joint regressor, mesh
downsampling), but generated deterministically from a seed.

Conventions: units are meters, y points down in the image plane so renders
come out upright, and the root joint's rotation is the global orientation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import Tensor

from .errors import ConfigurationError, DegenerateRotationError
from .serial import pack, unpack

# Identity rotation in the 6D representation: first two columns of eye(3).
IDENTITY_ROT6D = (1.0, 0.0, 0.0, 0.0, 1.0, 0.0)

_PARENT_16 = (-1, 0, 1, 2, 0, 4, 5, 0, 7, 8, 2, 10, 11, 2, 13, 14)
_JOINTS_16 = (
    (0.00, 0.00, 0.0),    # pelvis (root)
    (0.00, -0.15, 0.0),   # spine
    (0.00, -0.35, 0.0),   # chest
    (0.00, -0.58, 0.0),   # head
    (0.10, 0.06, 0.0),    # hips, knees, ankles (left then right)
    (0.12, 0.50, 0.0),
    (0.13, 0.92, 0.0),
    (-0.10, 0.06, 0.0),
    (-0.12, 0.50, 0.0),
    (-0.13, 0.92, 0.0),
    (0.21, -0.40, 0.0),   # shoulders, elbows, wrists (left then right)
    (0.45, -0.38, 0.0),
    (0.68, -0.36, 0.0),
    (-0.21, -0.40, 0.0),
    (-0.45, -0.38, 0.0),
    (-0.68, -0.36, 0.0),
)
# capsule label per non-root joint (bone parent->joint), 12 canonical parts
_LABEL_16 = {1: 1, 2: 2, 3: 3, 4: 4, 7: 4, 10: 4, 13: 4,
             5: 5, 6: 6, 8: 7, 9: 8, 11: 9, 12: 10, 14: 11, 15: 12}
_RADIUS_16 = {1: 0.11, 2: 0.11, 3: 0.085, 4: 0.05, 7: 0.05, 10: 0.05, 13: 0.05,
              5: 0.07, 8: 0.07, 6: 0.05, 9: 0.05,
              11: 0.045, 14: 0.045, 12: 0.04, 15: 0.04}

_PARENT_24 = (-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21)
_JOINTS_24 = (
    (0.00, 0.00, 0.0),    # pelvis (root)
    (0.10, 0.05, 0.0),    # hips
    (-0.10, 0.05, 0.0),
    (0.00, -0.12, 0.0),   # spine chain
    (0.12, 0.48, 0.0),    # knees
    (-0.12, 0.48, 0.0),
    (0.00, -0.24, 0.0),
    (0.13, 0.88, 0.0),    # ankles
    (-0.13, 0.88, 0.0),
    (0.00, -0.34, 0.0),
    (0.15, 0.96, 0.05),   # feet (toes forward)
    (-0.15, 0.96, 0.05),
    (0.00, -0.48, 0.0),   # neck
    (0.08, -0.40, 0.0),   # collars
    (-0.08, -0.40, 0.0),
    (0.00, -0.62, 0.0),   # head
    (0.20, -0.42, 0.0),   # shoulders
    (-0.20, -0.42, 0.0),
    (0.44, -0.40, 0.0),   # elbows
    (-0.44, -0.40, 0.0),
    (0.66, -0.38, 0.0),   # wrists
    (-0.66, -0.38, 0.0),
    (0.76, -0.37, 0.0),   # hands
    (-0.76, -0.37, 0.0),
)
_LABEL_24 = {3: 1, 6: 1, 9: 1, 1: 2, 2: 2, 13: 2, 14: 2, 16: 2, 17: 2,
             12: 3, 15: 4, 4: 5, 7: 6, 10: 7, 5: 8, 8: 9, 11: 10,
             18: 11, 19: 12, 20: 13, 22: 13, 21: 14, 23: 14}
_RADIUS_24 = {j: 0.05 for j in range(1, 24)}
_RADIUS_24.update({3: 0.11, 6: 0.11, 9: 0.11, 15: 0.085, 4: 0.07, 5: 0.07,
                   10: 0.04, 11: 0.04, 18: 0.045, 19: 0.045,
                   20: 0.04, 21: 0.04, 22: 0.035, 23: 0.035})

_SKELETONS = {16: (_PARENT_16, _JOINTS_16, _LABEL_16, _RADIUS_16),
              24: (_PARENT_24, _JOINTS_24, _LABEL_24, _RADIUS_24)}

FORMAT_VERSION = 1


@dataclass(frozen=True)
class KinematicTree:
    """Joint hierarchy; parent[j] < j for every non-root joint, root parent is -1."""

    parent: np.ndarray

    def __post_init__(self):
        parent = np.asarray(self.parent, dtype=np.int64)
        object.__setattr__(self, "parent", parent)
        if parent.ndim != 1 or parent[0] != -1:
            raise ConfigurationError("kinematic tree must start at a single root")
        if np.any(parent[1:] < 0) or np.any(parent[1:] >= np.arange(1, len(parent))):
            raise ConfigurationError("joints must be topologically ordered (parent < child)")

    @property
    def joint_count(self) -> int:
        return len(self.parent)


@dataclass(frozen=True)
class TemplateBody:
    """Rest-pose geometry plus everything needed to pose and label it."""

    tree: KinematicTree
    template_vertices: np.ndarray   # (N, 3) meters
    faces: np.ndarray               # (F, 3) vertex indices
    skin_weights: np.ndarray        # (N, K) rows sum to 1
    shape_basis: np.ndarray         # (N, 3, B) displacement per shape coefficient
    joint_regressor: np.ndarray     # (K, N) rows sum to 1
    vertex_parts: np.ndarray        # (N,) labels in 1..P
    vertex_uv: np.ndarray           # (N, 2) in [0, 1]^2
    downsample: np.ndarray          # (Nd, N) rows sum to 1
    n_parts: int
    seed: int

    @property
    def n_vertices(self) -> int:
        return self.template_vertices.shape[0]

    @property
    def n_joints(self) -> int:
        return self.tree.joint_count

    @property
    def n_shape(self) -> int:
        return self.shape_basis.shape[2]

    @property
    def n_down(self) -> int:
        return self.downsample.shape[0]

    @property
    def param_size(self) -> int:
        return self.n_joints * 6 + self.n_shape + 3

    def validate(self, tol: float = 1e-6) -> None:
        n, k = self.n_vertices, self.n_joints
        if self.skin_weights.shape != (n, k) or self.joint_regressor.shape != (k, n):
            raise ConfigurationError("skinning/regressor shapes inconsistent with body")
        for name, mat in (("skin_weights", self.skin_weights),
                          ("joint_regressor", self.joint_regressor),
                          ("downsample", self.downsample)):
            if np.any(mat < -tol):
                raise ConfigurationError(f"{name} has negative entries")
            if np.max(np.abs(mat.sum(axis=1) - 1.0)) > tol:
                raise ConfigurationError(f"{name} rows do not sum to 1")
        if self.faces.min() < 0 or self.faces.max() >= n:
            raise ConfigurationError("faces reference invalid vertices")
        if self.vertex_parts.min() < 1 or self.vertex_parts.max() > self.n_parts:
            raise ConfigurationError("vertex part labels out of range")
        if self.vertex_uv.min() < -tol or self.vertex_uv.max() > 1 + tol:
            raise ConfigurationError("vertex uv out of [0,1]")


@dataclass
class BodyParams:
    """Pose (per-joint 6D rotations), shape coefficients, and camera (s, tx, ty)."""

    pose: Tensor    # (..., K, 6)
    shape: Tensor   # (..., B)
    camera: Tensor  # (..., 3)

    def flat(self) -> Tensor:
        pose = self.pose.reshape(*self.pose.shape[:-2], -1)
        return torch.cat([pose, self.shape, self.camera], dim=-1)

    @staticmethod
    def from_flat(theta: Tensor, n_joints: int, n_shape: int) -> "BodyParams":
        expected = n_joints * 6 + n_shape + 3
        if theta.shape[-1] != expected:
            raise ConfigurationError(f"flat params have length {theta.shape[-1]}, expected {expected}")
        pose = theta[..., : n_joints * 6].reshape(*theta.shape[:-1], n_joints, 6)
        shape = theta[..., n_joints * 6 : n_joints * 6 + n_shape]
        camera = theta[..., n_joints * 6 + n_shape :]
        return BodyParams(pose=pose, shape=shape, camera=camera)


@dataclass
class MeshState:
    vertices: Tensor  # (..., N, 3)
    joints: Tensor    # (..., K, 3)


def identity_pose(n_joints: int, dtype=torch.float64) -> Tensor:
    pose = torch.tensor(IDENTITY_ROT6D, dtype=dtype).expand(n_joints, 6)
    return pose.clone()


def rot6d_to_matrix(r: Tensor, eps: float = 1e-8) -> Tensor:
    """Gram-Schmidt a (..., 6) vector into a (..., 3, 3) rotation matrix.

    The first and last three entries are the two raw column vectors; the
    third column is their cross product.
    """
    if r.shape[-1] != 6:
        raise ConfigurationError("6D rotation input must have trailing dimension 6")
    a1, a2 = r[..., :3], r[..., 3:]
    n1 = torch.linalg.vector_norm(a1, dim=-1, keepdim=True)
    if bool((n1 < eps).any()):
        raise DegenerateRotationError("first 6D column is near zero")
    b1 = a1 / n1
    c2 = a2 - (b1 * a2).sum(dim=-1, keepdim=True) * b1
    n2 = torch.linalg.vector_norm(c2, dim=-1, keepdim=True)
    if bool((n2 < eps).any()):
        raise DegenerateRotationError("6D columns are near parallel")
    b2 = c2 / n2
    b3 = torch.linalg.cross(b1, b2, dim=-1)
    return torch.stack([b1, b2, b3], dim=-1)


def matrix_to_rot6d(mat: Tensor) -> Tensor:
    """Inverse embedding: the first two columns, flattened to (..., 6)."""
    return torch.cat([mat[..., :, 0], mat[..., :, 1]], dim=-1)


def axis_angle_to_matrix(axis: Tensor, angle: Tensor) -> Tensor:
    """Rodrigues rotation; axis (..., 3) need not be normalized, angle (...,)."""
    axis = axis / torch.linalg.vector_norm(axis, dim=-1, keepdim=True)
    x, y, z = axis[..., 0], axis[..., 1], axis[..., 2]
    zero = torch.zeros_like(x)
    k = torch.stack([zero, -z, y, z, zero, -x, -y, x, zero], dim=-1).reshape(*x.shape, 3, 3)
    eye = torch.eye(3, dtype=axis.dtype, device=axis.device).expand(*x.shape, 3, 3)
    s = torch.sin(angle)[..., None, None]
    c = torch.cos(angle)[..., None, None]
    return eye + s * k + (1 - c) * (k @ k)


def _body_tensor(arr: np.ndarray, like: Tensor) -> Tensor:
    return torch.as_tensor(arr, dtype=like.dtype, device=like.device)


def forward(params: BodyParams, body: TemplateBody) -> MeshState:
    """Pose the body: blendshapes, joint regression, kinematic chain, LBS.

    Supports arbitrary leading batch dimensions on the params.
    """
    pose, shape = params.pose, params.shape
    k, n = body.n_joints, body.n_vertices
    if pose.shape[-2:] != (k, 6) or shape.shape[-1] != body.n_shape:
        raise ConfigurationError(
            f"params with pose {tuple(pose.shape)} / shape {tuple(shape.shape)} "
            f"do not match body (K={k}, B={body.n_shape})")

    template = _body_tensor(body.template_vertices, pose)
    basis = _body_tensor(body.shape_basis, pose)
    regressor = _body_tensor(body.joint_regressor, pose)
    weights = _body_tensor(body.skin_weights, pose)

    v_rest = template + torch.einsum("ncb,...b->...nc", basis, shape)
    j_rest = torch.einsum("kn,...nc->...kc", regressor, v_rest)

    rot = rot6d_to_matrix(pose)  # (..., K, 3, 3)
    parent = body.tree.parent
    world_rot = [rot[..., 0, :, :]]
    world_t = [j_rest[..., 0, :]]
    for j in range(1, k):
        p = parent[j]
        offset = j_rest[..., j, :] - j_rest[..., p, :]
        world_rot.append(world_rot[p] @ rot[..., j, :, :])
        world_t.append(torch.einsum("...rc,...c->...r", world_rot[p], offset) + world_t[p])
    rot_w = torch.stack(world_rot, dim=-3)  # (..., K, 3, 3)
    t_w = torch.stack(world_t, dim=-2)      # (..., K, 3)

    # skinning translation removes the rest joint location: t' = t - R @ j_rest
    t_skin = t_w - torch.einsum("...krc,...kc->...kr", rot_w, j_rest)
    rot_blend = torch.einsum("nk,...krc->...nrc", weights, rot_w)
    t_blend = torch.einsum("nk,...kr->...nr", weights, t_skin)
    vertices = torch.einsum("...nrc,...nc->...nr", rot_blend, v_rest) + t_blend
    joints = torch.einsum("kn,...nc->...kc", regressor, vertices)
    return MeshState(vertices=vertices, joints=joints)


def downsample_mesh(vertices: Tensor, body: TemplateBody) -> Tensor:
    """Apply the precomputed row-stochastic downsampling matrix."""
    if vertices.shape[-2] != body.n_vertices:
        raise ConfigurationError("vertex count does not match body downsample matrix")
    dmat = _body_tensor(body.downsample, vertices)
    return torch.einsum("dn,...nc->...dc", dmat, vertices)


def mean_params(params: list[BodyParams]) -> BodyParams:
    """Per-dimension arithmetic mean over a dataset's parameters.

    Pose is averaged in raw 6D space; downstream Gram-Schmidt restores a
    valid rotation when the mean is consumed.
    """
    if not params:
        raise ConfigurationError("mean_params needs a nonempty dataset")
    pose = torch.stack([p.pose for p in params]).mean(dim=0)
    shape = torch.stack([p.shape for p in params]).mean(dim=0)
    camera = torch.stack([p.camera for p in params]).mean(dim=0)
    return BodyParams(pose=pose, shape=shape, camera=camera)


def _smoothstep(t: np.ndarray) -> np.ndarray:
    t = np.clip(t, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


@dataclass
class _Capsule:
    joint: int          # child joint owning the distal end
    start: np.ndarray
    end: np.ndarray
    radius: float
    label: int
    rings: int = 0
    base: int = 0       # index of first vertex


def make_toy_body(seed: int, n_verts: int = 512, n_joints: int = 16,
                  n_shape: int = 10, n_parts: int = 12,
                  n_down: int | None = None) -> TemplateBody:
    """Generate the capsule humanoid deterministically from a seed.

    One capsule of ring vertices per bone; skin weights ramp smoothly from
    the bone's proximal joint to its distal joint across the middle of the
    capsule; shape basis is a low-frequency sinusoidal displacement field.
    """
    if n_joints not in _SKELETONS:
        raise ConfigurationError(f"no skeleton with {n_joints} joints (supported: 16, 24)")
    if n_verts < 4 * n_joints:
        raise ConfigurationError("need at least 4 vertices per joint")
    if not 1 <= n_parts <= n_joints:
        raise ConfigurationError("part count must be in 1..n_joints")
    if n_shape < 1:
        raise ConfigurationError("need at least one shape direction")

    parent_t, joints_t, labels_t, radii_t = _SKELETONS[n_joints]
    tree = KinematicTree(np.array(parent_t))
    joint_pos = np.array(joints_t, dtype=np.float64)
    rng = np.random.default_rng(np.random.SeedSequence([seed, n_verts, n_joints, n_shape, n_parts]))

    capsules = [
        _Capsule(joint=j, start=joint_pos[parent_t[j]], end=joint_pos[j],
                 radius=radii_t[j], label=(labels_t[j] - 1) % n_parts + 1)
        for j in range(1, n_joints)
    ]

    # ring budget per capsule, proportional to length, largest remainder
    sectors = 4
    total_rings = n_verts // sectors
    extra = n_verts - total_rings * sectors
    lengths = np.array([np.linalg.norm(c.end - c.start) for c in capsules])
    raw = lengths / lengths.sum() * total_rings
    rings = np.maximum(1, np.floor(raw).astype(int))
    while rings.sum() > total_rings:
        rings[np.argmax(rings)] -= 1
    order = np.argsort(-(raw - rings))
    i = 0
    while rings.sum() < total_rings:
        rings[order[i % len(order)]] += 1
        i += 1
    for c, r in zip(capsules, rings):
        c.rings = int(r)

    verts = np.zeros((n_verts, 3))
    parts = np.zeros(n_verts, dtype=np.int64)
    uv = np.zeros((n_verts, 2))
    weights = np.zeros((n_verts, n_joints))
    faces: list[tuple[int, int, int]] = []

    cursor = 0
    for cap in capsules:
        cap.base = cursor
        axis = cap.end - cap.start
        axis_u = axis / np.linalg.norm(axis)
        ref = np.array([0.0, 0.0, 1.0]) if abs(axis_u[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
        u = np.cross(ref, axis_u)
        u /= np.linalg.norm(u)
        v = np.cross(axis_u, u)
        p_joint = tree.parent[cap.joint]
        for k in range(cap.rings):
            frac = (k + 0.5) / cap.rings
            center = cap.start + frac * axis
            w_child = float(_smoothstep((frac - 0.3) / 0.4))
            for m in range(sectors):
                ang = 2.0 * np.pi * m / sectors
                verts[cursor] = center + cap.radius * (np.cos(ang) * u + np.sin(ang) * v)
                parts[cursor] = cap.label
                uv[cursor] = (m / sectors, frac)
                weights[cursor, cap.joint] = w_child
                weights[cursor, p_joint] = 1.0 - w_child
                cursor += 1
        for k in range(cap.rings - 1):
            for m in range(sectors):
                a = cap.base + k * sectors + m
                b = cap.base + k * sectors + (m + 1) % sectors
                c = a + sectors
                d = b + sectors
                faces.append((a, b, d))
                faces.append((a, d, c))

    # leftover vertices become apex points at the last capsule's tip
    last = capsules[-1]
    axis = last.end - last.start
    axis_u = axis / np.linalg.norm(axis)
    ref = np.array([0.0, 0.0, 1.0]) if abs(axis_u[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    u = np.cross(ref, axis_u)
    u /= np.linalg.norm(u)
    v = np.cross(axis_u, u)
    last_ring = last.base + (last.rings - 1) * sectors
    for a in range(extra):
        ang = 2.0 * np.pi * a / max(extra, 1)
        verts[cursor] = last.end + 0.3 * last.radius * (axis_u + np.cos(ang) * u + np.sin(ang) * v)
        parts[cursor] = last.label
        uv[cursor] = (a / max(extra, 1), 1.0)
        weights[cursor, last.joint] = 1.0
        faces.append((last_ring + a % sectors, last_ring + (a + 1) % sectors, cursor))
        cursor += 1
    assert cursor == n_verts

    # smooth random low-frequency displacement fields
    basis = np.zeros((n_verts, 3, n_shape))
    for b in range(n_shape):
        disp = np.zeros((n_verts, 3))
        for _ in range(3):
            omega = rng.normal(0.0, 2.0, size=3)
            phase = rng.uniform(0.0, 2.0 * np.pi, size=3)
            amp = rng.normal(0.0, 0.012, size=3)
            disp += amp * np.sin(verts @ omega[:, None] + phase)
        basis[:, :, b] = disp

    # joint regressor: uniform average of the nearest vertices to each joint
    m_near = max(4, n_verts // (4 * n_joints))
    regressor = np.zeros((n_joints, n_verts))
    for j in range(n_joints):
        dist = np.linalg.norm(verts - joint_pos[j], axis=1)
        nearest = np.argsort(dist, kind="stable")[:m_near]
        regressor[j, nearest] = 1.0 / m_near

    if n_down is None:
        n_down = max(1, n_verts // 4)
    if not 1 <= n_down <= n_verts:
        raise ConfigurationError("downsample count must be in 1..n_verts")
    downsample = _farthest_point_downsample(verts, n_down)

    body = TemplateBody(
        tree=tree, template_vertices=verts, faces=np.array(faces, dtype=np.int64),
        skin_weights=weights, shape_basis=basis, joint_regressor=regressor,
        vertex_parts=parts, vertex_uv=uv, downsample=downsample,
        n_parts=n_parts, seed=seed)
    body.validate()
    return body


def _farthest_point_downsample(verts: np.ndarray, count: int, avg_k: int = 4) -> np.ndarray:
    """Farthest-point vertex selection; each row averages the pick and its neighbors."""
    n = verts.shape[0]
    chosen = [0]
    dist = np.linalg.norm(verts - verts[0], axis=1)
    for _ in range(count - 1):
        nxt = int(np.argmax(dist))
        chosen.append(nxt)
        dist = np.minimum(dist, np.linalg.norm(verts - verts[nxt], axis=1))
    mat = np.zeros((count, n))
    for row, idx in enumerate(chosen):
        d = np.linalg.norm(verts - verts[idx], axis=1)
        near = np.argsort(d, kind="stable")[:avg_k]
        mat[row, near] = 1.0 / avg_k
    return mat


def resize_downsample(body: TemplateBody, count: int) -> TemplateBody:
    """Same body with a downsample matrix of a different row count."""
    from dataclasses import replace

    mat = _farthest_point_downsample(body.template_vertices, count)
    return replace(body, downsample=mat)


def body_to_bytes(body: TemplateBody) -> bytes:
    meta = {"kind": "template_body", "version": FORMAT_VERSION,
            "seed": body.seed, "n_parts": body.n_parts,
            "n_vertices": body.n_vertices, "n_joints": body.n_joints,
            "n_shape": body.n_shape, "n_down": body.n_down}
    arrays = [
        ("parent", body.tree.parent),
        ("template_vertices", body.template_vertices),
        ("faces", body.faces),
        ("skin_weights", body.skin_weights),
        ("shape_basis", body.shape_basis),
        ("joint_regressor", body.joint_regressor),
        ("vertex_parts", body.vertex_parts),
        ("vertex_uv", body.vertex_uv),
        ("downsample", body.downsample),
    ]
    return pack(meta, arrays)


def save_body(body: TemplateBody, path) -> None:
    with open(path, "wb") as fh:
        fh.write(body_to_bytes(body))


def body_from_bytes(data: bytes) -> TemplateBody:
    meta, arrays = unpack(data)
    if meta.get("kind") != "template_body":
        raise ConfigurationError("not a body archive")
    body = TemplateBody(
        tree=KinematicTree(arrays["parent"].astype(np.int64)),
        template_vertices=arrays["template_vertices"].astype(np.float64),
        faces=np.rint(arrays["faces"]).astype(np.int64),
        skin_weights=arrays["skin_weights"].astype(np.float64),
        shape_basis=arrays["shape_basis"].astype(np.float64),
        joint_regressor=arrays["joint_regressor"].astype(np.float64),
        vertex_parts=np.rint(arrays["vertex_parts"]).astype(np.int64),
        vertex_uv=arrays["vertex_uv"].astype(np.float64),
        downsample=arrays["downsample"].astype(np.float64),
        n_parts=int(meta["n_parts"]), seed=int(meta["seed"]))
    return body


def load_body(path) -> TemplateBody:
    with open(path, "rb") as fh:
        return body_from_bytes(fh.read())
