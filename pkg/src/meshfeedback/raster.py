"""Software triangle rasterizer for ground-truth dense-correspondence maps.

Pure numpy, offline only (never on a gradient path). A pixel is covered
when its center lies inside the projected triangle; exact boundary ties
follow the top-left rule. Depth is the barycentric camera-frame z with
smaller values nearer.
"""

from __future__ import annotations

import colorsys
from dataclasses import dataclass

import numpy as np

from .body import TemplateBody, MeshState
from .errors import ConfigurationError
from .serial import pack, unpack

FORMAT_VERSION = 1


@dataclass
class IUVMap:
    part: np.ndarray  # (H, W) int, 0 = background
    u: np.ndarray     # (H, W) float32 in [0, 1]
    v: np.ndarray     # (H, W) float32 in [0, 1]
    n_parts: int

    @property
    def shape(self) -> tuple[int, int]:
        return self.part.shape


def _project_to_pixels(verts: np.ndarray, cam: np.ndarray, width: int, height: int) -> np.ndarray:
    s, tx, ty = float(cam[0]), float(cam[1]), float(cam[2])
    px = ((s * verts[:, 0] + tx) + 1.0) * 0.5 * width - 0.5
    py = ((s * verts[:, 1] + ty) + 1.0) * 0.5 * height - 0.5
    return np.stack([px, py], axis=1)


def _raster_core(verts: np.ndarray, faces: np.ndarray, cam: np.ndarray,
                 width: int, height: int):
    """Z-buffered coverage. Returns (face_index (H,W) or -1, bary (H,W,3)).

    bary weights are ordered by the face's original vertex order.
    """
    if width < 1 or height < 1:
        raise ConfigurationError("raster target must have positive size")
    pix = _project_to_pixels(verts, cam, width, height)
    depth = verts[:, 2]

    face_idx = np.full((height, width), -1, dtype=np.int64)
    zbuf = np.full((height, width), np.inf)
    bary = np.zeros((height, width, 3))

    for f, (i0, i1, i2) in enumerate(faces):
        orient = _orient2d(pix[i0], pix[i1], pix[i2])
        if orient == 0.0:
            continue
        order = (i0, i1, i2) if orient > 0 else (i0, i2, i1)
        a, b, c = pix[order[0]], pix[order[1]], pix[order[2]]
        area2 = abs(orient)

        x0 = max(int(np.ceil(min(a[0], b[0], c[0]))), 0)
        x1 = min(int(np.floor(max(a[0], b[0], c[0]))), width - 1)
        y0 = max(int(np.ceil(min(a[1], b[1], c[1]))), 0)
        y1 = min(int(np.floor(max(a[1], b[1], c[1]))), height - 1)
        if x0 > x1 or y0 > y1:
            continue
        xs = np.arange(x0, x1 + 1, dtype=np.float64)
        ys = np.arange(y0, y1 + 1, dtype=np.float64)
        gx, gy = np.meshgrid(xs, ys)

        w0 = _edge(b, c, gx, gy)
        w1 = _edge(c, a, gx, gy)
        w2 = _edge(a, b, gx, gy)
        inside = (_cover(w0, b, c) & _cover(w1, c, a) & _cover(w2, a, b))
        if not inside.any():
            continue

        l0, l1, l2 = w0 / area2, w1 / area2, w2 / area2
        z = l0 * depth[order[0]] + l1 * depth[order[1]] + l2 * depth[order[2]]
        win = inside & (z < zbuf[y0 : y1 + 1, x0 : x1 + 1])
        if not win.any():
            continue
        sub = (slice(y0, y1 + 1), slice(x0, x1 + 1))
        zbuf[sub][win] = z[win]
        face_idx[sub][win] = f
        # store weights in original vertex order
        if orient > 0:
            lam = np.stack([l0, l1, l2], axis=-1)
        else:
            lam = np.stack([l0, l2, l1], axis=-1)
        bary[sub][win] = lam[win]
    return face_idx, bary


def _orient2d(a, b, c) -> float:
    return float((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))


def _edge(a, b, gx, gy):
    return (b[0] - a[0]) * (gy - a[1]) - (b[1] - a[1]) * (gx - a[0])


def _cover(w, a, b):
    # top edge: horizontal, interior below (dx > 0); left edge: going up (dy < 0)
    dx, dy = b[0] - a[0], b[1] - a[1]
    top_left = (dy == 0 and dx > 0) or dy < 0
    return (w > 0) | ((w == 0) & top_left)


def _face_label(labels: np.ndarray) -> int:
    l0, l1, l2 = int(labels[0]), int(labels[1]), int(labels[2])
    if l0 == l1 or l0 == l2:
        return l0
    if l1 == l2:
        return l1
    return min(l0, l1, l2)


def rasterize_iuv(mesh: MeshState, body: TemplateBody, cam, width: int, height: int) -> IUVMap:
    """Render the ground-truth part-index / UV correspondence map."""
    verts = np.asarray(mesh.vertices.detach().cpu().numpy(), dtype=np.float64)
    cam = np.asarray(cam.detach().cpu().numpy() if hasattr(cam, "detach") else cam, dtype=np.float64)
    faces = body.faces
    face_idx, bary = _raster_core(verts, faces, cam, width, height)

    part = np.zeros((height, width), dtype=np.int64)
    u = np.zeros((height, width), dtype=np.float64)
    v = np.zeros((height, width), dtype=np.float64)

    covered = face_idx >= 0
    if covered.any():
        face_labels = np.array([_face_label(body.vertex_parts[f]) for f in faces], dtype=np.int64)
        ys, xs = np.nonzero(covered)
        fi = face_idx[ys, xs]
        lam = bary[ys, xs]
        uv_f = body.vertex_uv[faces[fi]]          # (M, 3, 2)
        uv_pix = np.einsum("mk,mkc->mc", lam, uv_f)
        part[ys, xs] = face_labels[fi]
        u[ys, xs] = uv_pix[:, 0]
        v[ys, xs] = uv_pix[:, 1]
    return IUVMap(part=part, u=u, v=v, n_parts=body.n_parts)


def part_palette(n_parts: int) -> np.ndarray:
    """Deterministic flat color per part label (index 0 unused)."""
    colors = np.zeros((n_parts + 1, 3))
    for p in range(1, n_parts + 1):
        colors[p] = colorsys.hsv_to_rgb((p - 1) / n_parts, 0.65, 0.95)
    return colors


def _noise_background(seed: int, width: int, height: int, cells: int = 8) -> np.ndarray:
    """Seeded smooth noise in [0.08, 0.5], (3, H, W)."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), width, height]))
    coarse = rng.uniform(0.0, 1.0, size=(3, cells, cells))
    ys = (np.arange(height) + 0.5) / height * (cells - 1)
    xs = (np.arange(width) + 0.5) / width * (cells - 1)
    y0 = np.clip(ys.astype(int), 0, cells - 2)
    x0 = np.clip(xs.astype(int), 0, cells - 2)
    fy = (ys - y0)[None, :, None]
    fx = (xs - x0)[None, None, :]
    c00 = coarse[:, y0][:, :, x0]
    c01 = coarse[:, y0][:, :, x0 + 1]
    c10 = coarse[:, y0 + 1][:, :, x0]
    c11 = coarse[:, y0 + 1][:, :, x0 + 1]
    smooth = (c00 * (1 - fy) * (1 - fx) + c01 * (1 - fy) * fx
              + c10 * fy * (1 - fx) + c11 * fy * fx)
    return 0.08 + 0.42 * smooth


def render_input(mesh: MeshState, body: TemplateBody, cam, width: int, height: int,
                 background_seed: int) -> np.ndarray:
    """Synthetic input image (3, H, W) in [0, 1]: shaded part colors over noise."""
    verts = np.asarray(mesh.vertices.detach().cpu().numpy(), dtype=np.float64)
    cam = np.asarray(cam.detach().cpu().numpy() if hasattr(cam, "detach") else cam, dtype=np.float64)
    faces = body.faces
    face_idx, _ = _raster_core(verts, faces, cam, width, height)

    image = _noise_background(background_seed, width, height)
    covered = face_idx >= 0
    if covered.any():
        palette = part_palette(body.n_parts)
        e1 = verts[faces[:, 1]] - verts[faces[:, 0]]
        e2 = verts[faces[:, 2]] - verts[faces[:, 0]]
        normals = np.cross(e1, e2)
        norms = np.linalg.norm(normals, axis=1, keepdims=True)
        normals = normals / np.maximum(norms, 1e-12)
        light = np.array([0.35, -0.25, 0.9])
        light = light / np.linalg.norm(light)
        shade = 0.5 + 0.5 * np.abs(normals @ light)
        face_labels = np.array([_face_label(body.vertex_parts[f]) for f in faces], dtype=np.int64)
        face_color = palette[face_labels] * shade[:, None]

        ys, xs = np.nonzero(covered)
        image[:, ys, xs] = face_color[face_idx[ys, xs]].T
    return np.clip(image, 0.0, 1.0)


def part_segmentation(iuv: IUVMap) -> np.ndarray:
    """Per-pixel part labels (0 = background)."""
    return iuv.part.copy()


def fb_mask(iuv: IUVMap) -> np.ndarray:
    """Foreground/background mask: True where any body part covers the pixel."""
    return iuv.part != 0


def downsample_iuv(iuv: IUVMap, height: int, width: int) -> IUVMap:
    """Nearest-pixel downsample (for matching the auxiliary head resolution)."""
    src_h, src_w = iuv.shape
    ys = np.minimum((((np.arange(height) + 0.5) * src_h) // height).astype(int), src_h - 1)
    xs = np.minimum((((np.arange(width) + 0.5) * src_w) // width).astype(int), src_w - 1)
    return IUVMap(part=iuv.part[np.ix_(ys, xs)], u=iuv.u[np.ix_(ys, xs)],
                  v=iuv.v[np.ix_(ys, xs)], n_parts=iuv.n_parts)


def save_iuv_bytes(iuv: IUVMap) -> bytes:
    h, w = iuv.shape
    meta = {"kind": "iuv_map", "version": FORMAT_VERSION, "height": h, "width": w,
            "n_parts": iuv.n_parts}
    return pack(meta, [("part", iuv.part.astype(np.uint8)), ("u", iuv.u), ("v", iuv.v)],
                kinds={"part": "u1"})


def load_iuv_bytes(data: bytes) -> IUVMap:
    meta, arrays = unpack(data)
    if meta.get("kind") != "iuv_map":
        raise ConfigurationError("not an IUV map container")
    return IUVMap(part=arrays["part"].astype(np.int64), u=arrays["u"].astype(np.float64),
                  v=arrays["v"].astype(np.float64), n_parts=int(meta["n_parts"]))
