"""Independent reference implementations used to cross-check the library.

Everything here is deliberately written from the underlying definitions
(scalar loops, classical closed forms) rather than by calling back into the
package, so each check is a genuine second route.
"""

import numpy as np


def gram_schmidt_oracle(r6):
    """Hand-rolled Gram-Schmidt + cross product from a 6-vector."""
    a1, a2 = np.asarray(r6[:3], dtype=np.float64), np.asarray(r6[3:], dtype=np.float64)
    b1 = a1 / np.linalg.norm(a1)
    c2 = a2 - np.dot(b1, a2) * b1
    b2 = c2 / np.linalg.norm(c2)
    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=1)


def bilinear_oracle(fmap, points):
    """4-neighbor weighted sum with the declared pixel-center convention."""
    c, h, w = fmap.shape
    out = np.zeros((len(points), c))
    for i, (x, y) in enumerate(points):
        px = min(max((x + 1.0) * 0.5 * w - 0.5, 0.0), w - 1.0)
        py = min(max((y + 1.0) * 0.5 * h - 0.5, 0.0), h - 1.0)
        x0 = min(int(np.floor(px)), max(w - 2, 0))
        y0 = min(int(np.floor(py)), max(h - 2, 0))
        x1, y1 = min(x0 + 1, w - 1), min(y0 + 1, h - 1)
        fx, fy = px - x0, py - y0
        for ch in range(c):
            out[i, ch] = (fmap[ch, y0, x0] * (1 - fy) * (1 - fx)
                          + fmap[ch, y0, x1] * (1 - fy) * fx
                          + fmap[ch, y1, x0] * fy * (1 - fx)
                          + fmap[ch, y1, x1] * fy * fx)
    return out


def procrustes_oracle(x, y):
    """Horn's quaternion method for the optimal similarity transform.

    A genuinely different closed form from the SVD route: the rotation is
    the eigenvector of the 4x4 quaternion profile matrix.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    mx, my = x.mean(axis=0), y.mean(axis=0)
    xc, yc = x - mx, y - my
    s_xy = xc.T @ yc  # S_ab = sum_i x'_a y'_b
    sxx, sxy, sxz = s_xy[0]
    syx, syy, syz = s_xy[1]
    szx, szy, szz = s_xy[2]
    n_mat = np.array([
        [sxx + syy + szz, syz - szy, szx - sxz, sxy - syx],
        [syz - szy, sxx - syy - szz, sxy + syx, szx + sxz],
        [szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy],
        [sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz]])
    vals, vecs = np.linalg.eigh(n_mat)
    q = vecs[:, np.argmax(vals)]
    w, qx, qy, qz = q
    rot = np.array([
        [1 - 2 * (qy * qy + qz * qz), 2 * (qx * qy - w * qz), 2 * (qx * qz + w * qy)],
        [2 * (qx * qy + w * qz), 1 - 2 * (qx * qx + qz * qz), 2 * (qy * qz - w * qx)],
        [2 * (qx * qz - w * qy), 2 * (qy * qz + w * qx), 1 - 2 * (qx * qx + qy * qy)]])
    scale = np.trace(rot.T @ s_xy.T) / (xc ** 2).sum()
    trans = my - scale * rot @ mx
    aligned = scale * x @ rot.T + trans
    return rot, scale, trans, aligned


def point_in_triangle_raster_oracle(pix, depth, faces, labels, width, height, eps=1e-9):
    """Per-pixel loop: strictly-inside test plus nearest depth.

    Returns (part, boundary_mask); boundary pixels (any face edge running
    through the center within eps) are flagged for exclusion.
    """
    part = np.zeros((height, width), dtype=np.int64)
    boundary = np.zeros((height, width), dtype=bool)
    for yp in range(height):
        for xp in range(width):
            best_z, best_part = np.inf, 0
            for f, (i0, i1, i2) in enumerate(faces):
                a, b, c = pix[i0], pix[i1], pix[i2]
                area = _edge_val(a, b, c[0], c[1])
                if area == 0.0:
                    continue
                if area < 0:
                    b, c = c, b
                    i1, i2 = i2, i1
                    area = -area
                w0 = _edge_val(b, c, xp, yp)
                w1 = _edge_val(c, a, xp, yp)
                w2 = _edge_val(a, b, xp, yp)
                tol = eps * area
                if min(w0, w1, w2) > tol:
                    l0, l1, l2 = w0 / area, w1 / area, w2 / area
                    z = l0 * depth[i0] + l1 * depth[i1] + l2 * depth[i2]
                    if z < best_z:
                        best_z, best_part = z, labels[f]
                elif min(w0, w1, w2) > -tol:
                    boundary[yp, xp] = True
            part[yp, xp] = best_part
    return part, boundary


def _edge_val(a, b, x, y):
    return (b[0] - a[0]) * (y - a[1]) - (b[1] - a[1]) * (x - a[0])


def reg_loss_oracle(kp, j, rot, shape, gt_kp, gt_j, gt_rot, gt_shape,
                    l2d, l3d, lpose, lshape, vis=None):
    """Scalar-loop squared-error loss for one sample (rotations as matrices)."""
    total_2d, n_2d = 0.0, 0
    for i in range(kp.shape[0]):
        v = 1.0 if vis is None else vis[i]
        for c in range(2):
            total_2d += v * (kp[i, c] - gt_kp[i, c]) ** 2
            n_2d += 1
    total_3d, n_3d = 0.0, 0
    for i in range(j.shape[0]):
        for c in range(3):
            total_3d += (j[i, c] - gt_j[i, c]) ** 2
            n_3d += 1
    total_rot, n_rot = 0.0, 0
    for k in range(rot.shape[0]):
        for r in range(3):
            for c in range(3):
                total_rot += (rot[k, r, c] - gt_rot[k, r, c]) ** 2
                n_rot += 1
    total_sh, n_sh = 0.0, 0
    for b in range(shape.shape[0]):
        total_sh += (shape[b] - gt_shape[b]) ** 2
        n_sh += 1
    return (l2d * total_2d / n_2d + l3d * total_3d / n_3d
            + lpose * total_rot / n_rot + lshape * total_sh / n_sh)


def aux_loss_oracle(logits, gt_part, gt_u, gt_v, lpi, luv):
    """Per-pixel scalar loop: softmax cross-entropy + masked smooth L1."""
    n_cls = logits.shape[0] - 2
    h, w = gt_part.shape
    ce_total = 0.0
    uv_total, fg_count = 0.0, 0
    for y in range(h):
        for x in range(w):
            z = logits[:n_cls, y, x]
            zmax = z.max()
            logsum = zmax + np.log(np.exp(z - zmax).sum())
            ce_total += logsum - z[gt_part[y, x]]
            if gt_part[y, x] > 0:
                fg_count += 1
                for pred, gt in ((logits[n_cls, y, x], gt_u[y, x]),
                                 (logits[n_cls + 1, y, x], gt_v[y, x])):
                    d = abs(pred - gt)
                    uv_total += 0.5 * d * d if d < 1.0 else d - 0.5
    ce = ce_total / (h * w)
    uv = uv_total / fg_count if fg_count else 0.0
    return lpi * ce + luv * uv


def oks_oracle(pred, gt, area, kappa):
    """Single-sample OKS by scalar loop, uniform kappa."""
    total = 0.0
    k = gt.shape[0]
    for i in range(k):
        d2 = (pred[i, 0] - gt[i, 0]) ** 2 + (pred[i, 1] - gt[i, 1]) ** 2
        total += np.exp(-d2 / (2.0 * area * kappa * kappa + np.spacing(1)))
    return total / k
