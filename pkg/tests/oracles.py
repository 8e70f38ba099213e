"""Independent brute-force reimplementations used as test oracles.

Everything here is written against the math directly (plain Python loops,
no shared code with the package internals) so the package can be checked
against it.
"""

import math

import numpy as np

ALPHA_FLOOR = 1.0 / 255.0
MAHA_MAX = 9.0

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
         -1.0925484305920792, 0.5462742152960396)
SH_C3 = (-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
         0.3731763325901154, -0.4570457994644658, 1.445305721320277,
         -0.5900435899266435)


def _sh_color(dc, rest, degree, d):
    """One channel-triple from SH coefficients at unit direction d."""
    x, y, z = d
    out = [SH_C0 * dc[c] + 0.5 for c in range(3)]
    if degree == 0:
        return out
    k = (degree + 1) ** 2 - 1
    basis = [-SH_C1 * y, SH_C1 * z, -SH_C1 * x]
    if degree >= 2:
        xx, yy, zz, xy, yz, xz = x * x, y * y, z * z, x * y, y * z, x * z
        basis += [
            SH_C2[0] * xy, SH_C2[1] * yz, SH_C2[2] * (2 * zz - xx - yy),
            SH_C2[3] * xz, SH_C2[4] * (xx - yy),
        ]
    if degree >= 3:
        basis += [
            SH_C3[0] * y * (3 * xx - yy), SH_C3[1] * xy * z,
            SH_C3[2] * y * (4 * zz - xx - yy),
            SH_C3[3] * z * (2 * zz - 3 * xx - 3 * yy),
            SH_C3[4] * x * (4 * zz - xx - yy), SH_C3[5] * z * (xx - yy),
            SH_C3[6] * x * (xx - 3 * yy),
        ]
    for c in range(3):
        for j in range(k):
            out[c] += basis[j] * rest[c * k + j]
    return out


def _quat_rot(q):
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def oracle_render(cloud, view, background=(0.0, 0.0, 0.0)):
    """Literal per-pixel compositing: for every pixel walk the depth-sorted
    Gaussians applying C = sum c_i a_i prod(1 - a_j) + bg prod(1 - a_j)."""
    w2c = view.world_to_camera.numpy()
    rot_wc, t = w2c[:3, :3], w2c[:3, 3]
    cam_center = -rot_wc.T @ t

    splats = []
    n = cloud.num_gaussians
    for i in range(n):
        p = cloud.positions[i].numpy()
        pc = rot_wc @ p + t
        if pc[2] <= 1e-8:
            continue
        x, y, z = pc
        mx = view.fx * x / z + view.cx
        my = view.fy * y / z + view.cy

        rot = _quat_rot(cloud.rotations[i].tolist())
        s = np.exp(cloud.log_scales[i].numpy())
        cov3 = (rot * s) @ (rot * s).T
        jac = np.array([
            [view.fx / z, 0.0, -view.fx * x / (z * z)],
            [0.0, view.fy / z, -view.fy * y / (z * z)],
        ])
        jw = jac @ rot_wc
        cov2 = jw @ cov3 @ jw.T
        det = cov2[0, 0] * cov2[1, 1] - cov2[0, 1] * cov2[1, 0]
        if det <= 0:
            continue
        inv = (cov2[1, 1] / det, -cov2[0, 1] / det, -cov2[1, 0] / det, cov2[0, 0] / det)

        d = p - cam_center
        d = d / np.linalg.norm(d)
        color = _sh_color(
            cloud.sh_dc[i].tolist(), cloud.sh_rest[i].tolist(), cloud.sh_degree, d
        )
        opacity = 1.0 / (1.0 + math.exp(-float(cloud.opacity_logits[i])))
        splats.append((z, i, float(mx), float(my), inv, color, opacity))

    splats.sort(key=lambda s: (s[0], s[1]))

    h, w = view.height, view.width
    rgb = np.zeros((h, w, 3))
    alpha_out = np.zeros((h, w))
    for py in range(h):
        for px in range(w):
            trans = 1.0
            r = g = b = 0.0
            for (_, _, mx, my, inv, color, opacity) in splats:
                dx = px - mx
                dy = py - my
                maha = inv[0] * dx * dx + (inv[1] + inv[2]) * dx * dy + inv[3] * dy * dy
                if maha > MAHA_MAX:
                    continue
                a = opacity * math.exp(-0.5 * maha)
                if a < ALPHA_FLOOR:
                    continue
                contrib = a * trans
                r += color[0] * contrib
                g += color[1] * contrib
                b += color[2] * contrib
                trans *= 1.0 - a
            rgb[py, px, 0] = r + background[0] * trans
            rgb[py, px, 1] = g + background[1] * trans
            rgb[py, px, 2] = b + background[2] * trans
            alpha_out[py, px] = 1.0 - trans
    return rgb, alpha_out


def oracle_gram(feature_map):
    """O(C^2 H W) double loop."""
    f = np.asarray(feature_map, dtype=np.float64)
    c = f.shape[0]
    flat = f.reshape(c, -1)
    out = np.zeros((c, c))
    for i in range(c):
        for j in range(c):
            out[i, j] = sum(flat[i, k] * flat[j, k] for k in range(flat.shape[1]))
    return out


def oracle_ssim(a, b, peak=1.0, window=11, sigma=1.5):
    """Direct window loop over every valid 11x11 patch."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 2:
        a = a[:, :, None]
        b = b[:, :, None]
    coords = np.arange(window) - (window - 1) / 2.0
    g = np.exp(-(coords**2) / (2 * sigma * sigma))
    kern = np.outer(g, g)
    kern /= kern.sum()

    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    h, w, chans = a.shape
    values = []
    for c in range(chans):
        for i in range(h - window + 1):
            for j in range(w - window + 1):
                pa = a[i : i + window, j : j + window, c]
                pb = b[i : i + window, j : j + window, c]
                mu_a = (kern * pa).sum()
                mu_b = (kern * pb).sum()
                var_a = (kern * pa * pa).sum() - mu_a * mu_a
                var_b = (kern * pb * pb).sum() - mu_b * mu_b
                cov = (kern * pa * pb).sum() - mu_a * mu_b
                values.append(
                    ((2 * mu_a * mu_b + c1) * (2 * cov + c2))
                    / ((mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2))
                )
    return float(np.mean(values))
