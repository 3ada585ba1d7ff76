"""Perspective projection of 3D Gaussians and alpha-blended splatting.

Payloads are arbitrary per-gaussian channel vectors (instance features,
one-hot indicator maps, cluster features): blending is linear in the
payload, so feature gradients route through the recorded per-pixel
weights without re-rendering.

The per-pixel inner loop lives in a compiled Cython kernel when
available, with a pure-numpy fallback selected at import time
(override with OIG_RASTER_BACKEND=python|cython).
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .core import CameraView, GaussianScene
from . import _kernel_py

_backend_choice = os.environ.get("OIG_RASTER_BACKEND", "")
if _backend_choice == "python":
    _kernel = _kernel_py
else:
    try:
        from . import _kernel  # type: ignore
    except ImportError:
        if _backend_choice == "cython":
            raise ImportError("compiled blend kernel requested but not built")
        _kernel = _kernel_py

BACKEND = _kernel.BACKEND

NEAR_PLANE = 0.01
COV_DILATION = 0.3
ALPHA_CLAMP = 0.99
ALPHA_SKIP = 1.0 / 255.0
T_STOP = 1e-4
# Pre-dilation 2D covariance below this determinant is treated as
# degenerate and the splat is skipped.
DEGENERATE_DET = 1e-12


@dataclass(frozen=True)
class Splat2D:
    gaussian_index: int
    mean2d: np.ndarray
    cov2d: np.ndarray
    depth: float
    opacity: float


@dataclass
class FeatureMap:
    width: int
    height: int
    channels: int
    data: np.ndarray   # (H, W, C)
    alpha: np.ndarray  # (H, W)


@dataclass
class BlendRecord:
    """Flat per-contribution record: pixel index, gaussian index, weight.

    Entries are grouped per pixel in depth order (splat-major emission
    order). ``to_sparse`` yields the (pixels x gaussians) weight matrix
    W with map = W @ payload, the basis for all feature gradients.
    """

    width: int
    height: int
    pixel: np.ndarray   # flat y*width+x, int64
    gaussian: np.ndarray
    weight: np.ndarray
    stats: dict = field(default_factory=dict)

    def entries_at(self, x: int, y: int):
        sel = self.pixel == y * self.width + x
        return list(zip(self.gaussian[sel].tolist(), self.weight[sel].tolist()))

    def to_sparse(self, n_gaussians: int) -> sp.csr_matrix:
        return sp.csr_matrix(
            (self.weight, (self.pixel, self.gaussian)),
            shape=(self.width * self.height, n_gaussians))

    def reconstruct(self, payload: np.ndarray) -> np.ndarray:
        """Sum w_i * payload_i per pixel; reproduces the FeatureMap data."""
        c = payload.shape[1]
        out = np.zeros((self.height * self.width, c))
        np.add.at(out, self.pixel, self.weight[:, None] * payload[self.gaussian])
        return out.reshape(self.height, self.width, c)


def quaternion_to_matrix(q: np.ndarray) -> np.ndarray:
    """Rotation matrix from a (w,x,y,z) quaternion (normalized first)."""
    w, x, y, z = np.asarray(q, dtype=np.float64) / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def covariance_world(scene: GaussianScene) -> np.ndarray:
    """Per-gaussian 3x3 world covariance R S S^T R^T, float64, (N,3,3)."""
    n = len(scene)
    cov = np.empty((n, 3, 3))
    scales = scene.scales.astype(np.float64)
    for i in range(n):
        r = quaternion_to_matrix(scene.rotations[i])
        m = r * scales[i][None, :]
        cov[i] = m @ m.T
    return cov


def project(scene: GaussianScene, view: CameraView) -> list:
    """Project every gaussian with camera-space z > NEAR_PLANE to a Splat2D.

    cov2d is the top-left 2x2 of J W Sigma W^T J^T plus 0.3 px isotropic
    dilation (EWA convention). Culled gaussians are silently dropped.
    """
    w2c = view.world_to_camera
    rot = w2c[:3, :3]
    pos_cam = scene.positions.astype(np.float64) @ rot.T + w2c[:3, 3]
    keep = np.nonzero(pos_cam[:, 2] > NEAR_PLANE)[0]
    cov_w = covariance_world(scene)
    splats = []
    for i in keep:
        x, y, z = pos_cam[i]
        mean2d = np.array([view.fx * x / z + view.cx, view.fy * y / z + view.cy])
        jac = np.array([
            [view.fx / z, 0.0, -view.fx * x / (z * z)],
            [0.0, view.fy / z, -view.fy * y / (z * z)],
        ])
        jw = jac @ rot
        cov2d = jw @ cov_w[i] @ jw.T + COV_DILATION * np.eye(2)
        splats.append(Splat2D(gaussian_index=int(i), mean2d=mean2d,
                              cov2d=cov2d, depth=float(z),
                              opacity=float(scene.opacities[i])))
    return splats


def _prepare(splats, width, height):
    """Sort, invert covariances, and compute conservative pixel bounds.

    The bound uses q_cut = max(9, 2 ln(255 sigma)): outside it every
    contribution falls below the 1/255 alpha skip, so restricting
    evaluation there is exact, not approximate.
    """
    order = sorted(range(len(splats)),
                   key=lambda s: (splats[s].depth, splats[s].gaussian_index))
    mx, my, ia, ib, ic, qc, op = [], [], [], [], [], [], []
    gx = []
    bx0, bx1, by0, by1 = [], [], [], []
    skipped_degenerate = 0
    for s in order:
        sp2 = splats[s]
        a, b, c = sp2.cov2d[0, 0], sp2.cov2d[0, 1], sp2.cov2d[1, 1]
        det_pre = (a - COV_DILATION) * (c - COV_DILATION) - b * b
        if det_pre < DEGENERATE_DET:
            skipped_degenerate += 1
            continue
        if sp2.opacity < ALPHA_SKIP:
            continue
        det = a * c - b * b
        qcut = max(9.0, 2.0 * math.log(255.0 * sp2.opacity))
        rx = math.sqrt(qcut * a)
        ry = math.sqrt(qcut * c)
        x0 = max(0, int(math.ceil(sp2.mean2d[0] - rx)))
        x1 = min(width, int(math.floor(sp2.mean2d[0] + rx)) + 1)
        y0 = max(0, int(math.ceil(sp2.mean2d[1] - ry)))
        y1 = min(height, int(math.floor(sp2.mean2d[1] + ry)) + 1)
        if x0 >= x1 or y0 >= y1:
            continue
        mx.append(sp2.mean2d[0])
        my.append(sp2.mean2d[1])
        ia.append(c / det)
        ib.append(-b / det)
        ic.append(a / det)
        qc.append(qcut)
        op.append(sp2.opacity)
        gx.append(sp2.gaussian_index)
        bx0.append(x0)
        bx1.append(x1)
        by0.append(y0)
        by1.append(y1)
    arrays = dict(
        mx=np.array(mx), my=np.array(my),
        inv_a=np.array(ia), inv_b=np.array(ib), inv_c=np.array(ic),
        qcut=np.array(qc), opac=np.array(op),
        gidx=np.array(gx, dtype=np.int64),
        x0=np.array(bx0, dtype=np.int64), x1=np.array(bx1, dtype=np.int64),
        y0=np.array(by0, dtype=np.int64), y1=np.array(by1, dtype=np.int64),
    )
    return arrays, skipped_degenerate


def blend(splats, payloads: np.ndarray, width: int, height: int):
    """Alpha-blend depth-sorted splats carrying per-gaussian payload rows.

    payloads is indexed by gaussian_index. Returns (FeatureMap,
    BlendRecord); the record captures w_i = alpha_i * prod(1 - alpha_j)
    per contributing (pixel, gaussian) pair.
    """
    payloads = np.ascontiguousarray(np.asarray(payloads, dtype=np.float64))
    if payloads.ndim != 2:
        raise ValueError("payloads must be an NxC matrix")
    if splats:
        max_g = max(s.gaussian_index for s in splats)
        if payloads.shape[0] <= max_g:
            raise ValueError("payload rows do not cover splat gaussian indices")
    arrays, skipped = _prepare(splats, width, height)
    channels = payloads.shape[1]
    data = np.zeros((height, width, channels))
    alpha = np.zeros((height, width))
    transm = np.ones((height, width))
    cap = int(((arrays["x1"] - arrays["x0"]) * (arrays["y1"] - arrays["y0"])).sum()) \
        if arrays["mx"].size else 0
    rec_pix = np.empty(cap, dtype=np.int64)
    rec_g = np.empty(cap, dtype=np.int64)
    rec_w = np.empty(cap, dtype=np.float64)
    if arrays["mx"].size:
        payload_rows = np.ascontiguousarray(payloads[arrays["gidx"]])
        n = _kernel.blend_kernel(
            arrays["mx"], arrays["my"],
            arrays["inv_a"], arrays["inv_b"], arrays["inv_c"],
            arrays["qcut"], arrays["opac"], arrays["gidx"],
            arrays["x0"], arrays["x1"], arrays["y0"], arrays["y1"],
            payload_rows, width, height,
            data, alpha, transm, rec_pix, rec_g, rec_w)
    else:
        n = 0
    record = BlendRecord(width=width, height=height,
                         pixel=rec_pix[:n].copy(), gaussian=rec_g[:n].copy(),
                         weight=rec_w[:n].copy(),
                         stats={"skipped_degenerate": skipped,
                                "n_splats": len(splats)})
    fmap = FeatureMap(width=width, height=height, channels=channels,
                      data=data, alpha=alpha)
    return fmap, record


def render(scene: GaussianScene, view: CameraView, payloads: np.ndarray):
    """Project then blend the whole scene in one call."""
    return blend(project(scene, view), payloads, view.width, view.height)


def render_instance_map(scene: GaussianScene, view: CameraView, indices,
                        payloads: Optional[np.ndarray] = None):
    """Blend only the selected gaussians; payload defaults to instance features.

    The alpha channel is the soft instance silhouette used for IoU after
    binarization.
    """
    idx = np.asarray(sorted(indices), dtype=np.int64)
    if idx.size == 0:
        raise ValueError("instance selection is empty")
    if payloads is None:
        if scene.features is None:
            raise ValueError("scene has no instance features")
        payloads = scene.features.astype(np.float64)
    selected = set(idx.tolist())
    splats = [s for s in project(scene, view) if s.gaussian_index in selected]
    fmap, _ = blend(splats, payloads, view.width, view.height)
    return fmap


def view_weight_matrix(scene: GaussianScene, view: CameraView) -> sp.csr_matrix:
    """Payload-independent blend weights for one view as a sparse matrix.

    Geometry is frozen during feature training, so this is computed once
    per view and reused: map_flat = W @ features, grad = W.T @ pixel_grad.
    """
    _, record = render(scene, view, np.zeros((len(scene), 1)))
    return record.to_sparse(len(scene))
