"""Per-gaussian instance feature learning.

Two losses drive the features: an intra-mask smoothing term pulling
rendered per-pixel features toward their mask mean, and an inter-mask
contrastive term pushing mask means apart. Blending is linear in the
payload, so gradients route analytically through the recorded blend
weights; no autodiff and no re-rendering per step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import FEATURE_DIM, GaussianScene, InstanceMaskRaster
from .rasterizer import FeatureMap, view_weight_matrix

MIN_MASK_PIXELS = 4
PAIR_DIST_FLOOR = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 500
    learning_rate: float = 0.05
    lambda_s: float = 1.0
    lambda_c: float = 1.0
    batch_views: int = 1
    seed: int = 0
    init_sigma: float = 0.1

    def violations(self):
        v = []
        if self.iterations < 1:
            v.append("iterations must be >= 1")
        if self.learning_rate < 0:
            v.append("learning_rate must be >= 0")
        if self.lambda_s < 0 or self.lambda_c < 0:
            v.append("loss weights must be >= 0")
        if self.batch_views < 1:
            v.append("batch_views must be >= 1")
        return v


@dataclass
class MaskStats:
    """Per-mask pixel counts and mean rendered features."""

    mask_ids: np.ndarray      # retained mask ids, ascending
    counts: np.ndarray
    means: np.ndarray         # (m, C)
    skipped_small: list       # mask ids with < MIN_MASK_PIXELS pixels


def mask_pixels(raster: InstanceMaskRaster):
    """Flat pixel index list per mask id, background excluded."""
    flat = raster.labels.reshape(-1)
    out = {}
    for mid in raster.mask_ids():
        out[int(mid)] = np.nonzero(flat == mid)[0]
    return out


def _stats_from_flat(map_flat, pixels_by_mask, min_pixels=MIN_MASK_PIXELS):
    ids, counts, means, skipped = [], [], [], []
    for mid, pix in sorted(pixels_by_mask.items()):
        if pix.size < min_pixels:
            skipped.append(mid)
            continue
        ids.append(mid)
        counts.append(pix.size)
        means.append(map_flat[pix].mean(axis=0))
    means = np.array(means) if ids else np.zeros((0, map_flat.shape[1]))
    return MaskStats(mask_ids=np.array(ids, dtype=np.int64),
                     counts=np.array(counts, dtype=np.int64),
                     means=means, skipped_small=skipped)


def loss_smooth(feature_map: FeatureMap, raster: InstanceMaskRaster,
                min_pixels=MIN_MASK_PIXELS):
    """Sum of squared deviations from the per-mask mean feature.

    Background pixels are excluded; masks with fewer than ``min_pixels``
    pixels are skipped and reported in the stats.
    """
    if feature_map.height != raster.height or feature_map.width != raster.width:
        raise ValueError("feature map and raster dimensions differ")
    pixels_by_mask = mask_pixels(raster)
    if not pixels_by_mask:
        raise ValueError("no masks: raster has no nonzero labels")
    flat = feature_map.data.reshape(-1, feature_map.channels)
    stats = _stats_from_flat(flat, pixels_by_mask, min_pixels)
    total = 0.0
    for mid, mean in zip(stats.mask_ids, stats.means):
        diff = flat[pixels_by_mask[int(mid)]] - mean
        total += float((diff * diff).sum())
    return total, stats


def loss_contrast(stats: MaskStats):
    """Inverse squared distances between mask means, averaged over
    ordered pairs with the 1/(m(m+1)) prefactor.

    Returns (value, degenerate); degenerate is True when fewer than two
    masks survive, in which case the loss is 0.
    """
    m = stats.means.shape[0]
    if m < 2:
        return 0.0, True
    diff = stats.means[:, None, :] - stats.means[None, :, :]
    d2 = np.maximum((diff * diff).sum(axis=2), PAIR_DIST_FLOOR)
    inv = 1.0 / d2
    np.fill_diagonal(inv, 0.0)
    return float(inv.sum() / (m * (m + 1))), False


def _pixel_grad(map_flat, pixels_by_mask, stats, lambda_s, lambda_c):
    """d(lambda_s L_s + lambda_c L_c)/d(map pixel), (P, C).

    L_s per pixel: 2 (M_p - mean_i); the mean's own dependence cancels.
    L_c reaches pixels only through the mask means, each pixel getting
    grad(mean_i) / count_i.
    """
    grad = np.zeros_like(map_flat)
    m = stats.means.shape[0]
    mean_grad = np.zeros_like(stats.means)
    if lambda_c > 0 and m >= 2:
        diff = stats.means[:, None, :] - stats.means[None, :, :]
        d2 = (diff * diff).sum(axis=2)
        live = d2 > PAIR_DIST_FLOOR  # floored pairs are flat: zero grad
        np.fill_diagonal(live, False)
        inv2 = np.where(live, 1.0 / np.maximum(d2, PAIR_DIST_FLOOR) ** 2, 0.0)
        # Ordered pairs (i,j) and (j,i) double the per-pair derivative.
        mean_grad = (-2.0 * 2.0 / (m * (m + 1))) * (inv2[:, :, None] * diff).sum(axis=1)
        mean_grad *= lambda_c
    for row, mid in enumerate(stats.mask_ids):
        pix = pixels_by_mask[int(mid)]
        if lambda_s > 0:
            grad[pix] += 2.0 * lambda_s * (map_flat[pix] - stats.means[row])
        grad[pix] += mean_grad[row] / pix.size
    return grad


def view_loss_and_grad(weight_matrix, features, pixels_by_mask,
                       lambda_s=1.0, lambda_c=1.0):
    """Loss and feature gradient for one view from its blend weights."""
    map_flat = weight_matrix @ features
    stats = _stats_from_flat(map_flat, pixels_by_mask)
    ls = 0.0
    for mid, mean in zip(stats.mask_ids, stats.means):
        diff = map_flat[pixels_by_mask[int(mid)]] - mean
        ls += float((diff * diff).sum())
    lc, _ = loss_contrast(stats)
    pixel_grad = _pixel_grad(map_flat, pixels_by_mask, stats, lambda_s, lambda_c)
    grad = weight_matrix.T @ pixel_grad
    return ls, lc, lambda_s * ls + lambda_c * lc, grad


def grad_features(scene: GaussianScene, views, rasters, config: TrainConfig):
    """Total loss and analytic N x 6 gradient over all given views."""
    if scene.features is None:
        raise ValueError("scene has no instance features")
    features = scene.features.astype(np.float64)
    total = 0.0
    grad = np.zeros_like(features)
    for view in views:
        w = view_weight_matrix(scene, view)
        pixels_by_mask = mask_pixels(rasters[view.view_id])
        if not pixels_by_mask:
            raise ValueError(f"no masks: view {view.view_id} has no nonzero labels")
        _, _, loss, g = view_loss_and_grad(w, features, pixels_by_mask,
                                           config.lambda_s, config.lambda_c)
        total += loss
        grad += g
    return total, grad


def train(scene: GaussianScene, views, rasters, config: TrainConfig):
    """Gradient descent on the instance features; geometry stays frozen.

    Returns (scene with learned features, trace) where trace rows are
    (iteration, L_s, L_c, total) for the sampled batch.
    """
    bad = config.violations()
    if bad:
        raise ValueError("; ".join(bad))
    usable = [v for v in views if rasters[v.view_id].mask_ids().size >= 1]
    if not any(rasters[v.view_id].mask_ids().size >= 2 for v in usable):
        raise ValueError("need at least one view with at least two masks")
    rng = np.random.default_rng((config.seed, 77))
    features = rng.normal(scale=config.init_sigma,
                          size=(len(scene), FEATURE_DIM))
    weights = {v.view_id: view_weight_matrix(scene, v) for v in usable}
    pixels = {v.view_id: mask_pixels(rasters[v.view_id]) for v in usable}
    trace = []
    for it in range(config.iterations):
        batch = rng.choice(len(usable), size=min(config.batch_views, len(usable)),
                           replace=False)
        ls_tot = lc_tot = loss_tot = 0.0
        grad = np.zeros_like(features)
        for bi in batch:
            vid = usable[bi].view_id
            ls, lc, loss, g = view_loss_and_grad(
                weights[vid], features, pixels[vid],
                config.lambda_s, config.lambda_c)
            ls_tot += ls
            lc_tot += lc
            loss_tot += loss
            grad += g
        if not np.isfinite(loss_tot):
            raise FloatingPointError(f"non-finite loss at iteration {it}")
        features = features - config.learning_rate * grad
        trace.append((it, ls_tot, lc_tot, loss_tot))
    return scene.with_features(features.astype(np.float32)), trace


def write_trace(trace, path):
    with open(path, "w") as f:
        f.write("iter\tL_s\tL_c\ttotal\n")
        for it, ls, lc, total in trace:
            f.write(f"{it}\t{ls:.10g}\t{lc:.10g}\t{total:.10g}\n")
