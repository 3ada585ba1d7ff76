"""Two-level coarse-to-fine discretization of instance features.

The coarse stage clusters [feature ; position] jointly (positions
normalized to the scene bbox and scaled by position_weight) so spatially
unrelated objects cannot merge; the fine stage re-clusters each coarse
cell on features alone. A gaussian's instance id is
coarse_index * k2 + fine_index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import GaussianScene
from .rasterizer import view_weight_matrix

KMEANS_MAX_ITER = 100
DEFAULT_K1 = 64
DEFAULT_K2 = 10
DEFAULT_REASSIGN_EVERY = 50


@dataclass
class Codebook:
    k1: int
    k2: int
    position_weight: float
    coarse_centers: np.ndarray   # (k1, 9): 6 feature + 3 weighted position
    fine_centers: np.ndarray     # (k1*k2, 6); unused slots are zero
    coarse_index: np.ndarray     # (N,)
    fine_index: np.ndarray       # (N,), local within the coarse cell

    @property
    def instance_ids(self) -> np.ndarray:
        return self.coarse_index * self.k2 + self.fine_index

    def occupied_instances(self) -> np.ndarray:
        return np.unique(self.instance_ids)

    def members(self, instance_id: int) -> np.ndarray:
        return np.nonzero(self.instance_ids == instance_id)[0]

    def center_features(self) -> np.ndarray:
        """Per-gaussian pseudo-ground-truth feature (its fine center)."""
        return self.fine_centers[self.instance_ids]

    def violations(self):
        v = []
        if ((self.coarse_index < 0) | (self.coarse_index >= self.k1)).any():
            v.append("coarse index out of range")
        if ((self.fine_index < 0) | (self.fine_index >= self.k2)).any():
            v.append("fine index out of range")
        if self.coarse_centers.shape != (self.k1, 9):
            v.append("coarse center matrix has wrong shape")
        if self.fine_centers.shape != (self.k1 * self.k2, 6):
            v.append("fine center matrix has wrong shape")
        return v


def kmeans(points: np.ndarray, k: int, seed: int):
    """Seeded k-means++ followed by Lloyd iterations.

    Ties in nearest-center go to the lowest center index; empty clusters
    are reseeded to the point farthest from its assigned center. Returns
    (centers, assignment, objective trace); the trace is non-increasing.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] < 1:
        raise ValueError("points must be a non-empty NxD matrix")
    if not np.isfinite(points).all():
        raise ValueError("non-finite input to kmeans")
    n = points.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k={k} must be in [1, {n}]")
    rng = np.random.default_rng((int(seed), 101))
    centers = _plus_plus_init(points, k, rng)
    assign = np.zeros(n, dtype=np.int64)
    trace = []
    for _ in range(KMEANS_MAX_ITER):
        d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_assign = np.argmin(d2, axis=1)  # argmin takes the lowest index on ties
        # Reseed empty clusters to the globally worst-fit point.
        for c in range(k):
            if not (new_assign == c).any():
                worst = int(np.argmax(d2[np.arange(n), new_assign]))
                centers[c] = points[worst]
                d2[:, c] = ((points - centers[c]) ** 2).sum(axis=1)
                new_assign = np.argmin(d2, axis=1)
        trace.append(float(d2[np.arange(n), new_assign].sum()))
        converged = (new_assign == assign).all() and len(trace) > 1
        assign = new_assign
        if converged:
            break
        for c in range(k):
            sel = assign == c
            if sel.any():
                centers[c] = points[sel].mean(axis=0)
    return centers, assign, trace


def _plus_plus_init(points, k, rng):
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    d2 = ((points - centers[0]) ** 2).sum(axis=1)
    for c in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers[c] = points[rng.integers(n)]
            continue
        probs = d2 / total
        centers[c] = points[rng.choice(n, p=probs)]
        d2 = np.minimum(d2, ((points - centers[c]) ** 2).sum(axis=1))
    return centers


def normalized_positions(scene: GaussianScene) -> np.ndarray:
    extent = (scene.bbox_max - scene.bbox_min).astype(np.float64)
    extent[extent == 0] = 1.0
    return (scene.positions.astype(np.float64) - scene.bbox_min) / extent


def build_codebook(scene: GaussianScene, k1=DEFAULT_K1, k2=DEFAULT_K2,
                   position_weight=1.0, seed=0) -> Codebook:
    """Coarse joint clustering, then per-cell fine clustering on features.

    Cells with fewer members than k2 get one fine center per member.
    Deterministic for a fixed seed.
    """
    if scene.features is None:
        raise ValueError("scene has no trained instance features")
    feats = scene.features.astype(np.float64)
    coarse_points = np.hstack([feats, position_weight * normalized_positions(scene)])
    k1 = int(k1)
    k2 = int(k2)
    coarse_centers, coarse_index, _ = kmeans(coarse_points, k1, seed)
    fine_centers = np.zeros((k1 * k2, 6))
    fine_index = np.zeros(len(scene), dtype=np.int64)
    for cell in range(k1):
        members = np.nonzero(coarse_index == cell)[0]
        if members.size == 0:
            continue
        kc = min(k2, members.size)
        if kc == members.size:
            # One center per member, ordered by member index.
            fine_centers[cell * k2:cell * k2 + kc] = feats[members]
            fine_index[members] = np.arange(kc)
        else:
            centers, assign, _ = kmeans(feats[members], kc, seed=(seed * 1000 + 7 + cell))
            fine_centers[cell * k2:cell * k2 + kc] = centers
            fine_index[members] = assign
    return Codebook(k1=k1, k2=k2, position_weight=float(position_weight),
                    coarse_centers=coarse_centers.astype(np.float32),
                    fine_centers=fine_centers.astype(np.float32),
                    coarse_index=coarse_index, fine_index=fine_index)


def refine_lp(scene: GaussianScene, codebook: Codebook, views, rasters,
              iterations=200, learning_rate=0.05,
              reassign_every=DEFAULT_REASSIGN_EVERY):
    """Descend the L1 gap between rendered features and rendered
    pseudo-ground-truth (fine center) features.

    Centers stay fixed; fine assignments are refreshed every
    ``reassign_every`` iterations within each gaussian's coarse cell.
    Returns (scene with refined features, refreshed codebook, loss trace).
    """
    if scene.features is None:
        raise ValueError("scene has no instance features")
    features = scene.features.astype(np.float64)
    cb = Codebook(**{**codebook.__dict__})
    weights = [view_weight_matrix(scene, v) for v in views]
    trace = []
    for it in range(iterations):
        if it > 0 and reassign_every > 0 and it % reassign_every == 0:
            cb = _refresh_assignments(cb, features)
        targets = cb.center_features().astype(np.float64)
        loss = 0.0
        grad = np.zeros_like(features)
        for w in weights:
            mp = w @ features
            mc = w @ targets
            resid = mp - mc
            loss += float(np.abs(resid).sum())
            grad += w.T @ np.sign(resid)  # L1 subgradient, 0 at 0
        if not np.isfinite(loss):
            raise FloatingPointError(f"non-finite refinement loss at iteration {it}")
        trace.append(loss)
        features = features - learning_rate * grad
    cb = _refresh_assignments(cb, features)
    return scene.with_features(features.astype(np.float32)), cb, trace


def _refresh_assignments(cb: Codebook, features: np.ndarray) -> Codebook:
    fine_index = cb.fine_index.copy()
    fine = cb.fine_centers.astype(np.float64)
    occupied_local = {}
    for cell in range(cb.k1):
        members = np.nonzero(cb.coarse_index == cell)[0]
        if members.size == 0:
            continue
        local = np.unique(cb.fine_index[members])
        occupied_local[cell] = local
        centers = fine[cell * cb.k2 + local]
        d2 = ((features[members][:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        fine_index[members] = local[np.argmin(d2, axis=1)]
    return Codebook(k1=cb.k1, k2=cb.k2, position_weight=cb.position_weight,
                    coarse_centers=cb.coarse_centers, fine_centers=cb.fine_centers,
                    coarse_index=cb.coarse_index, fine_index=fine_index)
