"""Shared domain types for the 3D Gaussian instance-lifting pipeline.

All types are immutable after construction. Scenes are stored as
structure-of-arrays for numerics; ``Gaussian`` is the per-record view.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

FEATURE_DIM = 6

# Wire codes for MaskEmbeddingSet.kind (byte in the .oige format).
KIND_CODES = {"local": 0, "context": 1, "fused": 2, "text": 3}
KIND_NAMES = {v: k for k, v in KIND_CODES.items()}


@dataclass(frozen=True)
class Gaussian:
    """One anisotropic 3D Gaussian primitive.

    Quaternion order is (w, x, y, z). Opacity is stored post-activation,
    strictly inside (0, 1). Color is degree-0 RGB in [0, 1].
    """

    position: np.ndarray
    scale: np.ndarray
    rotation: np.ndarray
    opacity: float
    color: np.ndarray
    instance_feature: Optional[np.ndarray] = None
    gt_label: Optional[int] = None


class GaussianScene:
    """Ordered collection of Gaussians plus an axis-aligned bounding box.

    Arrays are float32 (matching the on-disk format) and read-only.
    Either all gaussians carry instance features / gt labels, or none do.
    """

    def __init__(self, positions, scales, rotations, opacities, colors,
                 features=None, gt_labels=None):
        self.positions = _freeze(positions, np.float32, (-1, 3))
        n = self.positions.shape[0]
        self.scales = _freeze(scales, np.float32, (n, 3))
        self.rotations = _freeze(rotations, np.float32, (n, 4))
        self.opacities = _freeze(opacities, np.float32, (n,))
        self.colors = _freeze(colors, np.float32, (n, 3))
        self.features = None if features is None else _freeze(features, np.float32, (n, FEATURE_DIM))
        self.gt_labels = None if gt_labels is None else _freeze(gt_labels, np.int64, (n,))
        if n == 0:
            raise ValueError("scene must contain at least one gaussian")
        self.bbox_min = self.positions.min(axis=0)
        self.bbox_max = self.positions.max(axis=0)

    def __len__(self):
        return self.positions.shape[0]

    def gaussian(self, i: int) -> Gaussian:
        return Gaussian(
            position=self.positions[i].copy(),
            scale=self.scales[i].copy(),
            rotation=self.rotations[i].copy(),
            opacity=float(self.opacities[i]),
            color=self.colors[i].copy(),
            instance_feature=None if self.features is None else self.features[i].copy(),
            gt_label=None if self.gt_labels is None else int(self.gt_labels[i]),
        )

    def with_features(self, features: np.ndarray) -> "GaussianScene":
        """New scene sharing geometry but carrying the given instance features."""
        return GaussianScene(self.positions, self.scales, self.rotations,
                             self.opacities, self.colors,
                             features=features, gt_labels=self.gt_labels)

    @classmethod
    def from_gaussians(cls, gaussians: Sequence[Gaussian]) -> "GaussianScene":
        if not gaussians:
            raise ValueError("scene must contain at least one gaussian")
        has_feat = gaussians[0].instance_feature is not None
        has_gt = gaussians[0].gt_label is not None
        for g in gaussians:
            if (g.instance_feature is not None) != has_feat:
                raise ValueError("mixed presence of instance features")
            if (g.gt_label is not None) != has_gt:
                raise ValueError("mixed presence of gt labels")
        return cls(
            np.array([g.position for g in gaussians]),
            np.array([g.scale for g in gaussians]),
            np.array([g.rotation for g in gaussians]),
            np.array([g.opacity for g in gaussians]),
            np.array([g.color for g in gaussians]),
            features=np.array([g.instance_feature for g in gaussians]) if has_feat else None,
            gt_labels=np.array([g.gt_label for g in gaussians]) if has_gt else None,
        )


def _freeze(a, dtype, shape):
    out = np.ascontiguousarray(np.asarray(a, dtype=dtype).reshape(shape))
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class CameraView:
    """Pinhole camera: intrinsics in pixels, 4x4 rigid world-to-camera."""

    view_id: int
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    world_to_camera: np.ndarray = field(repr=False)

    def __post_init__(self):
        m = np.ascontiguousarray(np.asarray(self.world_to_camera, dtype=np.float64).reshape(4, 4))
        m.flags.writeable = False
        object.__setattr__(self, "world_to_camera", m)

    def violations(self) -> list:
        v = []
        if self.width <= 0 or self.height <= 0:
            v.append("image dimensions must be positive")
        if self.fx <= 0 or self.fy <= 0:
            v.append("focal lengths must be positive")
        m = self.world_to_camera
        if not np.allclose(m[3], [0.0, 0.0, 0.0, 1.0], atol=1e-9):
            v.append("bottom row of world_to_camera must be (0,0,0,1)")
        r = m[:3, :3]
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-5):
            v.append("rotation block not orthonormal")
        return v


@dataclass(frozen=True)
class InstanceMaskRaster:
    """Integer-labeled mask image; label 0 is background."""

    view_id: int
    labels: np.ndarray = field(repr=False)

    def __post_init__(self):
        lab = np.ascontiguousarray(np.asarray(self.labels, dtype=np.int64))
        if lab.ndim != 2:
            raise ValueError("labels must be an HxW grid")
        if lab.min() < 0:
            raise ValueError("labels must be non-negative")
        if lab.max() >= 65536:
            raise ValueError("labels must be below 65536")
        lab.flags.writeable = False
        object.__setattr__(self, "labels", lab)

    @property
    def height(self):
        return self.labels.shape[0]

    @property
    def width(self):
        return self.labels.shape[1]

    def mask_ids(self) -> np.ndarray:
        ids = np.unique(self.labels)
        return ids[ids > 0]

    def binary_mask(self, mask_id: int) -> np.ndarray:
        return self.labels == mask_id


@dataclass(frozen=True)
class MaskEmbeddingSet:
    """Per-view matrix of language embeddings; row r belongs to mask id r+1.

    ``kind`` is one of local / context / fused / text. For text kind the
    rows correspond to query labels instead of mask ids.
    """

    view_id: int
    kind: str
    rows: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.kind not in KIND_CODES:
            raise ValueError(f"unknown embedding kind {self.kind!r}")
        r = np.ascontiguousarray(np.asarray(self.rows, dtype=np.float32))
        if r.ndim != 2:
            raise ValueError("rows must be an NxD matrix")
        if not np.isfinite(r).all():
            raise ValueError("embedding rows must be finite")
        r.flags.writeable = False
        object.__setattr__(self, "rows", r)

    @property
    def n_masks(self):
        return self.rows.shape[0]

    @property
    def dim(self):
        return self.rows.shape[1]


def validate_scene(scene: GaussianScene) -> list:
    """Check every per-gaussian invariant; returns a list of violation strings.

    Pure: violations are data, not exceptions. Each entry names the
    gaussian index and the failed invariant.
    """
    violations = []
    qn = np.linalg.norm(scene.rotations.astype(np.float64), axis=1)
    for i in np.nonzero(np.abs(qn - 1.0) > 1e-6)[0]:
        violations.append(f"gaussian {i}: quaternion norm {qn[i]:.6g} not within 1e-6 of 1")
    for i in np.nonzero((scene.scales <= 0).any(axis=1))[0]:
        violations.append(f"gaussian {i}: scale positivity violated {scene.scales[i].tolist()}")
    op = scene.opacities
    for i in np.nonzero((op <= 0) | (op >= 1))[0]:
        violations.append(f"gaussian {i}: opacity {op[i]:.6g} not strictly inside (0,1)")
    below = scene.positions < scene.bbox_min
    above = scene.positions > scene.bbox_max
    for i in np.nonzero(below.any(axis=1) | above.any(axis=1))[0]:
        violations.append(f"gaussian {i}: position outside bbox")
    if scene.gt_labels is not None:
        for i in np.nonzero(scene.gt_labels < 0)[0]:
            violations.append(f"gaussian {i}: gt label must be non-negative")
    return violations


def check_embeddings_against_raster(embeddings: MaskEmbeddingSet,
                                    raster: InstanceMaskRaster) -> list:
    """Cross-check a non-text embedding set against its paired raster."""
    violations = []
    if embeddings.kind == "text":
        return violations
    if embeddings.view_id != raster.view_id:
        violations.append("view_id mismatch between embeddings and raster")
    n_labels = int(raster.mask_ids().size)
    if embeddings.n_masks != n_labels:
        violations.append(
            f"embedding rows ({embeddings.n_masks}) != distinct nonzero labels ({n_labels})")
    return violations
