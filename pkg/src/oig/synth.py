"""Synthetic scenes with known ground truth.

Objects are compact gaussian blobs on a ring; cameras orbit the scene;
mask rasters come from rendering object ownership through the real
rasterizer; mask embeddings are orthogonal class vectors plus noise,
with an optional fraction swapped to a wrong class to mimic multi-view
misassociation. Everything is a pure function of the config: random
streams are keyed by (seed, purpose, entity) so outputs are identical
across platforms and regardless of generation order.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from . import formats
from .core import CameraView, GaussianScene, InstanceMaskRaster, MaskEmbeddingSet
from .rasterizer import render

# Mask pixels need majority-opacity coverage to count as foreground.
OWNERSHIP_ALPHA = 0.5

_STREAM_GEOMETRY = 1
_STREAM_LOCAL = 2
_STREAM_CONTEXT = 3
_STREAM_CORRUPT = 4


@dataclass(frozen=True)
class SynthConfig:
    n_objects: int = 6
    gaussians_per_object: int = 30
    n_views: int = 8
    image_size: int = 64
    embed_dim: int = 16
    embed_noise_sigma: float = 0.1
    corrupt_view_fraction: float = 0.0
    seed: int = 0

    def violations(self):
        v = []
        if self.n_objects < 1 or self.gaussians_per_object < 1 or self.n_views < 1 \
                or self.image_size < 1 or self.embed_dim < 1:
            v.append("all counts must be >= 1")
        if self.embed_noise_sigma < 0:
            v.append("noise sigma must be >= 0")
        if not 0.0 <= self.corrupt_view_fraction <= 1.0:
            v.append("corrupt_view_fraction must be in [0, 1]")
        if self.embed_dim < self.n_objects:
            v.append("embed_dim must be >= n_objects for orthogonal class vectors")
        return v


@dataclass
class ManifestEntry:
    view_id: int
    mask_id: int
    object_id: int
    corrupted: bool


@dataclass
class SynthResult:
    config: SynthConfig
    scene: GaussianScene
    views: list
    rasters: dict            # view_id -> InstanceMaskRaster
    local_sets: dict         # view_id -> MaskEmbeddingSet
    context_sets: dict
    text_embeddings: MaskEmbeddingSet
    object_labels: list
    entries: list = field(default_factory=list)

    def entry(self, view_id, mask_id) -> ManifestEntry:
        for e in self.entries:
            if e.view_id == view_id and e.mask_id == mask_id:
                return e
        raise KeyError((view_id, mask_id))

    def object_of_mask(self, view_id, mask_id) -> int:
        return self.entry(view_id, mask_id).object_id


def _rng(seed, *key):
    return np.random.default_rng((int(seed),) + tuple(int(k) for k in key))


def _look_at(position, target, up=(0.0, 0.0, 1.0)):
    """World-to-camera transform: camera z forward, x right, y down."""
    position = np.asarray(position, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - position
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, np.asarray(up, dtype=np.float64))
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    rot = np.stack([right, down, fwd])
    w2c = np.eye(4)
    w2c[:3, :3] = rot
    w2c[:3, 3] = -rot @ position
    return w2c


def _make_scene(config: SynthConfig) -> GaussianScene:
    rng = _rng(config.seed, _STREAM_GEOMETRY)
    n_obj = config.n_objects
    ring = 1.2 if n_obj > 1 else 0.0
    angles = 2 * np.pi * np.arange(n_obj) / max(n_obj, 1)
    centers = np.stack([ring * np.cos(angles), ring * np.sin(angles),
                        rng.uniform(-0.2, 0.2, size=n_obj)], axis=1)
    positions, scales, quats, opac, colors, labels = [], [], [], [], [], []
    for o in range(n_obj):
        k = config.gaussians_per_object
        positions.append(centers[o] + rng.normal(scale=0.15, size=(k, 3)))
        scales.append(rng.uniform(0.06, 0.12, size=(k, 3)))
        q = rng.normal(size=(k, 4))
        quats.append(q / np.linalg.norm(q, axis=1, keepdims=True))
        opac.append(rng.uniform(0.7, 0.9, size=k))
        colors.append(rng.uniform(size=(k, 3)))
        labels.append(np.full(k, o))
    return GaussianScene(
        positions=np.concatenate(positions),
        scales=np.concatenate(scales),
        rotations=np.concatenate(quats),
        opacities=np.concatenate(opac),
        colors=np.concatenate(colors),
        features=None,
        gt_labels=np.concatenate(labels),
    )


def _make_views(config: SynthConfig):
    size = config.image_size
    f = 0.6 * size
    views = []
    for t in range(config.n_views):
        # Elevated orbit looking down at the object ring: in-plane orbits
        # superimpose near and far objects along the view axis, which
        # leaks blend weight across instance masks.
        phi = 2 * np.pi * t / config.n_views
        pos = np.array([3.2 * np.cos(phi), 3.2 * np.sin(phi),
                        2.4 if t % 2 == 0 else 3.0])
        views.append(CameraView(view_id=t, width=size, height=size,
                                fx=f, fy=f, cx=size / 2.0, cy=size / 2.0,
                                world_to_camera=_look_at(pos, (0, 0, 0))))
    return views


def _render_raster(scene, view, n_objects, gt_labels):
    onehot = np.zeros((len(scene), n_objects))
    onehot[np.arange(len(scene)), gt_labels] = 1.0
    fmap, _ = render(scene, view, onehot)
    owner = np.argmax(fmap.data, axis=2)
    fg = fmap.alpha > OWNERSHIP_ALPHA
    return owner, fg


def generate(config: SynthConfig) -> SynthResult:
    bad = config.violations()
    if bad:
        raise ValueError("; ".join(bad))
    scene = _make_scene(config)
    views = _make_views(config)
    n_obj = config.n_objects
    class_vecs = np.eye(config.embed_dim, dtype=np.float64)[:n_obj]

    rasters = {}
    entries = []
    seen = np.zeros(n_obj, dtype=bool)
    per_view_objects = {}
    for view in views:
        owner, fg = _render_raster(scene, view, n_obj, scene.gt_labels)
        present = np.unique(owner[fg])
        labels = np.zeros(owner.shape, dtype=np.int64)
        for mask_id, obj in enumerate(sorted(present.tolist()), start=1):
            labels[fg & (owner == obj)] = mask_id
            entries.append(ManifestEntry(view_id=view.view_id, mask_id=mask_id,
                                         object_id=obj, corrupted=False))
            seen[obj] = True
        rasters[view.view_id] = InstanceMaskRaster(view_id=view.view_id, labels=labels)
        per_view_objects[view.view_id] = sorted(present.tolist())
    invisible = np.nonzero(~seen)[0]
    if invisible.size:
        raise ValueError(f"degenerate fixture: objects {invisible.tolist()} "
                         "project to zero pixels in every view")

    n_corrupt = int(np.floor(config.corrupt_view_fraction * len(entries)))
    if n_corrupt and n_obj < 2:
        raise ValueError("corruption requires at least two objects")
    if n_corrupt:
        rng = _rng(config.seed, _STREAM_CORRUPT)
        for idx in rng.choice(len(entries), size=n_corrupt, replace=False):
            entries[idx].corrupted = True

    local_sets, context_sets = {}, {}
    for view in views:
        v = view.view_id
        rows_local, rows_context = [], []
        for mask_id, obj in enumerate(per_view_objects[v], start=1):
            entry = next(e for e in entries
                         if e.view_id == v and e.mask_id == mask_id)
            target = obj
            if entry.corrupted:
                pick = _rng(config.seed, _STREAM_CORRUPT, v, mask_id)
                target = int(pick.choice([o for o in range(n_obj) if o != obj]))
            base = class_vecs[target]
            nl = _rng(config.seed, _STREAM_LOCAL, v, mask_id).normal(
                scale=config.embed_noise_sigma or 0.0, size=config.embed_dim) \
                if config.embed_noise_sigma > 0 else 0.0
            nc = _rng(config.seed, _STREAM_CONTEXT, v, mask_id).normal(
                scale=config.embed_noise_sigma or 0.0, size=config.embed_dim) \
                if config.embed_noise_sigma > 0 else 0.0
            rows_local.append(base + nl)
            rows_context.append(base + nc)
        shape = (len(rows_local), config.embed_dim)
        local_sets[v] = MaskEmbeddingSet(view_id=v, kind="local",
                                         rows=np.array(rows_local).reshape(shape))
        context_sets[v] = MaskEmbeddingSet(view_id=v, kind="context",
                                           rows=np.array(rows_context).reshape(shape))

    text = MaskEmbeddingSet(view_id=0, kind="text", rows=class_vecs)
    return SynthResult(config=config, scene=scene, views=views, rasters=rasters,
                       local_sets=local_sets, context_sets=context_sets,
                       text_embeddings=text,
                       object_labels=[f"object_{o:02d}" for o in range(n_obj)],
                       entries=entries)


# -------------------------------------------------------------- writing

def write_manifest(result: SynthResult, path):
    with open(path, "w") as f:
        f.write("row\tview_id\tmask_id\tobject_id\tlabel\tcorrupted\n")
        for o, label in enumerate(result.object_labels):
            f.write(f"object\t-\t-\t{o}\t{label}\t-\n")
        for e in result.entries:
            f.write(f"assoc\t{e.view_id}\t{e.mask_id}\t{e.object_id}\t"
                    f"{result.object_labels[e.object_id]}\t{int(e.corrupted)}\n")


def read_manifest(path):
    object_labels = {}
    entries = []
    with open(path) as f:
        header = f.readline()
        if not header.startswith("row\t"):
            raise ValueError(f"{path}: not a gt manifest")
        for line in f:
            parts = line.rstrip("\n").split("\t")
            if parts[0] == "object":
                object_labels[int(parts[3])] = parts[4]
            elif parts[0] == "assoc":
                entries.append(ManifestEntry(view_id=int(parts[1]),
                                             mask_id=int(parts[2]),
                                             object_id=int(parts[3]),
                                             corrupted=parts[5] == "1"))
    labels = [object_labels[o] for o in sorted(object_labels)]
    return labels, entries


def write_outputs(result: SynthResult, outdir):
    os.makedirs(outdir, exist_ok=True)
    formats.write_scene(result.scene, os.path.join(outdir, "scene.oigs"))
    formats.write_cameras(result.views, os.path.join(outdir, "cameras.oigc"))
    for v, raster in sorted(result.rasters.items()):
        formats.write_mask_raster(raster, formats.mask_raster_path(outdir, v))
    for v, emb in sorted(result.local_sets.items()):
        formats.write_embeddings(emb, os.path.join(outdir, f"local_{v}.oige"))
    for v, emb in sorted(result.context_sets.items()):
        formats.write_embeddings(emb, os.path.join(outdir, f"context_{v}.oige"))
    formats.write_embeddings(result.text_embeddings, os.path.join(outdir, "text.oige"))
    write_manifest(result, os.path.join(outdir, "gt_manifest.tsv"))
