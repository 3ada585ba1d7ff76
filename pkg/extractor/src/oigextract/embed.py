"""Mask-level embedding extraction.

Two complementary embeddings per mask: "local" encodes the cropped,
background-zeroed mask region on its own; "context" pools the encoder's
pre-projection spatial features under the (nearest-neighbor resized)
mask and then applies the encoder's final projection, so the embedding
keeps information about the surroundings. All rows are unit-normalized.
"""

from __future__ import annotations

import warnings

import numpy as np

from .backbone import _as_float_rgb, unit

DEFAULT_PROMPT = "a photo of a {}"


def _mask_ids(labels: np.ndarray):
    ids = np.unique(np.asarray(labels))
    return [int(i) for i in ids if i > 0]


def extract_local(image: np.ndarray, labels: np.ndarray, backbone):
    """Per mask: zero out non-mask pixels, crop to the mask's bounding
    box, encode. Returns (rows (N, dim) float32, kept mask ids); empty
    masks are skipped with a warning.
    """
    img = _as_float_rgb(image)
    rows, kept = [], []
    for mid in _mask_ids(labels):
        sel = labels == mid
        if not sel.any():
            warnings.warn(f"mask {mid} is empty, skipping")
            continue
        ys, xs = np.nonzero(sel)
        zeroed = np.where(sel[..., None], img, 0.0)
        crop = zeroed[ys.min():ys.max() + 1, xs.min():xs.max() + 1]
        rows.append(unit(backbone.encode_image(crop)))
        kept.append(mid)
    return np.array(rows, dtype=np.float32).reshape(len(kept), backbone.dim), kept


def nearest_resize(labels: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Nearest-neighbor label resize; keeps labels integral."""
    labels = np.asarray(labels)
    h, w = labels.shape
    ys = np.minimum((np.arange(out_h) * h / out_h).astype(np.int64), h - 1)
    xs = np.minimum((np.arange(out_w) * w / out_w).astype(np.int64), w - 1)
    return labels[np.ix_(ys, xs)]


def extract_context(image: np.ndarray, labels: np.ndarray, backbone):
    """Per mask: masked average pooling over the pre-projection spatial
    feature map (mask resized to the map's grid by nearest neighbor),
    then the encoder's final projection. Returns (rows, kept mask ids);
    masks that resize to zero coverage are skipped with a warning.
    """
    img = _as_float_rgb(image)
    spatial = backbone.spatial_features(img)  # (D', H', W')
    _, hp, wp = spatial.shape
    resized = nearest_resize(np.asarray(labels), hp, wp)
    flat = spatial.reshape(spatial.shape[0], -1)
    rows, kept = [], []
    for mid in _mask_ids(labels):
        sel = (resized == mid).reshape(-1)
        if not sel.any():
            warnings.warn(f"mask {mid} resized to zero coverage, skipping")
            continue
        pooled = flat[:, sel].mean(axis=1)
        rows.append(unit(backbone.project(pooled)))
        kept.append(mid)
    return np.array(rows, dtype=np.float32).reshape(len(kept), backbone.dim), kept


def embed_text(labels, backbone, template: str = DEFAULT_PROMPT) -> np.ndarray:
    """One unit-normalized row per label string, in input order."""
    labels = list(labels)
    if not labels:
        raise ValueError("no text labels given")
    rows = [unit(backbone.encode_text(template.format(label)))
            for label in labels]
    return np.array(rows, dtype=np.float32)
