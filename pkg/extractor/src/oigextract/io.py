"""Writers for the lifting pipeline's on-disk formats.

Implemented independently from the consumer so the only coupling
between the two packages is the byte layout itself: 16-bit binary PGM
(big-endian pixels) for mask rasters, and the "OIGE" little-endian
embedding container. A ``views.tsv`` index maps view ids back to the
source image files.
"""

from __future__ import annotations

import os
import struct

import numpy as np

EMBED_MAGIC = b"OIGE"
FORMAT_VERSION = 1
KIND_CODES = {"local": 0, "context": 1, "fused": 2, "text": 3}


def write_mask_pgm(labels: np.ndarray, path):
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise ValueError("labels must be an HxW grid")
    if labels.min() < 0 or labels.max() > 65535:
        raise ValueError("labels must fit 16-bit PGM (0..65535)")
    h, w = labels.shape
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n65535\n" % (w, h))
        f.write(labels.astype(">u2").tobytes())


def write_embeddings(rows: np.ndarray, kind: str, view_id: int, path):
    rows = np.ascontiguousarray(rows, dtype="<f4")
    if rows.ndim != 2:
        raise ValueError("rows must be an NxD matrix")
    if not np.isfinite(rows).all():
        raise ValueError("embedding rows must be finite")
    with open(path, "wb") as f:
        f.write(EMBED_MAGIC)
        f.write(struct.pack("<IIIIB", FORMAT_VERSION, view_id,
                            rows.shape[0], rows.shape[1], KIND_CODES[kind]))
        f.write(rows.tobytes())


def write_views_tsv(entries, path):
    """entries: iterable of (view_id, image_filename)."""
    with open(path, "w") as f:
        f.write("view_id\timage\n")
        for view_id, name in entries:
            f.write(f"{view_id}\t{name}\n")


def mask_path(outdir, view_id):
    return os.path.join(str(outdir), f"mask_{view_id}.pgm")


def embedding_path(outdir, kind, view_id):
    return os.path.join(str(outdir), f"{kind}_{view_id}.oige")
