"""Directory-level extraction driver.

Walks an image directory in sorted order, assigns view ids 0..N-1,
and writes per view: ``mask_<v>.pgm``, ``local_<v>.oige``,
``context_<v>.oige``; plus ``text.oige`` for the query labels and a
``views.tsv`` index. Output mask ids are renumbered to the contiguous
range the embedding rows imply (row r of a view's embedding file
belongs to mask id r+1).
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from . import embed, io, masks
from .backbone import make_backbone

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


@dataclass
class ExtractorConfig:
    image_dir: str
    out_dir: str
    labels: list = field(default_factory=list)
    backbone: str = "test"
    mask_level: str = "whole"
    seed: int = 0

    def violations(self):
        v = []
        if not os.path.isdir(self.image_dir):
            v.append(f"image directory {self.image_dir!r} does not exist")
        if self.mask_level not in masks.MASK_LEVELS:
            v.append(f"mask level must be one of {sorted(masks.MASK_LEVELS)}")
        return v


def _renumber(labels: np.ndarray, kept) -> np.ndarray:
    """Remap kept mask ids to 1..len(kept); everything else to background."""
    out = np.zeros_like(labels)
    for new_id, old_id in enumerate(kept, start=1):
        out[labels == old_id] = new_id
    return out


def process_image(image: np.ndarray, backbone, mask_level: str = "whole"):
    """Masks plus aligned local/context rows for one image.

    Only masks that survive both embedding paths keep a label, so the
    raster's ids and the embedding rows always correspond 1:1.
    """
    labels = masks.generate_masks(image, mask_level)
    local_rows, kept_local = embed.extract_local(image, labels, backbone)
    context_rows, kept_context = embed.extract_context(image, labels, backbone)
    kept = [m for m in kept_local if m in set(kept_context)]
    l_sel = [kept_local.index(m) for m in kept]
    c_sel = [kept_context.index(m) for m in kept]
    return (_renumber(labels, kept),
            local_rows[l_sel].reshape(len(kept), backbone.dim),
            context_rows[c_sel].reshape(len(kept), backbone.dim))


def run(config: ExtractorConfig):
    bad = config.violations()
    if bad:
        raise ValueError("; ".join(bad))
    names = sorted(n for n in os.listdir(config.image_dir)
                   if n.lower().endswith(IMAGE_EXTENSIONS))
    if not names:
        raise ValueError(f"no images found in {config.image_dir!r}")
    backbone = make_backbone(config.backbone, seed=config.seed)
    os.makedirs(config.out_dir, exist_ok=True)
    views = []
    for view_id, name in enumerate(names):
        image = np.asarray(Image.open(os.path.join(config.image_dir, name))
                           .convert("RGB"))
        labels, local_rows, context_rows = process_image(
            image, backbone, config.mask_level)
        io.write_mask_pgm(labels, io.mask_path(config.out_dir, view_id))
        io.write_embeddings(local_rows, "local", view_id,
                            io.embedding_path(config.out_dir, "local", view_id))
        io.write_embeddings(context_rows, "context", view_id,
                            io.embedding_path(config.out_dir, "context", view_id))
        views.append((view_id, name))
    if config.labels:
        text_rows = embed.embed_text(config.labels, backbone)
        io.write_embeddings(text_rows, "text", 0,
                            os.path.join(config.out_dir, "text.oige"))
    io.write_views_tsv(views, os.path.join(config.out_dir, "views.tsv"))
    return views


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="oig-extract",
        description="per-view masks and mask embeddings from images")
    ap.add_argument("--images", required=True, help="input image directory")
    ap.add_argument("--out", required=True, help="output directory")
    ap.add_argument("--labels", default="",
                    help="comma-separated text query labels")
    ap.add_argument("--backbone", default="test",
                    help='"test" or "clip[:model-id]"')
    ap.add_argument("--mask-level", default="whole",
                    choices=sorted(masks.MASK_LEVELS))
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    labels = [x.strip() for x in args.labels.split(",") if x.strip()]
    try:
        views = run(ExtractorConfig(image_dir=args.images, out_dir=args.out,
                                    labels=labels, backbone=args.backbone,
                                    mask_level=args.mask_level,
                                    seed=args.seed))
    except (ValueError, OSError, ImportError) as e:
        print(f"error: {' '.join(str(e).split())}", file=sys.stderr)
        return 1
    print(f"ok {len(views)} views")
    return 0


if __name__ == "__main__":
    sys.exit(main())
