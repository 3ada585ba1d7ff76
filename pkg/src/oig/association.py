"""Binding 3D instances to 2D masks across views.

Each instance is rendered into every view; its binarized silhouette is
matched against the view's mask raster by a combined score
score = IoU * feature_term, where the feature term compares the rendered
instance features against the mask's pseudo-ground-truth feature (the
fine codebook center whose rendered mean best explains the mask). One
mask at most per (instance, view); instances with no visible footprint
anywhere are flagged instead of force-assigned.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .codebook import Codebook
from .core import GaussianScene
from .rasterizer import blend, project, view_weight_matrix

ALPHA_BINARIZE = 0.5
IOU_FLOOR = 0.05
MAGNITUDE_PERCENTILE = 99.0
DISTANCE_DOMAINS = ("union", "intersection", "image")


@dataclass(frozen=True)
class AssociationEntry:
    instance_id: int
    view_id: int
    mask_id: int
    iou: float
    feature_term: float
    score: float


@dataclass
class AssociationTable:
    entries: list = field(default_factory=list)
    unassociated: list = field(default_factory=list)  # instance ids, sorted

    def for_instance(self, instance_id: int) -> list:
        return [e for e in self.entries if e.instance_id == instance_id]

    def get(self, instance_id: int, view_id: int):
        for e in self.entries:
            if e.instance_id == instance_id and e.view_id == view_id:
                return e
        return None

    def instance_ids(self) -> np.ndarray:
        ids = {e.instance_id for e in self.entries} | set(self.unassociated)
        return np.array(sorted(ids), dtype=np.int64)

    def violations(self) -> list:
        v = []
        seen = set()
        for e in self.entries:
            key = (e.instance_id, e.view_id)
            if key in seen:
                v.append(f"duplicate association for instance {e.instance_id} "
                         f"view {e.view_id}")
            seen.add(key)
            if not 0.0 <= e.iou <= 1.0:
                v.append(f"iou out of range for instance {e.instance_id}")
            if not 0.0 <= e.feature_term <= 1.0:
                v.append(f"feature term out of range for instance {e.instance_id}")
            if abs(e.score - e.iou * e.feature_term) > 1e-9:
                v.append(f"score is not iou*feature_term for instance {e.instance_id}")
        return v


def iou(binary_a: np.ndarray, binary_b: np.ndarray) -> float:
    """Intersection over union of two boolean masks; both-empty -> 0."""
    a = np.asarray(binary_a, dtype=bool)
    b = np.asarray(binary_b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError("mask shapes differ")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 0.0
    return np.count_nonzero(a & b) / union


def feature_magnitude_scale(features: np.ndarray,
                            percentile: float = MAGNITUDE_PERCENTILE) -> float:
    """Normalizer for per-pixel L1 feature distances: a high percentile
    of the per-gaussian L1 feature norms (floored to avoid divide-by-zero).
    """
    mags = np.abs(np.asarray(features, dtype=np.float64)).sum(axis=1)
    return max(float(np.percentile(mags, percentile)), 1e-12)


def feature_term(instance_map: np.ndarray, instance_bin: np.ndarray,
                 mask_bin: np.ndarray, mask_center: np.ndarray,
                 scale: float, domain: str = "union") -> float:
    """1 minus the normalized mean per-pixel L1 gap between the rendered
    instance features and the mask's constant pseudo-ground-truth feature,
    clamped to [0, 1].

    The mean runs over the chosen footprint domain; the pseudo map is
    ``mask_center`` on mask pixels and zero elsewhere.
    """
    if domain not in DISTANCE_DOMAINS:
        raise ValueError(f"unknown distance domain {domain!r}")
    if domain == "union":
        sel = instance_bin | mask_bin
    elif domain == "intersection":
        sel = instance_bin & mask_bin
    else:
        sel = np.ones_like(mask_bin)
    if not sel.any():
        return 0.0
    pseudo = np.where(mask_bin[..., None], mask_center, 0.0)
    dist = np.abs(instance_map - pseudo).sum(axis=-1)
    mean = float(dist[sel].mean()) / scale
    return float(np.clip(1.0 - mean, 0.0, 1.0))


def pick_best(candidates, iou_floor: float = IOU_FLOOR):
    """Argmax-score candidate among (mask_id, iou, feature_term) triples
    with iou >= floor; ties go to the lowest mask id. None if no candidate
    has a visible footprint.
    """
    best = None
    for mask_id, iou_val, ft in sorted(candidates):
        if iou_val < iou_floor:
            continue
        score = iou_val * ft
        if best is None or score > best[3]:
            best = (mask_id, iou_val, ft, score)
    return best


def mask_pseudo_centers(codebook: Codebook, center_map_flat: np.ndarray,
                        raster) -> dict:
    """Pseudo-ground-truth feature per mask id: the occupied fine center
    nearest to the mean rendered center-feature over the mask's pixels.
    """
    occupied = codebook.occupied_instances()
    centers = codebook.fine_centers[occupied].astype(np.float64)
    flat_labels = raster.labels.reshape(-1)
    out = {}
    for mid in raster.mask_ids():
        pix = np.nonzero(flat_labels == mid)[0]
        mean = center_map_flat[pix].mean(axis=0)
        d2 = ((centers - mean) ** 2).sum(axis=1)
        out[int(mid)] = centers[int(np.argmin(d2))]
    return out


def associate(scene: GaussianScene, codebook: Codebook, views, rasters,
              alpha_threshold: float = ALPHA_BINARIZE,
              iou_floor: float = IOU_FLOOR,
              distance_domain: str = "union") -> AssociationTable:
    """Best-mask assignment for every occupied instance in every view.

    For each (instance, view): render the instance's members alone,
    binarize alpha at ``alpha_threshold``, score every mask in the view
    by IoU times the feature term, and keep the top-scoring mask with
    IoU >= ``iou_floor``. Instances that clear the floor in no view at
    all are listed in ``unassociated``.
    """
    if scene.features is None:
        raise ValueError("scene has no instance features")
    features = scene.features.astype(np.float64)
    scale = feature_magnitude_scale(features)
    occupied = codebook.occupied_instances()
    members = {int(i): codebook.members(int(i)) for i in occupied}
    table = AssociationTable()
    associated = set()
    for view in views:
        raster = rasters[view.view_id]
        if raster.height != view.height or raster.width != view.width:
            raise ValueError(f"raster and view {view.view_id} dimensions differ")
        splats = project(scene, view)
        weight = view_weight_matrix(scene, view)
        center_map = weight @ codebook.center_features().astype(np.float64)
        pseudo = mask_pseudo_centers(codebook, center_map, raster)
        mask_bins = {mid: raster.binary_mask(mid) for mid in pseudo}
        for inst in occupied:
            inst = int(inst)
            sel = set(members[inst].tolist())
            inst_splats = [s for s in splats if s.gaussian_index in sel]
            fmap, _ = blend(inst_splats, features, view.width, view.height)
            inst_bin = fmap.alpha > alpha_threshold
            cands = [(mid, iou(inst_bin, mb),
                      feature_term(fmap.data, inst_bin, mb, pseudo[mid],
                                   scale, distance_domain))
                     for mid, mb in mask_bins.items()]
            best = pick_best(cands, iou_floor)
            if best is not None:
                mid, iou_val, ft, score = best
                table.entries.append(AssociationEntry(
                    instance_id=inst, view_id=view.view_id, mask_id=mid,
                    iou=iou_val, feature_term=ft, score=score))
                associated.add(inst)
    table.unassociated = sorted(int(i) for i in occupied
                                if int(i) not in associated)
    return table


# -------------------------------------------------------------- file IO

def write_associations(table: AssociationTable, path):
    """TSV, one row per association; unassociated instances are recorded
    with view_id and mask_id of -1 and zero scores.
    """
    with open(path, "w") as f:
        f.write("instance_id\tview_id\tmask_id\tiou\tfeature_term\tscore\n")
        for e in table.entries:
            f.write(f"{e.instance_id}\t{e.view_id}\t{e.mask_id}\t"
                    f"{e.iou:.10g}\t{e.feature_term:.10g}\t{e.score:.10g}\n")
        for inst in table.unassociated:
            f.write(f"{inst}\t-1\t-1\t0\t0\t0\n")


def read_associations(path) -> AssociationTable:
    table = AssociationTable()
    with open(path) as f:
        header = f.readline().rstrip("\n")
        if header != "instance_id\tview_id\tmask_id\tiou\tfeature_term\tscore":
            raise ValueError(f"{path}: not an association table")
        for line in f:
            inst, vid, mid, i, ft, s = line.rstrip("\n").split("\t")
            if int(vid) == -1:
                table.unassociated.append(int(inst))
            else:
                table.entries.append(AssociationEntry(
                    instance_id=int(inst), view_id=int(vid), mask_id=int(mid),
                    iou=float(i), feature_term=float(ft), score=float(s)))
    return table
