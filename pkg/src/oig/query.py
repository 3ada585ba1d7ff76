"""Open-vocabulary text queries over the instance semantic table.

Each instance is labeled by the text row with the highest cosine
similarity; every gaussian inherits its instance's label. Evaluation is
point-level (per-class IoU / recall over the gaussians) and image-level
(render the selected gaussians per query and compare the binarized
silhouette against a ground-truth 2D mask).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .association import iou
from .codebook import Codebook
from .core import GaussianScene, MaskEmbeddingSet
from .rasterizer import render_instance_map
from .semantics import SemanticTable

UNASSIGNED = -1
RENDER_ALPHA_BINARIZE = 0.5
ACC_THRESHOLDS = (0.25, 0.5)


@dataclass
class QueryResult:
    instance_ids: np.ndarray      # row order matches the semantic table
    instance_labels: np.ndarray   # label id per instance, -1 for flagged
    similarities: np.ndarray      # (n_instances, n_labels), 0 for flagged
    gaussian_labels: np.ndarray   # (N,) inherited label per gaussian

    def instances_of_label(self, label_id: int) -> np.ndarray:
        return self.instance_ids[self.instance_labels == label_id]


@dataclass
class MetricReport:
    """Point-level multi-class metrics over the gaussians."""

    class_ids: np.ndarray         # classes present in ground truth
    class_iou: np.ndarray
    class_acc: np.ndarray         # per-class recall
    miou: float
    macc: float
    confusion: dict = field(default_factory=dict)  # (gt, pred) -> count


@dataclass
class RenderReport:
    """Per-query 2D selection metrics."""

    ious: list                    # (label_id, view_id, iou) triples
    miou: float
    macc: dict                    # threshold -> fraction of queries >= it


def classify_gaussians(table: SemanticTable, codebook: Codebook,
                       text: MaskEmbeddingSet) -> QueryResult:
    """Argmax-cosine label per instance, broadcast to member gaussians.

    Flagged (zero-association) instances and their gaussians are labeled
    UNASSIGNED; ties go to the lowest label id.
    """
    if text.kind != "text":
        raise ValueError(f"expected text embeddings, got {text.kind!r}")
    if table.dim != text.dim:
        raise ValueError(f"semantic dim {table.dim} != text dim {text.dim}")
    text_rows = text.rows.astype(np.float64)
    text_norms = np.linalg.norm(text_rows, axis=1)
    if (text_norms == 0).any():
        raise ValueError("text rows must be nonzero")
    rows = table.rows.astype(np.float64)
    norms = np.linalg.norm(rows, axis=1)
    safe = np.where(norms == 0, 1.0, norms)
    sims = (rows / safe[:, None]) @ (text_rows / text_norms[:, None]).T
    labels = np.argmax(sims, axis=1).astype(np.int64)
    flagged = np.asarray(table.flagged, dtype=bool)
    labels[flagged] = UNASSIGNED
    sims[flagged] = 0.0
    row_of = {int(inst): r for r, inst in enumerate(table.instance_ids.tolist())}
    gaussian_labels = np.full(len(codebook.instance_ids), UNASSIGNED,
                              dtype=np.int64)
    for g, inst in enumerate(codebook.instance_ids.tolist()):
        r = row_of.get(int(inst))
        if r is not None:
            gaussian_labels[g] = labels[r]
    return QueryResult(instance_ids=table.instance_ids.copy(),
                       instance_labels=labels, similarities=sims,
                       gaussian_labels=gaussian_labels)


def eval_pointcloud(result: QueryResult, gt_labels: np.ndarray) -> MetricReport:
    """IoU and recall per ground-truth class; means over present classes.

    UNASSIGNED predictions count as wrong for their ground-truth class.
    """
    pred = np.asarray(result.gaussian_labels)
    gt = np.asarray(gt_labels)
    if pred.shape != gt.shape:
        raise ValueError("prediction and ground truth sizes differ")
    classes = np.unique(gt)
    ious, accs = [], []
    confusion = {}
    for g, p in zip(gt.tolist(), pred.tolist()):
        confusion[(g, p)] = confusion.get((g, p), 0) + 1
    for c in classes.tolist():
        tp = int(((pred == c) & (gt == c)).sum())
        fp = int(((pred == c) & (gt != c)).sum())
        fn = int(((pred != c) & (gt == c)).sum())
        denom = tp + fp + fn
        ious.append(tp / denom if denom else 0.0)
        accs.append(tp / (tp + fn))
    ious = np.array(ious)
    accs = np.array(accs)
    return MetricReport(class_ids=classes, class_iou=ious, class_acc=accs,
                        miou=float(ious.mean()), macc=float(accs.mean()),
                        confusion=confusion)


def select_and_render(result: QueryResult, label_id: int,
                      scene: GaussianScene, codebook: Codebook,
                      view, gt_mask: np.ndarray,
                      alpha_threshold: float = RENDER_ALPHA_BINARIZE):
    """Render the gaussians labeled ``label_id`` into ``view`` and score
    the binarized silhouette against a ground-truth 2D mask.

    Returns (binary image, iou). Both-empty counts as IoU 1 (a query
    with no footprint and no ground truth is vacuously correct).
    """
    gt_mask = np.asarray(gt_mask, dtype=bool)
    if gt_mask.shape != (view.height, view.width):
        raise ValueError("ground-truth mask does not match the view size")
    selected = np.nonzero(result.gaussian_labels == label_id)[0]
    if selected.size == 0:
        binary = np.zeros((view.height, view.width), dtype=bool)
    else:
        # Only the alpha silhouette matters here; use a dummy payload so
        # scenes without trained features can still be rendered.
        fmap = render_instance_map(scene, view, selected,
                                   payloads=np.zeros((len(scene), 1)))
        binary = fmap.alpha > alpha_threshold
    if not binary.any() and not gt_mask.any():
        return binary, 1.0
    return binary, iou(binary, gt_mask)


def eval_renders(ious, thresholds=ACC_THRESHOLDS) -> RenderReport:
    """Summarize (label, view, iou) triples into mIoU and mAcc@threshold."""
    ious = list(ious)
    if not ious:
        raise ValueError("no query renders to evaluate")
    vals = np.array([i for _, _, i in ious], dtype=np.float64)
    macc = {float(t): float((vals >= t).mean()) for t in thresholds}
    return RenderReport(ious=ious, miou=float(vals.mean()), macc=macc)


# ------------------------------------------------------------- reports

def write_pointcloud_report(report: MetricReport, path):
    with open(path, "w") as f:
        f.write("class_id\tiou\tacc\n")
        for c, i, a in zip(report.class_ids.tolist(), report.class_iou,
                           report.class_acc):
            f.write(f"{c}\t{i:.10g}\t{a:.10g}\n")
        f.write(f"mean\t{report.miou:.10g}\t{report.macc:.10g}\n")


def write_render_report(report: RenderReport, path):
    with open(path, "w") as f:
        f.write("label_id\tview_id\tiou\n")
        for label, vid, i in report.ious:
            f.write(f"{label}\t{vid}\t{i:.10g}\n")
        f.write(f"miou\t-\t{report.miou:.10g}\n")
        for t in sorted(report.macc):
            f.write(f"macc@{t:g}\t-\t{report.macc[t]:.10g}\n")


def format_summary(report: MetricReport) -> str:
    lines = [f"classes evaluated: {report.class_ids.size}"]
    for c, i, a in zip(report.class_ids.tolist(), report.class_iou,
                       report.class_acc):
        lines.append(f"  class {c}: IoU {i:.4f}  acc {a:.4f}")
    lines.append(f"mIoU {report.miou:.4f}  mAcc {report.macc:.4f}")
    return "\n".join(lines)
