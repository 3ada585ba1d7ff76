"""Per-mask embedding fusion and multi-view semantic aggregation.

Local (cropped) and context (masked-pooled) embeddings are combined per
mask by a convex blend. Each 3D instance then aggregates the fused
embeddings of its associated masks across views with similarity-driven
attention: views whose embedding agrees with the multi-view mean get
more weight, which suppresses misassociated outliers without any
learned parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .association import AssociationTable
from .core import MaskEmbeddingSet

DEFAULT_ALPHA = 0.4
DEFAULT_TEMPERATURE = 1.0


@dataclass(frozen=True)
class FusionConfig:
    alpha: float = DEFAULT_ALPHA          # context weight in the blend
    temperature: float = DEFAULT_TEMPERATURE  # softmax scale for attention

    def violations(self):
        v = []
        if not 0.0 <= self.alpha <= 1.0:
            v.append("alpha must be in [0, 1]")
        if not self.temperature > 0:
            v.append("temperature must be > 0")
        return v


@dataclass
class SemanticTable:
    """One fused embedding per 3D instance.

    ``instance_ids`` lists the instances in row order; ``flagged`` marks
    rows of instances with zero associations, which are stored as zeros
    and excluded from queries. ``weights`` traces, per row, the
    (view_id, weight) pairs that produced it.
    """

    instance_ids: np.ndarray
    rows: np.ndarray                # (n, dim) float32
    flagged: np.ndarray             # (n,) bool
    weights: list = field(default_factory=list)  # per row: [(view_id, w), ...]

    @property
    def n_instances(self):
        return self.rows.shape[0]

    @property
    def dim(self):
        return self.rows.shape[1]

    def row_of(self, instance_id: int) -> int:
        hits = np.nonzero(self.instance_ids == instance_id)[0]
        if hits.size == 0:
            raise KeyError(instance_id)
        return int(hits[0])

    def violations(self):
        v = []
        if not np.isfinite(self.rows).all():
            v.append("rows must be finite")
        for r, trace in enumerate(self.weights):
            if self.flagged[r] or not trace:  # traces are not persisted
                continue
            total = sum(w for _, w in trace)
            if abs(total - 1.0) > 1e-6:
                v.append(f"weights for row {r} sum to {total}, not 1")
        return v


def fuse_mask_embeddings(local: MaskEmbeddingSet, context: MaskEmbeddingSet,
                         alpha: float = DEFAULT_ALPHA) -> MaskEmbeddingSet:
    """Row-wise alpha * context + (1 - alpha) * local, kind "fused".

    Computed in 32-bit so the alpha = 0 and alpha = 1 endpoints reproduce
    the inputs bit-exactly.
    """
    if local.view_id != context.view_id:
        raise ValueError("local and context sets come from different views")
    if local.rows.shape != context.rows.shape:
        raise ValueError("local and context shapes differ")
    a = np.float32(alpha)
    rows = a * context.rows + (np.float32(1.0) - a) * local.rows
    return MaskEmbeddingSet(view_id=local.view_id, kind="fused", rows=rows)


def attention_aggregate(features: np.ndarray,
                        temperature: float = DEFAULT_TEMPERATURE):
    """Similarity-weighted mean of the rows.

    Reference = plain mean of the rows; each row is scored by cosine
    similarity to the reference; weights = softmax(score / temperature);
    output = weighted sum. Returns (aggregate, weights).
    """
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[0] < 1:
        raise ValueError("need a non-empty NxD matrix")
    norms = np.linalg.norm(feats, axis=1)
    zero = np.nonzero(norms == 0)[0]
    if zero.size:
        raise ValueError(f"zero-norm row {int(zero[0])}")
    mean = feats.mean(axis=0)
    mean_norm = np.linalg.norm(mean)
    if mean_norm == 0:
        # Rows cancel exactly: no direction to compare against, fall back
        # to uniform weights.
        sims = np.zeros(feats.shape[0])
    else:
        sims = (feats @ mean) / (norms * mean_norm)
    scaled = sims / float(temperature)
    scaled -= scaled.max()
    w = np.exp(scaled)
    w /= w.sum()
    return feats.T @ w, w


def bind_instances(associations: AssociationTable, fused_sets: dict,
                   config: FusionConfig = FusionConfig()) -> SemanticTable:
    """Aggregate each instance's associated mask embeddings across views.

    ``fused_sets`` maps view_id -> MaskEmbeddingSet (kind fused; mask id
    r+1 is row r). Instances with no associations get a zero row and the
    flag; everything else gets the attention-weighted aggregate with its
    per-view weight trace.
    """
    bad = config.violations()
    if bad:
        raise ValueError("; ".join(bad))
    dims = {s.dim for s in fused_sets.values()}
    if len(dims) > 1:
        raise ValueError("embedding sets disagree on dimension")
    dim = dims.pop() if dims else 0
    ids = associations.instance_ids()
    rows = np.zeros((ids.size, dim), dtype=np.float32)
    flagged = np.zeros(ids.size, dtype=bool)
    weights = []
    for r, inst in enumerate(ids.tolist()):
        entries = sorted(associations.for_instance(inst),
                         key=lambda e: e.view_id)
        if not entries:
            flagged[r] = True
            weights.append([])
            continue
        gathered = []
        for e in entries:
            if e.view_id not in fused_sets:
                raise ValueError(f"no embeddings for view {e.view_id}")
            emb = fused_sets[e.view_id]
            if not 1 <= e.mask_id <= emb.n_masks:
                raise ValueError(f"view {e.view_id} has no mask {e.mask_id}")
            gathered.append(emb.rows[e.mask_id - 1])
        agg, w = attention_aggregate(np.array(gathered), config.temperature)
        rows[r] = agg.astype(np.float32)
        weights.append([(e.view_id, float(wi)) for e, wi in zip(entries, w)])
    return SemanticTable(instance_ids=ids, rows=rows, flagged=flagged,
                         weights=weights)


def uniform_bind_instances(associations: AssociationTable,
                           fused_sets: dict) -> SemanticTable:
    """Plain multi-view mean baseline (equivalent to temperature -> inf)."""
    cfg = FusionConfig(temperature=1e12)
    return bind_instances(associations, fused_sets, cfg)


def write_weight_trace(table: SemanticTable, path):
    with open(path, "w") as f:
        f.write("instance_id\tview_id\tweight\n")
        for r, inst in enumerate(table.instance_ids.tolist()):
            if table.flagged[r]:
                f.write(f"{inst}\t-1\t0\n")
                continue
            for vid, w in table.weights[r]:
                f.write(f"{inst}\t{vid}\t{w:.10g}\n")
