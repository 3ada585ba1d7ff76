"""Readers/writers for every interchange file in the pipeline.

Binary formats are little-endian; PGM pixels are MSB-first per the PGM
convention for maxval > 255. Readers never return partially constructed
values: malformed input raises FormatError.
"""

from __future__ import annotations

import struct

import numpy as np

from .core import (KIND_CODES, KIND_NAMES, CameraView, GaussianScene,
                   InstanceMaskRaster, MaskEmbeddingSet, validate_scene)

MAGIC_SCENE = b"OIGS"
MAGIC_EMBED = b"OIGE"
MAGIC_CODEBOOK = b"OIGK"
MAGIC_SEMANTIC = b"OIGF"
VERSION = 1

FLAG_FEATURES = 1 << 0
FLAG_GT_LABELS = 1 << 1


class FormatError(ValueError):
    """Malformed or truncated interchange file."""


def _read_exact(f, n, what):
    buf = f.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated file: expected {n} bytes for {what}, got {len(buf)}")
    return buf


def _check_header(f, magic, path):
    got = f.read(4)
    if got != magic:
        raise FormatError(f"{path}: bad magic {got!r}, expected {magic!r}")
    (version,) = struct.unpack("<I", _read_exact(f, 4, "version"))
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")


# ---------------------------------------------------------------- scene

def _scene_dtype(flags):
    fields = [("pos", "<f4", 3), ("scale", "<f4", 3), ("quat", "<f4", 4),
              ("opacity", "<f4"), ("rgb", "<f4", 3)]
    if flags & FLAG_FEATURES:
        fields.append(("feature", "<f4", 6))
    if flags & FLAG_GT_LABELS:
        fields.append(("gt_label", "<u4"))
    return np.dtype(fields)


def write_scene(scene: GaussianScene, path):
    violations = validate_scene(scene)
    if violations:
        raise ValueError("refusing to write invalid scene: " + "; ".join(violations))
    flags = 0
    if scene.features is not None:
        flags |= FLAG_FEATURES
    if scene.gt_labels is not None:
        flags |= FLAG_GT_LABELS
    rec = np.zeros(len(scene), dtype=_scene_dtype(flags))
    rec["pos"] = scene.positions
    rec["scale"] = scene.scales
    rec["quat"] = scene.rotations
    rec["opacity"] = scene.opacities
    rec["rgb"] = scene.colors
    if flags & FLAG_FEATURES:
        rec["feature"] = scene.features
    if flags & FLAG_GT_LABELS:
        rec["gt_label"] = scene.gt_labels.astype(np.uint32)
    with open(path, "wb") as f:
        f.write(MAGIC_SCENE)
        f.write(struct.pack("<IQI", VERSION, len(scene), flags))
        f.write(rec.tobytes())


def read_scene(path) -> GaussianScene:
    with open(path, "rb") as f:
        _check_header(f, MAGIC_SCENE, path)
        count, flags = struct.unpack("<QI", _read_exact(f, 12, "count/flags"))
        if count == 0:
            raise FormatError(f"{path}: empty scene")
        dtype = _scene_dtype(flags)
        raw = f.read(count * dtype.itemsize)
        if len(raw) != count * dtype.itemsize:
            got = len(raw) // dtype.itemsize
            raise FormatError(f"{path}: truncated payload, declared {count} records, found {got}")
        if f.read(1):
            raise FormatError(f"{path}: trailing bytes after {count} records")
    rec = np.frombuffer(raw, dtype=dtype)
    scene = GaussianScene(
        rec["pos"], rec["scale"], rec["quat"], rec["opacity"], rec["rgb"],
        features=rec["feature"] if flags & FLAG_FEATURES else None,
        gt_labels=rec["gt_label"].astype(np.int64) if flags & FLAG_GT_LABELS else None,
    )
    violations = validate_scene(scene)
    if violations:
        raise FormatError(f"{path}: invariant violation on read: {violations[0]}")
    return scene


# -------------------------------------------------------------- cameras

def write_cameras(views, path):
    with open(path, "w") as f:
        for v in views:
            m = " ".join(f"{x:.17g}" for x in v.world_to_camera.reshape(16))
            f.write(f"{v.view_id} {v.width} {v.height} "
                    f"{v.fx:.17g} {v.fy:.17g} {v.cx:.17g} {v.cy:.17g} {m}\n")


def read_cameras(path):
    views = []
    seen = set()
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 23:
                raise FormatError(f"{path}:{lineno}: expected 23 fields, got {len(parts)}")
            try:
                view_id, width, height = int(parts[0]), int(parts[1]), int(parts[2])
                vals = [float(x) for x in parts[3:]]
            except ValueError as e:
                raise FormatError(f"{path}:{lineno}: {e}") from None
            if view_id in seen:
                raise FormatError(f"{path}:{lineno}: duplicate view_id {view_id}")
            seen.add(view_id)
            view = CameraView(view_id, width, height, *vals[:4],
                              world_to_camera=np.array(vals[4:]).reshape(4, 4))
            bad = view.violations()
            if bad:
                raise FormatError(f"{path}:{lineno}: {bad[0]}")
            views.append(view)
    return views


# --------------------------------------------------------- mask rasters

def write_mask_raster(raster: InstanceMaskRaster, path):
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n65535\n" % (raster.width, raster.height))
        f.write(raster.labels.astype(">u2").tobytes())


def read_mask_raster(path, view_id=None) -> InstanceMaskRaster:
    with open(path, "rb") as f:
        data = f.read()
    # PGM header: magic, whitespace-separated width height maxval, one
    # whitespace byte, then raw pixels. Comments are not emitted by us
    # but tolerated on read.
    if not data.startswith(b"P5"):
        raise FormatError(f"{path}: not a binary PGM (P5)")
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: malformed PGM header")
        fields.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    try:
        width, height, maxval = (int(x) for x in fields)
    except ValueError:
        raise FormatError(f"{path}: non-numeric PGM header fields") from None
    if maxval != 65535:
        raise FormatError(f"{path}: maxval {maxval} != 65535 (16-bit PGM required)")
    expected = width * height * 2
    pixels = data[pos:pos + expected]
    if len(pixels) != expected:
        raise FormatError(f"{path}: truncated pixel data ({len(pixels)} of {expected} bytes)")
    labels = np.frombuffer(pixels, dtype=">u2").reshape(height, width)
    if view_id is None:
        view_id = _view_id_from_name(path)
    return InstanceMaskRaster(view_id=view_id, labels=labels.astype(np.int64))


def _view_id_from_name(path):
    import os
    import re
    m = re.match(r"mask_(\d+)\.pgm$", os.path.basename(str(path)))
    return int(m.group(1)) if m else -1


def mask_raster_path(directory, view_id):
    import os
    return os.path.join(str(directory), f"mask_{view_id}.pgm")


# ----------------------------------------------------------- embeddings

def write_embeddings(emb: MaskEmbeddingSet, path):
    with open(path, "wb") as f:
        f.write(MAGIC_EMBED)
        f.write(struct.pack("<IIIIB", VERSION, emb.view_id, emb.n_masks,
                            emb.dim, KIND_CODES[emb.kind]))
        f.write(np.ascontiguousarray(emb.rows, dtype="<f4").tobytes())


def read_embeddings(path) -> MaskEmbeddingSet:
    with open(path, "rb") as f:
        _check_header(f, MAGIC_EMBED, path)
        view_id, n_masks, dim, kind_code = struct.unpack(
            "<IIIB", _read_exact(f, 13, "embedding header"))
        if kind_code not in KIND_NAMES:
            raise FormatError(f"{path}: unknown kind byte {kind_code}")
        raw = _read_exact(f, n_masks * dim * 4, "embedding rows")
        if f.read(1):
            raise FormatError(f"{path}: trailing bytes")
    rows = np.frombuffer(raw, dtype="<f4").reshape(n_masks, dim)
    bad = np.argwhere(~np.isfinite(rows))
    if bad.size:
        r, c = bad[0]
        raise FormatError(f"{path}: non-finite entry at row {r}, col {c}")
    return MaskEmbeddingSet(view_id=view_id, kind=KIND_NAMES[kind_code], rows=rows)


# ------------------------------------------------------------- codebook

def write_codebook(codebook, path):
    coarse = np.ascontiguousarray(codebook.coarse_centers, dtype="<f4")
    fine = np.ascontiguousarray(codebook.fine_centers, dtype="<f4")
    n = codebook.coarse_index.shape[0]
    with open(path, "wb") as f:
        f.write(MAGIC_CODEBOOK)
        f.write(struct.pack("<IIIf", VERSION, codebook.k1, codebook.k2,
                            codebook.position_weight))
        f.write(coarse.tobytes())
        f.write(fine.tobytes())
        f.write(struct.pack("<Q", n))
        idx = np.empty((n, 2), dtype="<u2")
        idx[:, 0] = codebook.coarse_index
        idx[:, 1] = codebook.fine_index
        f.write(idx.tobytes())


def read_codebook(path):
    from .codebook import Codebook
    with open(path, "rb") as f:
        _check_header(f, MAGIC_CODEBOOK, path)
        k1, k2, position_weight = struct.unpack("<IIf", _read_exact(f, 12, "codebook header"))
        coarse = np.frombuffer(_read_exact(f, k1 * 9 * 4, "coarse centers"),
                               dtype="<f4").reshape(k1, 9)
        fine = np.frombuffer(_read_exact(f, k1 * k2 * 6 * 4, "fine centers"),
                             dtype="<f4").reshape(k1 * k2, 6)
        (n,) = struct.unpack("<Q", _read_exact(f, 8, "gaussian count"))
        idx = np.frombuffer(_read_exact(f, n * 4, "indices"), dtype="<u2").reshape(n, 2)
        if f.read(1):
            raise FormatError(f"{path}: trailing bytes")
    cb = Codebook(k1=k1, k2=k2, position_weight=position_weight,
                  coarse_centers=coarse.astype(np.float32),
                  fine_centers=fine.astype(np.float32),
                  coarse_index=idx[:, 0].astype(np.int64),
                  fine_index=idx[:, 1].astype(np.int64))
    bad = cb.violations()
    if bad:
        raise FormatError(f"{path}: {bad[0]}")
    return cb


# ------------------------------------------------------- semantic table

def write_semantic_table(table, path):
    # Rows follow the codebook's occupied-instance order; flagged (zero
    # association) instances are the all-zero rows.
    with open(path, "wb") as f:
        f.write(MAGIC_SEMANTIC)
        f.write(struct.pack("<III", VERSION, table.rows.shape[0], table.rows.shape[1]))
        f.write(np.ascontiguousarray(table.rows, dtype="<f4").tobytes())


def read_semantic_table(path, instance_ids=None):
    from .semantics import SemanticTable
    with open(path, "rb") as f:
        _check_header(f, MAGIC_SEMANTIC, path)
        n, dim = struct.unpack("<II", _read_exact(f, 8, "semantic header"))
        rows = np.frombuffer(_read_exact(f, n * dim * 4, "semantic rows"),
                             dtype="<f4").reshape(n, dim)
        if f.read(1):
            raise FormatError(f"{path}: trailing bytes")
    if not np.isfinite(rows).all():
        raise FormatError(f"{path}: non-finite semantic rows")
    rows = rows.astype(np.float32)
    if instance_ids is None:
        instance_ids = np.arange(n, dtype=np.int64)
    flagged = ~rows.any(axis=1)
    return SemanticTable(instance_ids=np.asarray(instance_ids, dtype=np.int64),
                         rows=rows, flagged=flagged,
                         weights=[[] for _ in range(n)])
