"""Pipeline driver: each stage is a subcommand sharing one run directory.

Stages read their upstream artifacts from the run directory, verify them
against the hashes recorded when they were produced, and append their
own records to ``manifest.tsv``. The manifest uses a per-run sequence
counter instead of wall-clock timestamps so identical runs produce
byte-identical manifests.

Configuration is plain ``key=value`` text (``--config``), overridable
per key on the command line; ``--seed`` and ``--out`` are common to all
stages. Errors are single-line ``error: ...`` messages with exit code 1.
"""

from __future__ import annotations

import argparse
import hashlib
import os
import sys

import numpy as np

from . import formats
from .association import (ALPHA_BINARIZE, IOU_FLOOR, associate,
                          read_associations, write_associations)
from .codebook import (DEFAULT_K1, DEFAULT_K2, DEFAULT_REASSIGN_EVERY,
                       build_codebook, refine_lp)
from .query import (QueryResult, classify_gaussians, eval_pointcloud,
                    eval_renders, select_and_render, write_pointcloud_report,
                    write_render_report)
from .semantics import (DEFAULT_ALPHA, DEFAULT_TEMPERATURE, FusionConfig,
                        bind_instances, fuse_mask_embeddings,
                        write_weight_trace)
from .synth import SynthConfig, generate, read_manifest, write_outputs
from .train import TrainConfig, train, write_trace

MANIFEST = "manifest.tsv"
MANIFEST_HEADER = "seq\tstage\tkind\tname\tvalue"


class CliError(Exception):
    pass


# ----------------------------------------------------------- run manifest

def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _manifest_rows(outdir):
    path = os.path.join(outdir, MANIFEST)
    if not os.path.exists(path):
        return []
    rows = []
    with open(path) as f:
        header = f.readline().rstrip("\n")
        if header != MANIFEST_HEADER:
            raise CliError(f"{path} is not a run manifest")
        for line in f:
            seq, stage, kind, name, value = line.rstrip("\n").split("\t")
            rows.append((int(seq), stage, kind, name, value))
    return rows


def _record_stage(outdir, stage, config, inputs, outputs):
    rows = _manifest_rows(outdir)
    seq = max((r[0] for r in rows), default=0) + 1
    path = os.path.join(outdir, MANIFEST)
    new = not os.path.exists(path)
    with open(path, "a") as f:
        if new:
            f.write(MANIFEST_HEADER + "\n")
        for key in sorted(config):
            f.write(f"{seq}\t{stage}\tconfig\t{key}\t{config[key]}\n")
        for name in inputs:
            f.write(f"{seq}\t{stage}\tinput\t{name}\t"
                    f"{_sha256(os.path.join(outdir, name))}\n")
        for name in outputs:
            f.write(f"{seq}\t{stage}\toutput\t{name}\t"
                    f"{_sha256(os.path.join(outdir, name))}\n")


def _recorded_output_hash(outdir, name):
    latest = None
    for seq, _stage, kind, n, value in _manifest_rows(outdir):
        if kind == "output" and n == name:
            if latest is None or seq > latest[0]:
                latest = (seq, value)
    return None if latest is None else latest[1]


def _require(outdir, name, noun, producer):
    """Check an upstream artifact exists and still matches its recorded hash."""
    path = os.path.join(outdir, name)
    if not os.path.exists(path):
        raise CliError(f"requires {noun} (run {producer})")
    recorded = _recorded_output_hash(outdir, name)
    if recorded is not None and _sha256(path) != recorded:
        raise CliError(f"stale {noun}: {name} changed since it was produced "
                       f"(re-run {producer})")
    return path


# -------------------------------------------------------------- artifacts

def _scene_and_codebook(outdir):
    """Latest feature scene and codebook: the refined pair when the
    refine stage has run, otherwise the originals."""
    if os.path.exists(os.path.join(outdir, "refined.oigs")):
        scene = formats.read_scene(
            _require(outdir, "refined.oigs", "refined features", "refine"))
        cb = formats.read_codebook(
            _require(outdir, "refined_codebook.oigk", "refined codebook",
                     "refine"))
        return scene, cb, ["refined.oigs", "refined_codebook.oigk"]
    cb = formats.read_codebook(
        _require(outdir, "codebook.oigk", "codebook", "build-codebook"))
    scene = formats.read_scene(
        _require(outdir, "features.oigs", "trained features", "train-features"))
    return scene, cb, ["codebook.oigk", "features.oigs"]


def _load_views(outdir):
    return formats.read_cameras(
        _require(outdir, "cameras.oigc", "cameras", "synth"))


def _load_rasters(outdir, views):
    rasters = {}
    for v in views:
        name = os.path.basename(formats.mask_raster_path(outdir, v.view_id))
        path = _require(outdir, name, f"mask raster for view {v.view_id}", "synth")
        rasters[v.view_id] = formats.read_mask_raster(path)
    return rasters


def _load_embedding_sets(outdir, views, prefix, producer):
    sets = {}
    for v in views:
        name = f"{prefix}_{v.view_id}.oige"
        sets[v.view_id] = formats.read_embeddings(
            _require(outdir, name, f"{prefix} embeddings for view {v.view_id}",
                     producer))
    return sets


def _write_gaussian_labels(labels, path):
    with open(path, "w") as f:
        f.write("gaussian\tlabel\n")
        for g, lab in enumerate(labels.tolist()):
            f.write(f"{g}\t{lab}\n")


def _read_gaussian_labels(path):
    with open(path) as f:
        if f.readline().rstrip("\n") != "gaussian\tlabel":
            raise CliError(f"{path} is not a gaussian label table")
        return np.array([int(line.split("\t")[1]) for line in f], dtype=np.int64)


# ----------------------------------------------------------------- stages

def stage_synth(outdir, seed, cfg):
    result = generate(SynthConfig(seed=seed, **cfg))
    write_outputs(result, outdir)
    outputs = ["scene.oigs", "cameras.oigc", "text.oige", "gt_manifest.tsv"]
    for v in sorted(result.rasters):
        outputs += [f"mask_{v}.pgm", f"local_{v}.oige", f"context_{v}.oige"]
    return [], outputs


def stage_train_features(outdir, seed, cfg):
    scene = formats.read_scene(_require(outdir, "scene.oigs", "scene", "synth"))
    views = _load_views(outdir)
    rasters = _load_rasters(outdir, views)
    trained, trace = train(scene, views, rasters, TrainConfig(seed=seed, **cfg))
    formats.write_scene(trained, os.path.join(outdir, "features.oigs"))
    write_trace(trace, os.path.join(outdir, "train_trace.tsv"))
    inputs = ["scene.oigs", "cameras.oigc"] + \
        [f"mask_{v.view_id}.pgm" for v in views]
    return inputs, ["features.oigs", "train_trace.tsv"]


def stage_build_codebook(outdir, seed, cfg):
    scene = formats.read_scene(
        _require(outdir, "features.oigs", "trained features", "train-features"))
    cb = build_codebook(scene, seed=seed, **cfg)
    formats.write_codebook(cb, os.path.join(outdir, "codebook.oigk"))
    return ["features.oigs"], ["codebook.oigk"]


def stage_refine(outdir, seed, cfg):
    scene = formats.read_scene(
        _require(outdir, "features.oigs", "trained features", "train-features"))
    cb = formats.read_codebook(
        _require(outdir, "codebook.oigk", "codebook", "build-codebook"))
    views = _load_views(outdir)
    rasters = _load_rasters(outdir, views)
    refined, cb2, trace = refine_lp(scene, cb, views, rasters, **cfg)
    formats.write_scene(refined, os.path.join(outdir, "refined.oigs"))
    formats.write_codebook(cb2, os.path.join(outdir, "refined_codebook.oigk"))
    with open(os.path.join(outdir, "refine_trace.tsv"), "w") as f:
        f.write("iter\tL_p\n")
        for it, val in enumerate(trace):
            f.write(f"{it}\t{val:.10g}\n")
    inputs = ["features.oigs", "codebook.oigk", "cameras.oigc"] + \
        [f"mask_{v.view_id}.pgm" for v in views]
    return inputs, ["refined.oigs", "refined_codebook.oigk", "refine_trace.tsv"]


def stage_associate(outdir, seed, cfg):
    scene, cb, consumed = _scene_and_codebook(outdir)
    views = _load_views(outdir)
    rasters = _load_rasters(outdir, views)
    table = associate(scene, cb, views, rasters, **cfg)
    write_associations(table, os.path.join(outdir, "associations.tsv"))
    inputs = consumed + ["cameras.oigc"] + \
        [f"mask_{v.view_id}.pgm" for v in views]
    return inputs, ["associations.tsv"]


def stage_fuse(outdir, seed, cfg):
    views = _load_views(outdir)
    locals_ = _load_embedding_sets(outdir, views, "local", "synth")
    contexts = _load_embedding_sets(outdir, views, "context", "synth")
    outputs = []
    for v in views:
        fused = fuse_mask_embeddings(locals_[v.view_id], contexts[v.view_id],
                                     alpha=cfg["alpha"])
        name = f"fused_{v.view_id}.oige"
        formats.write_embeddings(fused, os.path.join(outdir, name))
        outputs.append(name)
    inputs = ["cameras.oigc"] + [f"local_{v.view_id}.oige" for v in views] + \
        [f"context_{v.view_id}.oige" for v in views]
    return inputs, outputs


def stage_aggregate(outdir, seed, cfg):
    table = read_associations(
        _require(outdir, "associations.tsv", "associations", "associate"))
    views = _load_views(outdir)
    fused = _load_embedding_sets(outdir, views, "fused", "fuse")
    semantic = bind_instances(table, fused,
                              FusionConfig(temperature=cfg["temperature"]))
    formats.write_semantic_table(semantic, os.path.join(outdir, "semantic.oigf"))
    write_weight_trace(semantic, os.path.join(outdir, "attention_weights.tsv"))
    inputs = ["associations.tsv", "cameras.oigc"] + \
        [f"fused_{v.view_id}.oige" for v in views]
    return inputs, ["semantic.oigf", "attention_weights.tsv"]


def stage_query(outdir, seed, cfg):
    table = read_associations(
        _require(outdir, "associations.tsv", "associations", "associate"))
    semantic = formats.read_semantic_table(
        _require(outdir, "semantic.oigf", "semantic table", "aggregate"),
        instance_ids=table.instance_ids())
    _, cb, consumed = _scene_and_codebook(outdir)
    text = formats.read_embeddings(
        _require(outdir, "text.oige", "text embeddings", "synth"))
    result = classify_gaussians(semantic, cb, text)
    _write_gaussian_labels(result.gaussian_labels,
                           os.path.join(outdir, "gaussian_labels.tsv"))
    with open(os.path.join(outdir, "instance_labels.tsv"), "w") as f:
        f.write("instance_id\tlabel\tsimilarity\n")
        for r, inst in enumerate(result.instance_ids.tolist()):
            lab = int(result.instance_labels[r])
            sim = float(result.similarities[r].max()) if lab >= 0 else 0.0
            f.write(f"{inst}\t{lab}\t{sim:.10g}\n")
    return (["associations.tsv", "semantic.oigf", "text.oige"] + consumed,
            ["gaussian_labels.tsv", "instance_labels.tsv"])


def stage_eval_3d(outdir, seed, cfg):
    labels = _read_gaussian_labels(
        _require(outdir, "gaussian_labels.tsv", "query labels", "query"))
    scene = formats.read_scene(_require(outdir, "scene.oigs", "scene", "synth"))
    if scene.gt_labels is None:
        raise CliError("scene.oigs carries no ground-truth labels")
    stub = QueryResult(instance_ids=np.zeros(0, np.int64),
                       instance_labels=np.zeros(0, np.int64),
                       similarities=np.zeros((0, 0)), gaussian_labels=labels)
    report = eval_pointcloud(stub, scene.gt_labels)
    write_pointcloud_report(report, os.path.join(outdir, "report_3d.tsv"))
    print(f"mIoU {report.miou:.4f} mAcc {report.macc:.4f}")
    return ["gaussian_labels.tsv", "scene.oigs"], ["report_3d.tsv"]


def stage_eval_2d(outdir, seed, cfg):
    labels = _read_gaussian_labels(
        _require(outdir, "gaussian_labels.tsv", "query labels", "query"))
    scene, cb, consumed = _scene_and_codebook(outdir)
    views = _load_views(outdir)
    rasters = _load_rasters(outdir, views)
    _, entries = read_manifest(
        _require(outdir, "gt_manifest.tsv", "ground-truth manifest", "synth"))
    stub = QueryResult(instance_ids=np.zeros(0, np.int64),
                       instance_labels=np.zeros(0, np.int64),
                       similarities=np.zeros((0, 0)), gaussian_labels=labels)
    object_ids = sorted({e.object_id for e in entries})
    ious = []
    for label in object_ids:
        for view in views:
            raster = rasters[view.view_id]
            gt = np.zeros((view.height, view.width), bool)
            for e in entries:
                if e.view_id == view.view_id and e.object_id == label:
                    gt |= raster.binary_mask(e.mask_id)
            _, score = select_and_render(stub, label, scene, cb, view, gt,
                                         alpha_threshold=cfg["alpha_threshold"])
            ious.append((label, view.view_id, score))
    report = eval_renders(ious)
    write_render_report(report, os.path.join(outdir, "report_2d.tsv"))
    print(f"mIoU {report.miou:.4f} "
          f"mAcc@0.25 {report.macc[0.25]:.4f} mAcc@0.5 {report.macc[0.5]:.4f}")
    inputs = ["gaussian_labels.tsv", "cameras.oigc", "gt_manifest.tsv"] + \
        consumed + [f"mask_{v.view_id}.pgm" for v in views]
    return inputs, ["report_2d.tsv"]


# ------------------------------------------------------------ stage table

_SYNTH_DEF = SynthConfig()
_TRAIN_DEF = TrainConfig()

STAGES = {
    "synth": (stage_synth, {
        "n_objects": (int, _SYNTH_DEF.n_objects),
        "gaussians_per_object": (int, _SYNTH_DEF.gaussians_per_object),
        "n_views": (int, _SYNTH_DEF.n_views),
        "image_size": (int, _SYNTH_DEF.image_size),
        "embed_dim": (int, _SYNTH_DEF.embed_dim),
        "embed_noise_sigma": (float, _SYNTH_DEF.embed_noise_sigma),
        "corrupt_view_fraction": (float, _SYNTH_DEF.corrupt_view_fraction),
    }),
    "train-features": (stage_train_features, {
        "iterations": (int, _TRAIN_DEF.iterations),
        "learning_rate": (float, _TRAIN_DEF.learning_rate),
        "lambda_s": (float, _TRAIN_DEF.lambda_s),
        "lambda_c": (float, _TRAIN_DEF.lambda_c),
        "batch_views": (int, _TRAIN_DEF.batch_views),
        "init_sigma": (float, _TRAIN_DEF.init_sigma),
    }),
    "build-codebook": (stage_build_codebook, {
        "k1": (int, DEFAULT_K1),
        "k2": (int, DEFAULT_K2),
        "position_weight": (float, 1.0),
    }),
    "refine": (stage_refine, {
        "iterations": (int, 200),
        "learning_rate": (float, 0.05),
        "reassign_every": (int, DEFAULT_REASSIGN_EVERY),
    }),
    "associate": (stage_associate, {
        "alpha_threshold": (float, ALPHA_BINARIZE),
        "iou_floor": (float, IOU_FLOOR),
        "distance_domain": (str, "union"),
    }),
    "fuse": (stage_fuse, {
        "alpha": (float, DEFAULT_ALPHA),
    }),
    "aggregate": (stage_aggregate, {
        "temperature": (float, DEFAULT_TEMPERATURE),
    }),
    "query": (stage_query, {}),
    "eval-3d": (stage_eval_3d, {}),
    "eval-2d": (stage_eval_2d, {
        "alpha_threshold": (float, ALPHA_BINARIZE),
    }),
}

PIPELINE_ORDER = ["synth", "train-features", "build-codebook", "refine",
                  "associate", "fuse", "aggregate", "query", "eval-3d",
                  "eval-2d"]


def _read_config_file(path):
    values = {}
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise CliError(f"{path}:{lineno}: expected key=value")
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()
    return values


def _effective_config(stage, args, file_values):
    _, knobs = STAGES[stage]
    cfg = {}
    for key, (typ, default) in knobs.items():
        value = default
        if key in file_values:
            try:
                value = typ(file_values[key])
            except ValueError:
                raise CliError(f"config key {key}: cannot parse "
                               f"{file_values[key]!r} as {typ.__name__}")
        override = getattr(args, key.replace("-", "_"), None)
        if override is not None:
            value = override
        cfg[key] = value
    return cfg


def build_parser():
    parser = argparse.ArgumentParser(
        prog="oig", description="instance-feature lifting pipeline")
    sub = parser.add_subparsers(dest="stage", required=True)
    for stage in PIPELINE_ORDER:
        _, knobs = STAGES[stage]
        p = sub.add_parser(stage)
        p.add_argument("--out", required=True, help="run directory")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--config", help="key=value config file")
        for key, (typ, default) in knobs.items():
            p.add_argument(f"--{key}", type=typ, default=None,
                           help=f"default {default}")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    stage = args.stage
    try:
        file_values = _read_config_file(args.config) if args.config else {}
        cfg = _effective_config(stage, args, file_values)
        os.makedirs(args.out, exist_ok=True)
        func, _ = STAGES[stage]
        inputs, outputs = func(args.out, args.seed, cfg)
        _record_stage(args.out, stage, dict(cfg, seed=args.seed),
                      inputs, outputs)
    except (CliError, OSError, ValueError, FloatingPointError, KeyError) as e:
        msg = " ".join(str(e).split())
        print(f"error: {msg}", file=sys.stderr)
        return 1
    print(f"ok {stage}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
