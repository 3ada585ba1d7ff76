"""End-to-end checks: everything the extractor writes must load through
the lifting pipeline's readers and satisfy its cross-file invariants."""

import filecmp
import os

import numpy as np
import pytest
from PIL import Image

from oig import formats
from oig.core import check_embeddings_against_raster
from oigextract.backbone import TestBackbone
from oigextract.embed import extract_context
from oigextract.pipeline import ExtractorConfig, main, run


def paint_scene(rng, size=64):
    """Flat background with two solid colored rectangles."""
    img = np.full((size, size, 3), 60, dtype=np.uint8)
    for color in ([220, 40, 40], [40, 80, 220]):
        h = int(rng.integers(12, 20))
        w = int(rng.integers(12, 20))
        y = int(rng.integers(4, size - h - 4))
        x = int(rng.integers(4, size - w - 4))
        img[y:y + h, x:x + w] = color
    return img


def make_image_dir(path, n_views=3, seed=0):
    os.makedirs(path)
    rng = np.random.default_rng(seed)
    for v in range(n_views):
        Image.fromarray(paint_scene(rng)).save(
            os.path.join(path, f"view_{v}.png"))


@pytest.fixture(scope="module")
def extracted(tmp_path_factory):
    root = tmp_path_factory.mktemp("extract")
    images = os.path.join(root, "images")
    out = os.path.join(root, "out")
    make_image_dir(images)
    views = run(ExtractorConfig(image_dir=images, out_dir=out,
                                labels=["red box", "blue box"]))
    return out, views


def test_views_indexed_in_sorted_order(extracted):
    out, views = extracted
    assert [v for v, _ in views] == [0, 1, 2]
    assert [n for _, n in views] == ["view_0.png", "view_1.png", "view_2.png"]
    lines = open(os.path.join(out, "views.tsv")).read().splitlines()
    assert lines[0] == "view_id\timage"
    assert len(lines) == 4


def test_outputs_load_through_consumer_and_cross_check(extracted):
    out, views = extracted
    for view_id, _ in views:
        raster = formats.read_mask_raster(
            os.path.join(out, f"mask_{view_id}.pgm"))
        assert raster.view_id == view_id
        assert raster.mask_ids().size >= 1
        for kind in ("local", "context"):
            emb = formats.read_embeddings(
                os.path.join(out, f"{kind}_{view_id}.oige"))
            assert emb.kind == kind
            assert emb.view_id == view_id
            assert check_embeddings_against_raster(emb, raster) == []


def test_rows_unit_norm(extracted):
    out, views = extracted
    paths = [f"{kind}_{v}.oige" for v, _ in views
             for kind in ("local", "context")] + ["text.oige"]
    for name in paths:
        emb = formats.read_embeddings(os.path.join(out, name))
        assert np.allclose(np.linalg.norm(emb.rows, axis=1), 1.0, atol=1e-5)


def test_text_embeddings_match_query_labels(extracted):
    out, _ = extracted
    emb = formats.read_embeddings(os.path.join(out, "text.oige"))
    assert emb.kind == "text"
    assert emb.rows.shape[0] == 2


def test_all_ones_mask_context_equals_global_embedding():
    backbone = TestBackbone(dim=16, seed=0)
    img = np.asarray(paint_scene(np.random.default_rng(11)))
    labels = np.ones(img.shape[:2], dtype=np.int64)
    rows, kept = extract_context(img, labels, backbone)
    assert kept == [1]
    assert np.allclose(rows[0], backbone.global_embedding(img), atol=1e-4)


def test_pipeline_deterministic(tmp_path):
    images = os.path.join(tmp_path, "images")
    make_image_dir(images, seed=2)
    outs = []
    for run_dir in ("a", "b"):
        out = os.path.join(tmp_path, run_dir)
        run(ExtractorConfig(image_dir=images, out_dir=out, labels=["box"]))
        outs.append(out)
    names = sorted(os.listdir(outs[0]))
    assert names == sorted(os.listdir(outs[1]))
    match, mismatch, errors = filecmp.cmpfiles(outs[0], outs[1], names,
                                               shallow=False)
    assert mismatch == [] and errors == []
    assert len(match) == len(names)


def test_cli_happy_path(tmp_path, capsys):
    images = os.path.join(tmp_path, "images")
    make_image_dir(images, n_views=2, seed=3)
    out = os.path.join(tmp_path, "out")
    code = main(["--images", images, "--out", out, "--labels", "red,blue"])
    assert code == 0
    assert capsys.readouterr().out.strip() == "ok 2 views"
    assert os.path.exists(os.path.join(out, "text.oige"))


def test_cli_missing_image_dir_single_line_error(tmp_path, capsys):
    code = main(["--images", os.path.join(tmp_path, "nope"),
                 "--out", os.path.join(tmp_path, "out")])
    assert code == 1
    err = capsys.readouterr().err
    assert err.startswith("error: ")
    assert err.count("\n") == 1


def test_empty_image_dir_rejected(tmp_path, capsys):
    images = os.path.join(tmp_path, "images")
    os.makedirs(images)
    code = main(["--images", images, "--out", os.path.join(tmp_path, "out")])
    assert code == 1
    assert "no images" in capsys.readouterr().err
