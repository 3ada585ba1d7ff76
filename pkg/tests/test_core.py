import numpy as np
import pytest

from oig.core import (Gaussian, GaussianScene, InstanceMaskRaster,
                      MaskEmbeddingSet, check_embeddings_against_raster,
                      validate_scene)

from conftest import make_scene, make_view


def single_gaussian_scene(quat=(1, 0, 0, 0), scale=(0.1, 0.1, 0.1), opacity=0.5):
    return GaussianScene(
        positions=[[0.0, 0.0, 0.0]],
        scales=[list(scale)],
        rotations=[list(quat)],
        opacities=[opacity],
        colors=[[0.5, 0.5, 0.5]],
    )


def test_valid_scene_has_no_violations():
    assert validate_scene(single_gaussian_scene()) == []


def test_zero_quaternion_reported():
    violations = validate_scene(single_gaussian_scene(quat=(0, 0, 0, 0)))
    assert len(violations) == 1
    assert "quaternion norm" in violations[0]
    assert "gaussian 0" in violations[0]


def test_negative_scale_reported():
    violations = validate_scene(single_gaussian_scene(scale=(1, -1, 1)))
    assert len(violations) == 1
    assert "scale positivity" in violations[0]


@pytest.mark.parametrize("opacity", [0.0, 1.0])
def test_boundary_opacity_reported(opacity):
    violations = validate_scene(single_gaussian_scene(opacity=opacity))
    assert any("opacity" in v for v in violations)


def test_validate_scene_is_pure():
    scene = make_scene(n=8, seed=3)
    assert validate_scene(scene) == validate_scene(scene)


def test_empty_scene_rejected():
    with pytest.raises(ValueError):
        GaussianScene(positions=np.zeros((0, 3)), scales=np.zeros((0, 3)),
                      rotations=np.zeros((0, 4)), opacities=np.zeros(0),
                      colors=np.zeros((0, 3)))


def test_mixed_optional_fields_rejected():
    g1 = Gaussian(np.zeros(3), np.ones(3) * 0.1, np.array([1, 0, 0, 0.0]),
                  0.5, np.zeros(3), instance_feature=np.zeros(6))
    g2 = Gaussian(np.ones(3), np.ones(3) * 0.1, np.array([1, 0, 0, 0.0]),
                  0.5, np.zeros(3))
    with pytest.raises(ValueError, match="mixed"):
        GaussianScene.from_gaussians([g1, g2])


def test_scene_arrays_immutable():
    scene = make_scene()
    with pytest.raises(ValueError):
        scene.positions[0, 0] = 5.0


def test_with_features_round_trip():
    scene = make_scene(n=4)
    feats = np.arange(24, dtype=np.float32).reshape(4, 6)
    scene2 = scene.with_features(feats)
    assert scene.features is None
    np.testing.assert_array_equal(scene2.features, feats)
    np.testing.assert_array_equal(scene2.positions, scene.positions)


def test_bbox_contains_all_positions():
    scene = make_scene(n=20, seed=9)
    assert (scene.positions >= scene.bbox_min).all()
    assert (scene.positions <= scene.bbox_max).all()


def test_camera_view_violations():
    view = make_view()
    assert view.violations() == []
    bad = np.eye(4)
    bad[0, 0] = 2.0
    view2 = make_view()
    object.__setattr__(view2, "world_to_camera", bad)
    assert any("orthonormal" in v for v in view2.violations())


def test_raster_rejects_oversized_labels():
    with pytest.raises(ValueError, match="65536"):
        InstanceMaskRaster(view_id=0, labels=np.full((2, 2), 70000))


def test_raster_mask_ids_exclude_background():
    raster = InstanceMaskRaster(view_id=0, labels=np.array([[0, 1], [1, 2]]))
    np.testing.assert_array_equal(raster.mask_ids(), [1, 2])
    assert raster.binary_mask(1).sum() == 2


def test_embedding_set_rejects_nan():
    rows = np.ones((2, 4), dtype=np.float32)
    rows[1, 2] = np.nan
    with pytest.raises(ValueError, match="finite"):
        MaskEmbeddingSet(view_id=0, kind="local", rows=rows)


def test_embedding_raster_cross_check():
    raster = InstanceMaskRaster(view_id=0, labels=np.array([[0, 1], [1, 2]]))
    good = MaskEmbeddingSet(view_id=0, kind="local", rows=np.ones((2, 4)))
    assert check_embeddings_against_raster(good, raster) == []
    short = MaskEmbeddingSet(view_id=0, kind="local", rows=np.ones((1, 4)))
    assert len(check_embeddings_against_raster(short, raster)) == 1
    text = MaskEmbeddingSet(view_id=0, kind="text", rows=np.ones((5, 4)))
    assert check_embeddings_against_raster(text, raster) == []
