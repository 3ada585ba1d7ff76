import numpy as np
import pytest

from oig import train as tr
from oig.core import InstanceMaskRaster
from oig.rasterizer import FeatureMap, render
from oig.synth import SynthConfig, generate
from oig.train import (TrainConfig, MaskStats, grad_features, loss_contrast,
                       loss_smooth, train)


def fmap_from(data):
    data = np.asarray(data, dtype=np.float64)
    return FeatureMap(width=data.shape[1], height=data.shape[0],
                      channels=data.shape[2], data=data,
                      alpha=np.ones(data.shape[:2]))


# ------------------------------------------------------------- oracles

def brute_loss_smooth(data, labels, min_pixels):
    """Naive double loop over masks and pixels."""
    total = 0.0
    for mid in np.unique(labels):
        if mid == 0:
            continue
        ys, xs = np.nonzero(labels == mid)
        if ys.size < min_pixels:
            continue
        mean = np.zeros(data.shape[2])
        for y, x in zip(ys, xs):
            mean += data[y, x]
        mean /= ys.size
        for y, x in zip(ys, xs):
            total += float(((data[y, x] - mean) ** 2).sum())
    return total


def brute_loss_contrast(means):
    m = means.shape[0]
    if m < 2:
        return 0.0
    total = 0.0
    for i in range(m):
        for j in range(m):
            if i == j:
                continue
            d2 = max(float(((means[i] - means[j]) ** 2).sum()), 1e-8)
            total += 1.0 / d2
    return total / (m * (m + 1))


# --------------------------------------------------------- loss_smooth

def test_constant_map_zero_smooth_loss():
    data = np.ones((4, 4, 6)) * 3.0
    labels = np.array([[1] * 4] * 2 + [[2] * 4] * 2)
    ls, stats = loss_smooth(fmap_from(data), InstanceMaskRaster(0, labels))
    assert ls == 0.0
    assert stats.mask_ids.tolist() == [1, 2]


def test_two_pixel_mask_direct_value():
    data = np.zeros((1, 2, 6))
    data[0, 1, 0] = 2.0
    labels = np.array([[1, 1]])
    ls, stats = loss_smooth(fmap_from(data), InstanceMaskRaster(0, labels),
                            min_pixels=1)
    assert ls == pytest.approx(2.0)
    np.testing.assert_allclose(stats.means[0], [1, 0, 0, 0, 0, 0])


def test_small_masks_skipped_by_default():
    data = np.zeros((2, 2, 6))
    labels = np.array([[1, 1], [1, 2]])
    ls, stats = loss_smooth(fmap_from(data), InstanceMaskRaster(0, labels))
    assert stats.mask_ids.size == 0
    assert stats.skipped_small == [1, 2]


def test_no_masks_raises():
    data = np.zeros((2, 2, 6))
    with pytest.raises(ValueError, match="no masks"):
        loss_smooth(fmap_from(data), InstanceMaskRaster(0, np.zeros((2, 2), int)))


def test_loss_smooth_matches_brute_force(rng):
    for _ in range(10):
        data = rng.normal(size=(8, 8, 6))
        labels = rng.integers(0, 4, size=(8, 8))
        raster = InstanceMaskRaster(0, labels)
        if raster.mask_ids().size == 0:
            continue
        ls, _ = loss_smooth(fmap_from(data), raster)
        assert ls == pytest.approx(brute_loss_smooth(data, labels, 4), abs=1e-9)


# ------------------------------------------------------- loss_contrast

def stats_with_means(means):
    means = np.asarray(means, dtype=np.float64)
    m = means.shape[0]
    return MaskStats(mask_ids=np.arange(1, m + 1), counts=np.full(m, 10),
                     means=means, skipped_small=[])


def test_contrast_two_masks_unit_distance():
    lc, degenerate = loss_contrast(stats_with_means([[0] * 6, [1, 0, 0, 0, 0, 0]]))
    assert lc == pytest.approx(1.0 / 3.0)
    assert not degenerate


def test_contrast_two_masks_sqrt2_distance():
    lc, _ = loss_contrast(stats_with_means([[0] * 6, [1, 1, 0, 0, 0, 0]]))
    assert lc == pytest.approx(1.0 / 6.0)


def test_contrast_degenerate_single_mask():
    lc, degenerate = loss_contrast(stats_with_means([[1] * 6]))
    assert lc == 0.0 and degenerate


def test_contrast_matches_brute_force(rng):
    for _ in range(10):
        means = rng.normal(size=(5, 6))
        lc, _ = loss_contrast(stats_with_means(means))
        assert lc == pytest.approx(brute_loss_contrast(means), abs=1e-12)


# ----------------------------------------------------------- gradients

def synth_fixture(**kw):
    cfg = dict(n_objects=2, gaussians_per_object=3, n_views=2, image_size=8,
               embed_dim=4, embed_noise_sigma=0.0, seed=5)
    cfg.update(kw)
    return generate(SynthConfig(**cfg))


def loss_by_rendering(scene, views, rasters, config):
    """Forward-only loss via full rendering, for finite differences."""
    total = 0.0
    for view in views:
        fmap, _ = render(scene, view, scene.features.astype(np.float64))
        ls, stats = loss_smooth(fmap, rasters[view.view_id])
        lc, _ = loss_contrast(stats)
        total += config.lambda_s * ls + config.lambda_c * lc
    return total


def test_gradient_matches_central_differences(rng):
    result = synth_fixture(gaussians_per_object=3, image_size=8)
    scene = result.scene.with_features(rng.normal(scale=0.3, size=(len(result.scene), 6)))
    config = TrainConfig(lambda_s=1.0, lambda_c=1.0)
    loss, grad = grad_features(scene, result.views, result.rasters, config)
    assert loss == pytest.approx(
        loss_by_rendering(scene, result.views, result.rasters, config), rel=1e-9)
    eps = 1e-3
    fd = np.zeros_like(grad)
    feats = scene.features.astype(np.float64)
    for i in range(feats.shape[0]):
        for c in range(6):
            up = feats.copy()
            up[i, c] += eps
            down = feats.copy()
            down[i, c] -= eps
            fd[i, c] = (loss_by_rendering(scene.with_features(up), result.views,
                                          result.rasters, config)
                        - loss_by_rendering(scene.with_features(down), result.views,
                                            result.rasters, config)) / (2 * eps)
    scale = max(np.abs(fd).max(), 1e-12)
    assert np.abs(grad - fd).max() / scale < 1e-4


def test_gradient_linearity_in_residual(rng):
    result = synth_fixture()
    f1 = rng.normal(scale=0.2, size=(len(result.scene), 6))
    config = TrainConfig(lambda_s=1.0, lambda_c=0.0)
    # L_s is quadratic: grad at f is linear in f, so grad(a)+grad(b) = grad(a+b)+grad(0).
    _, ga = grad_features(result.scene.with_features(f1), result.views,
                          result.rasters, config)
    _, gb = grad_features(result.scene.with_features(2 * f1), result.views,
                          result.rasters, config)
    np.testing.assert_allclose(gb, 2 * ga, atol=1e-9)


def test_unrendered_gaussians_get_zero_gradient(rng):
    result = synth_fixture()
    scene = result.scene.with_features(rng.normal(size=(len(result.scene), 6)))
    config = TrainConfig()
    _, grad = grad_features(scene, result.views, result.rasters, config)
    from oig.rasterizer import view_weight_matrix
    touched = np.zeros(len(scene), dtype=bool)
    for view in result.views:
        w = view_weight_matrix(scene, view)
        touched |= np.asarray(w.sum(axis=0)).ravel() > 0
    assert (grad[~touched] == 0).all()


# -------------------------------------------------------------- train

def test_zero_learning_rate_keeps_initialization():
    result = synth_fixture()
    cfg = TrainConfig(iterations=5, learning_rate=0.0, seed=9)
    trained, _ = train(result.scene, result.views, result.rasters, cfg)
    rng = np.random.default_rng((9, 77))
    init = rng.normal(scale=cfg.init_sigma, size=(len(result.scene), 6))
    np.testing.assert_array_equal(trained.features,
                                  init.astype(np.float32))


def test_train_determinism():
    result = synth_fixture()
    cfg = TrainConfig(iterations=20, seed=4)
    s1, t1 = train(result.scene, result.views, result.rasters, cfg)
    s2, t2 = train(result.scene, result.views, result.rasters, cfg)
    np.testing.assert_array_equal(s1.features, s2.features)
    assert t1 == t2


def test_training_separates_objects():
    result = generate(SynthConfig(n_objects=2, gaussians_per_object=12,
                                  n_views=4, image_size=32, embed_dim=4,
                                  embed_noise_sigma=0.0, seed=2))
    cfg = TrainConfig(iterations=300, learning_rate=0.05, seed=1)
    trained, trace = train(result.scene, result.views, result.rasters, cfg)
    f = trained.features.astype(np.float64)
    f /= np.linalg.norm(f, axis=1, keepdims=True)
    gt = trained.gt_labels
    intra, inter = [], []
    for o in range(2):
        rows = f[gt == o]
        mean = rows.mean(axis=0)
        mean /= np.linalg.norm(mean)
        intra.append((rows @ mean).mean())
    m0 = f[gt == 0].mean(axis=0)
    m1 = f[gt == 1].mean(axis=0)
    inter = m0 @ m1 / (np.linalg.norm(m0) * np.linalg.norm(m1))
    assert min(intra) >= 0.99
    assert inter <= 0.5


def test_loss_trace_written(tmp_path):
    result = synth_fixture()
    cfg = TrainConfig(iterations=10, seed=3)
    _, trace = train(result.scene, result.views, result.rasters, cfg)
    path = tmp_path / "trace.tsv"
    tr.write_trace(trace, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "iter\tL_s\tL_c\ttotal"
    assert len(lines) == 11
