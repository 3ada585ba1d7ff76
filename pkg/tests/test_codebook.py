import numpy as np
import pytest

from oig import formats
from oig.codebook import Codebook, build_codebook, kmeans, refine_lp
from oig.synth import SynthConfig, generate
from oig.train import TrainConfig, train


# -------------------------------------------------------------- kmeans

def test_two_separated_pairs():
    pts = np.array([[0.01, 0.0], [-0.01, 0.0], [10.01, 10.0], [9.99, 10.0]])
    centers, assign, trace = kmeans(pts, 2, seed=0)
    assert trace[-1] < 0.001
    assert assign[0] == assign[1] and assign[2] == assign[3]
    assert assign[0] != assign[2]
    got = sorted(centers.tolist())
    np.testing.assert_allclose(got[0], [0.0, 0.0], atol=1e-9)
    np.testing.assert_allclose(got[1], [10.0, 10.0], atol=1e-9)


def test_k_equals_n_zero_objective(rng):
    pts = rng.normal(size=(6, 3))
    centers, assign, trace = kmeans(pts, 6, seed=1)
    assert trace[-1] == pytest.approx(0.0, abs=1e-20)
    assert sorted(assign.tolist()) == list(range(6))


def test_objective_monotone_and_assignment_nearest(rng):
    for seed in range(5):
        pts = np.random.default_rng(seed).normal(size=(50, 4))
        centers, assign, trace = kmeans(pts, 5, seed=seed)
        assert all(b <= a + 1e-9 for a, b in zip(trace, trace[1:]))
        d2 = ((pts[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        np.testing.assert_array_equal(assign, np.argmin(d2, axis=1))


def test_separated_clusters_recovered_across_seeds():
    from sklearn.metrics import adjusted_rand_score
    rng = np.random.default_rng(0)
    truth = np.repeat([0, 1], 25)
    pts = np.vstack([rng.normal(0, 0.1, size=(25, 3)),
                     rng.normal(5, 0.1, size=(25, 3))])
    for seed in range(10):
        _, assign, _ = kmeans(pts, 2, seed=seed)
        assert adjusted_rand_score(truth, assign) == 1.0


def test_kmeans_rejects_nonfinite():
    pts = np.array([[0.0, np.inf]])
    with pytest.raises(ValueError, match="finite"):
        kmeans(pts, 1, seed=0)


def test_kmeans_deterministic(rng):
    pts = rng.normal(size=(30, 4))
    a = kmeans(pts, 4, seed=9)
    b = kmeans(pts, 4, seed=9)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])


# ------------------------------------------------------ build_codebook

def two_blob_scene(feature_mode="identical"):
    from oig.core import GaussianScene
    rng = np.random.default_rng(0)
    n = 20
    pos = np.vstack([rng.normal(0, 0.1, size=(n, 3)),
                     rng.normal(8, 0.1, size=(n, 3))])
    feats = np.tile(rng.normal(size=6), (2 * n, 1)) if feature_mode == "identical" \
        else rng.normal(size=(2 * n, 6))
    return GaussianScene(
        positions=pos, scales=np.full((2 * n, 3), 0.1),
        rotations=np.tile([1.0, 0, 0, 0], (2 * n, 1)),
        opacities=np.full(2 * n, 0.5), colors=np.full((2 * n, 3), 0.5),
        features=feats)


def test_distant_blobs_split_by_position():
    scene = two_blob_scene()
    cb = build_codebook(scene, k1=2, k2=1, position_weight=1.0, seed=0)
    first = cb.coarse_index[:20]
    second = cb.coarse_index[20:]
    assert len(set(first.tolist())) == 1
    assert len(set(second.tolist())) == 1
    assert first[0] != second[0]


def test_zero_position_weight_ignores_geometry():
    scene = two_blob_scene()
    cb = build_codebook(scene, k1=2, k2=1, position_weight=0.0, seed=0)
    # Identical features with no position term: the coarse stage cannot
    # separate the blobs, so at least one cell mixes both.
    mixed = len(set(cb.coarse_index.tolist())) == 1 or \
        len(set(cb.coarse_index[:20].tolist())) > 1 or \
        (cb.coarse_index[0] == cb.coarse_index[20])
    assert mixed


def test_codebook_instance_purity_on_synth():
    result = generate(SynthConfig(n_objects=6, gaussians_per_object=20,
                                  n_views=8, image_size=48, embed_dim=8,
                                  embed_noise_sigma=0.0, seed=0))
    trained, _ = train(result.scene, result.views, result.rasters,
                       TrainConfig(iterations=400, seed=0))
    cb = build_codebook(trained, k1=8, k2=4, seed=0)
    purities = []
    for inst in cb.occupied_instances():
        members = cb.members(inst)
        gt = trained.gt_labels[members]
        purities.append(np.bincount(gt).max() / gt.size)
    assert min(purities) >= 0.95


def test_instance_id_bijection():
    scene = two_blob_scene(feature_mode="random")
    cb = build_codebook(scene, k1=3, k2=2, seed=1)
    ids = cb.instance_ids
    np.testing.assert_array_equal(ids, cb.coarse_index * cb.k2 + cb.fine_index)
    for inst in cb.occupied_instances():
        coarse, fine = divmod(int(inst), cb.k2)
        members = cb.members(inst)
        assert (cb.coarse_index[members] == coarse).all()
        assert (cb.fine_index[members] == fine).all()


def test_small_cells_one_center_per_member():
    scene = two_blob_scene(feature_mode="random")
    cb = build_codebook(scene, k1=20, k2=8, seed=2)
    for cell in range(cb.k1):
        members = np.nonzero(cb.coarse_index == cell)[0]
        if 0 < members.size <= cb.k2:
            locals_ = cb.fine_index[members]
            assert sorted(locals_.tolist()) == list(range(members.size))
            np.testing.assert_allclose(
                cb.fine_centers[cell * cb.k2 + locals_],
                scene.features[members], atol=1e-6)


def test_build_codebook_deterministic():
    scene = two_blob_scene(feature_mode="random")
    a = build_codebook(scene, k1=4, k2=2, seed=5)
    b = build_codebook(scene, k1=4, k2=2, seed=5)
    np.testing.assert_array_equal(a.coarse_centers, b.coarse_centers)
    np.testing.assert_array_equal(a.fine_centers, b.fine_centers)
    np.testing.assert_array_equal(a.instance_ids, b.instance_ids)


# ----------------------------------------------------------- refine_lp

def refine_fixture():
    result = generate(SynthConfig(n_objects=2, gaussians_per_object=10,
                                  n_views=3, image_size=24, embed_dim=4,
                                  embed_noise_sigma=0.0, seed=7))
    trained, _ = train(result.scene, result.views, result.rasters,
                       TrainConfig(iterations=150, seed=7))
    cb = build_codebook(trained, k1=2, k2=2, seed=7)
    return result, trained, cb


def test_refine_zero_loss_when_features_equal_centers():
    result, trained, cb = refine_fixture()
    snapped = trained.with_features(cb.center_features())
    refined, _, trace = refine_lp(snapped, cb, result.views, result.rasters,
                                  iterations=3, reassign_every=0)
    assert trace[0] == pytest.approx(0.0, abs=1e-9)
    np.testing.assert_array_equal(refined.features, snapped.features)


def test_refine_reduces_loss():
    result, trained, cb = refine_fixture()
    refined, cb2, trace = refine_lp(trained, cb, result.views, result.rasters,
                                    iterations=200, learning_rate=0.01)
    assert trace[-1] < trace[0]


def test_refine_gradient_direction_single_offset():
    result, trained, cb = refine_fixture()
    feats = cb.center_features().astype(np.float64)
    feats[0, 0] += 0.5  # one gaussian offset from its center in one channel
    scene = trained.with_features(feats)
    refined, _, _ = refine_lp(scene, cb, result.views, result.rasters,
                              iterations=1, learning_rate=0.01, reassign_every=0)
    delta = refined.features.astype(np.float64) - feats
    # The offset coordinate must move toward the center (negative step).
    assert delta[0, 0] <= 0


def test_codebook_file_round_trip(tmp_path):
    scene = two_blob_scene(feature_mode="random")
    cb = build_codebook(scene, k1=3, k2=2, seed=3)
    path = tmp_path / "cb.oigk"
    formats.write_codebook(cb, path)
    back = formats.read_codebook(path)
    assert back.k1 == cb.k1 and back.k2 == cb.k2
    assert back.position_weight == pytest.approx(cb.position_weight)
    np.testing.assert_array_equal(back.coarse_centers, cb.coarse_centers)
    np.testing.assert_array_equal(back.fine_centers, cb.fine_centers)
    np.testing.assert_array_equal(back.coarse_index, cb.coarse_index)
    np.testing.assert_array_equal(back.fine_index, cb.fine_index)
