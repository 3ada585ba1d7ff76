import numpy as np
import pytest

from oigextract.masks import generate_masks, propose_regions, resolve_overlaps


def two_shape_image(size=64):
    img = np.full((size, size, 3), 0.2)
    img[10:25, 8:24] = [0.9, 0.1, 0.1]
    img[38:56, 34:56] = [0.1, 0.2, 0.9]
    return img


def test_blank_image_all_zero():
    labels = generate_masks(np.full((32, 32, 3), 0.5))
    assert (labels == 0).all()


def test_two_disjoint_objects_get_distinct_labels():
    labels = generate_masks(two_shape_image())
    # Each object interior is covered by a single nonzero label, and the
    # two objects get different labels. (Edge fringes may produce extra
    # small segments; the interiors are what matters.)
    red = np.unique(labels[12:23, 10:22])
    blue = np.unique(labels[40:54, 36:54])
    assert red.size == 1 and red[0] > 0
    assert blue.size == 1 and blue[0] > 0
    assert red[0] != blue[0]


def test_background_not_a_mask():
    labels = generate_masks(two_shape_image())
    assert labels[0, 0] == 0
    assert labels[-1, -1] == 0


def test_resolve_overlaps_larger_wins():
    big = np.zeros((8, 8), bool)
    big[0:6, 0:6] = True
    small = np.zeros((8, 8), bool)
    small[4:8, 4:8] = True
    labels = resolve_overlaps([small, big], (8, 8))
    # The big proposal claims the contested 2x2 corner.
    assert labels[5, 5] == 1
    assert labels[7, 7] == 2
    assert (labels[0:6, 0:6] == 1).all()


def test_resolve_overlaps_tie_lower_id_wins():
    a = np.zeros((4, 4), bool)
    a[:2, :] = True
    b = np.zeros((4, 4), bool)
    b[1:3, :] = True  # same area, overlaps row 1
    labels = resolve_overlaps([a, b], (4, 4))
    assert (labels[0] == 1).all()
    assert (labels[1] == 1).all()   # contested row goes to proposal 0
    assert (labels[2] == 2).all()


def test_resolve_overlaps_swallowed_proposal_dropped():
    big = np.ones((4, 4), bool)
    inner = np.zeros((4, 4), bool)
    inner[1:3, 1:3] = True
    labels = resolve_overlaps([big, inner], (4, 4))
    assert set(np.unique(labels).tolist()) == {1}


def test_resolve_overlaps_ids_contiguous():
    props = [np.zeros((6, 6), bool) for _ in range(3)]
    props[0][0, 0] = True
    props[1][2, 2:5] = True
    props[2][5, :] = True
    labels = resolve_overlaps(props, (6, 6))
    assert sorted(np.unique(labels).tolist()) == [0, 1, 2, 3]


def test_resolve_overlaps_shape_mismatch():
    with pytest.raises(ValueError, match="shape"):
        resolve_overlaps([np.ones((3, 3), bool)], (4, 4))


def test_unknown_mask_level_rejected():
    with pytest.raises(ValueError, match="mask level"):
        propose_regions(two_shape_image(), mask_level="atom")
