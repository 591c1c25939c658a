import numpy as np
import pytest

from errmap.data.boundary import enhance_boundary, sobel3d
from errmap.data.volumes import one_hot


def cube_labels(size=8, lo=2, hi=6):
    labels = np.zeros((size, size, size), dtype=np.uint8)
    labels[lo:hi, lo:hi, lo:hi] = 1
    return labels


def reference_sobel(mask_onehot):
    """Voxel-by-voxel Sobel magnitude with replicated borders, max over channels."""
    derivative = (-1.0, 0.0, 1.0)
    smoothing = (1.0, 2.0, 1.0)
    offsets = [(dz, dy, dx) for dz in (-1, 0, 1) for dy in (-1, 0, 1) for dx in (-1, 0, 1)]
    _, depth, height, width = mask_onehot.shape
    out = np.zeros((depth, height, width))
    for channel in mask_onehot.astype(np.float64):
        padded = np.pad(channel, 1, mode="edge")
        for z in range(depth):
            for y in range(height):
                for x in range(width):
                    squared = 0.0
                    for axis in range(3):
                        total = 0.0
                        for offset in offsets:
                            weight = 1.0
                            for a, o in enumerate(offset):
                                weight *= derivative[o + 1] if a == axis else smoothing[o + 1]
                            total += weight * padded[z + 1 + offset[0], y + 1 + offset[1], x + 1 + offset[2]]
                        squared += total * total
                    out[z, y, x] = max(out[z, y, x], np.sqrt(squared))
    return out


@pytest.mark.unit
class TestSobel3d:
    def test_uniform_mask_has_no_boundary(self):
        assert np.all(sobel3d(one_hot(np.zeros((6, 6, 6), dtype=np.uint8), 2)) == 0)

    def test_response_concentrates_on_class_boundary(self):
        s = sobel3d(one_hot(cube_labels(), 2))
        assert s[4, 4, 4] == 0
        assert s[0, 0, 0] == 0
        assert s[2, 4, 4] > 0
        assert s[1, 4, 4] > 0

    def test_single_voxel_center_is_zero_neighbours_positive(self):
        labels = np.zeros((5, 5, 5), dtype=np.uint8)
        labels[2, 2, 2] = 1
        s = sobel3d(one_hot(labels, 2))
        assert s[2, 2, 2] == 0
        neighbours = s[1:4, 1:4, 1:4].copy()
        neighbours[1, 1, 1] = 1.0
        assert np.all(neighbours > 0)

    def test_face_gradient_value(self):
        # a half-space step along the first axis: full smoothing weight 16
        labels = np.zeros((6, 6, 6), dtype=np.uint8)
        labels[3:] = 1
        s = sobel3d(one_hot(labels, 2))
        assert s[2, 3, 3] == pytest.approx(16.0)
        assert s[3, 3, 3] == pytest.approx(16.0)

    @pytest.mark.parametrize("seed", range(8))
    def test_matches_voxelwise_reference(self, seed):
        rng = np.random.default_rng(seed)
        dims = tuple(int(n) for n in rng.integers(3, 7, size=3))
        num_classes = int(rng.integers(2, 5))
        labels = rng.integers(0, num_classes, size=dims)
        onehot = one_hot(labels, num_classes)
        np.testing.assert_allclose(sobel3d(onehot), reference_sobel(onehot), atol=1e-9)

    def test_channel_permutation_invariance(self, rng):
        onehot = one_hot(rng.integers(0, 4, size=(6, 5, 7)), 4)
        base = sobel3d(onehot)
        for _ in range(5):
            assert np.array_equal(sobel3d(onehot[rng.permutation(4)]), base)

    def test_rejects_non_one_hot(self):
        bad = np.zeros((2, 4, 4, 4))
        with pytest.raises(ValueError):
            sobel3d(bad)
        with pytest.raises(ValueError):
            sobel3d(np.zeros((4, 4, 4)))


@pytest.mark.unit
class TestEnhanceBoundary:
    def test_positive_values_in_upper_half(self, rng):
        s = np.where(rng.random((6, 6, 6)) < 0.3, rng.random((6, 6, 6)) * 10, 0.0)
        b = enhance_boundary(s).values
        positive = s > 0
        assert np.all(b[~positive] == 0)
        assert np.all((b[positive] > 0.5) & (b[positive] <= 1.0))
        assert b.max() == pytest.approx(1.0)

    def test_all_zero_gives_all_zero(self):
        target = enhance_boundary(np.zeros((3, 3, 3)), source_mask_id="case_000/0")
        assert np.all(target.values == 0)
        assert target.source_mask_id == "case_000/0"

    def test_negative_input_rejected(self):
        with pytest.raises(ValueError):
            enhance_boundary(np.array([[[-1.0]]]))

    def test_order_preserving(self, rng):
        s = np.where(rng.random(200) < 0.5, rng.random(200) * 5, 0.0)
        b = enhance_boundary(s).values
        lower = s[:, None] < s[None, :]
        assert np.all((b[:, None] < b[None, :])[lower])
        assert np.all((b[:, None] == b[None, :])[s[:, None] == s[None, :]])

    def test_scale_invariance(self, rng):
        s = np.where(rng.random((5, 5, 5)) < 0.4, rng.random((5, 5, 5)) * 3, 0.0)
        base = enhance_boundary(s).values
        for factor in (1e-3, 0.5, 7.0, 1e4):
            np.testing.assert_allclose(enhance_boundary(factor * s).values, base, atol=1e-12)
