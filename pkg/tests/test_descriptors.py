import numpy as np
import pytest

from servosim.descriptors import (DescriptorGrid, ProviderConfig, bin_features,
                                  extract, grid_cell_to_pixel, grid_pixel_map)
from servosim.errors import CellOutOfBounds, EmptyImage
from servosim.simenv import make_poster_texture


def make_grid(data: np.ndarray, res: int | None = None) -> DescriptorGrid:
    h, w = data.shape[:2]
    res_h = res if res is not None else h * 14
    res_w = res if res is not None else w * 14
    return DescriptorGrid(data=np.asarray(data, dtype=np.float64), patch_size=14,
                          stride=14, source_resolution=(res_h, res_w),
                          eligible=np.ones((h, w), dtype=bool))


class TestExtract:
    def test_grid_shape_at_operating_resolutions(self):
        img = make_poster_texture(0, 320, 240)
        grid_308 = extract(ProviderConfig(input_resolution=308), img)
        assert (grid_308.height, grid_308.width) == (22, 22)
        grid_224 = extract(ProviderConfig(input_resolution=224), img)
        assert (grid_224.height, grid_224.width) == (16, 16)
        assert grid_308.dim == 14 * 14

    def test_uniform_image_is_fully_degenerate(self):
        img = np.full((300, 300, 3), 77, dtype=np.uint8)
        grid = extract(ProviderConfig(input_resolution=224), img)
        assert not grid.eligible.any()
        assert np.all(grid.data == 0.0)

    def test_deterministic(self):
        img = make_poster_texture(3, 400, 300)
        cfg = ProviderConfig(input_resolution=308)
        a = extract(cfg, img)
        b = extract(cfg, img)
        assert np.array_equal(a.data, b.data)
        assert np.array_equal(a.eligible, b.eligible)

    def test_descriptors_are_normalized_and_finite(self):
        img = make_poster_texture(4, 320, 320)
        grid = extract(ProviderConfig(input_resolution=224), img)
        assert np.isfinite(grid.data).all()
        norms = np.linalg.norm(grid.data, axis=2)
        assert np.allclose(norms[grid.eligible], 1.0, atol=1e-12)

    def test_identical_images_cosine_one(self):
        img = make_poster_texture(5, 256, 256)
        cfg = ProviderConfig(input_resolution=224)
        a, b = extract(cfg, img), extract(cfg, img)
        cos = np.sum(a.data * b.data, axis=2)
        assert np.allclose(cos[a.eligible], 1.0, atol=1e-12)

    def test_empty_image_raises(self):
        with pytest.raises(EmptyImage):
            extract(ProviderConfig(), np.zeros((0, 0, 3), dtype=np.uint8))

    def test_resolution_range_enforced(self):
        with pytest.raises(ValueError):
            ProviderConfig(input_resolution=200)
        with pytest.raises(ValueError):
            ProviderConfig(input_resolution=600)

    def test_mask_marks_cells_ineligible(self):
        img = make_poster_texture(6, 308, 308)
        mask = np.ones((308, 308), dtype=bool)
        mask[:, :154] = False  # left half is background
        grid = extract(ProviderConfig(input_resolution=308), img, mask=mask)
        assert not grid.eligible[:, :10].any()
        assert grid.eligible[:, 12:].all()


class TestBinFeatures:
    def test_beta_zero_is_identity(self):
        rng = np.random.default_rng(0)
        grid = make_grid(rng.normal(size=(5, 5, 8)))
        out = bin_features(grid, 0)
        assert out is grid

    def test_constant_grid_duplicates_descriptor(self):
        c = np.arange(6.0)
        grid = make_grid(np.tile(c, (4, 4, 1)))
        out = bin_features(grid, 1)
        assert out.dim == 12
        assert np.allclose(out.data[..., :6], c)
        assert np.allclose(out.data[..., 6:], c)

    def test_center_ring_average_matches_hand_computation(self):
        # 3x3 grid of distinct one-hot descriptors: ring-1 average of the
        # center is the mean of its 8 neighbors
        data = np.zeros((3, 3, 9))
        for i in range(3):
            for j in range(3):
                data[i, j, 3 * i + j] = 1.0
        out = bin_features(make_grid(data), 1)
        expected = np.ones(9) / 8.0
        expected[4] = 0.0  # the center itself is not in its own ring
        assert np.allclose(out.data[1, 1, 9:], expected)

    def test_corner_averages_in_bounds_neighbors_only(self):
        data = np.zeros((3, 3, 9))
        for i in range(3):
            for j in range(3):
                data[i, j, 3 * i + j] = 1.0
        out = bin_features(make_grid(data), 1)
        # corner (0,0) has exactly 3 in-bounds neighbors: (0,1), (1,0), (1,1)
        expected = np.zeros(9)
        expected[[1, 3, 4]] = 1.0 / 3.0
        assert np.allclose(out.data[0, 0, 9:], expected)

    def test_dimension_scaling_and_shape(self):
        rng = np.random.default_rng(1)
        grid = make_grid(rng.normal(size=(6, 7, 10)), res=None)
        for beta in (0, 1, 2, 3):
            out = bin_features(grid, beta)
            assert out.data.shape == (6, 7, 10 * (beta + 1))
            assert np.array_equal(out.eligible, grid.eligible)


class TestCellToPixel:
    def test_patch_centers(self):
        grid = make_grid(np.zeros((22, 22, 4)), res=308)
        assert np.allclose(grid_cell_to_pixel(grid, (0, 0), (308, 308)), (7, 7))
        assert np.allclose(grid_cell_to_pixel(grid, (21, 21), (308, 308)), (301, 301))

    def test_camera_scaling(self):
        grid = make_grid(np.zeros((22, 22, 4)), res=308)
        assert np.allclose(grid_cell_to_pixel(grid, (0, 0), (616, 616)), (14, 14))

    def test_anisotropic_scaling(self):
        grid = make_grid(np.zeros((22, 22, 4)), res=308)
        px = grid_cell_to_pixel(grid, (0, 0), (640, 480))
        assert np.allclose(px, (7 * 640 / 308, 7 * 480 / 308))

    def test_out_of_bounds_raises(self):
        grid = make_grid(np.zeros((4, 4, 2)))
        with pytest.raises(CellOutOfBounds):
            grid_cell_to_pixel(grid, (4, 0), (224, 224))

    def test_monotone_and_injective(self):
        grid = make_grid(np.zeros((16, 16, 2)), res=224)
        pixels = grid_pixel_map(grid, (640, 480))
        xs = pixels[0, :, 0]
        ys = pixels[:, 0, 1]
        assert (np.diff(xs) > 0).all()
        assert (np.diff(ys) > 0).all()
        flat = pixels.reshape(-1, 2)
        assert len(np.unique(flat, axis=0)) == flat.shape[0]

    def test_pixel_map_matches_single_lookup(self):
        grid = make_grid(np.zeros((16, 16, 2)), res=224)
        pixels = grid_pixel_map(grid, (640, 480))
        for cell in ((0, 0), (3, 11), (15, 15)):
            assert np.allclose(pixels[cell], grid_cell_to_pixel(grid, cell, (640, 480)))
