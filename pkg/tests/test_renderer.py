import numpy as np
import pytest
import torch

from quadpose import renderer as rnd
from quadpose.errors import ConfigurationError
from quadpose.skeleton import SkeletonTopology


def brute_force_render(pose, bones, size, gamma):
    """Per-pixel reference: loop over pixels and segments in numpy."""
    img = np.zeros((size, size))
    centers = (np.arange(size) + 0.5) * 2.0 / size - 1.0
    for row in range(size):
        for col in range(size):
            p = np.array([centers[col], centers[row]])
            best = 0.0
            for a, b in bones:
                pa, pb = pose[a], pose[b]
                ab = pb - pa
                denom = max(float(ab @ ab), 1e-30)
                t = float(np.clip((p - pa) @ ab / denom, 0.0, 1.0))
                closest = pa + t * ab
                sq = float(((p - closest) ** 2).sum())
                best = max(best, np.exp(-gamma * sq))
            img[row, col] = best
    return img


class TestPixelGrid:
    def test_corner_centers(self):
        grid = rnd.pixel_grid(4, 4)
        assert grid.shape == (4, 4, 2)
        np.testing.assert_allclose(grid[0, 0].numpy(), [-0.75, -0.75])
        np.testing.assert_allclose(grid[0, 3].numpy(), [0.75, -0.75])
        np.testing.assert_allclose(grid[3, 0].numpy(), [-0.75, 0.75])

    def test_spacing(self):
        grid = rnd.pixel_grid(128, 128)
        diffs = np.diff(grid.numpy()[0, :, 0])
        np.testing.assert_allclose(diffs, 2.0 / 128, atol=1e-12)

    def test_rectangular(self):
        grid = rnd.pixel_grid(2, 6)
        assert grid.shape == (2, 6, 2)
        np.testing.assert_allclose(grid[0, 0].numpy(), [-5.0 / 6.0, -0.5])


class TestRender:
    def test_matches_brute_force(self, topology, rng):
        size, gamma = 16, 40.0
        pose = rng.uniform(-0.8, 0.8, size=(20, 2))
        img = rnd.render(pose, topology, gamma=gamma, h=size, w=size)
        ref = brute_force_render(pose, topology.bones, size, gamma)
        np.testing.assert_allclose(img.numpy(), ref, atol=1e-10)

    def test_value_range(self, topology, rng):
        pose = rng.uniform(-1, 1, size=(20, 2))
        img = rnd.render(pose, topology, gamma=150.0, h=32, w=32)
        assert float(img.min()) >= 0.0
        assert float(img.max()) <= 1.0

    def test_pixel_on_joint_is_one(self, topology):
        size = 8
        centers = (np.arange(size) + 0.5) * 2.0 / size - 1.0
        pose = np.tile([centers[2], centers[5]], (20, 1))
        img = rnd.render(pose, topology, gamma=500.0, h=size, w=size)
        assert float(img[5, 2]) == pytest.approx(1.0, abs=1e-12)

    def test_batched_matches_single(self, topology, rng):
        poses = rng.uniform(-0.8, 0.8, size=(3, 20, 2))
        batch = rnd.render(poses, topology, gamma=150.0, h=16, w=16)
        assert batch.shape == (3, 16, 16)
        for i in range(3):
            one = rnd.render(poses[i], topology, gamma=150.0, h=16, w=16)
            np.testing.assert_allclose(batch[i].numpy(), one.numpy(), atol=0)

    def test_horizontal_flip_equivariance(self, topology, rng):
        pose = rng.uniform(-0.8, 0.8, size=(20, 2))
        flipped = pose.copy()
        flipped[:, 0] = -flipped[:, 0]
        a = rnd.render(pose, topology, gamma=150.0, h=32, w=32).numpy()
        b = rnd.render(flipped, topology, gamma=150.0, h=32, w=32).numpy()
        np.testing.assert_allclose(b, a[:, ::-1], atol=1e-10)

    def test_y_axis_points_down(self, topology):
        # a pose near y=+0.9 must light up the bottom rows of the image
        pose = np.column_stack([np.linspace(-0.5, 0.5, 20),
                                np.full(20, 0.9)])
        img = rnd.render(pose, topology, gamma=150.0, h=32, w=32).numpy()
        assert img[-4:].max() > 0.9
        assert img[:16].max() < 1e-3

    def test_gamma_controls_thickness(self, topology):
        pose = np.column_stack([np.linspace(-0.8, 0.8, 20), np.zeros(20)])
        thin = rnd.render(pose, topology, gamma=500.0, h=64, w=64).numpy()
        thick = rnd.render(pose, topology, gamma=50.0, h=64, w=64).numpy()
        assert (thick > 0.5).sum() > (thin > 0.5).sum()

    def test_invalid_gamma(self, topology):
        with pytest.raises(ConfigurationError):
            rnd.render(np.zeros((20, 2)), topology, gamma=0.0, h=16, w=16)

    def test_degenerate_bone_is_safe(self):
        # both endpoints identical: falls back to point distance, no NaN
        topo = SkeletonTopology(joint_names=("a", "b"), bones=((0, 1),),
                                root_index=0, eval_subset=(0, 1))
        img = rnd.render(np.zeros((2, 2)), topo, gamma=150.0, h=16, w=16)
        assert np.isfinite(img.numpy()).all()

    def test_readonly_array_accepted(self, topology, rng):
        pose = rng.uniform(-0.8, 0.8, size=(20, 2))
        pose.setflags(write=False)
        img = rnd.render(pose, topology, gamma=150.0, h=16, w=16)
        assert img.shape == (16, 16)

    @pytest.mark.parametrize("seed", range(5))
    def test_gradients_match_finite_differences(self, topology, seed):
        rng = np.random.default_rng(seed)
        pose0 = rng.uniform(-0.6, 0.6, size=(20, 2))
        size, gamma = 16, 40.0

        def loss_of(arr):
            t = torch.as_tensor(arr, dtype=torch.float64).requires_grad_(True)
            img = rnd.render(t, topology, gamma=gamma, h=size, w=size)
            return (img ** 2).sum(), t

        loss, t = loss_of(pose0)
        loss.backward()
        grad = t.grad.numpy()

        eps = 1e-6
        flat = pose0.reshape(-1)
        for i in rng.choice(flat.size, size=8, replace=False):
            plus, minus = flat.copy(), flat.copy()
            plus[i] += eps
            minus[i] -= eps
            lp = float(loss_of(plus.reshape(pose0.shape))[0].detach())
            lm = float(loss_of(minus.reshape(pose0.shape))[0].detach())
            fd = (lp - lm) / (2 * eps)
            analytic = grad.reshape(-1)[i]
            denom = max(abs(fd), abs(analytic), 1e-6)
            assert abs(fd - analytic) / denom < 1e-3


class TestImageIO:
    def test_to_uint8_rounding(self):
        x = torch.tensor([0.0, 0.5, 1.0, 1.0 / 255.0])
        out = rnd.to_uint8(x)
        assert out.dtype == np.uint8
        assert list(out) == [0, 128, 255, 1]

    def test_png_roundtrip(self, topology, rng, tmp_path):
        pose = rng.uniform(-0.8, 0.8, size=(20, 2))
        img = rnd.render(pose, topology, gamma=150.0, h=32, w=32)
        path = tmp_path / "skeleton.png"
        rnd.save_png(path, img)
        back = rnd.load_png(path)
        assert back.shape == (32, 32)
        np.testing.assert_allclose(back, img.numpy(), atol=0.5 / 255.0 + 1e-9)
