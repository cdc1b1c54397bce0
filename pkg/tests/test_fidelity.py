import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from PIL import Image

from msh.energy import LatticeField
from msh.fidelity import ImageData, discretize_fidelity, l2_error, rasterize
from msh.imageio import read_image, read_png, read_pnm, write_pgm
from msh.lattice import Window, generate_cubic, generate_random_parking
from msh.tessellation import compute_tessellation

rng = np.random.default_rng(0)
pytestmark = pytest.mark.filterwarnings("ignore:epsilon is below the pixel pitch")


class TestPNM:
    @pytest.mark.parametrize("bits", [8, 16])
    @pytest.mark.parametrize("channels", [1, 3])
    def test_round_trip(self, tmp_path, bits, channels):
        maxval = 255 if bits == 8 else 65535
        s = rng.integers(0, maxval + 1, size=(7, 11, channels)) / maxval
        write_pgm(tmp_path / "a.pnm", s, bits)
        np.testing.assert_array_equal(read_pnm(tmp_path / "a.pnm"), s)

    def test_pillow_reads_ours(self, tmp_path):
        s = rng.integers(0, 256, size=(5, 9)) / 255
        write_pgm(tmp_path / "a.pgm", s)
        np.testing.assert_array_equal(np.asarray(Image.open(tmp_path / "a.pgm")), np.rint(s * 255))

    def test_we_read_pillow(self, tmp_path):
        a = rng.integers(0, 256, size=(6, 4, 3), dtype=np.uint8)
        Image.fromarray(a, "RGB").save(tmp_path / "a.ppm")
        np.testing.assert_array_equal(read_image(tmp_path / "a.ppm"), a / 255)

    def test_header_comment(self, tmp_path):
        (tmp_path / "c.pgm").write_bytes(b"P5\n# note\n2 1\n255\n\x00\xff")
        np.testing.assert_array_equal(read_pnm(tmp_path / "c.pgm")[:, :, 0], [[0.0, 1.0]])

    def test_ascii_rejected(self, tmp_path):
        (tmp_path / "a.pgm").write_bytes(b"P2\n1 1\n255\n0\n")
        with pytest.raises(ValueError):
            read_pnm(tmp_path / "a.pgm")

    def test_values_clipped(self, tmp_path):
        write_pgm(tmp_path / "a.pgm", np.array([[-0.5, 2.0]]))
        np.testing.assert_array_equal(read_pnm(tmp_path / "a.pgm")[:, :, 0], [[0.0, 1.0]])


class TestPNG:
    @pytest.mark.parametrize("mode,shape,dtype", [
        ("L", (9, 13), np.uint8), ("RGB", (9, 13, 3), np.uint8), ("RGBA", (5, 6, 4), np.uint8),
        ("LA", (5, 6, 2), np.uint8), ("I;16", (8, 7), np.uint16)])
    def test_against_pillow(self, tmp_path, mode, shape, dtype):
        a = rng.integers(0, np.iinfo(dtype).max + 1, size=shape).astype(dtype)
        img = Image.fromarray(a) if mode == "I;16" else Image.fromarray(a, mode)
        img.save(tmp_path / "a.png")
        want = a.astype(float) / np.iinfo(dtype).max
        if want.ndim == 2:
            want = want[:, :, None]
        if mode in ("RGBA", "LA"):
            want = want[:, :, :-1]
        np.testing.assert_allclose(read_png(tmp_path / "a.png"), want, rtol=0, atol=1e-12)

    @pytest.mark.parametrize("colors", [2, 4, 16, 200])
    def test_palette(self, tmp_path, colors):
        a = rng.integers(0, 256, size=(10, 13, 3), dtype=np.uint8)
        img = Image.fromarray(a, "RGB").quantize(colors)
        img.save(tmp_path / "p.png")
        want = np.asarray(img.convert("RGB")) / 255
        np.testing.assert_array_equal(read_image(tmp_path / "p.png"), want)

    def test_smooth_image_uses_all_filters(self, tmp_path):
        # gradients make the encoder choose sub/up/average/paeth rows
        y, x = np.mgrid[0:40, 0:50]
        a = ((x * 3 + y * 5 + (x * y) % 7) % 256).astype(np.uint8)
        Image.fromarray(a, "L").save(tmp_path / "g.png", optimize=True)
        np.testing.assert_array_equal(read_png(tmp_path / "g.png")[:, :, 0], a / 255)

    def test_one_bit_gray(self, tmp_path):
        a = rng.integers(0, 2, size=(7, 11)).astype(bool)
        Image.fromarray(a).save(tmp_path / "b.png")
        np.testing.assert_array_equal(read_png(tmp_path / "b.png")[:, :, 0], a.astype(float))

    def test_not_png(self, tmp_path):
        (tmp_path / "x.png").write_bytes(b"hello")
        with pytest.raises(ValueError):
            read_png(tmp_path / "x.png")


class TestImageData:
    def test_validation(self):
        with pytest.raises(ValueError):
            ImageData(np.full((2, 2), 1.5))
        with pytest.raises(ValueError):
            ImageData(np.zeros((2, 2, 2)))
        with pytest.raises(ValueError):
            ImageData(np.full((2, 2), np.nan))

    def test_geometry(self):
        img = ImageData(np.zeros((4, 8)))
        assert img.pitch == 0.25
        np.testing.assert_array_equal(img.extent, [2.0, 1.0])
        assert img.channels == 1

    def test_sample_at_pixel_centers(self):
        s = rng.random((5, 7))
        img = ImageData(s)
        col, row = np.meshgrid(np.arange(7), np.arange(5))
        z = np.stack([(col + 0.5) / 5, 1 - (row + 0.5) / 5], axis=-1).reshape(-1, 2)
        np.testing.assert_allclose(img.sample(z)[:, 0], s.ravel(), atol=1e-14)

    def test_zero_outside(self):
        img = ImageData(np.ones((4, 4)))
        assert img.sample(np.array([[1.5, 0.5], [-0.1, 0.5]]))[:, 0].tolist() == [0.0, 0.0]

    def test_bilinear_reproduces_linear_inside(self):
        img = ImageData.from_function(lambda x, y: 0.2 + 0.3 * x + 0.4 * y, 20, 20)
        z = rng.uniform(0.05, 0.95, size=(50, 2))
        np.testing.assert_allclose(img.sample(z)[:, 0], 0.2 + 0.3 * z[:, 0] + 0.4 * z[:, 1], atol=1e-12)


def cubic_on(img, eps, topology="box"):
    return generate_cubic(img.domain_window(eps, topology), 1.0)


class TestDiscretize:
    def test_constant_inside(self):
        img = ImageData(np.full((16, 16), 0.6))
        eps = 1 / 32
        lat = cubic_on(img, eps)
        g = discretize_fidelity(img, lat, eps)
        x = eps * lat.points
        deep = np.all((x > eps) & (x < 1 - eps), axis=1)
        np.testing.assert_allclose(g.values[deep, 0], 0.6, atol=1e-12)

    def test_zero_far_outside(self):
        img = ImageData(np.full((16, 16), 0.6))
        eps = 1 / 16
        lat = generate_cubic(Window([-20.0, -20.0], [-4.0, -4.0]), 1.0)
        assert np.all(discretize_fidelity(img, lat, eps).values == 0.0)

    def test_ramp(self):
        img = ImageData.from_function(lambda x, y: 0.5 * x + 0.25, 64, 64)
        eps = 1 / 40
        lat = generate_random_parking(img.domain_window(eps), 1.0, seed=2)
        g = discretize_fidelity(img, lat, eps)
        x = eps * lat.points
        deep = np.all((x > 2 * eps) & (x < 1 - 2 * eps), axis=1)
        # the ball average of a linear function is its center value
        np.testing.assert_allclose(g.values[deep, 0], 0.5 * x[deep, 0] + 0.25, atol=1e-3)

    @settings(max_examples=20, deadline=None)
    @given(st.floats(0, 1), st.floats(0, 1))
    def test_linear_in_image(self, a, b):
        s1 = np.random.default_rng(1).random((8, 8))
        s2 = np.random.default_rng(2).random((8, 8))
        eps = 1 / 12
        lat = cubic_on(ImageData(s1), eps)
        t = a / 2
        u = b / 2
        g = discretize_fidelity(ImageData(t * s1 + u * s2), lat, eps).values
        g1 = discretize_fidelity(ImageData(s1), lat, eps).values
        g2 = discretize_fidelity(ImageData(s2), lat, eps).values
        np.testing.assert_allclose(g, t * g1 + u * g2, atol=1e-12)

    def test_color_channels(self):
        s = rng.random((8, 8, 3))
        eps = 1 / 8
        lat = cubic_on(ImageData(s), eps)
        g = discretize_fidelity(ImageData(s), lat, eps)
        assert g.values.shape == (lat.n, 3)
        g0 = discretize_fidelity(ImageData(s[:, :, :1]), lat, eps)
        np.testing.assert_allclose(g.values[:, 0], g0.values[:, 0], atol=1e-14)

    def test_warns_below_pitch(self):
        img = ImageData(np.zeros((4, 4)))
        lat = cubic_on(img, 1 / 8)
        with pytest.warns(UserWarning):
            discretize_fidelity(img, lat, 1 / 8)

    def test_error_decreases(self):
        img = ImageData.from_function(lambda x, y: 0.5 + 0.4 * np.sin(3 * x) * np.cos(2 * y), 128, 128)
        errs = []
        for eps in (1 / 16, 1 / 32, 1 / 64):
            lat = cubic_on(img, eps)
            errs.append(l2_error(discretize_fidelity(img, lat, eps), img, n=256))
        assert errs[0] > errs[1] > errs[2]


class TestRasterize:
    def test_constant(self):
        eps = 1 / 10
        lat = generate_random_parking(Window([0.0, 0.0], [10.0, 10.0]), 1.0, seed=4)
        u = LatticeField(lat, eps, np.full(lat.n, 0.3))
        img = rasterize(u, compute_tessellation(lat), 20, 20)
        np.testing.assert_allclose(img.samples, 0.3)

    def test_square_lattice_blocks(self):
        # each lattice site owns a 4x4 pixel block
        eps = 1 / 4
        lat = generate_cubic(Window([0.0, 0.0], [4.0, 4.0]), 1.0)
        vals = rng.random(lat.n)
        u = LatticeField(lat, eps, vals)
        img = rasterize(u, None, 16, 16).samples[:, :, 0]
        for i, x in enumerate(lat.points):
            c = int(x[0] - 0.5)
            r = 3 - int(x[1] - 0.5)
            np.testing.assert_allclose(img[4 * r:4 * r + 4, 4 * c:4 * c + 4], vals[i])

    def test_clipped(self):
        lat = generate_cubic(Window([0.0, 0.0], [2.0, 2.0]), 1.0)
        u = LatticeField(lat, 0.5, np.array([-1.0, 2.0, 0.5, 0.5]))
        s = rasterize(u, None, 4, 4).samples
        assert s.min() == 0.0 and s.max() == 1.0

    def test_round_trip_through_pgm(self, tmp_path):
        img = ImageData.from_function(lambda x, y: (x - 0.5) ** 2 + (y - 0.5) ** 2 < 0.09, 32, 32)
        eps = 1 / 32
        lat = cubic_on(img, eps)
        g = discretize_fidelity(img, lat, eps)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            out = rasterize(g, None, 32, 32)
        write_pgm(tmp_path / "r.pgm", out.samples, 16)
        back = read_pnm(tmp_path / "r.pgm")
        np.testing.assert_allclose(back, out.samples, atol=1 / 65535)
        # interior pixels of the disk and of the background keep their values
        assert back[16, 16, 0] == pytest.approx(1.0, abs=1e-4)
        assert back[1, 1, 0] == pytest.approx(0.0, abs=1e-4)
