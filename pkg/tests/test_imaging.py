import numpy as np
import pytest
from PIL import Image

from radscore.corpus import BoundingBox
from radscore.imaging import (AnnotatedImage, OverlayStyle, encode_for_backend,
                              render_overlay)

GREEN = (0, 255, 0)


def frame_mask(shape, box, t):
    """Oracle: boolean mask of the box frame of width t (clamped to the box)."""
    t = min(t, box.w, box.h)
    mask = np.zeros(shape[:2], dtype=bool)
    mask[box.y : box.y + box.h, box.x : box.x + box.w] = True
    inner_y0, inner_y1 = box.y + t, box.y + box.h - t
    inner_x0, inner_x1 = box.x + t, box.x + box.w - t
    if inner_y1 > inner_y0 and inner_x1 > inner_x0:
        mask[inner_y0:inner_y1, inner_x0:inner_x1] = False
    return mask


class TestRenderOverlay:
    def test_minimal_one_pixel_box(self):
        img = np.zeros((10, 10), dtype=np.uint8)
        out = render_overlay(img, BoundingBox(3, 4, 1, 1), OverlayStyle(GREEN, 1))
        assert tuple(out.pixels[4, 3]) == GREEN
        others = np.ones((10, 10), dtype=bool)
        others[4, 3] = False
        assert (out.pixels[others] == 0).all()

    def test_determinism(self):
        rng = np.random.default_rng(0)
        img = rng.integers(0, 256, size=(32, 32), dtype=np.uint8)
        box = BoundingBox(4, 6, 10, 12)
        a = render_overlay(img, box)
        b = render_overlay(img, box)
        assert np.array_equal(a.pixels, b.pixels)

    def test_interior_untouched(self):
        rng = np.random.default_rng(1)
        img = rng.integers(0, 256, size=(64, 64, 3), dtype=np.uint8)
        box = BoundingBox(5, 5, 20, 30)
        out = render_overlay(img, box, OverlayStyle(GREEN, 2))
        assert np.array_equal(out.pixels[7:33, 7:23], img[7:33, 7:23])

    def test_modified_set_is_exactly_the_frame(self):
        rng = np.random.default_rng(2)
        img = rng.integers(0, 200, size=(48, 40, 3), dtype=np.uint8)
        box = BoundingBox(6, 9, 15, 11)
        style = OverlayStyle(GREEN, 3)
        out = render_overlay(img, box, style)
        diff = (out.pixels != img).any(axis=2)
        expected = frame_mask(img.shape, box, style.thickness)
        # frame pixels that already equal the overlay color do not diff
        already_green = (img == np.array(GREEN)).all(axis=2)
        assert np.array_equal(diff, expected & ~already_green)
        assert (out.pixels[expected] == np.array(GREEN, dtype=np.uint8)).all()

    def test_input_never_mutated(self):
        img = np.zeros((16, 16), dtype=np.uint8)
        snapshot = img.copy()
        render_overlay(img, BoundingBox(2, 2, 8, 8))
        assert np.array_equal(img, snapshot)

    def test_grayscale_promoted_preserves_values(self):
        img = np.arange(100, dtype=np.uint8).reshape(10, 10)
        out = render_overlay(img, BoundingBox(1, 1, 2, 2), OverlayStyle(GREEN, 1))
        outside = frame_mask(img.shape, BoundingBox(1, 1, 2, 2), 1)
        for ch in range(3):
            assert np.array_equal(out.pixels[~outside, ch], img[~outside])

    def test_out_of_bounds_names_edge(self):
        img = np.zeros((10, 10), dtype=np.uint8)
        with pytest.raises(ValueError, match="bottom edge"):
            render_overlay(img, BoundingBox(0, 5, 5, 8))

    def test_randomized_boxes_frame_only_and_deterministic(self):
        rng = np.random.default_rng(42)
        img = rng.integers(0, 255, size=(64, 64), dtype=np.uint8)
        for _ in range(100):
            w = int(rng.integers(1, 30))
            h = int(rng.integers(1, 30))
            x = int(rng.integers(0, 64 - w))
            y = int(rng.integers(0, 64 - h))
            t = int(rng.integers(1, 4))
            box = BoundingBox(x, y, w, h)
            style = OverlayStyle(GREEN, t)
            a = render_overlay(img, box, style)
            b = render_overlay(img, box, style)
            assert np.array_equal(a.pixels, b.pixels)
            diff = (a.pixels != np.repeat(img[:, :, None], 3, axis=2)).any(axis=2)
            assert not (diff & ~frame_mask(img.shape, box, t)).any()


class TestEncode:
    def make_annotated(self, pixels):
        return AnnotatedImage(pixels=pixels, source_ref="x", box_drawn=BoundingBox(0, 0, 1, 1),
                              style=OverlayStyle())

    def test_png_round_trip(self):
        rng = np.random.default_rng(3)
        pixels = rng.integers(0, 256, size=(20, 24, 3), dtype=np.uint8)
        data, media = encode_for_backend(self.make_annotated(pixels), "png")
        assert media == "image/png"
        import io

        decoded = np.asarray(Image.open(io.BytesIO(data)))
        assert np.array_equal(decoded, pixels)

    def test_jpeg_q95_uniform_within_two_levels(self):
        pixels = np.full((16, 16, 3), 120, dtype=np.uint8)
        data, media = encode_for_backend(self.make_annotated(pixels), "jpeg-q95")
        assert media == "image/jpeg"
        import io

        decoded = np.asarray(Image.open(io.BytesIO(data))).astype(int)
        assert np.abs(decoded - 120).max() <= 2

    def test_zero_area_errors(self):
        with pytest.raises(IOError):
            encode_for_backend(self.make_annotated(np.zeros((0, 0, 3), dtype=np.uint8)))

    def test_thickness_validation(self):
        with pytest.raises(ValueError):
            OverlayStyle(GREEN, 0)
