"""
Tests for test-time augmentation: box mapping, HSV adjustment and resizing.
"""
import json

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from src.exceptions import TransformError
from src.geometry import giou, iou
from src.models import BBox, Detection, PredictionSet, RasterImage, TransformSpec
from src.tta import (
    adjust_hsv, apply_transform, fixed_spec, forward_box, hsv_array_to_rgb, hsv_to_rgb,
    inverse_box, load_png, map_predictions, resize_image, rgb_array_to_hsv, rgb_to_hsv,
    save_png, target_size_spec, transform_directory, write_manifest,
)

BIG_PICTURE = TransformSpec.from_sizes(1200, 800, 1400, 1000)

SWEEP = dict(derandomize=True, database=None, deadline=None, suppress_health_check=[HealthCheck.too_slow])


def box(x_min, y_min, x_max, y_max):
    return BBox(x_min=x_min, y_min=y_min, x_max=x_max, y_max=y_max)


def finite(low: float, high: float):
    return st.floats(min_value=low, max_value=high, allow_nan=False, allow_infinity=False)


@st.composite
def boxes(draw, low: float, high: float, max_size: float, min_size: float = 0.0):
    x = draw(finite(low, high))
    y = draw(finite(low, high))
    return box(x, y, x + draw(finite(min_size, max_size)), y + draw(finite(min_size, max_size)))


@st.composite
def scale_specs(draw):
    return TransformSpec(scale_x=draw(finite(0.1, 10)), scale_y=draw(finite(0.1, 10)))


def random_image(seed: int, width: int = 16, height: int = 12) -> RasterImage:
    rng = np.random.default_rng(seed)
    return RasterImage(pixels=rng.integers(0, 256, size=(height, width, 3), dtype=np.uint8))


class TestTransformSpec:
    """Test cases for TransformSpec."""

    def test_identity(self):
        spec = TransformSpec.identity()
        assert spec.is_identity
        assert spec.is_geometric_identity and spec.is_photometric_identity

    def test_from_sizes(self):
        assert BIG_PICTURE.scale_x == 1400 / 1200
        assert BIG_PICTURE.scale_y == 1000 / 800

    @pytest.mark.parametrize("fields", [
        {"scale_x": 0}, {"scale_y": -1}, {"hue_shift": 181}, {"saturation_gain": -0.1},
    ])
    def test_invalid(self, fields):
        with pytest.raises(ValueError):
            TransformSpec(**fields)


class TestBoxMapping:
    """Test cases for forward_box, inverse_box and map_predictions."""

    def test_forward_resize_example(self):
        assert forward_box(box(120, 80, 360, 280), BIG_PICTURE) == box(140, 100, 420, 350)

    def test_inverse_resize_example(self):
        assert inverse_box(box(140, 100, 420, 350), BIG_PICTURE) == box(120, 80, 360, 280)

    def test_identity(self):
        b = box(1.5, 2.5, 30.25, 40.75)
        assert forward_box(b, TransformSpec.identity()) == b
        assert inverse_box(b, TransformSpec.identity()) == b

    def test_origin_fixed(self):
        spec = TransformSpec(scale_x=3.3, scale_y=0.7)
        assert forward_box(box(0, 0, 0, 0), spec) == box(0, 0, 0, 0)

    def test_photometric_fields_ignored(self):
        spec = TransformSpec(hue_shift=90, saturation_gain=0, value_gain=2)
        b = box(3, 4, 5, 6)
        assert forward_box(b, spec) == b

    @settings(max_examples=10_000, **SWEEP)
    @given(spec=scale_specs(), original=boxes(-1000, 5000, 2000))
    def test_round_trip(self, spec, original):
        back = inverse_box(forward_box(original, spec), spec)
        for got, want in zip(back.as_tuple(), original.as_tuple()):
            assert got == pytest.approx(want, rel=1e-9, abs=1e-9)

    @settings(max_examples=200, **SWEEP)
    @given(scale=finite(0.2, 5), a=boxes(0, 0, 50, min_size=1),
           corners=st.tuples(finite(0, 20), finite(0, 20), finite(21, 60), finite(21, 60)))
    def test_uniform_scaling_preserves_overlap(self, scale, a, corners):
        spec = TransformSpec(scale_x=scale, scale_y=scale)
        b = box(*corners)
        assert iou(forward_box(a, spec), forward_box(b, spec)) == pytest.approx(iou(a, b), abs=1e-9)
        assert giou(forward_box(a, spec), forward_box(b, spec)) == pytest.approx(giou(a, b), abs=1e-9)

    def test_map_predictions(self):
        prediction_set = PredictionSet(categories=frozenset({1}), detections=[
            Detection(image_id=3, category_id=1, box=box(140, 100, 420, 350), score=0.42),
        ])
        mapped = map_predictions(prediction_set, BIG_PICTURE)
        assert mapped.detections[0].box == box(120, 80, 360, 280)
        assert mapped.detections[0].score == 0.42
        assert mapped.detections[0].image_id == "3"

    def test_map_empty(self):
        empty = PredictionSet(categories=frozenset({1}))
        assert map_predictions(empty, BIG_PICTURE).detections == ()

    def test_map_identity(self):
        prediction_set = PredictionSet(categories=frozenset({1}), detections=[
            Detection(image_id=3, category_id=1, box=box(1, 2, 3, 4), score=0.5),
        ])
        assert map_predictions(prediction_set, TransformSpec(value_gain=1.4)) == prediction_set


class TestHSV:
    """Test cases for the HSV conversion and adjustment."""

    def test_pure_red(self):
        assert rgb_to_hsv((255, 0, 0)) == (0.0, 1.0, 1.0)

    def test_gray(self):
        h, s, v = rgb_to_hsv((128, 128, 128))
        assert (h, s) == (0.0, 0.0)
        assert v == pytest.approx(128 / 255)

    def test_black(self):
        assert rgb_to_hsv((0, 0, 0)) == (0.0, 0.0, 0.0)

    def test_hue_sectors(self):
        assert rgb_to_hsv((0, 255, 0))[0] == pytest.approx(120)
        assert rgb_to_hsv((0, 0, 255))[0] == pytest.approx(240)
        assert rgb_to_hsv((255, 0, 255))[0] == pytest.approx(300)

    def test_hsv_to_rgb(self):
        assert hsv_to_rgb((120.0, 1.0, 1.0)) == (0, 255, 0)
        assert hsv_to_rgb((0.0, 0.0, 0.5)) == (128, 128, 128)

    @pytest.mark.slow
    @pytest.mark.parametrize("chunk", range(16))
    def test_round_trip_every_colour(self, chunk):
        """All 2**24 colours, 2**20 per chunk, come back within one level per channel."""
        codes = np.arange(chunk << 20, (chunk + 1) << 20, dtype=np.uint32)
        rgb = np.stack([codes >> 16, (codes >> 8) & 0xFF, codes & 0xFF], axis=1).astype(np.uint8)
        back = hsv_array_to_rgb(*rgb_array_to_hsv(rgb))
        assert np.abs(back.astype(np.int16) - rgb.astype(np.int16)).max() <= 1

    def test_identity_is_bit_exact(self):
        img = random_image(1)
        assert np.array_equal(adjust_hsv(img, TransformSpec.identity()).pixels, img.pixels)

    def test_zero_saturation_is_grayscale(self):
        img = random_image(2)
        gray = adjust_hsv(img, TransformSpec(saturation_gain=0)).pixels
        assert np.array_equal(gray[..., 0], gray[..., 1])
        assert np.array_equal(gray[..., 1], gray[..., 2])
        assert np.array_equal(gray[..., 0], img.pixels.max(axis=-1))

    def test_gray_fixed_under_saturation_gain(self):
        img = RasterImage(pixels=np.full((2, 2, 3), 128, dtype=np.uint8))
        assert np.array_equal(adjust_hsv(img, TransformSpec(saturation_gain=2)).pixels, img.pixels)

    def test_hue_shift(self):
        red = RasterImage(pixels=np.array([[[255, 0, 0]]], dtype=np.uint8))
        assert adjust_hsv(red, TransformSpec(hue_shift=120)).pixels.tolist() == [[[0, 255, 0]]]
        assert adjust_hsv(red, TransformSpec(hue_shift=-120)).pixels.tolist() == [[[0, 0, 255]]]

    def test_value_gain_clamps(self):
        img = RasterImage(pixels=np.array([[[200, 100, 50]]], dtype=np.uint8))
        brightened = adjust_hsv(img, TransformSpec(value_gain=10)).pixels
        assert brightened.max() == 255


class TestResize:
    """Test cases for resize_image."""

    def test_identity_is_bit_exact(self):
        img = random_image(3)
        assert np.array_equal(resize_image(img, TransformSpec.identity()).pixels, img.pixels)

    def test_constant_image_stays_constant(self):
        img = RasterImage(pixels=np.full((2, 2, 3), (10, 200, 77), dtype=np.uint8))
        out = resize_image(img, TransformSpec(scale_x=2, scale_y=2))
        assert out.pixels.shape == (4, 4, 3)
        assert (out.pixels == np.array([10, 200, 77], dtype=np.uint8)).all()

    def test_big_picture_resolution(self):
        img = RasterImage(pixels=np.zeros((800, 1200, 3), dtype=np.uint8))
        out = resize_image(img, BIG_PICTURE)
        assert (out.width, out.height) == (1400, 1000)

    def test_half_pixel_interpolation(self):
        row = RasterImage(pixels=np.array([[[0, 0, 0], [100, 100, 100]]], dtype=np.uint8))
        out = resize_image(row, TransformSpec(scale_x=2, scale_y=1))
        # sample positions -0.25, 0.25, 0.75, 1.25 clamp to 0, 0.25, 0.75, 1
        assert out.pixels[0, :, 0].tolist() == [0, 25, 75, 100]

    def test_zero_dimension(self):
        img = RasterImage(pixels=np.zeros((1, 1, 3), dtype=np.uint8))
        with pytest.raises(TransformError):
            resize_image(img, TransformSpec(scale_x=0.1, scale_y=1))

    def test_apply_transform_resizes_then_adjusts(self):
        img = RasterImage(pixels=np.full((4, 4, 3), (255, 0, 0), dtype=np.uint8))
        out = apply_transform(img, TransformSpec(scale_x=0.5, scale_y=0.5, hue_shift=120))
        assert out.pixels.shape == (2, 2, 3)
        assert (out.pixels == np.array([0, 255, 0], dtype=np.uint8)).all()


class TestTransformDirectory:
    """Test cases for PNG I/O and directory transforms."""

    @pytest.fixture
    def images_dir(self, tmp_path):
        directory = tmp_path / "images"
        directory.mkdir()
        save_png(random_image(4), directory / "a.png")
        save_png(random_image(5, width=12, height=8), directory / "b.png")
        (directory / "notes.txt").write_text("ignored")
        return directory

    def test_png_round_trip(self, tmp_path):
        img = random_image(6)
        save_png(img, tmp_path / "x.png")
        assert np.array_equal(load_png(tmp_path / "x.png").pixels, img.pixels)

    def test_identity_copies_bytes(self, images_dir, tmp_path):
        out_dir = tmp_path / "out"
        entries, failures = transform_directory(images_dir, out_dir, fixed_spec(TransformSpec.identity()))
        assert failures == []
        assert [e.file for e in entries] == ["a.png", "b.png"]
        for name in ("a.png", "b.png"):
            assert (out_dir / name).read_bytes() == (images_dir / name).read_bytes()
        assert not (out_dir / "notes.txt").exists()

    def test_unreadable_file_is_skipped(self, images_dir, tmp_path):
        (images_dir / "broken.png").write_bytes(b"not a png")
        entries, failures = transform_directory(images_dir, tmp_path / "out",
                                                fixed_spec(TransformSpec(scale_x=2, scale_y=2)))
        assert [e.file for e in entries] == ["a.png", "b.png"]
        assert len(failures) == 1 and "broken.png" in failures[0]
        assert load_png(tmp_path / "out" / "a.png").width == 32

    def test_target_size(self, tmp_path):
        source = tmp_path / "src"
        source.mkdir()
        save_png(RasterImage(pixels=np.zeros((800, 1200, 3), dtype=np.uint8)), source / "frame.png")
        entries, _ = transform_directory(source, tmp_path / "out", target_size_spec(1400, 1000))
        out = load_png(tmp_path / "out" / "frame.png")
        assert (out.width, out.height) == (1400, 1000)
        assert entries[0].scale_x == 1400 / 1200
        assert entries[0].scale_y == 1000 / 800

    def test_manifest(self, images_dir, tmp_path):
        entries, _ = transform_directory(images_dir, tmp_path / "out",
                                         fixed_spec(TransformSpec(saturation_gain=1.5)))
        write_manifest(entries, tmp_path / "out" / "manifest.json")
        records = json.loads((tmp_path / "out" / "manifest.json").read_text())
        assert records[0] == {
            "file": "a.png", "scale_x": 1.0, "scale_y": 1.0, "hue_shift": 0.0,
            "saturation_gain": 1.5, "value_gain": 1.0, "interpolation": "bilinear-half-pixel",
        }
