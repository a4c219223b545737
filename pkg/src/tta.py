"""
Test-time augmentation: declarative resize + HSV transforms, their application
to rasters, and the inverse mapping of predicted boxes to original coordinates.
"""
import json
import logging
import shutil
from fractions import Fraction
from functools import lru_cache
from pathlib import Path
from typing import Callable, List, Optional, Tuple, Union

import numpy as np
from PIL import Image

from .exceptions import TransformError
from .models import BBox, ManifestEntry, PredictionSet, RasterImage, TransformSpec

logger = logging.getLogger(__name__)


@lru_cache(maxsize=256)
def _as_ratio(scale: float) -> Tuple[float, float]:
    """Small integer ratio equal to ``scale`` as a double, else (scale, 1).

    Scales such as 1400/1200 then map pixel coordinates exactly both ways.
    """
    ratio = Fraction(scale).limit_denominator(10_000)
    if ratio.numerator / ratio.denominator == scale:
        return float(ratio.numerator), float(ratio.denominator)
    return scale, 1.0


def forward_box(box: BBox, spec: TransformSpec) -> BBox:
    """Box coordinates on the transformed image. Photometric fields have no effect."""
    nx, dx = _as_ratio(spec.scale_x)
    ny, dy = _as_ratio(spec.scale_y)
    return BBox(
        x_min=box.x_min * nx / dx,
        y_min=box.y_min * ny / dy,
        x_max=box.x_max * nx / dx,
        y_max=box.y_max * ny / dy,
    )


def inverse_box(box: BBox, spec: TransformSpec) -> BBox:
    """Map a box predicted on the transformed image back to original coordinates."""
    nx, dx = _as_ratio(spec.scale_x)
    ny, dy = _as_ratio(spec.scale_y)
    return BBox(
        x_min=box.x_min * dx / nx,
        y_min=box.y_min * dy / ny,
        x_max=box.x_max * dx / nx,
        y_max=box.y_max * dy / ny,
    )


def map_predictions(prediction_set: PredictionSet, spec: TransformSpec) -> PredictionSet:
    """Pass every detection's box through inverse_box; scores and ids are untouched."""
    if spec.is_geometric_identity:
        return prediction_set
    mapped = tuple(
        det.model_copy(update={"box": inverse_box(det.box, spec)})
        for det in prediction_set.detections
    )
    return prediction_set.model_copy(update={"detections": mapped})


def _quantize(values: np.ndarray) -> np.ndarray:
    # round half up, then saturate to the 8-bit range
    return np.clip(np.floor(values + 0.5), 0, 255).astype(np.uint8)


def rgb_array_to_hsv(rgb: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Hexcone conversion of an (..., 3) array of 8-bit RGB values.

    Returns hue in degrees [0, 360), saturation and value in [0, 1].
    Black and grays get hue 0 and saturation 0.
    """
    rgb = rgb.astype(np.float64)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    mx = rgb.max(axis=-1)
    mn = rgb.min(axis=-1)
    chroma = mx - mn
    chromatic = chroma > 0
    safe_chroma = np.where(chromatic, chroma, 1.0)

    hue = np.select(
        [mx == r, mx == g],
        [np.mod(60.0 * (g - b) / safe_chroma, 360.0),
         60.0 * (b - r) / safe_chroma + 120.0],
        default=60.0 * (r - g) / safe_chroma + 240.0,
    )
    hue = np.where(chromatic, hue, 0.0)
    saturation = np.where(mx > 0, chroma / np.where(mx > 0, mx, 1.0), 0.0)
    value = mx / 255.0
    return hue, saturation, value


def hsv_array_to_rgb(hue: np.ndarray, saturation: np.ndarray, value: np.ndarray) -> np.ndarray:
    """Inverse hexcone conversion with round-half-up quantization to uint8."""
    hue = np.mod(hue, 360.0)
    chroma = value * saturation
    sector_pos = hue / 60.0
    second = chroma * (1.0 - np.abs(np.mod(sector_pos, 2.0) - 1.0))
    sector = np.floor(sector_pos).astype(np.int64) % 6
    zero = np.zeros_like(chroma)

    choices = [sector == k for k in range(6)]
    r1 = np.select(choices, [chroma, second, zero, zero, second, chroma])
    g1 = np.select(choices, [second, chroma, chroma, second, zero, zero])
    b1 = np.select(choices, [zero, zero, second, chroma, chroma, second])
    offset = value - chroma
    rgb = np.stack([r1 + offset, g1 + offset, b1 + offset], axis=-1) * 255.0
    return _quantize(rgb)


def rgb_to_hsv(pixel: Tuple[int, int, int]) -> Tuple[float, float, float]:
    """Single-pixel hexcone conversion: (h degrees, s, v)."""
    hue, saturation, value = rgb_array_to_hsv(np.asarray(pixel, dtype=np.uint8))
    return float(hue), float(saturation), float(value)


def hsv_to_rgb(hsv: Tuple[float, float, float]) -> Tuple[int, int, int]:
    h, s, v = (np.asarray(c, dtype=np.float64) for c in hsv)
    r, g, b = hsv_array_to_rgb(h, s, v).tolist()
    return r, g, b


def adjust_hsv(img: RasterImage, spec: TransformSpec) -> RasterImage:
    """
    Per pixel: shift hue, scale saturation and value (clamped to [0, 1]) and
    convert back to 8-bit RGB. ``value_gain`` stands in for contrast.
    """
    if spec.is_photometric_identity:
        return RasterImage(pixels=img.pixels.copy())
    hue, saturation, value = rgb_array_to_hsv(img.pixels)
    hue = np.mod(hue + spec.hue_shift, 360.0)
    saturation = np.clip(saturation * spec.saturation_gain, 0.0, 1.0)
    value = np.clip(value * spec.value_gain, 0.0, 1.0)
    return RasterImage(pixels=hsv_array_to_rgb(hue, saturation, value))


def output_size(width: int, height: int, spec: TransformSpec) -> Tuple[int, int]:
    """Target (width, height), each rounded half up."""
    return int(np.floor(width * spec.scale_x + 0.5)), int(np.floor(height * spec.scale_y + 0.5))


def _sample_grid(source: int, target: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    # half-pixel centres: target pixel i samples source position (i + 0.5) * source/target - 0.5
    pos = (np.arange(target, dtype=np.float64) + 0.5) * (source / target) - 0.5
    pos = np.clip(pos, 0.0, source - 1)
    low = np.floor(pos).astype(np.int64)
    high = np.minimum(low + 1, source - 1)
    return low, high, pos - low


def resize_image(img: RasterImage, spec: TransformSpec) -> RasterImage:
    """
    Bilinear resize with half-pixel-centre alignment.

    Raises:
        TransformError: an output dimension would be 0
    """
    out_w, out_h = output_size(img.width, img.height, spec)
    if out_w < 1 or out_h < 1:
        raise TransformError(
            f"resizing {img.width}x{img.height} by ({spec.scale_x}, {spec.scale_y}) gives {out_w}x{out_h}"
        )
    if (out_w, out_h) == (img.width, img.height):
        return RasterImage(pixels=img.pixels.copy())

    x0, x1, wx = _sample_grid(img.width, out_w)
    y0, y1, wy = _sample_grid(img.height, out_h)
    src = img.pixels.astype(np.float64)
    wx = wx[None, :, None]
    wy = wy[:, None, None]
    top = src[y0][:, x0] * (1.0 - wx) + src[y0][:, x1] * wx
    bottom = src[y1][:, x0] * (1.0 - wx) + src[y1][:, x1] * wx
    return RasterImage(pixels=_quantize(top * (1.0 - wy) + bottom * wy))


def apply_transform(img: RasterImage, spec: TransformSpec) -> RasterImage:
    """Resize, then adjust HSV."""
    return adjust_hsv(resize_image(img, spec), spec)


def load_png(path: Union[str, Path]) -> RasterImage:
    with Image.open(path) as im:
        if im.format != "PNG":
            raise OSError(f"{path}: not a PNG file (format {im.format})")
        return RasterImage(pixels=np.array(im.convert("RGB"), dtype=np.uint8))


def save_png(img: RasterImage, path: Union[str, Path]) -> None:
    Image.fromarray(img.pixels).save(path, format="PNG")


SpecFor = Callable[[RasterImage], TransformSpec]


def transform_directory(images_dir: Union[str, Path], output_dir: Union[str, Path],
                        spec_for: SpecFor) -> Tuple[List[ManifestEntry], List[str]]:
    """
    Transform every PNG in images_dir into output_dir.

    ``spec_for`` picks the spec per image (a fixed spec, or one derived from a
    target size). An identity spec copies the file byte for byte. A file that
    cannot be read or written is reported and skipped.

    Returns:
        Tuple of (manifest_entries, failures)
    """
    images_dir, output_dir = Path(images_dir), Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    entries: List[ManifestEntry] = []
    failures: List[str] = []

    paths = sorted(p for p in images_dir.iterdir() if p.is_file() and p.suffix.lower() == ".png")
    for path in paths:
        target = output_dir / path.name
        try:
            img = load_png(path)
            spec = spec_for(img)
            if spec.is_identity:
                shutil.copyfile(path, target)
            else:
                save_png(apply_transform(img, spec), target)
        except (OSError, TransformError) as e:
            logger.error("Failed to transform %s: %s", path, e)
            failures.append(f"{path}: {e}")
            continue
        logger.info("Transformed %s -> %s", path.name, target)
        entries.append(ManifestEntry.for_spec(path.name, spec))
    return entries, failures


def fixed_spec(spec: TransformSpec) -> SpecFor:
    return lambda img: spec


def target_size_spec(width: int, height: int, photometric: Optional[TransformSpec] = None) -> SpecFor:
    """Spec builder resizing each image to width x height, keeping photometric settings."""
    photometric = photometric or TransformSpec.identity()

    def build(img: RasterImage) -> TransformSpec:
        return TransformSpec.from_sizes(
            img.width, img.height, width, height,
            hue_shift=photometric.hue_shift,
            saturation_gain=photometric.saturation_gain,
            value_gain=photometric.value_gain,
        )
    return build


def write_manifest(entries: List[ManifestEntry], path: Union[str, Path]) -> None:
    records = [entry.model_dump() for entry in entries]
    Path(path).write_text(json.dumps(records, indent=2) + "\n", encoding="utf-8")
