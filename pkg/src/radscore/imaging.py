"""Visual prompt rendering: draw the lesion bounding box onto a CT slice.

Rasters are numpy uint8 arrays, grayscale ``(H, W)`` or RGB ``(H, W, 3)``.
Grayscale inputs are promoted to RGB before drawing.  The border is drawn
inside the box boundary (inclusive of the top-left corner), so a valid box
never paints outside image bounds.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .corpus import BoundingBox

__all__ = ["OverlayStyle", "AnnotatedImage", "render_overlay", "encode_for_backend", "load_raster"]

DEFAULT_STYLE_COLOR = (0, 255, 0)
DEFAULT_STYLE_THICKNESS = 2


@dataclass(frozen=True)
class OverlayStyle:
    color: tuple[int, int, int] = DEFAULT_STYLE_COLOR
    thickness: int = DEFAULT_STYLE_THICKNESS

    def __post_init__(self) -> None:
        if self.thickness < 1:
            raise ValueError(f"thickness must be >= 1, got {self.thickness}")
        if len(self.color) != 3 or any(not 0 <= c <= 255 for c in self.color):
            raise ValueError(f"color must be an RGB triple in 0..255, got {self.color!r}")


@dataclass(frozen=True)
class AnnotatedImage:
    pixels: np.ndarray  # (H, W, 3) uint8
    source_ref: str
    box_drawn: BoundingBox
    style: OverlayStyle


def load_raster(path: Path | str) -> np.ndarray:
    """Read an 8-bit grayscale or RGB raster file into a numpy array."""
    try:
        with Image.open(path) as img:
            if img.mode not in ("L", "RGB"):
                img = img.convert("RGB")
            return np.asarray(img)
    except OSError as exc:
        raise IOError(f"cannot read image {path}: {exc}") from exc


def _to_rgb(image: np.ndarray) -> np.ndarray:
    if image.ndim == 2:
        return np.repeat(image[:, :, None], 3, axis=2).astype(np.uint8)
    if image.ndim == 3 and image.shape[2] == 3:
        return image.astype(np.uint8)
    raise ValueError(f"expected (H, W) or (H, W, 3) raster, got shape {image.shape}")


def render_overlay(
    image: np.ndarray,
    box: BoundingBox,
    style: OverlayStyle = OverlayStyle(),
    source_ref: str = "",
) -> AnnotatedImage:
    """Draw a rectangular border of ``style.color`` at the box boundary.

    Interior and exterior pixels are untouched; the input raster is never
    mutated.  Output is deterministic for identical inputs.
    """
    rgb = _to_rgb(image).copy()
    height, width = rgb.shape[:2]
    box.check_within(width, height)
    t = min(style.thickness, box.w, box.h)  # frame never thicker than the box itself

    x0, y0, x1, y1 = box.x, box.y, box.x + box.w, box.y + box.h
    color = np.array(style.color, dtype=np.uint8)
    rgb[y0 : y0 + t, x0:x1] = color
    rgb[y1 - t : y1, x0:x1] = color
    rgb[y0:y1, x0 : x0 + t] = color
    rgb[y0:y1, x1 - t : x1] = color
    return AnnotatedImage(pixels=rgb, source_ref=source_ref, box_drawn=box, style=style)


def encode_for_backend(image: AnnotatedImage, format: str = "png") -> tuple[bytes, str]:
    """Encode an annotated image for embedding in a backend request.

    ``png`` is lossless (decode(encode(x)) == x pixelwise); ``jpeg-q95`` is
    near-lossless quality-95 JPEG.  Returns ``(bytes, media_type)``.
    """
    if image.pixels.size == 0:
        raise IOError("cannot encode zero-area image")
    pil = Image.fromarray(image.pixels)
    buf = io.BytesIO()
    if format == "png":
        pil.save(buf, format="PNG")
        return buf.getvalue(), "image/png"
    if format == "jpeg-q95":
        pil.save(buf, format="JPEG", quality=95)
        return buf.getvalue(), "image/jpeg"
    raise ValueError(f"unknown encoding format {format!r}")
