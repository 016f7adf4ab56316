"""Image representation, raster I/O, patch cropping, and PSNR.

Images are numpy float64 arrays of shape (H, W, C) with C in {1, 3} and
intensities in [0, 1]. PSNR is computed against peak 1.0 with the MSE pooled
over all samples (channels included); an exact-zero MSE returns the 100 dB
cap so downstream arithmetic stays finite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .errors import DataError, ShapeError, UnsupportedImageError

PSNR_CAP_DB = 100.0

_SUPPORTED_MODES = {"L", "RGB"}


def as_image(data: np.ndarray) -> np.ndarray:
    """Coerce an array to the canonical (H, W, C) float64 form.

    Accepts (H, W) or (H, W, C) input with C in {1, 3}. Values must be
    finite; they are clamped to [0, 1] on the way in (the "clamped on write"
    contract every operator relies on).
    """
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, np.newaxis]
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise ShapeError(f"expected (H, W) or (H, W, C) with C in {{1, 3}}, got {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ShapeError(f"empty image {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ShapeError("image contains non-finite values")
    return np.clip(arr, 0.0, 1.0)


@dataclass
class PatchSet:
    """Uniformly sized patches cropped from one source image."""

    patches: list[np.ndarray]
    source_id: str = ""

    def __post_init__(self) -> None:
        if not self.patches:
            raise DataError("PatchSet must contain at least one patch")
        first = self.patches[0].shape
        for p in self.patches[1:]:
            if p.shape != first:
                raise ShapeError("PatchSet patches must share dimensions")

    def __len__(self) -> int:
        return len(self.patches)


def psnr(reference: np.ndarray, candidate: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB between two same-shape images."""
    ref = as_image(reference)
    cand = as_image(candidate)
    if ref.shape != cand.shape:
        raise ShapeError(f"dimension mismatch: {ref.shape} vs {cand.shape}")
    mse = float(np.mean((ref - cand) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return 10.0 * math.log10(1.0 / mse)


def crop_patches(image: np.ndarray, patch_size: int, stride: int, source_id: str = "") -> PatchSet:
    """All fully contained patches on the regular grid, row-major by corner."""
    img = as_image(image)
    h, w = img.shape[:2]
    if patch_size < 1:
        raise ShapeError("patch_size must be >= 1")
    if stride < 1:
        raise ShapeError("stride must be >= 1")
    if patch_size > min(h, w):
        raise ShapeError(f"patch {patch_size} larger than image {h}x{w}")
    patches = [
        img[y : y + patch_size, x : x + patch_size]
        for y in range(0, h - patch_size + 1, stride)
        for x in range(0, w - patch_size + 1, stride)
    ]
    return PatchSet(patches=patches, source_id=source_id)


def load_image(path: str | Path) -> np.ndarray:
    """Load an 8-bit grayscale or RGB raster as a [0, 1] float image."""
    path = Path(path)
    try:
        with PILImage.open(path) as pil:
            mode = pil.mode
            if mode == "P":
                pil = pil.convert("RGB")
                mode = "RGB"
            if mode not in _SUPPORTED_MODES:
                raise UnsupportedImageError(f"unsupported raster mode {mode!r} in {path} (8-bit L/RGB only)")
            arr = np.asarray(pil, dtype=np.float64) / 255.0
    except FileNotFoundError:
        raise
    except UnsupportedImageError:
        raise
    except Exception as exc:  # PIL raises assorted types for broken files
        raise DataError(f"unreadable image {path}: {exc}") from exc
    return as_image(arr)


def save_image(image: np.ndarray, path: str | Path) -> None:
    """Write an image as 8-bit PNG (or JPEG etc. by extension via PIL)."""
    img = as_image(image)
    quantized = np.round(img * 255.0).astype(np.uint8)
    if quantized.shape[2] == 1:
        pil = PILImage.fromarray(quantized[:, :, 0], mode="L")
    else:
        pil = PILImage.fromarray(quantized, mode="RGB")
    pil.save(Path(path))
