"""Degradation-feature extraction and the DDRF interchange format.

Two feature sources feed the GGD model: a built-in deterministic filter-bank
extractor, and externally computed deep features ingested from DDRF files
(the contract with the exporter tool). Either way, samples are pooled with
`center_and_flatten` so downstream statistics follow one path.

DDRF layout (little-endian): magic b"DDRF", u32 version = 1, u32 ndim,
u64 * ndim dims, float32 * prod(dims) payload, then an optional trailing
metadata block (u32 byte length + UTF-8 text) that is omitted entirely when
there is no metadata.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import DataError, FormatError, ShapeError
from .ggd import SampleVector
from .image import as_image

DDRF_MAGIC = b"DDRF"
DDRF_VERSION = 1

# Built-in bank: 8 oriented derivative-of-Gaussian, 8 Gabor (2 scales x 4
# orientations), 4 Laplacian-of-Gaussian, 4 random +-1 filters.
N_DOG = 8
N_GABOR = 8
N_LOG = 4
N_RANDOM = 4
N_FILTERS = N_DOG + N_GABOR + N_LOG + N_RANDOM

DOG_CHANNELS = tuple(range(N_DOG))  # derivative-filter indices, pre channel fan-out


@dataclass
class FeatureTensor:
    """Dense float32 feature block plus provenance tags."""

    data: np.ndarray
    extractor_id: str = ""
    source: str = ""

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.size == 0:
            raise DataError("feature tensor is empty")
        if not np.all(np.isfinite(self.data)):
            raise DataError("feature tensor contains non-finite values")

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(self.data.shape)


def _grid(radius: int) -> tuple[np.ndarray, np.ndarray]:
    coords = np.arange(-radius, radius + 1, dtype=np.float64)
    return np.meshgrid(coords, coords, indexing="ij")


def _unit(kernel: np.ndarray) -> np.ndarray:
    norm = np.sqrt(np.sum(kernel**2))
    return kernel / norm


def _dog_kernel(sigma: float, theta: float) -> np.ndarray:
    # First directional derivative of a Gaussian; zero DC by construction,
    # re-centered numerically against discretization residue.
    radius = int(np.ceil(3.0 * sigma))
    y, x = _grid(radius)
    g = np.exp(-(x**2 + y**2) / (2.0 * sigma**2))
    k = -(np.cos(theta) * x + np.sin(theta) * y) / sigma**2 * g
    k -= k.mean()
    return _unit(k)


def _gabor_kernel(sigma: float, wavelength: float, theta: float) -> np.ndarray:
    radius = int(np.ceil(3.0 * sigma))
    y, x = _grid(radius)
    xr = np.cos(theta) * x + np.sin(theta) * y
    k = np.exp(-(x**2 + y**2) / (2.0 * sigma**2)) * np.cos(2.0 * np.pi * xr / wavelength)
    k -= k.mean()
    return _unit(k)


def _log_kernel(sigma: float) -> np.ndarray:
    radius = int(np.ceil(3.0 * sigma))
    y, x = _grid(radius)
    r2 = x**2 + y**2
    k = (r2 - 2.0 * sigma**2) / sigma**4 * np.exp(-r2 / (2.0 * sigma**2))
    k -= k.mean()
    return _unit(k)


def build_filter_bank(bank_seed: int) -> list[np.ndarray]:
    """The 24 fixed kernels; only the 4 random +-1 filters use bank_seed."""
    bank: list[np.ndarray] = []
    for i in range(N_DOG):
        bank.append(_dog_kernel(sigma=1.5, theta=np.pi * i / N_DOG))
    for sigma, wavelength in ((1.5, 4.0), (2.5, 8.0)):
        for i in range(4):
            bank.append(_gabor_kernel(sigma, wavelength, theta=np.pi * i / 4))
    for sigma in (1.0, 1.5, 2.0, 3.0):
        bank.append(_log_kernel(sigma))
    rng = np.random.default_rng(bank_seed)
    # Balanced +-1 sign patterns: zero DC keeps their responses on the same
    # texture-energy scale as the analytic filters.
    signs = np.array([1.0] * 8 + [-1.0] * 8)
    for _ in range(N_RANDOM):
        bank.append(rng.permutation(signs).reshape(4, 4))
    return bank


def extract_builtin(images: list[np.ndarray], bank_seed: int) -> FeatureTensor:
    """Filter bank -> |.| -> 2x average pooling, per channel of each image.

    Output dims are (items, n_filters * channels, H // 2, W // 2) with the
    filter index major and channel index minor on axis 1.
    """
    if not images:
        raise DataError("no images to extract features from")
    imgs = [as_image(im) for im in images]
    shape = imgs[0].shape
    for im in imgs[1:]:
        if im.shape != shape:
            raise ShapeError(f"mixed image dimensions: {im.shape} vs {shape}")
    h, w, channels = shape
    if min(h, w) < 2:
        raise ShapeError("images too small for 2x pooling")

    bank = build_filter_bank(bank_seed)
    stack = np.stack(imgs)  # (items, H, W, C)
    h2, w2 = h // 2, w // 2
    out = np.empty((len(imgs), N_FILTERS * channels, h2, w2), dtype=np.float32)
    for fi, kernel in enumerate(bank):
        for c in range(channels):
            # Kernel extent 1 on the item axis: no bleed between images.
            resp = ndimage.correlate(stack[:, :, :, c], kernel[np.newaxis, :, :], mode="reflect")
            resp = np.abs(resp)[:, : h2 * 2, : w2 * 2]
            pooled = resp.reshape(len(imgs), h2, 2, w2, 2).mean(axis=(2, 4))
            out[:, fi * channels + c] = pooled.astype(np.float32)
    return FeatureTensor(data=out, extractor_id=f"builtin-bank-v1(seed={bank_seed})")


def center_and_flatten(tensor: FeatureTensor) -> SampleVector:
    """Flatten every value and subtract the global mean (float64 throughout)."""
    values = tensor.data.astype(np.float64).ravel()
    if values.size == 0:
        raise DataError("empty tensor")
    centered = values - values.mean()
    return SampleVector(values=centered)


def pooled_samples(images: list[np.ndarray], extractor) -> SampleVector:
    """Extract features for a batch and pool all centered values."""
    return center_and_flatten(extractor(images))


def write_features(tensor: FeatureTensor, path: str | Path) -> None:
    """Serialize a FeatureTensor as a DDRF file (bit-exact round trip)."""
    dims = tensor.dims
    if any(d <= 0 for d in dims):
        raise DataError(f"invalid dims {dims}")
    blob = bytearray()
    blob += DDRF_MAGIC
    blob += struct.pack("<I", DDRF_VERSION)
    blob += struct.pack("<I", len(dims))
    blob += struct.pack(f"<{len(dims)}Q", *dims)
    blob += np.ascontiguousarray(tensor.data, dtype="<f4").tobytes()
    if tensor.extractor_id:
        meta = tensor.extractor_id.encode("utf-8")
        blob += struct.pack("<I", len(meta))
        blob += meta
    Path(path).write_bytes(bytes(blob))


def ingest_features(path: str | Path) -> FeatureTensor:
    """Read a DDRF file, validating structure and payload integrity."""
    raw = Path(path).read_bytes()
    if len(raw) < 12:
        raise FormatError(f"{path}: truncated header")
    if raw[:4] != DDRF_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != DDRF_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    (ndim,) = struct.unpack_from("<I", raw, 8)
    if ndim == 0 or ndim > 8:
        raise FormatError(f"{path}: implausible ndim {ndim}")
    offset = 12
    if len(raw) < offset + 8 * ndim:
        raise FormatError(f"{path}: truncated dims")
    dims = struct.unpack_from(f"<{ndim}Q", raw, offset)
    offset += 8 * ndim
    if any(d == 0 for d in dims):
        raise FormatError(f"{path}: zero-sized dimension in {dims}")
    count = int(np.prod(dims))
    payload_bytes = 4 * count
    if len(raw) < offset + payload_bytes:
        raise FormatError(f"{path}: payload shorter than dims imply")
    data = np.frombuffer(raw, dtype="<f4", count=count, offset=offset).reshape(dims)
    offset += payload_bytes
    extractor_id = ""
    if offset < len(raw):
        if len(raw) < offset + 4:
            raise FormatError(f"{path}: dangling metadata prefix")
        (meta_len,) = struct.unpack_from("<I", raw, offset)
        offset += 4
        if len(raw) != offset + meta_len:
            raise FormatError(f"{path}: metadata length mismatch")
        extractor_id = raw[offset:].decode("utf-8")
    if not np.all(np.isfinite(data)):
        raise FormatError(f"{path}: non-finite values in payload")
    return FeatureTensor(data=data.copy(), extractor_id=extractor_id, source=str(path))
