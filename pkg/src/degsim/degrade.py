"""The 11 degradation operators and corpus-level batch application.

Every operator preserves image dimensions, clamps its output to [0, 1], and
is a pure function of (image, spec, seed): stochastic operators draw only
from a counter-based generator keyed by (seed, spec.id). Blur kernels sum to
one and all convolutions use reflect padding, so constant images pass
through blurs unchanged.
"""

from __future__ import annotations

import hashlib
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import PIL
from PIL import Image as PILImage
from scipy import ndimage

from ._rng import derive_key, make_rng
from .errors import DataError, FormatError, ShapeError, ValidationError
from .image import as_image, load_image, save_image

_MASK64 = (1 << 64) - 1

_IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


# --------------------------------------------------------------------------
# Specs
# --------------------------------------------------------------------------


def _positive(name):
    def check(v):
        if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
            raise ValidationError(f"{name} must be > 0, got {v!r}")
        return float(v)

    return check


def _nonnegative(name):
    def check(v):
        if not (isinstance(v, (int, float)) and math.isfinite(v) and v >= 0):
            raise ValidationError(f"{name} must be >= 0, got {v!r}")
        return float(v)

    return check


def _int_range(name, lo, hi=None):
    def check(v):
        if not isinstance(v, int) or isinstance(v, bool):
            raise ValidationError(f"{name} must be an integer, got {v!r}")
        if v < lo or (hi is not None and v > hi):
            raise ValidationError(f"{name} must be in [{lo}, {hi if hi is not None else 'inf'}], got {v}")
        return v

    return check


def _unit_open(name):
    def check(v):
        if not (isinstance(v, (int, float)) and 0.0 <= v < 1.0):
            raise ValidationError(f"{name} must be in [0, 1), got {v!r}")
        return float(v)

    return check


def _fraction_0_1(name):
    def check(v):
        if not (isinstance(v, (int, float)) and 0.0 < v <= 1.0):
            raise ValidationError(f"{name} must be in (0, 1], got {v!r}")
        return float(v)

    return check


def _angle_or_none(name):
    def check(v):
        if v is None:
            return None
        if not (isinstance(v, (int, float)) and math.isfinite(v)):
            raise ValidationError(f"{name} must be a finite angle in degrees or null, got {v!r}")
        return float(v) % 360.0

    return check


# kind -> {param: (default, validator)}
KINDS: dict[str, dict[str, tuple]] = {
    "gaussian_blur": {"sigma": (2.0, _positive("sigma"))},
    "motion_blur": {"length": (15, _int_range("length", 1)), "angle": (None, _angle_or_none("angle"))},
    "rl": {"sigma": (2.0, _positive("sigma")), "iterations": (15, _int_range("iterations", 1))},
    "sr": {"factor": (2, _int_range("factor", 2))},
    "ringing": {"radius": (0.25, _fraction_0_1("radius"))},
    "defocus_blur": {"radius": (4.0, _positive("radius"))},
    "jpeg": {"quality": (25, _int_range("quality", 1, 100))},
    "poisson_noise": {"peak": (100.0, _positive("peak"))},
    "inpainting": {
        "fraction": (0.2, _unit_open("fraction")),
        "block_min": (8, _int_range("block_min", 1)),
        "block_max": (32, _int_range("block_max", 1)),
    },
    "gaussian_noise": {"sigma": (25.0 / 255.0, _nonnegative("sigma"))},
    "sp_noise": {"p": (0.05, _unit_open("p"))},
}


@dataclass(frozen=True)
class DegradationSpec:
    """One degradation operator instance with concrete parameters."""

    kind: str
    params: dict
    id: str

    def is_stochastic(self) -> bool:
        if self.kind in ("poisson_noise", "inpainting", "gaussian_noise", "sp_noise"):
            # Zero-strength settings never touch the RNG stream's output.
            return True
        if self.kind == "motion_blur" and self.params["angle"] is None:
            return True
        return False

    def to_dict(self) -> dict:
        return {"kind": self.kind, "id": self.id, **self.params}


def make_spec(kind: str, spec_id: str | None = None, **params) -> DegradationSpec:
    if kind not in KINDS:
        raise ValidationError(f"unknown degradation kind {kind!r}; known: {sorted(KINDS)}")
    table = KINDS[kind]
    unknown = set(params) - set(table)
    if unknown:
        raise ValidationError(f"unknown parameters {sorted(unknown)} for kind {kind!r}")
    filled = {}
    for name, (default, validator) in table.items():
        filled[name] = validator(params.get(name, default)) if name in params else default
    if kind == "inpainting" and filled["block_max"] < filled["block_min"]:
        raise ValidationError("inpainting block_max must be >= block_min")
    return DegradationSpec(kind=kind, params=filled, id=spec_id or kind)


def parse_degradation_spec(text: str | dict) -> DegradationSpec:
    """Parse one spec from a JSON object {"kind": ..., "id": ..., params...}."""
    if isinstance(text, str):
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"invalid spec JSON: {exc}") from exc
    else:
        obj = dict(text)
    if not isinstance(obj, dict):
        raise ValidationError(f"degradation spec must be a JSON object, got {type(obj).__name__}")
    kind = obj.pop("kind", None)
    if not isinstance(kind, str):
        raise ValidationError("degradation spec needs a string 'kind'")
    spec_id = obj.pop("id", None)
    if spec_id is not None and not isinstance(spec_id, str):
        raise ValidationError("'id' must be a string")
    return make_spec(kind, spec_id=spec_id, **obj)


def load_suite(path: str | Path) -> list[DegradationSpec]:
    """Load a degradation suite: JSON array of spec objects, unique ids."""
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(raw, list) or not raw:
        raise ValidationError(f"{path}: suite must be a non-empty JSON array")
    suite = [parse_degradation_spec(item) for item in raw]
    ids = [s.id for s in suite]
    if len(set(ids)) != len(ids):
        raise ValidationError(f"{path}: duplicate degradation ids in suite")
    return suite


# --------------------------------------------------------------------------
# Kernels and shared helpers
# --------------------------------------------------------------------------


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = int(math.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


def motion_kernel(length: int, angle_deg: float) -> np.ndarray:
    """Normalized linear kernel: subpixel line samples splatted bilinearly."""
    size = length if length % 2 == 1 else length + 1
    kernel = np.zeros((size, size), dtype=np.float64)
    center = size // 2
    theta = math.radians(angle_deg)
    dy, dx = math.sin(theta), math.cos(theta)
    steps = max(1, int(round(length * 4)))
    for t in np.linspace(-(length - 1) / 2.0, (length - 1) / 2.0, steps):
        y = center + t * dy
        x = center + t * dx
        y0, x0 = int(math.floor(y)), int(math.floor(x))
        fy, fx = y - y0, x - x0
        for oy, wy in ((0, 1.0 - fy), (1, fy)):
            for ox, wx in ((0, 1.0 - fx), (1, fx)):
                yy, xx = y0 + oy, x0 + ox
                if 0 <= yy < size and 0 <= xx < size:
                    kernel[yy, xx] += wy * wx
    kernel /= kernel.sum()
    return kernel


def disk_kernel(radius: float) -> np.ndarray:
    r = int(math.ceil(radius))
    y, x = np.meshgrid(np.arange(-r, r + 1), np.arange(-r, r + 1), indexing="ij")
    dist = np.sqrt(x.astype(np.float64) ** 2 + y.astype(np.float64) ** 2)
    kernel = np.clip(radius + 0.5 - dist, 0.0, 1.0)
    kernel /= kernel.sum()
    return kernel


def _convolve(image: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    # Kernel extent 1 on the channel axis keeps channels independent.
    return ndimage.correlate(image, kernel[:, :, np.newaxis], mode="reflect")


# --------------------------------------------------------------------------
# Operators
# --------------------------------------------------------------------------


def _op_gaussian_blur(img, params, rng):
    return _convolve(img, gaussian_kernel(params["sigma"]))


def _op_motion_blur(img, params, rng):
    angle = params["angle"]
    if angle is None:
        angle = float(rng.random() * 360.0)
    return _convolve(img, motion_kernel(params["length"], angle))


def _op_rl(img, params, rng):
    """Blur, then truncated Richardson-Lucy with the true kernel.

    The partially deconvolved image carries the characteristic ringing/
    overshoot artifacts of the method.
    """
    kernel = gaussian_kernel(params["sigma"])
    blurred = _convolve(img, kernel)
    eps = 1e-12
    estimate = blurred.copy()
    for _ in range(params["iterations"]):
        reblurred = _convolve(estimate, kernel)
        ratio = blurred / np.maximum(reblurred, eps)
        estimate = estimate * _convolve(ratio, kernel)  # symmetric kernel: K^T = K
    return estimate


def _resize_bicubic(channel: np.ndarray, size_wh: tuple[int, int]) -> np.ndarray:
    pil = PILImage.fromarray(channel.astype(np.float32), mode="F")
    return np.asarray(pil.resize(size_wh, resample=PILImage.Resampling.BICUBIC), dtype=np.float64)


def _op_sr(img, params, rng):
    f = params["factor"]
    h, w = img.shape[:2]
    if min(h, w) < f:
        raise ValidationError(f"sr factor {f} exceeds image side {min(h, w)}")
    low_wh = (max(1, w // f), max(1, h // f))
    out = np.empty_like(img)
    for c in range(img.shape[2]):
        low = _resize_bicubic(img[:, :, c], low_wh)
        out[:, :, c] = _resize_bicubic(low, (w, h))
    return out


def _op_ringing(img, params, rng):
    r = params["radius"]
    h, w = img.shape[:2]
    uy = np.fft.fftfreq(h) * 2.0  # normalized to [-1, 1)
    ux = np.fft.fftfreq(w) * 2.0
    mask = (uy[:, np.newaxis] ** 2 + ux[np.newaxis, :] ** 2) <= r * r
    out = np.empty_like(img)
    for c in range(img.shape[2]):
        spectrum = np.fft.fft2(img[:, :, c])
        out[:, :, c] = np.fft.ifft2(spectrum * mask).real
    return out


def _op_defocus_blur(img, params, rng):
    return _convolve(img, disk_kernel(params["radius"]))


def _op_jpeg(img, params, rng):
    quantized = np.round(img * 255.0).astype(np.uint8)
    if quantized.shape[2] == 1:
        pil = PILImage.fromarray(quantized[:, :, 0], mode="L")
    else:
        pil = PILImage.fromarray(quantized, mode="RGB")
    buf = io.BytesIO()
    pil.save(buf, format="JPEG", quality=params["quality"])  # baseline sequential DCT
    buf.seek(0)
    decoded = np.asarray(PILImage.open(buf), dtype=np.float64) / 255.0
    if decoded.ndim == 2:
        decoded = decoded[:, :, np.newaxis]
    return decoded


def _op_poisson_noise(img, params, rng):
    peak = params["peak"]
    return rng.poisson(img * peak).astype(np.float64) / peak


def _op_inpainting(img, params, rng):
    fraction = params["fraction"]
    out = img.copy()
    if fraction == 0.0:
        return out
    h, w = img.shape[:2]
    bmin = min(params["block_min"], h, w)
    bmax = min(params["block_max"], h, w)
    target = fraction * h * w
    mask = np.zeros((h, w), dtype=bool)
    covered = 0
    for _ in range(100_000):
        if covered >= target:
            break
        by = int(rng.integers(bmin, bmax + 1))
        bx = int(rng.integers(bmin, bmax + 1))
        y = int(rng.integers(0, h - by + 1))
        x = int(rng.integers(0, w - bx + 1))
        mask[y : y + by, x : x + bx] = True
        covered = int(mask.sum())
    out[mask] = 0.0
    return out


def _op_gaussian_noise(img, params, rng):
    return img + rng.normal(0.0, params["sigma"], size=img.shape)


def _op_sp_noise(img, params, rng):
    p = params["p"]
    h, w = img.shape[:2]
    u = rng.random((h, w))
    salt = rng.random((h, w)) < 0.5
    out = img.copy()
    corrupt = u < p
    out[corrupt, :] = np.where(salt[corrupt, np.newaxis], 1.0, 0.0)
    return out


_OPERATORS = {
    "gaussian_blur": _op_gaussian_blur,
    "motion_blur": _op_motion_blur,
    "rl": _op_rl,
    "sr": _op_sr,
    "ringing": _op_ringing,
    "defocus_blur": _op_defocus_blur,
    "jpeg": _op_jpeg,
    "poisson_noise": _op_poisson_noise,
    "inpainting": _op_inpainting,
    "gaussian_noise": _op_gaussian_noise,
    "sp_noise": _op_sp_noise,
}


def apply_degradation(image: np.ndarray, spec: DegradationSpec, seed: int) -> np.ndarray:
    """Apply one operator; bit-identical output for identical (image, spec, seed)."""
    img = as_image(image)
    rng = make_rng(seed, spec.id)
    out = _OPERATORS[spec.kind](img, spec.params, rng)
    out = np.clip(out, 0.0, 1.0)
    if out.shape != img.shape:
        raise ShapeError(f"{spec.kind} changed dimensions {img.shape} -> {out.shape}")
    return out


# --------------------------------------------------------------------------
# Corpus batching
# --------------------------------------------------------------------------


@dataclass
class ManifestEntry:
    source: str
    degradation: str
    seed: int
    output: str
    checksum: str


@dataclass
class CorpusManifest:
    header: dict
    entries: list[ManifestEntry] = field(default_factory=list)

    def by_degradation(self, degradation_id: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.degradation == degradation_id]

    @property
    def degradation_ids(self) -> list[str]:
        seen: list[str] = []
        for e in self.entries:
            if e.degradation not in seen:
                seen.append(e.degradation)
        return seen

    def to_dict(self) -> dict:
        return {"header": self.header, "entries": [asdict(e) for e in self.entries]}


def save_manifest(manifest: CorpusManifest, path: str | Path) -> None:
    Path(path).write_text(json.dumps(manifest.to_dict(), indent=2, sort_keys=True))


def load_manifest(path: str | Path) -> CorpusManifest:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid manifest JSON: {exc}") from exc
    if not isinstance(raw, dict) or "entries" not in raw or "header" not in raw:
        raise FormatError(f"{path}: manifest must contain 'header' and 'entries'")
    entries = []
    keys = set()
    for item in raw["entries"]:
        try:
            entry = ManifestEntry(**item)
        except TypeError as exc:
            raise FormatError(f"{path}: malformed manifest entry {item!r}") from exc
        if not entry.checksum:
            raise FormatError(f"{path}: entry missing checksum: {item!r}")
        triple = (entry.source, entry.degradation, entry.seed)
        if triple in keys:
            raise FormatError(f"{path}: duplicate (source, degradation, seed) triple {triple}")
        keys.add(triple)
        entries.append(entry)
    return CorpusManifest(header=raw["header"], entries=entries)


def list_corpus_images(corpus_dir: str | Path) -> list[Path]:
    corpus_dir = Path(corpus_dir)
    files = sorted(p for p in corpus_dir.iterdir() if p.suffix.lower() in _IMAGE_SUFFIXES)
    if not files:
        raise DataError(f"no readable images in {corpus_dir}")
    return files


def degrade_corpus(
    corpus_dir: str | Path,
    suite: list[DegradationSpec],
    seed: int,
    out_dir: str | Path,
    workers: int = 1,
    header_extra: dict | None = None,
) -> CorpusManifest:
    """Degrade every corpus image with every suite entry; write a manifest.

    Output files land in out_dir/<degradation id>/<source stem>.png and are
    deterministic for a fixed seed, including their checksums.
    """
    sources = list_corpus_images(corpus_dir)
    out_dir = Path(out_dir)
    ids = [s.id for s in suite]
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate degradation ids in suite")
    for spec in suite:
        (out_dir / spec.id).mkdir(parents=True, exist_ok=True)

    def job(src: Path, spec: DegradationSpec) -> ManifestEntry:
        image = load_image(src)
        item_seed = derive_key("corpus", seed, src.name) & _MASK64
        degraded = apply_degradation(image, spec, item_seed)
        out_path = out_dir / spec.id / (src.stem + ".png")
        save_image(degraded, out_path)
        digest = hashlib.sha256(out_path.read_bytes()).hexdigest()
        return ManifestEntry(
            source=str(src.resolve()),
            degradation=spec.id,
            seed=item_seed,
            output=str(out_path.resolve()),
            checksum=digest,
        )

    jobs = [(src, spec) for src in sources for spec in suite]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            entries = list(pool.map(lambda sp: job(*sp), jobs))
    else:
        entries = [job(src, spec) for src, spec in jobs]
    suite_order = {spec.id: i for i, spec in enumerate(suite)}
    entries.sort(key=lambda e: (suite_order[e.degradation], e.source))

    header = {
        "tool": _tool_identity(),
        "encoder": f"Pillow {PIL.__version__}",
        "seed": seed,
        "suite": [s.to_dict() for s in suite],
    }
    if header_extra:
        header.update(header_extra)
    return CorpusManifest(header=header, entries=entries)


def _tool_identity() -> dict:
    from . import __version__

    return {"name": "degsim", "version": __version__}
