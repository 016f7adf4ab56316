"""Bundled synthetic smoke corpus and the 4-degradation smoke suite.

Eight deterministic 256x256 RGB images (gradients, checkerboards, filtered
noise) let the whole pipeline run offline. Texture amplitudes are kept on a
common scale so feature statistics reflect the degradation rather than the
image content; the paired suite uses four strongly separated degradations
for selection self-consistency checks.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy import ndimage

from ._rng import make_rng
from .degrade import DegradationSpec, make_spec
from .image import as_image, save_image

SMOKE_SIDE = 256


def _gradient(horizontal: bool) -> np.ndarray:
    ramp = np.linspace(0.15, 0.85, SMOKE_SIDE)
    if horizontal:
        base = np.tile(ramp, (SMOKE_SIDE, 1))
    else:
        base = (ramp[:, None] + ramp[None, :]) / 2.0
    img = np.stack([base, np.roll(base, 17, axis=1), base[::-1]], axis=2)
    return as_image(img)


def _checkerboard(cell: int, amplitude: float) -> np.ndarray:
    idx = np.arange(SMOKE_SIDE) // cell
    board = ((idx[:, None] + idx[None, :]) % 2) * 2.0 - 1.0
    base = 0.5 + amplitude * board
    img = np.stack([base, np.roll(base, cell // 2, axis=0), base.T], axis=2)
    return as_image(img)


def _filtered_noise(seed: int, smooth_sigma: float, amplitude: float) -> np.ndarray:
    rng = make_rng("smoke", seed)
    noise = rng.normal(0.0, 1.0, size=(SMOKE_SIDE, SMOKE_SIDE, 3))
    smooth = ndimage.gaussian_filter(noise, sigma=(smooth_sigma, smooth_sigma, 0), mode="wrap")
    smooth /= smooth.std()
    return as_image(0.5 + amplitude * smooth)


def smoke_corpus() -> list[tuple[str, np.ndarray]]:
    return [
        ("grad_h", _gradient(horizontal=True)),
        ("grad_diag", _gradient(horizontal=False)),
        ("checker_08", _checkerboard(8, 0.06)),
        ("checker_24", _checkerboard(24, 0.08)),
        ("noise_soft", _filtered_noise(1, 6.0, 0.10)),
        ("noise_mid", _filtered_noise(2, 3.0, 0.09)),
        ("noise_fine", _filtered_noise(3, 1.5, 0.07)),
        ("noise_mix", _filtered_noise(4, 2.0, 0.08)),
    ]


def write_smoke_corpus(out_dir: str | Path) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, image in smoke_corpus():
        path = out_dir / f"{name}.png"
        save_image(image, path)
        paths.append(path)
    return paths


def smoke_suite() -> list[DegradationSpec]:
    """Four well-separated degradations for selection smoke checks."""
    return [
        make_spec("gaussian_blur", spec_id="gaussian_blur", sigma=3.0),
        make_spec("gaussian_noise", spec_id="gaussian_noise", sigma=50.0 / 255.0),
        make_spec("jpeg", spec_id="jpeg", quality=6),
        make_spec("sp_noise", spec_id="sp_noise", p=0.05),
    ]
