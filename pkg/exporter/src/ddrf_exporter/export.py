"""Run a user-supplied pretrained network over images and emit DDRF files.

The exporter hooks one named activation site of a torch model, runs the
model in eval mode over every image in a directory, and writes each image's
activation tensor (or one pooled tensor per directory) in the DDRF
interchange format. Features are emitted raw: no normalization happens
here, so the consumer's centering step is the single statistics entry
point.

DDRF layout (little-endian): magic b"DDRF", u32 version = 1, u32 ndim,
u64 * ndim dims, float32 payload, optional u32-length-prefixed UTF-8
metadata recording the model id and layer selector.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image


class ExportError(Exception):
    """Exporter failure: unloadable model, unresolvable layer, bad inputs."""


DDRF_MAGIC = b"DDRF"
DDRF_VERSION = 1

_IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


@dataclass
class ExportJob:
    model_path: str
    layer: str
    input_dir: str
    output_dir: str
    device: str = "cpu"
    batch_size: int = 8
    pooled: bool = False


def write_ddrf(data: np.ndarray, path: Path, metadata: str = "") -> None:
    data = np.asarray(data, dtype=np.float32)
    if data.size == 0 or any(d <= 0 for d in data.shape):
        raise ExportError(f"refusing to write empty tensor of shape {data.shape}")
    if not np.all(np.isfinite(data)):
        raise ExportError("activation tensor contains non-finite values")
    blob = bytearray()
    blob += DDRF_MAGIC
    blob += struct.pack("<I", DDRF_VERSION)
    blob += struct.pack("<I", data.ndim)
    blob += struct.pack(f"<{data.ndim}Q", *data.shape)
    blob += np.ascontiguousarray(data, dtype="<f4").tobytes()
    if metadata:
        encoded = metadata.encode("utf-8")
        blob += struct.pack("<I", len(encoded))
        blob += encoded
    path.write_bytes(bytes(blob))


def load_model(model_path: str, device: torch.device) -> torch.nn.Module:
    """Load a pickled eager torch module (torch.save(model)).

    TorchScript archives are rejected with guidance: scripted modules do not
    support the forward hooks activation capture relies on.
    """
    path = Path(model_path)
    if not path.exists():
        raise ExportError(f"model file not found: {path}")
    try:
        model = torch.load(str(path), map_location=device, weights_only=False)
    except Exception as eager_exc:
        try:
            torch.jit.load(str(path), map_location="cpu")
        except Exception:
            raise ExportError(f"cannot load model {path}: {eager_exc}") from eager_exc
        raise ExportError(
            f"{path} is a TorchScript archive; activation hooks need an eager module "
            "(save it with torch.save(model, path))"
        ) from None
    if isinstance(model, torch.jit.ScriptModule):
        raise ExportError(
            f"{path} contains a TorchScript module; activation hooks need an eager module"
        )
    if not isinstance(model, torch.nn.Module):
        raise ExportError(f"{path} did not contain a torch module")
    model.eval()
    return model


def resolve_layer(model: torch.nn.Module, selector: str) -> torch.nn.Module:
    """Exact-name lookup among named modules; must hit exactly one site."""
    matches = [module for name, module in model.named_modules() if name == selector]
    if not matches:
        available = [name for name, _ in model.named_modules() if name]
        raise ExportError(
            f"layer selector {selector!r} matches no module; available: {available[:20]}"
        )
    if len(matches) > 1:
        raise ExportError(f"layer selector {selector!r} is ambiguous ({len(matches)} sites)")
    return matches[0]


def pick_device(preference: str) -> torch.device:
    if preference.startswith("cuda") and not torch.cuda.is_available():
        warnings.warn("CUDA requested but unavailable; falling back to CPU", stacklevel=2)
        return torch.device("cpu")
    return torch.device(preference)


def _load_image_tensor(path: Path) -> torch.Tensor:
    with Image.open(path) as pil:
        if pil.mode not in ("L", "RGB"):
            pil = pil.convert("RGB")
        arr = np.asarray(pil, dtype=np.float32) / 255.0
    if arr.ndim == 2:
        arr = arr[:, :, np.newaxis]
    return torch.from_numpy(arr.transpose(2, 0, 1))  # CHW in [0, 1]


def export_features(job: ExportJob) -> list[Path]:
    """One DDRF per input image, or one pooled DDRF in pooled mode."""
    device = pick_device(job.device)
    model = load_model(job.model_path, device)
    site = resolve_layer(model, job.layer)

    input_dir = Path(job.input_dir)
    images = sorted(p for p in input_dir.iterdir() if p.suffix.lower() in _IMAGE_SUFFIXES)
    if not images:
        raise ExportError(f"no images under {input_dir}")
    output_dir = Path(job.output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)

    captured: list[torch.Tensor] = []

    def hook(_module, _inputs, output):
        if not isinstance(output, torch.Tensor):
            raise ExportError(f"activation site {job.layer!r} does not emit a tensor")
        captured.append(output.detach().to("cpu"))

    handle = site.register_forward_hook(hook)
    metadata = f"model={Path(job.model_path).name}|layer={job.layer}"
    written: list[Path] = []
    pooled_blocks: list[np.ndarray] = []
    try:
        with torch.no_grad():
            for start in range(0, len(images), max(1, job.batch_size)):
                chunk = images[start : start + max(1, job.batch_size)]
                batch = torch.stack([_load_image_tensor(p) for p in chunk]).to(device)
                captured.clear()
                model(batch)
                if not captured:
                    raise ExportError(f"activation site {job.layer!r} never fired")
                activations = captured[-1].numpy()
                if activations.shape[0] != len(chunk):
                    raise ExportError(
                        f"activation batch dimension {activations.shape[0]} does not match input {len(chunk)}"
                    )
                for image_path, features in zip(chunk, activations):
                    if job.pooled:
                        pooled_blocks.append(features[np.newaxis])
                    else:
                        out_path = output_dir / (image_path.stem + ".ddrf")
                        write_ddrf(features, out_path, metadata)
                        written.append(out_path)
    finally:
        handle.remove()

    if job.pooled:
        stacked = np.concatenate(pooled_blocks, axis=0)
        out_path = output_dir / (input_dir.name + "_pooled.ddrf")
        write_ddrf(stacked, out_path, metadata)
        written.append(out_path)
    return written
