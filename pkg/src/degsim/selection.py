"""Adaptive group selection for an unknown input and OOD prediction.

An input image's degradation profile is estimated by self-augmentation:
crop it into overlapping patches, extract features, pool, and fit one GGD.
Each candidate group carries the component-wise mean of its members' GGD
parameters; the group minimizing the KL divergence to the input's fit wins,
and the winning divergence against a threshold tau predicts whether the
input is in-distribution, with no restoration inference involved.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import DataError, FormatError, ValidationError
from .features import FeatureTensor, center_and_flatten
from .ggd import GGDParams, fit_ggd, kl_ggd, make_ggd
from .image import crop_patches

DEFAULT_TAU = 4.0

IN_DISTRIBUTION = "in-distribution"
OUT_OF_DISTRIBUTION = "out-of-distribution"

Extractor = Callable[[list[np.ndarray]], FeatureTensor]


@dataclass
class PatchConfig:
    patch_size: int = 64
    stride: int = 32
    min_patches: int = 16


@dataclass
class GroupProfile:
    group_id: str
    members: tuple[str, ...]
    avg_ggd: GGDParams
    member_ggds: dict[str, GGDParams]


@dataclass
class SelectionResult:
    chosen_group_id: str
    divergence: float
    divergences: dict[str, float]
    verdict: str | None = None
    threshold: float | None = None


def group_average_ggd(member_ggds: Sequence[GGDParams]) -> GGDParams:
    """Arithmetic mean of alpha and sigma; beta recomputed from the means."""
    if not member_ggds:
        raise ValidationError("need at least one member GGD")
    alpha = sum(p.alpha for p in member_ggds) / len(member_ggds)
    sigma = sum(p.sigma for p in member_ggds) / len(member_ggds)
    return make_ggd(alpha, sigma)


def build_profiles(groups: Sequence[Sequence[str]], fits: dict[str, GGDParams]) -> list[GroupProfile]:
    """One profile per group, ids C1..Cm in declaration order."""
    profiles = []
    for index, group in enumerate(groups, start=1):
        members = tuple(group)
        if not members:
            raise ValidationError("empty group in partition scheme")
        missing = [d for d in members if d not in fits]
        if missing:
            raise ValidationError(f"no GGD fit for {missing}")
        member_ggds = {d: fits[d] for d in members}
        profiles.append(
            GroupProfile(
                group_id=f"C{index}",
                members=members,
                avg_ggd=group_average_ggd([member_ggds[d] for d in members]),
                member_ggds=member_ggds,
            )
        )
    return profiles


def estimate_input_ggd(
    image: np.ndarray, extractor: Extractor, patch_cfg: PatchConfig | None = None
) -> GGDParams:
    """Self-augmentation: patches -> features -> pooled centered values -> fit."""
    cfg = patch_cfg or PatchConfig()
    patches = crop_patches(image, cfg.patch_size, cfg.stride)
    if len(patches) < cfg.min_patches:
        raise DataError(
            f"image yields {len(patches)} patches; need at least {cfg.min_patches} "
            f"(patch {cfg.patch_size}, stride {cfg.stride})"
        )
    tensor = extractor(patches.patches)
    return fit_ggd(center_and_flatten(tensor))


def select_model(
    input_ggd: GGDParams, profiles: Sequence[GroupProfile], kl_order: str = "group_first"
) -> SelectionResult:
    """Pick the group with minimal KL divergence to the input's fit.

    kl_order="group_first" computes D(group || input) (the reference
    direction); "input_first" is available for ablation. Ties resolve to the
    earliest-declared group.
    """
    if not profiles:
        raise ValidationError("need at least one group profile")
    if kl_order not in ("group_first", "input_first"):
        raise ValidationError(f"kl_order must be 'group_first' or 'input_first', got {kl_order!r}")
    divergences = {}
    for profile in profiles:
        if kl_order == "group_first":
            divergences[profile.group_id] = kl_ggd(profile.avg_ggd, input_ggd)
        else:
            divergences[profile.group_id] = kl_ggd(input_ggd, profile.avg_ggd)
    chosen = min(profiles, key=lambda pr: divergences[pr.group_id]).group_id
    return SelectionResult(chosen_group_id=chosen, divergence=divergences[chosen], divergences=divergences)


def predict_generalization(result: SelectionResult, tau: float = DEFAULT_TAU) -> SelectionResult:
    """In-distribution iff the winning divergence <= tau (boundary inclusive)."""
    if not (tau >= 0):
        raise ValidationError(f"tau must be >= 0, got {tau}")
    verdict = IN_DISTRIBUTION if result.divergence <= tau else OUT_OF_DISTRIBUTION
    return replace(result, verdict=verdict, threshold=tau)


# --------------------------------------------------------------------------
# Profile serialization
# --------------------------------------------------------------------------


def save_profiles(profiles: Sequence[GroupProfile], path: str | Path, header: dict | None = None) -> None:
    payload = {
        "groups": [
            {
                "id": pr.group_id,
                "members": list(pr.members),
                "avg": {"alpha": pr.avg_ggd.alpha, "sigma": pr.avg_ggd.sigma, "beta": pr.avg_ggd.beta},
                "member_params": {
                    d: {"alpha": p.alpha, "sigma": p.sigma} for d, p in pr.member_ggds.items()
                },
            }
            for pr in profiles
        ]
    }
    if header:
        payload["header"] = header
    Path(path).write_text(json.dumps(payload, indent=2))


def load_profiles(path: str | Path) -> list[GroupProfile]:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON: {exc}") from exc
    groups = raw.get("groups")
    if not isinstance(groups, list) or not groups:
        raise FormatError(f"{path}: profile file needs a non-empty 'groups' array")
    profiles = []
    for item in groups:
        try:
            members = tuple(item["members"])
            member_ggds = {
                d: make_ggd(v["alpha"], v["sigma"]) for d, v in item["member_params"].items()
            }
            avg = make_ggd(item["avg"]["alpha"], item["avg"]["sigma"])
            profiles.append(
                GroupProfile(
                    group_id=str(item["id"]), members=members, avg_ggd=avg, member_ggds=member_ggds
                )
            )
        except (KeyError, TypeError) as exc:
            raise FormatError(f"{path}: malformed profile entry {item!r}") from exc
    return profiles
