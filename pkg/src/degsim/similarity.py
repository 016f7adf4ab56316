"""Pairwise degradation similarity matrix and group statistics.

Entry (i, j) is the natural log of the symmetrized KL divergence between the
GGD fits of degradations i and j; smaller means more related. The diagonal
(and any identical-fit pair) carries a -inf sentinel that group statistics
never aggregate over.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError
from .ggd import NEG_INF, GGDParams, make_ggd, sym_log_kl


@dataclass
class SimilarityMatrix:
    labels: list[str]
    distances: np.ndarray  # (n, n) float64, -inf on the diagonal
    fits: dict[str, GGDParams]
    degenerate_pairs: list[tuple[str, str]]

    @property
    def n(self) -> int:
        return len(self.labels)

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise ValidationError(f"unknown degradation label {label!r}") from None

    def pair(self, a: str, b: str) -> float:
        return float(self.distances[self.index(a), self.index(b)])


@dataclass
class GroupStats:
    group: tuple[str, ...]
    mean_distance: float
    variance: float
    pair_count: int


def build_similarity_matrix(fits: dict[str, GGDParams]) -> SimilarityMatrix:
    """Assemble the symmetric log-KL distance matrix from per-degradation fits."""
    labels = list(fits.keys())
    if len(labels) < 2:
        raise ValidationError("need at least 2 degradations")
    if len(set(labels)) != len(labels):
        raise ValidationError("duplicate degradation labels")
    n = len(labels)
    dist = np.full((n, n), NEG_INF, dtype=np.float64)
    degenerate: list[tuple[str, str]] = []
    for i, j in combinations(range(n), 2):
        d = sym_log_kl(fits[labels[i]], fits[labels[j]])
        dist[i, j] = dist[j, i] = d
        if d == NEG_INF:
            degenerate.append((labels[i], labels[j]))
    return SimilarityMatrix(labels=labels, distances=dist, fits=dict(fits), degenerate_pairs=degenerate)


def group_stats(matrix: SimilarityMatrix, group) -> GroupStats:
    """Mean and population variance of the pairwise distances within a group."""
    members = tuple(group)
    if len(members) < 2:
        raise ValidationError("group statistics need at least 2 members")
    if len(set(members)) != len(members):
        raise ValidationError(f"group has repeated members: {members}")
    idx = [matrix.index(m) for m in members]
    values = [float(matrix.distances[a, b]) for a, b in combinations(idx, 2)]
    mean = sum(values) / len(values)
    if math.isinf(mean):
        variance = 0.0
    else:
        variance = sum((v - mean) ** 2 for v in values) / len(values)
    return GroupStats(group=members, mean_distance=mean, variance=variance, pair_count=len(values))


def save_matrix(matrix: SimilarityMatrix, path: str | Path, header: dict | None = None) -> None:
    """JSON form: labels, dense row-major distances (sentinel -> null), fits."""
    rows = [[None if math.isinf(v) else v for v in row] for row in matrix.distances.tolist()]
    payload = {
        "labels": matrix.labels,
        "distances": rows,
        "fits": {
            label: {"alpha": p.alpha, "sigma": p.sigma, "clamped": p.clamped}
            for label, p in matrix.fits.items()
        },
    }
    if header:
        payload["header"] = header
    Path(path).write_text(json.dumps(payload, indent=2))


def load_matrix(path: str | Path) -> SimilarityMatrix:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON: {exc}") from exc
    try:
        labels = list(raw["labels"])
        rows = raw["distances"]
        fits_raw = raw["fits"]
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{path}: missing similarity-matrix fields") from exc
    n = len(labels)
    if len(set(labels)) != n:
        raise FormatError(f"{path}: duplicate labels")
    if len(rows) != n or any(len(r) != n for r in rows):
        raise FormatError(f"{path}: distances must be {n}x{n}")
    dist = np.array([[NEG_INF if v is None else float(v) for v in row] for row in rows], dtype=np.float64)
    if not np.array_equal(dist, dist.T):
        raise FormatError(f"{path}: distance matrix is not symmetric")
    fits = {}
    for label in labels:
        entry = fits_raw.get(label)
        if entry is None:
            raise FormatError(f"{path}: missing fit for {label!r}")
        fits[label] = make_ggd(entry["alpha"], entry["sigma"], clamped=bool(entry.get("clamped", False)))
    degenerate = [
        (labels[i], labels[j])
        for i, j in combinations(range(n), 2)
        if math.isinf(dist[i, j])
    ]
    return SimilarityMatrix(labels=labels, distances=dist, fits=fits, degenerate_pairs=degenerate)
