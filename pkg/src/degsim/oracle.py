"""Performance oracles: P(model, degradation) lookups and the drop metric.

The grouping search only ever asks one question: what is the worst per-task
PSNR drop of a group's mix-training model against the single-task models?
Two interchangeable answers are provided: a table oracle replaying published
numbers, and a proxy oracle that trains a closed-form ridge restorer on a
degraded corpus at desk scale. A caching wrapper memoizes group evaluations
and persists them between runs.

Singleton semantics are fixed by definition: M_M({d}) is M_S(d), so the drop
of any singleton group is exactly 0. This makes the all-singletons partition
always feasible and guarantees the search terminates.
"""

from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ._rng import make_rng
from .degrade import CorpusManifest, load_manifest
from .errors import CoverageError, DataError, FormatError, ValidationError
from .image import PSNR_CAP_DB, load_image

INFEASIBLE = math.inf


def canonical_group_key(group) -> str:
    return "+".join(sorted(group))


class OracleInterface:
    """evaluate(group) -> {degradation: mix PSNR} or None for known-infeasible."""

    def __init__(self) -> None:
        self.calls = 0

    def evaluate(self, group) -> dict[str, float] | None:
        raise NotImplementedError

    def upper_bound(self, degradation_id: str) -> float:
        raise NotImplementedError

    def cost(self, group) -> float:
        """Monotone evaluation-cost metadata (never decreases with members)."""
        raise NotImplementedError

    def fingerprint(self) -> str:
        """Configuration hash; differing configs must not share a cache."""
        raise NotImplementedError


def delta_p(oracle: OracleInterface, group) -> float:
    """Worst per-task drop: max over members of upper_bound - mix PSNR.

    Singletons are 0 by definition and cost no evaluation. A None evaluation
    (explicitly-infeasible group) maps to +inf.
    """
    members = list(group)
    if not members:
        raise ValidationError("delta_p needs a non-empty group")
    if len(set(members)) != len(members):
        raise ValidationError(f"group has repeated members: {members}")
    if len(members) == 1:
        oracle.upper_bound(members[0])  # coverage check only
        return 0.0
    result = oracle.evaluate(members)
    if result is None:
        return INFEASIBLE
    drops = []
    for d in members:
        if d not in result:
            raise CoverageError(f"oracle evaluation of {canonical_group_key(members)} missing {d!r}")
        drops.append(oracle.upper_bound(d) - result[d])
    return max(drops)


# --------------------------------------------------------------------------
# Table oracle
# --------------------------------------------------------------------------


@dataclass
class OracleTable:
    """Published single-task and mix-training PSNRs, dB."""

    single_task: dict[str, float]
    mix_groups: dict[str, dict[str, float]]


def _reject_duplicate_keys(pairs):
    seen = {}
    for key, value in pairs:
        if key in seen:
            raise ValidationError(f"duplicate key {key!r} in oracle table")
        seen[key] = value
    return seen


def oracle_table_from_dict(raw: dict) -> OracleTable:
    if not isinstance(raw, dict):
        raise ValidationError("oracle table must be a JSON object")
    single = raw.get("single_task")
    groups = raw.get("mix_groups", {})
    if not isinstance(single, dict) or not single:
        raise ValidationError("oracle table needs a non-empty 'single_task' map")
    for d, v in single.items():
        if not isinstance(v, (int, float)) or not math.isfinite(v):
            raise ValidationError(f"single_task[{d!r}] must be a finite number")
    mix: dict[str, dict[str, float]] = {}
    for key, entry in groups.items():
        members = key.split("+")
        if len(members) < 2 or any(not m for m in members):
            raise ValidationError(f"malformed group key {key!r} (need >= 2 '+'-joined ids)")
        if key != canonical_group_key(members) or len(set(members)) != len(members):
            raise ValidationError(f"group key {key!r} is not a canonical sorted-id string")
        missing = [m for m in members if m not in single]
        if missing:
            raise CoverageError(f"group {key!r} references degradations with no single_task entry: {missing}")
        if not isinstance(entry, dict) or set(entry) != set(members):
            raise ValidationError(f"group {key!r} entry must map exactly its members to PSNRs")
        for d, v in entry.items():
            if not isinstance(v, (int, float)) or not math.isfinite(v):
                raise ValidationError(f"mix_groups[{key!r}][{d!r}] must be a finite number")
        mix[key] = {d: float(v) for d, v in entry.items()}
    return OracleTable(single_task={d: float(v) for d, v in single.items()}, mix_groups=mix)


def load_oracle_table(path: str | Path) -> OracleTable:
    try:
        raw = json.loads(Path(path).read_text(), object_pairs_hook=_reject_duplicate_keys)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON: {exc}") from exc
    return oracle_table_from_dict(raw)


class TableOracle(OracleInterface):
    """Replays a table of published numbers.

    missing="error" raises CoverageError for unknown groups (never invent
    PSNRs); missing="infeasible" reports them as failing verification, which
    is how replay searches over partial tables are run.
    """

    def __init__(self, table: OracleTable, missing: str = "error") -> None:
        super().__init__()
        if missing not in ("error", "infeasible"):
            raise ValidationError(f"missing policy must be 'error' or 'infeasible', got {missing!r}")
        self.table = table
        self.missing = missing

    def evaluate(self, group) -> dict[str, float] | None:
        self.calls += 1
        members = list(group)
        if len(members) == 1:
            return {members[0]: self.upper_bound(members[0])}
        key = canonical_group_key(members)
        entry = self.table.mix_groups.get(key)
        if entry is None:
            if self.missing == "infeasible":
                return None
            raise CoverageError(f"no mix-training entry for group {key!r}")
        return dict(entry)

    def upper_bound(self, degradation_id: str) -> float:
        try:
            return self.table.single_task[degradation_id]
        except KeyError:
            raise CoverageError(f"no single-task entry for {degradation_id!r}") from None

    def cost(self, group) -> float:
        return float(len(list(group)))

    def fingerprint(self) -> str:
        payload = json.dumps(
            {"single": self.table.single_task, "mix": self.table.mix_groups, "missing": self.missing},
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode()).hexdigest()


# --------------------------------------------------------------------------
# Proxy oracle
# --------------------------------------------------------------------------


@dataclass
class ProxyConfig:
    """Desk-scale proxy trainer knobs (the verification budget lives here)."""

    patch_size: int = 7
    ridge_lambda: float = 1e-4
    patches_per_image: int = 512
    holdout_fraction: float = 0.25

    def validate(self) -> "ProxyConfig":
        if self.patch_size < 3 or self.patch_size % 2 == 0:
            raise ValidationError("patch_size must be an odd integer >= 3")
        if self.ridge_lambda < 0:
            raise ValidationError("ridge_lambda must be >= 0")
        if self.patches_per_image < 1:
            raise ValidationError("patches_per_image must be >= 1")
        if not (0.0 < self.holdout_fraction < 1.0):
            raise ValidationError("holdout_fraction must be in (0, 1)")
        return self


@dataclass
class _ProxyData:
    xtx: np.ndarray
    xty: np.ndarray
    holdout_x: np.ndarray
    holdout_y: np.ndarray
    train_rows: int


class ProxyOracle(OracleInterface):
    """Ridge-regression patch restorer as a stand-in mix-training model.

    One linear map from p*p degraded patches to the clean center pixel is
    fitted per group (union of the members' training pairs); the singleton
    fit of the same family is the upper bound, so singleton drops are exactly
    zero. Held-out images are disjoint from the fit split by construction.
    """

    def __init__(self, manifest: CorpusManifest | str | Path, config: ProxyConfig, seed: int) -> None:
        super().__init__()
        self.manifest = manifest if isinstance(manifest, CorpusManifest) else load_manifest(manifest)
        self.config = config.validate()
        self.seed = seed
        self._data: dict[str, _ProxyData] = {}
        self._upper: dict[str, float] = {}

    # -- data preparation ---------------------------------------------------

    def _prepare(self, degradation_id: str) -> _ProxyData:
        if degradation_id in self._data:
            return self._data[degradation_id]
        entries = sorted(self.manifest.by_degradation(degradation_id), key=lambda e: e.source)
        if not entries:
            raise CoverageError(f"manifest has no entries for degradation {degradation_id!r}")
        n_hold = max(1, round(self.config.holdout_fraction * len(entries)))
        if len(entries) - n_hold < 1:
            raise DataError(f"not enough images for a train/holdout split of {degradation_id!r}")
        train, hold = entries[:-n_hold], entries[-n_hold:]
        p = self.config.patch_size
        dim = p * p + 1

        xtx = np.zeros((dim, dim), dtype=np.float64)
        xty = np.zeros(dim, dtype=np.float64)
        train_rows = 0
        hold_x, hold_y = [], []
        for split, items in (("train", train), ("hold", hold)):
            for entry in items:
                x_block, y_block = self._design_block(entry, degradation_id)
                if split == "train":
                    xtx += x_block.T @ x_block
                    xty += x_block.T @ y_block
                    train_rows += x_block.shape[0]
                else:
                    hold_x.append(x_block)
                    hold_y.append(y_block)
        if train_rows < 10 * p * p:
            raise DataError(
                f"insufficient training patches for {degradation_id!r}: {train_rows} < {10 * p * p}"
            )
        data = _ProxyData(
            xtx=xtx,
            xty=xty,
            holdout_x=np.concatenate(hold_x, axis=0),
            holdout_y=np.concatenate(hold_y, axis=0),
            train_rows=train_rows,
        )
        self._data[degradation_id] = data
        return data

    def _design_block(self, entry, degradation_id: str) -> tuple[np.ndarray, np.ndarray]:
        degraded = load_image(entry.output)
        clean = load_image(entry.source)
        if degraded.shape != clean.shape:
            raise DataError(f"dimension mismatch between {entry.output} and {entry.source}")
        p = self.config.patch_size
        r = p // 2
        h, w, channels = degraded.shape
        if h < p or w < p:
            raise DataError(f"image {entry.output} smaller than patch size {p}")
        rng = make_rng("proxy", self.seed, degradation_id, Path(entry.source).name)
        k = self.config.patches_per_image
        ys = rng.integers(r, h - r, size=k)
        xs = rng.integers(r, w - r, size=k)
        windows = sliding_window_view(degraded, (p, p), axis=(0, 1))  # (H-p+1, W-p+1, C, p, p)
        patches = windows[ys - r, xs - r]  # (k, C, p, p)
        x = patches.reshape(k * channels, p * p)
        x = np.concatenate([x, np.ones((x.shape[0], 1))], axis=1)
        y = clean[ys, xs, :].reshape(k * channels)
        return x, y

    # -- fitting and scoring --------------------------------------------------

    def _fit(self, xtx: np.ndarray, xty: np.ndarray, rows: int) -> np.ndarray:
        dim = xtx.shape[0]
        penalty = self.config.ridge_lambda * rows * np.eye(dim)
        return np.linalg.solve(xtx + penalty, xty)

    def _score(self, weights: np.ndarray, data: _ProxyData) -> float:
        preds = np.clip(data.holdout_x @ weights, 0.0, 1.0)
        mse = float(np.mean((preds - data.holdout_y) ** 2))
        if mse == 0.0:
            return PSNR_CAP_DB
        return 10.0 * math.log10(1.0 / mse)

    def upper_bound(self, degradation_id: str) -> float:
        if degradation_id not in self._upper:
            data = self._prepare(degradation_id)
            weights = self._fit(data.xtx, data.xty, data.train_rows)
            self._upper[degradation_id] = self._score(weights, data)
        return self._upper[degradation_id]

    def evaluate(self, group) -> dict[str, float]:
        self.calls += 1
        members = sorted(set(group))
        datas = {d: self._prepare(d) for d in members}
        xtx = sum(d.xtx for d in datas.values())
        xty = sum(d.xty for d in datas.values())
        rows = sum(d.train_rows for d in datas.values())
        weights = self._fit(xtx, xty, rows)
        return {d: self._score(weights, datas[d]) for d in members}

    def cost(self, group) -> float:
        return float(sum(self._prepare(d).train_rows for d in sorted(set(group))))

    def fingerprint(self) -> str:
        payload = json.dumps(
            {
                "config": [self.config.patch_size, self.config.ridge_lambda,
                           self.config.patches_per_image, self.config.holdout_fraction],
                "seed": self.seed,
                "checksums": sorted(e.checksum for e in self.manifest.entries),
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode()).hexdigest()


# --------------------------------------------------------------------------
# Caching wrapper
# --------------------------------------------------------------------------


class CachedOracle(OracleInterface):
    """Memoizes evaluate() by canonical group key, optionally on disk.

    The disk cache is keyed by the wrapped oracle's fingerprint; a different
    configuration silently starts a fresh cache, and a corrupt file is
    rebuilt with a warning.
    """

    def __init__(self, inner: OracleInterface, cache_path: str | Path | None = None) -> None:
        super().__init__()
        self.inner = inner
        self.cache_path = Path(cache_path) if cache_path is not None else None
        self.hits = 0
        self.misses = 0
        self._memo: dict[str, dict[str, float] | None] = {}
        self._load_cache()

    @property
    def inner_calls(self) -> int:
        return self.inner.calls

    def _load_cache(self) -> None:
        if self.cache_path is None or not self.cache_path.exists():
            return
        try:
            raw = json.loads(self.cache_path.read_text())
            if raw.get("fingerprint") != self.inner.fingerprint():
                return  # config changed: invalidate
            entries = raw["entries"]
            self._memo = {k: (None if v is None else {d: float(x) for d, x in v.items()}) for k, v in entries.items()}
        except Exception:
            warnings.warn(f"oracle cache {self.cache_path} is corrupt; rebuilding", stacklevel=2)
            self._memo = {}

    def _persist(self) -> None:
        if self.cache_path is None:
            return
        payload = {"fingerprint": self.inner.fingerprint(), "entries": self._memo}
        self.cache_path.write_text(json.dumps(payload, sort_keys=True))

    def evaluate(self, group) -> dict[str, float] | None:
        self.calls += 1
        key = canonical_group_key(group)
        if key in self._memo:
            self.hits += 1
            result = self._memo[key]
            return dict(result) if result is not None else None
        self.misses += 1
        result = self.inner.evaluate(group)
        self._memo[key] = dict(result) if result is not None else None
        self._persist()
        return dict(result) if result is not None else None

    def upper_bound(self, degradation_id: str) -> float:
        return self.inner.upper_bound(degradation_id)

    def cost(self, group) -> float:
        return self.inner.cost(group)

    def fingerprint(self) -> str:
        return self.inner.fingerprint()


def cached(oracle: OracleInterface, cache_path: str | Path | None = None) -> CachedOracle:
    return CachedOracle(oracle, cache_path)
