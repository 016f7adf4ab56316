"""Bundled published PSNR numbers and replay arithmetic.

The data file transcribes the two backbone result tables (single-task upper
bounds, the mix-all baseline, and the grouped-training rows) for the 11-task
suite, plus the seven similarity-gap experiments, so the drop arithmetic and
the grouping search can be replayed offline.
"""

from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources

from .errors import ValidationError
from .oracle import OracleTable, TableOracle, canonical_group_key, delta_p

PUBLISHED_DELTA_DB = 0.7

BACKBONES = ("restormer", "srresnet")


@lru_cache(maxsize=1)
def load_published_data() -> dict:
    text = resources.files("degsim").joinpath("data/published_psnr.json").read_text()
    return json.loads(text)


def published_suite() -> list[str]:
    return list(load_published_data()["suite"])


def published_groups() -> list[tuple[str, ...]]:
    return [tuple(g) for g in load_published_data()["published_groups"]]


def _backbone_rows(backbone: str) -> dict:
    data = load_published_data()
    if backbone not in data["backbones"]:
        raise ValidationError(f"unknown backbone {backbone!r}; have {sorted(data['backbones'])}")
    return data["backbones"][backbone]


def table1_oracle_table(backbone: str = "restormer", include_baseline: bool = True) -> OracleTable:
    """OracleTable with the four published groups (and optionally the all-11
    baseline group) backed by the grouped-training and baseline rows."""
    rows = _backbone_rows(backbone)
    suite = published_suite()
    mix_groups = {}
    for group in published_groups():
        key = canonical_group_key(group)
        mix_groups[key] = {d: rows["grouped"][d] for d in group}
    if include_baseline:
        mix_groups[canonical_group_key(suite)] = dict(rows["mix_all_baseline"])
    return OracleTable(single_task=dict(rows["single_task"]), mix_groups=mix_groups)


def table1_oracle(backbone: str = "restormer", missing: str = "infeasible", include_baseline: bool = True) -> TableOracle:
    return TableOracle(table1_oracle_table(backbone, include_baseline), missing=missing)


def replay_published_groups(backbone: str = "restormer", delta: float = PUBLISHED_DELTA_DB) -> dict:
    """Per-group worst drops and suite-average gains of the grouped models."""
    rows = _backbone_rows(backbone)
    suite = published_suite()
    oracle = table1_oracle(backbone, missing="error")
    groups = []
    for index, group in enumerate(published_groups(), start=1):
        drop = delta_p(oracle, group)
        groups.append(
            {
                "group_id": f"C{index}",
                "members": list(group),
                "delta_p": drop,
                "feasible": drop <= delta,
            }
        )
    n = len(suite)
    gain_upper = sum(rows["grouped"][d] - rows["single_task"][d] for d in suite) / n
    gain_baseline = sum(rows["grouped"][d] - rows["mix_all_baseline"][d] for d in suite) / n
    return {
        "backbone": backbone,
        "delta": delta,
        "groups": groups,
        "all_feasible": all(g["feasible"] for g in groups),
        "avg_gain_vs_upper_bound": gain_upper,
        "avg_gain_vs_baseline": gain_baseline,
    }


def similarity_gap_experiments() -> list[dict]:
    return list(load_published_data()["similarity_gap_experiments"])


def replay_similarity_gap(experiment: dict) -> dict:
    """Recompute each subgroup's per-task gains and Eq.-style worst drop."""
    out = {"name": experiment["name"], "feature": experiment["feature"], "subgroups": []}
    for sub in experiment["subgroups"]:
        members = sub["members"]
        gains = {d: sub["mix"][d] - sub["upper"][d] for d in members}
        worst_drop = max(sub["upper"][d] - sub["mix"][d] for d in members)
        out["subgroups"].append(
            {
                "label": sub["label"],
                "dist": sub["dist"],
                "members": list(members),
                "gain": gains,
                "avg_gain": sum(gains.values()) / len(members),
                "delta_p": worst_drop,
            }
        )
    return out
