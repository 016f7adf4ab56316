"""Multi-command pipeline entry point.

Subcommands mirror the pipeline order: degrade -> fit -> similarity ->
group -> profile -> select -> predict, plus replay-table1 for the bundled
published numbers and smoke-corpus to materialize the synthetic test
corpus. All interchange is JSON (DDRF binaries for feature tensors); every
artifact embeds the tool version and the effective configuration.

Exit codes: 0 ok, 2 configuration, 3 data/artifact, 4 budget or incomplete.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import __version__
from .degrade import degrade_corpus, load_manifest, load_suite, save_manifest
from .errors import (
    CoverageError,
    DataError,
    DegsimError,
    FormatError,
    SearchBudgetExceeded,
    ShapeError,
    ValidationError,
)
from .features import extract_builtin, ingest_features, center_and_flatten
from .ggd import fit_ggd, make_ggd
from .grouping import SearchConfig, search_pipeline
from .image import load_image
from .oracle import ProxyConfig, ProxyOracle, TableOracle, cached, load_oracle_table
from .published import (
    PUBLISHED_DELTA_DB,
    replay_published_groups,
)
from .selection import (
    DEFAULT_TAU,
    PatchConfig,
    build_profiles,
    estimate_input_ggd,
    load_profiles,
    predict_generalization,
    save_profiles,
    select_model,
)
from .similarity import build_similarity_matrix, load_matrix, save_matrix
from .smoke import write_smoke_corpus

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_BUDGET = 4

CONFIG_DEFAULTS: dict = {
    "corpus_dir": None,
    "suite": None,
    "out_dir": None,
    "seed": 0,
    "workers": 1,
    "extractor": {"kind": "builtin", "bank_seed": 0},
    "fit_min_count": 1000,
    "delta": PUBLISHED_DELTA_DB,
    "tie_epsilon": 0.05,
    "budget": None,
    "emit_all_solutions": False,
    "oracle": None,
    "tau": DEFAULT_TAU,
    "kl_order": "group_first",
    "patch": {"patch_size": 64, "stride": 32, "min_patches": 16},
    "cache_dir": None,
}

_PATH_KEYS = ("corpus_dir", "suite", "out_dir", "cache_dir")


def validate_config(path: str | Path | None, strict: bool = True) -> dict:
    """Load a run config, fill defaults, normalize paths, check ranges."""
    merged = json.loads(json.dumps(CONFIG_DEFAULTS))  # deep copy
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ValidationError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid config JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ValidationError(f"{path}: config must be a JSON object")
        unknown = set(raw) - set(CONFIG_DEFAULTS)
        if strict and unknown:
            raise ValidationError(f"{path}: unknown config keys {sorted(unknown)}")
        for key in set(raw) & set(CONFIG_DEFAULTS):
            merged[key] = raw[key]
    for key in _PATH_KEYS:
        if merged.get(key) is not None:
            merged[key] = str(Path(merged[key]).expanduser().resolve())
    if merged["corpus_dir"] is not None and not Path(merged["corpus_dir"]).is_dir():
        raise ValidationError(f"corpus_dir does not exist: {merged['corpus_dir']}")
    if merged["suite"] is not None and not Path(merged["suite"]).is_file():
        raise ValidationError(f"suite file does not exist: {merged['suite']}")
    if not isinstance(merged["seed"], int):
        raise ValidationError("seed must be an integer")
    if not (isinstance(merged["delta"], (int, float)) and merged["delta"] > 0):
        raise ValidationError(f"delta must be > 0, got {merged['delta']}")
    if merged["tie_epsilon"] < 0:
        raise ValidationError("tie_epsilon must be >= 0")
    if not (isinstance(merged["workers"], int) and merged["workers"] >= 1):
        raise ValidationError("workers must be an integer >= 1")
    if merged["tau"] < 0:
        raise ValidationError("tau must be >= 0")
    if not isinstance(merged["patch"], dict):
        raise ValidationError("patch must be an object")
    unknown_patch = set(merged["patch"]) - set(CONFIG_DEFAULTS["patch"])
    if unknown_patch:
        raise ValidationError(f"unknown patch config keys {sorted(unknown_patch)}")
    merged["patch"] = {**CONFIG_DEFAULTS["patch"], **merged["patch"]}
    for key, value in merged["patch"].items():
        if not (isinstance(value, int) and value >= 1):
            raise ValidationError(f"patch.{key} must be an integer >= 1")
    if merged["cache_dir"] is None and os.environ.get("DEGSIM_CACHE_DIR"):
        merged["cache_dir"] = str(Path(os.environ["DEGSIM_CACHE_DIR"]).expanduser().resolve())
    return merged


def _artifact(payload: dict, config_echo: dict) -> dict:
    return {"header": {"tool": {"name": "degsim", "version": __version__}, "config": config_echo}, **payload}


def _write_json(path: str | Path, payload: dict) -> None:
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(payload, indent=2))


def _require(value, name: str):
    if value is None:
        raise ValidationError(f"missing required option/config field: {name}")
    return value


def _make_extractor(extractor_cfg: dict):
    kind = extractor_cfg.get("kind", "builtin")
    if kind == "builtin":
        bank_seed = int(extractor_cfg.get("bank_seed", 0))
        return lambda images: extract_builtin(images, bank_seed), f"builtin-bank-v1(seed={bank_seed})"
    raise ValidationError(f"extractor kind {kind!r} not usable here (DDRF features are fitted via 'fit --ddrf-dir')")


# --------------------------------------------------------------------------
# Subcommands
# --------------------------------------------------------------------------


def cmd_degrade(args) -> int:
    cfg = validate_config(args.config)
    corpus_dir = _require(args.corpus or cfg["corpus_dir"], "corpus_dir")
    suite_path = _require(args.suite or cfg["suite"], "suite")
    out_dir = Path(_require(args.out or cfg["out_dir"], "out_dir"))
    seed = args.seed if args.seed is not None else cfg["seed"]
    workers = args.workers or cfg["workers"]
    suite = load_suite(suite_path)
    echo = {"command": "degrade", "corpus_dir": str(corpus_dir), "suite": str(suite_path),
            "seed": seed, "workers": workers, "out_dir": str(out_dir)}
    manifest = degrade_corpus(corpus_dir, suite, seed, out_dir, workers=workers, header_extra={"config": echo})
    save_manifest(manifest, out_dir / "manifest.json")
    print(json.dumps({"manifest": str(out_dir / "manifest.json"), "entries": len(manifest.entries)}))
    return EXIT_OK


def cmd_fit(args) -> int:
    cfg = validate_config(args.config)
    out_path = _require(args.out, "--out")
    if not args.ddrf_dir and cfg["extractor"].get("kind") == "ddrf":
        args.ddrf_dir = cfg["extractor"].get("dir")
        if not args.ddrf_dir:
            raise ValidationError("extractor kind 'ddrf' needs a 'dir' field")
    fits: dict[str, dict] = {}
    if args.ddrf_dir:
        ddrf_dir = Path(args.ddrf_dir)
        files = sorted(ddrf_dir.glob("*.ddrf"))
        if args.manifest:
            manifest = load_manifest(args.manifest)
            wanted = manifest.degradation_ids
            files = [ddrf_dir / f"{d}.ddrf" for d in wanted]
        if not files:
            raise DataError(f"no .ddrf feature files under {ddrf_dir}")
        extractor_id = "ddrf"
        for f in files:
            if not Path(f).exists():
                raise DataError(f"missing feature file {f} (produce it with the exporter)")
            tensor = ingest_features(f)
            params = fit_ggd(center_and_flatten(tensor), min_count=cfg["fit_min_count"])
            fits[Path(f).stem] = _params_dict(params, tensor.data.size)
    else:
        manifest = load_manifest(_require(args.manifest, "--manifest"))
        extractor_cfg = dict(cfg["extractor"])
        if args.bank_seed is not None:
            extractor_cfg = {"kind": "builtin", "bank_seed": args.bank_seed}
        extractor, extractor_id = _make_extractor(extractor_cfg)
        for degradation_id in manifest.degradation_ids:
            images = [load_image(e.output) for e in manifest.by_degradation(degradation_id)]
            tensor = extractor(images)
            params = fit_ggd(center_and_flatten(tensor), min_count=cfg["fit_min_count"])
            fits[degradation_id] = _params_dict(params, tensor.data.size)
    echo = {"command": "fit", "extractor": extractor_id, "manifest": args.manifest, "ddrf_dir": args.ddrf_dir}
    _write_json(out_path, _artifact({"fits": fits, "extractor": extractor_id}, echo))
    print(json.dumps({"fits": out_path, "degradations": sorted(fits)}))
    return EXIT_OK


def _params_dict(params, sample_count: int) -> dict:
    return {
        "alpha": params.alpha,
        "sigma": params.sigma,
        "beta": params.beta,
        "clamped": params.clamped,
        "sample_count": int(sample_count),
    }


def load_fits(path: str | Path) -> dict:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON: {exc}") from exc
    table = raw.get("fits")
    if not isinstance(table, dict) or not table:
        raise FormatError(f"{path}: fits file needs a non-empty 'fits' map (produce it with 'degsim fit')")
    return {d: make_ggd(v["alpha"], v["sigma"], clamped=bool(v.get("clamped", False))) for d, v in table.items()}


def cmd_similarity(args) -> int:
    fits = load_fits(args.fits)
    matrix = build_similarity_matrix(fits)
    echo = {"command": "similarity", "fits": args.fits}
    save_matrix(matrix, args.out, header={"tool": {"name": "degsim", "version": __version__}, "config": echo})
    print(json.dumps({"matrix": args.out, "labels": matrix.labels, "degenerate_pairs": matrix.degenerate_pairs}))
    return EXIT_OK


def _make_oracle(args, cfg):
    if args.oracle_table:
        table = load_oracle_table(args.oracle_table)
        return TableOracle(table, missing=args.oracle_missing), {"kind": "table", "path": args.oracle_table,
                                                                 "missing": args.oracle_missing}
    oracle_cfg = cfg.get("oracle") or {}
    if args.manifest or oracle_cfg.get("kind") == "proxy":
        manifest_path = args.manifest or oracle_cfg.get("manifest")
        if manifest_path is None:
            raise ValidationError("proxy oracle needs --manifest (or oracle.manifest in config)")
        proxy_cfg = ProxyConfig(
            patch_size=int(oracle_cfg.get("patch_size", 7)),
            ridge_lambda=float(oracle_cfg.get("ridge_lambda", 1e-4)),
            patches_per_image=int(oracle_cfg.get("patches_per_image", 512)),
            holdout_fraction=float(oracle_cfg.get("holdout_fraction", 0.25)),
        )
        seed = args.seed if args.seed is not None else cfg["seed"]
        return ProxyOracle(manifest_path, proxy_cfg, seed), {"kind": "proxy", "manifest": str(manifest_path),
                                                             "seed": seed}
    if oracle_cfg.get("kind") == "table":
        table = load_oracle_table(oracle_cfg["path"])
        missing = oracle_cfg.get("missing", "infeasible")
        return TableOracle(table, missing=missing), {"kind": "table", "path": oracle_cfg["path"], "missing": missing}
    raise ValidationError("no oracle specified: pass --oracle-table or --manifest (proxy), or set 'oracle' in config")


def cmd_group(args) -> int:
    cfg = validate_config(args.config)
    matrix = load_matrix(args.matrix)
    oracle, oracle_echo = _make_oracle(args, cfg)
    delta = args.delta if args.delta is not None else cfg["delta"]
    tie_epsilon = args.tie_epsilon if args.tie_epsilon is not None else cfg["tie_epsilon"]
    budget = args.budget if args.budget is not None else cfg["budget"]
    search_cfg = SearchConfig(
        delta=delta,
        tie_epsilon=tie_epsilon,
        max_oracle_calls=budget,
        emit_all_solutions=bool(args.emit_all or cfg["emit_all_solutions"]),
    )
    cache_dir = cfg["cache_dir"]
    if cache_dir:
        Path(cache_dir).mkdir(parents=True, exist_ok=True)
        oracle_cached = cached(oracle, Path(cache_dir) / "oracle_cache.json")
    else:
        oracle_cached = cached(oracle)
    report = search_pipeline(matrix, oracle_cached, search_cfg, prune=not args.no_prune)
    result = report.result
    echo = {"command": "group", "matrix": args.matrix, "oracle": oracle_echo, "delta": delta,
            "tie_epsilon": tie_epsilon, "budget": budget, "emit_all_solutions": search_cfg.emit_all_solutions,
            "prune": not args.no_prune}
    payload = {
        "m": result.m,
        "incomplete": result.incomplete,
        "lmax": report.lmax,
        "oracle_calls": oracle.calls,
        "solve_calls": result.solve_calls,
        "pruning": {
            "lmax_calls": report.lmax_calls,
            "per_level_calls": report.prune_calls,
            "kept": report.level_kept,
            "total": report.level_total,
        },
        "schemes": [
            {"groups": [list(g) for g in s.groups], "delta_p": s.delta_p, "feasible": s.feasible}
            for s in result.schemes
        ],
    }
    _write_json(args.out, _artifact(payload, echo))
    print(json.dumps({"report": args.out, "m": result.m, "incomplete": result.incomplete}))
    return EXIT_BUDGET if result.incomplete else EXIT_OK


def cmd_profile(args) -> int:
    fits = load_fits(args.fits)
    report = json.loads(Path(args.report).read_text())
    schemes = report.get("schemes")
    if not schemes:
        raise FormatError(f"{args.report}: no schemes in report (produce it with 'degsim group')")
    index = args.scheme_index
    if not (0 <= index < len(schemes)):
        raise ValidationError(f"scheme index {index} out of range (report has {len(schemes)})")
    groups = [tuple(g) for g in schemes[index]["groups"]]
    profiles = build_profiles(groups, fits)
    echo = {"command": "profile", "fits": args.fits, "report": args.report, "scheme_index": index}
    save_profiles(profiles, args.out, header={"tool": {"name": "degsim", "version": __version__}, "config": echo})
    print(json.dumps({"profiles": args.out, "groups": [list(p.members) for p in profiles]}))
    return EXIT_OK


def cmd_select(args) -> int:
    cfg = validate_config(args.config)
    profiles = load_profiles(args.profiles)
    image = load_image(args.image)
    patch_cfg = PatchConfig(**cfg["patch"])
    extractor_cfg = dict(cfg["extractor"])
    if args.bank_seed is not None:
        extractor_cfg = {"kind": "builtin", "bank_seed": args.bank_seed}
    extractor, extractor_id = _make_extractor(extractor_cfg)
    tau = args.tau if args.tau is not None else cfg["tau"]
    input_ggd = estimate_input_ggd(image, extractor, patch_cfg)
    result = predict_generalization(select_model(input_ggd, profiles, kl_order=cfg["kl_order"]), tau)
    echo = {"command": "select", "image": args.image, "profiles": args.profiles,
            "extractor": extractor_id, "tau": tau, "kl_order": cfg["kl_order"],
            "patch": cfg["patch"]}
    payload = {
        "input_ggd": {"alpha": input_ggd.alpha, "sigma": input_ggd.sigma},
        "chosen_group_id": result.chosen_group_id,
        "divergence": result.divergence,
        "divergences": result.divergences,
        "verdict": result.verdict,
        "threshold": result.threshold,
        "chosen_members": list(next(p.members for p in profiles if p.group_id == result.chosen_group_id)),
    }
    _write_json(args.out, _artifact(payload, echo))
    print(json.dumps({"selection": args.out, "chosen": result.chosen_group_id, "verdict": result.verdict}))
    return EXIT_OK


def cmd_predict(args) -> int:
    raw = json.loads(Path(args.selection).read_text())
    if "divergence" not in raw:
        raise FormatError(f"{args.selection}: not a selection report (produce it with 'degsim select')")
    verdict = "in-distribution" if raw["divergence"] <= args.tau else "out-of-distribution"
    payload = {"verdict": verdict, "divergence": raw["divergence"], "threshold": args.tau,
               "chosen_group_id": raw.get("chosen_group_id")}
    if args.out:
        echo = {"command": "predict", "selection": args.selection, "tau": args.tau}
        _write_json(args.out, _artifact(payload, echo))
    print(json.dumps(payload))
    return EXIT_OK


def cmd_replay_table1(args) -> int:
    report = replay_published_groups(backbone=args.backbone, delta=args.delta)
    echo = {"command": "replay-table1", "backbone": args.backbone, "delta": args.delta}
    if args.out:
        _write_json(args.out, _artifact(report, echo))
    print(json.dumps(report, indent=2))
    return EXIT_OK


def cmd_smoke_corpus(args) -> int:
    paths = write_smoke_corpus(args.out)
    print(json.dumps({"corpus_dir": str(args.out), "images": [p.name for p in paths]}))
    return EXIT_OK


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="degsim", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=f"degsim {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("degrade", help="apply a degradation suite to a clean corpus")
    p.add_argument("--config")
    p.add_argument("--corpus")
    p.add_argument("--suite")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_degrade)

    p = sub.add_parser("fit", help="fit one GGD per degradation from features")
    p.add_argument("--config")
    p.add_argument("--manifest")
    p.add_argument("--ddrf-dir", dest="ddrf_dir")
    p.add_argument("--bank-seed", dest="bank_seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("similarity", help="build the log-KL similarity matrix from fits")
    p.add_argument("--fits", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_similarity)

    p = sub.add_parser("group", help="search the minimal feasible partition")
    p.add_argument("--config")
    p.add_argument("--matrix", required=True)
    p.add_argument("--oracle-table", dest="oracle_table")
    p.add_argument("--oracle-missing", dest="oracle_missing", choices=["error", "infeasible"],
                   default="infeasible")
    p.add_argument("--manifest", help="degraded-corpus manifest for the proxy oracle")
    p.add_argument("--seed", type=int)
    p.add_argument("--delta", type=float)
    p.add_argument("--tie-epsilon", dest="tie_epsilon", type=float)
    p.add_argument("--budget", type=int)
    p.add_argument("--emit-all", dest="emit_all", action="store_true")
    p.add_argument("--no-prune", dest="no_prune", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_group)

    p = sub.add_parser("profile", help="build group profiles from a scheme and fits")
    p.add_argument("--report", required=True, help="group report JSON")
    p.add_argument("--scheme-index", dest="scheme_index", type=int, default=0)
    p.add_argument("--fits", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("select", help="choose the best group for an input image")
    p.add_argument("--config")
    p.add_argument("--image", required=True)
    p.add_argument("--profiles", required=True)
    p.add_argument("--bank-seed", dest="bank_seed", type=int)
    p.add_argument("--tau", type=float)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("predict", help="re-threshold a selection report")
    p.add_argument("--selection", required=True)
    p.add_argument("--tau", type=float, default=DEFAULT_TAU)
    p.add_argument("--out")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("replay-table1", help="replay the bundled published-numbers drop arithmetic")
    p.add_argument("--backbone", choices=["restormer", "srresnet"], default="restormer")
    p.add_argument("--delta", type=float, default=PUBLISHED_DELTA_DB)
    p.add_argument("--out")
    p.set_defaults(func=cmd_replay_table1)

    p = sub.add_parser("smoke-corpus", help="materialize the bundled synthetic corpus")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_smoke_corpus)

    return parser


def _fail(code: int, kind: str, message: str) -> int:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)
    return code


def run_command(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        return _fail(EXIT_CONFIG, "config", str(exc))
    except SearchBudgetExceeded as exc:
        return _fail(EXIT_BUDGET, "budget", str(exc))
    except (DataError, FormatError, CoverageError, ShapeError) as exc:
        return _fail(EXIT_DATA, type(exc).__name__.lower().replace("error", ""), str(exc))
    except FileNotFoundError as exc:
        return _fail(EXIT_DATA, "missing-file", str(exc))
    except DegsimError as exc:
        return _fail(EXIT_DATA, "error", str(exc))


def main(argv=None) -> int:
    return run_command(argv)


if __name__ == "__main__":
    sys.exit(main())
