"""Command-line entry point.

Subcommands cover the full workflow on feature files: `match` ranks
putative correspondences for an image pair (two-phase: exits with code 3
and a machine-readable extraction request when the data-derived fixed
orientation is not available yet), `estimate` runs the reference guided
sampler on ranked CSVs, `train` fits a ranking classifier from a labeled
CSV, `bench` executes a synthetic benchmark manifest, and `scene` /
`train-data` generate synthetic inputs for the above.

Exit codes: 0 success, 2 input parse error, 3 extraction request written,
4 insufficient data, 5 schema error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_EXTRACTION_REQUEST = 3
EXIT_INSUFFICIENT = 4
EXIT_SCHEMA = 5

ANGLE_MATCH_TOL = 1e-6


def _add_tunables(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("pipeline tunables")
    g.add_argument("--ratio-max", type=float, default=0.9)
    g.add_argument("--stop-sim", type=float, default=0.85)
    g.add_argument("--k1", type=int, default=5)
    g.add_argument("--k2", type=float, default=5.0)
    g.add_argument("--k3", type=int, default=1)
    g.add_argument("--k-2kp", type=int, default=100)
    g.add_argument("--tau", type=float, default=2.0)
    g.add_argument("--inlier-tau", type=float, default=2.0)
    g.add_argument("--max-iters", type=int, default=2000)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--offset-scale", type=float, default=5.0)
    g.add_argument("--kde-bandwidth-deg", type=float, default=5.0)
    g.add_argument("--branch-dedup-deg", type=float, default=3.0)
    g.add_argument("--always-two-branches", action="store_true")
    g.add_argument("--sfm-workers", type=int, default=1)


def _pipeline_config(args):
    from .estimator import PipelineConfig

    return PipelineConfig(
        ratio_max=args.ratio_max, stop_sim=args.stop_sim,
        k1=args.k1, k2=args.k2, k3=args.k3, k_2kp=args.k_2kp,
        tau=args.tau, inlier_tau=args.inlier_tau, max_iters=args.max_iters,
        seed=args.seed, offset_scale=args.offset_scale,
        kde_bandwidth_deg=args.kde_bandwidth_deg,
        branch_dedup_deg=args.branch_dedup_deg,
        always_two_branches=args.always_two_branches,
        sfm_workers=args.sfm_workers,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="epiprep",
        description="rank putative matches for two-view geometry and estimate it",
    )
    parser.add_argument("--config", type=str, default=None,
                        help="JSON file presetting any long-form option")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("match", help="rank putative matches for a feature-file pair")
    p.add_argument("--f1", required=True, help="image 1 natural-orientation features")
    p.add_argument("--f2", required=True, help="image 2 natural-orientation features")
    p.add_argument("--f1-fixed0", required=True, help="image 1 features fixed at 0 rad")
    p.add_argument("--f2-fixed0", required=True, help="image 2 features fixed at 0 rad")
    p.add_argument("--f2-fixed-alpha", default=None,
                   help="image 2 features fixed at the estimated roll angle")
    p.add_argument("--model-2kp", required=True)
    p.add_argument("--model-kpmd", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--dump-2kp", action="store_true",
                   help="also write the ranked 2keypoint matches per branch")
    _add_tunables(p)

    p = sub.add_parser("estimate", help="guided RANSAC over ranked match CSVs")
    p.add_argument("--ranked", required=True, action="append",
                   help="ranked CSV (repeat for a second branch)")
    p.add_argument("--out", required=True, help="result record path (json)")
    p.add_argument("--inlier-tau", type=float, default=2.0)
    p.add_argument("--max-iters", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="train a ranking classifier from a labeled CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--schema", required=True, choices=["2kpmd", "kpmd"])
    p.add_argument("--out", required=True)
    p.add_argument("--cv-folds", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--min-leaf", type=int, default=8)

    p = sub.add_parser("bench", help="run a benchmark manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--base-dir", default=None,
                   help="base for relative paths in the manifest (default: manifest dir)")
    p.add_argument("--timings", action="store_true",
                   help="measure wall time (makes reports non-reproducible)")

    p = sub.add_parser("scene", help="export a synthetic scene as feature files")
    p.add_argument("--preset", choices=["easy", "hard"], default="easy")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--roll-deg", type=float, default=None)
    p.add_argument("--fixed-angle", type=float, action="append", default=None,
                   help="extra image-2 fixed-orientation angle (radians) to export")
    p.add_argument("--out", required=True)

    p = sub.add_parser("train-data", help="build labeled training CSVs and models "
                                          "from synthetic scenes")
    p.add_argument("--out", required=True)
    p.add_argument("--base-seed", type=int, default=7000)
    _add_tunables(p)

    return parser


def _apply_config_file(parser: argparse.ArgumentParser, argv: list[str]) -> list[str]:
    """Pre-scan for --config and turn its entries into parser defaults."""
    if "--config" not in argv:
        return argv
    idx = argv.index("--config")
    try:
        cfg = json.loads(Path(argv[idx + 1]).read_text())
    except (IndexError, OSError, json.JSONDecodeError) as exc:
        parser.error(f"cannot read --config: {exc}")
    if not isinstance(cfg, dict):
        parser.error("--config must hold a JSON object")
    for sp in parser._subparsers._group_actions[0].choices.values():   # noqa: SLF001
        sp.set_defaults(**{k.replace("-", "_"): v for k, v in cfg.items()})
    return argv


def cmd_match(args) -> int:
    from . import estimator, matching
    from .features import ParseError, load_features
    from .dtree import ModelLoadError, ModelSchemaError, load_model
    from .global_rank import ranked_matches_csv

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        f1 = load_features(args.f1)
        f2 = load_features(args.f2)
        fixed = {
            (1, 0.0): load_features(args.f1_fixed0),
            (2, 0.0): load_features(args.f2_fixed0),
        }
        for (image_no, _), fset in fixed.items():
            if fset.mode != "fixed" or abs(fset.fixed_angle) >= ANGLE_MATCH_TOL:
                raise ParseError(
                    f"image {image_no}: expected a fixed-orientation file at angle 0, "
                    f"got mode={fset.mode!r} angle={fset.fixed_angle!r}"
                )
        alpha_set = load_features(args.f2_fixed_alpha) if args.f2_fixed_alpha else None
        if alpha_set is not None and alpha_set.mode != "fixed":
            raise ParseError("--f2-fixed-alpha must be a fixed-orientation file")
    except (ParseError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    try:
        models = estimator.Models(two_kp=load_model(args.model_2kp),
                                  kpmd=load_model(args.model_kpmd))
    except (ModelLoadError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA

    cfg = _pipeline_config(args)

    def lookup(image_no: int, angle: float):
        got = fixed.get((image_no, 0.0))
        if got is not None and abs(angle) < ANGLE_MATCH_TOL:
            return got
        if image_no == 2 and alpha_set is not None \
                and abs((alpha_set.fixed_angle or 0.0) - angle) < ANGLE_MATCH_TOL:
            return alpha_set
        raise estimator.MissingFixedExtraction(image_no, (f1 if image_no == 1 else f2).image_id,
                                               angle)

    x_l = matching.lowe_matches(f1, f2, cfg.ratio_max)
    x_b = matching.blogs_matches(f1, f2)
    try:
        roll = matching.estimate_roll(x_l + x_b, f1, f2, cfg.kde_bandwidth_deg)
    except matching.RollUnavailable:
        roll = None

    inputs = estimator.PairInputs(f1=f1, f2=f2, fixed_lookup=lookup)
    plan = estimator.plan_branches(roll, cfg)
    branches = []
    try:
        for branch, alpha in plan:
            branches.append(estimator.rank_branch(inputs, alpha, branch, x_l, x_b,
                                                  models, cfg))
    except estimator.MissingFixedExtraction as exc:
        request = {"image": exc.image_id, "mode": "fixed", "angle_rad": exc.angle_rad}
        request_path = out_dir / "extraction_request.json"
        request_path.write_text(json.dumps(request) + "\n")
        print(f"extraction request written to {request_path}", file=sys.stderr)
        return EXIT_EXTRACTION_REQUEST
    except ModelSchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except ValueError as exc:
        # mismatched feature sets (e.g. fixed file from a different detection run)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE

    roll_record = {"available": roll is not None, "branches": [b.branch for b in branches]}
    if roll is not None:
        roll_record.update(
            alpha_exp_rad=roll.alpha_exp,
            alpha_exp_deg=math.degrees(roll.alpha_exp),
            peak=roll.peak,
            samples=roll.samples,
        )
    (out_dir / "roll.json").write_text(json.dumps(roll_record, indent=1) + "\n")
    for b in branches:
        (out_dir / f"ranked_{b.branch}.csv").write_text(
            ranked_matches_csv(b.ranked, f1, f2))
        if args.dump_2kp and b.top_2kp is not None:
            from .twokeypoint import ranked_2kp_csv
            (out_dir / f"twokp_{b.branch}.csv").write_text(ranked_2kp_csv(b.top_2kp))
    print(f"wrote {len(branches)} ranked list(s) to {out_dir}")
    return EXIT_OK


def _read_ranked_csv(path: Path):
    lines = [ln for ln in path.read_text().splitlines() if ln.strip()]
    header = "i1,i2,x1,y1,x2,y2,sfm,d_r,t_k,prob,sources"
    if not lines or lines[0] != header:
        raise ValueError(f"{path}: expected header '{header}'")
    x1, x2, probs = [], [], []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != 11:
            raise ValueError(f"{path}: bad row with {len(parts)} fields")
        x1.append((float(parts[2]), float(parts[3])))
        x2.append((float(parts[4]), float(parts[5])))
        probs.append(float(parts[9]))
    return np.array(x1), np.array(x2), np.array(probs)


def cmd_estimate(args) -> int:
    from .estimator import InsufficientData, RansacConfig, guided_ransac

    runs = []
    for path in args.ranked:
        path = Path(path)
        try:
            x1, x2, probs = _read_ranked_csv(path)
        except (OSError, ValueError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_PARSE
        branch = path.stem.removeprefix("ranked_")
        runs.append((branch, x1, x2, probs))

    cfg = RansacConfig(max_iters=args.max_iters, inlier_tau=args.inlier_tau,
                       seed=args.seed)
    best = None
    for branch, x1, x2, probs in runs:
        try:
            result = guided_ransac(x1, x2, probs, cfg, branch=branch)
        except InsufficientData:
            continue
        if best is None or result.support > best.support:
            best = result
    if best is None:
        print("error: fewer than 7 matches in every ranked list", file=sys.stderr)
        return EXIT_INSUFFICIENT

    record = {
        "f": [float(v) for v in best.f.m.reshape(-1)],
        "inliers": best.inliers,
        "support": best.support,
        "branch": best.branch,
        "seed": best.seed,
        "iterations": best.iterations,
    }
    Path(args.out).write_text(json.dumps(record, indent=1) + "\n")
    print(f"branch {best.branch}: support {best.support}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .dtree import (FoldError, ModelSchemaError, cross_validate, dataset_from_csv,
                        save_model, train_tree)
    from .global_rank import SCHEMA_KPMD
    from .twokeypoint import SCHEMA_2KPMD

    schema = SCHEMA_2KPMD if args.schema == "2kpmd" else SCHEMA_KPMD
    try:
        data = dataset_from_csv(args.data, schema)
    except ModelSchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE

    model = train_tree(data, min_leaf=args.min_leaf)
    save_model(model, args.out)
    try:
        metrics = cross_validate(data, k=args.cv_folds, seed=args.seed,
                                 min_leaf=args.min_leaf)
        print(f"{args.cv_folds}-fold CV: accuracy={metrics.accuracy:.4f} "
              f"precision={metrics.precision:.4f} recall={metrics.recall:.4f}")
    except FoldError as exc:
        print(f"cross-validation skipped: {exc}")
    print(f"model written to {args.out}")
    return EXIT_OK


def cmd_bench(args) -> int:
    from .bench import load_manifest, run_benchmark

    manifest_path = Path(args.manifest)
    try:
        manifest = load_manifest(manifest_path)
    except (OSError, ValueError, KeyError, TypeError, json.JSONDecodeError) as exc:
        print(f"error: cannot load manifest: {exc}", file=sys.stderr)
        return EXIT_PARSE
    base = Path(args.base_dir) if args.base_dir else manifest_path.parent
    report = run_benchmark(manifest, args.out, base_dir=base, measure_time=args.timings)
    print(f"report written to {report}")
    return EXIT_OK


def cmd_scene(args) -> int:
    from .bench import easy_scene_config, gen_scene, hard_scene_config
    from .features import save_features

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = (easy_scene_config if args.preset == "easy" else hard_scene_config)(args.seed)
    if args.roll_deg is not None:
        cfg = replace(cfg, roll=math.radians(args.roll_deg))
    scene = gen_scene(cfg)

    save_features(scene.f1, out_dir / "img1_natural.epf")
    save_features(scene.f2, out_dir / "img2_natural.epf")
    save_features(scene.fixed_features(1, 0.0), out_dir / "img1_fixed0.epf")
    save_features(scene.fixed_features(2, 0.0), out_dir / "img2_fixed0.epf")
    fixed_index = {"1": {"0.0": "img1_fixed0.epf"}, "2": {"0.0": "img2_fixed0.epf"}}
    for angle in args.fixed_angle or []:
        name = f"img2_fixed_{angle:.6f}.epf"
        save_features(scene.fixed_features(2, angle), out_dir / name)
        fixed_index["2"][f"{angle:.17g}"] = name
    (out_dir / "gt_f.txt").write_text(
        " ".join(format(v, ".17g") for v in scene.f_gt.m.reshape(-1)) + "\n")
    (out_dir / "gt_pairs.txt").write_text(
        "\n".join(
            f"{a[0]:.17g} {a[1]:.17g} {b[0]:.17g} {b[1]:.17g}"
            for a, b in zip(scene.gt_x1, scene.gt_x2)
        ) + "\n")
    (out_dir / "scene.json").write_text(json.dumps(
        {"config": asdict(cfg), "files": {
            "features1": "img1_natural.epf", "features2": "img2_natural.epf",
            "fixed": fixed_index, "gt_f": "gt_f.txt", "gt_pairs": "gt_pairs.txt",
        }}, indent=1) + "\n")
    print(f"scene written to {out_dir}")
    return EXIT_OK


def cmd_train_data(args) -> int:
    from .bench import build_training_data, training_scene_configs
    from .dtree import dataset_to_csv, save_model

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = _pipeline_config(args)
    data_2kp, data_kpmd, models = build_training_data(
        training_scene_configs(args.base_seed), cfg)
    dataset_to_csv(data_2kp, out_dir / "train_2kpmd.csv")
    dataset_to_csv(data_kpmd, out_dir / "train_kpmd.csv")
    save_model(models.two_kp, out_dir / "model_2kpmd.json")
    save_model(models.kpmd, out_dir / "model_kpmd.json")
    print(f"training data and models written to {out_dir}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    argv = _apply_config_file(parser, argv)
    args = parser.parse_args(argv)
    handler = {
        "match": cmd_match,
        "estimate": cmd_estimate,
        "train": cmd_train,
        "bench": cmd_bench,
        "scene": cmd_scene,
        "train-data": cmd_train_data,
    }[args.command]
    return handler(args)


def entrypoint() -> None:   # pragma: no cover - console script shim
    sys.exit(main())
