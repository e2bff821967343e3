"""Command-line entry point: ``hpppf {extract,invariance,estimate,eval,sweep,synth}``.

Exit codes: 0 success, 2 input error, 3 estimation failure, 4 internal
invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from hpppf import __version__, io, rng
from hpppf.errors import EstimationError, InputError, InvariantViolation
from hpppf.estimator import (CanonicalTemplate, RansacConfig, estimate_pose, estimate_translation_size,
                             normalize)
from hpppf.fusion import channel_slice_pgm, fuse, save_map, spherical_project
from hpppf.geomfeat import PanelSpec, hp_ppf
from hpppf.metrics import (IOU_THRESHOLDS, NOCS_SYMMETRY, PoseErrorRecord, Symmetry, loss_r, loss_ts,
                           pose_map, read_pose_csv)
from hpppf.pointcloud import (K_NORMALS, N_COARSE, N_FINE, OrientedPointCloud, PointCloud, estimate_normals,
                              sample_indices)
from hpppf.pose import random_rotation
from hpppf.robustness import (JITTER_PRESETS, OCCLUSION_PRESETS, ROTATION_PRESETS_DEG, make_shape,
                              shape_template, sweep, write_sweep_csv)
from hpppf.semfeat import load_features, rotational_consistency

log = logging.getLogger("hpppf")

EXIT_INPUT = 2
EXIT_ESTIMATION = 3
EXIT_INVARIANT = 4


def _floats(text):
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _vec3(text):
    vals = _floats(text)
    if len(vals) != 3:
        raise argparse.ArgumentTypeError(f"expected three numbers, got {text!r}")
    return vals


def _threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    return max(1, int(os.environ.get("HPPPF_THREADS", "1")))


def run_config(args) -> dict:
    cfg = {k: v for k, v in vars(args).items() if k != "func"}
    cfg["threads"] = _threads(args)
    cfg["version"] = __version__
    return cfg


def _write_report(args, report) -> None:
    text = json.dumps(report, indent=2, sort_keys=True, ensure_ascii=False, default=str)
    if getattr(args, "report", None):
        Path(args.report).write_text(text + "\n")
    else:
        print(text)


def _load_cloud(path) -> PointCloud:
    cloud = io.read_cloud(path)
    return cloud.cloud if isinstance(cloud, OrientedPointCloud) else cloud


def _ransac(args, label="ransac") -> RansacConfig:
    return RansacConfig(iterations=args.iterations, epsilon=args.epsilon, min_inliers=args.min_inliers,
                        ratio=args.ratio, seed=rng.derive_seed(args.seed, label))


# ---------------------------------------------------------------- extract


def cmd_extract(args) -> int:
    cuts = PanelSpec.parse(args.cuts)
    if cuts.size != args.n2:
        raise InputError(f"cuts end at {cuts.cuts[-1]}, need {args.n2 - 1} for n2={args.n2}")
    if args.n2 > args.n1:
        raise InputError("n2 must not exceed n1")
    cloud = _load_cloud(args.input)
    n1 = min(args.n1, len(cloud))
    if n1 < args.n2:
        raise InputError(f"{args.input}: {len(cloud)} points, need at least n2={args.n2}")
    idx1 = sample_indices(len(cloud), n1, rng.derive_seed(args.seed, "sample:n1"))
    idx2 = sample_indices(n1, args.n2, rng.derive_seed(args.seed, "sample:n2"))
    coarse = cloud.take(idx1)
    viewpoint = np.asarray(args.viewpoint, dtype=float)
    if not args.no_normalize:
        t, s = estimate_translation_size(coarse)
        coarse = normalize(coarse, t, s)
        viewpoint = normalize(viewpoint[None, :], t, s)[0]
    if args.normals_after_subsample:
        oriented = estimate_normals(coarse.take(idx2), args.k, viewpoint)
    else:
        oriented = estimate_normals(coarse, args.k, viewpoint).take(idx2)
    feats = hp_ppf(oriented, cuts, threads=_threads(args))
    if Path(args.out).suffix.lower() == ".csv":
        io.write_feature_csv(args.out, feats.features)
    else:
        io.write_matrix(args.out, feats.features, dtype=args.dtype)

    report = {"config": run_config(args), "features": {"rows": feats.shape[0], "cols": feats.shape[1]},
              "degenerate_normals": oriented.degenerate}
    if args.sphere_out:
        pts = oriented.points
        center = pts.mean(axis=0)
        if args.sem:
            sem = load_features(args.sem, len(cloud)).features[idx1[idx2]]
        else:
            sem = np.zeros((len(pts), 0))
        colors = oriented.cloud.colors if oriented.cloud.colors is not None else np.zeros((len(pts), 3))
        maps = [spherical_project(pts, f, args.W, args.H, center) for f in (feats.features, sem, colors)]
        fused = fuse(*maps)
        save_map(args.sphere_out, fused, dtype=args.dtype)
        if args.slices:
            for c in range(fused.grid.shape[2]):
                channel_slice_pgm(Path(args.slices) / f"channel_{c:03d}.pgm", fused, c)
        report["sphere"] = {"W": args.W, "H": args.H, "channels": list(fused.dims),
                            "occupied": int(fused.occupancy.sum())}
    if args.report:
        _write_report(args, report)
    return 0


# ---------------------------------------------------------------- invariance


def cmd_invariance(args) -> int:
    cloud = _load_cloud(args.input)
    cuts = PanelSpec.parse(args.cuts) if args.cuts else None
    n = min(args.n, len(cloud))
    base_cloud = cloud.take(sample_indices(len(cloud), n, rng.derive_seed(args.seed, "sample")))
    if cuts is not None and cuts.size != n:
        raise InputError(f"cuts end at {cuts.cuts[-1]}, need {n - 1}")
    vp = np.asarray(args.viewpoint, dtype=float)
    threads = _threads(args)
    base = estimate_normals(base_cloud, args.k, vp)
    ref = hp_ppf(base, cuts, threads=threads).features
    dev_rigid, dev_recomputed = 0.0, 0.0
    for trial in range(args.K):
        R = random_rotation(rng.generator(rng.derive_seed(args.seed, f"rotation:{trial}")))
        pts = (base.points - vp) @ R.T + vp
        rigid = OrientedPointCloud(PointCloud(pts), base.normals @ R.T, vp)
        dev_rigid = max(dev_rigid, float(np.max(np.abs(hp_ppf(rigid, cuts, threads=threads).features - ref))))
        fresh = estimate_normals(PointCloud(pts), args.k, vp)
        dev_recomputed = max(dev_recomputed,
                             float(np.max(np.abs(hp_ppf(fresh, cuts, threads=threads).features - ref))))
    report = {"config": run_config(args), "trials": args.K, "points": n,
              "max_deviation_rigid_normals": dev_rigid,
              "max_deviation_recomputed_normals": dev_recomputed}
    if args.sem or args.sem_rotated:
        if not (args.sem and args.sem_rotated):
            raise InputError("--sem and --sem-rotated must be given together")
        a = load_features(args.sem, len(cloud))
        b = load_features(args.sem_rotated, len(cloud))
        report["semantic_consistency"] = rotational_consistency([a, b]).to_dict()
    _write_report(args, report)
    return 0


# ---------------------------------------------------------------- estimate


def cmd_estimate(args) -> int:
    template_cloud = _load_cloud(args.template)
    query = _load_cloud(args.query)
    label = rng.derive_seed(args.seed, "sample")
    if len(template_cloud) > args.n:
        template_cloud = template_cloud.take(sample_indices(len(template_cloud), args.n, label))
    if len(query) > args.n:
        query = query.take(sample_indices(len(query), args.n, label))
    threads = _threads(args)
    template = CanonicalTemplate.build(template_cloud, PanelSpec.parse(args.cuts).cuts, args.k, threads=threads)
    gt_t = np.asarray(args.gt_t) if args.gt_t else None
    gt_s = np.asarray(args.gt_s) if args.gt_s else None
    if (gt_t is None) != (gt_s is None):
        raise InputError("--gt-t and --gt-s must be given together")
    est = estimate_pose(query, template, _ransac(args), t=gt_t, s=gt_s, k=args.k, threads=threads)
    pose = est.pose
    if not np.allclose(pose.R.T @ pose.R, np.eye(3), atol=1e-9):
        raise InvariantViolation("estimated rotation is not orthonormal")
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scale"] + [f"r{i}{j}" for i in range(3) for j in range(3)] + ["tx", "ty", "tz"])
        w.writerow([repr(float(v)) for v in [est.scale, *pose.R.ravel(), *pose.t]])
    if args.report:
        _write_report(args, {"config": run_config(args), "inliers": est.inliers, "pose": {
            "R": pose.R.tolist(), "t": pose.t.tolist(), "s": pose.s.tolist(), "scale": est.scale}})
    return 0


# ---------------------------------------------------------------- eval


def _symmetry_table(args) -> dict:
    table = dict(NOCS_SYMMETRY) if args.nocs_symmetry else {}
    if args.symmetry:
        path = Path(args.symmetry)
        if not path.is_file():
            raise FileNotFoundError(f"no such file: {path}")
        try:
            raw = json.loads(path.read_text())
            table.update({k: Symmetry(v) for k, v in raw.items()})
        except (ValueError, AttributeError) as exc:
            raise InputError(f"{path}: bad symmetry table ({exc})") from None
    return table


def cmd_eval(args) -> int:
    rows = read_pose_csv(args.input)
    sym = _symmetry_table(args)
    records = [PoseErrorRecord.from_poses(p, g, c, sym.get(c, Symmetry.NONE)) for c, p, g in rows]
    report = pose_map(records, args.rot, [m / 100.0 for m in args.trans_cm], args.iou)
    out = report.to_dict()
    out["config"] = {**out["config"], **run_config(args)}
    out["losses"] = {
        "L_ts_mean": float(np.mean([loss_ts(p.t, g.t, p.s, g.s, args.lambda_t, args.lambda_s) for _, p, g in rows])),
        "L_R_mean": float(np.mean([loss_r(p.R, g.R) for _, p, g in rows])),
    }
    _write_report(args, out)
    return 0


# ---------------------------------------------------------------- sweep

_PROTOCOL_ARG = {"E": ("deg", ROTATION_PRESETS_DEG), "F": ("n_occ", OCCLUSION_PRESETS), "G": ("s", JITTER_PRESETS)}


def cmd_sweep(args) -> int:
    attr, preset = _PROTOCOL_ARG[args.protocol]
    params = getattr(args, attr) or list(preset)
    threads = _threads(args)
    template = shape_template(args.shape, args.n, rng.derive_seed(args.seed, "shape"), threads=threads)
    results = sweep(template, args.protocol, params, args.trials, args.seed,
                    ransac=_ransac(args), k=args.k, threads=threads)
    write_sweep_csv(args.out, results)
    groups = {}
    for p in params:
        errs = np.array([r.rot_err_deg for r in results if r.parameter == p])
        groups[f"{p:g}"] = {"trials": len(errs), "median_rot_err_deg": float(np.median(errs)),
                            "success_rate_10deg": float(np.mean(errs < 10.0))}
    if args.report:
        _write_report(args, {"config": run_config(args), "groups": groups})
    return 0


# ---------------------------------------------------------------- synth


def cmd_synth(args) -> int:
    shape = make_shape(args.kind, args.n, args.seed)
    pts, nrm = shape.points * args.scale, shape.normals
    R = np.eye(3)
    if args.rotate:
        R = random_rotation(rng.generator(rng.derive_seed(args.seed, "synth:rotation")))
    pts = pts @ R.T + np.asarray(args.translate)
    vp = R @ shape.viewpoint * args.scale + np.asarray(args.translate)
    io.write_ply(args.out, OrientedPointCloud(PointCloud(pts), nrm @ R.T, vp))
    if args.report:
        _write_report(args, {"config": run_config(args), "R_applied": R.tolist(),
                             "size": (args.scale * (shape.points.max(0) - shape.points.min(0))).tolist()})
    return 0


# ---------------------------------------------------------------- parser


def _add_ransac(p):
    p.add_argument("--iterations", type=int, default=1000)
    p.add_argument("--epsilon", type=float, default=0.02, help="inlier distance in normalized units")
    p.add_argument("--min-inliers", type=int, default=10)
    p.add_argument("--ratio", type=float, default=0.9, help="ratio-test threshold for feature matches")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hpppf", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"hpppf {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=None, help="worker cap (default: $HPPPF_THREADS or 1)")
    common.add_argument("--report", help="write the JSON report here instead of stdout")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", parents=[common], help="compute HP-PPF (and optionally the fused spherical map)")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True, help=".csv for text, anything else for the binary container")
    p.add_argument("--cuts", default="0,10,60,299")
    p.add_argument("--n1", type=int, default=N_COARSE)
    p.add_argument("--n2", type=int, default=N_FINE)
    p.add_argument("--k", type=int, default=K_NORMALS)
    p.add_argument("--viewpoint", type=_vec3, default=[0.0, 0.0, 0.0])
    p.add_argument("--normals-after-subsample", action="store_true",
                   help="estimate normals on the n2 subset instead of the n1 cloud")
    p.add_argument("--no-normalize", action="store_true", help="skip centroid/size normalization")
    p.add_argument("--dtype", choices=["float32", "float64"], default="float64")
    p.add_argument("--sphere-out", help="write the fused spherical map here")
    p.add_argument("--sem", help="semantic feature table aligned with the input points")
    p.add_argument("--slices", help="directory for per-channel PGM slices of the spherical map")
    p.add_argument("--W", type=int, default=32)
    p.add_argument("--H", type=int, default=32)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("invariance", parents=[common], help="audit HP-PPF under seeded rotations")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--K", type=int, default=20, help="number of random rotations")
    p.add_argument("--n", type=int, default=N_FINE)
    p.add_argument("--k", type=int, default=K_NORMALS)
    p.add_argument("--cuts", default=None)
    p.add_argument("--viewpoint", type=_vec3, default=[0.0, 0.0, 0.0])
    p.add_argument("--sem", help="semantic features of the original capture")
    p.add_argument("--sem-rotated", help="semantic features of a rotated capture, same point order")
    p.set_defaults(func=cmd_invariance)

    p = sub.add_parser("estimate", parents=[common], help="estimate a 9DoF pose against a canonical template")
    p.add_argument("--template", required=True)
    p.add_argument("--query", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=N_FINE)
    p.add_argument("--k", type=int, default=K_NORMALS)
    p.add_argument("--cuts", default="0,10,60,299")
    p.add_argument("--gt-t", type=_vec3, default=None, help="ground-truth translation used for normalization")
    p.add_argument("--gt-s", type=_vec3, default=None, help="ground-truth size used for normalization")
    _add_ransac(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("eval", parents=[common], help="n-degree m-cm precision and 3D IoU from a pose CSV")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--rot", type=_floats, default=[5.0, 10.0], help="rotation thresholds, degrees")
    p.add_argument("--trans-cm", type=_floats, default=[2.0, 5.0], help="translation thresholds, cm")
    p.add_argument("--iou", type=_floats, default=list(IOU_THRESHOLDS))
    p.add_argument("--symmetry", help="JSON mapping category -> none|axis_y")
    p.add_argument("--nocs-symmetry", action="store_true", help="treat bottle, bowl, can as y-symmetric")
    p.add_argument("--lambda-t", type=float, default=1.0)
    p.add_argument("--lambda-s", type=float, default=1.0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", parents=[common], help="robustness sweep (E rotation, F occlusion, G jitter)")
    p.add_argument("--protocol", choices=["E", "F", "G"], required=True)
    p.add_argument("--deg", type=_floats, help="E: maximum rotation angles")
    p.add_argument("--n", dest="n_occ", type=_floats, help="F: occlusion divisors")
    p.add_argument("--s", type=_floats, help="G: jitter scales")
    p.add_argument("--shape", choices=["lshape", "blob", "box", "cylinder"], default="lshape")
    p.add_argument("--points", dest="n", type=int, default=N_FINE)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--k", type=int, default=K_NORMALS)
    p.add_argument("--out", required=True)
    _add_ransac(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic oriented shape as PLY")
    p.add_argument("--kind", choices=["box", "lshape", "cylinder", "blob"], default="box")
    p.add_argument("--n", type=int, default=N_COARSE)
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--rotate", action="store_true", help="apply a seeded random rotation")
    p.add_argument("--translate", type=_vec3, default=[0.0, 0.0, 0.0])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except EstimationError as exc:
        print(f"estimation failed: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    except InvariantViolation as exc:
        print(f"internal invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
