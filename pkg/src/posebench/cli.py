"""Command-line entry point.

One subcommand per pipeline stage so runs compose in the shell:

    posebench synth --kind orbit --frames 120 --step 0.7 --out-dir rig
    posebench curate-bench rig/manifest.json --min-gap 10 --out rig/samples.jsonl
    posebench check rig/manifest.json rig/samples.jsonl --min-gap 10
    posebench synth ... --matches-from rig/samples.jsonl   # correspondence CSVs
    posebench solve rig/correspondences/000000-000024.csv --intrinsics 525,525,320,240,640,480
    posebench eval rig/samples.jsonl preds.csv --out report.json

All randomness flows from ``--seed``; identical arguments and inputs
produce byte-identical output files (temp file plus rename, no
timestamps).  Exit codes: 0 success, 1 validation or usage error, 2 I/O
error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import curation as cur
from . import evalkit as ek
from . import frames as fr
from . import geometry as geo
from . import solver as sv
from . import synth as sy

__all__ = ["main", "build_parser"]

_LOG = logging.getLogger("posebench")

_DOMAIN_ERRORS = (
    geo.GeometryError,
    cur.CurationError,
    sv.SolverError,
    sy.SynthError,
    ek.EvalError,
    ValueError,
)


class _Parser(argparse.ArgumentParser):
    """argparse variant that exits 1 (not 2) on usage errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _parse_floats(text: str, n: int | None = None, name: str = "value") -> tuple[float, ...]:
    try:
        values = tuple(float(x) for x in text.split(","))
    except ValueError as exc:
        raise ValueError(f"bad {name} {text!r}: {exc}") from exc
    if n is not None and len(values) != n:
        raise ValueError(f"{name} needs {n} comma-separated numbers, got {len(values)}")
    return values


def _parse_intrinsics(text: str) -> geo.Intrinsics:
    vals = _parse_floats(text, 6, "intrinsics (fx,fy,cx,cy,width,height)")
    return geo.Intrinsics(vals[0], vals[1], vals[2], vals[3], int(vals[4]), int(vals[5]))


def _parse_band(text: str, name: str) -> tuple[float, float]:
    vals = _parse_floats(text, 2, name)
    return vals[0], vals[1]


def _add_gap_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--min-gap", type=int, default=10, help="smallest frame-index gap of a pair")
    p.add_argument("--max-gap", type=int, default=500, help="largest frame-index gap of a pair")
    p.add_argument("--cap", type=int, default=100, help="max samples kept per bin or DoF")


def _add_bench_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--bins", default="15,30,45,60", help="angle bin lower edges in degrees")
    p.add_argument("--bin-width", type=float, default=5.0, help="bin width in degrees")
    p.add_argument("--max-deviation", type=float, default=300.0, help="pixel budget for the mean center deviation")


def _add_diag_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--theta-band", default="5,15", help="pitch band, degrees")
    p.add_argument("--phi-band", default="5,15", help="yaw band, degrees")
    p.add_argument("--psi-band", default="3,10", help="roll band, degrees")
    p.add_argument("--tx-band", default="0.15,0.4", help="lateral band, metric")
    p.add_argument("--ty-band", default="0.1,0.3", help="vertical band, metric")
    p.add_argument("--tz-band", default="0.15,0.4", help="depth band, metric")


def _bench_config(args) -> cur.BenchConfig:
    return cur.BenchConfig(
        angle_bins=_parse_floats(args.bins, name="--bins"),
        bin_width=args.bin_width,
        max_deviation=args.max_deviation,
        min_gap=args.min_gap,
        max_gap=args.max_gap,
        per_bin_cap=args.cap,
        rng_seed=args.seed,
    )


def _diag_config(args) -> cur.DiagConfig:
    thresholds = cur.DiagThresholds(
        theta=_parse_band(args.theta_band, "--theta-band"),
        phi=_parse_band(args.phi_band, "--phi-band"),
        psi=_parse_band(args.psi_band, "--psi-band"),
        t_x=_parse_band(args.tx_band, "--tx-band"),
        t_y=_parse_band(args.ty_band, "--ty-band"),
        t_z=_parse_band(args.tz_band, "--tz-band"),
    )
    return cur.DiagConfig(
        thresholds=thresholds,
        min_gap=args.min_gap,
        max_gap=args.max_gap,
        per_dof_cap=args.cap,
        rng_seed=args.seed,
    )


# --------------------------------------------------------------------------
# Subcommands
# --------------------------------------------------------------------------

def _cmd_ingest(args) -> int:
    overrides = {
        "depth_scale": args.depth_scale,
        "fx": args.fx,
        "fy": args.fy,
        "cx": args.cx,
        "cy": args.cy,
        "width": args.width,
        "height": args.height,
    }
    seq = fr.load_manifest(Path(args.input), profile=args.profile, **overrides)
    fr.write_manifest_json(seq, Path(args.out))
    print(f"wrote {args.out} ({len(seq)} frames, profile {seq.profile})")
    return 0


def _trajectory_spec(args) -> sy.TrajectorySpec:
    center = _parse_floats(args.center, 3, "--center")
    return sy.TrajectorySpec(
        kind=args.kind,
        frame_count=args.frames,
        center=center,
        radius=args.radius,
        step_deg=args.step,
        start_deg=args.start_deg,
        dof=args.dof,
        increment=args.increment,
        depth_scale=args.depth_scale,
        sequence_id=args.sequence_id,
        render_depth=not args.no_depth,
    )


def _cmd_synth(args) -> int:
    out_dir = Path(args.out_dir)
    seq = sy.generate(_trajectory_spec(args))
    seq, manifest_path = fr.materialize(seq, out_dir)
    print(f"wrote {manifest_path} ({len(seq)} frames)")

    pairs: list[tuple[int, int]] = []
    if args.matches:
        for chunk in args.matches.split(","):
            src, _, tgt = chunk.partition("-")
            pairs.append((int(src), int(tgt)))
    if args.matches_from:
        for sample in cur.read_samples(Path(args.matches_from)):
            pairs.append((sample.src_index, sample.tgt_index))
    if pairs:
        positions = [f.pose.translation for f in seq.frames]
        scene = sy.random_scene(
            n_points=args.scene_points,
            center=_parse_floats(args.center, 3, "--center"),
            avoid=positions,
            seed=args.seed,
        )
        corr_dir = out_dir / "correspondences"
        for src, tgt in pairs:
            matches, _ = sy.project_correspondences(
                scene,
                seq.frame_by_index(src),
                seq.frame_by_index(tgt),
                noise_sigma=args.noise_sigma,
                outlier_fraction=args.outlier_fraction,
                seed=args.seed + 1_000_003 * src + tgt,
            )
            sv.write_correspondences(matches, corr_dir / f"{src:06d}-{tgt:06d}.csv")
        print(f"wrote {len(pairs)} correspondence files under {corr_dir}")
    return 0


def _cmd_curate_bench(args) -> int:
    seq = fr.load_manifest(Path(args.manifest))
    samples = cur.curate_bench(seq, _bench_config(args))
    cur.write_samples(samples, Path(args.out))
    print(f"wrote {args.out} ({len(samples)} samples)")
    return 0


def _cmd_curate_diag(args) -> int:
    seq = fr.load_manifest(Path(args.manifest))
    cfg = _diag_config(args)
    samples = cur.curate_diag(
        seq,
        cfg.thresholds,
        min_gap=cfg.min_gap,
        max_gap=cfg.max_gap,
        per_dof_cap=cfg.per_dof_cap,
        rng_seed=cfg.rng_seed,
    )
    cur.write_samples(samples, Path(args.out))
    print(f"wrote {args.out} ({len(samples)} samples)")
    return 0


def _cmd_solve(args) -> int:
    pts = sv.read_correspondences(Path(args.correspondences))
    k_src = _parse_intrinsics(args.intrinsics)
    k_tgt = _parse_intrinsics(args.intrinsics_tgt) if args.intrinsics_tgt else k_src
    cfg = sv.RansacConfig(
        max_iterations=args.iterations,
        threshold=args.threshold,
        confidence=args.confidence,
        rng_seed=args.seed,
    )
    vector, mask = sv.estimate_relative_motion(pts, k_src, k_tgt, cfg)
    label_index = sv.classify_pair(vector, rule=args.classify_rule)
    theta_d, phi_d, psi_d = vector.rotation_degrees()
    result = {
        "pose_vector": {
            "theta_deg": theta_d,
            "phi_deg": phi_d,
            "psi_deg": psi_d,
            "t_x": vector.t_x,
            "t_y": vector.t_y,
            "t_z": vector.t_z,
        },
        "translation_is_unit": True,
        "classify_rule": args.classify_rule,
        "label_index": label_index,
        "label": cur.BENCH_LABELS[label_index],
        "num_points": len(pts),
        "num_inliers": int(mask.sum()),
    }
    text = json.dumps(result, indent=2) + "\n"
    if args.out:
        fr.atomic_write_text(Path(args.out), text)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def _cmd_eval(args) -> int:
    gold = cur.read_samples(Path(args.samples))
    preds = ek.read_predictions(Path(args.predictions))
    swapped = ek.read_predictions(Path(args.swapped)) if args.swapped else None
    report = ek.evaluate_run(gold, preds, swapped)
    print(report.format_table())
    if args.out:
        ek.write_report(report, Path(args.out))
        print(f"wrote {args.out}")
    return 0


def _cmd_consistency(args) -> int:
    gold = cur.read_samples(Path(args.samples))
    original = ek.read_predictions(Path(args.original))
    swapped = ek.read_predictions(Path(args.swapped))
    pct = ek.consistency_rate(original, swapped, gold)
    print(f"swap consistency: {pct:.2f}%")
    if args.out:
        fr.atomic_write_text(Path(args.out), json.dumps({"consistency_pct": pct}, indent=2) + "\n")
        print(f"wrote {args.out}")
    return 0


def _cmd_check(args) -> int:
    seq = fr.load_manifest(Path(args.manifest))
    samples = cur.read_samples(Path(args.samples))
    if not samples:
        print("no samples to check")
        return 0
    kinds = {s.kind for s in samples}
    if len(kinds) > 1:
        raise cur.CurationError(f"mixed sample kinds in one manifest: {sorted(kinds)}")
    cfg = _bench_config(args) if kinds == {"bench"} else _diag_config(args)
    reports = [sy.oracle_check_pair(s, seq, cfg) for s in samples]
    failures = [r for r in reports if not r.passed]
    for r in failures:
        print(f"FAIL {r.sample_id}: {'; '.join(r.failures())}")
    print(f"checked {len(reports)} samples: {len(reports) - len(failures)} passed, {len(failures)} failed")
    if args.out:
        lines = [
            json.dumps(
                {
                    "sample_id": r.sample_id,
                    "passed": r.passed,
                    "checks": [{"name": n, "ok": ok, "detail": d} for n, ok, d in r.checks],
                }
            )
            for r in reports
        ]
        fr.atomic_write_text(Path(args.out), "\n".join(lines) + "\n")
        print(f"wrote {args.out}")
    return 1 if failures else 0


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------

def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = _Parser(prog="posebench", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    subs = parser.add_subparsers(dest="command", parser_class=_Parser)
    registry: dict[str, argparse.ArgumentParser] = {}

    def sub(name: str, func, help_text: str) -> argparse.ArgumentParser:
        p = subs.add_parser(name, help=help_text)
        p.set_defaults(func=func)
        p.add_argument("--seed", type=int, default=0, help="master RNG seed")
        p.add_argument("--config", default=None, help="JSON file whose keys mirror the flags")
        p.add_argument("-v", "--verbose", action="count", default=0,
                       help="log progress to stderr (-vv for debug)")
        registry[name] = p
        return p

    p = sub("ingest", _cmd_ingest, "convert a native dataset layout into a sequence manifest")
    p.add_argument("input", help="sequence directory of the dataset")
    p.add_argument("--profile", required=True, choices=[n for n in fr.registered_profiles() if n != "manifest"])
    p.add_argument("--out", required=True)
    p.add_argument("--depth-scale", type=float, default=None)
    p.add_argument("--fx", type=float, default=None)
    p.add_argument("--fy", type=float, default=None)
    p.add_argument("--cx", type=float, default=None)
    p.add_argument("--cy", type=float, default=None)
    p.add_argument("--width", type=int, default=None)
    p.add_argument("--height", type=int, default=None)

    p = sub("synth", _cmd_synth, "generate a synthetic posed sequence (and optional correspondences)")
    p.add_argument("--kind", choices=("orbit", "single-dof", "static"), default="orbit")
    p.add_argument("--frames", type=int, default=60)
    p.add_argument("--step", type=float, default=1.0, help="orbit angular step per frame, degrees")
    p.add_argument("--radius", type=float, default=2.0)
    p.add_argument("--center", default="0,0,0")
    p.add_argument("--start-deg", type=float, default=0.0)
    p.add_argument("--dof", choices=cur.DOF_ORDER, default="phi")
    p.add_argument("--increment", type=float, default=0.0,
                   help="per-frame step (degrees for rotations, metric for translations)")
    p.add_argument("--depth-scale", type=float, default=5000.0)
    p.add_argument("--no-depth", action="store_true", help="skip depth rendering")
    p.add_argument("--sequence-id", default="synthetic")
    p.add_argument("--scene-points", type=int, default=500)
    p.add_argument("--noise-sigma", type=float, default=0.0, help="pixel noise for correspondences")
    p.add_argument("--outlier-fraction", type=float, default=0.0)
    p.add_argument("--matches", default=None, help="frame pairs 'src-tgt,src-tgt' to export as CSVs")
    p.add_argument("--matches-from", default=None, help="sample manifest whose pairs get CSVs")
    p.add_argument("--out-dir", required=True)

    p = sub("curate-bench", _cmd_curate_bench, "filter shared-point pairs into angle bins")
    p.add_argument("manifest")
    _add_gap_flags(p)
    _add_bench_flags(p)
    p.add_argument("--out", required=True)

    p = sub("curate-diag", _cmd_curate_diag, "filter single-DoF pairs")
    p.add_argument("manifest")
    _add_gap_flags(p)
    _add_diag_flags(p)
    p.add_argument("--out", required=True)

    p = sub("solve", _cmd_solve, "estimate relative pose from a correspondence CSV")
    p.add_argument("correspondences")
    p.add_argument("--intrinsics", required=True, help="fx,fy,cx,cy,width,height of the source camera")
    p.add_argument("--intrinsics-tgt", default=None, help="target camera, defaults to --intrinsics")
    p.add_argument("--classify-rule", choices=("yaw", "lateral"), default="yaw")
    p.add_argument("--iterations", type=int, default=2000)
    p.add_argument("--threshold", type=float, default=1e-3)
    p.add_argument("--confidence", type=float, default=0.999)
    p.add_argument("--out", default=None)

    p = sub("eval", _cmd_eval, "score a prediction file against a sample manifest")
    p.add_argument("samples")
    p.add_argument("predictions")
    p.add_argument("--swapped", default=None, help="predictions on the swapped pairs")
    p.add_argument("--out", default=None)

    p = sub("consistency", _cmd_consistency, "swap-consistency of two prediction files")
    p.add_argument("samples")
    p.add_argument("original")
    p.add_argument("swapped")
    p.add_argument("--out", default=None)

    p = sub("check", _cmd_check, "independently re-verify every sample of a manifest")
    p.add_argument("manifest")
    p.add_argument("samples")
    _add_gap_flags(p)
    _add_bench_flags(p)
    _add_diag_flags(p)
    p.add_argument("--out", default=None)

    return parser, registry


def _apply_config(parser, registry, argv) -> argparse.Namespace:
    args = parser.parse_args(argv)
    config_path = getattr(args, "config", None)
    if not config_path:
        return args
    with open(config_path, "r", encoding="utf-8") as fh:
        config = json.load(fh)
    if not isinstance(config, dict):
        raise ValueError(f"{config_path}: config must be a JSON object")
    sub = registry[args.command]
    known = vars(args)
    unknown = [k for k in config if k not in known]
    if unknown:
        raise ValueError(f"{config_path}: unknown config keys {unknown}")
    sub.set_defaults(**config)
    # Re-parse so explicit command-line flags still win over config values.
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser, registry = build_parser()
    try:
        args = _apply_config(parser, registry, argv)
        if not getattr(args, "command", None):
            parser.print_usage(sys.stderr)
            return 1
        level = logging.WARNING - 10 * min(getattr(args, "verbose", 0), 2)
        logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
        _LOG.info("running %s", args.command)
        return args.func(args)
    except SystemExit as exc:  # argparse usage errors and --help
        code = exc.code
        return int(code) if isinstance(code, int) else (0 if code is None else 1)
    except (fr.MissingFile, FileNotFoundError) as exc:
        print(_qualify(exc), file=sys.stderr)
        return 2
    except OSError as exc:
        print(_qualify(exc), file=sys.stderr)
        return 2
    except fr.ManifestError as exc:
        print(_qualify(exc), file=sys.stderr)
        return 1
    except _DOMAIN_ERRORS as exc:
        print(_qualify(exc), file=sys.stderr)
        return 1


def _qualify(exc: BaseException) -> str:
    module = type(exc).__module__.rsplit(".", 1)[-1]
    return f"error [{module}.{type(exc).__name__}]: {exc}"


if __name__ == "__main__":
    sys.exit(main())
