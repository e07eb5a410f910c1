"""Command-line entry point wiring every pipeline stage.

Exit codes: 0 success, 1 domain failure (infeasible placement, diverged
training, malformed data), 2 usage error (bad flags, missing files).  Every
output file is written atomically.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import ddim, fileio, lfq, metrics, motion, populate, scene, synth, tokens, vae

DENOISER_REGISTRY = {"toy-walk": synth.toy_walk_denoiser}

_DOMAIN_ERRORS = (ValueError, RuntimeError)


class UsageError(Exception):
    """Bad invocation detected after argparse (missing files, bad values)."""


def thread_cap() -> int:
    """Parallelism cap from MOTOK_THREADS (0 = auto).

    The current implementation is single-threaded vectorized code, so any
    cap is respected trivially; the variable is validated so misconfigured
    environments fail loudly.
    """
    raw = os.environ.get("MOTOK_THREADS", "0")
    try:
        cap = int(raw)
    except ValueError:
        raise UsageError(f"MOTOK_THREADS must be an integer, got {raw!r}") from None
    if cap < 0:
        raise UsageError(f"MOTOK_THREADS must be >= 0, got {cap}")
    return cap


def _require_file(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} not found: {path}")
    return p


def _require_dir(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise UsageError(f"{what} not found: {path}")
    return p


def _write_json(path, payload: dict):
    with fileio.atomic_write(path) as out:
        out.write(json.dumps(payload, indent=2, sort_keys=True).encode("utf-8"))
        out.write(b"\n")


def _write_csv(path, header: list[str], rows: list[list]):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(repr(v) if isinstance(v, float) else str(v) for v in row))
    with fileio.atomic_write(path) as out:
        out.write(("\n".join(lines) + "\n").encode("utf-8"))


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _cmd_convert(args) -> int:
    seq = fileio.read_mseq(_require_file(args.infile, "input motion"))
    if args.to_global:
        pose = motion.SixDof(translation=np.array(args.root_pose[:3]),
                             orientation=np.array(args.root_pose[3:]))
        out = motion.to_global(seq, pose)
    else:
        out = motion.to_canonical(seq)
    fileio.write_mseq(args.outfile, out)
    return 0


def _cmd_tokenize(args) -> int:
    params = fileio.read_vae(_require_file(args.vae, "VAE params"))
    seq = fileio.read_mseq(_require_file(args.infile, "input motion"))
    indices = vae.tokenize_frames(params, seq.frames)
    stream = tokens.TokenStream(indices=indices, vocab_size=params.vocab_size,
                                segment_len=vae.SEGMENT_LEN)
    fileio.write_mtok(args.outfile, stream)
    return 0


def _cmd_detokenize(args) -> int:
    params = fileio.read_vae(_require_file(args.vae, "VAE params"))
    stream = fileio.read_mtok(_require_file(args.infile, "token stream"))
    if stream.vocab_size != params.vocab_size:
        raise UsageError(
            f"token vocab {stream.vocab_size} does not match VAE vocab {params.vocab_size}"
        )
    bits = lfq.indices_to_bits(stream.indices, params.num_dims)
    frames = motion.normalize_rotations(vae.decode(params, bits.astype(np.float64)))
    seq = motion.MotionSequence(frames, fps=args.fps, is_canonical=args.canonical)
    fileio.write_mseq(args.outfile, seq)
    return 0


def _load_dataset(data_dir: Path) -> list[motion.MotionSequence]:
    paths = sorted(data_dir.glob("*.mseq"))
    if not paths:
        raise UsageError(f"no .mseq files in {data_dir}")
    return [fileio.read_mseq(p) for p in paths]


_CONFIG_COERCERS = {
    "vocab_size": int, "hidden_width": int, "downsample_layers": int,
    "lambda_recon": float, "lambda_commit": float, "lambda_entropy": float,
    "entropy_temperature": float, "learning_rate": float,
    "epochs": int, "seed": int,
}


def _vae_config(args) -> vae.ToyVaeConfig:
    """Defaults, then config-file settings, then explicit flags."""
    settings: dict = {}
    if args.config:
        raw = fileio.parse_flat_config(_require_file(args.config, "config file"))
        for key, value in raw.items():
            if key not in _CONFIG_COERCERS:
                raise UsageError(f"unknown config key {key!r}")
            try:
                settings[key] = _CONFIG_COERCERS[key](value)
            except ValueError:
                raise UsageError(f"bad value for {key!r}: {value!r}") from None
    for key in _CONFIG_COERCERS:
        flag = getattr(args, key, None)
        if flag is not None:
            settings[key] = flag
    return vae.ToyVaeConfig(**settings)


def _history_csv(path, history: list[dict]):
    rows = [[int(h["epoch"]), h["recon"], h["commit"], h["entropy"], h["total"]]
            for h in history]
    _write_csv(path, ["epoch", "recon", "commit", "entropy", "total"], rows)


def _cmd_train_vae(args) -> int:
    config = _vae_config(args)
    dataset = _load_dataset(_require_dir(args.data, "data directory"))
    params, history = vae.train(config, dataset)
    fileio.write_vae(args.out, params)
    history_path = args.history or str(Path(args.out).parent / "loss_history.csv")
    _history_csv(history_path, history)
    return 0


def _corpus_utilization(params: vae.ToyVaeParams, dataset) -> tuple[float, float]:
    all_tokens = np.concatenate([vae.tokenize_frames(params, s.frames) for s in dataset])
    return lfq.codebook_utilization(all_tokens, params.codebook)


def _corpus_mse(params: vae.ToyVaeParams, dataset) -> float:
    return float(np.mean([vae.reconstruction_mse(params, s.frames) for s in dataset]))


def _cmd_sweep_vocab(args) -> int:
    try:
        ks = [int(v) for v in args.ks.split(",") if v]
    except ValueError:
        raise UsageError(f"--ks must be a comma-separated integer list, got {args.ks!r}") from None
    if not ks:
        raise UsageError("--ks is empty")
    dataset = _load_dataset(_require_dir(args.data, "data directory"))
    base = _vae_config(args)
    rows = []
    for k in ks:
        cfg = dataclasses.replace(base, vocab_size=k)
        params, _ = vae.train(cfg, dataset)
        mse = _corpus_mse(params, dataset)
        fraction, entropy = _corpus_utilization(params, dataset)
        plain_cfg = dataclasses.replace(cfg, lambda_entropy=0.0)
        plain_params, _ = vae.train(plain_cfg, dataset)
        plain_fraction, plain_entropy = _corpus_utilization(plain_params, dataset)
        rows.append([k, mse, fraction, entropy,
                     _corpus_mse(plain_params, dataset), plain_fraction, plain_entropy])
    _write_csv(args.out,
               ["vocab_size", "final_mse", "utilization_fraction", "utilization_entropy",
                "final_mse_noentropy", "utilization_fraction_noentropy",
                "utilization_entropy_noentropy"],
               rows)
    return 0


def _waypoints_to_frames(track: np.ndarray) -> np.ndarray:
    frames = np.zeros((track.shape[0], motion.FRAME_DIM))
    frames[:, 0:6] = track[:, 0:6]
    frames[:, 69:75] = track[:, 6:12]
    return frames


def _cmd_sample(args) -> int:
    schedule = ddim.NoiseSchedule()
    if args.denoiser not in DENOISER_REGISTRY:
        raise UsageError(f"unknown denoiser {args.denoiser!r}; have {sorted(DENOISER_REGISTRY)}")
    denoiser = DENOISER_REGISTRY[args.denoiser](schedule, args.waypoints)
    guidance = None
    if args.heading is not None:
        guidance = ddim.GuidanceConfig(scale=args.cfg_scale,
                                       condition=ddim.Condition(text=args.heading))
    shape = (args.waypoints, 12)
    if args.two_pass:
        track = ddim.two_pass_sample(denoiser, shape, schedule, args.steps, guidance, args.seed)
    else:
        track = ddim.ddim_sample(denoiser, shape, schedule, args.steps, guidance, args.seed)
    frames = motion.normalize_rotations(_waypoints_to_frames(track))
    # one waypoint per second of motion, hence fps = 1 for the emitted track
    seq = motion.MotionSequence(frames, fps=1, is_canonical=False)
    fileio.write_mseq(args.out, seq)
    return 0


def _cmd_populate(args) -> int:
    grid = fileio.read_vox(_require_file(args.scene, "scene voxels"))
    seq = fileio.read_mseq(_require_file(args.motion, "input motion"))
    config = populate.PlacementConfig(
        yaw_count=args.yaw_count,
        feasibility_threshold=args.threshold,
    )
    try:
        result = populate.optimize_placement(seq, grid, config)
    except populate.SceneLessError as exc:
        if args.report:
            _write_json(args.report, {"feasible": False, "scene_less": True,
                                      "error": str(exc)})
        print(f"scene-less: {exc}", file=sys.stderr)
        return 1
    fileio.write_mseq(args.out, result.placed)
    if args.report:
        _write_json(args.report, {
            "offset": {
                "x": float(result.offset.xz_translation[0]),
                "z": float(result.offset.xz_translation[1]),
                "yaw": result.offset.yaw,
            },
            "collision": result.collision,
            "feasible": result.feasible,
            "candidates_evaluated": result.candidates_evaluated,
        })
    if not result.feasible:
        print(f"infeasible placement: collision {result.collision:.6f} m "
              f"exceeds {config.feasibility_threshold:.6f} m", file=sys.stderr)
        return 1
    return 0


def _geometry_scores(seq: motion.MotionSequence, grid=None, points=None) -> dict:
    if seq.is_canonical:
        raise UsageError("geometry scoring expects a global motion (convert first)")
    keypoints = scene.body_keypoints(seq)
    report: dict = {}
    if grid is not None:
        pen, frac = scene.collision_score(keypoints, scene.build_sdf(grid))
        report["collision_scene"] = pen
        report["collision_scene_fraction"] = frac
    if points is not None:
        # query human keypoints in the object's local frame against one static
        # SDF of the base point cloud; exact for a rigidly moving object
        rot = motion.axis_angle_to_matrix(seq.frames[:, motion.OBJ_ROT])
        local = np.einsum("tba,tjb->tja", rot, keypoints - seq.frames[:, None, motion.OBJ_POS])
        object_sdf = scene.build_sdf(scene.voxelize_points(points, cell_size=0.05))
        pen, frac = scene.collision_score(local, object_sdf)
        report["collision"] = pen
        report["collision_fraction"] = frac
        track = scene.object_points_track(points, seq)
        report["contact"] = scene.contact_score(keypoints, track)
    return report


def _cmd_score(args) -> int:
    seq = fileio.read_mseq(_require_file(args.motion, "input motion"))
    grid = fileio.read_vox(_require_file(args.scene, "scene voxels")) if args.scene else None
    points = fileio.read_pts(_require_file(args.object, "object points")) if args.object else None
    if grid is None and points is None:
        raise UsageError("score needs --scene and/or --object")
    report = _geometry_scores(seq, grid, points)
    if args.report:
        _write_json(args.report, report)
    else:
        print(json.dumps(report, indent=2, sort_keys=True))
    return 0


def _cmd_eval(args) -> int:
    real = fileio.read_feat(_require_file(args.real, "real features"))
    gen = fileio.read_feat(_require_file(args.gen, "generated features"))
    text = fileio.read_feat(_require_file(args.text, "text features"))
    report = {
        "fid": metrics.frechet_distance(metrics.fit_gaussian(real),
                                        metrics.fit_gaussian(gen)),
        "mmd": metrics.multimodal_distance(gen, text),
        "diversity": metrics.diversity(gen, seed=args.seed),
    }
    for k in (1, 2, 3):
        report[f"r{k}"] = metrics.r_precision(gen, text, pool_size=args.pool_size,
                                              k=k, seed=args.seed)
    if args.motion:
        seq = fileio.read_mseq(_require_file(args.motion, "input motion"))
        grid = fileio.read_vox(_require_file(args.scene, "scene voxels")) if args.scene else None
        points = (fileio.read_pts(_require_file(args.object, "object points"))
                  if args.object else None)
        if grid is not None or points is not None:
            report.update(_geometry_scores(seq, grid, points))
    _write_json(args.report, report)
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _parse_root_pose(text: str) -> list[float]:
    parts = text.split(",")
    if len(parts) != 6:
        raise argparse.ArgumentTypeError("root pose needs 6 comma-separated numbers")
    return [float(p) for p in parts]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="motok",
                                     description="motion tokenization and evaluation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="switch between canonical and global motion")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--to-global", action="store_true", dest="to_global")
    group.add_argument("--to-canonical", action="store_false", dest="to_global")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", dest="outfile", required=True)
    p.add_argument("--root-pose", dest="root_pose", type=_parse_root_pose,
                   default=[0.0] * 6,
                   help="x,y,z,rx,ry,rz world offset for --to-global "
                        "(use --root-pose=<v> when the first value is negative)")
    p.set_defaults(func=_cmd_convert)

    p = sub.add_parser("tokenize", help="encode a motion into token indices")
    p.add_argument("--vae", required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", dest="outfile", required=True)
    p.set_defaults(func=_cmd_tokenize)

    p = sub.add_parser("detokenize", help="decode token indices back to motion")
    p.add_argument("--vae", required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", dest="outfile", required=True)
    p.add_argument("--fps", type=int, default=30)
    p.add_argument("--canonical", action="store_true")
    p.set_defaults(func=_cmd_detokenize)

    p = sub.add_parser("train-vae", help="train the toy tokenizer autoencoder")
    p.add_argument("--config", help="flat key = value settings file")
    p.add_argument("--data", required=True, help="directory of .mseq files")
    p.add_argument("--out", required=True, help="output .vae params path")
    p.add_argument("--history", help="loss history CSV path (default: next to --out)")
    for key, coerce in _CONFIG_COERCERS.items():
        p.add_argument(f"--{key.replace('_', '-')}", dest=key, type=coerce, default=None)
    p.set_defaults(func=_cmd_train_vae)

    p = sub.add_parser("sweep-vocab", help="train across vocab sizes, with and without "
                                           "the entropy term, and tabulate the results")
    p.add_argument("--ks", required=True, help="comma-separated vocab sizes")
    p.add_argument("--data", required=True)
    p.add_argument("--out", default="vocab_sweep.csv")
    p.add_argument("--config", help="flat key = value settings file")
    for key, coerce in _CONFIG_COERCERS.items():
        if key != "vocab_size":
            p.add_argument(f"--{key.replace('_', '-')}", dest=key, type=coerce, default=None)
    p.set_defaults(func=_cmd_sweep_vocab, vocab_size=None)

    p = sub.add_parser("sample", help="sample a waypoint track with the toy denoiser")
    p.add_argument("--steps", type=int, default=20)
    # default guidance strength is an arbitrary starting point; sweep it
    p.add_argument("--cfg-scale", dest="cfg_scale", type=float, default=2.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--waypoints", type=int, default=10)
    p.add_argument("--heading", type=float, default=None,
                   help="condition the toy denoiser on this heading (radians)")
    p.add_argument("--denoiser", default="toy-walk", choices=sorted(DENOISER_REGISTRY))
    p.add_argument("--two-pass", action="store_true", dest="two_pass",
                   help="coarse-to-fine: strided first pass conditions the second")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_sample)

    p = sub.add_parser("populate", help="place a canonical motion into a scene")
    p.add_argument("--scene", required=True)
    p.add_argument("--motion", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report", help="placement report JSON path")
    p.add_argument("--threshold", type=float, default=1e-3,
                   help="max penetration (m) still considered feasible")
    p.add_argument("--yaw-count", dest="yaw_count", type=int, default=16)
    p.set_defaults(func=_cmd_populate)

    p = sub.add_parser("score", help="collision/contact scores for one motion")
    p.add_argument("--scene")
    p.add_argument("--motion", required=True)
    p.add_argument("--object")
    p.add_argument("--report", help="write JSON here instead of stdout")
    p.set_defaults(func=_cmd_score)

    p = sub.add_parser("eval", help="distribution metrics over feature files")
    p.add_argument("--real", required=True)
    p.add_argument("--gen", required=True)
    p.add_argument("--text", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--pool-size", dest="pool_size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--motion", help="optional motion for geometry scores")
    p.add_argument("--scene", help="optional scene voxels for geometry scores")
    p.add_argument("--object", help="optional object points for geometry scores")
    p.set_defaults(func=_cmd_eval)

    return parser


def dispatch(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        thread_cap()
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except _DOMAIN_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main(argv=None) -> int:
    return dispatch(sys.argv[1:] if argv is None else argv)


if __name__ == "__main__":
    sys.exit(main())
