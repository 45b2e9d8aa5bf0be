"""Command-line interface.

Every subcommand maps onto a library operation; a flat ``key = value``
config file can seed any flag, with explicit flags winning.  Exit codes:
0 success, 1 runtime failure, 2 usage error.  The SEMISTEREO_THREADS
environment variable caps BLAS thread pools (1 forces serial execution).
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import evalnet, matchnet, metrics
from .errors import SemiStereoError
from .imageio import (
    DisparityMap,
    decode_image,
    load_dataset,
    parse_calib,
    read_pfm,
    write_pfm,
    write_pgm,
)
from .pipeline import PipelineConfig, SynthConfig, run_pipeline
from .synth import SyntheticSceneSpec, gen_synthetic
from .tensornet import TrainConfig, grad_check, init_params, load_params, save_params, sgd_train
from .transforms import TransformConfig


def _lr_pair(text: str):
    try:
        start, _, end = text.partition(":")
        return float(start), float(end) if end else float(start)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LR or LR_START:LR_END, got {text!r}")


def _add_transform_flags(p):
    p.add_argument("--rank-window", type=int, default=31)
    p.add_argument("--companion-window", type=int, default=61)
    p.add_argument("--ray-directions", type=int, default=8, choices=(4, 8, 16))


def _transform_config(args) -> TransformConfig:
    return TransformConfig(args.rank_window, args.companion_window, args.ray_directions)


def _add_train_flags(p, batch=32, seed=7):
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--lr", type=_lr_pair, default=(0.002, 0.0001), metavar="START:END")
    p.add_argument("--batch", type=int, default=batch)
    p.add_argument("--seed", type=int, default=seed)


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        lr_start=args.lr[0],
        lr_end=args.lr[1],
        epochs=args.epochs,
        batch_size=args.batch,
        seed=args.seed,
    )


def _write_scene(out_dir: Path, record):
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "im0.pgm").write_bytes(write_pgm(record.left))
    (out_dir / "im1.pgm").write_bytes(write_pgm(record.right))
    if record.gt is not None:
        (out_dir / "disp0GT.pfm").write_bytes(write_pfm(record.gt))
    if record.nonocc_mask is not None:
        from .imageio import GrayImage

        mask = GrayImage.from_levels(record.nonocc_mask.astype(np.uint8) * 255)
        (out_dir / "mask0nocc.pgm").write_bytes(write_pgm(mask))
    calib = record.calib
    lines = [f"ndisp={calib.ndisp}", f"width={record.left.width}", f"height={record.left.height}"]
    (out_dir / "calib.txt").write_text("\n".join(lines) + "\n")


def cmd_prepare(args):
    records = load_dataset(args.root, args.resolution)
    out = Path(args.out)
    for record in records:
        _write_scene(out / record.name, record)
    print(f"prepared {len(records)} scene(s) under {out}")
    return 0


def cmd_synth(args):
    out = Path(args.out)
    rng = np.random.default_rng(args.seed)
    for _ in range(args.scenes):
        spec = SyntheticSceneSpec(
            width=args.width,
            height=args.height,
            ndisp=args.ndisp,
            texture_density=args.texture_density,
            textureless_fraction=args.textureless_fraction,
            lighting_gain=args.lighting_gain,
            seed=int(rng.integers(0, 2**31)),
        )
        record = gen_synthetic(spec)
        _write_scene(out / record.name, record)
    print(f"wrote {args.scenes} scene(s) under {out}")
    return 0


def cmd_train_matcher(args):
    records = [r for r in load_dataset(args.data, args.resolution) if r.gt is not None]
    cfg = _transform_config(args)
    samples = matchnet.sample_matching_patches(records, cfg, args.per_class, rng=args.sample_seed)
    params = init_params(matchnet.matching_net_spec(), matchnet.INPUT_SHAPE, seed=args.seed)
    trained, losses = sgd_train(params, samples.samples, samples.labels, _train_config(args))
    Path(args.out).write_bytes(save_params(trained))
    print("epoch losses: " + " ".join(f"{l:.5f}" for l in losses))
    print(f"saved matcher weights to {args.out}")
    return 0


def cmd_train_evaluator(args):
    records = [r for r in load_dataset(args.data, args.resolution) if r.gt is not None]
    matcher = load_params(Path(args.matcher).read_bytes())
    matchnet._check_matcher(matcher)
    cfg = _transform_config(args)
    pairs = []
    for record in records:
        volume = matchnet.infer_cost_volume(record.left, record.right, record.calib, cfg, matcher)
        pairs.append((record, matchnet.wta(volume)))
    samples = evalnet.sample_eval_patches(
        pairs, args.t_e, rng=args.sample_seed, max_per_class=args.max_per_class
    )
    params = init_params(evalnet.evaluation_net_spec(), evalnet.INPUT_SHAPE, seed=args.seed)
    trained, losses = sgd_train(params, samples.samples, samples.labels, _train_config(args))
    Path(args.out).write_bytes(save_params(trained))
    print("epoch losses: " + " ".join(f"{l:.5f}" for l in losses))
    print(f"saved evaluator weights to {args.out}")
    return 0


def _read_calib_arg(args):
    if args.calib:
        return parse_calib(Path(args.calib).read_text())
    if args.ndisp:
        return None
    raise SemiStereoError("need --calib or --ndisp")


def cmd_infer(args):
    from .imageio import CalibInfo

    left = decode_image(Path(args.left).read_bytes())
    right = decode_image(Path(args.right).read_bytes())
    calib = _read_calib_arg(args) or CalibInfo(
        ndisp=args.ndisp, width=left.width, height=left.height
    )
    matcher = load_params(Path(args.matcher).read_bytes())
    volume = matchnet.infer_cost_volume(
        left, right, calib, _transform_config(args), matcher, method=args.method
    )
    raw = matchnet.wta(volume)
    Path(args.out_disp).write_bytes(write_pfm(raw))
    if args.out_volume:
        Path(args.out_volume).write_bytes(matchnet.save_cost_volume(volume))
    print(f"wrote raw disparity map to {args.out_disp}")
    return 0


def cmd_filter(args):
    left = decode_image(Path(args.left).read_bytes())
    raw = read_pfm(Path(args.raw).read_bytes())
    raw = DisparityMap(raw.data, ndisp=args.ndisp)
    if args.conf:
        loaded = read_pfm(Path(args.conf).read_bytes())
        conf = evalnet.ConfidenceMap(
            np.where(loaded.valid_mask(), loaded.data, 0.0), loaded.valid_mask()
        )
    else:
        evaluator = load_params(Path(args.evaluator).read_bytes())
        conf = evalnet.confidence_map(left, raw, evaluator)
    filtered = evalnet.filter_disparity(raw, conf, args.r)
    Path(args.out).write_bytes(write_pfm(filtered))
    if args.out_conf:
        values = np.where(conf.valid, conf.values, np.inf)
        Path(args.out_conf).write_bytes(write_pfm(DisparityMap(values)))
    print(f"wrote filtered disparity map to {args.out}")
    return 0


def _load_mask(path):
    if not path:
        return None
    return decode_image(Path(path).read_bytes()).levels() != 0


def cmd_eval(args):
    gt = read_pfm(Path(args.gt).read_bytes())
    pred = read_pfm(Path(args.pred).read_bytes())
    mask = _load_mask(args.mask)
    report = metrics.scene_report(args.scene, pred, gt, mask)
    sys.stdout.write(metrics.reports_csv([report], include_aggregate=False))
    return 0


def cmd_curve(args):
    gt = read_pfm(Path(args.gt).read_bytes())
    raw = read_pfm(Path(args.raw).read_bytes())
    loaded = read_pfm(Path(args.conf).read_bytes())
    conf = evalnet.ConfidenceMap(
        np.where(loaded.valid_mask(), loaded.data, 0.0), loaded.valid_mask()
    )
    mask = _load_mask(args.mask)
    points = metrics.error_vs_invalid_curve(raw, conf, gt, mask, n=args.n)
    Path(args.out_csv).write_text(metrics.curve_csv(points))
    if args.out_svg:
        Path(args.out_svg).write_text(metrics.curve_svg(points))
    print(f"wrote curve to {args.out_csv}")
    return 0


def cmd_gradcheck(args):
    rng = np.random.default_rng(args.seed)
    failures = 0
    for name, specs, shape in (
        ("matching-net", matchnet.matching_net_spec(), matchnet.INPUT_SHAPE),
        ("evaluation-net", evalnet.evaluation_net_spec(), evalnet.INPUT_SHAPE),
    ):
        params = init_params(specs, shape, seed=args.seed)
        x = rng.random((1,) + shape)
        t = rng.integers(0, 2, size=1)
        err = grad_check(params, x, t, seed=args.seed)
        status = "ok" if err < 1e-4 else "FAIL"
        failures += status == "FAIL"
        print(f"{name}: max relative error {err:.3e} [{status}]")
    return 1 if failures else 0


def cmd_pipeline(args):
    synth = SynthConfig(
        width=args.width,
        height=args.height,
        ndisp=args.ndisp,
        train_scenes=args.train_scenes,
        eval_scenes=args.eval_scenes,
        eval_textureless_fraction=args.textureless_fraction,
        eval_lighting_gain=args.lighting_gain,
    )
    matcher_train = replace(_train_config(args), seed=args.seed + 1)
    evaluator_train = replace(_train_config(args), seed=args.seed + 2)
    cfg = PipelineConfig(
        out_dir=args.out,
        dataset_root=args.dataset_root,
        resolution=args.resolution,
        synth=synth,
        transform=_transform_config(args),
        matcher_train=matcher_train,
        evaluator_train=evaluator_train,
        t_e=args.t_e,
        r_threshold=args.r,
        match_per_class=args.per_class,
        eval_max_per_class=args.max_per_class,
        seed=args.seed,
        train=not args.no_train,
        matcher_weights=args.matcher,
        evaluator_weights=args.evaluator,
    )
    reports, _ = run_pipeline(cfg)
    if reports:
        sys.stdout.write(metrics.reports_csv(reports))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="semistereo",
        description="Semi-dense stereo matching with learned costs and confidence filtering.",
    )
    parser.add_argument("--config", help="flat key = value file; explicit flags override")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="downsample a dataset tree into the working layout")
    p.add_argument("--root", required=True)
    p.add_argument("--resolution", default="half", choices=("full", "half", "quarter"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("synth", help="generate random-dot stereo scenes")
    p.add_argument("--scenes", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--height", type=int, default=128)
    p.add_argument("--ndisp", type=int, default=16)
    p.add_argument("--texture-density", type=float, default=1.0)
    p.add_argument("--textureless-fraction", type=float, default=0.0)
    p.add_argument("--lighting-gain", type=float, default=1.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train-matcher", help="train the matching network")
    p.add_argument("--data", required=True)
    p.add_argument("--resolution", default="half", choices=("full", "half", "quarter"))
    p.add_argument("--out", required=True)
    p.add_argument("--per-class", type=int, default=2000)
    p.add_argument("--sample-seed", type=int, default=1)
    _add_train_flags(p)
    _add_transform_flags(p)
    p.set_defaults(func=cmd_train_matcher)

    p = sub.add_parser("train-evaluator", help="train the confidence network")
    p.add_argument("--data", required=True)
    p.add_argument("--resolution", default="half", choices=("full", "half", "quarter"))
    p.add_argument("--matcher", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--t-e", type=float, default=1.0)
    p.add_argument("--max-per-class", type=int, default=1000)
    p.add_argument("--sample-seed", type=int, default=2)
    _add_train_flags(p, seed=8)
    _add_transform_flags(p)
    p.set_defaults(func=cmd_train_evaluator)

    p = sub.add_parser("infer", help="cost volume + WTA raw disparity map")
    p.add_argument("--left", required=True)
    p.add_argument("--right", required=True)
    p.add_argument("--calib")
    p.add_argument("--ndisp", type=int)
    p.add_argument("--matcher", required=True)
    p.add_argument("--method", default="conv", choices=("conv", "patch"))
    p.add_argument("--out-disp", required=True)
    p.add_argument("--out-volume")
    _add_transform_flags(p)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("filter", help="confidence-filter a raw disparity map")
    p.add_argument("--left", required=True)
    p.add_argument("--raw", required=True)
    p.add_argument("--ndisp", type=int, required=True)
    p.add_argument("--evaluator")
    p.add_argument("--conf", help="precomputed confidence PFM (skips the evaluator)")
    p.add_argument("--r", type=float, default=0.9)
    p.add_argument("--out", required=True)
    p.add_argument("--out-conf")
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("eval", help="bad-N / RMS / density metrics as CSV")
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--mask")
    p.add_argument("--scene", default="scene")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("curve", help="error-vs-invalid curve over a threshold grid")
    p.add_argument("--gt", required=True)
    p.add_argument("--raw", required=True)
    p.add_argument("--conf", required=True)
    p.add_argument("--mask")
    p.add_argument("--n", type=float, default=2.0)
    p.add_argument("--out-csv", required=True)
    p.add_argument("--out-svg")
    p.set_defaults(func=cmd_curve)

    p = sub.add_parser("gradcheck", help="finite-difference check of both architectures")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("pipeline", help="full train / infer / filter / evaluate run")
    p.add_argument("--out", required=True)
    p.add_argument("--dataset-root")
    p.add_argument("--resolution", default="half", choices=("full", "half", "quarter"))
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--height", type=int, default=128)
    p.add_argument("--ndisp", type=int, default=16)
    p.add_argument("--train-scenes", type=int, default=10)
    p.add_argument("--eval-scenes", type=int, default=2)
    p.add_argument("--textureless-fraction", type=float, default=0.15)
    p.add_argument("--lighting-gain", type=float, default=1.2)
    p.add_argument("--t-e", type=float, default=1.0)
    p.add_argument("--r", type=float, default=0.9)
    p.add_argument("--per-class", type=int, default=2000)
    p.add_argument("--max-per-class", type=int, default=1000)
    p.add_argument("--no-train", action="store_true")
    p.add_argument("--matcher")
    p.add_argument("--evaluator")
    _add_train_flags(p)
    _add_transform_flags(p)
    p.set_defaults(func=cmd_pipeline)
    return parser


def _load_config_file(path: str) -> dict:
    values = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#") or "=" not in line:
            continue
        key, _, value = line.partition("=")
        values[key.strip().replace("-", "_")] = value.strip().strip('"')
    return values


def _coerce(parser_default, text):
    if isinstance(parser_default, bool):
        return text.lower() in ("1", "true", "yes", "on")
    if isinstance(parser_default, int):
        return int(text)
    if isinstance(parser_default, float):
        return float(text)
    if isinstance(parser_default, tuple):
        return _lr_pair(text)
    return text


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()

    if "--config" in argv:
        at = argv.index("--config")
        try:
            cfg_path = argv[at + 1]
        except IndexError:
            parser.error("--config needs a file path")
        file_values = _load_config_file(cfg_path)
        # config values become subparser defaults; explicit flags still win
        for action in parser._subparsers._group_actions[0].choices.values():
            defaults = {}
            for act in action._actions:
                if act.dest in file_values:
                    defaults[act.dest] = _coerce(act.default, file_values[act.dest])
                    act.required = False
            action.set_defaults(**defaults)

    args = parser.parse_args(argv)

    limit = os.environ.get("SEMISTEREO_THREADS")
    try:
        if limit:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=int(limit)):
                return args.func(args)
        return args.func(args)
    except SemiStereoError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
