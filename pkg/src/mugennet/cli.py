"""Command-line interface.

Subcommands: train, eval, predict, synth, bench, gradcheck.
Exit codes: 0 ok, 2 config error, 3 data error, 4 numerical abort.
"""

import argparse
import json
import sys

from .config import RunConfig
from .data import DatasetManifest, load_manifest_samples, synth_generate
from .exceptions import ConfigError, DataError
from .metrics import evaluate, write_report_csv
from .tensor import NumericalError
from .train import bench_fps, load_model, predict, train, TrainLog

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _parse_res(text):
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError as e:
        raise ConfigError(f"resolution must look like 256x192, got {text!r}") from e


def cmd_train(args):
    cfg = RunConfig.load(args.config)
    if args.ablate:
        flag = {"tb": "ablate_transformer", "cb": "ablate_cnn", "mm": "ablate_mugen"}[args.ablate]
        setattr(cfg, flag, True)
        cfg.validate()
    log, _ = train(cfg, log_path=args.log)
    last = log.records[-1]
    print(f"trained {cfg.epochs} epochs: final loss {last['total_loss']:.4f}, "
          f"val mDice {last['val_mdice']:.4f}, checkpoint {cfg.checkpoint}")
    return 0


def cmd_eval(args):
    cfg = RunConfig.load(args.config) if args.config else RunConfig().validate()
    model = load_model(cfg, args.checkpoint)
    res = model.cfg.image_size
    manifest = DatasetManifest.from_directory(args.data, res)
    samples = load_manifest_samples(manifest)
    report = evaluate(model, samples)
    write_report_csv(args.out, [(manifest.name, "mugennet", report)])
    print(f"evaluated {report.n_samples} samples: mDice {report.mDice:.4f}, "
          f"mIoU {report.mIoU:.4f} -> {args.out}")
    return 0


def cmd_predict(args):
    cfg = RunConfig.load(args.config) if args.config else RunConfig().validate()
    model = load_model(cfg, args.checkpoint)
    predict(model, args.image, args.out, binarize_out=args.binarized)
    print(f"wrote {args.out}")
    return 0


def cmd_synth(args):
    res = _parse_res(args.res)
    synth_generate(args.n, res, args.seed, out_dir=args.out)
    print(f"wrote {args.n} samples at {res[0]}x{res[1]} to {args.out}")
    return 0


def cmd_bench(args):
    cfg = RunConfig.load(args.config) if args.config else RunConfig().validate()
    model = load_model(cfg, args.checkpoint)
    result = bench_fps(model, n_frames=args.frames)
    row = {"epochs": cfg.epochs, "lr": cfg.lr}
    if args.log:
        rec = TrainLog.load(args.log).records
        row["train_time_s"] = sum(r["wall_time"] for r in rec)
        row["mDice"] = rec[-1]["val_mdice"]
    row.update(fps=result["fps_mean"], fps_p50=result["fps_p50"],
               resolution=result["resolution"])
    print(json.dumps(row, indent=1))
    return 0


def cmd_gradcheck(args):
    from .gradcheck import run
    results = run(module=args.module)
    ok = True
    for name, err, tol, passed in results:
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'} {name:<18} rel_err {err:.2e} (tol {tol:.0e})")
    if not ok:
        raise NumericalError("gradcheck")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="mugennet",
                                description="Hybrid transformer/CNN polyp segmentation workbench")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model from a JSON run config")
    t.add_argument("--config", required=True)
    t.add_argument("--ablate", choices=["tb", "cb", "mm"],
                   help="disable the transformer branch, CNN branch, or fusion attention")
    t.add_argument("--log", default="trainlog.json")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset directory")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", default="report.csv")
    e.add_argument("--config")
    e.set_defaults(fn=cmd_eval)

    pr = sub.add_parser("predict", help="segment one image")
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--image", required=True)
    pr.add_argument("--out", required=True)
    pr.add_argument("--binarized", help="also write a hard 0/255 mask here")
    pr.add_argument("--config")
    pr.set_defaults(fn=cmd_predict)

    s = sub.add_parser("synth", help="generate a synthetic ellipse dataset")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--res", default="64x48", help="WxH, divisible by 16")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_synth)

    b = sub.add_parser("bench", help="measure eval-mode frames per second")
    b.add_argument("--checkpoint", required=True)
    b.add_argument("--frames", type=int, default=50)
    b.add_argument("--config")
    b.add_argument("--log", help="training log to fold into the report row")
    b.set_defaults(fn=cmd_bench)

    g = sub.add_parser("gradcheck", help="finite-difference gradient self-test")
    g.add_argument("--module", help="run a single named check")
    g.set_defaults(fn=cmd_gradcheck)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as e:
        print(f"numerical abort: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
