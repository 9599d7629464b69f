"""Command-line entry point: ``amsrc gen-synthetic | train | score | eval``.

Errors are reported on stderr as a single line ``error[<code>]: <message>``
and map to exit codes 2 (config), 3 (data), 4 (numerical failure).
"""

import argparse
import logging
import sys

from . import config as C
from . import data as D
from . import pipeline as P
from .flow import FlowFormatError
from .model import CheckpointError
from .numerics import NonFiniteError
from .scoring import ScoreWeights, UndefinedAUROC
from .synthetic import SyntheticConfig, generate_synthetic
from .training import NonFiniteLoss

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4


class CLIError(Exception):
    def __init__(self, code, exit_code, msg):
        super().__init__(msg)
        self.code = code
        self.exit_code = exit_code


def cmd_gen_synthetic(args):
    cfg = SyntheticConfig()
    for name in ("train_clips", "test_clips", "frames"):
        if getattr(args, name) is not None:
            setattr(cfg, name, getattr(args, name))
    ds = generate_synthetic(cfg, args.seed, args.out, force=args.force)
    n_boxes = {s: sum(len(c.boxes) for c in clips) for s, clips in ds.items()}
    n_anom = sum(int(c.labels.sum()) for c in ds["test"])
    n_test = sum(len(c.labels) for c in ds["test"])
    print(f"train clips {len(ds['train'])}  test clips {len(ds['test'])}  frames/clip {cfg.frames}")
    print(f"boxes train {n_boxes['train']}  test {n_boxes['test']}  anomalous test frames {n_anom}/{n_test}")


def _overrides(args):
    return {
        "preset": args.preset,
        "seed": args.seed,
        "data": {"flow": args.flow, "frame_stride": args.frame_stride},
        "model": {"fusion": args.fusion},
        "train": {"epochs": args.epochs, "batch_size": args.batch_size, "lr": args.lr},
    }


def cmd_train(args):
    cfg = C.resolve(args.config, _overrides(args))
    _, rows, stats = P.train_run(args.data, args.out, cfg)
    print(f"epochs {len(rows)}  first total {rows[0]['total']:.6f}  last total {rows[-1]['total']:.6f}")
    print(f"norm stats u_f={stats.u_f:.6g} d_f={stats.delta_f:.6g} u_p={stats.u_p:.6g} d_p={stats.delta_p:.6g}")
    print(f"checkpoint {args.out}")


def cmd_score(args):
    weights = None
    if args.wf is not None or args.wp is not None:
        if args.wf is None or args.wp is None:
            raise D.InvalidConfig("--wf and --wp must be given together")
        weights = ScoreWeights(args.wf, args.wp)
    records, rows = P.score_run(args.data, args.ckpt, args.out, weights, args.stats)
    print(f"scored {len(records)} objects over {len(rows)} frames -> {args.out}")


def cmd_eval(args):
    print(f"AUROC {P.evaluate(args.scores):.6f}")


def build_parser():
    ap = argparse.ArgumentParser(prog="amsrc", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-synthetic", help="write a seeded synthetic dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--train-clips", type=int)
    g.add_argument("--test-clips", type=int)
    g.add_argument("--frames", type=int)
    g.add_argument("--force", action="store_true", help="overwrite a non-empty --out")
    g.set_defaults(func=cmd_gen_synthetic)

    t = sub.add_parser("train", help="train on DATA/train")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--config", help="YAML run config")
    t.add_argument("--preset", choices=sorted(C.PRESETS))
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--fusion", choices=["gated", "add", "none"])
    t.add_argument("--flow", choices=["file", "block"])
    t.add_argument("--frame-stride", type=int)
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("score", help="score DATA/test with a checkpoint")
    s.add_argument("--data", required=True)
    s.add_argument("--ckpt", required=True)
    s.add_argument("--out", required=True, help="per-frame CSV; per-object scores go to <stem>.objects.csv")
    s.add_argument("--wf", type=float)
    s.add_argument("--wp", type=float)
    s.add_argument("--stats", help="norm-stats JSON (default: stored in the checkpoint)")
    s.set_defaults(func=cmd_score)

    e = sub.add_parser("eval", help="frame-level AUROC of a per-frame score CSV")
    e.add_argument("--scores", required=True)
    e.set_defaults(func=cmd_eval)
    return ap


def _classify(exc):
    if isinstance(exc, CLIError):
        return exc
    if isinstance(exc, (NonFiniteLoss, NonFiniteError, FloatingPointError)):
        return CLIError("numeric", EXIT_NUMERIC, str(exc))
    if isinstance(exc, (D.InvalidConfig, UndefinedAUROC)):
        return CLIError("config" if isinstance(exc, D.InvalidConfig) else "data",
                        EXIT_CONFIG if isinstance(exc, D.InvalidConfig) else EXIT_DATA, str(exc))
    if isinstance(exc, (D.DataError, FlowFormatError, CheckpointError, OSError)):
        return CLIError("data", EXIT_DATA, str(exc))
    if isinstance(exc, ValueError):
        return CLIError("config", EXIT_CONFIG, str(exc))
    return None


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        args.func(args)
    except Exception as exc:  # noqa: BLE001 - mapped to exit codes below
        err = _classify(exc)
        if err is None:
            raise
        msg = " ".join(str(err).split())
        print(f"error[{err.code}]: {msg}", file=sys.stderr)
        return err.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
