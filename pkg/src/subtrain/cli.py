"""Command-line entry point.

Exit codes: 0 success, 2 config error, 3 data/format error, 4 numerical
failure (degenerate trajectory, impossible dimension, or a line search
that fails on the very first step).
"""

from __future__ import annotations

import argparse
import sys

from . import runner
from .config import load_config
from .errors import (ConfigError, DegenerateTrajectory, DimensionError, FormatError,
                     IoError, LabelError, LineSearchFailed, NumericalFailure, ShapeError)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="subtrain",
        description="Trajectory-subspace training toolkit: record a baseline "
                    "run, extract a low-dimensional basis, retrain inside it.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, with_d=False):
        p.add_argument("--config", required=True, help="key=value experiment config")
        p.add_argument("--out", default=None, help="run directory (default: config output_dir)")
        p.add_argument("--seed", type=int, default=None,
                       help="override all three seeds (init/data/noise)")
        if with_d:
            p.add_argument("--d", type=int, default=None, help="override subspace.d")

    common(sub.add_parser("train", help="baseline training with trajectory sampling"))
    common(sub.add_parser("extract", help="extract the basis from a trajectory"), with_d=True)
    p = sub.add_parser("ptrain", help="projected retraining from the stored init")
    common(p)
    p.add_argument("--basis", default=None, help="basis file (default: OUT/basis.dlbs)")
    p.add_argument("--init", default=None, help="initial parameters (default: OUT/w0.npy)")
    common(sub.add_parser("noise", help="label-noise comparison (SGD vs P-SGD)"))
    common(sub.add_parser("spectrum", help="print trajectory variance ratios"))
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        if args.command == "train":
            result = runner.cmd_train(cfg, args.out)
            print(f"final test acc {result['rows'][-1].test_acc:.4f} -> {result['out']}")
        elif args.command == "extract":
            result = runner.cmd_extract(cfg, args.out, d=args.d)
            top = result["ratios"][:5]
            print("top variance ratios: " + ", ".join(f"{r:.4f}" for r in top))
        elif args.command == "ptrain":
            result = runner.cmd_ptrain(cfg, args.out, basis_path=args.basis,
                                       init_path=args.init)
            print(f"final test acc {result['rows'][-1].test_acc:.4f} "
                  f"(leakage {result['leakage']:.2e}) -> {result['out']}")
        elif args.command == "noise":
            result = runner.cmd_noise(cfg, args.out)
            print(f"p_sgd_final={result['p_sgd_final']:.4f} "
                  f"sgd_final={result['sgd_final']:.4f} sgd_best={result['sgd_best']:.4f}")
        elif args.command == "spectrum":
            result = runner.cmd_spectrum(cfg, args.out)
            for i, r in enumerate(result["ratios"]):
                print(f"{i},{r!r}")
    except (ConfigError, DimensionError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (FormatError, IoError, ShapeError, LabelError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3
    except (DegenerateTrajectory, LineSearchFailed, NumericalFailure) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
