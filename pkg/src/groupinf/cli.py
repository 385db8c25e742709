"""Command-line entry point.

Subcommands: ``train``, ``attribute``, ``select``, ``kappa-matrix``.
Each takes ``--config <path>`` plus ``--out <dir>``, ``--seed <u64>``
(overrides the config seed), and ``--threads <n>``. Exit codes: 0
success, 1 configuration error, 2 numerical or stage error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .config import load_config
from .errors import ConfigError, GroupInfError
from .model import accuracy, mean_loss, objective_grad, save_params, train
from .oracle import (class_pair_analysis, prepare_data, resolve_arch,
                     run_attribution_benchmark, run_selection_benchmark)
from .reports import (write_attribution_report, write_kappa_matrix,
                      write_selection_report)


def _add_common(parser: argparse.ArgumentParser):
    parser.add_argument("--config", required=True, help="JSON run configuration")
    parser.add_argument("--out", default="out", help="output directory")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the config's master seed")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker threads for independent retrainings")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="groupinf",
        description="Interaction-aware group influence, selection, and oracles")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, descr in [
        ("train", "train a model and write its parameter artifact"),
        ("attribute", "run the attribution benchmark (estimates vs retraining)"),
        ("select", "run the selection benchmark (select, retrain, evaluate)"),
        ("kappa-matrix", "write the class-pair mean interaction matrix"),
    ]:
        _add_common(sub.add_parser(name, help=descr))
    return parser


def cmd_train(cfg, outdir: Path, threads: int) -> int:
    train_ds, test_ds = prepare_data(cfg)
    arch = resolve_arch(cfg, train_ds)
    params = train(train_ds, arch, cfg.train)
    grad_norm = float(np.linalg.norm(
        objective_grad(params, train_ds, cfg.train.weight_decay)))
    metrics = {
        "final_gradient_norm": grad_norm,
        "train_loss": mean_loss(params, train_ds),
        "test_loss": mean_loss(params, test_ds),
        "n_train": train_ds.n,
        "n_test": test_ds.n,
        "config": cfg.raw,
    }
    if train_ds.is_classification:
        metrics["train_accuracy"] = accuracy(params, train_ds)
        metrics["test_accuracy"] = accuracy(params, test_ds)
    save_params(params, str(outdir / "model.bin"), sidecar=metrics)
    print(f"wrote {outdir / 'model.bin'} (grad norm {grad_norm:.3e})")
    return 0


def cmd_attribute(cfg, outdir: Path, threads: int) -> int:
    from . import figures
    report = run_attribution_benchmark(cfg, threads=threads)
    write_attribution_report(report, str(outdir))
    figures.attribution_figure(report, str(outdir))
    print(f"rho_first_order={report.rho_first_order:.4f} "
          f"rho_interaction_aware={report.rho_interaction_aware:.4f} "
          f"({len(report.records)} groups, {report.wall_clock_s:.1f}s)")
    return 0


def cmd_select(cfg, outdir: Path, threads: int) -> int:
    from . import figures
    report = run_selection_benchmark(cfg, threads=threads)
    write_selection_report(report, str(outdir))
    figures.selection_figure(report, str(outdir))
    for record in report.records:
        print(f"{record.method:>22} K={record.budget:<6} "
              f"loss={record.loss_mean:.4f}+/-{record.loss_std:.4f} "
              f"entropy={record.entropy_mean:.3f}")
    return 0


def cmd_kappa_matrix(cfg, outdir: Path, threads: int) -> int:
    from . import figures
    matrix, _train_ds = class_pair_analysis(cfg)
    write_kappa_matrix(matrix, str(outdir))
    figures.kappa_figure(matrix, str(outdir))
    print(f"wrote {outdir / 'kappa_matrix.csv'} ({matrix.shape[0]} classes)")
    return 0


_COMMANDS = {
    "train": cmd_train,
    "attribute": cmd_attribute,
    "select": cmd_select,
    "kappa-matrix": cmd_kappa_matrix,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, seed_override=args.seed)
        outdir = Path(args.out)
        outdir.mkdir(parents=True, exist_ok=True)
        return _COMMANDS[args.command](cfg, outdir, max(1, args.threads))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except GroupInfError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # numerical failures outside our taxonomy
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
