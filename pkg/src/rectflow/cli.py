"""``rectflow`` command line: train, sample, eval, ablate."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from threadpoolctl import threadpool_limits

from .errors import RectflowError


def _cmd_train(args) -> int:
    from .config import load_config
    from .data import write_csv
    from .pipeline import load_splits, train_run
    from .training import save_checkpoint

    cfg = load_config(args.config)
    tr, va, te = load_splits(cfg)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    with open(cfg.telemetry_path, "w", encoding="utf-8") as log:
        cp = train_run(cfg, tr, log=log)
    save_checkpoint(cp, cfg.checkpoint_path)
    cfg.splits_dir.mkdir(exist_ok=True)
    for name, part in (("train", tr), ("val", va), ("test", te)):
        write_csv(part, cfg.splits_dir / f"{name}.csv")
    print(json.dumps({"checkpoint": str(cfg.checkpoint_path), "telemetry": str(cfg.telemetry_path),
                      "final_loss": cp.meta["final_loss"]}))
    return 0


def _cmd_sample(args) -> int:
    from .data import write_csv
    from .sampler import SolverConfig, generate
    from .training import load_checkpoint

    cp = load_checkpoint(args.checkpoint)
    solver = SolverConfig(method=args.solver, steps=args.steps, rtol=args.rtol, atol=args.atol,
                          max_steps=args.max_steps)
    trajs = [] if args.trajectory else None
    table = generate(cp, args.n, solver, seed=args.seed, batch_size=args.batch_size, trajectories=trajs)
    write_csv(table, args.out)
    if args.trajectory:
        with open(args.trajectory, "w", encoding="utf-8") as fh:
            for i, tr in enumerate(trajs):
                fh.write(json.dumps({"batch": i, "accepted": tr.accepted, "rejected": tr.rejected}) + "\n")
                tr.dump(fh)
    return 0


def _cmd_eval(args) -> int:
    from . import metrics
    from .data import load_csv, load_schema

    schema = load_schema(args.schema)
    real = load_csv(args.real, schema)
    synth = load_csv(args.synth, schema)
    val = load_csv(args.mle_val, schema) if args.mle_val else None
    test = load_csv(args.mle_test, schema) if args.mle_test else None
    if (val is None) != (test is None):
        raise RectflowError("--mle-val and --mle-test must be given together")
    report = metrics.evaluate(real, synth, seed=args.seed, mle_val=val, mle_test=test, repeats=args.repeats)
    out = Path(args.out)
    out.write_text(report.dumps())
    plot_dir = Path(args.plot_dir) if args.plot_dir else out.with_name(out.stem + "_plots")
    metrics.write_plot_data(real, synth, plot_dir)
    if args.export_dir:
        if val is None:
            raise RectflowError("--export-dir needs --mle-val and --mle-test")
        metrics.mle_export(synth, val, test, args.export_dir)
    return 0


def _cmd_ablate(args) -> int:
    from .config import load_config
    from .pipeline import ablate

    cfg = load_config(args.config)
    result = ablate(cfg, log=sys.stderr if args.verbose else None)
    Path(args.out).write_text(json.dumps(result, indent=2, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rectflow", description="Rectified-flow tabular data synthesis.")
    p.add_argument("--threads", type=int, default=None,
                   help="cap on BLAS worker threads (default: $RECTFLOW_THREADS, else library default)")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model from a JSON run config")
    t.add_argument("--config", required=True)
    t.set_defaults(func=_cmd_train)

    s = sub.add_parser("sample", help="generate synthetic rows from a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--solver", choices=("euler", "rk4", "dopri54"), default="dopri54")
    s.add_argument("--steps", type=int, default=100, help="step count for euler/rk4")
    s.add_argument("--rtol", type=float, default=1e-5)
    s.add_argument("--atol", type=float, default=1e-6)
    s.add_argument("--max-steps", type=int, default=10000)
    s.add_argument("--batch-size", type=int, default=4096)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--trajectory", help="write per-batch solver trajectories as NDJSON")
    s.set_defaults(func=_cmd_sample)

    e = sub.add_parser("eval", help="score a synthetic CSV against a real one")
    e.add_argument("--real", required=True)
    e.add_argument("--synth", required=True)
    e.add_argument("--schema", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--mle-val", help="real validation CSV; enables the utility score")
    e.add_argument("--mle-test", help="real test CSV; enables the utility score")
    e.add_argument("--repeats", type=int, default=20)
    e.add_argument("--plot-dir", help="histogram data directory (default: <out stem>_plots next to --out)")
    e.add_argument("--export-dir", help="also write synth/val/test CSVs for an external learner")
    e.set_defaults(func=_cmd_eval)

    a = sub.add_parser("ablate", help="train the ablation variants and compare them")
    a.add_argument("--config", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--verbose", action="store_true", help="stream telemetry to stderr")
    a.set_defaults(func=_cmd_ablate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    threads = args.threads
    if threads is None and os.environ.get("RECTFLOW_THREADS"):
        threads = int(os.environ["RECTFLOW_THREADS"])
    try:
        with threadpool_limits(limits=threads):
            return args.func(args)
    except (RectflowError, OSError) as exc:
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
