"""Command-line entry point: ``cmalab <command> ...``."""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import __version__, acceptance, averaging, harness, ordering, theory, toy
from .schedules import Schedule, Shape, eta_at, wsd


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _csv(header: Sequence[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


# -- schedule ------------------------------------------------------------------

def cmd_schedule_eval(args) -> int:
    if args.json:
        sched = Schedule.from_json(Path(args.json).read_text())
    else:
        shape = Shape(args.shape)
        end = args.peak_lr if args.end_lr is None else args.end_lr
        if shape is Shape.CONSTANT:
            sched = Schedule(args.peak_lr, args.peak_lr, args.warmup_steps, args.total_steps, args.total_steps, shape)
        elif shape is Shape.COSINE:
            sched = Schedule(args.peak_lr, end, args.warmup_steps, args.total_steps, args.warmup_steps, shape)
        elif args.decay_start is not None:
            sched = Schedule(args.peak_lr, end, args.warmup_steps, args.total_steps, args.decay_start, shape)
        else:
            sched = wsd(args.peak_lr, end, args.total_steps, args.decay_fraction, args.warmup_steps, shape)
    rows = [(t, repr(eta_at(sched, t))) for t in range(0, sched.total_steps + 1, args.every)]
    if rows[-1][0] != sched.total_steps:
        rows.append((sched.total_steps, repr(eta_at(sched, sched.total_steps))))
    _emit(_csv(["t", "lr"], rows), args.out)
    return 0


# -- order ---------------------------------------------------------------------

def cmd_order(args) -> int:
    scores = ordering.read_scores(args.scores)
    policy = ordering.policy_from_string(args.policy, args.seed, args.folds, args.split)
    perm = ordering.make_order(scores, policy)
    if args.out:
        ordering.write_permutation(perm, args.out)
    else:
        sys.stdout.write("".join(f"{i}\n" for i in perm))
    return 0


# -- average -------------------------------------------------------------------

def cmd_average(args) -> int:
    loaded = [averaging.load_checkpoint(p) for p in args.checkpoints]
    loaded.sort(key=lambda pair: pair[1])
    loaded = loaded[-args.window:]
    series = averaging.CheckpointSeries([c for c, _ in loaded], [s for _, s in loaded])
    if args.strategy == "sma":
        strategy = averaging.SMA()
    elif args.strategy == "ema":
        strategy = averaging.EMA(args.alpha, "geometric" if args.geometric else "recursive")
    else:
        strategy = averaging.wma_from_schedule(len(series), args.wma_end_ratio)
    avg = averaging.average(series, strategy)
    averaging.save_checkpoint(args.out, avg, series.steps[-1])
    print(f"averaged {len(series)} checkpoints (steps {series.steps[0]}..{series.steps[-1]}) -> {args.out}",
          file=sys.stderr)
    return 0


# -- sim theory ----------------------------------------------------------------

def cmd_sim_theory(args) -> int:
    strategy = theory.strategy_from_name(args.strategy, {"schedule": args.schedule, "eta0": args.eta0})
    cfg = theory.TheoryConfig(args.M, args.L, strategy, args.seed)
    losses = theory.final_losses(cfg, args.runs)
    _emit(_csv(["run", "final_loss"], [(i, repr(float(v))) for i, v in enumerate(losses)]), args.out)
    if args.trajectory:
        traj, _ = theory.simulate(cfg, theory.run_streams(args.seed, 1)[0])
        etas = theory.strategy_etas(cfg)
        rows = [(0, repr(float(traj[0, 0])), repr(float(traj[0, 1])), "")]
        rows += [(t, repr(float(traj[t, 0])), repr(float(traj[t, 1])), repr(float(etas[t - 1]))) for t in range(1, len(traj))]
        Path(args.trajectory).write_text(_csv(["step", "w1", "w2", "lr"], rows))
    sem = losses.std(ddof=1) / len(losses) ** 0.5 if len(losses) > 1 else 0.0
    print(f"mean final loss {losses.mean():.6g} ± {sem:.2g} over {len(losses)} runs", file=sys.stderr)
    return 0


# -- train toy -----------------------------------------------------------------

def cmd_train_toy(args) -> int:
    task_cfg, cfg = toy.load_run_config(args.config)
    task = toy.gen_task(task_cfg)
    series, record = toy.train(task, cfg)
    final = series.checkpoints[-1] if cfg.averaging is None else averaging.average(series, cfg.averaging)
    val = toy.evaluate(final, task.x_val, task.y_val)
    _emit(record.to_csv(), args.out)
    if args.checkpoint_dir:
        d = Path(args.checkpoint_dir)
        d.mkdir(parents=True, exist_ok=True)
        for params, step in zip(series.checkpoints, series.steps):
            averaging.save_checkpoint(d / f"step{step:08d}.bin", params, step)
    print(f"final val loss {val!r}", file=sys.stderr)
    return 0


# -- sweep / accept ------------------------------------------------------------

def cmd_sweep(args) -> int:
    spec = harness.ExperimentSpec.from_json(args.spec)
    if args.output_dir:
        spec.output_path = Path(args.output_dir)
    table = harness.run_experiment(spec, args.workers)
    print(f"{len(table.rows)} rows -> {spec.output_path / (spec.name + '.csv')}", file=sys.stderr)
    return 1 if table.failed else 0


def cmd_accept(args) -> int:
    results = acceptance.run_acceptance(args.only or None)
    return 0 if all(c.passed for c in results) else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cmalab", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    sch = sub.add_parser("schedule", help="learning-rate schedules").add_subparsers(dest="action", required=True)
    ev = sch.add_parser("eval", help="print (t, lr) pairs as CSV")
    ev.add_argument("--json", help="schedule JSON file (overrides the shape flags)")
    ev.add_argument("--shape", default="wsd_one_sqrt", choices=[s.value for s in Shape])
    ev.add_argument("--peak-lr", type=float, default=3e-3)
    ev.add_argument("--end-lr", type=float, default=None, help="defaults to the peak LR")
    ev.add_argument("--warmup-steps", type=int, default=0)
    ev.add_argument("--total-steps", type=int, default=1000)
    ev.add_argument("--decay-start", type=int, default=None)
    ev.add_argument("--decay-fraction", type=float, default=0.2)
    ev.add_argument("--every", type=int, default=1, help="print every k-th step")
    ev.add_argument("--out")
    ev.set_defaults(func=cmd_schedule_eval)

    od = sub.add_parser("order", help="turn quality scores into a training order")
    od.add_argument("--scores", required=True, help="CSV (index,score) or JSON lines")
    od.add_argument("--policy", default="ascend",
                    help="uniform, ascend, descend, folded, all-together, or two-phase like U,A")
    od.add_argument("--seed", type=int, default=0)
    od.add_argument("--folds", type=int, default=4)
    od.add_argument("--split", type=int, default=None, help="phase boundary for two-phase policies")
    od.add_argument("--out")
    od.set_defaults(func=cmd_order)

    av = sub.add_parser("average", help="average checkpoint files")
    av.add_argument("checkpoints", nargs="+", help=".bin files with .bin.json sidecars")
    av.add_argument("--strategy", choices=["sma", "ema", "wma"], default="ema")
    av.add_argument("--alpha", type=float, default=averaging.DEFAULT_EMA_ALPHA)
    av.add_argument("--geometric", action="store_true", help="EMA weights alpha**i on the i-th newest checkpoint")
    av.add_argument("--window", type=int, default=averaging.DEFAULT_WINDOW)
    av.add_argument("--wma-end-ratio", type=float, default=averaging.WMA_END_RATIO)
    av.add_argument("--out", required=True)
    av.set_defaults(func=cmd_average)

    sim = sub.add_parser("sim", help="simulations").add_subparsers(dest="action", required=True)
    th = sim.add_parser("theory", help="Monte Carlo runs of the 2D SGD model")
    th.add_argument("--strategy", default="ascend_swa", choices=sorted(theory.STRATEGIES))
    th.add_argument("--schedule", default="constant", choices=["constant", "practical_wsd", "wsmd"],
                    help="LR schedule for uniform sampling")
    th.add_argument("--eta0", type=float, default=0.5)
    th.add_argument("--M", type=int, default=1000)
    th.add_argument("--L", type=float, default=1.0)
    th.add_argument("--runs", type=int, default=20)
    th.add_argument("--seed", type=int, default=0)
    th.add_argument("--trajectory", help="write run 0's trajectory (step,w1,w2,lr) here")
    th.add_argument("--out", help="per-run final losses CSV (default stdout)")
    th.set_defaults(func=cmd_sim_theory)

    tr = sub.add_parser("train", help="training").add_subparsers(dest="action", required=True)
    tt = tr.add_parser("toy", help="train on the synthetic regression task")
    tt.add_argument("--config", required=True, help="JSON with 'task' and 'train' sections")
    tt.add_argument("--out", help="run record CSV (default stdout)")
    tt.add_argument("--checkpoint-dir")
    tt.set_defaults(func=cmd_train_toy)

    sw = sub.add_parser("sweep", help="run a grid experiment from a JSON spec")
    sw.add_argument("--spec", required=True)
    sw.add_argument("--workers", type=int, default=None, help="parallel processes (default: all cores)")
    sw.add_argument("--output-dir", help=f"overrides the spec and ${harness.OUTPUT_ENV}")
    sw.set_defaults(func=cmd_sweep)

    ac = sub.add_parser("accept", help="run the acceptance suite")
    ac.add_argument("--only", type=int, nargs="*", help="criterion numbers to run")
    ac.set_defaults(func=cmd_accept)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
