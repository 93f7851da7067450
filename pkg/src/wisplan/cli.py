"""Command-line entry point: gen, guide, plan, optimize, run, eval, train, render."""
from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .corridor import CorridorError, RiskFieldParams
from .scenario import DENSITY, generate_scenario, load_scenario, rasterize_scene, save_ppm, save_scenario

log = logging.getLogger("wisplan")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("scenario", nargs="?", help="scenario JSON (generated from --seed/--density if omitted)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--density", choices=sorted(DENSITY), default="medium")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--force-hard", action="store_true", help="skip the classifier, always use guided points")
    g.add_argument("--force-easy", action="store_true", help="skip the classifier, never use guided points")
    p.add_argument("--no-guided-points", action="store_true")
    p.add_argument("--no-crossable", action="store_true")
    p.add_argument("--no-drive-over", action="store_true")
    p.add_argument("--no-risk-corridor", action="store_true")
    p.add_argument("--model", help="classifier checkpoint (defaults to the bundled one)")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--workers", type=int, default=1)


def _scenario(args):
    if args.scenario:
        return load_scenario(args.scenario)
    return generate_scenario(args.seed, DENSITY[args.density])


def _run_config(args, seeds=()):
    from .harness import RunConfig

    clf = "force-hard" if args.force_hard else ("force-easy" if args.force_easy else "on")
    return RunConfig(guided_points=not args.no_guided_points, classifier=clf, crossable=not args.no_crossable,
                     drive_over=not args.no_drive_over, risk_corridor=not args.no_risk_corridor,
                     density=args.density, seeds=tuple(seeds), model_path=args.model)


def _out(args) -> Path:
    d = Path(args.out)
    d.mkdir(parents=True, exist_ok=True)
    return d


def cmd_gen(args) -> int:
    out = _out(args)
    for k in range(args.count):
        seed = args.seed + k
        s = generate_scenario(seed, DENSITY[args.density])
        save_scenario(s, out / f"scenario_{seed}.json")
        save_ppm(rasterize_scene(s), out / f"scenario_{seed}.ppm")
        print(f"scenario {seed}: {len(s.statics)} obstacles, {len(s.pedestrians)} pedestrians")
    return 0


def cmd_guide(args) -> int:
    from .grid import SearchFailure
    from .guided_points import generate_guided_points

    s = _scenario(args)
    try:
        kp = generate_guided_points(s)
    except SearchFailure as e:
        print(f"guided point generation failed: {e}", file=sys.stderr)
        return 1
    path = _out(args) / f"keypoints_{s.seed}.json"
    kp.save(path)
    print(f"{len(kp.points)} key points -> {path}")
    return 0


def _plan(args, s):
    from .harness import _model, planner_config
    from .planner import PlanInfo, initial_path

    cfg = _run_config(args)
    policy = cfg.policy()
    info = PlanInfo()
    path = initial_path(s, model=_model(cfg) if policy is None else None, cfg=planner_config(cfg),
                        policy=policy, info=info)
    return path, info


def cmd_plan(args) -> int:
    s = _scenario(args)
    t = time.perf_counter()
    path, info = _plan(args, s)
    dt = time.perf_counter() - t
    if path is None:
        print(f"planning failed ({info.failure}) after {dt:.2f} s", file=sys.stderr)
        return 1
    from .geometry import VehicleParams

    dest = _out(args) / f"coarse_{s.seed}.csv"
    path.to_csv(dest, s, VehicleParams())
    print(f"{info.branch} branch: {len(path)} pieces, {path.length:.2f} m in {dt:.2f} s -> {dest}")
    return 0


def _optimize(args, s, path, out: Path) -> int:
    from .geometry import VehicleParams
    from .ocp import OptimizationFailure, build_problem, solve, write_corridor_debug, write_solver_log

    try:
        prob = build_problem(path, s, VehicleParams(), RiskFieldParams(), risk_corridor=not args.no_risk_corridor)
    except CorridorError as e:
        print(f"corridor construction failed: {e}", file=sys.stderr)
        return 1
    write_corridor_debug(prob, out / f"corridors_{s.seed}.csv")
    try:
        res = solve(prob)
    except OptimizationFailure as e:
        print(f"optimization failed: {e}", file=sys.stderr)
        return 1
    res.trajectory.to_csv(out / f"trajectory_{s.seed}.csv")
    write_solver_log(res, out / f"solver_{s.seed}.log")
    print(f"J_c {res.cost:.4f} (warm {res.warm_cost:.4f}), t_f {res.trajectory.t_f:.2f} s, "
          f"max defect {res.max_defect:.2e}")
    return 0


def cmd_optimize(args) -> int:
    s = _scenario(args)
    path, info = _plan(args, s)
    if path is None:
        print(f"planning failed ({info.failure})", file=sys.stderr)
        return 1
    return _optimize(args, s, path, _out(args))


def cmd_run(args) -> int:
    from .harness import render_svg, run_pipeline, save_svg
    from .ocp import write_corridor_debug, write_solver_log

    s = _scenario(args)
    out = _out(args)
    r = run_pipeline(s, _run_config(args), keep=True)
    if r.coarse is not None and r.coarse.pieces:
        from .geometry import VehicleParams
        r.coarse.to_csv(out / f"coarse_{s.seed}.csv", s, VehicleParams())
    if r.problem is not None:
        write_corridor_debug(r.problem, out / f"corridors_{s.seed}.csv")
    if not r.success:
        print(f"run failed: {r.failure} after {r.comp_time:.2f} s", file=sys.stderr)
        save_svg(render_svg(s, path=r.coarse), out / f"scene_{s.seed}.svg")
        return 1
    r.solution.trajectory.to_csv(out / f"trajectory_{s.seed}.csv")
    write_solver_log(r.solution, out / f"solver_{s.seed}.log")
    save_svg(render_svg(s, r.solution.trajectory, r.problem.corridors, r.coarse), out / f"scene_{s.seed}.svg")
    print(f"{r.branch} branch: length {r.length:.2f} m, time {r.traversal:.2f} s, "
          f"computation {r.comp_time:.2f} s, max jerk {r.max_jerk:.3f}")
    return 0


def cmd_eval(args) -> int:
    from .harness import evaluate_batch

    seeds = list(range(args.seed, args.seed + args.count))
    scenes = [generate_scenario(k, DENSITY[args.density]) for k in seeds]
    out = _out(args)
    cfg = _run_config(args, seeds)
    rep = evaluate_batch(scenes, cfg, args.workers)
    rep.save(out / "report.csv")
    rate = rep.success_rate
    print(f"success rate {'n/a' if rate is None else f'{rate:.3f}'}, mean computation {rep.mean('comp_time'):.2f} s"
          f" -> {out / 'report.csv'}")
    if args.ab:
        from dataclasses import replace
        other = replace(cfg, guided_points=not cfg.guided_points)
        rep2 = evaluate_batch(scenes, other, args.workers)
        name = "report_no_guided.csv" if cfg.guided_points else "report_guided.csv"
        rep2.save(out / name)
        r2 = rep2.success_rate
        print(f"paired run: success rate {'n/a' if r2 is None else f'{r2:.3f}'} -> {out / name}")
    return 0


def cmd_train(args) -> int:
    from .classifier import SceneClassifier, label_dataset, load_dataset, raw_inputs, save_dataset, split_indices

    out = _out(args)
    if args.dataset:
        items = load_dataset(args.dataset)
    else:
        rng = np.random.default_rng(args.seed)
        scenes = [generate_scenario(args.seed * 100_000 + k, int(rng.integers(0, 10))) for k in range(args.count)]
        items = label_dataset(scenes, workers=args.workers)
        save_dataset(items, out / "dataset.json")
    X = np.array([raw_inputs(it.scenario) for it in items])
    y = np.array([it.label for it in items])
    tr, va, te = split_indices(len(y), args.seed)
    est = SceneClassifier(seed=args.seed, epochs=args.epochs).fit(X[tr], y[tr], X[va], y[va])
    est.save(out / "classifier.json")
    acc = float(np.mean(est.predict(X[te]) == y[te]))
    h = est.history_
    print(f"{len(y)} labelled scenes ({int(y.sum())} hard); test accuracy {acc:.3f}; "
          f"loss {h.train_loss[0]:.4f} -> {h.train_loss[-1]:.4f}")
    return 0


def load_trajectory_csv(path):
    from .ocp import Trajectory, schedule_from_runs

    rows = list(csv.DictReader(open(path)))
    t = np.array([float(r["t"]) for r in rows])
    X = np.array([[float(r[k]) for k in ("x", "y", "v", "theta", "delta")] for r in rows])
    U = np.array([[float(r["a"]), float(r["omega_delta"])] for r in rows[:-1]])
    modes = [int(r["mode"]) for r in rows[:-1]]
    runs = []
    for m in modes:
        if runs and runs[-1][0] == m:
            runs[-1][1] += 1
        else:
            runs.append([m, 1])
    sched = schedule_from_runs([(m, n, None) for m, n in runs])
    return Trajectory(X, U, float(t[-1]), sched)


def cmd_render(args) -> int:
    from .harness import render_svg, save_svg

    s = _scenario(args)
    traj = load_trajectory_csv(args.trajectory) if args.trajectory else None
    dest = _out(args) / f"scene_{s.seed}.svg"
    save_svg(render_svg(s, traj), dest)
    print(f"-> {dest}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="wisplan", description="4WIS trajectory planning toolkit")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="verb", required=True)
    specs = {
        "gen": (cmd_gen, "generate random scenarios (JSON + PPM)"),
        "guide": (cmd_guide, "compute guided / key points"),
        "plan": (cmd_plan, "plan a coarse path"),
        "optimize": (cmd_optimize, "plan and optimize a trajectory"),
        "run": (cmd_run, "full pipeline with all exports"),
        "eval": (cmd_eval, "batch evaluation report"),
        "train": (cmd_train, "label scenes and train the classifier"),
        "render": (cmd_render, "render a scene (and trajectory) to SVG"),
    }
    for name, (fn, help_) in specs.items():
        p = sub.add_parser(name, help=help_)
        _common(p)
        p.set_defaults(func=fn)
        if name in ("gen", "eval", "train"):
            p.add_argument("--count", type=int, default={"gen": 1, "eval": 30, "train": 240}[name])
        if name == "eval":
            p.add_argument("--ab", action="store_true", help="also run with guided points toggled")
        if name == "train":
            p.add_argument("--dataset", help="reuse a labelled dataset file")
            p.add_argument("--epochs", type=int, default=100)
        if name == "render":
            p.add_argument("--trajectory", help="trajectory CSV to overlay")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
