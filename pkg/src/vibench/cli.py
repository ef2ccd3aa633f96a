"""Command-line interface.

Subcommands: ``simulate``, ``reference``, ``stability``, ``tune``,
``iterate``, ``compare``, ``campaign``.  Exit codes: 0 success,
2 validation error, 3 numerical failure.
"""

import argparse
import os
import sys

import numpy as np

from . import analysis, baseline, persist, reference, tuning
from .model import BlowupError
from .reference import ShootingError
from .scenario import (ScenarioError, load_scenario, load_schedule,
                       config_hash, builtin_path)
from .sim import run_stepped_sine

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3


def _parse_grid(spec):
    try:
        start, stop, count = spec.split(":")
        return np.linspace(float(start), float(stop), int(count))
    except ValueError:
        raise ScenarioError(
            f"grid must be start:stop:count, got {spec!r}") from None


def _load_scenario_arg(args):
    scenario = load_scenario(args.scenario)
    if getattr(args, "seed", None) is not None:
        scenario.raw["seed"] = int(args.seed)
        scenario.seed = int(args.seed)
    if getattr(args, "harmonization", None) is not None:
        on = args.harmonization == "on"
        scenario.raw["control"]["harmonization_enabled"] = on
        scenario.harmonization_enabled = on
    return scenario


def _cmd_simulate(args):
    scenario = _load_scenario_arg(args)
    schedule = load_schedule(args.schedule, scenario)
    analysis.check_harmonic_order(
        scenario.estimator_order, scenario.sample_rate,
        float(np.max(schedule.ratios)) * scenario.plant.structure.omega[0])
    dump = os.path.join(args.out, "timeseries") if args.dump_timeseries \
        else None
    record = run_stepped_sine(scenario, schedule, dump_dir=dump)
    persist.write_run(args.out, record,
                      scenario_hash=config_hash(scenario.raw),
                      schedule_hash=config_hash(
                          {"ratios": [float(r) for r in schedule.ratios]}))
    agg = persist.load_json(os.path.join(args.out, "summary.json"))
    print(f"simulate: {len(record.points)} points -> {args.out}")
    print(f"  max harmonic ratio: "
          f"{agg['aggregates']['max_harmonic_ratio']:.3e}")
    return EXIT_OK


def _cmd_reference(args):
    scenario = _load_scenario_arg(args)
    plant = scenario.plant
    observe = scenario.observe_at
    omega1 = plant.structure.omega[0]
    level = args.force_level or scenario.target_level
    grid = _parse_grid(args.grid) * omega1
    cfg = reference.ShootingConfig(tolerance=args.tolerance,
                                   spectrum_order=scenario.estimator_order)
    branches = {}
    main = reference.trace_branch(plant, observe, level, grid, cfg)
    branches["main"] = main
    low = reference.trace_branch(plant, observe, level, grid[::-1], cfg)
    branches["low"] = low
    if args.isola_seed:
        seed = np.load(args.isola_seed)
        labels = list(seed["label"])
        if args.seed_point in labels:
            i = labels.index(args.seed_point)
        else:
            i = int(args.seed_point)
        iso = reference.capture_isola(
            plant, observe, level, seed["state"][i], float(seed["omega"][i]),
            float(seed["phase"][i]), omega_min=float(grid.min()),
            omega_max=args.isola_max * omega1, n_points=args.isola_points,
            config=cfg)
        if iso["on_isola"]:
            branches["isola_upper"] = iso["upper"]
            branches["isola_lower"] = iso["lower"]
        meta_isola = {"on_isola": iso["on_isola"], "closed": iso["closed"]}
    else:
        meta_isola = {}
    persist.write_branches(args.out, branches, meta={
        "force_level": level, "omega1": omega1,
        "scenario_hash": config_hash(scenario.raw), **meta_isola})
    for name, b in branches.items():
        print(f"reference: branch {name}: {len(b.points)} points, "
              f"{b.termination}")
    return EXIT_OK


def _cmd_stability(args):
    scenario = _load_scenario_arg(args)
    plant = scenario.plant
    omega1 = plant.structure.omega[0]
    grid = _parse_grid(args.grid) * omega1
    kp_bars = [float(v) for v in args.kp_bar.split(",")]
    g_over_r = plant.exciter.voltage_gain
    report = analysis.drive_point_report(
        plant.structure, plant.exciter, args.drive.split(","), grid,
        [b / g_over_r for b in kp_bars], k_i=args.ki)
    os.makedirs(args.out, exist_ok=True)
    header = ["omega_rad_s", "omega_ratio"] + [
        f"margin_{s.name}_kpbar{s.k_p * g_over_r:g}" for s in report["scans"]]
    rows = [grid, grid / omega1] + [s.margin for s in report["scans"]]
    buf = [",".join(header)]
    for vals in zip(*rows):
        buf.append(",".join(f"{v:.17e}" for v in vals))
    persist._atomic_write(os.path.join(args.out, "margins.csv"),
                          "\n".join(buf) + "\n")
    verdicts = {
        "admissible": report["verdicts"],
        "mass_ratios": {k: list(map(float, v))
                        for k, v in report["mass_ratios"].items()},
        "negative_crossings_ratio": {
            s.name: list(s.negative_crossings() / omega1)
            for s in report["scans"]},
    }
    persist.write_json(os.path.join(args.out, "verdicts.json"), verdicts)
    for name, ok in report["verdicts"].items():
        print(f"stability: {name}: {'admissible' if ok else 'inadmissible'}")
    return EXIT_OK


def _cmd_tune(args):
    scenario = _load_scenario_arg(args)
    report = tuning.tune(scenario, representative_ratio=args.ratio,
                         representative_level=args.level,
                         eps_tol=args.eps_tol)
    persist.write_tuning(args.out, report)
    print(f"tune: cutoff={report.cutoff:.4g} rad/s ({report.cutoff_note})")
    print(f"tune: kp_bar={report.kp_bar_selected:.4g} "
          f"ki_bar={report.ki_bar_selected:.4g}")
    return EXIT_OK


def _cmd_iterate(args):
    scenario = _load_scenario_arg(args)
    schedule = load_schedule(args.schedule, scenario)
    problem = baseline.IterativeHarmonizationProblem(
        target=scenario.target_level, order=args.order,
        threshold_ratio=args.threshold)
    record = baseline.stepped_sine_iterative(scenario, schedule, problem)
    persist.write_run(args.out, record,
                      scenario_hash=config_hash(scenario.raw))
    its = [t.iterations for t in record.meta["traces"]]
    stl = [t.settles for t in record.meta["traces"]]
    print(f"iterate: {len(record.points)} points, iterations "
          f"min/mean/max = {min(its)}/{np.mean(its):.2f}/{max(its)}, "
          f"settles mean = {np.mean(stl):.1f}")
    return EXIT_OK


def _match_reference(branches, omega, q1, rel_tol=5e-3):
    """Nearest reference solution at a frequency: returns (name, |Q1|,
    |Q3|, stable) of the branch point closest in amplitude."""
    best = None
    for name, b in branches.items():
        if name == "info" or "omega" not in b:
            continue
        idx = int(np.argmin(np.abs(b["omega"] - omega)))
        if abs(b["omega"][idx] - omega) > rel_tol * omega:
            continue
        r_q1 = abs(b["response"][idx][1])
        r_q3 = abs(b["response"][idx][3])
        dist = abs(r_q1 - q1)
        if best is None or dist < best[0]:
            best = (dist, name, r_q1, r_q3, bool(b["stable"][idx]))
    return best


def _cmd_compare(args):
    ref = persist.load_branches(args.reference)
    rows, verdicts = [], {"runs": {}}
    for tag, run_dir in (("a", args.run_a), ("b", args.run_b)):
        if run_dir is None:
            continue
        run = persist.load_run(run_dir)
        target = run["summary"]["meta"]["target_level"]
        order = run["exc_fft"].shape[1] - 1
        matched, h1_err, h3_err = 0, [], []
        for i in range(run["omega"].size):
            om = float(run["omega"][i])
            q1 = abs(run["resp_fft"][i][1])
            q3 = abs(run["resp_fft"][i][3])
            hmax = max(abs(run["exc_fft"][i][h])
                       for h in range(2, order + 1)) / target
            row = {"run": tag, "omega_rad_s": om,
                   "ratio": float(run["ratio"][i]),
                   "settled": int(run["settled"][i]),
                   "max_harmonic_ratio": float(hmax),
                   "q1": q1, "q3": q3,
                   "ref_branch": "", "dq1_rel": float("nan"),
                   "dq3_rel": float("nan")}
            m = _match_reference(ref, om, q1)
            if m is not None and run["settled"][i]:
                _, name, r1, r3, stable = m
                row["ref_branch"] = name
                row["dq1_rel"] = abs(q1 - r1) / max(r1, 1e-30)
                row["dq3_rel"] = abs(q3 - r3) / max(r3, 1e-30)
                if stable:
                    matched += 1
                    h1_err.append(row["dq1_rel"])
                    h3_err.append(row["dq3_rel"])
            rows.append(row)
        stats = {
            "n_points": int(run["omega"].size),
            "n_matched_stable": matched,
            "max_dq1_rel": float(np.max(h1_err)) if h1_err else None,
            "max_dq3_rel": float(np.max(h3_err)) if h3_err else None,
            "max_harmonic_ratio": run["summary"]["aggregates"][
                "max_harmonic_ratio"],
            "wall_time_s": run["summary"]["aggregates"][
                "total_wall_time_s"],
        }
        if "iterative" in run["summary"]:
            its = [t["iterations"] for t in run["summary"]["iterative"]]
            stl = [t["settles"] for t in run["summary"]["iterative"]]
            stats["iterations_mean"] = float(np.mean(its))
            stats["iterations_max"] = int(np.max(its))
            stats["settles_mean"] = float(np.mean(stl))
        verdicts["runs"][tag] = stats
    persist.write_compare(args.out, rows, verdicts)
    for tag, st in verdicts["runs"].items():
        print(f"compare[{tag}]: matched {st['n_matched_stable']} stable "
              f"points, max dH1 = {st['max_dq1_rel']}, "
              f"max harmonics = {st['max_harmonic_ratio']:.2e}")
    return EXIT_OK


def _cmd_campaign(args):
    scenario = _load_scenario_arg(args)
    steps = args.steps.split(",") if args.steps else []
    out = args.out
    os.makedirs(out, exist_ok=True)
    manifest = {
        "scenario": scenario.name,
        "seed": scenario.seed,
        "scenario_hash": config_hash(scenario.raw),
        "steps": steps,
        "artifacts": {},
        "status": {},
    }

    def run_step(name, fn):
        if name not in steps:
            return
        try:
            fn()
            manifest["status"][name] = "ok"
        except (ScenarioError, BlowupError, ShootingError) as exc:
            manifest["status"][name] = f"failed: {exc}"
        persist.write_json(os.path.join(out, "manifest.json"), manifest)

    def _sim(schedule_name, sub, harmonization=None):
        sched = load_schedule(builtin_path(schedule_name), scenario)
        scn = scenario
        if harmonization is not None:
            import copy
            raw = copy.deepcopy(scenario.raw)
            raw["control"]["harmonization_enabled"] = harmonization
            from .scenario import Scenario
            scn = Scenario(raw)
        rec = run_stepped_sine(scn, sched)
        path = os.path.join(out, "runs", sub)
        persist.write_run(path, rec, scenario_hash=config_hash(scn.raw))
        manifest["artifacts"][sub] = path

    run_step("tune", lambda: (persist.write_tuning(
        os.path.join(out, "tuning"), tuning.tune(scenario)),
        manifest["artifacts"].update(tuning=os.path.join(out, "tuning"))))
    run_step("simulate", lambda: (
        _sim("schedule_main", "main_harmonized", True),
        _sim("schedule_main", "main_uncontrolled", False),
        _sim("schedule_isola_forward", "isola_forward", True),
        _sim("schedule_isola_forward", "isola_forward_uncontrolled", False),
        _sim("schedule_isola_backward", "isola_backward", True)))

    def _reference():
        ns = argparse.Namespace(
            scenario=args.scenario, seed=args.seed, harmonization=None,
            grid="0.90:1.55:66", force_level=None, tolerance=1e-8,
            isola_seed=os.path.join(out, "runs", "isola_forward",
                                    "states.npz"),
            seed_point="landing", isola_max=2.1, isola_points=90,
            out=os.path.join(out, "reference"))
        _cmd_reference(ns)
        manifest["artifacts"]["reference"] = ns.out

    run_step("reference", _reference)

    def _iterate():
        ns = argparse.Namespace(
            scenario=args.scenario, seed=args.seed, harmonization=None,
            schedule=builtin_path("schedule_iterative"), order=4,
            threshold=0.005, out=os.path.join(out, "runs", "iterative"))
        _cmd_iterate(ns)
        manifest["artifacts"]["iterative"] = ns.out

    run_step("iterate", _iterate)

    def _compare():
        ns = argparse.Namespace(
            run_a=os.path.join(out, "runs", "main_harmonized"),
            run_b=os.path.join(out, "runs", "main_uncontrolled"),
            reference=os.path.join(out, "reference"),
            out=os.path.join(out, "compare"))
        _cmd_compare(ns)
        manifest["artifacts"]["compare"] = ns.out

    run_step("compare", _compare)
    persist.write_json(os.path.join(out, "manifest.json"), manifest)
    print(f"campaign: manifest -> {os.path.join(out, 'manifest.json')}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="vibench",
        description="Virtual shaker vibration-test bench with per-harmonic "
                    "excitation harmonization.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--scenario", required=True,
                       help="scenario YAML path or shipped name")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", required=True)

    p = sub.add_parser("simulate", help="stepped-sine virtual test")
    common(p)
    p.add_argument("--schedule", required=True)
    p.add_argument("--harmonization", choices=("on", "off"), default=None)
    p.add_argument("--dump-timeseries", action="store_true")
    p.set_defaults(fn=_cmd_simulate)

    p = sub.add_parser("reference", help="shooting-method ground truth")
    common(p)
    p.add_argument("--grid", default="0.90:1.55:66",
                   help="ratio grid start:stop:count")
    p.add_argument("--force-level", type=float, default=None)
    p.add_argument("--tolerance", type=float, default=1e-8)
    p.add_argument("--isola-seed", default=None,
                   help="states.npz from a jump run")
    p.add_argument("--seed-point", default="landing")
    p.add_argument("--isola-max", type=float, default=2.1)
    p.add_argument("--isola-points", type=int, default=90)
    p.set_defaults(fn=_cmd_reference, harmonization=None)

    p = sub.add_parser("stability", help="drive-point stability margins")
    common(p)
    p.add_argument("--drive", default="x1,x2",
                   help="comma-separated mode-shape rows")
    p.add_argument("--grid", default="0.5:8.0:2000")
    p.add_argument("--kp-bar", default="0,3")
    p.add_argument("--ki", type=float, default=1.0)
    p.set_defaults(fn=_cmd_stability, harmonization=None)

    p = sub.add_parser("tune", help="heuristic controller tuning")
    common(p)
    p.add_argument("--ratio", type=float, default=1.0,
                   help="representative frequency / omega_1")
    p.add_argument("--level", type=float, default=None)
    p.add_argument("--eps-tol", type=float, default=1e-4)
    p.set_defaults(fn=_cmd_tune, harmonization=None)

    p = sub.add_parser("iterate", help="iterative Newton/Broyden baseline")
    common(p)
    p.add_argument("--schedule", required=True)
    p.add_argument("--order", type=int, default=4)
    p.add_argument("--threshold", type=float, default=0.005)
    p.set_defaults(fn=_cmd_iterate, harmonization=None)

    p = sub.add_parser("compare", help="compare runs against the reference")
    p.add_argument("--run-a", required=True)
    p.add_argument("--run-b", default=None)
    p.add_argument("--reference", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_compare)

    p = sub.add_parser("campaign", help="orchestrated multi-step study")
    common(p)
    p.add_argument("--steps",
                   default="tune,simulate,reference,iterate,compare")
    p.set_defaults(fn=_cmd_campaign)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (BlowupError, ShootingError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
