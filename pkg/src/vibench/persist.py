"""Result persistence: CSV/JSON/NPZ writers for run records, reference
branches, tuning reports and comparisons.

All writes are atomic (write to a temp file in the target directory,
then rename).  CSV numerics use full-precision scientific notation;
column schemas are versioned in the JSON summaries.
"""

import csv
import json
import os
import tempfile

import numpy as np

__all__ = [
    "write_run",
    "load_run",
    "write_branches",
    "load_branches",
    "write_tuning",
    "write_compare",
    "write_json",
    "load_json",
]

POINTS_SCHEMA = "vibench-points-v1"
BRANCH_SCHEMA = "vibench-branch-v1"
TIMESERIES_LAYOUT = ("float64 array of shape (n, 4): columns are "
                     "time_s, command_voltage_V, excitation "
                     "(N or m/s^2), observation_displacement_m")


def _atomic_write(path, data, mode="w"):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _atomic_savez(path, **arrays):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=".npz")
    os.close(fd)
    try:
        np.savez(tmp, **arrays)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, obj):
    _atomic_write(path, json.dumps(obj, indent=2, sort_keys=True,
                                   default=_json_default) + "\n")


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    raise TypeError(f"not JSON-serializable: {type(obj)}")


def load_json(path):
    with open(path) as fh:
        return json.load(fh)


def _fmt(x):
    return f"{x:.17e}"


def write_run(out_dir, record, scenario_hash="", schedule_hash=""):
    """Persist a stepped-sine RunRecord: points.csv (human-readable),
    points.npz (exact arrays incl. final states) and summary.json."""
    os.makedirs(out_dir, exist_ok=True)
    pts = record.points
    order = pts[0].exc_fft.size - 1 if pts else 0
    header = ["index", "label", "omega_rad_s", "omega_ratio", "settled",
              "settle_delta", "n_frozen", "n_clamped", "sim_time_s",
              "wall_time_s", "u1_V"]
    for name in ("Ffft", "Ffilt", "Q", "U"):
        for h in range(order + 1):
            header += [f"{name}{h}_re", f"{name}{h}_im"]
    header += [f"fluct{h}" for h in range(order + 1)]
    rows = []
    for p in pts:
        row = [p.index, p.label, _fmt(p.omega), _fmt(p.ratio),
               int(p.settled), _fmt(p.settle_delta), p.n_frozen,
               p.n_clamped, _fmt(p.sim_time), _fmt(p.wall_time),
               _fmt(p.u1)]
        for arr in (p.exc_fft, p.exc_filter, p.resp_fft, p.u_coeffs):
            for h in range(order + 1):
                row += [_fmt(arr[h].real), _fmt(arr[h].imag)]
        row += [_fmt(v) for v in p.fluctuation]
        rows.append(row)
    buf = [",".join(header)]
    buf += [",".join(str(v) for v in row) for row in rows]
    _atomic_write(os.path.join(out_dir, "points.csv"), "\n".join(buf) + "\n")

    _atomic_savez(
        os.path.join(out_dir, "points.npz"),
        omega=np.array([p.omega for p in pts]),
        ratio=np.array([p.ratio for p in pts]),
        label=np.array([p.label for p in pts]),
        settled=np.array([p.settled for p in pts]),
        settle_delta=np.array([p.settle_delta for p in pts]),
        exc_fft=np.array([p.exc_fft for p in pts]),
        exc_filter=np.array([p.exc_filter for p in pts]),
        resp_fft=np.array([p.resp_fft for p in pts]),
        u_coeffs=np.array([p.u_coeffs for p in pts]),
        u1=np.array([p.u1 for p in pts]),
        fluctuation=np.array([p.fluctuation for p in pts]),
        wall_time=np.array([p.wall_time for p in pts]),
    )
    _atomic_savez(
        os.path.join(out_dir, "states.npz"),
        state=np.array([p.final_state for p in pts]),
        omega=np.array([p.omega for p in pts]),
        phase=np.array([p.handoff_phase for p in pts]),
        label=np.array([p.label for p in pts]),
    )
    meta = dict(record.meta)
    meta.pop("traces", None)
    summary = {
        "schema": POINTS_SCHEMA,
        "meta": meta,
        "scenario_hash": scenario_hash,
        "schedule_hash": schedule_hash,
        "n_points": len(pts),
        "timeseries_layout": TIMESERIES_LAYOUT,
        "aggregates": _aggregates(record),
    }
    if "traces" in record.meta:
        summary["iterative"] = [{
            "iterations": t.iterations, "settles": t.settles,
            "converged": t.converged, "residual_norms": t.residual_norms,
            "jacobian_policy": t.jacobian_policy,
        } for t in record.meta["traces"]]
    write_json(os.path.join(out_dir, "summary.json"), summary)


def _aggregates(record):
    pts = record.points
    if not pts:
        return {}
    target = record.meta.get("target_level", 1.0)
    order = pts[0].exc_fft.size - 1
    hmax = np.array([max(abs(p.exc_fft[h]) for h in range(2, order + 1))
                     for p in pts]) / target
    return {
        "max_harmonic_ratio": float(hmax.max()),
        "n_settled": int(sum(p.settled for p in pts)),
        "fraction_below_1e-4": float(np.mean(hmax < 1e-4)),
        "total_wall_time_s": float(sum(p.wall_time for p in pts)),
    }


def load_run(out_dir):
    data = dict(np.load(os.path.join(out_dir, "points.npz")))
    data["summary"] = load_json(os.path.join(out_dir, "summary.json"))
    states = os.path.join(out_dir, "states.npz")
    if os.path.exists(states):
        st = np.load(states)
        data["state"] = st["state"]
        data["phase"] = st["phase"]
    return data


def write_branches(out_dir, branches, meta=None):
    """Persist named reference branches (dict name -> Branch)."""
    os.makedirs(out_dir, exist_ok=True)
    info = {"schema": BRANCH_SCHEMA, "branches": {}, "meta": meta or {}}
    for name, branch in branches.items():
        pts = branch.points
        if not pts:
            info["branches"][name] = {"n_points": 0,
                                      "termination": branch.termination}
            continue
        order = pts[0].response.size - 1
        n_fl = pts[0].floquet.size
        header = ["omega_rad_s", "stable", "marginal", "residual",
                  "iterations"]
        for h in range(order + 1):
            header += [f"Q{h}_re", f"Q{h}_im"]
        for k in range(n_fl):
            header += [f"floq{k}_re", f"floq{k}_im"]
        buf = [",".join(header)]
        for p in pts:
            row = [_fmt(p.omega), int(p.stable), int(p.marginal),
                   _fmt(p.residual), p.iterations]
            for h in range(order + 1):
                row += [_fmt(p.response[h].real), _fmt(p.response[h].imag)]
            for k in range(n_fl):
                row += [_fmt(p.floquet[k].real), _fmt(p.floquet[k].imag)]
            buf.append(",".join(str(v) for v in row))
        _atomic_write(os.path.join(out_dir, f"branch_{name}.csv"),
                      "\n".join(buf) + "\n")
        _atomic_savez(
            os.path.join(out_dir, f"branch_{name}.npz"),
            omega=np.array([p.omega for p in pts]),
            response=np.array([p.response for p in pts]),
            floquet=np.array([p.floquet for p in pts]),
            stable=np.array([p.stable for p in pts]),
            marginal=np.array([p.marginal for p in pts]),
            x0=np.array([p.x0 for p in pts]),
        )
        info["branches"][name] = {
            "n_points": len(pts),
            "termination": branch.termination,
            "omega_last": branch.omega_last,
            "omega_failed": branch.omega_failed,
        }
    write_json(os.path.join(out_dir, "reference.json"), info)


def load_branches(out_dir):
    info = load_json(os.path.join(out_dir, "reference.json"))
    out = {}
    for name in info["branches"]:
        path = os.path.join(out_dir, f"branch_{name}.npz")
        if os.path.exists(path):
            out[name] = dict(np.load(path))
    out["info"] = info
    return out


def write_tuning(out_dir, report):
    os.makedirs(out_dir, exist_ok=True)
    write_json(os.path.join(out_dir, "tuning.json"), {
        "cutoff_rad_s": report.cutoff,
        "cutoff_note": report.cutoff_note,
        "cutoff_scan": report.cutoff_scan,
        "kp_selected_V_per_unit": report.kp_selected,
        "ki_selected_V_per_unit_s": report.ki_selected,
        "kp_bar_selected": report.kp_bar_selected,
        "ki_bar_selected": report.ki_bar_selected,
        "kp_critical": report.kp_critical,
        "ki_critical": report.ki_critical,
        "kp_trace": report.kp_trace,
        "ki_trace": report.ki_trace,
        "representative_omega_rad_s": report.representative[0],
        "representative_level": report.representative[1],
        "wall_time_s": report.wall_time,
    })


def write_compare(out_dir, rows, verdicts):
    os.makedirs(out_dir, exist_ok=True)
    if rows:
        header = list(rows[0].keys())
        buf = [",".join(header)]
        for r in rows:
            buf.append(",".join(
                _fmt(r[k]) if isinstance(r[k], float) else str(r[k])
                for k in header))
        _atomic_write(os.path.join(out_dir, "compare.csv"),
                      "\n".join(buf) + "\n")
    write_json(os.path.join(out_dir, "compare.json"), verdicts)
