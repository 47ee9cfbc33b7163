"""Command-line experiment runner.

    spinn <solve|fit|infer|recover|table2|cn> --config run.json [--out DIR] [--set k=v ...] [--seed N] [--plot]

Exit codes: 0 success, 2 invalid configuration, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import copy
import csv
import dataclasses
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .basis import hermite, mmgf
from .collocation import SolveFailed, StepRecord, gauss_legendre_tableau, solve
from .config import ConfigError, RunConfig, load_config, validate
from .expansion import hyperbolic_index_set
from .inverse import infer_parameter, recover_source, source_observations, truncation_floor
from .net import TrainConfig, TrainingDiverged
from .problems import fit_function, initial_expansion, sample_fit_dataset
from .reference import cn_solve

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

COLUMNS = ["step", "t", "loss", "l2_error", "F_x", "F_y", "F_z", "beta_x", "beta_y", "beta_z",
           "x_L", "N", "epochs", "wall_ms"]
_AXES = "xyz"


# ---------------------------------------------------------------------------
# records
# ---------------------------------------------------------------------------

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return ""
    return format(v, ".17g")


def record_row(r: StepRecord) -> dict:
    row = {"step": r.step, "t": r.t, "loss": r.loss, "l2_error": r.l2_error}
    for k, a in enumerate(_AXES):
        row[f"F_{a}"] = r.F[k] if k < len(r.F) else None
        row[f"beta_{a}"] = r.beta[k] if k < len(r.beta) else None
    row["x_L"] = r.x_l[0] if len(r.x_l) == 1 else None
    row["N"] = r.N
    row["epochs"] = r.epochs
    row["wall_ms"] = None if math.isnan(r.wall_ms) else r.wall_ms
    return row


def emit_records(records, fmt: str, path) -> Path:
    """Write step records as CSV (fixed columns) or JSON (same keys)."""
    if not records:
        raise ValueError("no records to write")
    path = Path(path)
    rows = [record_row(r) for r in records]
    if fmt == "csv":
        write_table(path, COLUMNS, rows)
    elif fmt == "json":
        path.write_text(json.dumps([{k: _json_num(row[k]) for k in COLUMNS} for row in rows], indent=1) + "\n")
    else:
        raise ValueError(f"unknown format {fmt!r}")
    return path


def _json_num(v):
    if isinstance(v, float):
        return float(format(v, ".17g"))
    return v


def write_table(path: Path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row.get(c)) for c in columns])


def parse_records(path) -> list[StepRecord]:
    """Inverse of emit_records for CSV files."""
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            fl = lambda k: float(row[k]) if row[k] != "" else None
            dims = [a for a in _AXES if row[f"beta_{a}"] != ""]
            out.append(StepRecord(
                step=int(row["step"]), t=float(row["t"]), loss=float(row["loss"]), l2_error=fl("l2_error"),
                F=[float(row[f"F_{a}"]) for a in dims], beta=[float(row[f"beta_{a}"]) for a in dims],
                x_l=[fl("x_L")] if row["x_L"] != "" else [0.0] * len(dims),
                N=int(row["N"]), epochs=int(row["epochs"]),
                wall_ms=float(row["wall_ms"]) if row["wall_ms"] != "" else math.nan,
            ))
    return out


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

def sweep_points(rc: RunConfig) -> list[dict]:
    """Cartesian product of the sweep lists, in a fixed order."""
    points = [{}]
    for key in sorted(rc.sweep):
        points = [dict(p, **{key: v}) for p in points for v in rc.sweep[key]]
    return points


def point_config(raw: dict, point: dict, index: int, n_points: int) -> RunConfig:
    cfg = copy.deepcopy(raw)
    cfg["sweep"] = {}
    for k, v in point.items():
        if k in ("dt", "stages"):
            cfg["stepping"][k] = v
        elif k == "seed":
            cfg["net"]["seed"] = v
        else:
            cfg["inverse"][k] = v
    if n_points > 1 and "seed" not in point:
        base = cfg["net"]["seed"]
        cfg["net"]["seed"] = int(np.random.SeedSequence([base, index]).generate_state(1, dtype=np.uint64)[0])
    return validate(cfg)


def _workers() -> int:
    env = os.environ.get("SPINN_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError("SPINN_THREADS", f"expected an integer, got {env!r}") from None
    return max(1, os.cpu_count() or 1)


def _tag(point: dict) -> str:
    if not point:
        return ""
    return "_" + "_".join(f"{k}{_fmt(v)}" for k, v in sorted(point.items()))


# ---------------------------------------------------------------------------
# commands: each returns (summary line, files written) or raises
# ---------------------------------------------------------------------------

class RunFailed(RuntimeError):
    pass


def _bases(rc: RunConfig):
    return rc.problem.bases


def _solve_point(args):
    raw, point, index, n_points, out_dir, fmt, timing, kind = args
    rc = point_config(raw, point, index, n_points)
    path = out_dir / f"{kind}{_tag(point)}.{fmt}"
    try:
        if kind == "cn":
            records, _ = cn_solve(rc.problem, rc.dt, rc.t_end, rc.adaptive, order=rc.order, timing=timing)
        else:
            u0 = initial_expansion(rc.problem, order=rc.order, hyperbolicity=rc.hyperbolicity)
            records, _ = solve(rc.problem, rc.t_end, rc.dt, rc.stages, rc.net, rc.adaptive, u0=u0,
                               strong_bc=rc.strong_bc, timing=timing)
    except SolveFailed as exc:
        if exc.records:
            emit_records(exc.records, fmt, path)
        return point, str(path), None, str(exc)
    emit_records(records, fmt, path)
    return point, str(path), records[-1], None


def _run_sweep(rc: RunConfig, kind: str):
    points = sweep_points(rc)
    jobs = [(rc.raw, p, i, len(points), rc.out_dir, rc.fmt, rc.timing, kind) for i, p in enumerate(points)]
    workers = min(_workers(), len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            results = list(ex.map(_solve_point, jobs))
    else:
        results = [_solve_point(j) for j in jobs]
    lines, files, failures, finals = [], [], [], []
    for point, path, last, err in results:
        files.append(path)
        label = ", ".join(f"{k}={v}" for k, v in sorted(point.items())) or kind
        if err:
            failures.append(f"{label}: {err}")
            continue
        finals.append((point, last))
        e = "n/a" if last.l2_error is None else f"{last.l2_error:.4g}"
        lines.append(f"{label}: t={last.t:.6g} l2_error={e} N={last.N} beta={','.join(f'{b:.4g}' for b in last.beta)}")
    summary = "\n".join(lines)
    if failures:
        raise RunFailed(summary + ("\n" if summary else "") + "\n".join(failures))
    return summary, files, finals


def cmd_solve(rc: RunConfig):
    return _run_sweep(rc, "solve")


def cmd_cn(rc: RunConfig):
    return _run_sweep(rc, "cn")


def cmd_table2(rc: RunConfig):
    d, cap = rc.table2["dim"], rc.table2["cap"]
    rows = []
    for g in rc.table2["gammas"]:
        rows.append({"gamma": g if g == "full" else float(g), "count": len(hyperbolic_index_set(d, cap, g))})
    path = rc.out_dir / "table2.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["dim", "cap", "gamma", "count"])
        for r in rows:
            w.writerow([d, cap, r["gamma"] if r["gamma"] == "full" else _fmt(r["gamma"]), r["count"]])
    counts = "/".join(str(r["count"]) for r in rows)
    return f"hyperbolic cross d={d} N={cap}: {counts}", [str(path)], rows


def cmd_fit(rc: RunConfig):
    f = rc.fit
    seed = rc.net.train.seed
    data = sample_fit_dataset(f["n"], seed=seed, scale=f["scale"], loc=f["loc"], t_range=(f["t_min"], f["t_max"]))
    cfg = TrainConfig(rc.net.train.lr, rc.net.train.max_epochs, rc.net.train.tol, seed)
    results = {}
    for mode in f["modes"]:
        layers = f["spectral_layers"] if mode == "spectral" else f["direct_layers"]
        results[mode] = fit_function(data, mode, mmgf(f["beta"], f["lam"]), f["order"], f["hidden"], layers, cfg)
    path = rc.out_dir / "fit.csv"
    rows = []
    for mode, r in results.items():
        for e, (a, b) in enumerate(zip(r.train_mse, r.test_mse)):
            rows.append({"mode": mode, "epoch": e, "train_mse": a, "test_mse": b})
    write_table(path, ["mode", "epoch", "train_mse", "test_mse"], rows)
    summary = "; ".join(f"{m}: params={r.params.parameter_count()} train_mse={r.train_mse[-1]:.4g} "
                        f"test_mse={r.test_mse[-1]:.4g}" for m, r in results.items())
    return summary, [str(path)], results


def cmd_infer(rc: RunConfig):
    inv = rc.inverse
    p = rc.problem
    tab = gauss_legendre_tableau(rc.stages)
    res = infer_parameter(p, tab, rc.dt, inv["windows"], inv["sigma"], inv["theta_init"], rc.net, rc.adaptive,
                          rc.order, seed=rc.net.train.seed, timing=rc.timing)
    rec_path = emit_records(res.records, rc.fmt, rc.out_dir / f"infer.{rc.fmt}")
    path = rc.out_dir / "infer_theta.csv"
    rows = [{"window": j + 1, "t": r.t, "theta": th, "sse": s, "sse_left": sl, "sse_right": sr}
            for j, (r, th, s, sl, sr) in enumerate(zip(res.records, res.theta, res.sse, res.sse_left, res.sse_right))]
    write_table(path, ["window", "t", "theta", "sse", "sse_left", "sse_right"], rows)
    kappa = p.params.get("kappa")
    dev = f" |theta-kappa|={abs(res.theta[-1] - kappa):.4g}" if kappa is not None else ""
    return f"windows={len(res.theta)} theta={res.theta[-1]:.8g} sse={res.sse[-1]:.4g}{dev}", \
        [str(rec_path), str(path)], res


def _recover_point(args):
    raw, point, index, n_points = args
    rc = point_config(raw, point, index, n_points)
    p = rc.problem
    desc = hermite(p.bases[0].beta, p.bases[0].x_l)
    tab = gauss_legendre_tableau(rc.stages)
    obs = source_observations(p, desc, rc.order, tab, rc.dt, sigma=rc.inverse["sigma"], seed=int(raw["net"]["seed"]))
    net = rc.net
    if rc.inverse["lr"] is not None:
        net = dataclasses.replace(net, train=dataclasses.replace(net.train, lr=rc.inverse["lr"]))
    r = recover_source(obs, rc.inverse["lambda"], desc, rc.order, tab, rc.dt, net, true_source=p.source)
    floor = truncation_floor(p.source, desc, rc.order, r.times)
    return {"sigma": rc.inverse["sigma"], "lambda": rc.inverse["lambda"], "sse0": r.sse0,
            "sse_left": r.sse_left, "sse_right": r.sse_right, "reconstruction_error": r.reconstruction_error,
            "truncation_floor": floor, "h_norm": r.h_norm, "epochs": r.epochs}


def cmd_recover(rc: RunConfig):
    if rc.problem.source is None:
        raise ConfigError("problem", "source recovery needs a problem with a known source")
    points = sweep_points(rc)
    # the observation noise is shared across the grid: one seed for every point
    jobs = [(rc.raw, {k: v for k, v in p.items()}, i, 1) for i, p in enumerate(points)]
    workers = min(_workers(), len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            rows = list(ex.map(_recover_point, jobs))
    else:
        rows = [_recover_point(j) for j in jobs]
    cols = ["sigma", "lambda", "sse0", "sse_left", "sse_right", "reconstruction_error", "truncation_floor",
            "h_norm", "epochs"]
    path = rc.out_dir / "recover.csv"
    write_table(path, cols, rows)
    summary = "\n".join(f"sigma={r['sigma']:g} lambda={r['lambda']:g}: sse0={r['sse0']:.4g} "
                        f"error={r['reconstruction_error']:.4g} |h|={r['h_norm']:.4g}" for r in rows)
    return summary, [str(path)], rows


COMMANDS = {"solve": cmd_solve, "cn": cmd_cn, "table2": cmd_table2, "fit": cmd_fit,
            "infer": cmd_infer, "recover": cmd_recover}


# ---------------------------------------------------------------------------
# plotting (opt-in)
# ---------------------------------------------------------------------------

def render_plots(command: str, rc: RunConfig, files, payload) -> list[str]:
    import matplotlib

    matplotlib.use("Agg")
    from . import plots

    return plots.render(command, rc, files, payload)


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="spinn", description="spectrally adapted PINN experiments")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", help="JSON run configuration")
    ap.add_argument("--out", help="output directory (overrides output.dir)")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                    help="dotted-key override, e.g. net.lr=1e-3 (repeatable)")
    ap.add_argument("--seed", help="base seed (overrides net.seed)")
    ap.add_argument("--plot", action="store_true", help="also render PNG figures next to the records")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = list(args.set)
    if args.out:
        overrides.append(f"output.dir={json.dumps(args.out)}")
    if args.seed is not None:
        overrides.append(f"net.seed={args.seed}")
    try:
        rc = validate(load_config(args.config, overrides))
    except ConfigError as exc:
        print(f"spinn: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        rc.out_dir.mkdir(parents=True, exist_ok=True)
        summary, files, payload = COMMANDS[args.command](rc)
    except ConfigError as exc:
        print(f"spinn: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (RunFailed, TrainingDiverged, FloatingPointError, ValueError, OSError) as exc:
        print(f"spinn: {args.command} failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(summary)
    if args.plot:
        for f in render_plots(args.command, rc, files, payload):
            print(f"figure: {f}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
