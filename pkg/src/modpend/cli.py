"""Configuration-driven batch runner.

Every operation is exposed as a subcommand reading a JSON config and writing
plot-ready CSV plus a manifest with content digests.  Sweeps run on a worker
pool but are merged in sweep-index order, so outputs are byte-identical for
any worker count.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import datetime
import hashlib
import json
import math
import os
import sys
import traceback

import numpy as np

from . import __version__
from .classical import (PhaseState, bifurcation_diagram, find_periodic_orbit,
                        island_area, island_boundary, lyapunov_chart,
                        map_jacobian, poincare_sos)
from .errors import ModpendError, NumericalError, ValidationError
from .floquet import SpatialGrid, band_diagram, coherent_state_for, splitting
from .protocols import (NACC_PRESET_COARSE, NACC_PRESET_FINE,
                        QuasimomentumEnsemble, phase_rotation_measurement,
                        route1_oscillations, route2_extract,
                        route3_oscillations)
from .stats import (beta_correlation_scale, cauchy_gof, normalize_fluctuations,
                    regular_action_fit)
from .units import ModelParams

TASKS = ("sos", "lyap", "islands", "bifurcation", "bands", "splitting",
         "route1", "route2", "route3", "rotation", "stats")

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3
EXIT_PARTIAL = 4


def _fmt(x) -> str:
    """12 significant digits, diff-stable."""
    return f"{float(x):.11e}"


def write_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(v if isinstance(v, str) else _fmt(v)
                              for v in row) + "\n")


def sha256_of(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


# --- config --------------------------------------------------------------------

_MODEL_KEYS = {"gamma", "epsilon", "hbar_eff", "beta", "sweep"}
_SWEEP_KEYS = {"variable", "start", "stop", "count", "spacing"}


def validate_config(cfg: dict) -> dict:
    bad = []
    if not isinstance(cfg, dict):
        raise ValidationError("config must be a JSON object", keys=["<root>"])
    task = cfg.get("task")
    if task not in TASKS:
        bad.append("task")
    model = cfg.get("model")
    if not isinstance(model, dict):
        bad.append("model")
    else:
        if set(model) - _MODEL_KEYS:
            bad.extend(sorted(set(model) - _MODEL_KEYS))
        sweep = model.get("sweep")
        swept = None
        if sweep is not None:
            missing = _SWEEP_KEYS - {"spacing"} - set(sweep)
            if missing or set(sweep) - _SWEEP_KEYS:
                bad.append("model.sweep")
            else:
                swept = sweep["variable"]
                if swept not in ("gamma", "epsilon", "hbar_eff",
                                 "inv_hbar_eff", "beta"):
                    bad.append("model.sweep.variable")
                if int(sweep["count"]) < 1:
                    bad.append("model.sweep.count")
                if sweep.get("spacing", "linear") == "log" and (
                        sweep["start"] <= 0 or sweep["stop"] <= 0):
                    bad.append("model.sweep.spacing")
        if swept == "inv_hbar_eff":
            swept = "hbar_eff"
        for k in ("gamma", "epsilon", "hbar_eff"):
            if k not in model and swept != k:
                bad.append(f"model.{k}")
    grid = cfg.get("grid", {})
    if not isinstance(grid, dict):
        bad.append("grid")
    if bad:
        raise ValidationError(f"invalid config keys: {sorted(set(bad))}",
                              keys=sorted(set(bad)))
    return cfg


def sweep_values(model: dict):
    sweep = model.get("sweep")
    if sweep is None:
        return None, None
    count = int(sweep["count"])
    if sweep.get("spacing", "linear") == "log":
        vals = np.geomspace(sweep["start"], sweep["stop"], count)
    else:
        vals = np.linspace(sweep["start"], sweep["stop"], count)
    return sweep["variable"], vals


def model_list(cfg: dict):
    """ModelParams per sweep point (a single one when no sweep)."""
    model = cfg["model"]
    var, vals = sweep_values(model)
    base = {k: model.get(k, 0.0) for k in ("gamma", "epsilon", "hbar_eff",
                                           "beta")}
    if var is None:
        return [ModelParams(**base)]
    out = []
    for v in vals:
        d = dict(base)
        if var == "inv_hbar_eff":
            d["hbar_eff"] = 1.0 / float(v)
        else:
            d[var] = float(v)
        out.append(ModelParams(**d))
    return out


def _grid_of(cfg) -> SpatialGrid:
    return SpatialGrid(int(cfg.get("grid", {}).get("n_points", 256)))


def _steps_of(cfg) -> int:
    return int(cfg.get("grid", {}).get("steps_per_period", 256))


# --- sweep workers (top level for pickling) ------------------------------------

def _splitting_point(args):
    idx, params_dict, islands, map_period, n_points, steps = args
    params = ModelParams(**params_dict)
    centers = [PhaseState(x, p) for x, p in islands]
    try:
        s = splitting(params, centers, map_period=map_period,
                      grid=SpatialGrid(n_points), steps_per_period=steps)
        return idx, (1.0 / params.hbar_eff, params.beta, s.delta, s.method,
                     s.island_kind), None
    except ModpendError as exc:
        return idx, None, f"{type(exc).__name__}: {exc}"


def _route2_point(args):
    (idx, params_dict, schedule, n_points, steps, with_exact, islands,
     criteria) = args
    params = ModelParams(**params_dict)
    try:
        fit, rep, _, _, _ = route2_extract(
            params, n_acc_schedule=schedule, grid=SpatialGrid(n_points),
            steps_per_period=steps, criteria_kwargs=criteria or None)
        exact = float("nan")
        if with_exact:
            centers = [PhaseState(x, p) for x, p in islands]
            exact = splitting(params, centers, grid=SpatialGrid(256),
                              steps_per_period=256).delta
        return idx, (1.0 / params.hbar_eff, fit.extracted_delta, exact,
                     rep.final_value_ok, rep.crossing_ok, rep.curvature_ok,
                     rep.amplitude_ok, rep.accepted), None
    except ModpendError as exc:
        return idx, None, f"{type(exc).__name__}: {exc}"


def run_sweep(worker, arglist, workers: int):
    """Run worker over arglist; results returned ordered by index.

    Failed points come back as (idx, None, message).
    """
    results = [None] * len(arglist)
    if workers <= 1:
        for a in arglist:
            idx, row, err = worker(a)
            results[idx] = (row, err)
        return results
    with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
        for idx, row, err in pool.map(worker, arglist, chunksize=1):
            results[idx] = (row, err)
    return results


# --- task implementations ------------------------------------------------------

def task_sos(cfg, out_dir, seed, workers):
    params = model_list(cfg)[0]
    opts = cfg.get("options", {})
    n_traj = int(opts.get("n_trajectories", 40))
    n_periods = int(opts.get("n_periods", 300))
    rng = np.random.default_rng(seed)
    x0 = rng.uniform(-math.pi, math.pi, n_traj)
    p0 = rng.uniform(*opts.get("p_range", (-2.0, 2.0)), n_traj)
    seeds = [PhaseState(float(x), float(p)) for x, p in zip(x0, p0)]
    clouds = poincare_sos(params, seeds, n_periods)
    rows = []
    for i, cloud in enumerate(clouds):
        rows.extend((float(i), float(t), cloud[t, 0], cloud[t, 1])
                    for t in range(cloud.shape[0]))
    path = os.path.join(out_dir, "sos.csv")
    write_csv(path, ["seed_id", "t", "x", "p"], rows)
    return [path]


def task_lyap(cfg, out_dir, seed, workers):
    params = model_list(cfg)[0]
    opts = cfg.get("options", {})
    chart = lyapunov_chart(params,
                           boxes=tuple(opts.get("boxes", (100, 100))),
                           horizon=int(opts.get("horizon", 200)))
    nx, npb = chart.exponents.shape
    rows = [(float(i), float(j), chart.exponents[i, j])
            for i in range(nx) for j in range(npb)]
    path = os.path.join(out_dir, "lyap.csv")
    write_csv(path, ["box_i", "box_j", "lambda"], rows)
    spath = os.path.join(out_dir, "lyap_summary.json")
    with open(spath, "w") as fh:
        json.dump({"threshold": chart.threshold,
                   "chaotic_fraction": chart.chaotic_fraction}, fh, indent=2,
                  sort_keys=True)
    return [path, spath]


def task_islands(cfg, out_dir, seed, workers):
    params = model_list(cfg)[0]
    opts = cfg.get("options", {})
    map_period = int(opts.get("map_period", 1))
    axis = opts.get("search_axis", "momentum")
    orbit = find_periodic_orbit(params, map_period, axis)
    thetas, radii = island_boundary(params, orbit)
    area = island_area(params, orbit)
    cx, cp = orbit.center.x, orbit.center.p
    rows = [(th, r, cx + r * math.cos(th), cp + r * math.sin(th))
            for th, r in zip(thetas, radii)]
    path = os.path.join(out_dir, "islands.csv")
    write_csv(path, ["theta", "r", "x", "p"], rows)
    jac = map_jacobian(np.array([cx, cp]), params, map_period)
    spath = os.path.join(out_dir, "islands_summary.json")
    with open(spath, "w") as fh:
        json.dump({"center_x": cx, "center_p": cp,
                   "trace": float(np.trace(jac)), "area": area},
                  fh, indent=2, sort_keys=True)
    return [path, spath]


def task_bifurcation(cfg, out_dir, seed, workers):
    params = model_list(cfg)[0]
    opts = cfg.get("options", {})
    lo, hi = opts.get("gamma_range", (0.2, 0.3))
    gammas = np.linspace(lo, hi, int(opts.get("n_gamma", 40)))
    curve = bifurcation_diagram(params.epsilon, gammas)
    path = os.path.join(out_dir, "bifurcation.csv")
    write_csv(path, ["gamma", "x_star"],
              list(zip(curve.gamma_values, curve.x_star_values)))
    spath = os.path.join(out_dir, "bifurcation_summary.json")
    with open(spath, "w") as fh:
        json.dump({"gamma_b": curve.gamma_b}, fh, indent=2, sort_keys=True)
    return [path, spath]


def task_bands(cfg, out_dir, seed, workers):
    params = model_list(cfg)[0]
    opts = cfg.get("options", {})
    betas = np.linspace(*opts.get("beta_range", (-0.25, 0.25)),
                        int(opts.get("n_beta", 51)))
    islands = [PhaseState(x, p) for x, p in
               opts.get("islands", [[0.0, 1.29724], [0.0, -1.29724]])]
    bd = band_diagram(params, betas, islands, grid=_grid_of(cfg),
                      steps_per_period=_steps_of(cfg),
                      map_period=int(opts.get("map_period", 1)))
    rows = []
    for i, b in enumerate(bd.beta_grid):
        # the two island-tagged states, band_index 0 = lower quasienergy
        top2 = np.argsort(bd.pair_tags[i])[::-1][:2]
        top2 = top2[np.argsort(bd.energies[i][top2])]
        for band_index, k in enumerate(top2):
            rows.append((b, float(band_index), bd.energies[i, k],
                         bd.tags[i, k, 0],
                         bd.tags[i, k, 1] if bd.tags.shape[2] > 1 else 0.0,
                         0.0))
    path = os.path.join(out_dir, "bands.csv")
    write_csv(path, ["beta", "band_index", "E", "tag_upper", "tag_lower",
                     "parity"], rows)
    return [path]


def task_splitting(cfg, out_dir, seed, workers):
    opts = cfg.get("options", {})
    islands = [tuple(c) for c in
               opts.get("islands", [[0.0, 1.29724], [0.0, -1.29724]])]
    map_period = int(opts.get("map_period", 1))
    grid = _grid_of(cfg)
    steps = _steps_of(cfg)
    models = model_list(cfg)
    args = [(i, m.to_dict(), islands, map_period, grid.n_points, steps)
            for i, m in enumerate(models)]
    results = run_sweep(_splitting_point, args, workers)
    rows = [row for row, err in results if row is not None]
    errors = [(i, err) for i, (row, err) in enumerate(results)
              if err is not None]
    path = os.path.join(out_dir, "splittings.csv")
    write_csv(path, ["hbar_inv", "beta", "delta", "method", "island_kind"],
              rows)
    files = [path]
    if errors:
        epath = os.path.join(out_dir, "failures.json")
        with open(epath, "w") as fh:
            json.dump([{"index": i, "error": e} for i, e in errors], fh,
                      indent=2)
        files.append(epath)
    return files, bool(errors)


def task_route1(cfg, out_dir, seed, workers):
    params = model_list(cfg)[0]
    opts = cfg.get("options", {})
    lo, hi = opts.get("beta_interval", (0.0, 0.0))
    n_members = int(opts.get("n_members", 1))
    if lo == hi:
        ens = QuasimomentumEnsemble((lo,) * max(1, n_members))
    else:
        ens = QuasimomentumEnsemble.uniform(lo, hi, n_members, seed=seed)
    tr = route1_oscillations(params, ens, int(opts.get("n_periods", 1000)),
                             grid=_grid_of(cfg),
                             steps_per_period=_steps_of(cfg))
    header = ["t", "p_avg"] + [f"p_member_{i}" for i in range(len(ens))]
    rows = [(t, v, *tr.members[:, k]) for k, (t, v) in
            enumerate(zip(tr.times, tr.values))]
    path = os.path.join(out_dir, "route1.csv")
    write_csv(path, header, rows)
    return [path]


def _route2_schedule(opts):
    schedule = opts.get("n_acc_schedule", "fine")
    if schedule == "fine":
        return NACC_PRESET_FINE
    if schedule == "coarse":
        return NACC_PRESET_COARSE
    return tuple(schedule)


def task_route2(cfg, out_dir, seed, workers):
    opts = cfg.get("options", {})
    schedule = _route2_schedule(opts)
    grid = _grid_of(cfg)
    steps = _steps_of(cfg)
    islands = [tuple(c) for c in
               opts.get("islands", [[0.0, 1.29724], [0.0, -1.29724]])]
    models = model_list(cfg)
    if len(models) == 1:
        # single system point: emit the drift trace and the fit table too
        params = models[0]
        fit, rep, points, tr, _ = route2_extract(
            params, n_acc_schedule=schedule, grid=grid,
            steps_per_period=steps,
            criteria_kwargs=opts.get("criteria") or None)
        beta_mean = float(np.mean(tr.betas))
        n_acc = tr.meta["n_acc"]
        beta0 = tr.meta["beta0"]
        files = []
        tpath = os.path.join(out_dir, "route2.csv")
        beta_t = beta_mean - 2.0 * beta0 * tr.times / n_acc
        write_csv(tpath, ["t", "beta_t", "p_avg"],
                  list(zip(tr.times, beta_t, tr.values)))
        files.append(tpath)
        fpath = os.path.join(out_dir, "lzfit.csv")
        frows = [(na, pf,
                  -fit.amplitude * (1.0 - 2.0 * math.exp(-fit.rate * na)),
                  fit.amplitude, fit.rate, fit.extracted_delta, fit.residual)
                 for na, pf in points]
        write_csv(fpath, ["n_acc", "p_final", "fit_value", "A", "B",
                          "delta_lz", "residual"], frows)
        files.append(fpath)
        exact = float("nan")
        if opts.get("with_exact", False):
            centers = [PhaseState(x, p) for x, p in islands]
            exact = splitting(params, centers, grid=SpatialGrid(256),
                              steps_per_period=256).delta
        epath = os.path.join(out_dir, "route2_extract.csv")
        write_csv(epath, ["hbar_inv", "delta_lz", "delta_exact_if_computed",
                          "c1", "c2", "c3", "c4", "accepted"],
                  [(1.0 / params.hbar_eff, fit.extracted_delta, exact,
                    float(rep.final_value_ok), float(rep.crossing_ok),
                    float(rep.curvature_ok), float(rep.amplitude_ok),
                    float(rep.accepted))])
        files.append(epath)
        return files
    args = [(i, m.to_dict(), tuple(schedule), grid.n_points, steps,
             bool(opts.get("with_exact", False)), islands,
             opts.get("criteria", {})) for i, m in enumerate(models)]
    results = run_sweep(_route2_point, args, workers)
    rows = []
    for row, err in results:
        if row is None:
            continue
        hinv, dlz, dex, c1, c2, c3, c4, acc = row
        rows.append((hinv, dlz, dex, float(c1), float(c2), float(c3),
                     float(c4), float(acc)))
    errors = [(i, err) for i, (row, err) in enumerate(results)
              if err is not None]
    path = os.path.join(out_dir, "route2_extract.csv")
    write_csv(path, ["hbar_inv", "delta_lz", "delta_exact_if_computed",
                     "c1", "c2", "c3", "c4", "accepted"], rows)
    files = [path]
    if errors:
        epath = os.path.join(out_dir, "failures.json")
        with open(epath, "w") as fh:
            json.dump([{"index": i, "error": e} for i, e in errors], fh,
                      indent=2)
        files.append(epath)
    return files, bool(errors)


def task_route3(cfg, out_dir, seed, workers):
    params = model_list(cfg)[0]
    opts = cfg.get("options", {})
    lo, hi = opts.get("beta_interval", (-0.02, 0.02))
    ens = QuasimomentumEnsemble.uniform(lo, hi,
                                        int(opts.get("n_members", 180)),
                                        seed=seed)
    center = PhaseState(*opts.get("center", (1.2, 0.0)))
    tr = route3_oscillations(params, ens,
                             int(opts.get("n_double_periods", 500)),
                             center=center, grid=_grid_of(cfg),
                             steps_per_period=_steps_of(cfg))
    path = os.path.join(out_dir, "route3.csv")
    write_csv(path, ["t", "x_avg"], list(zip(tr.times, tr.values)))
    return [path]


def task_rotation(cfg, out_dir, seed, workers):
    params = model_list(cfg)[0]
    opts = cfg.get("options", {})
    grid = _grid_of(cfg)
    center = PhaseState(*opts.get("center", (0.0, 0.0)))
    width = float(opts.get("width_x", 0.4))
    psi = coherent_state_for(center, width, params, grid)
    phis = np.linspace(0.0, 2.0 * math.pi,
                       int(opts.get("n_shifts", 32)), endpoint=False)
    scan = phase_rotation_measurement(psi, params, phis,
                                      steps_per_period=_steps_of(cfg))
    path = os.path.join(out_dir, "rotation.csv")
    write_csv(path, ["phi_m", "pop0"],
              list(zip(scan.phase_shifts, scan.zero_velocity_population)))
    return [path]


def task_stats(cfg, out_dir, seed, workers):
    opts = cfg.get("options", {})
    src = opts.get("input_csv")
    if src is None:
        raise ValidationError("stats task needs options.input_csv",
                              keys=["options.input_csv"])
    data = np.genfromtxt(src, delimiter=",", names=True)
    deltas = np.atleast_1d(data["delta"])
    ens = normalize_fluctuations(deltas,
                                 min_samples=int(opts.get("min_samples", 50)))
    ks = cauchy_gof(ens)
    threshold = float(opts.get("ks_threshold", 0.15))
    files = []
    fpath = os.path.join(out_dir, "fluct.csv")
    write_csv(fpath, ["delta", "delta_s"],
              list(zip(ens.samples, ens.normalized)))
    files.append(fpath)
    gpath = os.path.join(out_dir, "gof.csv")
    write_csv(gpath, ["ks", "threshold", "pass"],
              [(ks, threshold, float(ks < threshold))])
    files.append(gpath)
    hbar_inv = (np.atleast_1d(data["hbar_inv"])
                if "hbar_inv" in (data.dtype.names or ()) else None)
    if hbar_inv is not None and len(np.unique(hbar_inv)) >= 3:
        fit = regular_action_fit(list(zip(1.0 / hbar_inv, deltas)))
        rpath = os.path.join(out_dir, "regfit.csv")
        write_csv(rpath, ["S", "intercept", "residual"],
                  [(fit.action, fit.prefactor, fit.residual)])
        files.append(rpath)
    return files


_TASK_FNS = {
    "sos": task_sos, "lyap": task_lyap, "islands": task_islands,
    "bifurcation": task_bifurcation, "bands": task_bands,
    "splitting": task_splitting, "route1": task_route1,
    "route2": task_route2, "route3": task_route3,
    "rotation": task_rotation, "stats": task_stats,
}


def run(cfg: dict, out_dir: str, seed: int = 0, workers: int = 1) -> dict:
    """Execute a validated config; returns the manifest dict."""
    validate_config(cfg)
    os.makedirs(out_dir, exist_ok=True)
    started = datetime.datetime.now(datetime.timezone.utc).isoformat()
    result = _TASK_FNS[cfg["task"]](cfg, out_dir, seed, workers)
    partial = False
    if isinstance(result, tuple):
        files, partial = result
    else:
        files = result
    manifest = {
        "config": cfg,
        "version": __version__,
        "seed": seed,
        "workers": workers,
        "started": started,
        "finished": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "partial": partial,
        "files": [{"path": os.path.basename(f), "sha256": sha256_of(f)}
                  for f in files],
    }
    mpath = os.path.join(out_dir, "manifest.json")
    with open(mpath, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="modpend",
        description="Simulations of the atomic modulated pendulum")
    parser.add_argument("task", choices=TASKS)
    parser.add_argument("--config", required=True)
    parser.add_argument("--out", default=".")
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    try:
        with open(args.config) as fh:
            cfg = json.load(fh)
        if not isinstance(cfg, dict):
            raise ValidationError("config must be a JSON object",
                                  keys=["<root>"])
        cfg["task"] = args.task
        manifest = run(cfg, args.out, seed=args.seed, workers=args.workers)
    except (ValidationError, json.JSONDecodeError) as exc:
        _emit_error(args.out, "validation", exc)
        return EXIT_VALIDATION
    except NumericalError as exc:
        _emit_error(args.out, "numerical", exc)
        return EXIT_NUMERICAL
    except ModpendError as exc:
        _emit_error(args.out, "task", exc)
        return EXIT_NUMERICAL
    if manifest["partial"]:
        return EXIT_PARTIAL
    return EXIT_OK


def _emit_error(out_dir, kind, exc):
    payload = {"kind": kind, "error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, ValidationError):
        payload["keys"] = exc.keys
    sys.stderr.write(json.dumps(payload) + "\n")
    try:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "error.json"), "w") as fh:
            json.dump(payload, fh, indent=2)
    except OSError:
        pass


if __name__ == "__main__":
    sys.exit(main())
