"""Subcommand execution: compute, write tables, write the manifest, map errors to exit codes."""

from __future__ import annotations

import itertools
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import config as C
from .errors import (
    CavitySpinError,
    FitError,
    InvalidParameterError,
    MemoryBudgetError,
    SolverError,
    StiffnessError,
)
from .io import load_checkpoint, save_checkpoint, write_csv, write_json, write_manifest
from .params import ModelParams

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3
WORKERS_ENV = "CAVITYSPIN_WORKERS"

NUMERICAL_ERRORS = (StiffnessError, SolverError, FitError, MemoryBudgetError, ArithmeticError, np.linalg.LinAlgError)


@dataclass
class RunResult:
    exit_code: int
    out_dir: Path | None = None
    files: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)
    message: str = ""


def resolve_workers(cli_value: int | None, cfg: C.RunConfig) -> int:
    """Worker count: --workers, else the environment variable, else the config."""
    if cli_value is not None:
        n = cli_value
    elif os.environ.get(WORKERS_ENV):
        try:
            n = int(os.environ[WORKERS_ENV])
        except ValueError:
            raise C.ConfigError(f"{WORKERS_ENV} must be an integer") from None
    else:
        n = cfg.parallelism.workers
    if n < 1:
        raise C.ConfigError("worker count must be >= 1")
    return n


def initial_rho(state: dict, n_atoms: int) -> np.ndarray:
    from .spin import coherent_state, north_pole, south_pole

    kind = state["kind"]
    if kind == "south_pole":
        return south_pole(n_atoms)
    if kind == "north_pole":
        return north_pole(n_atoms)
    return coherent_state(n_atoms, state["theta"], state["phi"])


def initial_bloch(state: dict):
    from .meanfield import BlochVector

    kind = state["kind"]
    if kind == "south_pole":
        return BlochVector.south_pole()
    if kind == "north_pole":
        return BlochVector(0.0, 0.0, 1.0)
    return BlochVector.from_angles(state["theta"], state["phi"])


def _write_table(out: Path, stem: str, fmt: str, columns, rows, comment=None) -> Path:
    rows = list(rows)
    if fmt == "json":
        return write_json(out / f"{stem}.json", {"columns": list(columns), "rows": [list(r) for r in rows]})
    return write_csv(out / f"{stem}.csv", columns, rows, comment)


def _params_dict(p: ModelParams) -> dict:
    return {"n_atoms": p.n_atoms, "chi": p.chi, "gamma": p.gamma, "omega": p.omega}


# --- subcommands -------------------------------------------------------------


def _steady_state(cfg, p, out, fmt, workers):
    from .spin import husimi, state_diagnostics
    from .steady import squeezing_sweep, steady_state

    task = cfg.task
    grid = [p.omega] if task.omega_grid is None else [r * p.omega_c for r in task.omega_grid.values()]
    sw = squeezing_sweep(p, grid)
    cols = ("omega", "omega_over_omega_c", "xi2", "jz", "bloch_length")
    rows = [(q.omega, q.omega_over_omega_c, q.xi2, q.jz, q.bloch_length) for q in sw.points]
    files = [_write_table(out, "steady_state", fmt, cols, rows)]
    sol = steady_state(p)
    diag = {
        "alpha": sol.alpha,
        "omega_c": p.omega_c,
        "argmin_omega": sw.argmin_omega,
        "min_xi2": sw.min_xi2,
        "state": state_diagnostics(sol.rho_ss),
    }
    if task.husimi is not None:
        q = husimi(sol.rho_ss, task.husimi.n_theta, task.husimi.n_phi)
        files.append(_write_table(out, "husimi", fmt, ("theta", "phi", "Q"), q.rows()))
        diag["husimi_integral"] = q.integral()
    return files, diag


def _meanfield(cfg, p, out, fmt, workers):
    from .meanfield import (
        EffectivePotentialSpec,
        classify_phase,
        effective_potential,
        fixed_points,
        integrate_mf,
        oscillation_threshold,
    )

    task = cfg.task
    s0 = initial_bloch(cfg.initial_state.model_dump())
    t_eval = np.linspace(0, task.t_final, task.n_points)
    traj = integrate_mf(s0, p, task.t_final, tol=task.tol, t_eval=t_eval)
    drift = traj.norm_drift()
    cols = ("t", "sx", "sy", "sz", "b", "norm_drift")
    rows = [(traj.t[i], *traj.s[i], traj.b[i], drift[i]) for i in range(len(traj.t))]
    files = [_write_table(out, "meanfield", fmt, cols, rows)]
    diag = {"max_norm_drift": float(np.max(np.abs(drift))), "omega_c": p.omega_c, "omega_sr": p.omega_sr}
    if p.gamma > 0 or p.chi != 0:
        spec = EffectivePotentialSpec.from_model(s0, p)
        energy = traj.sz**2 + effective_potential(traj.b, spec) - 1
        diag["max_energy_error"] = float(np.max(np.abs(energy)))
    if p.gamma > 0:
        thr = oscillation_threshold(s0, p)
        diag["omega_c1"] = thr
        diag["phase"] = classify_phase(p, s0, thr).value
    fps = fixed_points(p)
    diag["fixed_points"] = {
        name: None if fp is None else {"s": fp.s.as_array(), "label": fp.label.value}
        for name, fp in (("ss1", fps.ss1), ("ss1_upper", fps.ss1_upper), ("ss2", fps.ss2), ("ss3", fps.ss3))
    }
    return files, diag


def _dynamics(cfg, p, out, fmt, workers):
    from .dynamics import default_max_step, integrate_master
    from .integrate import IntegratorConfig

    task = cfg.task
    t0 = 0.0
    if task.resume_from:
        rho0, pc, t0 = load_checkpoint(task.resume_from)
        if pc != p:
            raise C.ConfigError("checkpoint parameters do not match the config")
        if t0 >= task.t_final:
            raise C.ConfigError("checkpoint time is already past t_final")
    else:
        rho0 = initial_rho(cfg.initial_state.model_dump(), p.n_atoms)
    icfg = IntegratorConfig(rel_tol=task.rel_tol, abs_tol=task.abs_tol, max_step=default_max_step(p))
    t_eval = np.linspace(t0, task.t_final, task.n_points)
    rec = integrate_master(rho0, p, task.t_final, icfg, t_eval=t_eval, eig_every=task.eig_every, t0=t0)
    cols = ("t", "jx", "jy", "jz", "xi2", "trace_err", "min_eig")
    files = [_write_table(out, "trajectory", fmt, cols, rec.csv_rows())]
    if task.checkpoint:
        files.append(save_checkpoint(out / "checkpoint.bin", rec.final_state, p, rec.final_time))
    diag = {
        "t_start": t0,
        "max_trace_err": rec.max_trace_err(),
        "max_herm_err": rec.max_herm_err(),
        "min_sampled_eig": rec.min_sampled_eig(),
        "renormalizations": len(rec.renormalizations),
        "accepted_steps": rec.stats.accepted,
        "rejected_steps": rec.stats.rejected,
        "rhs_evals": rec.stats.rhs_evals,
    }
    return files, diag


def _spectrum_cell(args):
    from .spectrum import low_spectrum

    p_tuple, k, seed = args
    p = ModelParams(*p_tuple)
    try:
        res = low_spectrum(p, min(k, (p.n_atoms + 1) ** 2), seed=seed)
    except NUMERICAL_ERRORS + (CavitySpinError,) as exc:
        return p_tuple, None, f"{type(exc).__name__}: {exc}"
    return p_tuple, res, None


def _spectrum(cfg, p, out, fmt, workers):
    task = cfg.task
    n_list = task.n_list or [p.n_atoms]
    cells = []
    for n in n_list:
        pn = p.with_n(n)
        if task.omega_ratios is None:
            omegas = [p.omega]
        else:
            omegas = [r * pn.omega_sr for r in task.omega_ratios]
        cells += [((n, pn.chi, pn.gamma, om), task.k, cfg.seed) for om in omegas]
    results = _pool_map(_spectrum_cell, cells, workers)
    spec_rows, gap_rows, failures = [], [], []
    for p_tuple, res, err in results:
        n, _, _, om = p_tuple
        if err:
            failures.append({"n_atoms": n, "omega": om, "error": err})
            gap_rows.append((om, n, math.nan, math.nan))
            continue
        for i, lam in enumerate(res.eigenvalues):
            spec_rows.append((om, n, i, lam.real, lam.imag))
        gap_rows.append((om, n, res.gap_re, res.gap_im))
    if len(failures) == len(cells):
        raise SolverError(f"all {len(cells)} spectrum cells failed: {failures[0]['error']}")
    files = [
        _write_table(out, "spectrum", fmt, ("omega", "n_atoms", "idx", "re_lambda", "im_lambda"), spec_rows),
        _write_table(out, "gaps", fmt, ("omega", "n_atoms", "gap_re", "gap_im"), gap_rows),
    ]
    return files, {"cells": len(cells), "failures": failures}


def _envelope(cfg, p, out, fmt, workers):
    from .dynamics import default_max_step, integrate_master
    from .envelope import analytic_envelope, fit_envelope_exponent, lattice_jtilde, rotating_frame_jz
    from .integrate import IntegratorConfig

    task = cfg.task
    if cfg.initial_state.kind != "south_pole":
        raise C.ConfigError("envelope analysis assumes a south-pole initial state")
    times = np.linspace(0, task.t_final, task.n_points)
    avg = lattice_jtilde(p, times).real
    full = analytic_envelope(p, times)
    short = analytic_envelope(p, times, short_time=True)
    exact = np.full(len(times), math.nan)
    diag = {}
    if task.exact:
        from .spin import south_pole

        icfg = IntegratorConfig(rel_tol=task.rel_tol, abs_tol=task.abs_tol, max_step=default_max_step(p))
        rec = integrate_master(south_pole(p.n_atoms), p, task.t_final, icfg, t_eval=times, eig_every=0)
        arr = rec.arrays()
        exact = rotating_frame_jz(arr["times"], arr["jy"], arr["jz"], p.omega)
        diag["max_abs_exact_minus_averaged_over_n2"] = float(np.max(np.abs(exact - avg)) / (0.5 * p.n_atoms))
    cols = ("t", "n_atoms", "jz_exact_envelope", "jz_averaged", "jz_analytic_full", "jz_analytic_short")
    rows = [(times[i], p.n_atoms, exact[i], avg[i], full[i], short[i]) for i in range(len(times))]
    files = [_write_table(out, "envelope", fmt, cols, rows)]
    if task.fit_n:
        fit = fit_envelope_exponent(p, task.fit_n)
        files.append(
            write_json(
                out / "envelope_fit.json",
                {"n_values": fit.n_values, "decay_times": fit.decay_times, "exponent": fit.exponent},
            )
        )
        diag["exponent"] = fit.exponent
    return files, diag


# --- sweeps -----------------------------------------------------------------


def cell_params(base: ModelParams, assignment: dict) -> ModelParams:
    """Apply axis values: n_atoms first, then chi (2 chi/gamma), then omega (2 omega/(N gamma))."""
    n = int(assignment.get("n_atoms", base.n_atoms))
    chi = 0.5 * assignment["chi"] * base.gamma if "chi" in assignment else base.chi
    omega = 0.5 * assignment["omega"] * n * base.gamma if "omega" in assignment else base.omega
    return ModelParams(n, chi, base.gamma, omega)


# sweep axis values are ratios (2 omega/(N gamma), 2 chi/gamma) or N itself
AXIS_COLUMNS = {"omega": "omega_ratio", "chi": "chi_ratio", "n_atoms": "n_atoms_axis"}

CELL_COLUMNS = {
    "time-averaged-inversion": ("jz_avg", "jz_avg_normalized"),
    "steady-state": ("jz", "xi2", "bloch_length"),
    "spectrum": ("gap_re", "gap_im"),
    "phase": ("label", "omega_c1", "omega_c"),
    "meanfield-average": ("sz_avg",),
}


def evaluate_cell(cell: dict, p: ModelParams, state: dict, seed: int) -> tuple:
    """Compute one sweep cell; returns the values for CELL_COLUMNS[cell['kind']]."""
    kind = cell["kind"]
    if kind == "time-averaged-inversion":
        from .dynamics import default_max_step, time_averaged_inversion
        from .integrate import IntegratorConfig

        icfg = IntegratorConfig(rel_tol=cell["rel_tol"], abs_tol=cell["abs_tol"], max_step=default_max_step(p))
        v = time_averaged_inversion(p, initial_rho(state, p.n_atoms), cell["window_t"], icfg)
        return (v, v / (0.5 * p.n_atoms))
    if kind == "steady-state":
        from .spin import observables
        from .steady import steady_state

        obs = observables(steady_state(p).rho_ss)
        return (obs.jz, obs.xi2, obs.bloch_length)
    if kind == "spectrum":
        from .spectrum import low_spectrum

        res = low_spectrum(p, min(cell["k"], (p.n_atoms + 1) ** 2), seed=seed)
        return (res.gap_re, res.gap_im)
    if kind == "phase":
        from .meanfield import classify_phase, oscillation_threshold

        s0 = initial_bloch(state)
        thr = oscillation_threshold(s0, p)
        return (classify_phase(p, s0, thr).value, thr, p.omega_c)
    if kind == "meanfield-average":
        from .meanfield import integrate_mf, time_average_sz

        w = cell["window_t"]
        traj = integrate_mf(initial_bloch(state), p, w, t_eval=np.linspace(0, w, 4001))
        return (time_average_sz(traj, w),)
    raise InvalidParameterError(f"unknown cell kind {kind}")


def _sweep_cell(args):
    cell, p_tuple, state, seed = args
    n_out = len(CELL_COLUMNS[cell["kind"]])
    try:
        values = evaluate_cell(cell, ModelParams(*p_tuple), state, seed)
        return "ok", "", values
    except (CavitySpinError, ArithmeticError, np.linalg.LinAlgError, ValueError) as exc:
        return "failed", f"{type(exc).__name__}: {exc}", (math.nan,) * n_out


def _pool_map(fn, items, workers):
    """Ordered map; results come back in input order regardless of completion order."""
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as ex:
        return list(ex.map(fn, items))


def _sweep(cfg, p, out, fmt, workers):
    task = cfg.task
    axes = task.axes
    names = [a.name for a in axes]
    grids = [a.values() for a in axes]
    cell = task.cell.model_dump()
    state = cfg.initial_state.model_dump()
    assignments = [dict(zip(names, combo)) for combo in itertools.product(*grids)]
    items = []
    for a in assignments:
        pc = cell_params(p, a)
        items.append((cell, (pc.n_atoms, pc.chi, pc.gamma, pc.omega), state, cfg.seed))
    results = _pool_map(_sweep_cell, items, workers)
    value_cols = CELL_COLUMNS[cell["kind"]]
    axis_cols = [AXIS_COLUMNS[k] for k in names]
    cols = (*axis_cols, "n_atoms", "chi", "omega", "status", "error", *value_cols)
    rows = []
    failures = 0
    for a, item, (status, err, values) in zip(assignments, items, results):
        n, chi, _, om = item[1]
        failures += status != "ok"
        rows.append((*[a[k] for k in names], n, chi, om, status, err, *values))
    if failures == len(rows):
        raise SolverError(f"all {len(rows)} sweep cells failed; first error: {results[0][1]}")
    files = [_write_table(out, "sweep", fmt, cols, rows)]
    return files, {"cells": len(rows), "failed_cells": failures}


def _phase_cell(args):
    p_tuple, disc_states = args
    from .meanfield import BlochVector, PhaseLabel, classify_phase, oscillation_threshold

    p = ModelParams(*p_tuple)
    rows = []
    for theta0, phi0 in disc_states:
        s0 = BlochVector.from_angles(math.pi - theta0, phi0)
        try:
            thr = oscillation_threshold(s0, p)
            label = classify_phase(p, s0, thr)
            osc = label in (PhaseLabel.MULTISTABLE_OSCILLATING, PhaseLabel.NORMAL)
            rows.append((label.value, thr, p.omega_c, theta0, phi0, int(osc)))
        except (CavitySpinError, ArithmeticError, ValueError) as exc:
            rows.append((f"failed: {type(exc).__name__}", math.nan, p.omega_c, theta0, phi0, ""))
    return rows


def _phase_diagram(cfg, p, out, fmt, workers):
    task = cfg.task
    state = cfg.initial_state.model_dump()
    s0 = initial_bloch(state)
    center = (math.pi - math.acos(max(-1.0, min(1.0, s0.sz))), math.atan2(s0.sy, s0.sx))
    disc = [center]
    if task.disc is not None:
        d = task.disc
        disc = [(0.0, 0.0)] + [
            (d.theta_max * (i + 1) / d.n_theta0, 2 * math.pi * j / d.n_phi0)
            for i in range(d.n_theta0)
            for j in range(d.n_phi0)
        ]
    items = []
    pairs = []
    for om in task.omega.values():
        for ch in task.chi.values():
            pc = ModelParams.from_ratios(p.n_atoms, p.gamma, ch, om)
            pairs.append((pc.omega, pc.chi))
            items.append(((pc.n_atoms, pc.chi, pc.gamma, pc.omega), disc))
    results = _pool_map(_phase_cell, items, workers)
    main_rows, disc_rows = [], []
    failed = 0
    for (om, ch), rows in zip(pairs, results):
        label, thr, oc = rows[0][:3]
        failed += label.startswith("failed")
        main_rows.append((om, ch, label, thr, oc))
        if task.disc is not None:
            disc_rows += [(om, ch, *r) for r in rows]
    if failed == len(main_rows):
        raise SolverError("all phase-diagram cells failed")
    files = [_write_table(out, "phase_diagram", fmt, ("omega", "chi", "label", "omega_c1", "omega_c"), main_rows)]
    if task.disc is not None:
        cols = ("omega", "chi", "label", "omega_c1", "omega_c", "theta0", "phi0", "oscillates")
        files.append(_write_table(out, "phase_diagram_disc", fmt, cols, disc_rows))
    return files, {"cells": len(main_rows), "failed_cells": failed}


HANDLERS = {
    "steady-state": _steady_state,
    "meanfield": _meanfield,
    "dynamics": _dynamics,
    "spectrum": _spectrum,
    "envelope": _envelope,
    "sweep": _sweep,
    "phase-diagram": _phase_diagram,
}


def run_subcommand(subcommand: str, cfg: C.RunConfig, out_dir=None, workers: int | None = None) -> RunResult:
    """Run one subcommand and write its outputs plus ``manifest.json``.

    Validation problems give exit code 2, numerical failures exit code 3.
    """
    start = time.perf_counter()
    try:
        if subcommand not in HANDLERS:
            raise C.ConfigError(f"unknown subcommand {subcommand!r}")
        if cfg.task.kind != subcommand:
            raise C.ConfigError(f"task.kind is {cfg.task.kind!r} but subcommand is {subcommand!r}")
        n_workers = resolve_workers(workers, cfg)
        p = cfg.params()
        out = Path(out_dir if out_dir is not None else cfg.output.directory)
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise C.ConfigError(f"cannot create output directory {out}: {exc}") from None
        if not os.access(out, os.W_OK):
            raise C.ConfigError(f"output directory {out} is not writable")
    except InvalidParameterError as exc:
        return RunResult(EXIT_VALIDATION, message=str(exc))
    try:
        files, diag = HANDLERS[subcommand](cfg, p, out, cfg.output.format, n_workers)
    except NUMERICAL_ERRORS as exc:
        return RunResult(EXIT_NUMERICAL, out, message=f"{type(exc).__name__}: {exc}")
    except (InvalidParameterError, ValueError) as exc:
        return RunResult(EXIT_VALIDATION, out, message=f"{type(exc).__name__}: {exc}")
    wall = time.perf_counter() - start
    diag["params"] = _params_dict(p)
    diag["workers"] = n_workers
    manifest = write_manifest(out, subcommand, cfg.model_dump(mode="json"), files, wall, diag)
    return RunResult(EXIT_OK, out, [*files, manifest], diag)
