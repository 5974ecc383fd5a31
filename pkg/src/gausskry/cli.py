"""Command-line benchmark harness.

Every command writes CSV (with a ``# gausskry-csv v1`` first line) and/or JSON
into the ``--out`` directory.  Settings are resolved as command-line flags,
then the ``--config`` JSON file, then built-in defaults.  Independent sweep
cells run on a thread pool capped by ``GAUSSKRY_THREADS``; results are
collected in a fixed order so outputs do not depend on scheduling.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import GausskryError
from .models import PoissonModel, mass_spring_chain, reference_nonlinear, rigid_body
from .nonlinear import (MidpointProblem, NonlinearPolicy, cayley_bfgs_solve, fixed_point_solve,
                        integrate_nonlinear)
from .pade import MAX_DEGREE, REFERENCE_CONSTANTS, REFERENCE_ATOL, build_pade
from .reports import TrajectoryReport, write_csv
from .stepping import (LinearStepper, StepPolicy, fitted_order, integrate_linear,
                       reference_linear, summary_row, time_grid, write_summary_csv)

COMMANDS = ("linear-step", "integrate", "order-study", "nonlinear-step",
            "nonlinear-integrate", "pade-audit")
LINEAR_COMMANDS = ("linear-step", "integrate")
NONLINEAR_COMMANDS = ("nonlinear-step", "nonlinear-integrate")
MODELS = ("mass-spring", "rigid-body")

SOLVER_ALIASES = {
    "qaa-v1": "qaa_v1", "qaa_v1": "qaa_v1",
    "qaa-v2": "qaa_v2", "qaa_v2": "qaa_v2",
    "gmres": "gmres",
    "exp-arnoldi": "exp_arnoldi", "exp_arnoldi": "exp_arnoldi",
    "dense": "dense_direct", "dense_direct": "dense_direct", "dense-direct": "dense_direct",
}
METHOD_ALIASES = {
    "fp": "fixed_point", "fixed-point": "fixed_point", "fixed_point": "fixed_point",
    "cayley-bfgs": "cayley_bfgs", "cayley_bfgs": "cayley_bfgs", "bfgs": "cayley_bfgs",
}

DEFAULTS = {
    "model": None,  # rigid-body for nonlinear commands, mass-spring otherwise
    "n": 50,
    "s": [1],
    "h": 0.1,
    "h_list": [0.1, 0.05, 0.025, 0.0125],
    "t_end": 1.0,
    "solver": ["qaa_v1"],
    "method": ["fixed_point", "cayley_bfgs"],
    "tol": None,  # per command, see _default_tol
    "k_max": None,
    "out": "gausskry-out",
    "strict": False,
    "seed": 0,
    "timing": False,
    "params": {},
    "export_model": False,
}

class UsageError(Exception):
    """Invalid configuration; reported with exit code 2."""


@dataclass
class ExperimentConfig:
    command: str
    model: str
    n: int
    s: list[int]
    h: float
    h_list: list[float]
    t_end: float
    solver: list[str]
    method: list[str]
    tol: str | float
    k_max: int | None
    out: Path
    strict: bool
    seed: int
    timing: bool
    params: dict = field(default_factory=dict)
    export_model: bool = False

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["out"] = str(self.out)
        return d


# ---------------------------------------------------------------- parsing

def _split(text) -> list[str]:
    if isinstance(text, (list, tuple)):
        return [str(t).strip() for t in text]
    return [t.strip() for t in str(text).split(",") if t.strip()]


def _parse_tol(value) -> str | float:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        tol = float(value)
    elif value == "order":
        return "order"
    elif isinstance(value, str) and value.startswith("fixed:"):
        try:
            tol = float(value[len("fixed:"):])
        except ValueError:
            raise UsageError(f"bad tolerance {value!r}") from None
    else:
        raise UsageError(f"--tol must be 'order' or 'fixed:<value>', got {value!r}")
    if not tol > 0 or not math.isfinite(tol):
        raise UsageError("fixed tolerance must be positive")
    return tol


def _default_tol(command: str) -> str | float:
    # a single nonlinear step is studied at tight tolerance; sweeps follow the order rule
    return 1e-12 if command == "nonlinear-step" else "order"


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with default settings")
    common.add_argument("--model", help="mass-spring or rigid-body")
    common.add_argument("--n", type=int, help="number of oscillators in the chain")
    common.add_argument("--s", help="Gauss degree(s), comma separated")
    common.add_argument("--h", type=float, help="step size")
    common.add_argument("--h-list", dest="h_list", help="comma separated step sizes")
    common.add_argument("--t-end", dest="t_end", type=float, help="time horizon")
    common.add_argument("--solver", help="qaa-v1, qaa-v2, gmres, exp-arnoldi, dense (comma list)")
    common.add_argument("--method", help="fp or cayley-bfgs (comma list)")
    common.add_argument("--tol", help="'order' or 'fixed:<value>'")
    common.add_argument("--k-max", dest="k_max", type=int, help="iteration cap")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, help="seed for randomized probes")
    common.add_argument("--strict", action="store_true", default=None,
                        help="nonzero exit code if any solve fails to converge")
    common.add_argument("--timing", action="store_true", default=None,
                        help="record wall-clock times (outputs are then not reproducible)")
    common.add_argument("--export-model", dest="export_model", action="store_true", default=None,
                        help="also write the model matrices in MatrixMarket format")

    parser = argparse.ArgumentParser(prog="gausskry",
                                     description="Energy-preserving Krylov integrators for Poisson systems.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    """Merge flags, config file and defaults, then validate."""
    file_cfg = {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                file_cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(file_cfg, dict):
            raise UsageError("config file must contain a JSON object")
        file_cfg = {k.replace("-", "_"): v for k, v in file_cfg.items()}
        unknown = set(file_cfg) - set(DEFAULTS) - {"command"}
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")

    def pick(key):
        flag = getattr(args, key, None)
        if flag is not None:
            return flag
        if key in file_cfg:
            return file_cfg[key]
        return DEFAULTS[key]

    command = args.command
    model = pick("model")
    if model is None:
        model = "rigid-body" if command in NONLINEAR_COMMANDS else "mass-spring"
    if model not in MODELS:
        raise UsageError(f"unknown model {model!r}; choose from {MODELS}")
    try:
        n = int(pick("n"))
        s = [int(v) for v in _split(pick("s"))] if not isinstance(pick("s"), int) else [pick("s")]
        h = float(pick("h"))
        h_list = [float(v) for v in _split(pick("h_list"))]
        t_end = float(pick("t_end"))
        k_max = pick("k_max")
        k_max = None if k_max is None else int(k_max)
        seed = int(pick("seed"))
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid numeric setting: {exc}") from None

    solvers = []
    for name in _split(pick("solver")):
        if name not in SOLVER_ALIASES:
            raise UsageError(f"unknown solver {name!r}")
        solvers.append(SOLVER_ALIASES[name])
    methods = []
    for name in _split(pick("method")):
        if name not in METHOD_ALIASES:
            raise UsageError(f"unknown method {name!r}")
        methods.append(METHOD_ALIASES[name])
    tol_raw = pick("tol")
    tol = _default_tol(command) if tol_raw is None else _parse_tol(tol_raw)
    params = pick("params")
    if not isinstance(params, dict):
        raise UsageError("params must be a JSON object")

    if n < 1:
        raise UsageError("--n must be a positive integer")
    if not s or any(not 1 <= v <= MAX_DEGREE for v in s):
        raise UsageError(f"--s must lie in 1..{MAX_DEGREE}")
    if not h > 0 or not math.isfinite(h):
        raise UsageError("--h must be positive")
    if any(not v > 0 for v in h_list):
        raise UsageError("--h-list entries must be positive")
    if not t_end > 0:
        raise UsageError("--t-end must be positive")
    if k_max is not None and k_max < 1:
        raise UsageError("--k-max must be at least 1")
    if not solvers:
        raise UsageError("no solver given")
    if not methods:
        raise UsageError("no method given")
    if command in LINEAR_COMMANDS and model != "mass-spring":
        raise UsageError(f"{command} needs a model with constant J (mass-spring)")
    if command in NONLINEAR_COMMANDS and model != "rigid-body":
        raise UsageError(f"{command} needs a model with state-dependent J (rigid-body)")
    if command == "order-study" and len(h_list) < 3:
        raise UsageError("order-study needs an h-list with at least 3 entries")
    if command in ("integrate", "nonlinear-integrate"):
        _check_grid(t_end, h)
    if command == "order-study":
        for hv in h_list:
            _check_grid(t_end, hv)

    return ExperimentConfig(command=command, model=model, n=n, s=s, h=h, h_list=h_list,
                            t_end=t_end, solver=solvers, method=methods, tol=tol, k_max=k_max,
                            out=Path(pick("out")), strict=bool(pick("strict")), seed=seed,
                            timing=bool(pick("timing")), params=params,
                            export_model=bool(pick("export_model")))


def _check_grid(T: float, h: float) -> None:
    try:
        time_grid(T, h)
    except GausskryError as exc:
        raise UsageError(str(exc)) from None


# ---------------------------------------------------------------- helpers

def build_model(cfg: ExperimentConfig) -> PoissonModel:
    try:
        if cfg.model == "mass-spring":
            return mass_spring_chain(cfg.n, **cfg.params)
        return rigid_body(**cfg.params)
    except TypeError as exc:
        raise UsageError(f"bad model parameters: {exc}") from None


def _workers() -> int:
    raw = os.environ.get("GAUSSKRY_THREADS")
    if raw is None:
        return min(4, os.cpu_count() or 1)
    try:
        value = int(raw)
    except ValueError:
        raise UsageError(f"GAUSSKRY_THREADS must be an integer, got {raw!r}") from None
    if value < 1:
        raise UsageError("GAUSSKRY_THREADS must be at least 1")
    return value


def _run_cells(fn, cells: list) -> list:
    workers = min(_workers(), max(len(cells), 1))
    if workers == 1:
        return [fn(c) for c in cells]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, cells))


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, Path):
        return str(x)
    return x


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        write_csv(fh, header, rows)


def _h_tag(h: float) -> str:
    return repr(float(h)).replace(".", "p")


def _trajectory_rows(traj: TrajectoryReport):
    # per time point; iteration data belongs to the step that produced the state
    for i, t in enumerate(traj.times):
        its = int(traj.iterations[i - 1]) if i else 0
        ok = bool(traj.converged[i - 1]) if i else True
        yield [float(t), float(traj.energy_devs[i]), its, int(ok)]


# ---------------------------------------------------------------- commands

def run_linear_step(cfg: ExperimentConfig, model: PoissonModel) -> tuple[list[Path], bool]:
    """Per-iterate trace of one step from ``y0`` for each (solver, s)."""
    cells = [(solver, s) for solver in cfg.solver for s in cfg.s]

    def work(cell):
        solver, s = cell
        policy = StepPolicy(s=s, h=cfg.h, solver=solver,
                            rtol_mode=cfg.tol if cfg.tol != "order" else "order",
                            k_max=cfg.k_max)
        _, rep = LinearStepper(model, policy).step(model.y0)
        return rep

    reports = _run_cells(work, cells)
    paths, ok = [], True
    for (solver, s), rep in zip(cells, reports):
        path = cfg.out / f"linear-step_{solver}_s{s}.csv"
        with open(path, "w", encoding="utf-8", newline="") as fh:
            rep.trace.to_csv(fh, timing=cfg.timing)
        paths.append(path)
        ok &= bool(rep.converged)
    return paths, ok


def _linear_cells(cfg, model, hs):
    cells = [(h, s, solver) for h in hs for s in cfg.s for solver in cfg.solver]
    refs = {h: reference_linear(model, time_grid(cfg.t_end, h)) for h in hs}

    def work(cell):
        h, s, solver = cell
        policy = StepPolicy(s=s, h=h, solver=solver, rtol_mode=cfg.tol, k_max=cfg.k_max)
        return integrate_linear(model, cfg.t_end, policy)

    return cells, refs, _run_cells(work, cells)


def _nonlinear_cells(cfg, model, hs):
    cells = [(h, 1, method) for h in hs for method in cfg.method]
    refs = {h: reference_nonlinear(model, time_grid(cfg.t_end, h)) for h in hs}

    def work(cell):
        h, _, method = cell
        policy = NonlinearPolicy(h=h, method=method, tol_mode=cfg.tol,
                                 k_max=cfg.k_max if cfg.k_max is not None else 100)
        return integrate_nonlinear(model, cfg.t_end, policy)

    return cells, refs, _run_cells(work, cells)


def run_integrate(cfg: ExperimentConfig, model: PoissonModel) -> tuple[list[Path], bool]:
    """Single-h trajectories with per-time-point diagnostics plus a summary row each."""
    linear = model.is_linear
    cells, refs, trajs = (_linear_cells if linear else _nonlinear_cells)(cfg, model, [cfg.h])
    paths, rows, ok = [], [], True
    prefix = "integrate" if linear else "nonlinear-integrate"
    for (h, s, solver), traj in zip(cells, trajs):
        rows.append(summary_row(h, s, solver, traj, refs[h]))
        path = cfg.out / f"{prefix}_{solver}_s{s}_h{_h_tag(h)}.csv"
        _write_csv(path, ["t", "energy_dev", "iterations", "converged"], _trajectory_rows(traj))
        paths.append(path)
        ok &= bool(np.all(traj.converged))
    summary = cfg.out / f"{prefix}_summary.csv"
    with open(summary, "w", encoding="utf-8", newline="") as fh:
        write_summary_csv(fh, rows)
    return [summary] + paths, ok


def run_order_study(cfg: ExperimentConfig, model: PoissonModel) -> tuple[list[Path], bool]:
    """Error, energy and iteration statistics over the h-list, plus fitted slopes."""
    linear = model.is_linear
    hs = sorted(cfg.h_list, reverse=True)
    cells, refs, trajs = (_linear_cells if linear else _nonlinear_cells)(cfg, model, hs)
    rows = [summary_row(h, s, solver, traj, refs[h]) for (h, s, solver), traj in zip(cells, trajs)]
    ok = all(bool(np.all(t.converged)) for t in trajs)

    groups: dict[tuple[int, str], list] = {}
    for row in rows:
        groups.setdefault((row[1], row[2]), []).append(row)
    fits = []
    for (s, solver), grp in groups.items():
        fits.append({
            "s": s, "solver": solver,
            "expected_order": 2 * s,
            "fitted_order": fitted_order([r[0] for r in grp], [r[3] for r in grp]),
            "h": [r[0] for r in grp],
            "l2_error": [r[3] for r in grp],
            "max_energy_dev": max(r[4] for r in grp),
            "avg_iters_per_step": [r[5] for r in grp],
        })
    csv_path = cfg.out / "order-study.csv"
    json_path = cfg.out / "order-study.json"
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        write_summary_csv(fh, rows)
    _write_json(json_path, {"config": cfg.to_dict(), "model": model.to_dict(), "fits": fits,
                            "all_converged": ok})
    return [csv_path, json_path], ok


def run_nonlinear_step(cfg: ExperimentConfig, model: PoissonModel) -> tuple[list[Path], bool]:
    """Iteration trace of one midpoint step from ``y0`` for each method."""
    prob = MidpointProblem(model, model.y0, cfg.h, seed=cfg.seed)
    tol = cfg.h ** 2 if cfg.tol == "order" else cfg.tol
    k_max = cfg.k_max if cfg.k_max is not None else 100

    def work(method):
        solve = fixed_point_solve if method == "fixed_point" else cayley_bfgs_solve
        return solve(prob, model.y0, tol, k_max)

    reports = _run_cells(work, cfg.method)
    paths, ok = [], True
    for method, rep in zip(cfg.method, reports):
        path = cfg.out / f"nonlinear-step_{method}.csv"
        with open(path, "w", encoding="utf-8", newline="") as fh:
            rep.trace.to_csv(fh, method=method, timing=cfg.timing)
        paths.append(path)
        ok &= bool(rep.converged)
    return paths, ok


def pade_audit(s_values) -> dict:
    """Pade data and invariant checks for each degree in ``s_values``."""
    out = []
    for s in s_values:
        p = build_pade(s)
        poles = np.asarray(p.poles)
        checks = {
            "conjugate_pairs": bool(np.allclose(np.sort_complex(poles.conj()), np.sort_complex(poles),
                                                rtol=0, atol=1e-12 * np.max(np.abs(poles)))),
            "right_half_plane": bool(np.all(poles.real > 0)),
            "kappa": float(p.kappa),
        }
        if s == 1:
            checks["kappa_is_one"] = bool(abs(p.kappa - 1.0) <= 1e-12)
        if s in REFERENCE_CONSTANTS:
            ref_poles, ref_weights = REFERENCE_CONSTANTS[s]
            err = max(np.max(np.abs(poles - np.asarray(ref_poles))),
                      np.max(np.abs(np.asarray(p.weights) - np.asarray(ref_weights))))
            checks["reference_max_abs_error"] = float(err)
            checks["reference_match"] = bool(err <= REFERENCE_ATOL)
        out.append({"pade": p.to_dict(), "checks": checks})
    return {"degrees": out}


def run_pade_audit(cfg: ExperimentConfig, model=None) -> tuple[list[Path], bool]:
    data = pade_audit(cfg.s)
    path = cfg.out / "pade-audit.json"
    _write_json(path, data)
    ok = all(all(v for k, v in d["checks"].items() if isinstance(v, bool)) for d in data["degrees"])
    return [path], ok


RUNNERS = {
    "linear-step": run_linear_step,
    "integrate": run_integrate,
    "nonlinear-integrate": run_integrate,
    "order-study": run_order_study,
    "nonlinear-step": run_nonlinear_step,
    "pade-audit": run_pade_audit,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        cfg.out.mkdir(parents=True, exist_ok=True)
        model = None if cfg.command == "pade-audit" else build_model(cfg)
        if model is not None and cfg.export_model:
            model.export_matrix_market(cfg.out)
        paths, ok = RUNNERS[cfg.command](cfg, model)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"gausskry: error: {exc}", file=sys.stderr)
        return 2
    except (GausskryError, OSError) as exc:
        print(f"gausskry: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    for p in paths:
        print(p)
    if not ok:
        print("gausskry: warning: some solves did not converge", file=sys.stderr)
        if cfg.strict:
            return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
