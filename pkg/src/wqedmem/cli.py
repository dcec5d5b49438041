"""Command-line interface: ``wqedmem run | zeno | validate | reproduce``.

Exit codes: 0 success, 1 failed check, 2 configuration error, 3 numeric abort.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import __version__
from .dynamics import DynamicsError
from .kernels import CouplingModel, cache_key
from .scenario import (RunSpec, Scenario, ScenarioError, load_scenario, plan_runs, preset,
                       preset_name, run_and_write)

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_ABORT = 0, 1, 2, 3
OUT_ENV = "WQEDMEM_OUT"

log = logging.getLogger("wqedmem")


def _out_root(arg) -> Path:
    return Path(arg or os.environ.get(OUT_ENV) or "wqedmem_out")


def _groups(specs: list[RunSpec]) -> list[list[RunSpec]]:
    """Runs sharing a kernel table go to the same worker so it is built once."""
    groups: dict[str, list[RunSpec]] = {}
    for s in specs:
        if s.solver == "volterra":
            g = s.scenario.geometry
            key = cache_key(s.model, g.positions, s.scenario.dt, s.scenario.grid.n_steps, s.scenario.cutoff)
        else:
            key = s.run_id
        groups.setdefault(key, []).append(s)
    return list(groups.values())


def _run_group(specs, out_dir, overrides):
    return [run_and_write(s, out_dir, overrides=overrides) for s in specs]


def execute(scenario: Scenario, out_dir: Path, workers: int = 1, overrides=None) -> list:
    specs = plan_runs(scenario)
    groups = _groups(specs)
    if workers <= 1 or len(groups) == 1:
        results = [r for g in groups for r in _run_group(g, out_dir, overrides)]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_group, g, out_dir, overrides) for g in groups]
            results = [r for f in futures for r in f.result()]
    order = {s.run_id: k for k, s in enumerate(specs)}
    return sorted(results, key=lambda r: order[r.spec.run_id])


def _summary(results, stream=None):
    stream = stream or sys.stdout
    w = max(len(r.spec.run_id) for r in results)
    print(f"{'run':<{w}}  {'status':<9} {'Pe_total(end)':>14} {'max|resid|':>11} {'wall[s]':>8}", file=stream)
    for r in results:
        m = r.manifest
        pe = m.get("final_pe_total")
        res = m.get("max_norm_residual")
        print(f"{r.spec.run_id:<{w}}  {m['status']:<9} "
              f"{'-' if pe is None else format(pe, '14.8f'):>14} "
              f"{'-' if res is None else format(res, '11.3e'):>11} {m['wall_time_s']:8.2f}", file=stream)


def _load(args) -> tuple[Scenario, str]:
    if bool(args.config) == bool(args.preset):
        raise ScenarioError("give exactly one of --config or --preset")
    if args.config:
        try:
            sc = load_scenario(args.config)
        except OSError as exc:
            raise ScenarioError(f"cannot read {args.config}: {exc.strerror}") from None
        return sc, sc.name
    name = preset_name(args.preset)
    return preset(name), name


def _solver_list(text):
    return None if text is None else [s.strip() for s in text.split(",") if s.strip()]


def cmd_run(args) -> int:
    sc, name = _load(args)
    overrides = {k: v for k, v in (("dt", args.dt), ("t_max", args.tmax),
                                   ("solvers", _solver_list(args.solvers))) if v is not None}
    sc = sc.override(overrides.get("dt"), overrides.get("t_max"), overrides.get("solvers"))
    out = Path(args.out) if args.out else Path(sc.out_dir) if sc.out_dir else \
        _out_root(None) / f"{name}-{sc.digest()}"
    results = execute(sc, out, args.workers, overrides)
    _summary(results)
    if args.plots:
        _plot(name, results, out, args.format)
    print(f"results in {out}")
    return EXIT_ABORT if any(r.manifest["status"] != "completed" for r in results) else EXIT_OK


def _plot(name, results, out, fmt):
    from .plotting import plot_preset
    try:
        paths = plot_preset(preset_name(name), results, out, fmt)
    except (ScenarioError, ValueError) as exc:
        log.warning("no figures: %s", exc)
        return []
    for p in paths:
        print(f"figure {p}")
    return paths


def cmd_reproduce(args) -> int:
    name = preset_name(args.figure)
    sc = preset(name)
    out = Path(args.out) if args.out else _out_root(None) / f"{name}-{sc.digest()}"
    results = execute(sc, out, args.workers)
    _summary(results)
    _plot(name, results, out, args.format)
    return EXIT_ABORT if any(r.manifest["status"] != "completed" for r in results) else EXIT_OK


def cmd_zeno(args) -> int:
    from .dynamics import ChainGeometry, PhysicalParams, TimeGrid, solve_volterra
    from .observables import excitation_loss, fit_zeno, zeno_closed_form, zeno_exact
    import numpy as np

    try:
        model = CouplingModel.parse(args.model)
    except ValueError as exc:
        raise ScenarioError(str(exc)) from None
    if not args.gamma > 0:
        raise ScenarioError("gamma must be > 0")
    if not args.cutoff > 1:
        raise ScenarioError("cutoff must exceed 1")
    tau = zeno_closed_form(model, args.gamma, args.cutoff)
    print(f"closed form   tau_Z = {tau:.6g}  [1/omega0]")
    print(f"band sum      tau_Z = {zeno_exact(model, args.gamma, args.cutoff):.6g}  [1/omega0]")
    if args.fit_from_run:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            p = PhysicalParams(args.gamma, args.cutoff)
        grid = TimeGrid.until(args.fit_horizon, args.dt)
        tr = solve_volterra(p, ChainGeometry.uniform(1, 0.0), model, np.array([1.0 + 0j]), grid,
                            photons=False)
        fit = fit_zeno(tr.times, loss=excitation_loss(tr), fit_horizon=args.fit_horizon)
        print(f"fitted        tau_Z = {fit.tau:.6g}  (horizon {args.fit_horizon:g}, "
              f"residual {fit.residual:.2e}, deviation {fit.tau / tau - 1:+.2%})")
    return EXIT_OK


def cmd_validate(args) -> int:
    from .validation import failed, run_checks
    checks = run_checks(args.level)
    bad = failed(checks)
    print("validation", "FAILED" if bad else "passed")
    return EXIT_CHECK if bad else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="wqedmem", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario file or preset, write CSV + manifests")
    r.add_argument("--config", help="scenario JSON file")
    r.add_argument("--preset", help="preset name (fig1bc, fig2ab, fig2cd, fig2e, fig3, spfig)")
    r.add_argument("--out", help=f"output directory (default ${OUT_ENV}/<name>-<hash>)")
    r.add_argument("--dt", type=float, help="override the time step")
    r.add_argument("--tmax", type=float, help="override the final time")
    r.add_argument("--solvers", help="override solvers, comma separated")
    r.add_argument("--workers", type=int, default=1, help="parallel worker processes")
    r.add_argument("--plots", action="store_true", help="also render the preset's figures")
    r.add_argument("--format", choices=("svg", "png", "pdf"), default="svg", help="figure format")
    r.set_defaults(func=cmd_run)

    z = sub.add_parser("zeno", help="Zeno time: closed form, band sum, optional fit")
    z.add_argument("--model", required=True, help="constant or linear")
    z.add_argument("--gamma", type=float, required=True, help="Gamma0/omega0")
    z.add_argument("--cutoff", type=float, default=1e4, help="Lambda/k0 (default 1e4)")
    z.add_argument("--fit-from-run", action="store_true", help="fit a short single-atom run")
    z.add_argument("--fit-horizon", type=float, default=0.2, help="fit window in 1/omega0")
    z.add_argument("--dt", type=float, default=0.005, help="time step of the fitted run")
    z.set_defaults(func=cmd_zeno)

    v = sub.add_parser("validate", help="run the built-in numerical checks")
    v.add_argument("--level", choices=("quick", "full"), default="quick")
    v.set_defaults(func=cmd_validate)

    f = sub.add_parser("reproduce", help="run a figure preset and render its panels")
    f.add_argument("--figure", required=True, help="figure id, e.g. fig2a, fig2e, fig3")
    f.add_argument("--out", help="output directory")
    f.add_argument("--workers", type=int, default=1, help="parallel worker processes")
    f.add_argument("--format", choices=("svg", "png", "pdf"), default="svg", help="figure format")
    f.set_defaults(func=cmd_reproduce)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DynamicsError, ArithmeticError) as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_ABORT


if __name__ == "__main__":
    sys.exit(main())
