"""Scenario documents, figure presets, run execution and result files.

A scenario is a JSON object.  Keys::

    model            "constant" | "linear" | list of both     (default "constant")
    gamma_ratio      Gamma0/omega0 > 0, or a list of values    (required)
    cutoff           Lambda/k0 > 1                             (default 1e4)
    N                number of atoms >= 1                      (required unless positions)
    spacing_over_pi  k0 d / pi > 0                             (required for N > 1 without positions)
    positions        explicit k0 x_i, strictly increasing
    initial          {type: single_atom|timed_dicke|subradiant, k_over_k0, atom_index}
    dt               time step in 1/omega0                      (default 0.005)
    t_max            final time in 1/omega0                     (required)
    solvers          subset of volterra, dde, markov, oracle    (default ["volterra"])
    smoothing_window odd window for Gamma_inst                  (default 1)
    seedless         must be true; every run is deterministic
    out_dir          default output directory
    n_modes          mode count for the oracle solver           (default 20000)
    name, preset     label / preset to start from (other keys override it)
    t_window         [t0, t1] plotting window
    companions       list of further scenario objects run alongside

Every output quantity is dimensionless: omega0 = v_g = k0 = 1.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import time
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__
from .dynamics import (MEMORY_SIGN, BlowUpError, ChainGeometry, DynamicsError, PhysicalParams,
                       TimeGrid, Trajectory, solve_dde, solve_markov,
                       solve_mode_oracle, solve_volterra)
from .kernels import CouplingModel, KernelTable, build_kernel_table, cache_key
from .observables import (InitialState, ObservableSeries, population, single_atom,
                          subradiant_state, timed_dicke)

UNITS_LINE = "# units: omega0 = v_g = k0 = 1"
SOLVERS = ("volterra", "dde", "markov", "oracle")
STATE_TYPES = ("single_atom", "timed_dicke", "subradiant")
MAX_STEPS = 2_000_000
PHOTON_NUMBER_CONVENTION = "N_b = sum_ij int int conj(alpha_i(tau)) alpha_j(tau') B_ij(tau' - tau)"

KEYS = {"model", "gamma_ratio", "cutoff", "N", "spacing_over_pi", "positions", "initial", "dt",
        "t_max", "solvers", "smoothing_window", "seedless", "out_dir", "n_modes", "name",
        "preset", "t_window", "companions"}
INITIAL_KEYS = {"type", "k_over_k0", "atom_index"}


class ScenarioError(ValueError):
    """Invalid scenario document; ``field`` names the offending key."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


@dataclass(frozen=True)
class InitialSpec:
    type: str = "single_atom"
    k_over_k0: float = 1.0
    atom_index: int = 1

    def build(self, geometry: ChainGeometry) -> InitialState:
        if self.type == "single_atom":
            return single_atom(geometry.n_atoms, self.atom_index)
        if self.type == "timed_dicke":
            return timed_dicke(geometry, self.k_over_k0)
        return subradiant_state(geometry)


@dataclass(frozen=True)
class Scenario:
    gamma_ratios: tuple
    t_max: float
    models: tuple = (CouplingModel.CONSTANT,)
    cutoff: float = 1e4
    n_atoms: int = 1
    spacing_over_pi: float | None = None
    positions: tuple | None = None
    initial: InitialSpec = InitialSpec()
    dt: float = 0.005
    solvers: tuple = ("volterra",)
    smoothing_window: int = 1
    out_dir: str | None = None
    n_modes: int = 20000
    name: str = "scenario"
    t_window: tuple | None = None
    companions: tuple = ()

    # -- derived ----------------------------------------------------------
    @property
    def geometry(self) -> ChainGeometry:
        if self.positions is not None:
            return ChainGeometry(np.array(self.positions))
        return ChainGeometry.uniform(self.n_atoms, math.pi * (self.spacing_over_pi or 0.0))

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid.until(self.t_max, self.dt)

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "model": [m.value for m in self.models],
            "gamma_ratio": list(self.gamma_ratios),
            "cutoff": self.cutoff,
            "N": self.n_atoms,
            "initial": {"type": self.initial.type, "k_over_k0": self.initial.k_over_k0,
                        "atom_index": self.initial.atom_index},
            "dt": self.dt,
            "t_max": self.t_max,
            "solvers": list(self.solvers),
            "smoothing_window": self.smoothing_window,
            "seedless": True,
            "n_modes": self.n_modes,
        }
        if self.spacing_over_pi is not None:
            d["spacing_over_pi"] = self.spacing_over_pi
        if self.positions is not None:
            d["positions"] = list(self.positions)
        if self.out_dir is not None:
            d["out_dir"] = self.out_dir
        if self.t_window is not None:
            d["t_window"] = list(self.t_window)
        if self.companions:
            d["companions"] = [c.to_dict() for c in self.companions]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def digest(self) -> str:
        d = self.to_dict()
        d.pop("out_dir", None)
        payload = json.dumps({"scenario": d, "version": __version__}, sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    def override(self, dt=None, t_max=None, solvers=None) -> "Scenario":
        """Copy with command-line overrides applied here and in every companion."""
        kw = {}
        if dt is not None:
            kw["dt"] = _positive("dt", dt)
        if t_max is not None:
            kw["t_max"] = _positive("t_max", t_max)
        if solvers is not None:
            kw["solvers"] = _solvers(solvers)
        comps = tuple(c.override(dt, t_max, solvers) for c in self.companions)
        out = replace(self, companions=comps, **kw)
        _check_steps(out)
        return out


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

def _positive(name, v, strict=True):
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ScenarioError(f"{name} must be a finite number", name)
    if strict and not v > 0:
        raise ScenarioError(f"{name} must be > 0", name)
    return float(v)


def _listify(v):
    return list(v) if isinstance(v, (list, tuple)) else [v]


def _solvers(v):
    out = []
    for s in _listify(v):
        if s not in SOLVERS:
            raise ScenarioError(f"solvers: unknown solver {s!r}; allowed {', '.join(SOLVERS)}", "solvers")
        if s not in out:
            out.append(s)
    if not out:
        raise ScenarioError("solvers must not be empty", "solvers")
    return tuple(out)


def _check_steps(sc):
    n = sc.t_max / sc.dt
    if n > MAX_STEPS:
        raise ScenarioError(f"t_max/dt = {n:.0f} exceeds {MAX_STEPS} steps", "dt")
    if abs(n - round(n)) > 1e-6 * max(1.0, n):
        raise ScenarioError("t_max must be a multiple of dt", "t_max")
    if round(n) < 2:
        raise ScenarioError("need at least two time steps", "t_max")


def from_dict(doc: dict, _depth: int = 0) -> Scenario:
    if not isinstance(doc, dict):
        raise ScenarioError("scenario must be a JSON object")
    unknown = sorted(set(doc) - KEYS)
    if unknown:
        raise ScenarioError(f"unknown key(s): {', '.join(unknown)}", unknown[0])
    if "preset" in doc:
        base = preset(doc["preset"]).to_dict()
        rest = {k: v for k, v in doc.items() if k != "preset"}
        if "N" in rest and "positions" not in rest:
            base.pop("positions", None)
        doc = {**base, **rest}

    models = []
    for m in _listify(doc.get("model", "constant")):
        try:
            cm = CouplingModel.parse(m)
        except ValueError:
            raise ScenarioError(f"model must be 'constant' or 'linear', got {m!r}", "model") from None
        if cm not in models:
            models.append(cm)
    if "gamma_ratio" not in doc:
        raise ScenarioError("gamma_ratio is required", "gamma_ratio")
    gammas = tuple(_positive("gamma_ratio", g) for g in _listify(doc["gamma_ratio"]))
    if not gammas:
        raise ScenarioError("gamma_ratio must not be empty", "gamma_ratio")
    for g in gammas:
        if g > 0.1:
            warnings.warn(f"gamma_ratio={g} is outside the weak-coupling regime", stacklevel=2)
    cutoff = _positive("cutoff", doc.get("cutoff", 1e4))
    if not cutoff > 1:
        raise ScenarioError("cutoff must be > 1", "cutoff")

    positions = doc.get("positions")
    if positions is not None:
        if not isinstance(positions, list) or not positions:
            raise ScenarioError("positions must be a non-empty list", "positions")
        positions = tuple(_positive("positions", p, strict=False) for p in positions)
        if any(b <= a for a, b in zip(positions, positions[1:])):
            raise ScenarioError("positions must be strictly increasing", "positions")
        n_atoms = len(positions)
        if "N" in doc and doc["N"] != n_atoms:
            raise ScenarioError("N disagrees with the length of positions", "N")
    else:
        if "N" not in doc:
            raise ScenarioError("N is required (or give positions)", "N")
        n_atoms = doc["N"]
    if isinstance(n_atoms, bool) or not isinstance(n_atoms, int) or not 1 <= n_atoms <= 1000:
        raise ScenarioError("N must be an integer in 1..1000", "N")
    spacing = doc.get("spacing_over_pi")
    if spacing is not None:
        spacing = _positive("spacing_over_pi", spacing)
    if positions is None and n_atoms > 1 and spacing is None:
        raise ScenarioError("spacing_over_pi is required for N > 1", "spacing_over_pi")

    init = doc.get("initial", {})
    if not isinstance(init, dict):
        raise ScenarioError("initial must be an object", "initial")
    bad = sorted(set(init) - INITIAL_KEYS)
    if bad:
        raise ScenarioError(f"unknown key(s) in initial: {', '.join(bad)}", "initial." + bad[0])
    itype = init.get("type", "single_atom")
    if itype not in STATE_TYPES:
        raise ScenarioError(f"initial.type must be one of {', '.join(STATE_TYPES)}", "initial.type")
    idx = init.get("atom_index", 1)
    if isinstance(idx, bool) or not isinstance(idx, int) or not 1 <= idx <= n_atoms:
        raise ScenarioError(f"initial.atom_index must be an integer in 1..{n_atoms}", "initial.atom_index")
    kk = _positive("initial.k_over_k0", init.get("k_over_k0", 1.0), strict=False)
    if itype == "subradiant":
        if n_atoms < 2:
            raise ScenarioError("subradiant initial state needs N >= 2", "initial.type")
        if positions is not None and ChainGeometry(np.array(positions)).spacing is None:
            raise ScenarioError("subradiant initial state needs a uniform chain", "initial.type")

    window = doc.get("smoothing_window", 1)
    if isinstance(window, bool) or not isinstance(window, int) or window < 1 or window % 2 == 0:
        raise ScenarioError("smoothing_window must be an odd integer >= 1", "smoothing_window")
    if doc.get("seedless", True) is not True:
        raise ScenarioError("seedless must be true: runs have no random component", "seedless")
    n_modes = doc.get("n_modes", 20000)
    if isinstance(n_modes, bool) or not isinstance(n_modes, int) or n_modes < 2 or n_modes % 2:
        raise ScenarioError("n_modes must be an even integer >= 2", "n_modes")
    out_dir = doc.get("out_dir")
    if out_dir is not None and not isinstance(out_dir, str):
        raise ScenarioError("out_dir must be a string", "out_dir")
    name = doc.get("name", "scenario")
    if not isinstance(name, str) or not name or any(c in name for c in "/\\"):
        raise ScenarioError("name must be a non-empty string without path separators", "name")
    t_window = doc.get("t_window")
    if t_window is not None:
        if not isinstance(t_window, list) or len(t_window) != 2:
            raise ScenarioError("t_window must be [t0, t1]", "t_window")
        t_window = tuple(_positive("t_window", v, strict=False) for v in t_window)
        if not 0 <= t_window[0] < t_window[1]:
            raise ScenarioError("t_window must satisfy 0 <= t0 < t1", "t_window")

    comps = doc.get("companions", [])
    if not isinstance(comps, list):
        raise ScenarioError("companions must be a list", "companions")
    if comps and _depth > 0:
        raise ScenarioError("companions cannot be nested", "companions")

    sc = Scenario(
        gamma_ratios=gammas,
        t_max=_positive("t_max", doc["t_max"]) if "t_max" in doc else _missing("t_max"),
        models=tuple(models), cutoff=cutoff, n_atoms=n_atoms, spacing_over_pi=spacing,
        positions=positions, initial=InitialSpec(itype, kk, idx),
        dt=_positive("dt", doc.get("dt", 0.005)), solvers=_solvers(doc.get("solvers", ["volterra"])),
        smoothing_window=window, out_dir=out_dir, n_modes=n_modes, name=name, t_window=t_window,
        companions=tuple(from_dict(c, _depth + 1) for c in comps),
    )
    _check_steps(sc)
    return sc


def _missing(name):
    raise ScenarioError(f"{name} is required", name)


def parse_scenario(text: str) -> Scenario:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return from_dict(doc)


def load_scenario(path) -> Scenario:
    return parse_scenario(Path(path).read_text())


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------

_SINGLE_GAMMAS = [1e-2, 1e-3, 1e-6]

PRESETS = {
    # single atom, three couplings, cutoff 1e4
    "fig1bc": {"name": "fig1bc", "model": ["constant", "linear"], "gamma_ratio": _SINGLE_GAMMAS,
               "N": 1, "t_max": 50.0, "solvers": ["volterra", "markov"]},
    "fig2ab": {"name": "fig2ab", "model": ["constant", "linear"], "gamma_ratio": 1e-4, "N": 20,
               "spacing_over_pi": 0.1, "initial": {"type": "timed_dicke", "k_over_k0": 1.0},
               "t_max": 10.0, "solvers": ["volterra", "dde"]},
    "fig2cd": {"name": "fig2cd", "model": ["constant", "linear"], "gamma_ratio": _SINGLE_GAMMAS,
               "N": 10, "spacing_over_pi": 0.1, "initial": {"type": "timed_dicke", "k_over_k0": 1.0},
               "t_max": 50.0, "solvers": ["volterra", "dde"]},
    "fig2e": {"name": "fig2e", "model": ["constant", "linear"], "gamma_ratio": _SINGLE_GAMMAS,
              "N": 10, "spacing_over_pi": 0.1, "initial": {"type": "timed_dicke", "k_over_k0": 1.0},
              "t_max": 50.0, "solvers": ["volterra", "dde"], "t_window": [45.0, 50.0],
              "companions": [{"name": "fig2e_single", "model": ["constant", "linear"],
                              "gamma_ratio": _SINGLE_GAMMAS, "N": 1, "t_max": 50.0,
                              "solvers": ["volterra", "markov"], "t_window": [45.0, 50.0]}]},
    "fig3": {"name": "fig3", "model": ["constant", "linear"], "gamma_ratio": 1e-4, "N": 20,
             "spacing_over_pi": 0.1, "initial": {"type": "subradiant"}, "t_max": 10.0,
             "solvers": ["volterra", "dde"]},
    # wide-spacing chain; the printed spacing 0.5 pi/d is read as 0.5 pi/k0
    "spfig": {"name": "spfig", "model": ["constant", "linear"], "gamma_ratio": 1e-4, "N": 10,
              "spacing_over_pi": 0.5, "initial": {"type": "timed_dicke", "k_over_k0": 1.0},
              "t_max": 10.0, "solvers": ["volterra", "dde"]},
}

# figure panel ids map onto the preset that produces them
ALIASES = {"fig1b": "fig1bc", "fig1c": "fig1bc", "fig2a": "fig2ab", "fig2b": "fig2ab",
           "fig2c": "fig2cd", "fig2d": "fig2cd", "fig3a": "fig3", "fig3b": "fig3"}


def preset_name(name: str) -> str:
    key = ALIASES.get(name, name)
    if key not in PRESETS:
        allowed = sorted(set(PRESETS) | set(ALIASES))
        raise ScenarioError(f"unknown preset {name!r}; choose from {', '.join(allowed)}", "preset")
    return key


def preset(name: str) -> Scenario:
    return from_dict(json.loads(json.dumps(PRESETS[preset_name(name)])))


# ---------------------------------------------------------------------------
# execution
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RunSpec:
    """One (scenario part, gamma, solver, model) combination."""

    scenario: Scenario
    gamma_ratio: float
    solver: str
    model: CouplingModel | None

    @property
    def run_id(self) -> str:
        tag = self.solver if self.model is None else f"{self.solver}-{self.model.value}"
        return f"{self.scenario.name}_N{self.scenario.n_atoms}_g{self.gamma_ratio:g}_{tag}"


def plan_runs(scenario: Scenario) -> list[RunSpec]:
    out = []
    for part in (scenario, *scenario.companions):
        for g in part.gamma_ratios:
            for s in part.solvers:
                if s in ("volterra", "oracle"):
                    out.extend(RunSpec(part, g, s, m) for m in part.models)
                else:
                    out.append(RunSpec(part, g, s, None))
    return out


@dataclass
class RunResult:
    spec: RunSpec
    trajectory: Trajectory | None
    observables: ObservableSeries | None
    manifest: dict
    error: Exception | None = None


_TABLES: dict[str, KernelTable] = {}


def kernel_table_for(scenario: Scenario, model, cache_dir=None) -> KernelTable:
    """Kernel table for one scenario part, memoised per process (gamma independent)."""
    geo, grid = scenario.geometry, scenario.grid
    model = CouplingModel.parse(model)
    key = cache_key(model, geo.positions, grid.dt, grid.n_steps, scenario.cutoff)
    if key not in _TABLES:
        if len(_TABLES) >= 8:
            _TABLES.pop(next(iter(_TABLES)))
        _TABLES[key] = build_kernel_table(model, geo.positions, grid.dt, grid.n_steps,
                                          scenario.cutoff, cache_dir=cache_dir)
    return _TABLES[key]


def _manifest(spec: RunSpec, init: InitialState, overrides: dict) -> dict:
    sc = spec.scenario
    return {
        "run_id": spec.run_id,
        "scenario_hash": sc.digest(),
        "scenario": sc.to_dict(),
        "code_version": __version__,
        "units": UNITS_LINE[2:],
        "solver": spec.solver,
        "model": None if spec.model is None else spec.model.value,
        "gamma_ratio": spec.gamma_ratio,
        "sign_convention": {"memory_sign": MEMORY_SIGN,
                            "amplitude_equation": "alpha_i(t) = alpha_i(0) + i (2 gamma/pi) sum_j "
                                                  "int_0^t A_ij(t - tau) alpha_j(tau) dtau",
                            "photon_number": PHOTON_NUMBER_CONVENTION},
        "initial_state": {"type": init.kind.value, **init.params},
        "pre_normalization_norm": init.pre_norm,
        "overrides": overrides,
        "status": "running",
    }


def execute_run(spec: RunSpec, cache_dir=None, overrides=None) -> RunResult:
    sc = spec.scenario
    geo, grid = sc.geometry, sc.grid
    init = sc.initial.build(geo)
    manifest = _manifest(spec, init, overrides or {})
    with warnings.catch_warnings():
        # strong coupling was already reported when the scenario was parsed
        warnings.simplefilter("ignore")
        params = PhysicalParams(spec.gamma_ratio, sc.cutoff)
    t0 = time.perf_counter()
    traj, err = None, None
    try:
        if spec.solver == "volterra":
            table = kernel_table_for(sc, spec.model, cache_dir)
            traj = solve_volterra(params, geo, spec.model, init.amplitudes, grid, table)
            manifest["kernel_evaluations"] = {"A": table.evaluations_A, "B": table.evaluations_B,
                                              "B_local": table.evaluations_local,
                                              "distance_classes": int(table.distances.size)}
        elif spec.solver == "dde":
            traj = solve_dde(params, geo, init.amplitudes, grid)
        elif spec.solver == "markov":
            traj = solve_markov(params, geo, init.amplitudes, grid)
        else:
            traj = solve_mode_oracle(params, geo, spec.model, init.amplitudes, grid, sc.n_modes)
        manifest["status"] = "completed"
    except BlowUpError as exc:
        err = exc
        traj = exc.trajectory
        manifest["status"] = "aborted"
        manifest["message"] = str(exc)
    except DynamicsError as exc:
        err = exc
        manifest["status"] = "aborted"
        manifest["message"] = str(exc)
    manifest["wall_time_s"] = time.perf_counter() - t0
    obs = None
    if traj is not None and traj.times.size > 0:
        traj.scenario_hash = manifest["scenario_hash"]
        manifest["last_valid_step"] = int(traj.times.size - 1)
        res = traj.norm_residual
        manifest["max_norm_residual"] = None if res is None else float(res.max())
        manifest["final_pe_total"] = float(np.sum(np.abs(traj.amplitudes[-1]) ** 2))
        if traj.times.size >= 3:
            obs = population(traj, spec.gamma_ratio, sc.smoothing_window)
    else:
        manifest["last_valid_step"] = -1
    return RunResult(spec, traj, obs, manifest, err)


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return "nan" if not np.isfinite(x) else format(float(x), ".17g")


def csv_text(traj: Trajectory, obs: ObservableSeries | None) -> str:
    n = traj.n_atoms
    cols = ["t"]
    for i in range(1, n + 1):
        cols += [f"re_alpha_{i}", f"im_alpha_{i}"]
    cols += [f"Pe_{i}" for i in range(1, n + 1)]
    cols += ["Pe_total", "Nb", "norm_residual", "Gamma_inst_total"]
    a = traj.amplitudes
    pe = np.abs(a) ** 2
    nan = np.full(traj.times.size, np.nan)
    nb = nan if traj.photon_number is None else traj.photon_number
    res = nan if traj.photon_number is None else traj.norm_residual
    # rates in units of omega0, as every other column
    g = nan if obs is None else obs.gamma_inst_total * obs.gamma_ratio
    body = np.column_stack([traj.times, _interleave(a), pe, pe.sum(axis=1), nb, res, g])
    buf = io.StringIO()
    buf.write(UNITS_LINE + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for row in body:
        w.writerow([_fmt(x) for x in row])
    return buf.getvalue()


def _interleave(a: np.ndarray) -> np.ndarray:
    out = np.empty((a.shape[0], 2 * a.shape[1]))
    out[:, 0::2] = a.real
    out[:, 1::2] = a.imag
    return out


def read_csv(path) -> dict[str, np.ndarray]:
    with open(path) as fh:
        first = fh.readline().rstrip("\n")
        if first != UNITS_LINE:
            raise ValueError(f"{path}: missing units line")
        data = np.genfromtxt(fh, delimiter=",", names=True)
    return {k: np.asarray(data[k]) for k in data.dtype.names}


def _write_json(path: Path, obj) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")
    os.replace(tmp, path)


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"not JSON serialisable: {type(x).__name__}")


def write_manifest(manifest: dict, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{manifest['run_id']}.manifest.json"
    try:
        _write_json(path, manifest)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from exc
    return path


def write_results(result: RunResult, out_dir) -> list[Path]:
    """CSV for the run (when any data exists) plus the finalised manifest."""
    out = Path(out_dir)
    paths = []
    try:
        out.mkdir(parents=True, exist_ok=True)
        if result.trajectory is not None and result.trajectory.times.size > 0:
            p = out / f"{result.spec.run_id}.csv"
            p.write_text(csv_text(result.trajectory, result.observables))
            result.manifest["csv"] = p.name
            paths.append(p)
    except OSError as exc:
        raise OSError(f"cannot write results to {out}: {exc.strerror}") from exc
    paths.append(write_manifest(result.manifest, out))
    return paths


def run_and_write(spec: RunSpec, out_dir, cache_dir=None, overrides=None) -> RunResult:
    """Manifest first (status running), then the run, then CSV and final manifest."""
    init = spec.scenario.initial.build(spec.scenario.geometry)
    write_manifest(_manifest(spec, init, overrides or {}), out_dir)
    result = execute_run(spec, cache_dir, overrides)
    write_results(result, out_dir)
    return result
