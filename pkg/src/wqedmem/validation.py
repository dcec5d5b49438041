"""Self-checks run by ``wqedmem validate``.

Each check returns a :class:`Check` with the measured figure of merit and
the threshold it is held to.  ``known_deviation`` marks a comparison that
is reported but not counted as a failure (documented in the README).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dynamics import (BlowUpError, ChainGeometry, DynamicsError, PhysicalParams, TimeGrid,
                       solve_dde, solve_markov, solve_mode_oracle, solve_volterra)
from .kernels import CouplingModel, kernel_A, kernel_A_quad, kernel_B, kernel_B_quad
from .observables import excitation_loss, fit_zeno, zeno_closed_form, zeno_exact

KERNEL_R = (0.05 * math.pi, 0.1 * math.pi, 0.5 * math.pi, 2 * math.pi)
KERNEL_PHI = (0.1, 1.0, 5.0, 20.0)


@dataclass
class Check:
    name: str
    measured: float
    threshold: float
    passed: bool
    note: str = ""
    known_deviation: bool = False

    def line(self) -> str:
        tag = "PASS" if self.passed else ("KNOWN" if self.known_deviation else "FAIL")
        msg = f"{tag:5s} {self.name:<38s} measured {self.measured:.3e}  threshold {self.threshold:.3e}"
        return msg + (f"  ({self.note})" if self.note else "")


def _rel(a, b):
    return abs(a - b) / max(abs(b), 1e-300)


def check_kernels(cutoffs=(50.0, 1e4)) -> Check:
    worst = 0.0
    for cutoff in cutoffs:
        for model in CouplingModel:
            for r in KERNEL_R:
                for phi in KERNEL_PHI:
                    worst = max(worst,
                                _rel(kernel_A(model, r, phi, cutoff), kernel_A_quad(model, r, phi, cutoff).value),
                                _rel(kernel_B(model, r, phi, cutoff), kernel_B_quad(model, r, phi, cutoff).value))
    return Check("kernels closed form vs quadrature", worst, 1e-9, worst < 1e-9)


def oracle_deviation(n_atoms: int, model="constant", t_max=30.0, dt=0.005) -> float:
    p = PhysicalParams(1e-2, 50.0)
    geo = ChainGeometry.uniform(n_atoms, 0.1 * math.pi)
    init = np.zeros(n_atoms, complex)
    init[0] = 1.0
    grid = TimeGrid.until(t_max, dt)
    v = solve_volterra(p, geo, model, init, grid, photons=False)
    o = solve_mode_oracle(p, geo, model, init, grid, n_modes=4000)
    return float(np.abs(v.amplitudes - o.amplitudes).max())


def check_oracle(n_atoms: int, model="constant") -> Check:
    name = f"oracle equivalence N={n_atoms} {CouplingModel.parse(model).value}"
    try:
        dev = oracle_deviation(n_atoms, model)
    except BlowUpError as exc:
        return Check(name, math.inf, 1e-3, False, str(exc))
    return Check(name, dev, 1e-3, dev < 1e-3)


def convergence_factor(model="constant", dts=(0.02, 0.01, 0.005), t_max=10.0) -> float:
    p = PhysicalParams(1e-2, 50.0)
    geo = ChainGeometry.uniform(2, 0.1 * math.pi)
    init = np.array([1.0, 0.0], complex)
    a = [solve_volterra(p, geo, model, init, TimeGrid.until(t_max, dt), photons=False).amplitudes
         for dt in dts]
    e1 = np.abs(a[0] - a[1][::2]).max()
    e2 = np.abs(a[1] - a[2][::2]).max()
    return float(e1 / e2)


def check_convergence() -> list[Check]:
    out = []
    for model in CouplingModel:
        f = convergence_factor(model)
        out.append(Check(f"dt-halving factor {model.value}", f, 4.0, 3.4 <= f <= 4.6, "band [3.4, 4.6]"))
    return out


def check_reduction() -> Check:
    p = PhysicalParams(1e-2)
    geo = ChainGeometry.uniform(5, 0.1 * math.pi)
    init = np.exp(1j * geo.positions) / math.sqrt(5)
    grid = TimeGrid.until(20.0)
    dev = np.abs(solve_dde(p, geo, init, grid, delay_scale=0.0).amplitudes
                 - solve_markov(p, geo, init, grid).amplitudes).max()
    return Check("zero-delay dde vs markov", float(dev), 1e-8, dev < 1e-8)


def zeno_curvature(model, gamma=1e-4, cutoff=1e4) -> float:
    """tau_Z fitted on t <= 0.1/cutoff, relative to the kernel-level value."""
    horizon = 0.1 / cutoff
    dt = horizon / 20
    p = PhysicalParams(gamma, cutoff)
    geo = ChainGeometry.uniform(1, 0.0)
    tr = solve_volterra(p, geo, model, np.array([1.0 + 0j]), TimeGrid(dt, 20), photons=False)
    fit = fit_zeno(tr.times, loss=excitation_loss(tr), fit_horizon=horizon)
    return _rel(fit.tau, zeno_exact(model, gamma, cutoff))


def check_zeno() -> list[Check]:
    out = []
    for model in CouplingModel:
        dev = zeno_curvature(model)
        out.append(Check(f"Zeno curvature vs band sum {model.value}", dev, 0.02, dev < 0.02))
    for model in CouplingModel:
        p = PhysicalParams(1e-4)
        tr = solve_volterra(p, ChainGeometry.uniform(1, 0.0), model, np.array([1.0 + 0j]),
                            TimeGrid.until(0.2), photons=False)
        fit = fit_zeno(tr.times, loss=excitation_loss(tr))
        dev = _rel(fit.tau, zeno_closed_form(model, 1e-4, 1e4))
        known = model is CouplingModel.LINEAR
        note = ("the ln(cutoff) law is 5.9% off the exact band sum and needs t << 1/cutoff; "
                "see README") if known else ""
        out.append(Check(f"Zeno fit vs closed form {model.value}", dev, 0.05, dev < 0.05, note,
                         known_deviation=known))
    return out


def run_checks(level: str = "quick", report=print) -> list[Check]:
    if level not in ("quick", "full"):
        raise ValueError("level must be 'quick' or 'full'")
    steps = [lambda: [check_kernels()], lambda: [check_oracle(1, "constant")]]
    if level == "full":
        steps += [lambda: [check_oracle(1, "linear")], lambda: [check_oracle(2, "constant")],
                  lambda: [check_oracle(2, "linear")], check_convergence,
                  lambda: [check_reduction()], check_zeno]
    out = []
    for step in steps:
        try:
            checks = step()
        except DynamicsError as exc:
            checks = [Check("numerics", math.nan, math.nan, False, str(exc))]
        for c in checks:
            report(c.line())
        out.extend(checks)
    return out


def failed(checks) -> bool:
    return any(not c.passed and not c.known_deviation for c in checks)
