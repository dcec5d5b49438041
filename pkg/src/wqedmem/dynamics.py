"""Single-excitation dynamics of an atom chain coupled to a 1D waveguide.

Four propagators share one output type, :class:`Trajectory`:

``solve_volterra``
    full memory kernel (field memory + retardation), product-trapezoidal
    marching of the integral equation.
``solve_dde``
    retardation only: each atom decays at Gamma0 and receives the delayed
    amplitude of every other atom, phase e^{i k0 r_ij}.
``solve_markov``
    zero-delay limit of the above.
``solve_mode_oracle``
    brute-force JC-gauge Schroedinger equation with a discretised field,
    used to check the others at small cutoff.

Natural units omega0 = v_g = k0 = 1 throughout.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .kernels import CouplingModel, KernelTable, build_kernel_table

BLOWUP_LIMIT = 1.0 + 1e-3
NEGATIVE_NB_LIMIT = -1e-6

# Sign in front of the memory integral, i (2 gamma/pi) * MEMORY_SIGN * int A alpha.
# +1 is the convention that decays; it is recorded in every run manifest.
MEMORY_SIGN = 1


class DynamicsError(RuntimeError):
    pass


class BlowUpError(DynamicsError):
    """An amplitude exceeded the blow-up guard; ``trajectory`` holds the valid prefix."""

    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory


class NegativePhotonNumber(DynamicsError):
    pass


class RevivalError(DynamicsError):
    pass


@dataclass(frozen=True)
class ChainGeometry:
    """Atom coordinates k0 x_i, strictly increasing."""

    positions: np.ndarray

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.positions, dtype=float))
        if x.ndim != 1 or x.size < 1:
            raise ValueError("need at least one atom")
        if not np.all(np.isfinite(x)):
            raise ValueError("positions must be finite")
        if np.any(np.diff(x) <= 0):
            raise ValueError("positions must be strictly increasing")
        object.__setattr__(self, "positions", x)

    @classmethod
    def uniform(cls, n_atoms: int, spacing: float) -> "ChainGeometry":
        if n_atoms < 1:
            raise ValueError("n_atoms must be >= 1")
        if n_atoms > 1 and spacing <= 0:
            raise ValueError("spacing must be > 0")
        return cls(spacing * np.arange(n_atoms))

    @property
    def n_atoms(self) -> int:
        return self.positions.size

    @property
    def distances(self) -> np.ndarray:
        x = self.positions
        return np.abs(x[:, None] - x[None, :])

    @property
    def spacing(self) -> float | None:
        """Common spacing for uniform chains, else None."""
        if self.n_atoms < 2:
            return None
        d = np.diff(self.positions)
        if np.allclose(d, d[0], rtol=1e-12, atol=0):
            return float(d[0])
        return None

    def permuted(self, order) -> "ChainGeometry":
        # only used for relabelling checks; positions stay sorted by value
        return ChainGeometry(np.sort(self.positions[np.asarray(order)]))


@dataclass(frozen=True)
class PhysicalParams:
    gamma_ratio: float
    cutoff: float = 1e4

    def __post_init__(self):
        if not (math.isfinite(self.gamma_ratio) and self.gamma_ratio > 0):
            raise ValueError("gamma_ratio must be > 0")
        if not (math.isfinite(self.cutoff) and self.cutoff > 1):
            raise ValueError("cutoff must be > 1")
        if self.gamma_ratio > 0.1:
            warnings.warn(f"gamma_ratio={self.gamma_ratio} is outside the weak-coupling regime",
                          stacklevel=2)


@dataclass(frozen=True)
class TimeGrid:
    dt: float
    n_steps: int

    def __post_init__(self):
        if not (math.isfinite(self.dt) and self.dt > 0):
            raise ValueError("dt must be > 0")
        if self.n_steps < 0:
            raise ValueError("n_steps must be >= 0")

    @classmethod
    def until(cls, t_max: float, dt: float = 0.005) -> "TimeGrid":
        return cls(dt, int(round(t_max / dt)))

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps + 1)

    @property
    def t_max(self) -> float:
        return self.dt * self.n_steps


@dataclass
class Trajectory:
    times: np.ndarray
    amplitudes: np.ndarray          # (n_times, N) complex
    solver: str
    model: CouplingModel | None = None
    photon_number: np.ndarray | None = None
    scenario_hash: str = ""
    status: str = "completed"
    info: dict = field(default_factory=dict)

    @property
    def n_atoms(self) -> int:
        return self.amplitudes.shape[1]

    @property
    def norm_residual(self) -> np.ndarray | None:
        if self.photon_number is None:
            return None
        pe = np.sum(np.abs(self.amplitudes) ** 2, axis=1)
        return np.abs(pe + self.photon_number - 1.0)

    @property
    def last_valid(self) -> int:
        return self.times.size - 1

    def truncated(self, n: int) -> "Trajectory":
        nb = None if self.photon_number is None else self.photon_number[: n + 1]
        return Trajectory(self.times[: n + 1], self.amplitudes[: n + 1], self.solver, self.model,
                          nb, self.scenario_hash, self.status, dict(self.info))


def _check_init(init, n_atoms):
    a = np.asarray(init, dtype=complex).ravel()
    if a.size != n_atoms:
        raise ValueError(f"initial state has {a.size} amplitudes for {n_atoms} atoms")
    if abs(np.vdot(a, a).real - 1.0) > 1e-12:
        raise ValueError("initial state must be normalised to 1 within 1e-12")
    return a


def _guard(alpha, n, solver, times, history, model=None):
    if np.any(np.abs(alpha) > BLOWUP_LIMIT) or not np.all(np.isfinite(alpha)):
        traj = Trajectory(times[:n], history[:n].copy(), solver, model, status="aborted")
        raise BlowUpError(
            f"blow-up guard: |alpha| exceeded {BLOWUP_LIMIT} at step {n} (t={times[n]:.6g}); "
            "check the kernel sign convention or reduce dt", traj)


# ---------------------------------------------------------------------------
# full memory
# ---------------------------------------------------------------------------

def solve_volterra(params: PhysicalParams, geometry: ChainGeometry, model, init,
                   grid: TimeGrid, kernel_table: KernelTable | None = None,
                   photons: bool = True) -> Trajectory:
    """March alpha_i(t) = alpha_i(0) + i (2 gamma/pi) sum_j int_0^t A_ij(t - tau) alpha_j(tau) dtau.

    Trapezoidal product weights on the uniform grid; since A(0) = 0 the
    current step never appears on the right-hand side and the march is
    explicit and strictly causal.  The history sum is grouped by distance
    class so each step costs one (classes x n) @ (n x N) product.
    """
    model = CouplingModel.parse(model)
    a0 = _check_init(init, geometry.n_atoms)
    table = kernel_table
    if table is None:
        table = build_kernel_table(model, geometry.positions, grid.dt, grid.n_steps, params.cutoff)
    _check_table(table, model, params, grid)
    cls = table.class_index(geometry.positions)
    n_steps, n_atoms = grid.n_steps, geometry.n_atoms
    times = grid.times
    L = table.n_max
    arev = np.ascontiguousarray(table.values_A[:, ::-1])
    coef = 1j * MEMORY_SIGN * (2.0 * params.gamma_ratio / np.pi) * grid.dt
    cols = np.arange(n_atoms)[None, :]

    alpha = np.empty((n_steps + 1, n_atoms), dtype=complex)
    weighted = np.empty_like(alpha)       # trapezoid-weighted history
    alpha[0] = a0
    weighted[0] = 0.5 * a0
    for n in range(1, n_steps + 1):
        # per[c, j] = sum_{m<n} A_c((n-m) dt) w_m alpha_j(m)
        per = arev[:, L - n:L] @ weighted[:n]
        mem = per[cls, cols].sum(axis=1)
        a = a0 + coef * mem
        alpha[n] = a
        weighted[n] = a
        _guard(a, n, "volterra", times, alpha, model)

    nb = None
    if photons:
        nb = photon_number(alpha, model, geometry, grid, params.cutoff, params.gamma_ratio, table)
    return Trajectory(times, alpha, "volterra", model, nb,
                      info={"memory_sign": MEMORY_SIGN, "kernel_evaluations_A": table.evaluations_A,
                            "kernel_evaluations_B": table.evaluations_B,
                            "distance_classes": int(table.distances.size)})


def _check_table(table, model, params, grid):
    if table.model is not model:
        raise ValueError("kernel table built for a different coupling model")
    if abs(table.dt - grid.dt) > 1e-15 * grid.dt or table.n_max < grid.n_steps:
        raise ValueError("kernel table does not cover the time grid")
    if table.cutoff != params.cutoff:
        raise ValueError("kernel table built for a different cutoff")


def photon_number(amplitudes, model, geometry: ChainGeometry, grid: TimeGrid, cutoff: float,
                  gamma_ratio: float, kernel_table: KernelTable | None = None) -> np.ndarray:
    """N_b(t_n) = sum_ij int_0^t int_0^t alpha_i*(tau) alpha_j(tau') B_ij(tau' - tau), trapezoidal in both times.

    The conjugate sits on the earlier-time argument of B; with the kernel's
    Hermitian symmetry the double sum is real.  Near lag 0 and the light cone
    the table's hat-averaged weights replace point samples of B (product
    integration in the lag variable).  Updated incrementally, O(n) per step.
    """
    model = CouplingModel.parse(model)
    alpha = np.asarray(amplitudes, dtype=complex)
    n_steps = alpha.shape[0] - 1
    table = kernel_table
    if table is None:
        table = build_kernel_table(model, geometry.positions, grid.dt, n_steps, cutoff)
    cls = table.class_index(geometry.positions)
    L = table.n_max
    wb = table.values_B if table.weights_B is None else table.weights_B
    brev = np.ascontiguousarray(gamma_ratio * wb[:, ::-1])
    b0 = gamma_ratio * wb[cls, 0].real     # lag-0 weight, real symmetric
    rows = np.arange(alpha.shape[1])[:, None]

    u = np.ones(n_steps + 1)
    u[0] = 0.5
    conj_w = np.conj(alpha) * u[:, None]
    diag = np.einsum("ni,ij,nj->n", np.conj(alpha), b0, alpha).real

    h2 = grid.dt ** 2
    nb = np.zeros(n_steps + 1)
    cross_sum = 0.0 + 0.0j      # sum_{m=1}^{n-1} D_m
    diag_sum = 0.25 * diag[0]   # sum_{m<n} u_m^2 E_m
    for n in range(1, n_steps + 1):
        # q[c, i] = sum_{l<n} B_c((n-l) dt) u_l alpha_i*(l)
        q = brev[:, L - n:L] @ conj_w[:n]
        r_j = q[cls, rows].sum(axis=0)
        d_n = np.dot(alpha[n], r_j)
        nb[n] = h2 * (2.0 * (cross_sum + 0.5 * d_n).real + diag_sum + 0.25 * diag[n])
        cross_sum += d_n
        diag_sum += diag[n]
    if np.any(nb < NEGATIVE_NB_LIMIT):
        n = int(np.argmax(nb < NEGATIVE_NB_LIMIT))
        raise NegativePhotonNumber(
            f"photon number {nb[n]:.3e} < {NEGATIVE_NB_LIMIT} at step {n}: kernel or conjugation bug")
    return nb


# ---------------------------------------------------------------------------
# retardation only / Markov
# ---------------------------------------------------------------------------

def solve_dde(params: PhysicalParams, geometry: ChainGeometry, init, grid: TimeGrid,
              delay_scale: float = 1.0) -> Trajectory:
    """Retarded-coupling equations, integrated with an exponential trapezoid rule.

    dalpha_i/dt = -(gamma/2) [alpha_i(t) + sum_{j!=i} e^{i r_ij} alpha_j(t - tau_ij) Theta(t - tau_ij)],
    tau_ij = delay_scale * r_ij.  The local decay is integrated exactly; the
    delayed drive is integrated by the trapezoid rule, split at the instant
    the signal arrives so the Theta step costs no accuracy.  Delayed values
    come from linear interpolation of stored history.  When a delay is
    shorter than dt the needed value lies inside the current step and is
    taken from a predictor pass (Heun).
    """
    a0 = _check_init(init, geometry.n_atoms)
    g = params.gamma_ratio
    h = grid.dt
    n_atoms = geometry.n_atoms
    ii, jj = np.nonzero(~np.eye(n_atoms, dtype=bool))
    r = geometry.distances[ii, jj]
    tau = delay_scale * r
    phase = np.exp(1j * r)
    decay = math.exp(-0.5 * g * h)
    times = grid.times
    alpha = np.empty((grid.n_steps + 1, n_atoms), dtype=complex)
    alpha[0] = a0

    def drive(n, hist):
        """Integral of e^{-g(t_{n+1}-s)/2} alpha_j(s - tau) Theta(s - tau) over the step, per pair."""
        t0, t1 = times[n], times[n] + h
        start = np.clip(tau, t0, t1)            # signal present on [start, t1]
        width = t1 - start
        active = width > 0
        out = np.zeros(r.size, dtype=complex)
        if not np.any(active):
            return out
        s0 = start[active] - tau[active]
        s1 = t1 - tau[active]
        jcol = jj[active]
        v0 = _value(hist, s0, jcol, h, n + 1)
        v1 = _value(hist, s1, jcol, h, n + 1)
        e0 = np.exp(-0.5 * g * (t1 - start[active]))
        out[active] = 0.5 * width[active] * (e0 * v0 + v1)
        return out

    need_predictor = np.any(tau < h)
    for n in range(grid.n_steps):
        if need_predictor:
            # predictor: hold the newest value for times inside the current step
            alpha[n + 1] = alpha[n]
            contrib = drive(n, alpha)
            pred = decay * alpha[n] - 0.5 * g * np.bincount(
                ii, weights=(phase * contrib).real, minlength=n_atoms) \
                - 0.5j * g * np.bincount(ii, weights=(phase * contrib).imag, minlength=n_atoms)
            alpha[n + 1] = pred
        contrib = drive(n, alpha)
        pc = phase * contrib
        total = np.bincount(ii, weights=pc.real, minlength=n_atoms) \
            + 1j * np.bincount(ii, weights=pc.imag, minlength=n_atoms)
        a = decay * alpha[n] - 0.5 * g * total
        alpha[n + 1] = a
        _guard(a, n + 1, "dde", times, alpha)
    return Trajectory(times, alpha, "dde", None, info={"delay_scale": delay_scale})


def _value(hist, s, jcol, h, upto):
    """alpha_j(s) by linear interpolation on rows 0..upto of hist."""
    pos = np.maximum(s, 0.0) / h
    idx = np.minimum(np.floor(pos).astype(int), upto - 1)
    frac = pos - idx
    return (1.0 - frac) * hist[idx, jcol] + frac * hist[idx + 1, jcol]


def markov_matrix(params: PhysicalParams, geometry: ChainGeometry) -> np.ndarray:
    """-(gamma/2) e^{i r_ij}, the generator of the Markovian amplitudes."""
    return -0.5 * params.gamma_ratio * np.exp(1j * geometry.distances)


def solve_markov(params: PhysicalParams, geometry: ChainGeometry, init, grid: TimeGrid) -> Trajectory:
    """dalpha/dt = -(gamma/2) sum_j e^{i r_ij} alpha_j, propagated with the exact one-step exponential."""
    a0 = _check_init(init, geometry.n_atoms)
    step = expm(markov_matrix(params, geometry) * grid.dt)
    alpha = np.empty((grid.n_steps + 1, geometry.n_atoms), dtype=complex)
    alpha[0] = a0
    for n in range(grid.n_steps):
        alpha[n + 1] = step @ alpha[n]
    return Trajectory(grid.times, alpha, "markov", None)


# ---------------------------------------------------------------------------
# mode-discretisation oracle
# ---------------------------------------------------------------------------

REVIVAL_MARGIN = 1.0


def solve_mode_oracle(params: PhysicalParams, geometry: ChainGeometry, model, init,
                      grid: TimeGrid, n_modes: int = 20000, substeps: int | None = None) -> Trajectory:
    """Integrate the JC-gauge single-excitation Schroedinger equation with discrete modes.

    Modes sit at the midpoints of ``n_modes`` equal cells of [-cutoff, cutoff].
    In the frame rotating at omega0,

        d alpha_i/dt = -sum_k G_k e^{i k x_i} b_k,
        d b_k/dt     = -i(|k| - 1) b_k + G_k sum_j e^{-i k x_j} alpha_j,

    with G_k = g_k^JC sqrt(dk / 2 pi), so that sum_k |b_k|^2 is the photon
    number.  Classic RK4 with ``substeps`` per output step (default: enough
    for dt_internal <= 0.1/cutoff).  Meant for small cutoffs only.
    """
    model = CouplingModel.parse(model)
    a0 = _check_init(init, geometry.n_atoms)
    if n_modes < 2 or n_modes % 2:
        raise ValueError("n_modes must be an even number >= 2")
    cutoff = params.cutoff
    dk = 2.0 * cutoff / n_modes
    span = float(geometry.positions[-1] - geometry.positions[0])
    if dk * (grid.t_max + span) > REVIVAL_MARGIN:
        raise RevivalError(
            f"mode spacing {dk:.3g} too coarse: spurious revival within t_max={grid.t_max} "
            f"(need dk*(t_max+span) <= {REVIVAL_MARGIN}); increase n_modes")
    k = -cutoff + dk * (np.arange(n_modes) + 0.5)
    gk = np.sqrt(model.jc_coupling_sq(k, params.gamma_ratio) * dk / (2 * np.pi))
    detuning = np.abs(k) - 1.0
    emit = gk[None, :] * np.exp(1j * np.outer(geometry.positions, k))   # (N, M)
    if substeps is None:
        substeps = max(1, math.ceil(grid.dt / (0.1 / cutoff)))
    h = grid.dt / substeps

    def rhs(a, b):
        return -(emit @ b), -1j * detuning * b + emit.conj().T @ a

    alpha = np.empty((grid.n_steps + 1, geometry.n_atoms), dtype=complex)
    nb = np.empty(grid.n_steps + 1)
    a = a0.copy()
    b = np.zeros(n_modes, dtype=complex)
    alpha[0], nb[0] = a, 0.0
    for n in range(grid.n_steps):
        for _ in range(substeps):
            k1a, k1b = rhs(a, b)
            k2a, k2b = rhs(a + 0.5 * h * k1a, b + 0.5 * h * k1b)
            k3a, k3b = rhs(a + 0.5 * h * k2a, b + 0.5 * h * k2b)
            k4a, k4b = rhs(a + h * k3a, b + h * k3b)
            a = a + h / 6 * (k1a + 2 * k2a + 2 * k3a + k4a)
            b = b + h / 6 * (k1b + 2 * k2b + 2 * k3b + k4b)
        alpha[n + 1] = a
        nb[n + 1] = np.vdot(b, b).real
    return Trajectory(grid.times, alpha, "oracle", model, nb,
                      info={"n_modes": n_modes, "substeps": substeps})
