"""Initial states and observables: P_e, Delta P_e, Gamma_inst and Zeno times.

Rates are reported in units of Gamma0 and population changes in units of
Gamma0/omega0, i.e. both are divided by ``gamma_ratio``.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import savgol_filter

from .dynamics import ChainGeometry, Trajectory
from .kernels import CouplingModel

NORM_TOL = 1e-12
ZENO_RESIDUAL_WARN = 0.05


class StateKind(str, enum.Enum):
    SINGLE_ATOM = "single_atom"
    TIMED_DICKE = "timed_dicke"
    SUBRADIANT = "subradiant"
    CUSTOM = "custom"


@dataclass(frozen=True)
class InitialState:
    """Normalised single-excitation amplitudes plus how they were made.

    ``pre_norm`` is the norm of the literal construction before the final
    renormalisation (1 for every state except the subradiant one).
    """

    amplitudes: np.ndarray
    kind: StateKind = StateKind.CUSTOM
    params: dict = field(default_factory=dict)
    pre_norm: float = 1.0

    def __post_init__(self):
        a = np.atleast_1d(np.asarray(self.amplitudes, dtype=complex))
        if a.ndim != 1 or a.size == 0:
            raise ValueError("amplitudes must be a non-empty vector")
        if abs(np.vdot(a, a).real - 1.0) > NORM_TOL:
            raise ValueError("initial state must have unit norm")
        object.__setattr__(self, "amplitudes", a)
        object.__setattr__(self, "kind", StateKind(self.kind))

    @property
    def n_atoms(self) -> int:
        return self.amplitudes.size


def custom_state(amplitudes, normalize: bool = False) -> InitialState:
    a = np.asarray(amplitudes, dtype=complex)
    norm = float(np.sqrt(np.vdot(a, a).real))
    if norm == 0:
        raise ValueError("zero state")
    if normalize:
        a = a / norm
    return InitialState(a, StateKind.CUSTOM, {}, norm)


def single_atom(n_atoms: int, index: int = 1) -> InitialState:
    """Excitation on atom ``index`` (1-based)."""
    if not 1 <= index <= n_atoms:
        raise ValueError(f"atom_index must lie in 1..{n_atoms}")
    a = np.zeros(n_atoms, dtype=complex)
    a[index - 1] = 1.0
    return InitialState(a, StateKind.SINGLE_ATOM, {"atom_index": index})


def timed_dicke(geometry: ChainGeometry, k: float = 1.0) -> InitialState:
    """e^{i k x_j} / sqrt(N); k = 1 is the superradiant state."""
    n = geometry.n_atoms
    a = np.exp(1j * k * geometry.positions) / math.sqrt(n)
    return InitialState(a, StateKind.TIMED_DICKE, {"k_over_k0": float(k)})


def subradiant_state(geometry: ChainGeometry) -> InitialState:
    """(|Psi_k> - |Psi_-k>)/sqrt(2) with k d = pi N/(N+1), renormalised.

    The sine pattern is taken on site labels, sin(k d j) for j = 1..N, i.e.
    the standing wave has its nodes one spacing outside either end of the
    chain.  With that origin the pattern is the dark open-chain mode
    (nearly an eigenvector of the Markovian coupling matrix), is symmetric
    or antisymmetric under chain inversion, and has norm^2 (N+1)/N before
    renormalisation.  Putting the node on the first atom instead would
    zero its amplitude and lose all three properties.
    """
    n = geometry.n_atoms
    if n < 2:
        raise ValueError("subradiant state needs N >= 2")
    d = geometry.spacing
    if d is None:
        raise ValueError("subradiant state needs a uniform chain")
    kd = math.pi * n / (n + 1)
    j = np.arange(1, n + 1)
    a = (np.exp(1j * kd * j) - np.exp(-1j * kd * j)) / math.sqrt(2 * n)
    norm = float(np.sqrt(np.vdot(a, a).real))
    return InitialState(a / norm, StateKind.SUBRADIANT, {"kd": kd, "k_over_k0": kd / d}, norm)


# ---------------------------------------------------------------------------
# observables
# ---------------------------------------------------------------------------

def gamma_inst(pe, dt: float, window: int = 1, polyorder: int = 2) -> np.ndarray:
    """-(d/dt) ln P_e on a uniform grid, in units of omega0.

    window = 1 is a second-order central difference (one-sided at the ends);
    an odd window > 1 uses a Savitzky-Golay derivative of ln P_e.  Works along
    the first axis.
    """
    pe = np.asarray(pe, dtype=float)
    if window < 1 or window % 2 == 0:
        raise ValueError("smoothing window must be odd and >= 1")
    if np.any(~(pe > 0)):
        raise ValueError("P_e must be strictly positive to take its logarithm")
    lp = np.log(pe)
    if pe.shape[0] < 3:
        raise ValueError("need at least 3 samples")
    if window == 1:
        return -np.gradient(lp, dt, axis=0, edge_order=2)
    return -savgol_filter(lp, window, min(polyorder, window - 1), deriv=1, delta=dt, axis=0,
                          mode="interp")


@dataclass
class ObservableSeries:
    times: np.ndarray
    pe: np.ndarray               # (n, N)
    pe_total: np.ndarray
    delta_pe: np.ndarray         # (n, N), units Gamma0/omega0
    delta_pe_total: np.ndarray
    gamma_inst: np.ndarray       # (n, N), units Gamma0; nan for atoms with a zero P_e
    gamma_inst_total: np.ndarray
    gamma_ratio: float
    tau_zeno: float | None = None

    @property
    def absorption(self) -> np.ndarray:
        """True where the total instantaneous rate is negative (net reabsorption)."""
        return self.gamma_inst_total < 0

    @property
    def absorption_per_atom(self) -> np.ndarray:
        return self.gamma_inst < 0


def population(traj: Trajectory, gamma_ratio: float, window: int = 1) -> ObservableSeries:
    t = traj.times
    pe = np.abs(traj.amplitudes) ** 2
    total = pe.sum(axis=1)
    dt = float(t[1] - t[0]) if t.size > 1 else 1.0
    g_atoms = np.full_like(pe, np.nan)
    g_total = np.full_like(total, np.nan)
    if t.size >= 3:
        ok = np.all(pe > 0, axis=0)
        if np.any(ok):
            g_atoms[:, ok] = gamma_inst(pe[:, ok], dt, window) / gamma_ratio
        if np.all(total > 0):
            g_total = gamma_inst(total, dt, window) / gamma_ratio
    return ObservableSeries(
        times=t, pe=pe, pe_total=total,
        delta_pe=(pe - pe[0]) / gamma_ratio, delta_pe_total=(total - total[0]) / gamma_ratio,
        gamma_inst=g_atoms, gamma_inst_total=g_total, gamma_ratio=gamma_ratio,
    )


# ---------------------------------------------------------------------------
# Zeno time
# ---------------------------------------------------------------------------

class ZenoFitWarning(UserWarning):
    pass


def zeno_closed_form(model, gamma_ratio: float, cutoff: float = 1e4) -> float:
    """tau_Z with tau_Z^-2 = 2 gamma/pi (constant) or 2 gamma ln(cutoff)/pi (linear)."""
    model = CouplingModel.parse(model)
    if not gamma_ratio > 0:
        raise ValueError("gamma_ratio must be > 0")
    if model is CouplingModel.CONSTANT:
        return math.sqrt(math.pi / (2 * gamma_ratio))
    if not cutoff > 1:
        raise ValueError("cutoff must exceed 1 for the linear model")
    return math.sqrt(math.pi / (2 * gamma_ratio * math.log(cutoff)))


def zeno_exact(model, gamma_ratio: float, cutoff: float = 1e4) -> float:
    """tau_Z from the full band sum, tau_Z^-2 = (2 gamma/pi) int_0^cutoff w(x) dx.

    This is the true t -> 0 curvature of P_e for the truncated band.  For the
    constant model it differs from :func:`zeno_closed_form` by a factor
    sqrt(1 + 1/cutoff); for the linear one ln(cutoff) becomes
    ln(1 + cutoff) - cutoff/(1 + cutoff).
    """
    model = CouplingModel.parse(model)
    if not gamma_ratio > 0:
        raise ValueError("gamma_ratio must be > 0")
    if not cutoff > 1:
        raise ValueError("cutoff must exceed 1")
    return 1.0 / math.sqrt(2 * gamma_ratio / math.pi * model.weight_integral(cutoff))


@dataclass(frozen=True)
class ZenoFit:
    tau: float
    residual: float      # rms misfit relative to the largest loss on the window
    n_points: int


def fit_zeno(times, pe=None, *, loss=None, fit_horizon: float = 0.2) -> ZenoFit:
    """Least-squares fit of P_e = 1 - (t/tau_Z)^2 on [0, fit_horizon].

    Pass either ``pe`` or, for better conditioning at tiny losses, ``loss`` =
    1 - P_e computed directly.  Warns with :class:`ZenoFitWarning` when the
    quadratic law fits poorly.
    """
    t = np.asarray(times, dtype=float)
    if loss is None:
        if pe is None:
            raise ValueError("give pe or loss")
        loss = 1.0 - np.asarray(pe, dtype=float)
    loss = np.asarray(loss, dtype=float)
    sel = (t >= 0) & (t <= fit_horizon * (1 + 1e-12))
    t, y = t[sel], loss[sel]
    if np.count_nonzero(t > 0) < 2:
        raise ValueError("fit window holds fewer than two nonzero times")
    t2 = t * t
    c = float(np.dot(t2, y) / np.dot(t2, t2))
    if not c > 0:
        raise ValueError("no decay on the fit window")
    scale = float(np.max(np.abs(y)))
    residual = float(np.sqrt(np.mean((y - c * t2) ** 2)) / scale)
    if residual > ZENO_RESIDUAL_WARN:
        warnings.warn(f"quadratic Zeno law fits poorly (relative residual {residual:.3g}); "
                      "shorten the fit horizon", ZenoFitWarning, stacklevel=2)
    return ZenoFit(1.0 / math.sqrt(c), residual, int(t.size))


def excitation_loss(traj: Trajectory) -> np.ndarray:
    """1 - sum_i |alpha_i|^2 evaluated without cancellation for tiny losses.

    Uses 1 - |a|^2 = -2 Re(conj(a0) delta) - |delta|^2 with delta = a - a0, which
    is exact for a normalised a0.
    """
    a = traj.amplitudes
    d = a - a[0]
    return -(2 * np.real(np.conj(a[0]) * d) + np.abs(d) ** 2).sum(axis=1)
