"""Memory kernels of the single-excitation waveguide dynamics.

Natural units throughout: omega0 = v_g = k0 = 1.  ``r`` is the dimensionless
pair distance k0|x_i - x_j|, ``phi`` the dimensionless lag omega0 (t - tau),
``cutoff`` the dimensionless band edge Lambda/k0.

Two kernels are provided for each spectral density:

* ``kernel_A`` -- the time-integrated amplitude kernel

      A(phi) = int_0^cutoff dx w(x) cos(x r) (1 - e^{i(1-x)phi}) / (x - 1),

  with w(x) = 1/(1+x)^2 (constant) or x/(1+x)^2 (linear).  The amplitudes
  obey alpha_i(t) - alpha_i(0) = i (2 gamma/pi) sum_j int_0^t A_ij(t-tau) alpha_j(tau) dtau.

* ``kernel_B`` -- the photon-population kernel

      B(phi) = (gamma/pi) int_0^cutoff dx w(x) 2 cos(x r) e^{i(x-1)phi}.

Both are evaluated in closed form through ci/si/csi differences.  At the
special points r = 0 and r = phi the csi arguments vanish; every csi/ci
difference is then replaced by its analytic limit ln|b/a|, so no divergent
terms are ever assembled.
"""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .specfun import QuadResult, adaptive_quad, csi

SPECIAL_BAND = 1e-6


class KernelError(ValueError):
    """Invalid kernel arguments; carries the offending (r, phi) when known."""

    def __init__(self, message, r=None, phi=None):
        if r is not None:
            message = f"{message} (r={r!r}, phi={phi!r})"
        super().__init__(message)
        self.r = r
        self.phi = phi


class CouplingModel(str, enum.Enum):
    """Spectral density of the waveguide coupling.

    CONSTANT: g_k^2 = Gamma0 v_g / 2.  LINEAR: g_k^2 = Gamma0 v_g |k| / (2 k0).
    In both cases the JC-gauge coupling is g_k^JC = 2 g_k omega0 / (omega_k + omega0).
    """

    CONSTANT = "constant"
    LINEAR = "linear"

    @classmethod
    def parse(cls, value) -> "CouplingModel":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"model must be 'constant' or 'linear', got {value!r}") from None

    def coupling_sq(self, k, gamma_ratio: float = 1.0):
        k = np.abs(np.asarray(k, dtype=float))
        if self is CouplingModel.CONSTANT:
            return np.full_like(k, gamma_ratio / 2)
        return gamma_ratio * k / 2

    def jc_coupling_sq(self, k, gamma_ratio: float = 1.0):
        k = np.abs(np.asarray(k, dtype=float))
        return 4.0 * self.coupling_sq(k, gamma_ratio) / (1.0 + k) ** 2

    def weight(self, x):
        """w(x) such that |g^JC|^2 = 2 gamma w(|k|)."""
        x = np.asarray(x, dtype=float)
        if self is CouplingModel.CONSTANT:
            return 1.0 / (1.0 + x) ** 2
        return x / (1.0 + x) ** 2

    def weight_integral(self, cutoff: float) -> float:
        """int_0^cutoff w(x) dx."""
        if self is CouplingModel.CONSTANT:
            return cutoff / (1.0 + cutoff)
        return float(np.log1p(cutoff) - cutoff / (1.0 + cutoff))


def _check(r, phi, cutoff, allow_negative_phi=False):
    r = np.asarray(r, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if not np.isfinite(cutoff) or cutoff <= 1:
        raise KernelError(f"cutoff must be finite and > 1, got {cutoff!r}")
    if not (np.all(np.isfinite(r)) and np.all(np.isfinite(phi))):
        raise KernelError("kernel arguments must be finite")
    if np.any(r < 0):
        raise KernelError("pair distance must be nonnegative", float(np.min(r)), None)
    if not allow_negative_phi and np.any(phi < 0):
        raise KernelError("lag must be nonnegative", None, float(np.min(phi)))
    return r, phi


def _dcsi(q, a: float, b: float):
    """csi(b q) - csi(a q), with the q -> 0 limit ln|b/a|.

    Real part is ci(|bq|) - ci(|aq|), imaginary part Si(bq) - Si(aq).
    """
    q = np.asarray(q, dtype=float)
    zero = q == 0
    qq = np.where(zero, 1.0, q)
    out = csi(b * qq) - csi(a * qq)
    return np.where(zero, np.log(abs(b / a)), out)


def special_point(r, phi, band: float = SPECIAL_BAND):
    """True where the closed forms use a limit branch (r = 0 or |r - phi| < band)."""
    r = np.asarray(r, dtype=float)
    phi = np.asarray(phi, dtype=float)
    return (r == 0) | (np.abs(r - phi) < band)


def _I1(r, phi, cutoff):
    rm, rp = r - phi, r + phi
    a, b = -1.0, cutoff - 1.0
    d = _dcsi(r, a, b)
    return (np.cos(r) * d.real - np.sin(r) * d.imag
            - 0.5 * np.exp(1j * r) * _dcsi(rm, a, b)
            - 0.5 * np.exp(-1j * r) * np.conj(_dcsi(rp, a, b)))


def _I2(r, phi, cutoff):
    rm, rp = r - phi, r + phi
    a, b = 1.0, cutoff + 1.0
    d = _dcsi(r, a, b)
    return (np.cos(r) * d.real + np.sin(r) * d.imag
            - 0.5 * np.exp(1j * (phi - rm)) * _dcsi(rm, a, b)
            - 0.5 * np.exp(1j * (phi + rp)) * np.conj(_dcsi(rp, a, b)))


def _I3(r, phi, cutoff):
    rm, rp = r - phi, r + phi
    a, b = 1.0, cutoff + 1.0
    d = _dcsi(r, a, b)
    # boundary term at x = cutoff carries e^{i(1-cutoff)phi}
    edge = (np.cos(cutoff * r) / (cutoff + 1.0) * np.expm1(1j * (1.0 - cutoff) * phi)
            - np.expm1(1j * phi))
    bracket = (r * (np.cos(r) * d.imag - np.sin(r) * d.real)
               + 0.5j * rm * np.exp(1j * (2 * phi - r)) * _dcsi(rm, a, b)
               - 0.5j * rp * np.exp(1j * (2 * phi + r)) * np.conj(_dcsi(rp, a, b)))
    return edge - bracket


def kernel_A(model, r, phi, cutoff: float = 1e4, *, return_flags: bool = False):
    """Closed-form amplitude kernel A(phi) for pair distance ``r``.

    Broadcasts over ``r`` and ``phi``.  With ``return_flags`` also returns the
    boolean mask of points evaluated through a limit branch.
    """
    model = CouplingModel.parse(model)
    r, phi = _check(r, phi, cutoff)
    r, phi = np.broadcast_arrays(r, phi)
    sign = -2.0 if model is CouplingModel.CONSTANT else 2.0
    with np.errstate(invalid="ignore"):
        val = 0.25 * (_I1(r, phi, cutoff) - _I2(r, phi, cutoff) + sign * _I3(r, phi, cutoff))
    val = np.where(phi == 0, 0.0, val)
    val = val[()]
    if return_flags:
        return val, special_point(r, phi)[()]
    return val


def _B_const(r, phi, cutoff):
    a, b = 1.0, cutoff + 1.0
    edge = 2.0 - 2.0 * np.cos(cutoff * r) / (1.0 + cutoff) * np.exp(1j * cutoff * phi)
    tail = sum(1j * q * np.exp(-1j * q) * _dcsi(q, a, b) for q in (phi + r, phi - r))
    return np.exp(-1j * phi) / np.pi * (edge + tail)


def kernel_B(model, r, phi, cutoff: float = 1e4, *, gamma_ratio: float = 1.0,
             return_flags: bool = False):
    """Closed-form photon-population kernel B(phi), in units of omega0.

    ``gamma_ratio`` is Gamma0/omega0; the kernel is linear in it.  Negative
    lags use the Hermitian relation B(-phi) = conj(B(phi)).
    """
    model = CouplingModel.parse(model)
    r, phi = _check(r, phi, cutoff, allow_negative_phi=True)
    r, phi = np.broadcast_arrays(r, phi)
    neg = phi < 0
    p = np.abs(phi)
    val = _B_const(r, p, cutoff)
    if model is CouplingModel.LINEAR:
        a, b = 1.0, cutoff + 1.0
        s = sum(np.exp(-1j * q) * _dcsi(q, a, b) for q in (p + r, p - r))
        val = np.exp(-1j * p) / np.pi * s - val
    val = gamma_ratio * np.where(neg, np.conj(val), val)
    val = val[()]
    if return_flags:
        return val, special_point(r, p)[()]
    return val


# ---------------------------------------------------------------------------
# quadrature oracles
# ---------------------------------------------------------------------------

def _panels(r, phi, cutoff):
    # roughly one panel per half oscillation of the integrand
    return int(max(1, np.ceil(cutoff * (r + abs(phi) + 1.0) / np.pi)))


def kernel_A_quad(model, r: float, phi: float, cutoff: float = 1e4, tol: float = 1e-13,
                  rtol: float = 1e-11):
    """A(phi) by adaptive quadrature of its defining x-integral (split at x = 1)."""
    model = CouplingModel.parse(model)
    _check(r, phi, cutoff)

    def f(x):
        with np.errstate(invalid="ignore", divide="ignore"):
            v = model.weight(x) * np.cos(x * r) * (-np.expm1(1j * (1.0 - x) * phi)) / (x - 1.0)
        # removable point: the integrand tends to i phi w(1) cos(r)
        return np.where(x == 1.0, 1j * phi * model.weight(1.0) * np.cos(r), v)

    return adaptive_quad(f, 0.0, cutoff, tol, rtol=rtol, points=[1.0],
                         initial_panels=_panels(r, phi, cutoff))


def kernel_B_quad(model, r: float, phi: float, cutoff: float = 1e4, tol: float = 1e-13,
                  rtol: float = 1e-11,
                  gamma_ratio: float = 1.0):
    """B(phi) by adaptive quadrature of its defining x-integral."""
    model = CouplingModel.parse(model)
    _check(r, phi, cutoff, allow_negative_phi=True)

    def f(x):
        return gamma_ratio / np.pi * model.weight(x) * 2.0 * np.cos(x * r) * np.exp(1j * (x - 1.0) * phi)

    return adaptive_quad(f, 0.0, cutoff, tol, rtol=rtol, initial_panels=_panels(r, phi, cutoff))


# lags on each side of phi = 0 and phi = r that get exact cell averages of B
LOCAL_LAGS = 16


def kernel_B_hat(model, r: float, k: int, dt: float, cutoff: float = 1e4, tol: float = 1e-13,
                 rtol: float = 1e-10) -> QuadResult:
    """Hat-weighted average (1/dt) int B(s) (1 - |s - k dt|/dt) ds over [(k-1)dt, (k+1)dt].

    This is the weight the trapezoidal double sum should carry on lag k.
    For the linear model B has a logarithmic peak of width 1/cutoff at
    phi = 0 and at the light cone phi = r; point samples there are off by
    O(1) in units of gamma, so near those lags the table stores this average
    instead.  Away from them it equals B(k dt) to O(dt^2).
    """
    c = k * dt
    pts = [p for p in (0.0, r, -r, c) if c - dt < p < c + dt]

    def f(s):
        return (1.0 - np.abs(s - c) / dt) * kernel_B(model, r, s, cutoff)

    res = adaptive_quad(f, c - dt, c + dt, tol, rtol=rtol, points=pts)
    return QuadResult(res.value / dt, res.abs_error_estimate / dt, res.evaluations)


def local_lags(r: float, dt: float, n_steps: int, width: int = LOCAL_LAGS) -> np.ndarray:
    """Lags within ``width`` steps of phi = 0 or phi = r, clipped to [0, n_steps]."""
    kr = int(round(r / dt))
    ks = np.union1d(np.arange(0, width + 1), np.arange(kr - width, kr + width + 1))
    return ks[(ks >= 0) & (ks <= n_steps)]


# ---------------------------------------------------------------------------
# tables
# ---------------------------------------------------------------------------

def distance_classes(positions, tol: float = 1e-9):
    """Distinct pair distances of a chain and the class index of every pair.

    Distances within ``tol`` (relative to the chain length) are merged, so a
    uniform chain of N atoms gives exactly N classes including 0.
    """
    x = np.asarray(positions, dtype=float)
    dist = np.abs(x[:, None] - x[None, :])
    flat = np.sort(dist.ravel())
    scale = max(1.0, float(flat[-1]))
    reps = [flat[0]]
    for v in flat[1:]:
        if v - reps[-1] > tol * scale:
            reps.append(v)
    reps = np.array(reps)
    reps[0] = 0.0
    idx = np.abs(dist[..., None] - reps[None, None, :]).argmin(axis=-1)
    return reps, idx


def cache_key(model, positions, dt: float, n_steps: int, cutoff: float) -> str:
    payload = json.dumps({
        "model": CouplingModel.parse(model).value,
        "positions": [float(v).hex() for v in np.asarray(positions, dtype=float)],
        "dt": float(dt).hex(),
        "n_steps": int(n_steps),
        "cutoff": float(cutoff).hex(),
        "version": __version__,
    }, sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class KernelTable:
    """A and B sampled on the uniform lag grid phi_n = n dt, one row per distance class.

    ``values_B`` is stored for gamma_ratio = 1; scale it by Gamma0/omega0.
    ``weights_B`` equals ``values_B`` except on the lags returned by
    :func:`local_lags`, where it holds the hat averages of :func:`kernel_B_hat`.
    """

    model: CouplingModel
    cutoff: float
    dt: float
    distances: np.ndarray
    values_A: np.ndarray
    values_B: np.ndarray
    special: np.ndarray
    evaluations_A: int
    evaluations_B: int
    weights_B: np.ndarray | None = None
    evaluations_local: int = 0
    key: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def n_max(self) -> int:
        return self.values_A.shape[1] - 1

    @property
    def lag_grid(self) -> np.ndarray:
        return self.dt * np.arange(self.n_max + 1)

    def class_index(self, positions) -> np.ndarray:
        """Class index of every atom pair of ``positions`` in this table."""
        x = np.asarray(positions, dtype=float)
        dist = np.abs(x[:, None] - x[None, :])
        idx = np.abs(dist[..., None] - self.distances[None, None, :]).argmin(axis=-1)
        err = np.abs(self.distances[idx] - dist)
        if np.any(err > 1e-9 * max(1.0, float(dist.max()))):
            raise KernelError("geometry has a pair distance missing from the kernel table")
        return idx

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        meta = dict(self.meta, model=self.model.value, cutoff=self.cutoff, dt=self.dt,
                    key=self.key, evaluations_A=self.evaluations_A,
                    evaluations_B=self.evaluations_B, evaluations_local=self.evaluations_local)
        with open(path, "wb") as fh:
            np.savez(fh, distances=self.distances, values_A=self.values_A,
                     values_B=self.values_B, weights_B=self.weights_B, special=self.special,
                     meta=np.array(json.dumps(meta, sort_keys=True)))
        return path

    @classmethod
    def load(cls, path, expect_key: str | None = None) -> "KernelTable":
        with np.load(path) as data:
            meta = json.loads(str(data["meta"]))
            if expect_key is not None and meta.get("key") != expect_key:
                raise KernelError(f"kernel cache {path} has key {meta.get('key')}, expected {expect_key}")
            return cls(
                model=CouplingModel.parse(meta["model"]), cutoff=meta["cutoff"], dt=meta["dt"],
                distances=data["distances"], values_A=data["values_A"],
                values_B=data["values_B"], weights_B=data["weights_B"], special=data["special"],
                evaluations_A=meta["evaluations_A"], evaluations_B=meta["evaluations_B"],
                evaluations_local=meta["evaluations_local"],
                key=meta["key"],
            )


def build_kernel_table(model, positions, dt: float, n_steps: int, cutoff: float = 1e4,
                       cache_dir=None) -> KernelTable:
    """Evaluate A and B once per (distance class, lag) for lags 0..n_steps.

    A at lag 0 is zero by construction and not evaluated.  ``weights_B`` gets
    its local hat averages by quadrature (``evaluations_local`` integrand
    calls, independent of n_steps).  With ``cache_dir``
    the table is loaded from / stored to ``<cache_dir>/<key>.npz``.
    """
    model = CouplingModel.parse(model)
    if dt <= 0 or n_steps < 0:
        raise KernelError("need dt > 0 and n_steps >= 0")
    key = cache_key(model, positions, dt, n_steps, cutoff)
    if cache_dir is not None:
        cached = Path(cache_dir) / f"{key}.npz"
        if cached.exists():
            return KernelTable.load(cached, expect_key=key)
    dist, _ = distance_classes(positions)
    phi = dt * np.arange(n_steps + 1)
    values_A = np.zeros((dist.size, n_steps + 1), dtype=complex)
    values_B = np.empty((dist.size, n_steps + 1), dtype=complex)
    special = np.zeros((dist.size, n_steps + 1), dtype=bool)
    for c, r in enumerate(dist):
        try:
            values_A[c, 1:], special[c, 1:] = kernel_A(model, r, phi[1:], cutoff, return_flags=True)
            values_B[c], _ = kernel_B(model, r, phi, cutoff, return_flags=True)
        except KernelError as exc:
            raise KernelError(f"kernel evaluation failed: {exc}", r, None) from exc
    weights_B = values_B.copy()
    local_evals = 0
    for c, r in enumerate(dist):
        for k in local_lags(r, dt, n_steps):
            res = kernel_B_hat(model, r, int(k), dt, cutoff)
            weights_B[c, k] = res.value
            local_evals += res.evaluations
    special[:, 0] |= dist == 0
    if not (np.all(np.isfinite(values_A)) and np.all(np.isfinite(values_B))):
        bad = np.argwhere(~np.isfinite(values_A) | ~np.isfinite(values_B))[0]
        raise KernelError("non-finite kernel value", float(dist[bad[0]]), float(phi[bad[1]]))
    table = KernelTable(
        model=model, cutoff=float(cutoff), dt=float(dt), distances=dist,
        values_A=values_A, values_B=values_B, special=special,
        evaluations_A=dist.size * n_steps, evaluations_B=dist.size * (n_steps + 1),
        weights_B=weights_B, evaluations_local=local_evals, key=key,
    )
    if cache_dir is not None:
        table.save(Path(cache_dir) / f"{key}.npz")
    return table
