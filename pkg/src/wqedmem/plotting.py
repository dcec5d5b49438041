"""Quick-look figures for the presets, written with matplotlib's object API.

Each ``plot_<preset>`` takes the run results of that preset (as returned by
:func:`wqedmem.scenario.execute_run`) and writes one file per panel group.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib
from matplotlib.figure import Figure

LABELS = {"volterra-constant": "const-wQED", "volterra-linear": "lin-wQED", "dde": "retard.",
          "markov": "Markov", "oracle-constant": "modes (const)", "oracle-linear": "modes (lin)"}
STYLES = {"volterra-constant": dict(color="tab:red", ls="-"),
          "volterra-linear": dict(color="tab:blue", ls="--"),
          "dde": dict(color="0.45", ls=":"),
          "markov": dict(color="k", ls="-.", lw=0.8)}

RC = {"font.size": 9, "axes.labelsize": 9, "legend.fontsize": 7, "xtick.labelsize": 8,
      "ytick.labelsize": 8, "lines.linewidth": 1.2, "axes.grid": True, "grid.alpha": 0.3,
      "svg.hashsalt": "wqedmem"}   # stable element ids in the SVG output


def _tag(res) -> str:
    s = res.spec
    return s.solver if s.model is None else f"{s.solver}-{s.model.value}"


def _new(nrows=1, ncols=1, width=6.4, height=None, sharex=False):
    fig = Figure(figsize=(width, height or 2.4 * nrows + 0.6), layout="constrained")
    return fig, fig.subplots(nrows, ncols, sharex=sharex, squeeze=False)


def _line(ax, res, y, t=None, window=None):
    t = res.observables.times if t is None else t
    sel = slice(None) if window is None else (t >= window[0]) & (t <= window[1])
    tag = _tag(res)
    ax.plot(t[sel], y[sel], label=LABELS.get(tag, tag), **STYLES.get(tag, {}))


def _save(fig, out_dir, name, fmt) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{name}.{fmt}"
    # fixed metadata keeps the SVG byte-stable between runs
    meta = {"Date": None} if fmt == "svg" else {}
    fig.savefig(path, format=fmt, metadata=meta, dpi=150)
    return path


def _select(results, n_atoms=None, gamma=None):
    out = [r for r in results if r.observables is not None]
    if n_atoms is not None:
        out = [r for r in out if r.spec.scenario.n_atoms == n_atoms]
    if gamma is not None:
        out = [r for r in out if r.spec.gamma_ratio == gamma]
    return out


def _gammas(results):
    return sorted({r.spec.gamma_ratio for r in results}, reverse=True)


def plot_rate_single(results, out_dir, fmt="svg"):
    """Single-atom Gamma_inst/Gamma0 for every coupling, short and long window."""
    paths = []
    for name, tmax in (("fig1b_gamma_inst", 10.0), ("fig1c_gamma_inst", 50.0)):
        fig, ax = _new()
        a = ax[0, 0]
        for k, g in enumerate(_gammas(results)):
            for r in _select(results, gamma=g):
                if r.spec.solver != "volterra":
                    continue
                o = r.observables
                sel = o.times <= tmax
                st = dict(STYLES[_tag(r)], alpha=1.0 - 0.25 * k)
                a.plot(o.times[sel], o.gamma_inst_total[sel], **st,
                       label=f"{LABELS[_tag(r)]}, $\\Gamma_0/\\omega_0$={g:g}")
        a.axhline(1.0, color="k", lw=0.5)
        a.set_xlabel(r"$\omega_0 t$")
        a.set_ylabel(r"$\Gamma_{\rm inst}/\Gamma_0$")
        a.legend(ncol=2)
        paths.append(_save(fig, out_dir, name, fmt))
    return paths


def plot_chain_rates(results, out_dir, atoms, prefix, fmt="svg"):
    """Total and per-atom Gamma_inst of a chain, all predictions overlaid."""
    chain = _select(results)
    paths = []
    fig, ax = _new()
    for r in chain:
        _line(ax[0, 0], r, r.observables.gamma_inst_total)
    ax[0, 0].set_xlabel(r"$\omega_0 t$")
    ax[0, 0].set_ylabel(r"$\Gamma_{\rm inst}/\Gamma_0$ (total)")
    ax[0, 0].legend()
    paths.append(_save(fig, out_dir, f"{prefix}_total_gamma_inst", fmt))

    fig, ax = _new(len(atoms), 1, height=1.5 * len(atoms) + 0.6, sharex=True)
    for k, i in enumerate(atoms):
        for r in chain:
            _line(ax[k, 0], r, r.observables.gamma_inst[:, i - 1])
        ax[k, 0].set_ylabel(f"atom {i}")
    ax[-1, 0].set_xlabel(r"$\omega_0 t$")
    ax[0, 0].legend(ncol=3)
    fig.suptitle(r"$\Gamma_{\rm inst}/\Gamma_0$ per atom")
    paths.append(_save(fig, out_dir, f"{prefix}_atom_gamma_inst", fmt))
    return paths


def plot_delta_pe(results, out_dir, atom, name, window=None, fmt="svg"):
    """Delta P_e of one atom (units Gamma0/omega0), one panel per coupling."""
    gs = _gammas(results)
    fig, ax = _new(1, len(gs), width=3.0 * len(gs), height=2.6)
    for k, g in enumerate(gs):
        for r in _select(results, gamma=g):
            y = r.observables.delta_pe_total if atom is None else r.observables.delta_pe[:, atom - 1]
            _line(ax[0, k], r, y, window=window)
        ax[0, k].set_title(rf"$\Gamma_0/\omega_0$={g:g}")
        ax[0, k].set_xlabel(r"$\omega_0 t$")
    ax[0, 0].set_ylabel(r"$\Delta P_e$ [$\Gamma_0/\omega_0$]")
    ax[0, 0].legend()
    return [_save(fig, out_dir, name, fmt)]


def plot_subradiant(results, out_dir, fmt="svg"):
    paths = []
    fig, ax = _new(2, 1, sharex=True, height=4.4)
    for r in _select(results):
        _line(ax[0, 0], r, r.observables.gamma_inst_total)
        _line(ax[1, 0], r, r.observables.delta_pe_total)
    ax[0, 0].axhline(0.0, color="k", lw=0.5)
    ax[0, 0].set_ylabel(r"$\Gamma_{\rm inst}/\Gamma_0$")
    ax[1, 0].set_ylabel(r"$\Delta P_e$ [$\Gamma_0/\omega_0$]")
    ax[1, 0].set_xlabel(r"$\omega_0 t$")
    ax[0, 0].legend()
    paths.append(_save(fig, out_dir, "fig3_subradiant", fmt))
    return paths


def plot_preset(name: str, results, out_dir, fmt="svg") -> list[Path]:
    """Dispatch on the preset name; returns the files written."""
    with matplotlib.rc_context(RC):
        return _dispatch(name, results, out_dir, fmt)


def _dispatch(name, results, out_dir, fmt):
    if name == "fig1bc":
        return plot_rate_single(results, out_dir, fmt)
    if name == "fig2ab":
        return plot_chain_rates(results, out_dir, (1, 2, 5, 10, 20), "fig2ab", fmt)
    if name == "spfig":
        return plot_chain_rates(results, out_dir, (1, 2, 5, 6, 10), "spfig", fmt)
    if name == "fig2cd":
        return (plot_delta_pe(results, out_dir, 1, "fig2c_atom1_delta_pe", fmt=fmt)
                + plot_delta_pe(results, out_dir, 10, "fig2d_atom10_delta_pe", fmt=fmt))
    if name == "fig2e":
        chain = [r for r in results if r.spec.scenario.n_atoms > 1]
        single = [r for r in results if r.spec.scenario.n_atoms == 1]
        win = (45.0, 50.0)
        return (plot_delta_pe(chain, out_dir, 10, "fig2e_chain_atom10", win, fmt)
                + plot_delta_pe(single, out_dir, 1, "fig2e_single_atom", win, fmt))
    if name == "fig3":
        return plot_subradiant(results, out_dir, fmt)
    raise ValueError(f"no plot recipe for {name!r}")
