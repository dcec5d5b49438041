import json
import math

import numpy as np
import pytest

import wqedmem.dynamics as dyn
from wqedmem.kernels import CouplingModel
from wqedmem.scenario import (UNITS_LINE, ScenarioError, execute_run, from_dict, parse_scenario,
                              plan_runs, preset, preset_name, read_csv, run_and_write)

MINIMAL = '{"model": "constant", "gamma_ratio": 1e-4, "N": 1, "t_max": 50}'


def test_minimal_document_defaults():
    sc = parse_scenario(MINIMAL)
    assert sc.models == (CouplingModel.CONSTANT,)
    assert sc.gamma_ratios == (1e-4,)
    assert sc.n_atoms == 1 and sc.t_max == 50
    assert sc.dt == 0.005 and sc.cutoff == 1e4 and sc.solvers == ("volterra",)
    assert sc.initial.type == "single_atom" and sc.smoothing_window == 1
    assert sc.grid.n_steps == 10000


@pytest.mark.parametrize("patch, field, message", [
    ({"gamma_ratio": -1}, "gamma_ratio", "gamma_ratio must be > 0"),
    ({"colour": 1}, "colour", "unknown key(s): colour"),
    ({"model": "cubic"}, "model", "model must be"),
    ({"cutoff": 0.5}, "cutoff", "cutoff must be > 1"),
    ({"N": 0}, "N", "N must be an integer"),
    ({"N": 3}, "spacing_over_pi", "spacing_over_pi is required"),
    ({"dt": 0.003}, "t_max", "multiple of dt"),
    ({"dt": 1e-7}, "dt", "exceeds"),
    ({"solvers": ["rk4"]}, "solvers", "unknown solver 'rk4'"),
    ({"smoothing_window": 2}, "smoothing_window", "odd"),
    ({"seedless": False}, "seedless", "seedless must be true"),
    ({"initial": {"type": "ghz"}}, "initial.type", "initial.type must be"),
    ({"initial": {"atom_index": 2}}, "initial.atom_index", "1..1"),
    ({"initial": {"phase": 1}}, "initial.phase", "unknown key(s) in initial"),
    ({"positions": [0.0, 0.0]}, "positions", "strictly increasing"),
])
def test_validation_errors_name_the_field(patch, field, message):
    doc = {**json.loads(MINIMAL), **patch}
    with pytest.raises(ScenarioError) as exc:
        from_dict(doc)
    assert exc.value.field == field
    assert message in str(exc.value)


def test_missing_required():
    with pytest.raises(ScenarioError, match="t_max is required"):
        from_dict({"gamma_ratio": 1e-4, "N": 1})
    with pytest.raises(ScenarioError, match="gamma_ratio is required"):
        from_dict({"N": 1, "t_max": 1})


def test_parse_error_position():
    with pytest.raises(ScenarioError, match=r"parse error at line 2, column \d+"):
        parse_scenario('{"N": 1,\n  "t_max": }')


def test_round_trip():
    for name in ("fig1bc", "fig2ab", "fig2cd", "fig2e", "fig3", "spfig"):
        sc = preset(name)
        assert parse_scenario(sc.to_json()) == sc
    sc = parse_scenario('{"gamma_ratio": [1e-3], "positions": [0, 0.4, 1.5], "t_max": 1, '
                        '"model": ["linear"], "out_dir": "x", "solvers": ["markov", "dde"]}')
    assert parse_scenario(sc.to_json()) == sc
    assert sc.digest() == parse_scenario(sc.to_json()).digest()


def test_digest_ignores_out_dir_only():
    a = parse_scenario(MINIMAL)
    b = from_dict({**json.loads(MINIMAL), "out_dir": "elsewhere"})
    c = from_dict({**json.loads(MINIMAL), "dt": 0.01})
    assert a.digest() == b.digest() != c.digest()


# golden preset values
def test_preset_fig1bc():
    sc = preset("fig1bc")
    assert sc.n_atoms == 1 and sc.cutoff == 1e4
    assert sc.gamma_ratios == (1e-2, 1e-3, 1e-6)
    assert set(sc.models) == set(CouplingModel)
    assert "volterra" in sc.solvers
    assert sum(r.solver == "volterra" for r in plan_runs(sc)) == 6


def test_preset_fig2a_alias():
    sc = preset("fig2a")
    assert sc.n_atoms == 20 and sc.spacing_over_pi == 0.1 and sc.gamma_ratios == (1e-4,)
    assert sc.initial.type == "timed_dicke" and sc.initial.k_over_k0 == 1.0
    assert sc.t_max == 10.0 and sc.solvers == ("volterra", "dde")
    assert sc.geometry.spacing == pytest.approx(0.1 * math.pi)


def test_preset_fig2cd():
    sc = preset("fig2cd")
    assert sc.n_atoms == 10 and sc.spacing_over_pi == 0.1 and sc.t_max == 50.0
    assert {1e-3, 1e-6} <= set(sc.gamma_ratios)


def test_preset_fig2e_companions():
    sc = preset("fig2e")
    assert sc.t_window == (45.0, 50.0)
    (single,) = sc.companions
    assert single.n_atoms == 1 and single.gamma_ratios == (1e-2, 1e-3, 1e-6)
    assert "markov" in single.solvers


def test_preset_fig3():
    sc = preset("fig3")
    assert sc.n_atoms == 20 and sc.initial.type == "subradiant"
    assert set(sc.models) == set(CouplingModel) and sc.solvers == ("volterra", "dde")
    assert sc.spacing_over_pi == 0.1 and sc.gamma_ratios == (1e-4,)


def test_preset_spfig():
    sc = preset("spfig")
    assert sc.n_atoms == 10 and sc.spacing_over_pi == 0.5 and sc.gamma_ratios == (1e-4,)


def test_unknown_preset():
    with pytest.raises(ScenarioError, match="unknown preset"):
        preset_name("nosuch")


def test_preset_key_with_overrides():
    sc = from_dict({"preset": "fig2ab", "N": 4, "t_max": 1.0})
    assert sc.n_atoms == 4 and sc.spacing_over_pi == 0.1 and sc.t_max == 1.0


def test_override_checks():
    sc = preset("fig2e").override(dt=0.01, t_max=1.0, solvers=["markov"])
    assert sc.dt == 0.01 and sc.companions[0].dt == 0.01 and sc.companions[0].solvers == ("markov",)
    with pytest.raises(ScenarioError):
        sc.override(dt=-1.0)


def small(**kw):
    doc = {"name": "t", "model": ["constant", "linear"], "gamma_ratio": 1e-2, "cutoff": 50.0, "N": 2,
           "spacing_over_pi": 0.1, "t_max": 0.5, "dt": 0.01, "solvers": ["volterra", "dde", "markov"],
           "initial": {"type": "timed_dicke"}}
    doc.update(kw)
    return from_dict(doc)


def test_csv_contract(tmp_path):
    sc = small(N=1, solvers=["volterra"], model="constant", initial={"type": "single_atom"})
    (spec,) = plan_runs(sc)
    res = run_and_write(spec, tmp_path)
    path = tmp_path / f"{spec.run_id}.csv"
    lines = path.read_text().splitlines()
    assert lines[0] == UNITS_LINE
    assert lines[1].split(",") == ["t", "re_alpha_1", "im_alpha_1", "Pe_1", "Pe_total", "Nb",
                                   "norm_residual", "Gamma_inst_total"]
    assert len(lines) == 2 + 51
    data = read_csv(path)
    np.testing.assert_array_equal(data["re_alpha_1"], res.trajectory.amplitudes[:, 0].real)
    np.testing.assert_array_equal(data["Nb"], res.trajectory.photon_number)
    # 17 significant digits
    assert lines[7].split(",")[1] == format(res.trajectory.amplitudes[5, 0].real, ".17g")


def test_csv_all_atoms(tmp_path):
    sc = small(N=3, solvers=["dde"])
    (spec,) = plan_runs(sc)
    run_and_write(spec, tmp_path)
    header = (tmp_path / f"{spec.run_id}.csv").read_text().splitlines()[1].split(",")
    assert header[1:7] == ["re_alpha_1", "im_alpha_1", "re_alpha_2", "im_alpha_2", "re_alpha_3", "im_alpha_3"]
    assert header[7:10] == ["Pe_1", "Pe_2", "Pe_3"]


def test_manifest_contents(tmp_path):
    sc = preset("fig3").override(dt=0.01, t_max=0.5)
    sc = from_dict({**sc.to_dict(), "N": 4, "cutoff": 50.0})
    spec = [s for s in plan_runs(sc) if s.solver == "volterra"][0]
    run_and_write(spec, tmp_path, overrides={"dt": 0.01})
    m = json.loads((tmp_path / f"{spec.run_id}.manifest.json").read_text())
    assert m["status"] == "completed" and m["scenario_hash"] == sc.digest()
    assert m["sign_convention"]["memory_sign"] == 1
    assert m["pre_normalization_norm"] == pytest.approx(math.sqrt(5 / 4))
    assert m["overrides"] == {"dt": 0.01}
    assert m["max_norm_residual"] < 1e-3
    assert m["kernel_evaluations"]["A"] <= 4 * 50
    assert "omega0" in m["units"] and m["code_version"]


def test_byte_determinism(tmp_path):
    sc = small()
    for out in ("a", "b"):
        for spec in plan_runs(sc):
            run_and_write(spec, tmp_path / out)
    for p in (tmp_path / "a").glob("*.csv"):
        assert p.read_bytes() == (tmp_path / "b" / p.name).read_bytes()
    assert len(list((tmp_path / "a").glob("*.csv"))) == 4


def test_aborted_run_manifest(tmp_path, monkeypatch):
    monkeypatch.setattr(dyn, "MEMORY_SIGN", -1)
    sc = small(N=1, solvers=["volterra"], model="constant", t_max=5.0, dt=0.005,
               initial={"type": "single_atom"})
    (spec,) = plan_runs(sc)
    res = run_and_write(spec, tmp_path)
    m = json.loads((tmp_path / f"{spec.run_id}.manifest.json").read_text())
    assert m["status"] == "aborted"
    assert 0 < m["last_valid_step"] < 1000
    assert "blow-up guard" in m["message"]
    assert res.error is not None
    # partial data is still written
    assert (tmp_path / f"{spec.run_id}.csv").exists()


def test_running_manifest_written_first(tmp_path, monkeypatch):
    import wqedmem.scenario as scn
    seen = {}

    def spy(spec, cache_dir=None, overrides=None):
        p = tmp_path / f"{spec.run_id}.manifest.json"
        seen["status"] = json.loads(p.read_text())["status"]
        return real(spec, cache_dir, overrides)

    real = scn.execute_run
    monkeypatch.setattr(scn, "execute_run", spy)
    (spec,) = plan_runs(small(N=1, solvers=["markov"], initial={"type": "single_atom"}))
    run_and_write(spec, tmp_path)
    assert seen["status"] == "running"


def test_execute_oracle_solver():
    sc = small(N=1, solvers=["oracle"], model="constant", n_modes=2000, initial={"type": "single_atom"})
    (spec,) = plan_runs(sc)
    res = execute_run(spec)
    assert res.manifest["status"] == "completed"
    assert res.manifest["max_norm_residual"] < 1e-8


def test_write_error_names_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    (spec,) = plan_runs(small(N=1, solvers=["markov"], initial={"type": "single_atom"}))
    with pytest.raises(OSError, match="file"):
        run_and_write(spec, blocker / "sub")
