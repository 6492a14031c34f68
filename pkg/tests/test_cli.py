import json
import subprocess
import sys

import numpy as np
import pytest

from prbfn import cli
from prbfn.cascade import CascadePlan
from prbfn.cell import StateSet

FAST = {"optimizer": {"restarts": 4, "sweep_max_na": 3}, "cell": {"Q": 6, "n_freq": 5}}


def write_cfg(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def merged(base, **sections):
    cfg = json.loads(json.dumps(base))
    for k, v in sections.items():
        cfg.setdefault(k, {}).update(v)
    return cfg


def run(tmp_path, command, cfg, out="out", *extra):
    return cli.main([command, "--config", write_cfg(tmp_path, cfg), "--out", str(tmp_path / out), *extra])


@pytest.fixture
def small_cfg():
    return merged(FAST, fas={"W": 0.5, "N": 11})


# configuration -----------------------------------------------------------

def test_defaults_materialized(tmp_path, small_cfg):
    cfg = cli.load_config(write_cfg(tmp_path, small_cfg))
    assert cfg["optimizer"]["eta"] == 0.05 and cfg["optimizer"]["n_a"] == 2
    assert cfg["cell"]["t_s"] == -10.0 and cfg["cell"]["t_m"] == -15.0
    assert cfg["switch"]["l_on"] == 0.7e-9


@pytest.mark.parametrize("bad", [
    {"fas": {"W": 0.5, "N": 11, "M": 3}},
    {"fas": {"W": 0.5, "N": 11}, "extra": {}},
    {"fas": {"W": 0.5}},
    {"fas": {"W": "wide", "N": 11}},
    {"fas": {"W": 0.5, "N": 11}, "optimizer": {"eta": -1}},
    {"fas": {"W": 0.5, "N": 11}, "cell": {"method": "tabu"}},
    {"fas": {"W": 0.5, "N": 11}, "switch": {"c_off": 0}},
    {"fas": {"W": 0.5, "N": 11}, "channel": {"users": 1}},
    {"fas": {"W": 0.5, "N": 11}, "optimizer": {"restarts": True}},
])
def test_invalid_config_status_64(tmp_path, bad, capsys):
    assert run(tmp_path, "design", bad) == 64
    assert "config error" in capsys.readouterr().err


def test_json_syntax_error_reports_line(tmp_path, capsys):
    p = tmp_path / "broken.json"
    p.write_text('{\n  "fas": {"W": 0.5,\n  "N": }\n}')
    assert cli.main(["design", "--config", str(p)]) == 64
    assert "line 3" in capsys.readouterr().err


def test_missing_config_status_66(tmp_path):
    assert cli.main(["design", "--config", str(tmp_path / "nope.json")]) == 66


@pytest.mark.parametrize("command", ["synthesize", "realize", "verify"])
def test_missing_artifacts_status_66(tmp_path, small_cfg, command):
    assert run(tmp_path, command, small_cfg) == 66


# pipeline ----------------------------------------------------------------

def test_full_pipeline_small(tmp_path, small_cfg, capsys):
    assert run(tmp_path, "design", small_cfg) == 0
    out = tmp_path / "out"
    rep = json.loads((out / "solve_report.json").read_text())
    assert rep["epsilon"] <= 0.01 and rep["n_a"] == 2
    sweep = (out / "na_sweep.csv").read_text().splitlines()
    assert sweep[0] == "n_a,epsilon" and sweep[1] == "1,1.0"
    assert (out / "c_obj.csv").read_text().startswith("row,col,value\n1,1,1.0\n")

    assert run(tmp_path, "synthesize", small_cfg) == 0
    text = capsys.readouterr().out
    plan_doc = json.loads((out / "cascade_plan.json").read_text())
    assert plan_doc["forward_residual"] < 1e-9 and "forward residual" in text
    plan = CascadePlan.from_json(plan_doc)
    assert plan.M == 1 and len(plan.units[0]) == 1

    status = run(tmp_path, "realize", small_cfg)
    st = json.loads((out / "stateset_unit1.json").read_text())
    assert status == (0 if all(s["feasible"] for s in st["states"]) else 2)
    assert st["thresholds"] == {"t_s_db": -10.0, "t_m_db": -15.0, "t_loss": 0.37}
    assert st["network_source"].startswith("surrogate") and "prune" in st
    assert len(StateSet.from_json(st).states) == 11

    assert run(tmp_path, "verify", small_cfg) == 0
    summ = json.loads((out / "verify_summary.json").read_text())
    assert summ["epsilon"] <= 0.01 and summ["measured_corr_lag"][0] == 1.0
    assert summ["control_identity_max_lag_corr"] < 0.1
    assert (out / "fama.csv").read_text().startswith("t,user,best_port,sir_db\n")
    assert (out / "corr_lag.csv").read_text().startswith("lag,value,pattern_mean,target\n0,1.0,")
    meta = json.loads((out / "run_metadata.json").read_text())
    assert set(meta) == {"design", "synthesize", "realize", "verify"}


def test_artifacts_byte_identical(tmp_path, small_cfg):
    for out in ("a", "b"):
        for cmd in ("design", "synthesize", "realize", "verify"):
            run(tmp_path, cmd, small_cfg, out)
    names = sorted(p.name for p in (tmp_path / "a").iterdir() if p.name != "run_metadata.json")
    assert "fama.csv" in names and "stateset_unit1.json" in names
    for name in names:
        a = (tmp_path / "a" / name).read_bytes()
        b = (tmp_path / "b" / name).read_bytes().replace(b'"b"', b'"a"').replace(b"/b", b"/a")
        assert a == b, name


def test_seed_override_recorded(tmp_path, small_cfg):
    run(tmp_path, "design", small_cfg, "out", "--seed", "17")
    cfg = json.loads((tmp_path / "out" / "resolved_config.json").read_text())
    assert cfg["optimizer"]["seed"] == cfg["cell"]["seed"] == cfg["channel"]["seed"] == 17


def test_trivial_two_port_design(tmp_path):
    cfg = {"fas": {"W": 0.1, "N": 2}, "optimizer": {"tolerance": 1e-16, "restarts": 3,
                                                    "sweep_max_na": 0}}
    assert run(tmp_path, "design", cfg) == 0
    rep = json.loads((tmp_path / "out" / "solve_report.json").read_text())
    assert rep["epsilon"] < 1e-6


def test_quality_miss_status_2(tmp_path):
    cfg = merged(FAST, fas={"W": 1.5, "N": 18}, optimizer={"n_a": 2, "max_iter": 5})
    assert run(tmp_path, "design", cfg) == 2
    assert (tmp_path / "out" / "solve_report.json").is_file()


def test_synthesis_failure_status_3(tmp_path, small_cfg, capsys):
    out = tmp_path / "out"
    out.mkdir()
    B = np.zeros((4, 11), dtype=complex)
    B[0] = 1.0  # the second pair of every column is zero
    doc = {"objective": 1.0, "epsilon": 1.0, "iterations": 1, "converged": False,
           "phase_spread_rad": 0.0, "seed": 0, "shape": [4, 11],
           "B_real": B.real.ravel().tolist(), "B_imag": B.imag.ravel().tolist()}
    (out / "solve_report.json").write_text(json.dumps(doc))
    assert run(tmp_path, "synthesize", small_cfg) == 3
    assert "stage" in capsys.readouterr().err


def test_four_port_plan_routing(tmp_path, capsys):
    cfg = merged(FAST, fas={"W": 1.5, "N": 18})
    cfg["optimizer"]["sweep_max_na"] = 0
    assert run(tmp_path, "design", cfg) == 0
    assert run(tmp_path, "synthesize", cfg) == 0
    plan = json.loads((tmp_path / "out" / "cascade_plan.json").read_text())
    assert len(plan["units"]) == 3 and len(plan["spdt_routing"]) == 18
    assert "mirror split" in capsys.readouterr().out


def test_planted_realize_all_feasible(tmp_path, small_cfg):
    cfg = merged(small_cfg, cell={"planted": True, "Q": 8})
    assert run(tmp_path, "design", cfg) == 0
    assert run(tmp_path, "synthesize", cfg) == 0
    assert run(tmp_path, "realize", cfg) == 0
    st = json.loads((tmp_path / "out" / "stateset_unit1.json").read_text())
    assert st["planted"] and all(s["feasible"] for s in st["states"])
    assert max(s["objective"] for s in st["states"]) < 1e-20


def test_realize_toy_matches_exhaustive(tmp_path, small_cfg):
    for method, out in (("exhaustive", "ex"), ("anneal", "sa")):
        cfg = merged(small_cfg, cell={"Q": 8, "method": method})
        run(tmp_path, "design", cfg, out)
        run(tmp_path, "synthesize", cfg, out)
        run(tmp_path, "realize", cfg, out)
    ex = StateSet.from_json(json.loads((tmp_path / "ex" / "stateset_unit1.json").read_text()))
    sa = StateSet.from_json(json.loads((tmp_path / "sa" / "stateset_unit1.json").read_text()))
    assert np.all(np.abs(ex.objectives - sa.objectives) <= 1e-9)


def test_realize_from_touchstone(tmp_path, small_cfg):
    from prbfn.network import surrogate_cell
    from prbfn.touchstone import write_touchstone
    ts = tmp_path / "cell.s9p"
    ts.write_text(write_touchstone(surrogate_cell(6, seed=1, base="divider", coupling_scale=0.4,
                                                  freqs=[2.55e9, 2.6e9, 2.65e9])))
    cfg = merged(small_cfg, paths={"touchstone_in": str(ts)})
    run(tmp_path, "design", cfg)
    run(tmp_path, "synthesize", cfg)
    assert run(tmp_path, "realize", cfg) in (0, 2)
    st = json.loads((tmp_path / "out" / "stateset_unit1.json").read_text())
    assert st["network_source"] == f"touchstone:{ts}"
    missing = merged(small_cfg, paths={"touchstone_in": str(tmp_path / "absent.s9p")})
    assert run(tmp_path, "realize", missing) == 66


def test_console_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "prbfn.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "design" in r.stdout
