"""Command-line pipeline: design, synthesize, realize, verify.

Exit statuses: 0 success, 2 quality threshold missed, 3 synthesis failure,
64 configuration error, 66 missing input or artifact.
"""
from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, _accel
from .cascade import SynthesisError, forward_compose, mirror_split, synthesize_plan, CascadePlan
from .cell import CellObjective, SearchOptions, plant_instance, prune_switches, search_states
from .channel import (fama_ensemble, fama_select, generate_channels, mean_diagonals,
                      measured_correlation, pattern_correlation, phase_gauge)
from .fas import FasParams, make_target_correlation, min_output_ports
from .network import SwitchModel, default_freq_grid, surrogate_cell
from .optimizer import PgdOptions, SolveReport, multi_restart, na_sweep, relative_error
from .touchstone import TouchstoneError, parse_touchstone

log = logging.getLogger("prbfn")

EXIT_OK, EXIT_QUALITY, EXIT_SYNTHESIS, EXIT_CONFIG, EXIT_MISSING = 0, 2, 3, 64, 66

_NUM = (int, float)
SCHEMA = {
    "fas": {"W": (_NUM, None), "N": (int, None)},
    "optimizer": {"n_a": ((int, type(None)), None), "eta": (_NUM, 0.05),
                  "max_iter": (int, 20000), "restarts": (int, 30), "seed": (int, 0),
                  "epsilon0": (_NUM, 0.01), "tolerance": ((int, float, type(None)), None),
                  "sweep_max_na": ((int, type(None)), None), "workers": (int, 1)},
    "cell": {"Q": (int, 8), "c1": (_NUM, 1.0), "c2": (_NUM, 0.5), "t_s": (_NUM, -10.0),
             "t_m": (_NUM, -15.0), "t_loss": (_NUM, 0.37), "penalty": (_NUM, 1e3),
             "method": (str, "anneal"), "budget": ((int, type(None)), None), "seed": (int, 0),
             "center_freq_hz": (_NUM, 2.6e9), "band_fraction": (_NUM, 0.05), "n_freq": (int, 21),
             "coupling_scale": (_NUM, 0.4), "loss_scale": (_NUM, 0.05), "base": (str, "divider"),
             "planted": (bool, False)},
    "switch": {"r_on": (_NUM, 1.5), "l_on": (_NUM, 0.7e-9), "r_off": (_NUM, 1.5),
               "c_off": (_NUM, 0.15e-12)},
    "channel": {"T": (int, 10000), "users": (int, 2), "locations": (int, 1), "seed": (int, 0),
                "centered": (bool, False), "gauge": (bool, True)},
    "paths": {"touchstone_in": ((str, type(None)), None), "out_dir": (str, "prbfn_out")},
}
REQUIRED = {("fas", "W"), ("fas", "N")}


class ConfigError(ValueError):
    pass


class MissingArtifact(FileNotFoundError):
    pass


# configuration -----------------------------------------------------------

def _type_ok(value, types) -> bool:
    types = types if isinstance(types, tuple) else (types,)
    if isinstance(value, bool) and bool not in types:
        return False
    return isinstance(value, types)


def resolve_config(raw: dict) -> dict:
    """Fill defaults and validate every field; raises :class:`ConfigError`."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(raw) - set(SCHEMA))
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(unknown)}")
    cfg = {}
    for section, fields in SCHEMA.items():
        given = raw.get(section, {})
        if not isinstance(given, dict):
            raise ConfigError(f"{section}: must be an object")
        bad = sorted(set(given) - set(fields))
        if bad:
            raise ConfigError(f"unknown key(s): {', '.join(f'{section}.{k}' for k in bad)}")
        cfg[section] = {}
        for key, (types, default) in fields.items():
            if key in given:
                value = given[key]
                if not _type_ok(value, types):
                    raise ConfigError(f"{section}.{key}: wrong type {type(value).__name__}")
            elif (section, key) in REQUIRED:
                raise ConfigError(f"{section}.{key}: required")
            else:
                value = default
            cfg[section][key] = value
    _validate(cfg)
    return cfg


def _validate(cfg: dict) -> None:
    def check(field, fn):
        try:
            fn()
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{field}: {exc}") from None

    fas, opt, cell, ch = cfg["fas"], cfg["optimizer"], cfg["cell"], cfg["channel"]
    check("fas", lambda: FasParams(float(fas["W"]), fas["N"]))
    if opt["n_a"] is None:
        opt["n_a"] = max(2, min_output_ports(float(fas["W"])))
    if opt["sweep_max_na"] is None:
        opt["sweep_max_na"] = 2 * opt["n_a"]
    check("optimizer.n_a", lambda: _positive(opt["n_a"]))
    check("optimizer.sweep_max_na", lambda: _positive(opt["sweep_max_na"], allow_zero=True))
    check("optimizer.workers", lambda: _positive(opt["workers"]))
    check("optimizer", lambda: pgd_options(cfg))
    check("cell", lambda: cell_objective(cfg))
    check("cell", lambda: search_options(cfg))
    check("cell.Q", lambda: _positive(cell["Q"], allow_zero=True))
    check("cell.n_freq", lambda: _positive(cell["n_freq"]))
    if not 0 < cell["band_fraction"] < 1:
        raise ConfigError("cell.band_fraction: must lie in (0, 1)")
    if not cell["center_freq_hz"] > 0:
        raise ConfigError("cell.center_freq_hz: must be > 0")
    if cell["base"] not in ("random", "divider"):
        raise ConfigError("cell.base: must be 'random' or 'divider'")
    if not 0 <= cell["loss_scale"] < 1:
        raise ConfigError("cell.loss_scale: must lie in [0, 1)")
    if cell["planted"] and cell["Q"] > 16:
        raise ConfigError("cell.planted: needs Q <= 16")
    check("switch", lambda: SwitchModel(**cfg["switch"]))
    for key in ("T", "users", "locations"):
        check(f"channel.{key}", lambda: _positive(ch[key]))
    if ch["users"] < 2:
        raise ConfigError("channel.users: FAMA needs at least 2 users")
    for section in ("optimizer", "cell", "channel"):
        if not 0 <= cfg[section]["seed"] < 2 ** 64:
            raise ConfigError(f"{section}.seed: must be an unsigned 64-bit integer")


def _positive(v, allow_zero=False):
    if v < 0 or (v == 0 and not allow_zero):
        raise ValueError("must be positive")


def pgd_options(cfg) -> PgdOptions:
    o = cfg["optimizer"]
    return PgdOptions(eta=float(o["eta"]), tolerance=o["tolerance"], max_iter=o["max_iter"],
                      restarts=o["restarts"], seed=o["seed"], epsilon0=float(o["epsilon0"]))


def cell_objective(cfg) -> CellObjective:
    c = cfg["cell"]
    return CellObjective(c1=c["c1"], c2=c["c2"], t_s=c["t_s"], t_m=c["t_m"], t_loss=c["t_loss"],
                         penalty=c["penalty"])


def search_options(cfg) -> SearchOptions:
    c = cfg["cell"]
    return SearchOptions(method=c["method"], budget=c["budget"], seed=c["seed"])


def load_config(path, seed=None, out=None) -> dict:
    path = Path(path)
    if not path.is_file():
        raise MissingArtifact(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    raw = copy.deepcopy(raw)
    if isinstance(raw, dict):
        if seed is not None:
            for section in ("optimizer", "cell", "channel"):
                raw.setdefault(section, {})
                if isinstance(raw[section], dict):
                    raw[section]["seed"] = seed
        if out is not None:
            raw.setdefault("paths", {})
            if isinstance(raw["paths"], dict):
                raw["paths"]["out_dir"] = str(out)
    return resolve_config(raw)


# artifact helpers --------------------------------------------------------

def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, allow_nan=True) + "\n")


def read_json(path: Path):
    if not path.is_file():
        raise MissingArtifact(f"missing artifact: {path}")
    return json.loads(path.read_text())


def matrix_rows(M):
    n, m = M.shape
    return [(i + 1, j + 1, float(M[i, j])) for i in range(n) for j in range(m)]


def _prepare_out(cfg, command) -> Path:
    out = Path(cfg["paths"]["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "resolved_config.json", cfg)
    meta_path = out / "run_metadata.json"
    meta = json.loads(meta_path.read_text()) if meta_path.is_file() else {}
    meta[command] = {"finished_utc": None, "started_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
                     "version": __version__, "python": platform.python_version(),
                     "kernel_backend": _accel.backend_name()}
    write_json(meta_path, meta)
    return out


def _finish_meta(out: Path, command: str, status: int) -> None:
    meta_path = out / "run_metadata.json"
    meta = json.loads(meta_path.read_text()) if meta_path.is_file() else {}
    meta.setdefault(command, {})
    meta[command]["finished_utc"] = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
    meta[command]["exit_status"] = status
    write_json(meta_path, meta)


def _target(cfg):
    fas = cfg["fas"]
    return make_target_correlation(FasParams(float(fas["W"]), fas["N"]))


# commands ----------------------------------------------------------------

def cmd_design(cfg) -> int:
    out = _prepare_out(cfg, "design")
    C = _target(cfg)
    write_csv(out / "c_obj.csv", ["row", "col", "value"], matrix_rows(C))
    opts = pgd_options(cfg)
    n_a = cfg["optimizer"]["n_a"]
    rep = multi_restart(C, n_a, opts, workers=cfg["optimizer"]["workers"])
    doc = rep.to_json()
    doc.update(n_a=n_a, W=float(cfg["fas"]["W"]), N=cfg["fas"]["N"], epsilon0=opts.epsilon0,
               tolerance=opts.resolved_tolerance(C))
    write_json(out / "solve_report.json", doc)
    sweep = []
    if cfg["optimizer"]["sweep_max_na"] > 0:
        sweep = na_sweep(float(cfg["fas"]["W"]), cfg["fas"]["N"],
                         range(1, cfg["optimizer"]["sweep_max_na"] + 1), opts)
    write_csv(out / "na_sweep.csv", ["n_a", "epsilon"], sweep)
    ok = rep.epsilon <= opts.epsilon0
    print(f"design: N_A={n_a} epsilon={rep.epsilon:.6g} (threshold {opts.epsilon0:g}) "
          f"converged={rep.converged} iterations={rep.iterations}")
    return EXIT_OK if ok else EXIT_QUALITY


def _load_solution(out: Path) -> SolveReport:
    return SolveReport.from_json(read_json(out / "solve_report.json"))


def cmd_synthesize(cfg) -> int:
    out = Path(cfg["paths"]["out_dir"])
    rep = _load_solution(out)
    _prepare_out(cfg, "synthesize")
    try:
        plan = synthesize_plan(rep.best)
    except SynthesisError as exc:
        print(f"synthesize: failed: {exc}", file=sys.stderr)
        return EXIT_SYNTHESIS
    comp = forward_compose(plan) * np.exp(1j * plan.global_phases)
    residual = float(np.max(np.linalg.norm(comp - rep.best, axis=0)))
    doc = plan.to_json()
    doc["forward_residual"] = residual
    doc["unit_count_note"] = ("units are distinct target sets per stage position; "
                              "fabricated copies and SPDT hardware are not counted")
    write_json(out / "cascade_plan.json", doc)
    units = sum(len(s) for s in plan.units)
    print(f"synthesize: M={plan.M} stages, {units} units, {plan.n_states} states, "
          f"forward residual {residual:.3e}")
    if plan.spdt_routing:
        ms = mirror_split(rep.best)
        print(f"mirror split: residual {ms.residual:.3e} (flagged={ms.flagged}), "
              f"{len(plan.spdt_routing)} routed states, {plan.spdt_loss_db} dB per SPDT")
        print("state half upper(unit,state) lower(unit,state)")
        for r in plan.spdt_routing:
            print(f"{r['state']:5d} {r['half']:4d} {r['upper']['unit']},{r['upper']['unit_state']}"
                  f"  {r['lower']['unit']},{r['lower']['unit_state']}")
    return EXIT_OK


def _unit_network(cfg, unit_index: int, n_states: int):
    """Network and optional planted targets for one unit; returns (net, targets, source)."""
    c = cfg["cell"]
    src = cfg["paths"]["touchstone_in"]
    if src:
        path = Path(src)
        if not path.is_file():
            raise MissingArtifact(f"touchstone file not found: {path}")
        try:
            net = parse_touchstone(path.read_text()).to_network(n_feed=3)
        except TouchstoneError as exc:
            raise ConfigError(f"paths.touchstone_in: {exc}") from None
        return net, None, f"touchstone:{path}"
    seed = int(np.random.SeedSequence(c["seed"], spawn_key=(unit_index,)).generate_state(1, np.uint64)[0])
    kw = dict(coupling_scale=c["coupling_scale"], loss_scale=c["loss_scale"], base=c["base"])
    if c["planted"]:
        inst = plant_instance(c["Q"], n_states, seed=seed, obj=cell_objective(cfg),
                              sw=SwitchModel(**cfg["switch"]), center_hz=c["center_freq_hz"], **kw)
        return inst.net, inst.targets, f"planted-surrogate:seed={seed}"
    freqs = default_freq_grid(c["center_freq_hz"], c["band_fraction"], c["n_freq"])
    net = surrogate_cell(c["Q"], seed=seed, freqs=freqs, **kw)
    return net, None, f"surrogate:seed={seed}"


def cmd_realize(cfg) -> int:
    out = Path(cfg["paths"]["out_dir"])
    plan = CascadePlan.from_json(read_json(out / "cascade_plan.json"))
    _prepare_out(cfg, "realize")
    sw = SwitchModel(**cfg["switch"])
    obj = cell_objective(cfg)
    opts = search_options(cfg)
    all_ok = True
    for k, (m, i, unit) in enumerate(plan.all_units(), start=1):
        net, planted, source = _unit_network(cfg, k - 1, unit.n_states)
        targets = unit if planted is None else planted
        res = search_states(net, targets, obj, opts, sw)
        doc = res.to_json()
        doc.update(unit=k, stage=m, index=i, network_source=source,
                   planted=planted is not None, prune=prune_switches(res),
                   thresholds={"t_s_db": obj.t_s, "t_m_db": obj.t_m, "t_loss": obj.t_loss},
                   switch_model=cfg["switch"])
        write_json(out / f"stateset_unit{k}.json", doc)
        feas = int(res.feasible.sum())
        all_ok &= bool(res.feasible.all())
        print(f"realize: unit {k} (stage {m}, index {i}) source={source} "
              f"feasible {feas}/{unit.n_states} worst objective {res.objectives.max():.4g}")
    return EXIT_OK if all_ok else EXIT_QUALITY


def cmd_verify(cfg) -> int:
    out = Path(cfg["paths"]["out_dir"])
    rep = _load_solution(out)
    _prepare_out(cfg, "verify")
    C_obj = _target(cfg)
    B = rep.best
    if B.shape[1] != C_obj.shape[0]:
        raise ConfigError("fas.N does not match the stored solution")
    C = pattern_correlation(B)
    write_csv(out / "achieved_corr.csv", ["row", "col", "value"], matrix_rows(C))
    eps = relative_error(C, C_obj)
    ch = cfg["channel"]
    Bg = phase_gauge(B) if ch["gauge"] else B
    ens = generate_channels(Bg, T=ch["T"], users=ch["users"], locations=ch["locations"], seed=ch["seed"])
    rows = fama_ensemble(ens)
    write_csv(out / "fama.csv", ["t", "user", "best_port", "sir_db"], rows)
    fama = {}
    for u in range(ens.users):
        res = fama_select(ens.h[:, u].reshape(-1, ens.N),
                          ens.h[:, (u + 1) % ens.users].reshape(-1, ens.N))
        fama[f"user{u + 1}"] = res.summary()
    mea = measured_correlation(ens, centered=ch["centered"])
    pat = mean_diagonals(np.abs(Bg.conj().T @ Bg))
    tgt = mean_diagonals(C_obj)
    write_csv(out / "corr_lag.csv", ["lag", "value", "pattern_mean", "target"],
              [(i, mea[i], pat[i], tgt[i]) for i in range(mea.size)])
    control = measured_correlation(
        generate_channels(np.eye(ens.N), T=ch["T"], users=ch["users"], locations=ch["locations"],
                          seed=ch["seed"]), centered=ch["centered"])
    eps0 = cfg["optimizer"]["epsilon0"]
    summary = {
        "epsilon": eps, "epsilon0": eps0, "epsilon_ok": eps <= eps0,
        "network_source": "ideal beam matrix (solve_report.json)",
        "fama": fama,
        "measured_corr_lag": [float(v) for v in mea],
        "measured_corr_max_abs_dev_from_pattern": float(np.max(np.abs(mea - pat))),
        "phase_gauge": ch["gauge"],
        "control_identity_max_lag_corr": float(np.max(control[1:])) if control.size > 1 else 0.0,
        "channel": ch,
    }
    write_json(out / "verify_summary.json", summary)
    print(f"verify: epsilon={eps:.6g} (threshold {eps0:g}); measured lag-1 correlation {mea[min(1, mea.size - 1)]:.3f}; "
          + "; ".join(f"{u} median SIR {s['median_sir_db']:.2f} dB" for u, s in fama.items()))
    return EXIT_OK if eps <= eps0 else EXIT_QUALITY


COMMANDS = {"design": cmd_design, "synthesize": cmd_synthesize, "realize": cmd_realize,
            "verify": cmd_verify}


HELP = {
    "design": "optimal current matrix plus the N_A sweep",
    "synthesize": "cascade plan of per-unit amplitude and phase targets",
    "realize": "switch states for every unit cell",
    "verify": "simulated channels with FAMA and lag-correlation checks",
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="prbfn", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name, help=HELP[name])
        s.add_argument("--config", required=True, help="JSON run configuration")
        s.add_argument("--out", help="output directory (overrides paths.out_dir)")
        s.add_argument("--seed", type=int, help="seed for optimizer, cell search and channels")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, seed=args.seed, out=args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingArtifact as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_MISSING
    try:
        status = COMMANDS[args.command](cfg)
    except MissingArtifact as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_MISSING
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    _finish_meta(Path(cfg["paths"]["out_dir"]), args.command, status)
    return status


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
