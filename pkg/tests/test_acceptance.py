"""Acceptance suite: one test per criterion, each with its tolerance and time limit.

Every test records a PASS/FAIL line; the lines are printed in the pytest
terminal summary, or directly when this file is run as a script.
"""
import sys
import time
import warnings

import numpy as np
import pytest

from prbfn.cascade import forward_compose, synthesize_plan
from prbfn.cell import (SearchOptions, bit_string, group_swap_permutation, mirror_state,
                        parse_bit_string, search_states)
from prbfn.channel import (empirical_correlation, fama_select, generate_channels, mean_diagonals,
                           measured_correlation, phase_gauge, port_covariance, port_sir,
                           spatial_corr_mc)
from prbfn.fas import FasParams, bessel_j0, make_target_correlation, min_output_ports
from prbfn.network import SwitchModel, reduce_network, surrogate_cell, z_to_s
from prbfn.optimizer import (REAL_GRADIENT_SCALE, PgdOptions, gradient, multi_restart, na_sweep,
                             objective, random_unit_columns, relative_error)
from prbfn.touchstone import TouchstoneData, parse_touchstone, write_touchstone
from prbfn.cascade import UnitTarget

from oracles import fd_real_gradient, feed_impedance_full_solve, j0_series

RESULTS = []
_DESIGNS = {}


def design(W, N, n_a):
    key = (W, N, n_a)
    if key not in _DESIGNS:
        C = make_target_correlation(FasParams(W, N))
        _DESIGNS[key] = multi_restart(C, n_a, PgdOptions(seed=0))
    return _DESIGNS[key]


def record(number, title, ok, detail, elapsed, limit):
    in_time = elapsed < limit
    status = "PASS" if ok and in_time else "FAIL"
    line = f"criterion {number:2d} {status}  {title}: {detail}; {elapsed:.2f}s (limit {limit:g}s)"
    RESULTS.append(line)
    print(line)
    return ok and in_time


def column_phase_error(A, B):
    worst = 0.0
    for a, b in zip(A.T, B.T):
        phi = np.angle(np.vdot(b, a))
        worst = max(worst, float(np.linalg.norm(a - np.exp(1j * phi) * b)))
    return worst


def test_criterion_01_bessel_target():
    t0 = time.perf_counter()
    worst, exact = 0.0, True
    for W, N in ((0.5, 11), (1.5, 18)):
        C = make_target_correlation(FasParams(W, N))
        for i in range(N):
            for j in range(N):
                ref = abs(float(j0_series(2 * np.pi * abs(i - j) * W / (N - 1))))
                worst = max(worst, abs(C[i, j] - ref))
        exact &= bool(np.array_equal(C, C.T) and np.all(np.diag(C) == 1.0))
        exact &= all(np.array_equal(np.diagonal(C, k)[1:], np.diagonal(C, k)[:-1]) for k in range(N))
    ok = worst <= 1e-9 and exact
    assert record(1, "Bessel target fidelity", ok,
                  f"max |C - J0 oracle| = {worst:.2e}, invariants exact = {exact}",
                  time.perf_counter() - t0, 1.0)


@pytest.mark.parametrize("W,N,n_a", [(0.5, 11, 2), (1.5, 18, 4)])
def test_criterion_02_optimizer_threshold(W, N, n_a):
    t0 = time.perf_counter()
    rep = design(W, N, n_a)
    C = make_target_correlation(FasParams(W, N))
    eps = relative_error(np.abs(rep.best.conj().T @ rep.best), C)
    assert record(2, f"best-of-30 error W={W} N={N} N_A={n_a}", eps <= 0.01,
                  f"epsilon = {eps:.4g} (need <= 0.01)", time.perf_counter() - t0, 120.0)


def test_criterion_03_sweep_shape():
    t0 = time.perf_counter()
    ok, parts = True, []
    for W in (0.5, 1.0, 1.5):
        N = int(round(10 * W))
        curve = dict(na_sweep(W, N, range(1, 9), PgdOptions(epsilon0=1e-3)))
        ks = sorted(curve)
        mono = all(curve[b] <= 1.1 * curve[a] for a, b in zip(ks, ks[1:]))
        at_min = curve[min_output_ports(W)]
        ok &= curve[1] == 1.0 and mono and at_min < 0.01
        parts.append(f"W={W}: eps(1)={curve[1]!r}, monotone={mono}, "
                     f"eps({min_output_ports(W)})={at_min:.3g}")
    assert record(3, "N_A sweep shape", ok, "; ".join(parts), time.perf_counter() - t0, 600.0)


def test_criterion_04_gradient():
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    worst = 0.0
    for trial in range(20):
        n_a, n = int(rng.integers(2, 5)), int(rng.integers(3, 9))
        B = random_unit_columns(n_a, n, rng)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            C = make_target_correlation(FasParams(float(rng.uniform(0.2, 1.5)), n))
        fd = fd_real_gradient(lambda X: objective(X, C), B, h=1e-6)
        an = REAL_GRADIENT_SCALE * gradient(B, C)
        worst = max(worst, float(np.max(np.abs(fd - an)) / np.max(np.abs(an))))
    assert record(4, "gradient vs finite differences", worst < 1e-6,
                  f"max relative error = {worst:.2e} over 20 instances", time.perf_counter() - t0, 10.0)


def test_criterion_05_cascade_round_trip():
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    worst_col, worst_gram = 0.0, 0.0
    for trial in range(50):
        n_a = (2, 4, 8)[trial % 3]
        B = random_unit_columns(n_a, int(rng.integers(2, 20)), rng)
        comp = forward_compose(synthesize_plan(B))
        worst_col = max(worst_col, column_phase_error(comp, B))
        worst_gram = max(worst_gram, float(np.linalg.norm(
            np.abs(comp.conj().T @ comp) - np.abs(B.conj().T @ B))))
    ok = worst_col <= 1e-9 and worst_gram <= 1e-9
    assert record(5, "cascade round trip", ok,
                  f"column error {worst_col:.2e}, Gram error {worst_gram:.2e} over 50 matrices",
                  time.perf_counter() - t0, 10.0)


def test_criterion_06_network_reduction():
    t0 = time.perf_counter()
    rng = np.random.default_rng(6)
    sw = SwitchModel()
    worst_rel = worst_sym = worst_sv = 0.0
    for trial in range(100):
        Q = int(rng.integers(0, 17))
        net = surrogate_cell(Q, seed=int(rng.integers(2 ** 32)), freqs=[2.55e9, 2.6e9, 2.65e9],
                             coupling_scale=float(rng.uniform(0.3, 2.0)),
                             loss_scale=float(rng.uniform(0.0, 0.5)))
        x = rng.integers(0, 2, Q)
        f = int(rng.integers(0, 3))
        got = reduce_network(net, x, sw, f)
        ref = feed_impedance_full_solve(net.z[f], 3, sw.loads(x, net.freqs[f:f + 1])[0])
        worst_rel = max(worst_rel, float(np.linalg.norm(got - ref) / np.linalg.norm(ref)))
        worst_sym = max(worst_sym, float(np.max(np.abs(got - got.T)) / np.max(np.abs(got))))
        worst_sv = max(worst_sv, float(np.linalg.svd(z_to_s(got, net.z0), compute_uv=False).max()))
    ok = worst_rel < 1e-10 and worst_sym <= 1e-9 and worst_sv <= 1 + 1e-9
    assert record(6, "network reduction oracle", ok,
                  f"max rel error {worst_rel:.2e}, asymmetry {worst_sym:.2e}, "
                  f"max singular value {worst_sv:.12f}", time.perf_counter() - t0, 30.0)


def test_criterion_07_touchstone():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    worst, cases = 0.0, 0
    for fmt in ("RI", "MA", "DB"):
        for n in range(1, 6):
            for F in (1, 4, 11):
                S = (rng.normal(size=(F, n, n)) + 1j * rng.normal(size=(F, n, n))) / (2 * n)
                freqs = np.sort(rng.uniform(1e9, 3e9, F))
                ts = TouchstoneData(freqs=freqs, data=S)
                back = parse_touchstone(write_touchstone(ts, fmt=fmt))
                worst = max(worst, float(np.max(np.abs(back.data - S))),
                            float(np.max(np.abs(back.freqs - freqs) / freqs)))
                cases += 1
    assert record(7, "Touchstone round trip", worst <= 1e-12,
                  f"max deviation {worst:.2e} over {cases} files", time.perf_counter() - t0, 5.0)


def test_criterion_08_cell_search():
    t0 = time.perf_counter()
    hits = {"anneal": 0, "genetic": 0}
    beaten = 0
    for trial in range(20):
        rng = np.random.default_rng(trial)
        Q = int(rng.integers(6, 13))
        net = surrogate_cell(Q, seed=trial)
        a = rng.uniform(0, np.pi / 2, 3)
        targets = UnitTarget(np.cos(a), np.sin(a), rng.uniform(-3, 3, 3))
        ex = search_states(net, targets, opts=SearchOptions(method="exhaustive"))
        for method in hits:
            res = search_states(net, targets, opts=SearchOptions(method=method, seed=trial))
            diff = res.objectives - ex.objectives
            hits[method] += bool(np.all(np.abs(diff) <= 1e-9))
            beaten += int(np.sum(diff < 0))
    ok = all(h >= 19 for h in hits.values()) and beaten == 0
    assert record(8, "cell search vs exhaustive", ok,
                  f"annealing {hits['anneal']}/20, genetic {hits['genetic']}/20 optimal; "
                  f"{beaten} states below the exhaustive optimum", time.perf_counter() - t0, 300.0)


def test_criterion_09_mirror_structure():
    t0 = time.perf_counter()
    perm = group_swap_permutation()
    mapped = bit_string(mirror_state(parse_bit_string("1010 1011 0011 1001 0010"), perm))
    X = np.random.default_rng(9).integers(0, 2, (1000, 20))
    invol = bool(np.array_equal(mirror_state(mirror_state(X, perm), perm), X))
    ok = mapped == "0011 1001 1010 1011 0010" and invol
    assert record(9, "mirror structure", ok, f"state 1 maps to '{mapped}', involution = {invol}",
                  time.perf_counter() - t0, 1.0)


def test_criterion_10_channel_statistics():
    t0 = time.perf_counter()
    worst_corr = 0.0
    for W, N, n_a in ((0.5, 11, 2), (1.5, 18, 4)):
        B = design(W, N, n_a).best
        emp = empirical_correlation(generate_channels(B, T=100_000, seed=10).h[0, 0])
        worst_corr = max(worst_corr, float(np.max(np.abs(emp - np.abs(B.conj().T @ B)))))
    worst_mc = 0.0
    for k, d in enumerate(np.linspace(0.1, 1.0, 10)):
        est = spatial_corr_mc(d, 1_000_000, seed=k)
        worst_mc = max(worst_mc, abs(est - float(bessel_j0(2 * np.pi * d))))
    ok = worst_corr <= 0.03 and worst_mc <= 0.005
    assert record(10, "channel statistics", ok,
                  f"max |corr - |B^H B|| = {worst_corr:.4f}, max |MC - J0| = {worst_mc:.4f}",
                  time.perf_counter() - t0, 120.0)


def test_criterion_11_fama():
    t0 = time.perf_counter()
    B = design(1.5, 18, 4).best
    exact, medians = True, []
    for seed in range(4):
        ens = generate_channels(B, T=10_000, users=2, seed=1100 + seed)
        res = fama_select(ens.h[0, 0], ens.h[0, 1])
        sir_db = 10 * np.log10(port_sir(ens.h[0, 0], ens.h[0, 1]))
        exact &= bool(np.all(res.sir_db[:, None] >= sir_db))
        medians.append(res.summary()["median_sir_db"])
    spread = max(abs(m - np.mean(medians)) for m in medians)
    ok = exact and spread <= 1.0
    assert record(11, "FAMA selection", ok,
                  f"argmax property exact = {exact}, medians {np.round(medians, 2).tolist()} dB "
                  f"(max deviation {spread:.2f} dB)", time.perf_counter() - t0, 60.0)


@pytest.mark.parametrize("W,N,n_a", [(0.5, 11, 2), (1.5, 18, 4)])
def test_criterion_12_measured_correlation(W, N, n_a):
    t0 = time.perf_counter()
    B = phase_gauge(design(W, N, n_a).best)
    ens = generate_channels(B, T=5000, users=2, locations=1, seed=12)
    m = measured_correlation(ens)
    dev = float(np.max(np.abs(m - mean_diagonals(np.abs(port_covariance(B))))))
    ok = m[0] == 1.0 and dev <= 0.05
    assert record(12, f"measured correlation W={W} N={N}", ok,
                  f"lag 0 = {m[0]!r}, max deviation from mean |Sigma| diagonals = {dev:.4f} "
                  f"(need <= 0.05, 1e4 samples)", time.perf_counter() - t0, 60.0)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
