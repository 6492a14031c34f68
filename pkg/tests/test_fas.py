import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from prbfn.fas import (FasParams, LowDensityWarning, ApertureWarning, bessel_j0,
                       check_correlation, make_target_correlation, min_output_ports)

from oracles import j0_first_root, j0_series


def test_j0_at_zero():
    assert bessel_j0(0.0) == 1.0


def test_j0_first_root():
    root = j0_first_root()
    assert abs(root - 2.404825557695773) < 1e-12
    assert abs(bessel_j0(2.404825557695773)) < 1e-10


def test_j0_pi_over_10_matches_series():
    # 40-term series oracle; value frozen from it
    expected = j0_series(math.pi / 10, terms=40)
    assert expected == pytest.approx(0.9754777740752495, abs=1e-15)
    assert abs(bessel_j0(math.pi / 10) - expected) < 1e-9


def test_j0_grid_against_series():
    xs = np.linspace(0.0, 40.0, 1000)
    ref = np.array([j0_series(x) for x in xs])
    assert np.max(np.abs(bessel_j0(xs) - ref)) < 1e-12


@pytest.mark.parametrize("x", [-100.0, -37.5, 55.3, 72.0, 99.99, 100.0])
def test_j0_wide_range(x):
    assert abs(bessel_j0(x) - j0_series(abs(x), dps=120)) < 1e-12


@pytest.mark.parametrize("bad", [math.nan, math.inf, -math.inf])
def test_j0_rejects_nonfinite(bad):
    with pytest.raises(ValueError):
        bessel_j0(bad)


def test_target_small_case():
    C = make_target_correlation(FasParams(0.5, 11))
    assert C[0, 0] == 1.0
    assert C[0, 1] == pytest.approx(j0_series(math.pi / 10), abs=1e-12)


def test_target_w15_n18_shape():
    C = make_target_correlation(FasParams(1.5, 18))
    row = C[0]
    first_zero = 2.404825557695773 * 17 / (2 * math.pi * 1.5)
    lobe = row[: int(first_zero) + 1]
    assert np.all(np.diff(lobe) < 0)
    assert np.all(row[int(first_zero) + 1:] < 0.5)
    assert np.any(np.diff(row[int(first_zero) + 1:]) > 0)  # oscillating tail


@given(W=st.floats(0.05, 5.0), N=st.integers(2, 64))
@settings(max_examples=60, deadline=None)
def test_target_invariants(W, N):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        C = make_target_correlation(FasParams(W, N))
    assert np.array_equal(C, C.T)
    assert np.all(np.diag(C) == 1.0)
    assert C.min() >= 0 and C.max() <= 1
    for d in range(N):
        diag = np.diagonal(C, offset=d)
        assert np.all(diag == diag[0])
    check_correlation(C)


def test_params_validation_and_warnings():
    with pytest.raises(ValueError):
        FasParams(0.5, 1)
    with pytest.raises(ValueError):
        FasParams(0.0, 5)
    with pytest.warns(LowDensityWarning):
        FasParams(1.0, 5)
    with pytest.warns(ApertureWarning):
        FasParams(6.0, 60)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        p = FasParams(0.5, 11)
    assert p.density == 22.0


@pytest.mark.parametrize("W,expected", [(0.5, 2), (1.5, 4), (2.3, 8), (1.0, 4), (0.2, 1)])
def test_min_output_ports(W, expected):
    assert min_output_ports(W) == expected


def test_check_correlation_rejects():
    with pytest.raises(ValueError):
        check_correlation(np.array([[1.0, 0.2], [0.3, 1.0]]))
    with pytest.raises(ValueError):
        check_correlation(np.array([[0.9, 0.2], [0.2, 1.0]]))
