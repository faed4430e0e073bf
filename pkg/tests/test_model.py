import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bistable_phospho.model import (
    ModelDomainError,
    ModelParams,
    f_dp,
    f_p,
    f_sca,
    f_sca_piecewise,
    f_sca_smooth,
    from_phase,
    jacobian_reduced,
    manifold_state,
    quasi_steady_fractions,
    rhs_full,
    rhs_reduced,
    to_phase,
)

P = ModelParams()

conc = st.floats(min_value=1e-3, max_value=10.0, allow_nan=False)
params_st = st.builds(
    ModelParams,
    k_vn=st.floats(0.01, 1.0),
    k_vcy=st.floats(0.01, 1.0),
    k_nt=st.floats(-0.2, 1.0),
    K_c=st.floats(0.2, 20.0),
    tau=st.floats(0.01, 100.0),
    A_cyto=st.floats(0.01, 1.0),
    A_n=st.floats(0.1, 5.0),
    m=st.floats(1.0, 6.0),
    m_sca=st.floats(1.0, 6.0),
)


def fd_jacobian(x, p, h_rel=1e-6):
    x = np.asarray(x, float)
    h = h_rel * max(1.0, np.linalg.norm(x))
    J = np.empty((2, 2))
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        J[:, j] = (rhs_reduced(x + e, p) - rhs_reduced(x - e, p)) / (2 * h)
    return J


# --- scaling functions ---------------------------------------------------

def test_fsca_piecewise_examples():
    assert f_sca_piecewise(0.0, 2.75) == pytest.approx(3.4375, rel=1e-15)
    assert f_sca_piecewise(9.0 / 32.0, 1.0) == pytest.approx(0.125, rel=1e-14)
    assert f_sca_piecewise(10.0, 1.0) == 0.125


def test_fsca_smooth_examples():
    for q in (1.0, 3.0, 4.0, 7.5):
        assert f_sca_smooth(0.0, 2.75, q) == pytest.approx(3.4375, rel=1e-15)
    assert f_sca_smooth(9.0 / 64.0, 1.0, 4.0) == pytest.approx(0.6875, rel=1e-14)
    assert f_sca_smooth(2e3, 2.0, 4.0) == pytest.approx(0.25, rel=1e-6)


@pytest.mark.parametrize("fn", [lambda c: f_sca_piecewise(c, 0.0),
                                lambda c: f_sca_smooth(c, -1.0, 4.0)])
def test_fsca_rejects_nonpositive_kc(fn):
    with pytest.raises(ModelDomainError):
        fn(1.0)


@given(a=conc, b=conc, K=st.floats(0.1, 20.0), q=st.floats(1.0, 8.0))
def test_fsca_variants_nonincreasing_with_common_bounds(a, b, K, q):
    lo, hi = min(a, b), max(a, b)
    assert f_sca_piecewise(hi, K) <= f_sca_piecewise(lo, K)
    assert f_sca_smooth(hi, K, q) <= f_sca_smooth(lo, K, q) + 1e-15 * K
    for v in (f_sca_piecewise(lo, K), f_sca_smooth(lo, K, q)):
        assert K / 8 * (1 - 1e-12) <= v <= 1.25 * K * (1 + 1e-12)
    assert f_sca_piecewise(0.0, K) == f_sca_smooth(0.0, K, q)


# --- propensities --------------------------------------------------------

def test_fp_origin_is_zero():
    assert f_p(0.0, 0.0, P) == 0.0
    assert f_p(0.0, 0.0, P.replace(use_piecewise_fsca=True)) == 0.0


def test_fp_symmetric_point():
    c_nop = 1.0
    total = f_sca(c_nop, P)
    assert f_p(total - c_nop, c_nop, P) == pytest.approx(total / (2 * P.tau), rel=1e-12)


def test_fp_variants_agree_at_zero_cnop():
    pw = P.replace(use_piecewise_fsca=True)
    for c_no in (0.1, 1.0, 7.0):
        assert f_p(c_no, 0.0, P) == f_p(c_no, 0.0, pw)


def test_fdp_examples():
    p = P.replace(tau=0.5)
    assert f_dp(0.0, p) == 0.0
    assert f_dp(2.0, p) == 4.0
    assert f_dp(3.7, P.replace(tau=1.0)) == 3.7


# --- right-hand sides ----------------------------------------------------

def test_rhs_reduced_at_origin():
    d = rhs_reduced((0.0, 0.0), P)
    assert tuple(d) == (P.k_vn, 0.0)


@settings(max_examples=200)
@given(c_no=conc, c_nop=conc, p=params_st)
def test_rhs_reduced_sum_identity(c_no, c_nop, p):
    d = rhs_reduced((c_no, c_nop), p)
    g = p.A_cyto * (p.k_vn + p.k_vcy - p.k_nt * c_nop)
    expected = p.k_vn - p.k_nt * c_nop - (c_no + c_nop) * g
    scale = max(1.0, abs(d[0]), abs(d[1]))
    assert d[0] + d[1] == pytest.approx(expected, abs=1e-12 * scale)


@given(c_no=conc, c_nop=conc)
def test_rhs_sum_degenerate_parameters(c_no, c_nop):
    # A_cyto must be positive, so take it tiny and compare with the limit
    p = P.replace(k_nt=0.0, A_cyto=1e-300)
    d = rhs_reduced((c_no, c_nop), p)
    assert d[0] + d[1] == pytest.approx(p.k_vn, abs=1e-12 * max(1.0, abs(d[0])))


def test_rhs_full_matches_reduced_and_special_cases():
    x = np.array(manifold_state(1.2, 0.7, P, c_ni=0.3))
    d = rhs_full(x, P)
    np.testing.assert_array_equal(d[:2], rhs_reduced(x[:2], P))
    y = x.copy()
    y[1] = 0.0
    y[3] = 1 / P.A_cyto - y[0]
    d = rhs_full(y, P)
    assert d[2] == 0.0 and d[5] == 0.0
    assert d[4] == pytest.approx(-P.A_cyto * (P.k_vn + P.k_vcy) * y[4], rel=1e-15)
    z = x.copy()
    z[2] = 1.0 / P.A_n
    assert rhs_full(z, P)[2] == 0.0


@given(c_no=st.floats(0.0, 5.0), c_nop=st.floats(0.0, 5.0), p=params_st)
def test_rhs_full_conserves_cytoplasmic_sum(c_no, c_nop, p):
    if c_no + c_nop > 1 / p.A_cyto:
        return
    x = np.array(manifold_state(c_no, c_nop, p))
    d = rhs_full(x, p)
    scale = max(1.0, *np.abs(d[[0, 1, 3]]))
    assert abs(d[0] + d[1] + d[3]) <= 1e-12 * scale


def test_rhs_full_rejects_singular_volumes():
    x = np.array(manifold_state(1.0, 1.0, P))
    bad = x.copy()
    bad[4] = 0.0
    with pytest.raises(ZeroDivisionError):
        rhs_full(bad, P)
    bad = x.copy()
    bad[6] = -1.0
    with pytest.raises(ZeroDivisionError):
        rhs_full(bad, P)


# --- Jacobian ------------------------------------------------------------

def test_jacobian_linear_terms_at_origin():
    J = jacobian_reduced((0.0, 0.0), P)
    # f_p vanishes to second order at the origin for m >= 1 here (m = 3)
    expected = -1 / P.tau - P.k_nt - P.A_cyto * (P.k_vn + P.k_vcy)
    assert J[1, 1] == pytest.approx(expected, rel=1e-12)
    np.testing.assert_allclose(J, fd_jacobian((0.0, 0.0), P), rtol=1e-6, atol=1e-9)


def test_jacobian_matches_fd_at_random_states():
    rng = np.random.default_rng(12345)
    for x in rng.uniform(0.0, 10.0, size=(100, 2)):
        Ja = jacobian_reduced(x, P)
        Jf = fd_jacobian(x, P)
        assert np.max(np.abs(Ja - Jf)) <= 1e-5 * np.max(np.abs(Ja)), x


@settings(max_examples=100)
@given(c_no=st.floats(0.05, 10.0), c_nop=st.floats(0.05, 10.0), p=params_st)
def test_jacobian_matches_fd_property(c_no, c_nop, p):
    x = np.array([c_no, c_nop])
    Ja = jacobian_reduced(x, p)
    Jf = fd_jacobian(x, p)
    assert np.max(np.abs(Ja - Jf)) <= 1e-5 * max(np.max(np.abs(Ja)), 1e-8)


def test_jacobian_acyto_terms_are_affine_in_state():
    def D(x):
        return jacobian_reduced(x, P.replace(A_cyto=0.2)) - jacobian_reduced(x, P)
    x, y = np.array([1.3, 0.4]), np.array([0.2, 2.1])
    np.testing.assert_allclose(D(x + y) - D(x) - D(y) + D(np.zeros(2)), 0.0, atol=1e-10)


def test_jacobian_warns_at_piecewise_kink():
    p = P.replace(use_piecewise_fsca=True)
    with pytest.warns(RuntimeWarning):
        jacobian_reduced((1.0, 9 * p.K_c / 32), p)


# --- parameters and coordinates -------------------------------------------

@pytest.mark.parametrize("field,value", [
    ("k_vn", 0.0), ("k_vcy", -1.0), ("K_c", 0.0), ("tau", -0.1), ("A_cyto", 0.0),
    ("A_n", 0.0), ("m", 0.5), ("m_sca", 0.9), ("sigma", -1e-3), ("k_nt", math.inf),
    ("tau", math.nan),
])
def test_param_domain(field, value):
    with pytest.raises(ModelDomainError):
        ModelParams(**{field: value})


def test_negative_knt_allowed():
    assert ModelParams(k_nt=-0.05).k_nt == -0.05


@given(total=st.floats(1e-3, 50.0), frac=st.floats(0.0, 1.0))
def test_phase_round_trip(total, frac):
    s = from_phase(total, frac)
    pp = to_phase(*s)
    assert pp.total == pytest.approx(total, rel=1e-12)
    assert pp.frac == pytest.approx(frac, abs=1e-12)


def test_manifold_state_rejects_overfull():
    with pytest.raises(ValueError):
        manifold_state(15.0, 10.0, P)


# --- quasi-steady fractions ----------------------------------------------

def _g(frac, total, p):
    tm = total**p.m
    return frac - tm / (tm + f_sca(frac * total, p) ** p.m)


def test_qs_limits():
    lo = quasi_steady_fractions(1e-4, P)
    hi = quasi_steady_fractions(1e4, P)
    assert len(lo) == 1 and lo[0] < 1e-6
    assert len(hi) == 1 and hi[0] > 1 - 1e-6


def test_qs_three_roots_at_reference_point():
    counts = [len(quasi_steady_fractions(T, P)) for T in np.linspace(0.5, 1 / P.A_cyto, 200)]
    assert 3 in counts
    assert set(counts) <= {1, 2, 3}


@settings(max_examples=60, deadline=None)
@given(total=st.floats(0.05, 20.0), p=params_st)
def test_qs_roots_solve_relation(total, p):
    roots = quasi_steady_fractions(total, p)
    assert 1 <= len(roots) <= 3
    for r in roots:
        assert 0.0 <= r <= 1.0
        assert abs(_g(r, total, p)) <= 1e-10


def test_qs_rejects_nonpositive_total():
    with pytest.raises(ValueError):
        quasi_steady_fractions(0.0, P)
