import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bistable_phospho.model import ModelParams, from_phase, rhs_reduced
from bistable_phospho.phase import (
    classify_jacobian,
    classify_regime,
    find_equilibria,
    nullcline_roots,
    observe_oscillation,
    regime_grid,
    trace_nullclines,
)

P = ModelParams()
BISTABLE = P.replace(K_c=14.2, tau=5.0, k_nt=0.00397)


def _intersections(lines, params) -> int:
    """Sign changes of the c_nop component along the traced c_no-nullcline.

    Polylines ending (or starting) at the same total meet at a fold, so the
    curve is followed through the fold by comparing their end values.
    """
    count = 0
    ends = {}
    for pl in lines["c_no"]:
        a = pl.array()
        h = np.array([rhs_reduced(from_phase(t, f), params)[1] for t, f in a])
        count += int(np.sum(np.sign(h[1:]) * np.sign(h[:-1]) < 0))
        for k in (0, -1):
            ends.setdefault((k, round(a[k, 0], 12)), []).append((a[k, 1], h[k]))
    for group in ends.values():
        group.sort()
        for (_, h0), (_, h1) in zip(group, group[1:]):
            count += int(np.sign(h0) * np.sign(h1) < 0)
    return count


def test_equilibria_reference_point():
    eqs = find_equilibria(P)
    assert len(eqs) == 1
    assert not eqs[0].stable
    assert eqs[0].residual <= 1e-10


def test_equilibria_high_and_low():
    hi = find_equilibria(P.replace(K_c=1.0))
    lo = find_equilibria(P.replace(K_c=4.2))
    assert len(hi) == 1 and hi[0].stable
    assert len(lo) == 1 and lo[0].stable
    assert hi[0].frac > 0.5 > lo[0].frac


def test_bistable_triple():
    eqs = find_equilibria(BISTABLE)
    assert len(eqs) == 3
    assert sorted(e.stable for e in eqs) == [False, True, True]
    assert "saddle" in [e.kind for e in eqs]


@pytest.mark.parametrize("params", [P, P.replace(K_c=1.0), P.replace(K_c=4.2), BISTABLE,
                                    P.replace(tau=20.0, K_c=3.0)])
def test_equilibrium_count_matches_nullcline_intersections(params):
    eqs = find_equilibria(params)
    lines = trace_nullclines(params, (1e-3, 1 / params.A_cyto), 2000)
    assert len(eqs) == _intersections(lines, params)
    for e in eqs:
        assert e.residual <= 1e-10


def test_nullcline_points_satisfy_residual():
    lines = trace_nullclines(P, (1e-3, 20.0), 300)
    for which, col in (("c_no", 0), ("c_nop", 1)):
        for pl in lines[which]:
            for total, frac in pl.array():
                assert abs(rhs_reduced(from_phase(total, frac), P)[col]) <= 1e-8


def test_equilibria_lie_on_both_nullclines():
    lines = trace_nullclines(BISTABLE, (1e-3, 20.0), 2000)
    for e in find_equilibria(BISTABLE):
        for which in ("c_no", "c_nop"):
            pts = np.vstack([pl.array() for pl in lines[which]])
            d = np.min(np.hypot(pts[:, 0] - e.total, pts[:, 1] - e.frac))
            assert d <= 20.0 / 2000 + 1e-3


def test_nullclines_s_shaped_at_reference_point():
    lines = trace_nullclines(P, (1e-3, 20.0), 400)
    for which in ("c_no", "c_nop"):
        counts = [len(nullcline_roots(T, P, which)) for T in np.linspace(1e-3, 20.0, 400)]
        assert max(counts) == 3
        assert len(lines[which]) >= 2


def test_cnop_nullcline_step_like_at_slow_phosphorylation():
    p = P.replace(tau=70.0)
    assert {len(nullcline_roots(T, p, "c_nop")) for T in np.linspace(1e-3, 20.0, 400)} == {1}


def test_knt_moves_cnop_nullcline_more_than_cno_nullcline():
    totals = np.linspace(1e-2, 20.0, 400)
    peaks = {"c_no": [], "c_nop": []}
    for knt in (0.005, 0.02, 0.1):
        q = P.replace(K_c=6.56, tau=14.5, k_nt=knt)
        for which in peaks:
            peaks[which].append(max(max(nullcline_roots(T, q, which), default=0.0)
                                    for T in totals))
    rel = {w: (max(v) - min(v)) / max(v) for w, v in peaks.items()}
    assert np.all(np.diff(peaks["c_nop"]) < 0)
    assert rel["c_no"] < 0.5 * rel["c_nop"]


def test_trace_nullclines_rejects_bad_range():
    with pytest.raises(ValueError):
        trace_nullclines(P, (0.0, 1.0))


@settings(max_examples=200)
@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5))
def test_jacobian_classification_rules(a, b, c, d):
    J = np.array([[a, b], [c, d]])
    tr, det = a + d, a * d - b * c
    if abs(det) < 1e-9 or abs(tr) < 1e-9:
        return
    kind, ev = classify_jacobian(J)
    if det < 0:
        assert kind == "saddle"
    elif tr < 0:
        assert kind.startswith("stable")
        assert all(z.real < 0 for z in ev)
    else:
        assert kind.startswith("unstable")
    if det > 0 and tr * tr - 4 * det < -1e-9:
        assert kind.endswith("focus")


def test_observe_oscillation():
    t = np.linspace(0, 100, 10001)
    assert observe_oscillation(t, np.sin(t))[0]
    assert not observe_oscillation(t, 1e-4 * np.sin(t))[0]
    assert not observe_oscillation(t, np.exp(-t))[0]


def test_regimes():
    assert classify_regime(P).label == "unique-stable-cycle"
    assert classify_regime(P.replace(K_c=1.0)).label == "unique-stable-eq"
    assert classify_regime(BISTABLE).label == "bistable-equilibria"


def test_probes_at_equilibrium_give_stable_eq():
    p = P.replace(K_c=4.2)
    e = find_equilibria(p)[0]
    assert classify_regime(p, probes=[np.array(e.state)]).label == "unique-stable-eq"


def test_regime_grid_layout_and_jobs_independence():
    args = (P, "tau", [0.01, 80.0], "K_c", [1.0, 2.75])
    g1 = regime_grid(*args, t_transient=1500.0, t_observe=600.0)
    assert [(a, b) for a, b, _ in g1] == [(0.01, 1.0), (0.01, 2.75), (80.0, 1.0), (80.0, 2.75)]
    labels = dict(((a, b), lab) for a, b, lab in g1)
    assert labels[(0.01, 2.75)] == "unique-stable-cycle"
    # outside the bell only equilibria remain
    assert labels[(80.0, 1.0)] == labels[(80.0, 2.75)] == "unique-stable-eq"
    g2 = regime_grid(*args, t_transient=1500.0, t_observe=600.0, jobs=2)
    assert g1 == g2


def test_regime_grid_invalid_cell():
    g = regime_grid(P, "tau", [-1.0], "K_c", [2.0], t_transient=10.0, t_observe=10.0)
    assert g == [(-1.0, 2.0, "indeterminate")]
