import json

import numpy as np
import pytest

from bistable_phospho.continuation.core import StepConfig
from bistable_phospho.continuation.cycles import (
    FOLD_TOL,
    FoldSeedError,
    continue_cycle_fold_curve,
    cycle_from_simulation,
)
from bistable_phospho.continuation.diagram import diagram_1d
from bistable_phospho.continuation.equilibria import continue_equilibrium
from bistable_phospho.continuation.hopf import (
    bautin_points,
    continue_hopf_curve,
    enclosed_area,
    hopf_curve_tau_kc,
    hopf_residual_ok,
    seed_hopf,
)
from bistable_phospho.continuation.lyapunov import (
    NotAHopfPoint,
    first_lyapunov,
    planar_first_lyapunov,
)
from bistable_phospho.integrate import simulate_reduced
from bistable_phospho.model import ModelParams, jacobian_reduced, rhs_reduced
from bistable_phospho.phase import peak_times

P = ModelParams()


def normal_form(a, b=1.0):
    """Hopf normal form in Cartesian coordinates; l1 = a."""
    def f(z):
        x, y = z
        r2 = x * x + y * y
        return np.array([-y + x * (a * r2) - y * b * r2, x + y * (a * r2) + x * b * r2])
    return f


# --- first Lyapunov coefficient ------------------------------------------

@pytest.mark.parametrize("a", [-1.0, -0.1, 0.1, 1.0])
def test_l1_normal_form_oracle(a):
    assert planar_first_lyapunov(normal_form(a), np.zeros(2)) == pytest.approx(a, rel=1e-6)


def test_l1_degenerate_normal_form():
    assert abs(planar_first_lyapunov(normal_form(0.0), np.zeros(2))) <= 1e-8


def test_l1_requires_hopf_point():
    with pytest.raises(NotAHopfPoint):
        first_lyapunov([1.0, 1.0], P)


# --- equilibrium branches -------------------------------------------------

def test_equilibrium_branch_with_two_hopf_points():
    br = continue_equilibrium(P.replace(tau=0.5, K_c=0.2), "K_c", (0.2, 8.0))
    hopfs = br.events_of("hopf")
    assert len(hopfs) == 2
    assert hopfs[0].u[2] == pytest.approx(1.8202, abs=1e-3)
    assert hopfs[1].u[2] == pytest.approx(4.0916, abs=1e-3)
    for pt in br.points:
        q = P.replace(tau=0.5, K_c=float(pt.u[2]))
        assert np.max(np.abs(rhs_reduced(pt.u[:2], q))) <= 1e-9
    for ev in hopfs:
        q = P.replace(tau=0.5, K_c=float(ev.u[2]))
        J = jacobian_reduced(ev.u[:2], q)
        assert abs(np.trace(J)) <= 1e-8
        assert np.linalg.det(J) > 0
        assert ev.data["omega"] ** 2 == pytest.approx(np.linalg.det(J), rel=1e-6)


def test_no_hopf_outside_the_bell():
    br = continue_equilibrium(P.replace(tau=60.0, K_c=0.2), "K_c", (0.2, 8.0))
    assert br.events_of("hopf") == []
    assert all(pt.info["stable"] for pt in br.points)


@pytest.mark.parametrize("tau,sign", [(10.0, 1), (20.0, 1), (30.0, 1), (50.0, -1)])
def test_lower_hopf_criticality(tau, sign):
    ev = seed_hopf(P.replace(tau=tau, K_c=0.2), "K_c", (0.2, 8.0))
    assert np.sign(ev.data["l1"]) == sign
    assert ev.data["criticality"] == ("subcritical" if sign > 0 else "supercritical")


def test_knt_fold_reaches_negative_knt():
    br = continue_equilibrium(P.replace(tau=60.0, K_c=14.2, k_nt=-0.2), "k_nt", (-0.2, 0.2))
    folds = sorted(e.u[2] for e in br.events_of("fold"))
    assert len(folds) == 2
    assert folds[0] < 0.0
    for e in br.events_of("fold"):
        assert abs(e.data["det"]) <= 1e-6


# --- Hopf curves ----------------------------------------------------------

def test_hopf_bell_is_closed_with_two_bautin_points():
    br = hopf_curve_tau_kc(P)
    assert br.status == "closed"
    assert hopf_residual_ok(br)
    pts = bautin_points(br)
    assert len(pts) == 2
    for b in pts:
        assert 20.0 <= b.location["tau"] <= 60.0
        assert abs(b.l1) <= 1e-6
    taus = br.column("tau")
    assert taus.max() < 55.0
    assert enclosed_area(br, "tau", "K_c") > 0


def test_knt_kc_hopf_region_is_l_shaped():
    ev = seed_hopf(P.replace(tau=10.0, K_c=0.2), "K_c", (0.2, 8.0))
    seed = np.array([ev.u[0], ev.u[1], 0.1, ev.u[2]])
    base = P.replace(tau=10.0, K_c=float(ev.u[2]))
    arms = []
    for s in (1.0, -1.0):
        br = continue_hopf_curve(base, ("k_nt", "K_c"), seed,
                                 bounds={"k_nt": (1e-4, 2.0), "K_c": (0.05, 40.0)},
                                 direction=np.array([0, 0, s, 0]))
        assert br.events_of("hopf_fold_interaction")
        arms.append(np.column_stack([br.column("k_nt"), br.column("K_c")]))
    pts = np.vstack(arms)
    tip = pts[np.argmax(pts[:, 0])]
    # horizontal leg: reaches far in k_nt at small K_c
    assert tip[0] > 0.4 and tip[1] < 1.0
    # vertical leg: K_c grows large as k_nt goes to zero
    near_zero = pts[pts[:, 0] < 0.01]
    assert near_zero[:, 1].max() > 10 * tip[1]
    assert all(a[-1, 0] < 0.01 for a in arms)


# --- limit cycles ---------------------------------------------------------

def test_reference_cycle_stable_and_matches_simulation():
    sol = cycle_from_simulation(P)
    assert sol.stable
    tr = simulate_reduced(P, [1.0, 0.1], 1500.0, output_times=np.linspace(0, 1500, 300001))
    keep = tr.times > 500
    tp, _ = peak_times(tr.times[keep], tr.states[keep, 0])
    assert sol.period == pytest.approx(float(np.median(np.diff(tp))), abs=1e-3)


@pytest.fixture(scope="module")
def diagram_tau30():
    return diagram_1d(P.replace(tau=30.0), "K_c", (0.2, 8.0))


def test_subcritical_slice_has_folds_of_cycles(diagram_tau30):
    dia = diagram_tau30
    hopfs = dia.hopf_events()
    assert len(hopfs) == 2 and all(e.data["l1"] > 0 for e in hopfs)
    folds = dia.cycle_folds()
    assert len(folds) == 2
    br = dia.cycles[0]
    mus = np.array([pt.info["mu"] for pt in br.points])
    assert np.any(np.abs(mus) < 1) and np.any(np.abs(mus) > 1)
    for ev in folds:
        assert abs(ev.data["mu"] - 1.0) <= FOLD_TOL
        assert ev.index > 0
        # the multiplier changes side of 1 across each fold
        assert (mus[ev.index - 1] - 1) * (mus[min(ev.index + 1, len(mus) - 1)] - 1) <= 0


def test_fold_seed_must_have_unit_multiplier(diagram_tau30):
    br = diagram_tau30.cycles[0]
    pt = br.points[len(br.points) // 2]
    assert abs(pt.info["mu"] - 1.0) > 1e-3
    with pytest.raises(FoldSeedError):
        continue_cycle_fold_curve(P.replace(tau=30.0), ("K_c", "tau"), pt.u,
                                  step_cfg=StepConfig(max_points=2))


def test_supercritical_slice_has_only_stable_cycles():
    dia = diagram_1d(P.replace(tau=50.0), "K_c", (0.2, 8.0))
    hopfs = dia.hopf_events()
    assert len(hopfs) == 2 and all(e.data["l1"] < 0 for e in hopfs)
    assert dia.cycle_folds() == []
    assert dia.cycles
    for br in dia.cycles:
        assert all(abs(pt.info["mu"]) < 1 for pt in br.points)


def test_diagram_write(tmp_path, diagram_tau30):
    paths = diagram_tau30.write(tmp_path)
    data = json.loads((tmp_path / "diagram.json").read_text())
    assert data["kind"] == "eq1d" and data["free"] == "K_c"
    assert len(data["equilibrium_branches"]) == len(diagram_tau30.equilibria)
    header = (tmp_path / "diagram_cycle0.csv").read_text().splitlines()[0]
    assert header == "param,T,mu,stable,c_no_min,c_no_max,amplitude"
    assert all(p.startswith(str(tmp_path)) for p in paths)


def test_cycle_fold_curve_ends_tangent_at_bautin_point(diagram_tau30):
    hopf = hopf_curve_tau_kc(P)
    H = np.column_stack([hopf.column("tau"), hopf.column("K_c")])
    ev = diagram_tau30.cycle_folds()[0]
    d = np.zeros(ev.u.size + 1)
    d[4] = 1.0
    cfg = StepConfig(ds=1e-2, ds_max=0.5, max_points=2000, newton_tol=5e-10, max_seconds=120)
    br = continue_cycle_fold_curve(P.replace(tau=30.0, K_c=float(ev.u[3])), ("K_c", "tau"), ev,
                                   step_cfg=cfg, bounds={"K_c": (0.2, 8.0), "tau": (0.01, 500)},
                                   direction=d)
    assert br.message.startswith("Hopf endpoint")
    F = np.column_stack([br.column("tau"), br.column("K_c")])
    dist = [np.linalg.norm(np.array([b.location["tau"], b.location["K_c"]]) - F[-1])
            for b in bautin_points(hopf)]
    assert min(dist) <= 0.1
    i = int(np.argmin(np.linalg.norm(H - F[-1], axis=1)))
    th = H[i + 1] - H[i - 1]
    tf = F[-1] - F[-6]
    cos = abs(th @ tf) / (np.linalg.norm(th) * np.linalg.norm(tf))
    assert cos >= np.cos(np.radians(5.0))
