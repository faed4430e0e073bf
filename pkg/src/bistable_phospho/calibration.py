"""Bistability scan that produces the shipped default parameters.

m, m_sca, k_vn, k_vcy and A_cyto are not fixed by the model's sources, so
the defaults are chosen by scanning candidates in a fixed order and keeping
the first one whose behaviour has the required structure:

1. at K_c = 2.75, tau = 0.01, k_nt = 0.1 the quasi-steady fraction curve has
   three roots over a nonempty range of totals, the single equilibrium is
   unstable and simulations settle on a limit cycle;
2. at tau = 0.01 the equilibrium is unique and stable with a high
   phosphorylated fraction at K_c = 1 and a low one at K_c = 4.2;
3. at K_c = 14.2, tau = 5, k_nt = 0.00397 there are three equilibria, two of
   them stable;
4. the Hopf curve in (tau, K_c) at k_nt = 0.1 closes and carries exactly two
   Bautin points, both with tau in [20, 60].

Exponent pairs are ordered by their larger member, then their sum, then m,
so the first hit has the smallest common bound on both exponents. The rates
are scanned through k_vn, A_cyto and the cytoplasmic dilution rate
a = A_cyto (k_vn + k_vcy). A_n only enters the nuclear import equation and
is fixed at 1.
"""
from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field

import numpy as np

from .model import ModelDomainError, ModelParams, quasi_steady_fractions
from .phase import classify_regime, find_equilibria

REFERENCE_POINT = {"K_c": 2.75, "tau": 0.01, "k_nt": 0.1}
LOW_KC, HIGH_KC = 1.0, 4.2
BISTABLE_POINT = {"K_c": 14.2, "tau": 5.0, "k_nt": 0.00397}
BAUTIN_TAU = (20.0, 60.0)

EXPONENTS = range(1, 7)
K_VN = (0.02, 0.05, 0.1, 0.2)
DILUTION = (0.004, 0.006, 0.008, 0.01, 0.015, 0.02)
A_CYTO = (0.02, 0.05, 0.1, 0.2)


def exponent_pairs(values=EXPONENTS) -> list[tuple[int, int]]:
    return sorted(itertools.product(values, values), key=lambda q: (max(q), sum(q), q[0]))


def candidates():
    """Candidate parameter sets in scan order (invalid combinations skipped)."""
    for m, m_sca in exponent_pairs():
        for k_vn, a, A in itertools.product(K_VN, DILUTION, A_CYTO):
            k_vcy = round(a / A - k_vn, 12)
            if k_vcy <= 0:
                continue
            try:
                yield ModelParams(k_vn=k_vn, k_vcy=k_vcy, A_cyto=A, A_n=1.0, m=float(m),
                                  m_sca=float(m_sca), **REFERENCE_POINT)
            except ModelDomainError:
                continue


@dataclass
class CandidateReport:
    params: ModelParams
    passed: bool
    failed: str | None = None
    details: dict = field(default_factory=dict)


def _unique_label(params: ModelParams) -> str:
    eqs = find_equilibria(params, grid=200)
    if len(eqs) != 1:
        return f"{len(eqs)} equilibria"
    e = eqs[0]
    if not e.stable:
        return "unstable"
    return "high" if e.frac > 0.5 else "low"


def s_shape_interval(params: ModelParams, n: int = 200) -> tuple[float, float] | None:
    """Range of totals (on an n-point grid up to 1/A_cyto) with three quasi-steady roots."""
    totals = np.linspace(1e-3, 1.0 / params.A_cyto, n)
    three = [T for T in totals if len(quasi_steady_fractions(T, params)) == 3]
    return (float(min(three)), float(max(three))) if three else None


def check_candidate(params: ModelParams, simulate: bool = True) -> CandidateReport:
    """Run the targets cheapest first; stops at the first failure."""
    from .continuation.hopf import bautin_points, hopf_curve_tau_kc

    base = params.replace(**REFERENCE_POINT)
    rep = CandidateReport(base, False)
    if _unique_label(base) != "unstable":
        rep.failed = "reference point does not have a single unstable equilibrium"
        return rep
    if _unique_label(base.replace(K_c=LOW_KC)) != "high":
        rep.failed = f"K_c={LOW_KC}: no unique stable high-fraction equilibrium"
        return rep
    if _unique_label(base.replace(K_c=HIGH_KC)) != "low":
        rep.failed = f"K_c={HIGH_KC}: no unique stable low-fraction equilibrium"
        return rep
    band = s_shape_interval(base)
    if band is None:
        rep.failed = "quasi-steady fraction curve is not S-shaped"
        return rep
    rep.details["s_shape_totals"] = list(band)
    eqs = find_equilibria(base.replace(**BISTABLE_POINT))
    if len(eqs) != 3 or sum(e.stable for e in eqs) != 2:
        rep.failed = "no bistable triple of equilibria"
        return rep
    br = hopf_curve_tau_kc(base)
    taus = sorted(b.location["tau"] for b in bautin_points(br))
    rep.details["hopf_curve"] = br.status
    rep.details["bautin_tau"] = taus
    if br.status != "closed" or len(taus) != 2 or \
            not all(BAUTIN_TAU[0] <= t <= BAUTIN_TAU[1] for t in taus):
        rep.failed = "Hopf curve does not close with two Bautin points in the tau window"
        return rep
    if simulate:
        label = classify_regime(base).label
        rep.details["regime"] = label
        if label != "unique-stable-cycle":
            rep.failed = f"simulation at the reference point gives {label}"
            return rep
    rep.passed = True
    return rep


def calibrate(first_only: bool = True, progress=None, limit: int | None = None
              ) -> list[CandidateReport]:
    """Scan :func:`candidates`; returns the passing reports (the first only by default).

    ``progress(i, report, seconds)`` is called after each candidate.
    """
    hits = []
    t0 = time.monotonic()
    for i, p in enumerate(candidates()):
        if limit is not None and i >= limit:
            break
        rep = check_candidate(p)
        if progress is not None:
            progress(i, rep, time.monotonic() - t0)
        if rep.passed:
            hits.append(rep)
            if first_only:
                break
    return hits


CALIBRATED_KEYS = ("k_vn", "k_vcy", "A_cyto", "A_n", "m", "m_sca")


def config_text(rep: CandidateReport) -> str:
    """Default config file for a passing candidate."""
    from .config import format_value

    p = rep.params
    lines = [
        "# Default parameters of bistable_phospho.",
        "#",
        "# k_vn, k_vcy, A_cyto, A_n, m and m_sca are calibrated (derived): they come",
        "# from the bistability scan of `bistable-phospho calibrate`, not from",
        "# published values. K_c, tau and k_nt are the reference point of the scan.",
    ]
    for k, v in rep.details.items():
        lines.append(f"# scan: {k} = {v}")
    lines += ["", "[model]"]
    for k, v in p.to_dict().items():
        tag = "  # calibrated" if k in CALIBRATED_KEYS else ""
        lines.append(f"{k} = {format_value(v)}{tag}")
    return "\n".join(lines) + "\n"
