"""Plot recipes for the CSV/JSON outputs of ``bistable-phospho``.

Needs matplotlib, which the package itself does not depend on. Each recipe
reads an output directory and writes one PNG next to it:

    python scripts/cookbook.py phase out/nullclines out/sim
    python scripts/cookbook.py diagram out/diag20
    python scripts/cookbook.py hopf out/hopf_knt0.05 out/hopf_knt0.1 out/hopf_knt0.2
    python scripts/cookbook.py grid out/grid
    python scripts/cookbook.py sr out/sr
    python scripts/cookbook.py periods out/per05 out/per45

See docs/cookbook.md for the command lines that produce the inputs.
"""
from __future__ import annotations

import argparse
import csv
import json
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))

    def conv(v):
        if v in ("true", "false"):
            return v == "true"
        try:
            return float(v)
        except ValueError:
            return v

    return [{k: conv(v) for k, v in r.items()} for r in rows]


def column(rows, key):
    return [r[key] for r in rows]


def save(fig, outdir, name):
    path = os.path.join(outdir, name)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    print(path)


def phase(dirs):
    """Nullclines and equilibria in (c_no, c_nop), plus an optional trajectory."""
    nd = dirs[0]
    fig, ax = plt.subplots(figsize=(5, 4))
    for which, style in (("c_no", "--"), ("c_nop", "-")):
        rows = read_csv(os.path.join(nd, f"nullcline_{which}.csv"))
        for k in sorted({r["polyline"] for r in rows}):
            seg = [r for r in rows if r["polyline"] == k]
            x = [r["total"] * (1 - r["frac"]) for r in seg]
            y = [r["total"] * r["frac"] for r in seg]
            ax.plot(x, y, style, color="k" if which == "c_no" else "tab:red", lw=1,
                    label=f"{which}-nullcline" if k == 0 else None)
    for e in read_csv(os.path.join(nd, "equilibria.csv")):
        filled = str(e["kind"]).startswith("stable")
        ax.plot(e["c_no"], e["c_nop"], "o", color="tab:blue",
                mfc="tab:blue" if filled else "white")
    if len(dirs) > 1:
        tr = read_csv(os.path.join(dirs[1], "trajectory.csv"))
        ax.plot(column(tr, "c_no"), column(tr, "c_nop"), color="tab:green", lw=0.8,
                label="trajectory")
    ax.set_xlabel("c_no")
    ax.set_ylabel("c_nop")
    ax.legend(frameon=False)
    save(fig, nd, "phase.png")


def diagram(dirs):
    """One-parameter diagram: equilibria by stability, cycle extrema by stability."""
    d = dirs[0]
    data = json.load(open(os.path.join(d, "diagram.json")))
    fig, ax = plt.subplots(figsize=(5, 4))
    for br in data["equilibrium_branches"]:
        pts = br["points"]
        for flag, style in ((True, "-"), (False, "--")):
            xs = [p["u"][2] if p["stable"] == flag else float("nan") for p in pts]
            ys = [p["u"][0] for p in pts]
            ax.plot(xs, ys, style, color="k", lw=1)
    for br in data["cycle_branches"]:
        pts = br["points"]
        for flag, color in ((True, "tab:blue"), (False, "tab:red")):
            xs = [p["u"][3] if p["stable"] == flag else float("nan") for p in pts]
            ax.plot(xs, [p["c_no_max"] for p in pts], color=color, lw=1)
            ax.plot(xs, [p["c_no_min"] for p in pts], color=color, lw=1)
    ax.set_xlabel(data["free"])
    ax.set_ylabel("c_no")
    save(fig, d, "diagram.png")


def hopf(dirs):
    """Hopf curves in (tau, K_c) from several hopf2d runs, Bautin points marked."""
    fig, ax = plt.subplots(figsize=(5, 4))
    for d in dirs:
        br = json.load(open(os.path.join(d, "hopf2d.json")))
        names = br["names"]
        x = [p["u"][2] for p in br["points"]]
        y = [p["u"][3] for p in br["points"]]
        knt = br["meta"]["params"]["k_nt"]
        ax.plot(x, y, lw=1, label=f"k_nt = {knt:g}")
        for ev in br["events"]:
            if ev["kind"] == "bautin":
                ax.plot(ev["u"][2], ev["u"][3], "ko", ms=4)
    ax.set_xlabel(names[2])
    ax.set_ylabel(names[3])
    ax.legend(frameon=False)
    save(fig, dirs[0], "hopf.png")


def grid(dirs):
    d = dirs[0]
    rows = read_csv(os.path.join(d, "regime_grid.csv"))
    labels = sorted({r["label"] for r in rows})
    fig, ax = plt.subplots(figsize=(5, 4))
    for lab in labels:
        sel = [r for r in rows if r["label"] == lab]
        ax.scatter(column(sel, "p1"), column(sel, "p2"), s=25, label=lab)
    meta = json.load(open(os.path.join(d, "regime-grid.meta.json")))
    opts = meta["config"]["regime-grid"]
    ax.set_xlabel(opts["p1"])
    ax.set_ylabel(opts["p2"])
    ax.legend(frameon=False, fontsize=7)
    save(fig, d, "regime_grid.png")


def sr(dirs):
    d = dirs[0]
    rows = read_csv(os.path.join(d, "sr.csv"))
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.errorbar(column(rows, "sigma"), column(rows, "mean_amplitude"),
                yerr=column(rows, "stderr"), marker="o", ms=3, lw=1)
    ax.set_xscale("log")
    ax.set_xlabel("sigma")
    ax.set_ylabel("Fourier peak amplitude of c_no")
    save(fig, d, "sr.png")


def periods(dirs):
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(8, 3.5))
    for d in dirs:
        rows = [r for r in read_csv(os.path.join(d, "periods.csv")) if r["n_periods"] >= 2]
        meta = json.load(open(os.path.join(d, "periods.meta.json")))
        label = f"tau = {meta['config']['model']['tau']:g}"
        a1.plot(column(rows, "param"), column(rows, "cv"), "o-", ms=3, label=label)
        a2.plot(column(rows, "param"), column(rows, "mean_period"), "o-", ms=3, label=label)
    a1.set_ylabel("CV of period")
    a2.set_ylabel("mean period")
    for a in (a1, a2):
        a.set_xlabel(meta["config"]["periods"]["free"])
        a.legend(frameon=False)
    save(fig, dirs[0], "periods.png")


RECIPES = {"phase": phase, "diagram": diagram, "hopf": hopf, "grid": grid, "sr": sr,
           "periods": periods}


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("recipe", choices=sorted(RECIPES))
    ap.add_argument("dirs", nargs="+", help="output directories of bistable-phospho runs")
    args = ap.parse_args()
    RECIPES[args.recipe](args.dirs)


if __name__ == "__main__":
    main()
