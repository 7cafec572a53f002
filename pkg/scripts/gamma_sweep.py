"""Penetration sweeps: where the partition first changes, and which machines drift.

    python3 scripts/gamma_sweep.py [--step 50] [--jobs N] [--out DIR]

For each farm placement the sweep raises gamma until the power flow stops
converging, reports the grid points at which the partition changes, and
ranks the machines of generator 2's area by how much of their slow-mode
weight still sits there versus generator 13's area.
"""
import argparse
import warnings

import numpy as np

from windcoh import pipeline as pl

F = pl.FarmOverride
THREE = (F(32, 200), F(66, 250), F(57, 200))


def drift(label, farms_at, grid, k, named):
    rep = pl.drift_sweep(farms_at, grid, k)
    print(f"\n== {label}: last converged grid value {rep.gamma:g} ==")
    print("machine  nominal margin  final margin")
    for i in sorted(rep.candidates, key=lambda i: rep.margins[i]):
        print("%7d  %14.3f  %12.3f" % (i, rep.nominal_margins[i], rep.margins[i]))
    print(f"first movers (k={k}): {list(rep.first_movers)}; named {list(named)}; "
          f"mean margin shift of named {rep.mean_shift(named):+.3f}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--step", type=float, default=50.0)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()
    warnings.simplefilter("ignore", RuntimeWarning)

    grid = np.arange(0, 2001, args.step)
    tmpl = pl.Scenario(farms=(F(66, 650),), modal=False, simulate=False, pca=False)
    rows = pl.sweep(tmpl, grid, [66, 37, 32, 38], out=args.out, jobs=args.jobs)
    print("label             moved        reference changes   slow Hz")
    for r in rows:
        if r.error:
            print("%-17s ERROR %s" % (r.label, r.error.split(":")[0]))
            continue
        if r.moved or r.ref_changes or r.gamma == 0:
            print("%-17s %-12s %-19s %s" % (r.label, ",".join(map(str, r.moved)) or "-",
                                            ",".join(f"{a}->{b}" for a, b in r.ref_changes) or "-",
                                            " ".join("%.3f" % f for f in r.frequencies)))

    drift("bus 66", lambda g: [F(66, g)], np.arange(650, 3001, args.step), 2, (1, 8))
    drift("bus 37", lambda g: [F(37, g)], np.arange(700, 3001, args.step), 2, (1, 8))
    drift("three farms (scale factor)", lambda s: [F(f.bus, f.gamma * s) for f in THREE],
          1 + 0.25 * np.arange(21), 7, (1, 4, 5, 6, 7, 8, 9))


if __name__ == "__main__":
    main()
