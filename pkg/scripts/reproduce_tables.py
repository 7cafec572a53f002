"""Print the area / slow-mode tables for the benchmark scenarios.

    python3 scripts/reproduce_tables.py [--out DIR] [--damping SIGMA]

With --out each scenario's full bundle is written to DIR/<name>.
"""
import argparse
import warnings

import numpy as np

from windcoh import dynsim as ds
from windcoh import pipeline as pl

F = pl.FarmOverride
SCENARIOS = [
    ("nominal", ()),
    ("bus66_g650", (F(66, 650),)),
    ("bus37_g700", (F(37, 700),)),
    ("bus32_g700", (F(32, 700),)),
    ("bus38_g700", (F(38, 700),)),
    ("three_farms", (F(32, 200), F(66, 250), F(57, 200))),
]


def table(res, sigma):
    p = res.partition
    slow = ds.slow_modes(res.modes, p.r) if res.modes else []
    print("%-5s %-34s %-22s %s" % ("Area", "Generators (reference first)", "slow mode", "Hz"))
    for k, area in enumerate(p.areas):
        mode, f = "", ""
        if k < len(slow):
            lam = slow[k].eigenvalue
            mode, f = "%.4f +- j%.4f" % (lam.real, lam.imag), "%.3f" % slow[k].frequency_hz
        print("%-5d %-34s %-22s %s" % (k + 1, ",".join(str(i + 1) for i in area), mode, f))
    print("undamped slow frequencies of M^-1 L_eq (Hz): "
          + ", ".join("%.3f" % x for x in p.frequencies))
    if res.case_wind is not None:
        print("moved generators: " + (",".join(str(i + 1) for i in sorted(res.moved)) or "none")
              + "; reference changes: "
              + (", ".join(f"{a + 1}->{b + 1}" for a, b in res.ref_changes) or "none"))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default=None)
    ap.add_argument("--damping", type=float, default=0.13)
    args = ap.parse_args()
    warnings.simplefilter("ignore", RuntimeWarning)
    for name, farms in SCENARIOS:
        sc = pl.Scenario(farms=farms, damping_sigma=args.damping or None, simulate=False, pca=False,
                         name=name)
        res = pl.run_pipeline(sc, None if args.out is None else f"{args.out}/{name}")
        print(f"\n== {name} ==")
        if not res.ok:
            print(f"failed in {res.failed_stage}: {res.error}")
            continue
        table(res, args.damping)


if __name__ == "__main__":
    main()
