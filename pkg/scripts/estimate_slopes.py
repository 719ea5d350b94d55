"""A(R) on a unit-circle arc at several exponents p and input families."""
import argparse

from multirestrict import io
from multirestrict.experiments import ExperimentConfig, measure_A
from multirestrict.geometry import Domain, SurfacePatch, SurfaceSystem


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--p", type=float, nargs="+", default=[2.0, 4.0, 6.0])
    ap.add_argument("--R", type=float, nargs="+", default=[8, 16, 32, 64, 128])
    ap.add_argument("--families", nargs="+", default=["random_phases", "focusing"])
    ap.add_argument("--trials", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="estimate_slopes.json")
    a = ap.parse_args()
    arc = SurfaceSystem((SurfacePatch(2, "sphere_cap", {"rho": 1.0}, Domain((0.0,), radius=0.5)),))
    rows = []
    for p in a.p:
        for fam in a.families:
            rep = measure_A(ExperimentConfig(arc, p, tuple(a.R), trials=a.trials,
                                             families=(fam,), seed=a.seed))
            print(f"p={p:<4g} {fam:<14} slope {rep.slope:+.3f}  A = "
                  + " ".join(f"{v:.3f}" for v in rep.A))
            rows.append({"p": p, "family": fam, **rep.to_json()})
    io.write_json(a.out, rows)


if __name__ == "__main__":
    main()
