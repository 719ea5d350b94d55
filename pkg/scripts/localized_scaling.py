"""Normalised k=2 ratios for densities localized near a slice, as mu shrinks."""
import argparse

from multirestrict import io
from multirestrict.experiments import LocalizedSupportSpec, localized_scaling_check
from multirestrict.geometry import Domain, SurfacePatch, SurfaceSystem


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--R", type=float, default=32)
    ap.add_argument("--mu", type=float, nargs="+", default=[0.2, 0.1, 0.05, 0.025])
    ap.add_argument("--h", type=float, default=1 / 128)
    ap.add_argument("--trials", type=int, default=2)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="localized_scaling.json")
    a = ap.parse_args()
    caps = SurfaceSystem(tuple(SurfacePatch(3, "paraboloid", {}, Domain((c, 0.0), radius=0.25))
                               for c in (-0.5, 0.5)))
    # first cap on the slice xi_2 = 0, second cap unrestricted
    spec = LocalizedSupportSpec(((1, 0.0), None), (a.mu[0], 1.0))
    res = localized_scaling_check(caps, spec, a.R, a.mu, trials=a.trials, seed=a.seed, h=a.h)
    for mu, r in zip(res.mus, res.ratios):
        print(f"mu {mu:<6g} ratio {r:.4f}")
    print(f"spread {res.spread:.2f}  normal-wedge certificate {res.certificate:.3f}")
    io.write_json(a.out, res.to_json())


if __name__ == "__main__":
    main()
